#include "sasq/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "sasq/kernels.hpp"
#include "sasq/mathops.hpp"

namespace sasq::autodiff {

// -------------------------------------------------------------- plumbing

Variable Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return Variable{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Variable Tape::check(Variable v) const {
    if (v.tape != this || v.id < 0 || v.id >= static_cast<int32_t>(nodes_.size()))
        throw Error("variable does not belong to this tape");
    return v;
}

FloatTensor& Tape::grad_buf(int32_t id) {
    Node& n = node(id);
    if (!n.has_grad) {
        n.grad = FloatTensor(n.value.shape());
        n.has_grad = true;
    }
    return n.grad;
}

Variable Tape::leaf(FloatTensor value, bool requires_grad) {
    Node n;
    n.kind = OpKind::leaf;
    n.value = std::move(value);
    n.needs = requires_grad;
    return push(std::move(n));
}

namespace {

void require_rank2(const char* op, const FloatTensor& t) {
    if (t.rank() != 2)
        throw ShapeError(std::string(op) + " requires a rank-2 tensor, have " + t.shape().str());
}

void require_row_arg(const char* op, const FloatTensor& m, const FloatTensor& row) {
    require_rank2(op, m);
    if (row.rank() != 1 || (row.numel() != m.cols() && row.numel() != 1))
        throw ShapeError(std::string(op) + ": row operand " + row.shape().str() +
                         " does not broadcast over " + m.shape().str());
}

}  // namespace

// ------------------------------------------------------------- recording

Variable Tape::add(Variable a, Variable b) {
    check(a);
    check(b);
    Node n;
    n.kind = OpKind::add;
    n.in = {a.id, b.id};
    n.value = sasq::add(a.value(), b.value());
    n.needs = a.requires_grad() || b.requires_grad();
    return push(std::move(n));
}

Variable Tape::sub(Variable a, Variable b) {
    check(a);
    check(b);
    Node n;
    n.kind = OpKind::sub;
    n.in = {a.id, b.id};
    n.value = sasq::sub(a.value(), b.value());
    n.needs = a.requires_grad() || b.requires_grad();
    return push(std::move(n));
}

Variable Tape::mul(Variable a, Variable b) {
    check(a);
    check(b);
    Node n;
    n.kind = OpKind::mul;
    n.in = {a.id, b.id};
    n.value = sasq::mul(a.value(), b.value());
    n.needs = a.requires_grad() || b.requires_grad();
    return push(std::move(n));
}

Variable Tape::mul_scalar(Variable a, float c) {
    check(a);
    Node n;
    n.kind = OpKind::mul_scalar;
    n.in = {a.id, -1};
    n.f0 = c;
    n.value = sasq::mul_scalar(a.value(), c);
    n.needs = a.requires_grad();
    return push(std::move(n));
}

Variable Tape::add_row_broadcast(Variable m, Variable row) {
    check(m);
    check(row);
    const FloatTensor& mv = m.value();
    const FloatTensor& rv = row.value();
    require_row_arg("add_row_broadcast", mv, rv);
    Node n;
    n.kind = OpKind::add_row_broadcast;
    n.in = {m.id, row.id};
    FloatTensor out(mv.shape());
    const int64_t rows = mv.rows(), cols = mv.cols();
    const bool scalar_row = rv.numel() == 1;
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c)
            out.at(r, c) = mv.at(r, c) + rv[scalar_row ? 0 : c];
    n.value = std::move(out);
    n.needs = m.requires_grad() || row.requires_grad();
    return push(std::move(n));
}

Variable Tape::mul_row_broadcast(Variable m, Variable row) {
    check(m);
    check(row);
    const FloatTensor& mv = m.value();
    const FloatTensor& rv = row.value();
    require_row_arg("mul_row_broadcast", mv, rv);
    Node n;
    n.kind = OpKind::mul_row_broadcast;
    n.in = {m.id, row.id};
    FloatTensor out(mv.shape());
    const int64_t rows = mv.rows(), cols = mv.cols();
    const bool scalar_row = rv.numel() == 1;
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c)
            out.at(r, c) = mv.at(r, c) * rv[scalar_row ? 0 : c];
    n.value = std::move(out);
    n.needs = m.requires_grad() || row.requires_grad();
    return push(std::move(n));
}

Variable Tape::div_row_broadcast(Variable m, Variable row) {
    check(m);
    check(row);
    const FloatTensor& mv = m.value();
    const FloatTensor& rv = row.value();
    require_row_arg("div_row_broadcast", mv, rv);
    Node n;
    n.kind = OpKind::div_row_broadcast;
    n.in = {m.id, row.id};
    FloatTensor out(mv.shape());
    const int64_t rows = mv.rows(), cols = mv.cols();
    const bool scalar_row = rv.numel() == 1;
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c)
            out.at(r, c) = mv.at(r, c) / rv[scalar_row ? 0 : c];
    n.value = std::move(out);
    n.needs = m.requires_grad() || row.requires_grad();
    return push(std::move(n));
}

Variable Tape::matmul(Variable a, Variable b) {
    check(a);
    check(b);
    Node n;
    n.kind = OpKind::matmul;
    n.in = {a.id, b.id};
    n.value = sasq::matmul(a.value(), b.value());
    n.needs = a.requires_grad() || b.requires_grad();
    return push(std::move(n));
}

Variable Tape::transpose(Variable a) {
    check(a);
    Node n;
    n.kind = OpKind::transpose;
    n.in = {a.id, -1};
    n.value = sasq::transpose(a.value());
    n.needs = a.requires_grad();
    return push(std::move(n));
}

Variable Tape::slice_cols(Variable a, int64_t begin, int64_t end) {
    check(a);
    const FloatTensor& av = a.value();
    require_rank2("slice_cols", av);
    if (begin < 0 || end > av.cols() || begin >= end)
        throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") out of bounds for " + av.shape().str());
    Node n;
    n.kind = OpKind::slice_cols;
    n.in = {a.id, -1};
    n.i0 = begin;
    FloatTensor out(Shape{av.rows(), end - begin});
    for (int64_t r = 0; r < av.rows(); ++r)
        for (int64_t c = begin; c < end; ++c) out.at(r, c - begin) = av.at(r, c);
    n.value = std::move(out);
    n.needs = a.requires_grad();
    return push(std::move(n));
}

Variable Tape::concat_cols(const std::vector<Variable>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    int64_t rows = -1, cols = 0;
    bool needs = false;
    for (Variable p : parts) {
        check(p);
        const FloatTensor& pv = p.value();
        require_rank2("concat_cols", pv);
        if (rows < 0) rows = pv.rows();
        if (pv.rows() != rows)
            throw ShapeError("concat_cols: row mismatch: " + std::to_string(rows) + " vs " +
                             pv.shape().str());
        cols += pv.cols();
        needs = needs || p.requires_grad();
    }
    Node n;
    n.kind = OpKind::concat_cols;
    for (Variable p : parts) n.in_many.push_back(p.id);
    FloatTensor out(Shape{rows, cols});
    int64_t base = 0;
    for (Variable p : parts) {
        const FloatTensor& pv = p.value();
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < pv.cols(); ++c) out.at(r, base + c) = pv.at(r, c);
        base += pv.cols();
    }
    n.value = std::move(out);
    n.needs = needs;
    return push(std::move(n));
}

Variable Tape::embed_gather(Variable table, std::vector<int32_t> ids) {
    check(table);
    const FloatTensor& tv = table.value();
    require_rank2("embed_gather", tv);
    if (ids.empty()) throw ShapeError("embed_gather: empty id list");
    for (int32_t id : ids)
        if (id < 0 || id >= tv.rows())
            throw ShapeError("embed_gather: id " + std::to_string(id) + " out of range for " +
                             tv.shape().str());
    Node n;
    n.kind = OpKind::embed_gather;
    n.in = {table.id, -1};
    const int64_t t = static_cast<int64_t>(ids.size());
    const int64_t d = tv.cols();
    FloatTensor out(Shape{t, d});
    for (int64_t r = 0; r < t; ++r)
        std::copy(tv.data() + ids[static_cast<size_t>(r)] * d,
                  tv.data() + (ids[static_cast<size_t>(r)] + 1) * d, out.data() + r * d);
    n.ids = std::move(ids);
    n.value = std::move(out);
    n.needs = table.requires_grad();
    return push(std::move(n));
}

Variable Tape::rms_norm(Variable x, Variable gain, float eps) {
    check(x);
    check(gain);
    const FloatTensor& xv = x.value();
    const FloatTensor& gv = gain.value();
    require_rank2("rms_norm", xv);
    if (gv.rank() != 1 || gv.numel() != xv.cols())
        throw ShapeError("rms_norm: gain " + gv.shape().str() + " does not match " +
                         xv.shape().str());
    Node n;
    n.kind = OpKind::rms_norm;
    n.in = {x.id, gain.id};
    n.f0 = eps;
    FloatTensor out(xv.shape());
    FloatTensor inv_rms(Shape{xv.rows()});
    mathops::rms_norm_rows(xv.data(), gv.data(), out.data(), xv.rows(), xv.cols(), eps,
                           inv_rms.data());
    n.value = std::move(out);
    n.aux = std::move(inv_rms);
    n.needs = x.requires_grad() || gain.requires_grad();
    return push(std::move(n));
}

Variable Tape::softmax_causal_rows(Variable scores, int64_t query_offset) {
    check(scores);
    const FloatTensor& sv = scores.value();
    require_rank2("softmax_causal_rows", sv);
    Node n;
    n.kind = OpKind::softmax_causal_rows;
    n.in = {scores.id, -1};
    n.i0 = query_offset;
    FloatTensor out(sv.shape());
    mathops::softmax_causal_rows(sv.data(), out.data(), sv.rows(), sv.cols(), query_offset);
    n.value = std::move(out);
    n.needs = scores.requires_grad();
    return push(std::move(n));
}

Variable Tape::gelu(Variable x) {
    check(x);
    const FloatTensor& xv = x.value();
    Node n;
    n.kind = OpKind::gelu;
    n.in = {x.id, -1};
    FloatTensor out(xv.shape());
    FloatTensor th(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) {
        const float v = xv[i];
        const float t = std::tanh(mathops::kGeluCoeff * (v + mathops::kGeluCubic * v * v * v));
        th[i] = t;
        out[i] = 0.5f * v * (1.0f + t);
    }
    n.value = std::move(out);
    n.aux = std::move(th);
    n.needs = x.requires_grad();
    return push(std::move(n));
}

Variable Tape::cross_entropy_mean(Variable logits, std::vector<int32_t> targets) {
    check(logits);
    const FloatTensor& lv = logits.value();
    require_rank2("cross_entropy_mean", lv);
    if (static_cast<int64_t>(targets.size()) != lv.rows())
        throw ShapeError("cross_entropy_mean: " + std::to_string(targets.size()) +
                         " targets for " + lv.shape().str());
    for (int32_t t : targets)
        if (t < 0 || t >= lv.cols())
            throw ShapeError("cross_entropy_mean: target " + std::to_string(t) +
                             " out of range for " + lv.shape().str());
    Node n;
    n.kind = OpKind::cross_entropy_mean;
    n.in = {logits.id, -1};
    const int64_t rows = lv.rows(), cols = lv.cols();
    FloatTensor probs(lv.shape());
    double total = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
        const float lse = mathops::row_lse_probs(lv.data() + r * cols, cols, probs.data() + r * cols);
        total += static_cast<double>(lse - lv.at(r, targets[static_cast<size_t>(r)]));
    }
    n.value = FloatTensor::scalar1(static_cast<float>(total / static_cast<double>(rows)));
    n.aux = std::move(probs);
    n.ids = std::move(targets);
    n.needs = logits.requires_grad();
    return push(std::move(n));
}

Variable Tape::ste_round(Variable v) {
    check(v);
    const FloatTensor& xv = v.value();
    Node n;
    n.kind = OpKind::ste_round;
    n.in = {v.id, -1};
    FloatTensor out(xv.shape());
    kernels::funcs().round_half_away_run(xv.data(), out.data(), static_cast<size_t>(xv.numel()));
    n.value = std::move(out);
    n.needs = v.requires_grad();
    return push(std::move(n));
}

Variable Tape::ste_clamp(Variable v, float lo, float hi) {
    check(v);
    if (!(lo < hi)) throw DomainError("ste_clamp: lo must be < hi");
    const FloatTensor& xv = v.value();
    Node n;
    n.kind = OpKind::ste_clamp;
    n.in = {v.id, -1};
    n.f0 = lo;
    n.f1 = hi;
    FloatTensor out(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) {
        float x = xv[i];
        if (x < lo) x = lo;
        if (x > hi) x = hi;
        out[i] = x;
    }
    n.value = std::move(out);
    n.needs = v.requires_grad();
    return push(std::move(n));
}

Variable Tape::mean_scalars(const std::vector<Variable>& xs) {
    if (xs.empty()) throw ShapeError("mean_scalars: no inputs");
    bool needs = false;
    double total = 0.0;
    for (Variable x : xs) {
        check(x);
        if (x.value().numel() != 1)
            throw ShapeError("mean_scalars: non-scalar input " + x.value().shape().str());
        total += static_cast<double>(x.value()[0]);
        needs = needs || x.requires_grad();
    }
    Node n;
    n.kind = OpKind::mean_scalars;
    for (Variable x : xs) n.in_many.push_back(x.id);
    n.value = FloatTensor::scalar1(static_cast<float>(total / static_cast<double>(xs.size())));
    n.needs = needs;
    return push(std::move(n));
}

Variable Tape::sum_all(Variable a) {
    check(a);
    const FloatTensor& av = a.value();
    Node n;
    n.kind = OpKind::sum_all;
    n.in = {a.id, -1};
    double total = 0.0;
    for (int64_t i = 0; i < av.numel(); ++i) total += static_cast<double>(av[i]);
    n.value = FloatTensor::scalar1(static_cast<float>(total));
    n.needs = a.requires_grad();
    return push(std::move(n));
}

// -------------------------------------------------------------- backward

void Tape::backward(Variable loss) {
    check(loss);
    if (backward_done_) throw Error("backward already run on this tape");
    backward_done_ = true;
    if (node(loss.id).value.numel() != 1)
        throw ShapeError("backward: loss must be scalar, have " +
                         node(loss.id).value.shape().str());
    if (!node(loss.id).needs) return;  // nothing trainable feeds the loss
    grad_buf(loss.id)[0] = 1.0f;
    for (int32_t id = loss.id; id >= 0; --id) {
        const Node& n = node(id);
        if (!n.needs || !n.has_grad) continue;
        backward_node(id);
    }
}

void Tape::backward_node(int32_t id) {
    Node& n = node(id);
    const FloatTensor& g = n.grad;

    auto want = [&](int32_t in_id) { return in_id >= 0 && node(in_id).needs; };

    switch (n.kind) {
        case OpKind::leaf:
            break;

        case OpKind::add: {
            for (int side = 0; side < 2; ++side) {
                const int32_t in = n.in[static_cast<size_t>(side)];
                if (!want(in)) continue;
                FloatTensor& gb = grad_buf(in);
                for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
            }
            break;
        }

        case OpKind::sub: {
            if (want(n.in[0])) {
                FloatTensor& ga = grad_buf(n.in[0]);
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
            }
            if (want(n.in[1])) {
                FloatTensor& gb = grad_buf(n.in[1]);
                for (int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
            }
            break;
        }

        case OpKind::mul: {
            const FloatTensor& av = node(n.in[0]).value;
            const FloatTensor& bv = node(n.in[1]).value;
            if (want(n.in[0])) {
                FloatTensor& ga = grad_buf(n.in[0]);
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
            }
            if (want(n.in[1])) {
                FloatTensor& gb = grad_buf(n.in[1]);
                for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
            }
            break;
        }

        case OpKind::mul_scalar: {
            if (want(n.in[0])) {
                FloatTensor& ga = grad_buf(n.in[0]);
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * n.f0;
            }
            break;
        }

        case OpKind::add_row_broadcast: {
            const int64_t rows = g.rows(), cols = g.cols();
            if (want(n.in[0])) {
                FloatTensor& gm = grad_buf(n.in[0]);
                for (int64_t i = 0; i < g.numel(); ++i) gm[i] += g[i];
            }
            if (want(n.in[1])) {
                FloatTensor& gr = grad_buf(n.in[1]);
                const bool scalar_row = gr.numel() == 1;
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < cols; ++c) gr[scalar_row ? 0 : c] += g.at(r, c);
            }
            break;
        }

        case OpKind::mul_row_broadcast: {
            const FloatTensor& mv = node(n.in[0]).value;
            const FloatTensor& rv = node(n.in[1]).value;
            const int64_t rows = g.rows(), cols = g.cols();
            const bool scalar_row = rv.numel() == 1;
            if (want(n.in[0])) {
                FloatTensor& gm = grad_buf(n.in[0]);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < cols; ++c)
                        gm.at(r, c) += g.at(r, c) * rv[scalar_row ? 0 : c];
            }
            if (want(n.in[1])) {
                FloatTensor& gr = grad_buf(n.in[1]);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < cols; ++c)
                        gr[scalar_row ? 0 : c] += g.at(r, c) * mv.at(r, c);
            }
            break;
        }

        case OpKind::div_row_broadcast: {
            const FloatTensor& mv = node(n.in[0]).value;
            const FloatTensor& rv = node(n.in[1]).value;
            const int64_t rows = g.rows(), cols = g.cols();
            const bool scalar_row = rv.numel() == 1;
            if (want(n.in[0])) {
                FloatTensor& gm = grad_buf(n.in[0]);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < cols; ++c)
                        gm.at(r, c) += g.at(r, c) / rv[scalar_row ? 0 : c];
            }
            if (want(n.in[1])) {
                FloatTensor& gr = grad_buf(n.in[1]);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < cols; ++c) {
                        const float s = rv[scalar_row ? 0 : c];
                        gr[scalar_row ? 0 : c] += g.at(r, c) * (-mv.at(r, c) / (s * s));
                    }
            }
            break;
        }

        case OpKind::matmul: {
            const FloatTensor& av = node(n.in[0]).value;
            const FloatTensor& bv = node(n.in[1]).value;
            if (want(n.in[0])) {
                FloatTensor bt = sasq::transpose(bv);
                FloatTensor da = sasq::matmul(g, bt);
                FloatTensor& ga = grad_buf(n.in[0]);
                for (int64_t i = 0; i < da.numel(); ++i) ga[i] += da[i];
            }
            if (want(n.in[1])) {
                FloatTensor at = sasq::transpose(av);
                FloatTensor db = sasq::matmul(at, g);
                FloatTensor& gb = grad_buf(n.in[1]);
                for (int64_t i = 0; i < db.numel(); ++i) gb[i] += db[i];
            }
            break;
        }

        case OpKind::transpose: {
            if (want(n.in[0])) {
                FloatTensor gt = sasq::transpose(g);
                FloatTensor& ga = grad_buf(n.in[0]);
                for (int64_t i = 0; i < gt.numel(); ++i) ga[i] += gt[i];
            }
            break;
        }

        case OpKind::slice_cols: {
            if (want(n.in[0])) {
                FloatTensor& ga = grad_buf(n.in[0]);
                const int64_t rows = g.rows(), cols = g.cols();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < cols; ++c) ga.at(r, n.i0 + c) += g.at(r, c);
            }
            break;
        }

        case OpKind::concat_cols: {
            int64_t base = 0;
            for (int32_t in : n.in_many) {
                const int64_t w = node(in).value.cols();
                if (node(in).needs) {
                    FloatTensor& gp = grad_buf(in);
                    for (int64_t r = 0; r < g.rows(); ++r)
                        for (int64_t c = 0; c < w; ++c) gp.at(r, c) += g.at(r, base + c);
                }
                base += w;
            }
            break;
        }

        case OpKind::embed_gather: {
            if (want(n.in[0])) {
                FloatTensor& gt = grad_buf(n.in[0]);
                const int64_t d = gt.cols();
                for (size_t r = 0; r < n.ids.size(); ++r) {
                    const int64_t row = n.ids[r];
                    for (int64_t c = 0; c < d; ++c)
                        gt.at(row, c) += g.at(static_cast<int64_t>(r), c);
                }
            }
            break;
        }

        case OpKind::rms_norm: {
            const FloatTensor& xv = node(n.in[0]).value;
            const FloatTensor& gv = node(n.in[1]).value;
            const int64_t rows = xv.rows(), cols = xv.cols();
            const bool wx = want(n.in[0]);
            const bool wg = want(n.in[1]);
            FloatTensor* gx = wx ? &grad_buf(n.in[0]) : nullptr;
            FloatTensor* gg = wg ? &grad_buf(n.in[1]) : nullptr;
            for (int64_t r = 0; r < rows; ++r) {
                const float rr = n.aux[r];
                if (wg)
                    for (int64_t c = 0; c < cols; ++c)
                        (*gg)[c] += g.at(r, c) * xv.at(r, c) * rr;
                if (wx) {
                    double dot = 0.0;  // sum_j g[j] * gain[j] * x[j]
                    for (int64_t c = 0; c < cols; ++c)
                        dot += static_cast<double>(g.at(r, c)) * gv[c] * xv.at(r, c);
                    const float corr = static_cast<float>(dot) * rr * rr * rr /
                                       static_cast<float>(cols);
                    for (int64_t c = 0; c < cols; ++c)
                        gx->at(r, c) += rr * gv[c] * g.at(r, c) - corr * xv.at(r, c);
                }
            }
            break;
        }

        case OpKind::softmax_causal_rows: {
            if (want(n.in[0])) {
                FloatTensor& gs = grad_buf(n.in[0]);
                const FloatTensor& y = n.value;
                const int64_t rows = y.rows(), cols = y.cols();
                for (int64_t r = 0; r < rows; ++r) {
                    const int64_t allowed = n.i0 + r + 1;
                    double dot = 0.0;
                    for (int64_t j = 0; j < allowed; ++j)
                        dot += static_cast<double>(g.at(r, j)) * y.at(r, j);
                    const float d = static_cast<float>(dot);
                    for (int64_t j = 0; j < allowed; ++j)
                        gs.at(r, j) += y.at(r, j) * (g.at(r, j) - d);
                    // masked columns stay zero
                    (void)cols;
                }
            }
            break;
        }

        case OpKind::gelu: {
            if (want(n.in[0])) {
                const FloatTensor& xv = node(n.in[0]).value;
                FloatTensor& gx = grad_buf(n.in[0]);
                for (int64_t i = 0; i < g.numel(); ++i)
                    gx[i] += g[i] * mathops::gelu_grad(xv[i], n.aux[i]);
            }
            break;
        }

        case OpKind::ste_round: {
            // STE: d round(v)/dv := 1
            if (want(n.in[0])) {
                FloatTensor& gv = grad_buf(n.in[0]);
                for (int64_t i = 0; i < g.numel(); ++i) gv[i] += g[i];
            }
            break;
        }

        case OpKind::ste_clamp: {
            // STE: pass-through on [lo, hi] (inclusive), zero outside
            if (want(n.in[0])) {
                const FloatTensor& xv = node(n.in[0]).value;
                FloatTensor& gv = grad_buf(n.in[0]);
                for (int64_t i = 0; i < g.numel(); ++i)
                    if (xv[i] >= n.f0 && xv[i] <= n.f1) gv[i] += g[i];
            }
            break;
        }

        case OpKind::cross_entropy_mean: {
            if (want(n.in[0])) {
                const FloatTensor& probs = n.aux;
                FloatTensor& gl = grad_buf(n.in[0]);
                const int64_t rows = probs.rows(), cols = probs.cols();
                const float gs = g[0] / static_cast<float>(rows);
                for (int64_t r = 0; r < rows; ++r) {
                    const int32_t tgt = n.ids[static_cast<size_t>(r)];
                    for (int64_t c = 0; c < cols; ++c) {
                        float p = probs.at(r, c);
                        if (c == tgt) p -= 1.0f;
                        gl.at(r, c) += gs * p;
                    }
                }
            }
            break;
        }

        case OpKind::mean_scalars: {
            const float gs = g[0] / static_cast<float>(n.in_many.size());
            for (int32_t in : n.in_many)
                if (node(in).needs) grad_buf(in)[0] += gs;
            break;
        }

        case OpKind::sum_all: {
            if (want(n.in[0])) {
                FloatTensor& ga = grad_buf(n.in[0]);
                for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g[0];
            }
            break;
        }
    }
}

bool Tape::has_grad(Variable v) const {
    check(v);
    return node(v.id).has_grad;
}

const FloatTensor& Tape::grad(Variable v) const {
    check(v);
    if (!node(v.id).has_grad)
        throw Error("no gradient materialized for node " + std::to_string(v.id));
    return node(v.id).grad;
}

std::vector<int32_t> Tape::grad_ids() const {
    std::vector<int32_t> out;
    for (size_t i = 0; i < nodes_.size(); ++i)
        if (nodes_[i].has_grad) out.push_back(static_cast<int32_t>(i));
    return out;
}

}  // namespace sasq::autodiff
