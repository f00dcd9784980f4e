#include "sasq/model.hpp"

#include <algorithm>
#include <cmath>

#include "sasq/mathops.hpp"
#include "sasq/rng.hpp"

namespace sasq {

void ModelConfig::validate() const {
    if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
    if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1)
        throw ConfigError("model dimensions must be positive");
    if (d_model % n_heads != 0)
        throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                          std::to_string(n_heads));
    if (max_seq_len < 1) throw ConfigError("max_seq_len must be >= 1");
    if (!(norm_epsilon > 0.0f)) throw ConfigError("norm_epsilon must be positive");
}

std::string run_mode_name(RunMode m) {
    switch (m) {
        case RunMode::floating: return "float";
        case RunMode::fake_quant: return "fake_quant";
        case RunMode::int_static: return "int_static";
        case RunMode::dynamic_per_token: return "dynamic_per_token";
    }
    return "?";
}

Model::Model(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    embed = FloatTensor(Shape{cfg_.vocab_size, cfg_.d_model});
    pos = FloatTensor(Shape{cfg_.max_seq_len, cfg_.d_model});
    final_norm_gain = FloatTensor(Shape{cfg_.d_model});
    blocks.resize(static_cast<size_t>(cfg_.n_layers));
    for (int64_t i = 0; i < cfg_.n_layers; ++i) {
        Block& b = blocks[static_cast<size_t>(i)];
        const std::string p = "blocks." + std::to_string(i) + ".";
        b.norm1_gain = FloatTensor(Shape{cfg_.d_model});
        b.norm2_gain = FloatTensor(Shape{cfg_.d_model});
        b.wq.init(p + "attn.q", cfg_.d_model, cfg_.d_model);
        b.wk.init(p + "attn.k", cfg_.d_model, cfg_.d_model);
        b.wv.init(p + "attn.v", cfg_.d_model, cfg_.d_model);
        b.wo.init(p + "attn.o", cfg_.d_model, cfg_.d_model);
        b.up.init(p + "ffn.up", cfg_.d_model, cfg_.d_ff);
        b.down.init(p + "ffn.down", cfg_.d_ff, cfg_.d_model);
    }
    head.init("head", cfg_.d_model, cfg_.vocab_size);
}

void Model::init_random(uint64_t seed) {
    Rng rng(seed);
    for_each_param([&](const std::string& name, FloatTensor& t) {
        const bool is_gain = name.size() > 5 && name.rfind(".gain") == name.size() - 5;
        for (int64_t i = 0; i < t.numel(); ++i)
            t[i] = is_gain ? 1.0f : rng.normal(0.0f, 0.02f);
    });
}

void Model::for_each_param(const std::function<void(const std::string&, FloatTensor&)>& fn) {
    fn("embed.weight", embed);
    fn("pos.weight", pos);
    for (size_t i = 0; i < blocks.size(); ++i) {
        Block& b = blocks[i];
        const std::string p = "blocks." + std::to_string(i) + ".";
        fn(p + "norm1.gain", b.norm1_gain);
        fn(p + "attn.q.weight", b.wq.w_float);
        fn(p + "attn.k.weight", b.wk.w_float);
        fn(p + "attn.v.weight", b.wv.w_float);
        fn(p + "attn.o.weight", b.wo.w_float);
        fn(p + "norm2.gain", b.norm2_gain);
        fn(p + "ffn.up.weight", b.up.w_float);
        fn(p + "ffn.down.weight", b.down.w_float);
    }
    fn("final_norm.gain", final_norm_gain);
    fn("head.weight", head.w_float);
}

void Model::for_each_param(
    const std::function<void(const std::string&, const FloatTensor&)>& fn) const {
    const_cast<Model*>(this)->for_each_param(
        [&](const std::string& name, FloatTensor& t) { fn(name, t); });
}

void Model::for_each_linear(const std::function<void(QuantLinear&)>& fn) {
    for (Block& b : blocks) {
        fn(b.wq);
        fn(b.wk);
        fn(b.wv);
        fn(b.wo);
        fn(b.up);
        fn(b.down);
    }
    if (cfg_.quantize_head) fn(head);
}

std::vector<std::string> Model::linear_names() const {
    std::vector<std::string> out;
    const_cast<Model*>(this)->for_each_linear(
        [&](QuantLinear& l) { out.push_back(l.name); });
    return out;
}

void Model::set_act_spec(const QuantSpec& spec) {
    spec.validate();
    act_spec_ = spec;
    for_each_linear([&](QuantLinear& l) {
        const WeightMode m = l.mode;
        l.spec = spec;
        l.spec.granularity = Granularity::per_channel;
        (void)m;
    });
}

void Model::attach_scales(ScaleSet set) {
    const std::vector<std::string> want = linear_names();
    std::vector<std::string> missing, extra;
    for (const std::string& n : want)
        if (!set.contains(n)) missing.push_back(n);
    for (const std::string& n : set.names())
        if (std::find(want.begin(), want.end(), n) == want.end()) extra.push_back(n);
    if (!missing.empty() || !extra.empty()) {
        std::string msg = "scale set does not match model layers;";
        if (!missing.empty()) {
            msg += " missing:";
            for (const auto& n : missing) msg += " " + n;
        }
        if (!extra.empty()) {
            msg += " extra:";
            for (const auto& n : extra) msg += " " + n;
        }
        throw Error(msg);
    }
    scales = std::move(set);
    for_each_linear([&](QuantLinear& l) {
        const ScaleVector& sv = scales.at(l.name);
        if (sv.granularity != Granularity::per_channel || sv.values.numel() != l.in_features)
            throw Error("scale entry '" + l.name + "' has wrong shape for the layer");
        l.s_x = &sv;
    });
}

bool Model::weights_quantized() const {
    bool all = true;
    const_cast<Model*>(this)->for_each_linear([&](QuantLinear& l) {
        if (l.mode == WeightMode::floating) all = false;
    });
    return all;
}

KvCache Model::make_cache() const {
    KvCache c;
    c.k.reserve(static_cast<size_t>(cfg_.n_layers));
    c.v.reserve(static_cast<size_t>(cfg_.n_layers));
    for (int64_t i = 0; i < cfg_.n_layers; ++i) {
        c.k.emplace_back(Shape{cfg_.max_seq_len, cfg_.d_model});
        c.v.emplace_back(Shape{cfg_.max_seq_len, cfg_.d_model});
    }
    return c;
}

FloatTensor Model::linear_out(const QuantLinear& l, const FloatTensor& x, RunMode mode,
                              const Observer* obs) const {
    if (obs && *obs) (*obs)(l.name, x);
    switch (mode) {
        case RunMode::floating: return forward_float(x, l);
        case RunMode::fake_quant: return forward_fake_eval(x, l);
        case RunMode::int_static: return forward_int(x, l);
        case RunMode::dynamic_per_token: return forward_dynamic_per_token(x, l);
    }
    throw Error("bad run mode");
}

// ------------------------------------------------------- tape-free forward

FloatTensor Model::forward_logits(std::span<const int32_t> tokens, RunMode mode,
                                  KvCache* cache, const Observer* obs) {
    if (tokens.empty()) throw DataError("forward_logits: empty token sequence");
    for (int32_t t : tokens)
        if (t < 0 || t >= cfg_.vocab_size)
            throw DataError("forward_logits: token id " + std::to_string(t) +
                            " outside vocab " + std::to_string(cfg_.vocab_size));
    const int64_t T = static_cast<int64_t>(tokens.size());
    const int64_t pos0 = cache ? cache->len : 0;
    if (pos0 + T > cfg_.max_seq_len)
        throw DataError("forward_logits: sequence length " + std::to_string(pos0 + T) +
                        " overflows max_seq_len " + std::to_string(cfg_.max_seq_len));
    const int64_t D = cfg_.d_model;
    const int64_t H = cfg_.n_heads;
    const int64_t dh = cfg_.head_dim();
    const float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));

    FloatTensor x(Shape{T, D});
    for (int64_t t = 0; t < T; ++t)
        for (int64_t c = 0; c < D; ++c)
            x.at(t, c) = embed.at(tokens[static_cast<size_t>(t)], c) + pos.at(pos0 + t, c);

    FloatTensor h(Shape{T, D});
    for (size_t li = 0; li < blocks.size(); ++li) {
        Block& blk = blocks[li];

        mathops::rms_norm_rows(x.data(), blk.norm1_gain.data(), h.data(), T, D,
                               cfg_.norm_epsilon, nullptr);
        FloatTensor q = linear_out(blk.wq, h, mode, obs);
        FloatTensor k = linear_out(blk.wk, h, mode, obs);
        FloatTensor v = linear_out(blk.wv, h, mode, obs);

        const int64_t S = pos0 + T;
        FloatTensor k_full(Shape{S, D});
        FloatTensor v_full(Shape{S, D});
        if (cache) {
            FloatTensor& ck = cache->k[li];
            FloatTensor& cv = cache->v[li];
            std::copy(k.data(), k.data() + T * D, ck.data() + pos0 * D);
            std::copy(v.data(), v.data() + T * D, cv.data() + pos0 * D);
            std::copy(ck.data(), ck.data() + S * D, k_full.data());
            std::copy(cv.data(), cv.data() + S * D, v_full.data());
        } else {
            k_full = k;
            v_full = v;
        }

        FloatTensor ctx(Shape{T, D});
        for (int64_t hh = 0; hh < H; ++hh) {
            const int64_t c0 = hh * dh;
            FloatTensor qh = slice_cols(q, c0, c0 + dh);
            FloatTensor kh = slice_cols(k_full, c0, c0 + dh);
            FloatTensor vh = slice_cols(v_full, c0, c0 + dh);
            FloatTensor scores = mul_scalar(matmul(qh, transpose(kh)), inv_sqrt_dh);
            FloatTensor probs(scores.shape());
            mathops::softmax_causal_rows(scores.data(), probs.data(), T, S, pos0);
            FloatTensor ctxh = matmul(probs, vh);
            for (int64_t r = 0; r < T; ++r)
                for (int64_t c = 0; c < dh; ++c) ctx.at(r, c0 + c) = ctxh.at(r, c);
        }

        FloatTensor attn = linear_out(blk.wo, ctx, mode, obs);
        x = add(x, attn);

        mathops::rms_norm_rows(x.data(), blk.norm2_gain.data(), h.data(), T, D,
                               cfg_.norm_epsilon, nullptr);
        FloatTensor u = linear_out(blk.up, h, mode, obs);
        for (int64_t i = 0; i < u.numel(); ++i) u[i] = mathops::gelu(u[i]);
        FloatTensor d = linear_out(blk.down, u, mode, obs);
        x = add(x, d);
    }

    FloatTensor xf(Shape{T, D});
    mathops::rms_norm_rows(x.data(), final_norm_gain.data(), xf.data(), T, D,
                           cfg_.norm_epsilon, nullptr);
    FloatTensor logits = cfg_.quantize_head ? linear_out(head, xf, mode, obs)
                                            : forward_float(xf, head);
    if (cache) cache->len += T;
    return logits;
}

// ------------------------------------------------------------ tape forward

Model::Bindings Model::bind(autodiff::Tape& tape, TrainTarget target) {
    Bindings b;
    b.target = target;
    if (target == TrainTarget::weights) {
        b.mode = RunMode::floating;
        for_each_param([&](const std::string& name, FloatTensor& t) {
            autodiff::Variable v = tape.leaf(t, /*requires_grad=*/true);
            b.leaves.emplace(name, v);
            b.trainables.emplace_back(name, v);
        });
        return b;
    }
    b.mode = RunMode::fake_quant;
    if (!weights_quantized())
        throw Error("bind: scale training requires quantized (or FP-frozen) weights");
    if (scales.empty()) throw Error("bind: no activation scales attached");
    for_each_param([&](const std::string& name, FloatTensor& t) {
        b.leaves.emplace(name, tape.leaf(t, /*requires_grad=*/false));
    });
    for_each_linear([&](QuantLinear& l) {
        autodiff::Variable v = tape.leaf(scales.at(l.name).values, /*requires_grad=*/true);
        b.leaves.emplace(l.name + ".s_x", v);
        b.trainables.emplace_back(l.name, v);
    });
    return b;
}

autodiff::Variable Model::window_loss(autodiff::Tape& tape, const Bindings& b,
                                      std::span<const int32_t> inputs,
                                      std::span<const int32_t> targets) {
    if (inputs.empty() || inputs.size() != targets.size())
        throw DataError("window_loss: inputs/targets must be equal-length and non-empty");
    const int64_t T = static_cast<int64_t>(inputs.size());
    if (T > cfg_.max_seq_len)
        throw DataError("window_loss: window longer than max_seq_len");
    const int64_t H = cfg_.n_heads;
    const int64_t dh = cfg_.head_dim();
    const float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));
    using autodiff::Variable;

    auto leaf_of = [&](const std::string& name) -> Variable { return b.leaves.at(name); };
    auto linear_var = [&](const QuantLinear& l, Variable in) -> Variable {
        if (b.mode == RunMode::fake_quant)
            return forward_fake(tape, in, l, leaf_of(l.name + ".s_x"));
        return tape.matmul(in, leaf_of(l.name + ".weight"));
    };

    std::vector<int32_t> ids(inputs.begin(), inputs.end());
    std::vector<int32_t> pos_ids(static_cast<size_t>(T));
    for (int64_t t = 0; t < T; ++t) pos_ids[static_cast<size_t>(t)] = static_cast<int32_t>(t);

    Variable x = tape.add(tape.embed_gather(leaf_of("embed.weight"), ids),
                          tape.embed_gather(leaf_of("pos.weight"), pos_ids));

    for (size_t li = 0; li < blocks.size(); ++li) {
        Block& blk = blocks[li];
        const std::string p = "blocks." + std::to_string(li) + ".";

        Variable h = tape.rms_norm(x, leaf_of(p + "norm1.gain"), cfg_.norm_epsilon);
        Variable q = linear_var(blk.wq, h);
        Variable k = linear_var(blk.wk, h);
        Variable v = linear_var(blk.wv, h);

        std::vector<Variable> heads;
        heads.reserve(static_cast<size_t>(H));
        for (int64_t hh = 0; hh < H; ++hh) {
            const int64_t c0 = hh * dh;
            Variable qh = tape.slice_cols(q, c0, c0 + dh);
            Variable kh = tape.slice_cols(k, c0, c0 + dh);
            Variable vh = tape.slice_cols(v, c0, c0 + dh);
            Variable scores = tape.mul_scalar(tape.matmul(qh, tape.transpose(kh)), inv_sqrt_dh);
            Variable probs = tape.softmax_causal_rows(scores, /*query_offset=*/0);
            heads.push_back(tape.matmul(probs, vh));
        }
        Variable ctx = tape.concat_cols(heads);
        Variable attn = linear_var(blk.wo, ctx);
        x = tape.add(x, attn);

        Variable h2 = tape.rms_norm(x, leaf_of(p + "norm2.gain"), cfg_.norm_epsilon);
        Variable u = tape.gelu(linear_var(blk.up, h2));
        Variable d = linear_var(blk.down, u);
        x = tape.add(x, d);
    }

    Variable xf = tape.rms_norm(x, leaf_of("final_norm.gain"), cfg_.norm_epsilon);
    Variable logits =
        (cfg_.quantize_head && b.mode == RunMode::fake_quant)
            ? forward_fake(tape, xf, head, leaf_of("head.s_x"))
            : tape.matmul(xf, leaf_of("head.weight"));

    std::vector<int32_t> tgt(targets.begin(), targets.end());
    return tape.cross_entropy_mean(logits, std::move(tgt));
}

// --------------------------------------------------------------- ppl math

std::pair<double, double> cross_entropy_ppl(const FloatTensor& logits,
                                            std::span<const int32_t> targets) {
    if (logits.rank() != 2)
        throw ShapeError("cross_entropy_ppl: logits must be rank 2, have " + logits.shape().str());
    if (targets.empty()) throw DataError("cross_entropy_ppl: empty target set");
    if (static_cast<int64_t>(targets.size()) != logits.rows())
        throw ShapeError("cross_entropy_ppl: " + std::to_string(targets.size()) +
                         " targets for " + logits.shape().str());
    const int64_t V = logits.cols();
    double total = 0.0;
    for (int64_t r = 0; r < logits.rows(); ++r) {
        const int32_t t = targets[static_cast<size_t>(r)];
        if (t < 0 || t >= V)
            throw DataError("cross_entropy_ppl: target " + std::to_string(t) + " out of range");
        const float lse = mathops::row_lse_probs(logits.data() + r * V, V, nullptr);
        total += static_cast<double>(lse - logits.at(r, t));
    }
    const double mean_nll = total / static_cast<double>(logits.rows());
    return {mean_nll, std::exp(mean_nll)};
}

}  // namespace sasq
