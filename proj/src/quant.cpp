#include "sasq/quant.hpp"

#include <algorithm>
#include <cmath>

#include "sasq/kernels.hpp"

namespace sasq {

std::string granularity_name(Granularity g) {
    switch (g) {
        case Granularity::per_tensor: return "per_tensor";
        case Granularity::per_token: return "per_token";
        case Granularity::per_channel: return "per_channel";
    }
    return "?";
}

Granularity granularity_from_name(const std::string& name) {
    if (name == "per_tensor") return Granularity::per_tensor;
    if (name == "per_token") return Granularity::per_token;
    if (name == "per_channel") return Granularity::per_channel;
    throw ConfigError("unknown granularity '" + name + "'");
}

void QuantSpec::validate() const {
    if (bits < 2 || bits > 16)
        throw ConfigError("quant bits must be in [2,16], got " + std::to_string(bits));
    if (!(scale_floor > 0.0f))
        throw ConfigError("scale_floor must be positive");
}

namespace {

// Length the scale vector must have for tensor x under granularity g.
int64_t scale_len_for(const FloatTensor& x, Granularity g, const char* op) {
    switch (g) {
        case Granularity::per_tensor:
            return 1;
        case Granularity::per_token:
            if (x.rank() != 2)
                throw ShapeError(std::string(op) + ": per_token needs a rank-2 tensor, have " +
                                 x.shape().str());
            return x.rows();
        case Granularity::per_channel:
            if (x.rank() != 2)
                throw ShapeError(std::string(op) + ": per_channel needs a rank-2 tensor, have " +
                                 x.shape().str());
            return x.cols();
    }
    return 0;
}

void check_scale_match(const char* op, const FloatTensor& x, const ScaleVector& s) {
    const int64_t want = scale_len_for(x, s.granularity, op);
    if (s.values.rank() != 1 || s.values.numel() != want)
        throw ShapeError(std::string(op) + ": " + granularity_name(s.granularity) +
                         " scale of length " + std::to_string(s.values.numel()) +
                         " does not fit tensor " + x.shape().str());
}

}  // namespace

ScaleVector derive_scale(const FloatTensor& x, const QuantSpec& spec) {
    spec.validate();
    const float qmax = static_cast<float>(spec.qmax());
    const auto& f = kernels::funcs();
    ScaleVector out;
    out.granularity = spec.granularity;
    switch (spec.granularity) {
        case Granularity::per_tensor: {
            const float m = f.max_abs_run(x.data(), static_cast<size_t>(x.numel()));
            out.values = FloatTensor::scalar1(std::max(spec.scale_floor, m / qmax));
            break;
        }
        case Granularity::per_token: {
            (void)scale_len_for(x, spec.granularity, "derive_scale");
            const size_t cols = static_cast<size_t>(x.cols());
            FloatTensor v(Shape{x.rows()});
            for (int64_t r = 0; r < x.rows(); ++r) {
                const float m = f.max_abs_run(x.data() + r * x.cols(), cols);
                v[r] = std::max(spec.scale_floor, m / qmax);
            }
            out.values = std::move(v);
            break;
        }
        case Granularity::per_channel: {
            (void)scale_len_for(x, spec.granularity, "derive_scale");
            FloatTensor v(Shape{x.cols()});
            f.max_abs_columns(x.data(), static_cast<size_t>(x.rows()),
                              static_cast<size_t>(x.cols()), v.data());
            for (int64_t c = 0; c < v.numel(); ++c)
                v[c] = std::max(spec.scale_floor, v[c] / qmax);
            out.values = std::move(v);
            break;
        }
    }
    return out;
}

QuantizedTensor quantize(const FloatTensor& x, const ScaleVector& s, const QuantSpec& spec) {
    spec.validate();
    if (spec.no_round || spec.no_clamp)
        throw Error("integer export requested with an ablation flag set; "
                    "no_round/no_clamp tensors exist only in the fake-quant float path");
    check_scale_match("quantize", x, s);
    for (int64_t i = 0; i < s.values.numel(); ++i)
        if (!(s.values[i] >= spec.scale_floor))
            throw DomainError("quantize: scale " + std::to_string(s.values[i]) +
                              " below scale_floor");
    const auto& f = kernels::funcs();
    QuantizedTensor out;
    out.scales = s;
    out.spec = spec;
    out.ints = IntTensor(x.shape());
    switch (s.granularity) {
        case Granularity::per_tensor:
            f.quantize_run(x.data(), out.ints.data(), static_cast<size_t>(x.numel()),
                           s.values[0], spec.qmin(), spec.qmax());
            break;
        case Granularity::per_token:
            for (int64_t r = 0; r < x.rows(); ++r)
                f.quantize_run(x.data() + r * x.cols(), out.ints.data() + r * x.cols(),
                               static_cast<size_t>(x.cols()), s.values[r], spec.qmin(),
                               spec.qmax());
            break;
        case Granularity::per_channel:
            f.quantize_per_channel(x.data(), s.values.data(), out.ints.data(),
                                   static_cast<size_t>(x.rows()), static_cast<size_t>(x.cols()),
                                   spec.qmin(), spec.qmax());
            break;
    }
    return out;
}

FloatTensor dequantize(const QuantizedTensor& q) {
    const auto& f = kernels::funcs();
    FloatTensor out(q.ints.shape());
    switch (q.scales.granularity) {
        case Granularity::per_tensor:
            f.dequantize_run(q.ints.data(), out.data(), static_cast<size_t>(out.numel()),
                             q.scales.values[0]);
            break;
        case Granularity::per_token:
            for (int64_t r = 0; r < q.ints.rows(); ++r)
                f.dequantize_run(q.ints.data() + r * q.ints.cols(), out.data() + r * out.cols(),
                                 static_cast<size_t>(q.ints.cols()), q.scales.values[r]);
            break;
        case Granularity::per_channel:
            f.dequantize_per_channel(q.ints.data(), q.scales.values.data(), out.data(),
                                     static_cast<size_t>(q.ints.rows()),
                                     static_cast<size_t>(q.ints.cols()));
            break;
    }
    return out;
}

autodiff::Variable fake_quantize(autodiff::Tape& tape, autodiff::Variable v,
                                 autodiff::Variable s, const QuantSpec& spec) {
    spec.validate();
    const FloatTensor& vv = v.value();
    const FloatTensor& sv = s.value();
    if (spec.granularity == Granularity::per_token)
        throw ConfigError("fake_quantize on tape supports per_tensor/per_channel scales; "
                          "per_token lives in the dynamic integer decode path");
    const int64_t want = spec.granularity == Granularity::per_tensor ? 1 : vv.cols();
    if (vv.rank() != 2 || sv.rank() != 1 || sv.numel() != want)
        throw ShapeError("fake_quantize: scale " + sv.shape().str() + " does not fit tensor " +
                         vv.shape().str() + " at granularity " +
                         granularity_name(spec.granularity));
    autodiff::Variable q = tape.div_row_broadcast(v, s);
    if (!spec.no_round) q = tape.ste_round(q);
    if (!spec.no_clamp)
        q = tape.ste_clamp(q, static_cast<float>(spec.qmin()), static_cast<float>(spec.qmax()));
    return tape.mul_row_broadcast(q, s);
}

FloatTensor fake_quantize_eval(const FloatTensor& x, const ScaleVector& s, const QuantSpec& spec) {
    spec.validate();
    check_scale_match("fake_quantize_eval", x, s);
    const float lo = static_cast<float>(spec.qmin());
    const float hi = static_cast<float>(spec.qmax());
    const int64_t n = x.numel();
    FloatTensor out(x.shape());
    // same op order as the tape path: divide, round, clamp, multiply
    auto scale_at = [&](int64_t i) -> float {
        switch (s.granularity) {
            case Granularity::per_tensor: return s.values[0];
            case Granularity::per_token: return s.values[i / x.cols()];
            case Granularity::per_channel: return s.values[i % x.cols()];
        }
        return 1.0f;
    };
    for (int64_t i = 0; i < n; ++i) out[i] = x[i] / scale_at(i);
    if (!spec.no_round)
        kernels::funcs().round_half_away_run(out.data(), out.data(), static_cast<size_t>(n));
    if (!spec.no_clamp)
        for (int64_t i = 0; i < n; ++i) {
            if (out[i] < lo) out[i] = lo;
            if (out[i] > hi) out[i] = hi;
        }
    for (int64_t i = 0; i < n; ++i) out[i] *= scale_at(i);
    return out;
}

QuantizedTensor quantize_weights_per_channel(const FloatTensor& w, const QuantSpec& spec) {
    QuantSpec wspec = spec;
    wspec.granularity = Granularity::per_channel;  // weights are always per-channel
    wspec.no_round = false;
    wspec.no_clamp = false;
    const ScaleVector s = derive_scale(w, wspec);
    return quantize(w, s, wspec);
}

FloatTensor fake_quantize_weights_once(const FloatTensor& w, const QuantSpec& spec) {
    return dequantize(quantize_weights_per_channel(w, spec));
}

// ---------------------------------------------------------------- scales

bool ScaleSet::contains(const std::string& name) const {
    for (const auto& e : entries_)
        if (e->name == name) return true;
    return false;
}

void ScaleSet::add(std::string name, ScaleVector scale) {
    if (contains(name)) throw Error("duplicate scale entry '" + name + "'");
    auto e = std::make_unique<Entry>();
    e->name = std::move(name);
    e->scale = std::move(scale);
    entries_.push_back(std::move(e));
}

ScaleVector& ScaleSet::at(const std::string& name) {
    for (auto& e : entries_)
        if (e->name == name) return e->scale;
    throw Error("no scale entry '" + name + "'");
}

ScaleSet ScaleSet::clone() const {
    ScaleSet out;
    for (const auto& e : entries_) {
        ScaleVector sv;
        sv.granularity = e->scale.granularity;
        sv.values = e->scale.values;
        out.add(e->name, std::move(sv));
    }
    return out;
}

const ScaleVector& ScaleSet::at(const std::string& name) const {
    for (const auto& e : entries_)
        if (e->name == name) return e->scale;
    throw Error("no scale entry '" + name + "'");
}

std::vector<std::string> ScaleSet::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e->name);
    return out;
}

}  // namespace sasq
