#include "sasq/calib.hpp"

#include <algorithm>
#include <map>

namespace sasq {

ScaleSet calibrate(Model& model, const std::vector<std::vector<int32_t>>& batches,
                   const QuantSpec& spec, bool use_max) {
    spec.validate();
    if (batches.empty()) throw DataError("calibrate: empty calibration corpus");
    if (model.weights_quantized())
        throw Error("calibrate: model must still be in float mode (quantize weights after)");

    QuantSpec cspec = spec;
    cspec.granularity = Granularity::per_channel;

    // running per-channel statistic per layer, merged in batch-index order
    struct Acc {
        FloatTensor sum_or_max;
        bool started = false;
    };
    std::map<std::string, Acc> acc;

    for (const auto& batch : batches) {
        if (batch.empty()) throw DataError("calibrate: empty calibration batch");
        Model::Observer obs = [&](const std::string& name, const FloatTensor& input) {
            ScaleVector s = derive_scale(input, cspec);
            Acc& a = acc[name];
            if (!a.started) {
                a.sum_or_max = std::move(s.values);
                a.started = true;
                return;
            }
            for (int64_t i = 0; i < a.sum_or_max.numel(); ++i)
                a.sum_or_max[i] = use_max ? std::max(a.sum_or_max[i], s.values[i])
                                          : a.sum_or_max[i] + s.values[i];
        };
        model.forward_logits(std::span<const int32_t>(batch.data(), batch.size()),
                             RunMode::floating, nullptr, &obs);
    }

    const float inv_n = 1.0f / static_cast<float>(batches.size());
    ScaleSet out;
    for (const std::string& name : model.linear_names()) {
        auto it = acc.find(name);
        if (it == acc.end()) throw Error("calibrate: layer " + name + " never observed");
        ScaleVector sv;
        sv.granularity = Granularity::per_channel;
        sv.values = std::move(it->second.sum_or_max);
        if (!use_max)
            for (int64_t i = 0; i < sv.values.numel(); ++i) sv.values[i] *= inv_n;
        for (int64_t i = 0; i < sv.values.numel(); ++i)
            sv.values[i] = std::max(spec.scale_floor, sv.values[i]);
        out.add(name, std::move(sv));
    }
    return out;
}

void quantize_weights(Model& model, const QuantSpec& spec, bool fp_weights) {
    spec.validate();
    model.set_act_spec(spec);
    model.for_each_linear([&](QuantLinear& l) {
        if (fp_weights)
            l.freeze_fp_weights(spec);
        else
            l.quantize_weights(spec);
    });
}

std::vector<std::vector<int32_t>> calibration_windows(const std::vector<int32_t>& corpus,
                                                      int64_t window, int64_t count) {
    if (window < 1 || count < 1) throw ConfigError("calibration windows: bad window/count");
    const int64_t total = static_cast<int64_t>(corpus.size()) / window;
    if (total < 1)
        throw DataError("calibration corpus shorter than one window of " +
                        std::to_string(window) + " tokens");
    const int64_t n = std::min(count, total);
    std::vector<std::vector<int32_t>> out;
    out.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const int64_t w = i * total / n;  // evenly spaced window index
        const auto* base = corpus.data() + w * window;
        out.emplace_back(base, base + window);
    }
    return out;
}

}  // namespace sasq
