#include "sasq/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "sasq/rng.hpp"

namespace sasq {

// ---------------------------------------------------------------- configs

void TrainConfig::validate() const {
    // zero is allowed: it degenerates to an identity pass over the scales
    if (!(learning_rate >= 0.0f)) throw ConfigError("learning_rate must be >= 0");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_windows < 1) throw ConfigError("batch_windows must be >= 1");
    if (!(beta1 >= 0.0f && beta1 < 1.0f && beta2 >= 0.0f && beta2 < 1.0f))
        throw ConfigError("betas must lie in [0, 1)");
    if (!(adam_epsilon > 0.0f)) throw ConfigError("adam_epsilon must be positive");
    if (weight_decay < 0.0f) throw ConfigError("weight_decay must be >= 0");
    if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
}

void PretrainConfig::validate() const {
    if (!(learning_rate > 0.0f)) throw ConfigError("learning_rate must be positive");
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (window < 0) throw ConfigError("window must be >= 0");
    if (!(beta1 >= 0.0f && beta1 < 1.0f && beta2 >= 0.0f && beta2 < 1.0f))
        throw ConfigError("betas must lie in [0, 1)");
    if (!(adam_epsilon > 0.0f)) throw ConfigError("adam_epsilon must be positive");
    if (weight_decay < 0.0f || clip_norm < 0.0f)
        throw ConfigError("weight_decay/clip_norm must be >= 0");
}

// ------------------------------------------------------------------ AdamW

AdamW::AdamW(float lr, float beta1, float beta2, float eps, float weight_decay)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {}

int64_t AdamW::add_slot(int64_t size) {
    if (size < 1) throw ConfigError("AdamW slot size must be >= 1");
    m_.emplace_back(static_cast<size_t>(size), 0.0f);
    v_.emplace_back(static_cast<size_t>(size), 0.0f);
    return static_cast<int64_t>(m_.size()) - 1;
}

void AdamW::update(int64_t slot, FloatTensor& param, const FloatTensor& grad) {
    if (t_ < 1) throw Error("AdamW::update before begin_step");
    auto& m = m_[static_cast<size_t>(slot)];
    auto& v = v_[static_cast<size_t>(slot)];
    if (param.numel() != static_cast<int64_t>(m.size()) || grad.numel() != param.numel())
        throw ShapeError("AdamW slot/param/grad size mismatch");
    const float bc1 = static_cast<float>(1.0 - std::pow(static_cast<double>(b1_), t_));
    const float bc2 = static_cast<float>(1.0 - std::pow(static_cast<double>(b2_), t_));
    for (int64_t i = 0; i < param.numel(); ++i) {
        const float g = grad[i];
        m[static_cast<size_t>(i)] = b1_ * m[static_cast<size_t>(i)] + (1.0f - b1_) * g;
        v[static_cast<size_t>(i)] = b2_ * v[static_cast<size_t>(i)] + (1.0f - b2_) * g * g;
        const float mhat = m[static_cast<size_t>(i)] / bc1;
        const float vhat = v[static_cast<size_t>(i)] / bc2;
        param[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * param[i]);
    }
}

// ----------------------------------------------------------------- digest

namespace {

void fnv_mix(uint64_t& h, const void* data, size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ULL;
    }
}

struct Windows {
    int64_t window = 0;  // tokens per window
    int64_t count = 0;   // full windows in the corpus
};

Windows full_windows(const std::vector<int32_t>& corpus, int64_t window) {
    Windows w;
    w.window = window;
    w.count = static_cast<int64_t>(corpus.size()) / window;
    return w;
}

}  // namespace

uint64_t weight_digest(const Model& model) {
    uint64_t h = 1469598103934665603ULL;
    model.for_each_param([&](const std::string& name, const FloatTensor& t) {
        fnv_mix(h, name.data(), name.size());
        fnv_mix(h, t.data(), static_cast<size_t>(t.numel()) * sizeof(float));
    });
    const_cast<Model&>(model).for_each_linear([&](QuantLinear& l) {
        if (l.mode == WeightMode::floating) return;
        fnv_mix(h, l.w_eff.data(), static_cast<size_t>(l.w_eff.numel()) * sizeof(float));
        if (l.mode == WeightMode::quantized)
            fnv_mix(h, l.w_int.data(), static_cast<size_t>(l.w_int.numel()) * sizeof(int32_t));
    });
    return h;
}

// ----------------------------------------------------------- scale training

TrainResult train_scales(Model& model, const std::vector<int32_t>& corpus,
                         const TrainConfig& cfg, const StepCallback& on_step,
                         const EvalCallback& on_eval) {
    cfg.validate();
    if (!model.weights_quantized())
        throw Error("train_scales: weights must be quantized (or FP-frozen) first");
    if (!model.has_scales()) throw Error("train_scales: no calibrated scales attached");

    const int64_t L = model.config().max_seq_len;
    const Windows w = full_windows(corpus, L);
    if (w.count < 1)
        throw DataError("train_scales: corpus shorter than one window of " + std::to_string(L) +
                        " tokens");
    const float floor = model.act_spec().scale_floor;

    TrainResult result;
    result.digest_before = weight_digest(model);

    // parameter slots in for_each_linear order (matches bind())
    AdamW opt(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon, cfg.weight_decay);
    std::vector<FloatTensor*> params;
    model.for_each_linear([&](QuantLinear& l) {
        FloatTensor& values = model.scales.at(l.name).values;
        params.push_back(&values);
        opt.add_slot(values.numel());
    });

    std::vector<int64_t> order(static_cast<size_t>(w.count));
    for (int64_t i = 0; i < w.count; ++i) order[static_cast<size_t>(i)] = i;

    int64_t step = 0;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(cfg.seed + 1000003ULL * static_cast<uint64_t>(epoch));
        for (int64_t i = w.count - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[static_cast<size_t>(rng.uniform_int(i + 1))]);

        for (int64_t b0 = 0; b0 < w.count; b0 += cfg.batch_windows) {
            const int64_t b1 = std::min(b0 + cfg.batch_windows, w.count);
            ++step;

            autodiff::Tape tape;
            Model::Bindings bind = model.bind(tape, Model::TrainTarget::scales);
            std::vector<autodiff::Variable> losses;
            losses.reserve(static_cast<size_t>(b1 - b0));
            for (int64_t bi = b0; bi < b1; ++bi) {
                const int64_t s = order[static_cast<size_t>(bi)] * L;
                std::span<const int32_t> inputs(corpus.data() + s, static_cast<size_t>(L - 1));
                std::span<const int32_t> targets(corpus.data() + s + 1, static_cast<size_t>(L - 1));
                losses.push_back(model.window_loss(tape, bind, inputs, targets));
            }
            autodiff::Variable loss =
                losses.size() == 1 ? losses.front() : tape.mean_scalars(losses);
            const double lv = static_cast<double>(loss.value()[0]);
            if (!std::isfinite(lv))
                throw NumericError("train_scales: non-finite loss at step " +
                                   std::to_string(step));
            tape.backward(loss);

            opt.begin_step();
            for (size_t pi = 0; pi < bind.trainables.size(); ++pi) {
                FloatTensor& p = *params[pi];
                opt.update(static_cast<int64_t>(pi), p, tape.grad(bind.trainables[pi].second));
                for (int64_t j = 0; j < p.numel(); ++j)
                    if (p[j] < floor) p[j] = floor;
            }

            result.history.push_back({step, lv, std::exp(lv)});
            if (on_step) on_step(result.history.back());
            if (on_eval && cfg.eval_every > 0 && step % cfg.eval_every == 0) on_eval(step);
        }
    }

    result.digest_after = weight_digest(model);
    if (result.digest_after != result.digest_before)
        throw Error("train_scales: weight digest changed during scale training");
    return result;
}

// ------------------------------------------------------------- evaluation

EvalResult evaluate_ppl(Model& model, const std::vector<int32_t>& corpus, RunMode mode) {
    const int64_t L = model.config().max_seq_len;
    const int64_t n = static_cast<int64_t>(corpus.size());
    if (n < 2) throw DataError("evaluate_ppl: corpus needs at least 2 tokens");

    EvalResult r;
    double total = 0.0;
    for (int64_t s = 0; s + 1 < n; s += L) {
        const int64_t len = std::min(L, n - s);
        if (len < 2) break;
        std::span<const int32_t> inputs(corpus.data() + s, static_cast<size_t>(len - 1));
        std::span<const int32_t> targets(corpus.data() + s + 1, static_cast<size_t>(len - 1));
        FloatTensor logits = model.forward_logits(inputs, mode);
        const auto [nll, ppl] = cross_entropy_ppl(logits, targets);
        (void)ppl;
        total += nll * static_cast<double>(len - 1);
        r.positions += len - 1;
        ++r.windows;
    }
    r.mean_nll = total / static_cast<double>(r.positions);
    r.ppl = std::exp(r.mean_nll);
    return r;
}

// ------------------------------------------------------------ pretraining

std::vector<StepRecord> pretrain_weights(Model& model, const std::vector<int32_t>& corpus,
                                         const PretrainConfig& cfg,
                                         const StepCallback& on_step) {
    cfg.validate();
    if (model.weights_quantized())
        throw Error("pretrain_weights: model weights are already quantized");
    const int64_t L = cfg.window > 0 ? cfg.window : model.config().max_seq_len;
    if (L < 2 || L > model.config().max_seq_len)
        throw ConfigError("pretrain window must lie in [2, max_seq_len]");
    const int64_t n = static_cast<int64_t>(corpus.size());
    if (n < L) throw DataError("pretrain_weights: corpus shorter than one window");

    Rng rng(cfg.seed);
    AdamW opt(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon, cfg.weight_decay);
    std::vector<FloatTensor*> params;
    model.for_each_param([&](const std::string&, FloatTensor& t) {
        params.push_back(&t);
        opt.add_slot(t.numel());
    });

    std::vector<StepRecord> history;
    history.reserve(static_cast<size_t>(cfg.steps));
    for (int64_t step = 1; step <= cfg.steps; ++step) {
        const int64_t s = rng.uniform_int(n - L + 1);
        std::span<const int32_t> inputs(corpus.data() + s, static_cast<size_t>(L - 1));
        std::span<const int32_t> targets(corpus.data() + s + 1, static_cast<size_t>(L - 1));

        autodiff::Tape tape;
        Model::Bindings bind = model.bind(tape, Model::TrainTarget::weights);
        autodiff::Variable loss = model.window_loss(tape, bind, inputs, targets);
        const double lv = static_cast<double>(loss.value()[0]);
        if (!std::isfinite(lv))
            throw NumericError("pretrain_weights: non-finite loss at step " +
                               std::to_string(step));
        tape.backward(loss);

        float clip = 1.0f;
        if (cfg.clip_norm > 0.0f) {
            double sq = 0.0;
            for (const auto& [name, var] : bind.trainables) {
                (void)name;
                const FloatTensor& g = tape.grad(var);
                for (int64_t i = 0; i < g.numel(); ++i)
                    sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
            }
            const double norm = std::sqrt(sq);
            if (norm > cfg.clip_norm) clip = static_cast<float>(cfg.clip_norm / norm);
        }

        opt.begin_step();
        for (size_t pi = 0; pi < bind.trainables.size(); ++pi) {
            const FloatTensor& g = tape.grad(bind.trainables[pi].second);
            if (clip != 1.0f) {
                FloatTensor scaled = g;
                for (int64_t i = 0; i < scaled.numel(); ++i) scaled[i] *= clip;
                opt.update(static_cast<int64_t>(pi), *params[pi], scaled);
            } else {
                opt.update(static_cast<int64_t>(pi), *params[pi], g);
            }
        }

        history.push_back({step, lv, std::exp(lv)});
        if (on_step) on_step(history.back());
    }
    return history;
}

}  // namespace sasq
