// Command-line front end: calibrate -> train -> eval -> generate -> ablate,
// plus the substrate pretrain step that produces the float checkpoint the
// quantization experiments run on.
//
// Conventions: progress and the resolved config go to stderr; machine-
// readable results (CSV-ish lines) go to stdout.  Exit codes: 0 success,
// 2 config error, 3 data error, 4 numerical abort, 1 anything else.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sasq/calib.hpp"
#include "sasq/infer.hpp"
#include "sasq/kernels.hpp"
#include "sasq/persist.hpp"
#include "sasq/threading.hpp"
#include "sasq/train.hpp"

namespace {

using namespace sasq;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

RunConfig load_config(const std::string& path) {
    RunConfig cfg = RunConfig::from_file(path);
    std::cerr << "-- resolved config (" << path << ")\n"
              << cfg.echo() << "-- kernels: " << kernels::isa_name(kernels::active())
              << ", threads: " << threads() << "\n";
    return cfg;
}

Model build_model(const RunConfig& cfg) {
    Model m(cfg.model);
    if (!cfg.model_checkpoint.empty()) {
        std::cerr << "loading weights from " << cfg.model_checkpoint << "\n";
        load_model_weights(cfg.model_checkpoint, m);
    } else {
        std::cerr << "initializing random weights (model.seed=" << cfg.model_seed << ")\n";
        m.init_random(cfg.model_seed);
    }
    return m;
}

QuantSpec ablation_spec(const RunConfig& cfg, const std::string& ablation, bool& fp_weights) {
    QuantSpec spec = cfg.quant;
    fp_weights = false;
    if (ablation.empty() || ablation == "full") return spec;
    if (ablation == "no-round") spec.no_round = true;
    else if (ablation == "no-clamp") spec.no_clamp = true;
    else if (ablation == "fp-weights") fp_weights = true;
    else throw ConfigError("unknown ablation '" + ablation +
                           "' (expected full|no-round|no-clamp|fp-weights)");
    return spec;
}

// Loads a scale file, checks its bit width against the config, quantizes
// the model weights and attaches the scales.
void setup_quantized(Model& m, const QuantSpec& spec, bool fp_weights,
                     const std::string& scales_path) {
    LoadedScales ls = load_scales(scales_path, spec.scale_floor);
    if (ls.bits != spec.bits)
        throw ConfigError("scale file '" + scales_path + "' was written for " +
                          std::to_string(ls.bits) + "-bit quantization but quant.bits=" +
                          std::to_string(spec.bits));
    quantize_weights(m, spec, fp_weights);
    m.attach_scales(std::move(ls.scales));
}

void write_loss_csv(const std::string& path, const std::vector<StepRecord>& history) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw PersistError(PersistError::Code::io, "cannot open '" + path + "' for writing");
    out << "step,loss,ppl\n";
    for (const StepRecord& r : history)
        out << r.step << "," << fmt(r.loss) << "," << fmt(r.ppl) << "\n";
    out.flush();
    if (!out) throw PersistError(PersistError::Code::io, "write failed on '" + path + "'");
}

// ----------------------------------------------------------------- pretrain

int cmd_pretrain(const std::string& config, const std::string& corpus_path,
                 const std::string& out, const std::string& loss_csv) {
    RunConfig cfg = load_config(config);
    const std::vector<int32_t> corpus = load_corpus(corpus_path);
    std::cerr << "corpus: " << corpus.size() << " tokens\n";

    Model m(cfg.model);
    m.init_random(cfg.model_seed);
    std::cerr << "pretraining " << cfg.pretrain.steps << " steps (seed=" << cfg.pretrain.seed
              << ")\n";
    const auto history = pretrain_weights(m, corpus, cfg.pretrain, [](const StepRecord& r) {
        if (r.step % 25 == 0 || r.step == 1)
            std::cerr << "  step " << r.step << "  loss " << fmt(r.loss) << "  ppl "
                      << fmt(r.ppl) << "\n";
    });
    save_model(out, m);
    if (!loss_csv.empty()) write_loss_csv(loss_csv, history);
    std::cout << "checkpoint," << out << "\n";
    std::cout << "final_loss," << fmt(history.back().loss) << "\n";
    return 0;
}

// ---------------------------------------------------------------- calibrate

int cmd_calibrate(const std::string& config, const std::string& corpus_path,
                  const std::string& out) {
    RunConfig cfg = load_config(config);
    const std::vector<int32_t> corpus = load_corpus(corpus_path);
    Model m = build_model(cfg);

    const auto batches =
        calibration_windows(corpus, cfg.model.max_seq_len, cfg.calib_batches);
    std::cerr << "calibrating on " << batches.size() << " windows of " << cfg.model.max_seq_len
              << " tokens (use_max=" << (cfg.calib_use_max ? "true" : "false") << ")\n";
    ScaleSet scales = calibrate(m, batches, cfg.quant, cfg.calib_use_max);
    save_scales(out, scales, cfg.quant.bits, Granularity::per_channel);
    std::cerr << "wrote " << scales.size() << " scale vectors to " << out << "\n";

    std::cout << "layer,min,mean,max\n";
    for (const auto& e : scales.entries()) {
        const FloatTensor& v = e->scale.values;
        float lo = v[0], hi = v[0];
        double sum = 0.0;
        for (int64_t i = 0; i < v.numel(); ++i) {
            lo = std::min(lo, v[i]);
            hi = std::max(hi, v[i]);
            sum += static_cast<double>(v[i]);
        }
        std::cout << e->name << "," << fmt(lo) << ","
                  << fmt(sum / static_cast<double>(v.numel())) << "," << fmt(hi) << "\n";
    }
    return 0;
}

// -------------------------------------------------------------------- train

int cmd_train(const std::string& config, const std::string& corpus_path,
              const std::string& scales_in, const std::string& out,
              const std::string& ablation, std::string loss_csv) {
    RunConfig cfg = load_config(config);
    const std::vector<int32_t> corpus = load_corpus(corpus_path);
    Model m = build_model(cfg);

    bool fp_weights = false;
    const QuantSpec spec = ablation_spec(cfg, ablation, fp_weights);
    setup_quantized(m, spec, fp_weights, scales_in);

    if (loss_csv.empty()) loss_csv = out + ".loss.csv";
    std::cerr << "training scales: " << cfg.train.epochs << " epochs, seed=" << cfg.train.seed
              << ", ablation=" << (ablation.empty() ? "full" : ablation) << "\n";
    TrainResult result = train_scales(m, corpus, cfg.train, [](const StepRecord& r) {
        if (r.step % 16 == 0 || r.step == 1)
            std::cerr << "  step " << r.step << "  loss " << fmt(r.loss) << "  ppl "
                      << fmt(r.ppl) << "\n";
    });
    save_scales(out, m.scales, spec.bits, Granularity::per_channel);
    write_loss_csv(loss_csv, result.history);
    std::cerr << "wrote trained scales to " << out << " and loss history to " << loss_csv
              << "\n";

    std::cout << "steps," << result.history.size() << "\n";
    if (!result.history.empty()) {
        std::cout << "first_loss," << fmt(result.history.front().loss) << "\n";
        std::cout << "final_loss," << fmt(result.history.back().loss) << "\n";
    }
    return 0;
}

// --------------------------------------------------------------------- eval

int cmd_eval(const std::string& config, const std::string& corpus_path,
             const std::string& scales_path, const std::string& mode) {
    RunConfig cfg = load_config(config);
    const std::vector<int32_t> corpus = load_corpus(corpus_path);
    Model m = build_model(cfg);

    RunMode rm;
    if (mode == "float") {
        rm = RunMode::floating;
    } else {
        if (scales_path.empty())
            throw ConfigError("eval --mode " + mode + " requires --scales");
        if (mode == "naive-static" || mode == "sasq-static") {
            if (cfg.quant.no_round || cfg.quant.no_clamp)
                throw ConfigError("static integer eval requires real quantization "
                                  "(quant.no_round/no_clamp must be false)");
            rm = RunMode::int_static;
        } else if (mode == "fake") {
            rm = RunMode::fake_quant;
        } else {
            throw ConfigError("unknown eval mode '" + mode +
                              "' (expected float|naive-static|sasq-static|fake)");
        }
        setup_quantized(m, cfg.quant, /*fp_weights=*/false, scales_path);
    }

    const EvalResult r = evaluate_ppl(m, corpus, rm);
    std::cerr << "evaluated " << r.windows << " windows / " << r.positions << " positions in "
              << run_mode_name(rm) << " mode\n";
    std::cout << mode << "," << fmt(r.ppl) << "\n";
    return 0;
}

// ----------------------------------------------------------------- generate

int cmd_generate(const std::string& config, const std::string& scales_path,
                 const std::string& prompt, const std::string& policy_name, uint64_t seed,
                 bool seed_set, const std::string& transcript) {
    RunConfig cfg = load_config(config);
    if (seed_set) cfg.gen.seed = seed;
    const DecodePolicy policy = decode_policy_from_name(policy_name);

    Model m = build_model(cfg);
    if (cfg.quant.no_round || cfg.quant.no_clamp)
        throw ConfigError("generation uses the integer path; quant.no_round/no_clamp "
                          "must be false");
    setup_quantized(m, cfg.quant, /*fp_weights=*/false, scales_path);

    const std::vector<int32_t> prompt_tokens = tokenize_bytes(prompt);
    if (prompt_tokens.empty()) throw DataError("generate: prompt is empty");

    std::cerr << "generating (policy=" << decode_policy_name(policy)
              << ", greedy=" << (cfg.gen.greedy ? "true" : "false") << ", seed=" << cfg.gen.seed
              << ")\n";
    const GenResult r = generate(m, prompt_tokens, cfg.gen, policy);
    const std::string text = detokenize_bytes(r.tokens);
    std::cout << text << "\n";
    std::cerr << "generated " << r.tokens.size() << " tokens ("
              << (r.hit_eos ? "hit EOS" : "no EOS") << ")\n";
    if (!transcript.empty()) {
        std::ofstream out(transcript, std::ios::binary | std::ios::trunc);
        if (!out)
            throw PersistError(PersistError::Code::io,
                               "cannot open '" + transcript + "' for writing");
        out << prompt << text;
        out.flush();
        if (!out)
            throw PersistError(PersistError::Code::io, "write failed on '" + transcript + "'");
    }
    return 0;
}

// ------------------------------------------------------------------- ablate

int cmd_ablate(const std::string& config, const std::string& corpus_path,
               const std::string& scales_path) {
    RunConfig cfg = load_config(config);
    const std::vector<int32_t> corpus = load_corpus(corpus_path);

    struct Row {
        std::string variant;
        double ppl = 0.0;
    };
    std::vector<Row> rows;

    {
        Model m = build_model(cfg);
        rows.push_back({"float", evaluate_ppl(m, corpus, RunMode::floating).ppl});
        std::cerr << "float baseline ppl " << fmt(rows.back().ppl) << "\n";
    }

    const LoadedScales base = load_scales(scales_path, cfg.quant.scale_floor);
    if (base.bits != cfg.quant.bits)
        throw ConfigError("scale file '" + scales_path + "' was written for " +
                          std::to_string(base.bits) + "-bit quantization but quant.bits=" +
                          std::to_string(cfg.quant.bits));

    const char* variants[] = {"full", "no-round", "no-clamp", "fp-weights"};
    for (const char* variant : variants) {
        std::cerr << "-- variant " << variant << "\n";
        Model m = build_model(cfg);
        bool fp_weights = false;
        const QuantSpec spec = ablation_spec(cfg, variant, fp_weights);
        quantize_weights(m, spec, fp_weights);
        m.attach_scales(base.scales.clone());
        train_scales(m, corpus, cfg.train, [](const StepRecord& r) {
            if (r.step % 32 == 0)
                std::cerr << "  step " << r.step << "  loss " << fmt(r.loss) << "\n";
        });
        // all variants are comparable in the fake-quant float domain (the
        // ablated quantizers have no integer form)
        const double ppl = evaluate_ppl(m, corpus, RunMode::fake_quant).ppl;
        std::string name = variant;
        for (char& c : name)
            if (c == '-') c = '_';
        rows.push_back({name, ppl});
        std::cerr << "  ppl " << fmt(ppl) << "\n";
    }

    std::cout << "variant,ppl\n";
    for (const Row& r : rows) std::cout << r.variant << "," << fmt(r.ppl) << "\n";

    std::cerr << "\n  variant      ppl\n  ----------   ----------\n";
    for (const Row& r : rows) {
        std::fprintf(stderr, "  %-12s %s\n", r.variant.c_str(), fmt(r.ppl).c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"symmetric activation-scale quantization toolkit"};
    app.require_subcommand(1);

    int thread_count = 1;
    app.add_option("--threads", thread_count, "worker threads for the row-parallel kernels")
        ->check(CLI::PositiveNumber);

    std::string config, corpus, scales, out, loss_csv;
    std::string ablation, mode, prompt, policy = "phased", transcript;
    uint64_t seed = 0;

    CLI::App* c_pre = app.add_subcommand("pretrain", "train float weights on a corpus");
    c_pre->add_option("--config", config)->required();
    c_pre->add_option("--corpus", corpus)->required();
    c_pre->add_option("--out", out, "checkpoint file to write")->required();
    c_pre->add_option("--loss-csv", loss_csv);

    CLI::App* c_cal = app.add_subcommand("calibrate", "derive initial activation scales");
    c_cal->add_option("--config", config)->required();
    c_cal->add_option("--corpus", corpus)->required();
    c_cal->add_option("--out", out, "scale file to write")->required();

    CLI::App* c_tr = app.add_subcommand("train", "optimize activation scales");
    c_tr->add_option("--config", config)->required();
    c_tr->add_option("--corpus", corpus)->required();
    c_tr->add_option("--scales", scales, "initial scale file")->required();
    c_tr->add_option("--out", out, "trained scale file to write")->required();
    c_tr->add_option("--ablation", ablation, "full|no-round|no-clamp|fp-weights");
    c_tr->add_option("--loss-csv", loss_csv, "loss history path (default <out>.loss.csv)");

    CLI::App* c_ev = app.add_subcommand("eval", "perplexity on a corpus");
    c_ev->add_option("--config", config)->required();
    c_ev->add_option("--corpus", corpus)->required();
    c_ev->add_option("--scales", scales);
    c_ev->add_option("--mode", mode, "float|naive-static|sasq-static|fake")->required();

    CLI::App* c_gen = app.add_subcommand("generate", "phased autoregressive generation");
    c_gen->add_option("--config", config)->required();
    c_gen->add_option("--scales", scales)->required();
    c_gen->add_option("--prompt", prompt)->required();
    c_gen->add_option("--policy", policy, "phased|static-decode|float-decode");
    CLI::Option* seed_opt = c_gen->add_option("--seed", seed, "sampling seed (default gen.seed)");
    c_gen->add_option("--transcript", transcript, "write prompt+continuation to a file");

    CLI::App* c_ab = app.add_subcommand("ablate", "train/eval the quantizer ablations");
    c_ab->add_option("--config", config)->required();
    c_ab->add_option("--corpus", corpus)->required();
    c_ab->add_option("--scales", scales)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;  // bad usage is a config error
    }

    try {
        sasq::set_threads(thread_count);
        if (app.got_subcommand(c_pre)) return cmd_pretrain(config, corpus, out, loss_csv);
        if (app.got_subcommand(c_cal)) return cmd_calibrate(config, corpus, out);
        if (app.got_subcommand(c_tr))
            return cmd_train(config, corpus, scales, out, ablation, loss_csv);
        if (app.got_subcommand(c_ev)) return cmd_eval(config, corpus, scales, mode);
        if (app.got_subcommand(c_gen))
            return cmd_generate(config, scales, prompt, policy, seed, seed_opt->count() > 0,
                                transcript);
        if (app.got_subcommand(c_ab)) return cmd_ablate(config, corpus, scales);
        return 2;
    } catch (const sasq::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const sasq::PersistError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const sasq::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const sasq::NumericError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
