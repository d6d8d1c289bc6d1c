#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "qcl/autocorr.hpp"
#include "qcl/checkpoint.hpp"
#include "qcl/config.hpp"
#include "qcl/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::string> neuron;
    std::optional<std::string> variant;
    std::optional<double> ib_rate_override;
    std::optional<double> alpha;
    std::optional<std::string> objective;
    std::optional<std::string> data_dir;
    bool force = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_model_flags = true) {
    cmd->add_option("--config", opts.config_path, "Run configuration (JSON, // comments ok)")
        ->required();
    cmd->add_option("--seed", opts.seed, "Override the root seed");
    cmd->add_option("--out", opts.out_dir, "Override the output directory");
    cmd->add_flag("--force", opts.force, "Write into a non-empty output directory");
    if (with_model_flags) {
        cmd->add_option("--neuron", opts.neuron, "quadratic | conventional");
        cmd->add_option("--variant", opts.variant, "full | no_power | single_inner");
        cmd->add_option("--ib-rate", opts.ib_rate_override, "Override the imbalance rate");
        cmd->add_option("--alpha", opts.alpha, "Override the quadratic learning-rate scale");
        cmd->add_option("--objective", opts.objective, "composite | ce_only");
        cmd->add_option("--data", opts.data_dir,
                        "Ingest dataset directory (expects manifest.json)");
    }
}

qcl::RunConfig resolve_config(const CommonOpts& opts) {
    qcl::RunConfig cfg = qcl::load_run_config(opts.config_path);
    if (opts.seed) {
        cfg.seed = *opts.seed;
        cfg.train.seed = *opts.seed;
    }
    if (opts.out_dir) cfg.out_dir = *opts.out_dir;
    if (opts.neuron) cfg.train.backbone.neuron = qcl::neuron_from_string(*opts.neuron);
    if (opts.variant) cfg.train.backbone.variant = qcl::variant_from_string(*opts.variant);
    if (opts.ib_rate_override) cfg.data.split.ib_rate = *opts.ib_rate_override;
    if (opts.alpha) cfg.train.alpha = *opts.alpha;
    if (opts.objective) cfg.train.objective = qcl::objective_from_string(*opts.objective);
    if (opts.data_dir) {
        cfg.data.source = "ingest";
        cfg.data.manifest = (fs::path(*opts.data_dir) / "manifest.json").string();
    }
    cfg.validate();
    return cfg;
}

void prepare_out_dir(const fs::path& dir, bool force) {
    if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
        throw qcl::ConfigError("output directory " + dir.string() +
                               " is not empty (pass --force to reuse it)");
    }
    fs::create_directories(dir);
}

qcl::DatasetSplits build_splits(const qcl::RunConfig& cfg, std::size_t& num_classes) {
    const auto streams = qcl::SeedStreams::from_root(cfg.seed);
    const auto recordings =
        qcl::load_recordings(cfg.data, streams.data, fs::current_path());
    num_classes = recordings.size();
    auto splits = qcl::build_long_tail_split(recordings, cfg.data.split, cfg.data.window,
                                             streams.split);
    return splits;
}

void print_split_log(const qcl::DatasetSplits& splits) {
    std::vector<std::size_t> train(splits.num_classes, 0), val(splits.num_classes, 0),
        test(splits.num_classes, 0);
    for (const auto& w : splits.train) train[w.label]++;
    for (const auto& w : splits.val) val[w.label]++;
    for (const auto& w : splits.test) test[w.label]++;
    std::printf("split  %-6s %-6s %-6s\n", "train", "val", "test");
    for (std::size_t c = 0; c < splits.num_classes; ++c) {
        std::printf("cls %-2zu %-6zu %-6zu %-6zu\n", c, train[c], val[c], test[c]);
    }
}

void write_eval_report(const fs::path& path, const qcl::EvalReport& report,
                       std::optional<std::size_t> best_epoch) {
    ordered_json j;
    j["schema_version"] = 1;
    j["classes"] = report.confusion.size();
    std::size_t samples = 0;
    for (const auto& row : report.confusion) {
        for (auto v : row) samples += v;
    }
    j["samples"] = samples;
    if (best_epoch) j["best_epoch"] = *best_epoch;
    j["metrics"] = {{"acc", report.acc},
                    {"f1", report.f1},
                    {"mcc", report.mcc},
                    {"micro_acc", report.micro_acc}};
    j["confusion"] = report.confusion;
    std::ofstream out(path);
    out << j.dump(2) << "\n";
}

void write_confusion_csv(const fs::path& path, const qcl::EvalReport& report) {
    std::ofstream out(path);
    const std::size_t C = report.confusion.size();
    out << "true_class";
    for (std::size_t p = 0; p < C; ++p) out << ",pred_" << p;
    out << "\n";
    for (std::size_t t = 0; t < C; ++t) {
        out << t;
        for (std::size_t p = 0; p < C; ++p) out << "," << report.confusion[t][p];
        out << "\n";
    }
}

void write_standardization(const fs::path& path, const qcl::StandardizeStats& stats) {
    ordered_json j;
    j["schema_version"] = 1;
    j["mean"] = stats.mean;
    j["std"] = stats.std_dev;
    std::ofstream out(path);
    out << j.dump(2) << "\n";
}

std::optional<qcl::StandardizeStats> read_standardization(const fs::path& path) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    ordered_json j;
    in >> j;
    qcl::StandardizeStats stats;
    stats.mean = j.at("mean").get<double>();
    stats.std_dev = j.at("std").get<double>();
    return stats;
}

int cmd_gen_data(const CommonOpts& opts) {
    qcl::RunConfig cfg = resolve_config(opts);
    if (cfg.data.source != "synthetic") {
        throw qcl::ConfigError("gen-data: config must use the synthetic data source");
    }
    const fs::path out = cfg.out_dir;
    prepare_out_dir(out, opts.force);

    const auto streams = qcl::SeedStreams::from_root(cfg.seed);
    const auto recordings = qcl::load_recordings(cfg.data, streams.data, fs::current_path());

    qcl::Manifest manifest;
    manifest.format = qcl::IngestFormat::raw_f32le;
    std::printf("class  period  res_freq  decay  amplitude  noise_std  file\n");
    for (std::size_t c = 0; c < cfg.data.classes.size(); ++c) {
        const auto& m = cfg.data.classes[c];
        const std::string file = "class_" + std::to_string(c) + ".f32";
        qcl::write_raw_f32le(out / file, recordings.at(c)[0]);
        manifest.entries.push_back({file, c, 0.0});
        std::printf("%-6zu %-7zu %-9.4f %-6.3f %-10.3f %-10.3f %s\n", c, m.fault_period,
                    m.resonance_freq, m.decay, m.amplitude, m.noise_std, file.c_str());
    }
    qcl::save_manifest(manifest, out / "manifest.json");
    std::printf("wrote %zu recordings of %zu samples to %s\n", cfg.data.classes.size(),
                cfg.data.effective_recording_len(), out.string().c_str());
    return 0;
}

int cmd_train(const CommonOpts& opts) {
    qcl::RunConfig cfg = resolve_config(opts);
    const fs::path out = cfg.out_dir;
    prepare_out_dir(out, opts.force);

    std::size_t num_classes = 0;
    auto splits = build_splits(cfg, num_classes);
    print_split_log(splits);
    const auto stats = qcl::standardize(splits);
    write_standardization(out / "standardization.json", stats);
    qcl::save_run_config(cfg, out / "run_config.json");

    auto result = qcl::train(cfg.train, splits);
    qcl::write_stats_csv(out / "stats.csv", result.stats);
    qcl::save_checkpoint(out / "best.ckpt", result.network);

    const auto test_report = qcl::evaluate(result.network, splits.test);
    write_eval_report(out / "eval_report.json", test_report, result.best_epoch);
    write_confusion_csv(out / "confusion.csv", test_report);

    std::printf("best epoch %zu (val F1 %.4f)\n", result.best_epoch, result.best_val_f1);
    std::printf("test: acc %.4f  f1 %.4f  mcc %.4f  micro_acc %.4f\n", test_report.acc,
                test_report.f1, test_report.mcc, test_report.micro_acc);
    std::printf("artifacts in %s\n", out.string().c_str());
    return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint) {
    qcl::RunConfig cfg = resolve_config(opts);
    const fs::path out = cfg.out_dir;
    prepare_out_dir(out, opts.force);

    std::size_t num_classes = 0;
    auto splits = build_splits(cfg, num_classes);
    const fs::path ckpt_path = checkpoint;
    auto stats = read_standardization(ckpt_path.parent_path() / "standardization.json");
    if (stats) {
        qcl::apply_standardize(splits.train, *stats);
        qcl::apply_standardize(splits.val, *stats);
        qcl::apply_standardize(splits.test, *stats);
    } else {
        qcl::standardize(splits);  // identical to training when config+seed match
    }

    qcl::Network net =
        qcl::load_checkpoint(ckpt_path, cfg.train.backbone, num_classes, cfg.train.embed_dim);

    const auto report = qcl::evaluate(net, splits.test);
    write_eval_report(out / "eval_report.json", report, std::nullopt);
    write_confusion_csv(out / "confusion.csv", report);

    // Projection-head features for external embedding plots.
    std::ofstream features(out / "features.csv");
    features << "label";
    for (std::size_t i = 0; i < net.heads.embed_dim; ++i) features << ",f" << i;
    features << "\n";
    features.precision(17);
    const std::size_t n = cfg.data.window;
    const std::size_t batch = 256;
    for (std::size_t begin = 0; begin < splits.test.size(); begin += batch) {
        const std::size_t end = std::min(splits.test.size(), begin + batch);
        std::vector<double> flat((end - begin) * n);
        for (std::size_t i = begin; i < end; ++i) {
            std::copy(splits.test[i].samples.begin(), splits.test[i].samples.end(),
                      flat.begin() + (i - begin) * n);
        }
        auto x = qcl::Tensor::make({end - begin, 1, n}, std::move(flat));
        auto z = net.heads.project(net.backbone.forward(x, qcl::Mode::eval));
        for (std::size_t i = begin; i < end; ++i) {
            features << splits.test[i].label;
            for (std::size_t d = 0; d < net.heads.embed_dim; ++d) {
                features << "," << z->data[(i - begin) * net.heads.embed_dim + d];
            }
            features << "\n";
        }
    }

    std::printf("test: acc %.4f  f1 %.4f  mcc %.4f (%zu samples)\n", report.acc, report.f1,
                report.mcc, splits.test.size());
    std::printf("artifacts in %s\n", out.string().c_str());
    return 0;
}

struct AutocorrOpts {
    std::string checkpoint;
    bool analytic = false;
    std::size_t channel = 0;
    std::size_t kernel = 7;
    std::string signal_path;
    std::size_t class_index = 1;
    std::size_t length = 0;
    double noise_std = 1.0;
    std::size_t trials = 1000;
};

int cmd_autocorr(const CommonOpts& opts, const AutocorrOpts& ao) {
    qcl::RunConfig cfg = resolve_config(opts);
    const fs::path out = cfg.out_dir;
    prepare_out_dir(out, opts.force);

    // Signal: explicit file, else a clean synthetic recording from the config.
    std::vector<double> signal;
    if (!ao.signal_path.empty()) {
        const fs::path p = ao.signal_path;
        signal = p.extension() == ".csv" ? qcl::read_csv_values(p) : qcl::read_raw_f32le(p);
    } else {
        if (cfg.data.classes.empty()) {
            throw qcl::ConfigError("autocorr: no --signal and no synthetic classes in config");
        }
        const std::size_t idx = std::min(ao.class_index, cfg.data.classes.size() - 1);
        qcl::SyntheticFaultModel model = cfg.data.classes[idx];
        model.noise_std = 0.0;  // clean reference; noise enters via --noise-std trials
        const std::size_t len = ao.length == 0 ? cfg.data.window : ao.length;
        signal = qcl::generate_signal(model, len,
                                      qcl::SeedStreams::from_root(cfg.seed).data);
    }

    // Single-channel quadratic layer: either the checkpoint's first-layer
    // slice or the analytic unit-weight stand-in whose lag weights are all 1.
    qcl::QuadraticConvLayer layer;
    if (ao.analytic) {
        layer = qcl::QuadraticConvLayer::create(qcl::Neuron::quadratic,
                                                qcl::QuadraticVariant::full, 1, 1, ao.kernel,
                                                1, ao.kernel / 2);
        std::fill(layer.w_r->data.begin(), layer.w_r->data.end(), 1.0);
        std::fill(layer.w_g->data.begin(), layer.w_g->data.end(), 0.5);
        std::fill(layer.w_b->data.begin(), layer.w_b->data.end(), 0.5);
    } else {
        if (cfg.train.backbone.neuron != qcl::Neuron::quadratic ||
            cfg.train.backbone.variant != qcl::QuadraticVariant::full) {
            throw qcl::UnsupportedError(
                "autocorr: decomposition needs a full quadratic first layer; degraded "
                "variants and conventional nets do not factor into autocorrelation + "
                "convolution");
        }
        if (cfg.train.backbone.input_channels != 1) {
            throw qcl::UnsupportedError(
                "autocorr: first layer is multi-channel; the decomposition is defined for "
                "single-channel slices only");
        }
        std::size_t num_classes = cfg.data.source == "synthetic" ? cfg.data.classes.size() : 0;
        if (num_classes == 0) {
            std::size_t nc = 0;
            build_splits(cfg, nc);
            num_classes = nc;
        }
        qcl::Network net = qcl::load_checkpoint(ao.checkpoint, cfg.train.backbone,
                                                num_classes, cfg.train.embed_dim);
        const auto& stem = net.backbone.stem;
        if (ao.channel >= stem.ch_out) {
            throw qcl::ConfigError("autocorr: --channel " + std::to_string(ao.channel) +
                                   " out of range, stem has " + std::to_string(stem.ch_out) +
                                   " output channels");
        }
        layer = qcl::QuadraticConvLayer::create(qcl::Neuron::quadratic,
                                                qcl::QuadraticVariant::full, 1, 1,
                                                stem.kernel, stem.stride, stem.padding);
        const std::size_t k = stem.kernel;
        for (std::size_t i = 0; i < k; ++i) {
            layer.w_r->data[i] = stem.w_r->data[ao.channel * k + i];
            layer.w_g->data[i] = stem.w_g->data[ao.channel * k + i];
            layer.w_b->data[i] = stem.w_b->data[ao.channel * k + i];
        }
        layer.b_r->data[0] = stem.b_r->data[ao.channel];
        layer.b_g->data[0] = stem.b_g->data[ao.channel];
        layer.c->data[0] = stem.c->data[ao.channel];
    }

    // Lag-domain view: Eq.-13 autocorrelation next to the weighted form.
    {
        const std::size_t n = signal.size();
        std::vector<std::vector<double>> unit(n);
        for (std::size_t tau = 0; tau < n; ++tau) unit[tau].assign(n - tau, 1.0);
        const auto r_xx = qcl::autocorrelation(signal);
        const auto r_unit = qcl::learnable_autocorrelation(signal, unit);
        std::ofstream lags(out / "lags.csv");
        lags << "lag,r_xx,r_unit\n";
        lags.precision(17);
        for (std::size_t tau = 0; tau < n; ++tau) {
            lags << tau << "," << r_xx[tau] << "," << r_unit[tau] << "\n";
        }
    }

    const auto dec = qcl::decompose_quadratic(layer, signal);
    const auto total = dec.total();
    auto xt = qcl::Tensor::make({1, 1, signal.size()}, signal);
    const auto preact = qcl::quadratic_conv(layer, xt);
    {
        std::ofstream csv(out / "decomposition.csv");
        csv << "position,autocorr_part,conv_part,constant,total,preact\n";
        csv.precision(17);
        for (std::size_t j = 0; j < total.size(); ++j) {
            csv << j << "," << dec.autocorr_part[j] << "," << dec.conv_part[j] << ","
                << dec.constant << "," << total[j] << "," << preact->data[j] << "\n";
        }
    }

    const auto report = qcl::noise_suppression_report(
        signal, ao.noise_std, ao.trials, qcl::SeedStreams::from_root(cfg.seed).augment);
    qcl::write_noise_report_csv(out / "noise_report.csv", report);

    std::printf("decomposed %zu positions (kernel %zu); lag-0 inflation %.3f vs n*sigma^2 "
                "%.3f\n",
                total.size(), layer.kernel, report.lag0_inflation, report.expected_lag0);
    std::printf("artifacts in %s\n", out.string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Class-weighted contrastive training of quadratic convolutional networks "
                 "for long-tailed 1-D signal classification"};
    app.require_subcommand(1);

    CommonOpts gen_opts, train_opts, eval_opts, ac_opts;
    std::string eval_checkpoint;
    AutocorrOpts ao;

    auto* gen = app.add_subcommand("gen-data", "Write synthetic recordings + manifest");
    add_common(gen, gen_opts, false);

    auto* tr = app.add_subcommand("train", "Train and evaluate the best checkpoint");
    add_common(tr, train_opts);

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint; export metrics + features");
    add_common(ev, eval_opts);
    ev->add_option("--checkpoint", eval_checkpoint, "Checkpoint file")->required();

    auto* ac = app.add_subcommand("autocorr",
                                  "Decompose a quadratic layer into learnable "
                                  "autocorrelation + convolution; noise report");
    add_common(ac, ac_opts, false);
    ac->add_option("--checkpoint", ao.checkpoint, "Checkpoint to slice the first layer from");
    ac->add_flag("--analytic", ao.analytic, "Use the unit-weight analytic layer instead");
    ac->add_option("--channel", ao.channel, "Stem output channel to slice (default 0)");
    ac->add_option("--kernel", ao.kernel, "Analytic layer kernel size (default 7)");
    ac->add_option("--signal", ao.signal_path, "Signal file (.csv or raw f32le)");
    ac->add_option("--class-index", ao.class_index, "Synthetic class for the clean signal");
    ac->add_option("--length", ao.length, "Synthetic signal length (default: window)");
    ac->add_option("--noise-std", ao.noise_std, "Noise sigma for the suppression report");
    ac->add_option("--trials", ao.trials, "Monte-Carlo trials (default 1000)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_opts);
        if (tr->parsed()) return cmd_train(train_opts);
        if (ev->parsed()) return cmd_eval(eval_opts, eval_checkpoint);
        if (ac->parsed()) {
            if (!ao.analytic && ao.checkpoint.empty()) {
                throw qcl::ConfigError("autocorr: pass --checkpoint PATH or --analytic");
            }
            return cmd_autocorr(ac_opts, ao);
        }
    } catch (const qcl::DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const qcl::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
