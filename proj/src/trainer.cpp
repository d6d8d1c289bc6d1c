#include "qcl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace qcl {

std::string to_string(Objective o) {
    return o == Objective::composite ? "composite" : "ce_only";
}

Objective objective_from_string(const std::string& s) {
    if (s == "composite") return Objective::composite;
    if (s == "ce_only") return Objective::ce_only;
    throw ConfigError("unknown objective \"" + s + "\"");
}

std::string to_string(LrDirection d) {
    return d == LrDirection::quadratic_slower ? "quadratic_slower" : "linear_slower";
}

LrDirection lr_direction_from_string(const std::string& s) {
    if (s == "quadratic_slower") return LrDirection::quadratic_slower;
    if (s == "linear_slower") return LrDirection::linear_slower;
    throw ConfigError("unknown lr direction \"" + s + "\"");
}

void TrainConfig::validate() const {
    if (batch_size < 2) throw ConfigError("train config: batch_size must be >= 2");
    if (epochs == 0) throw ConfigError("train config: epochs must be positive");
    if (!(base_lr > 0.0)) throw ConfigError("train config: base_lr must be positive");
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw ConfigError("train config: alpha must satisfy 0 < alpha < 1, got " +
                          std::to_string(alpha));
    }
    backbone.validate();
}

double cosine_lr(double base, std::size_t epoch, std::size_t total) {
    if (total == 0 || epoch > total) {
        throw ConfigError("cosine_lr: need 0 <= epoch <= total, got " +
                          std::to_string(epoch) + "/" + std::to_string(total));
    }
    constexpr double pi = 3.14159265358979323846;
    return base * 0.5 *
           (1.0 + std::cos(pi * static_cast<double>(epoch) / static_cast<double>(total)));
}

namespace {

void step_group(ParamGroup& group, double lr) {
    for (const auto& p : group.members) {
        if (p->grad.size() != p->data.size()) {
            throw ContractError("sgd_step: parameter with unpopulated gradient (group " +
                                std::string(group.tag == GroupTag::linear ? "linear"
                                                                          : "quadratic") +
                                ")");
        }
        for (std::size_t i = 0; i < p->data.size(); ++i) p->data[i] -= lr * p->grad[i];
        std::fill(p->grad.begin(), p->grad.end(), 0.0);
    }
}

}  // namespace

void sgd_step(ParamGroups& groups, double lr_linear, double lr_quadratic) {
    step_group(groups.linear, lr_linear);
    step_group(groups.quadratic, lr_quadratic);
}

EvalReport metrics_from_confusion(const std::vector<std::vector<std::size_t>>& confusion) {
    const std::size_t C = confusion.size();
    if (C == 0) throw ConfigError("metrics: empty confusion matrix");
    for (const auto& row : confusion) {
        if (row.size() != C) throw DimensionError("metrics: confusion matrix must be square");
    }

    EvalReport report;
    report.confusion = confusion;
    std::vector<double> tp(C, 0.0), fp(C, 0.0), fn(C, 0.0);
    std::vector<double> predicted(C, 0.0), truth(C, 0.0);
    double correct = 0.0, total = 0.0;
    for (std::size_t t = 0; t < C; ++t) {
        for (std::size_t p = 0; p < C; ++p) {
            const double v = static_cast<double>(confusion[t][p]);
            total += v;
            truth[t] += v;
            predicted[p] += v;
            if (t == p) {
                tp[t] += v;
                correct += v;
            } else {
                fn[t] += v;
                fp[p] += v;
            }
        }
    }
    if (total == 0.0) throw ConfigError("metrics: confusion matrix has no samples");

    double acc = 0.0, f1 = 0.0;
    for (std::size_t i = 0; i < C; ++i) {
        const double prec_den = tp[i] + fp[i];
        acc += prec_den > 0.0 ? tp[i] / prec_den : 0.0;
        const double f1_den = 2.0 * tp[i] + fp[i] + fn[i];
        f1 += f1_den > 0.0 ? 2.0 * tp[i] / f1_den : 0.0;
    }
    report.acc = acc / static_cast<double>(C);
    report.f1 = f1 / static_cast<double>(C);
    report.micro_acc = correct / total;

    double pt = 0.0, pp = 0.0, tt = 0.0;
    for (std::size_t i = 0; i < C; ++i) {
        pt += predicted[i] * truth[i];
        pp += predicted[i] * predicted[i];
        tt += truth[i] * truth[i];
    }
    const double num = correct * total - pt;
    const double den = std::sqrt((total * total - pp) * (total * total - tt));
    report.mcc = den > 0.0 ? num / den : 0.0;
    return report;
}

EvalReport evaluate(Network& net, const std::vector<LabeledWindow>& split,
                    std::size_t eval_batch) {
    if (split.empty()) throw ConfigError("evaluate: empty split");
    const std::size_t C = net.num_classes;
    const std::size_t n = split[0].samples.size();
    std::vector<std::vector<std::size_t>> confusion(C, std::vector<std::size_t>(C, 0));

    for (std::size_t begin = 0; begin < split.size(); begin += eval_batch) {
        const std::size_t end = std::min(split.size(), begin + eval_batch);
        const std::size_t B = end - begin;
        std::vector<double> flat(B * n);
        for (std::size_t i = 0; i < B; ++i) {
            const auto& w = split[begin + i];
            if (w.samples.size() != n) {
                throw DimensionError("evaluate: window length mismatch inside split");
            }
            if (w.label >= C) {
                throw ConfigError("evaluate: label " + std::to_string(w.label) +
                                  " out of range for " + std::to_string(C) + " classes");
            }
            std::copy(w.samples.begin(), w.samples.end(), flat.begin() + i * n);
        }
        auto x = Tensor::make({B, 1, n}, std::move(flat));
        auto logits = net.heads.classify(net.backbone.forward(x, Mode::eval));
        for (std::size_t i = 0; i < B; ++i) {
            const double* row = logits->data.data() + i * C;
            std::size_t argmax = 0;
            for (std::size_t cls = 1; cls < C; ++cls) {
                if (row[cls] > row[argmax]) argmax = cls;
            }
            confusion[split[begin + i].label][argmax]++;
        }
    }
    return metrics_from_confusion(confusion);
}

namespace {

TensorPtr windows_to_tensor(const std::vector<const LabeledWindow*>& windows, std::size_t n) {
    std::vector<double> flat(windows.size() * n);
    for (std::size_t i = 0; i < windows.size(); ++i) {
        std::copy(windows[i]->samples.begin(), windows[i]->samples.end(),
                  flat.begin() + i * n);
    }
    return Tensor::make({windows.size(), 1, n}, std::move(flat));
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const DatasetSplits& splits) {
    cfg.validate();
    if (splits.train.empty() || splits.val.empty()) {
        throw ConfigError("train: train and val splits must be non-empty");
    }
    const std::size_t n = splits.train[0].samples.size();
    if (n != cfg.backbone.input_len) {
        throw ConfigError("train: window length " + std::to_string(n) +
                          " does not match backbone input_len " +
                          std::to_string(cfg.backbone.input_len));
    }
    const std::size_t C = splits.num_classes;

    Rng root(cfg.seed);
    const std::uint64_t init_seed = root.split(0).next_u64();
    Rng order_rng = root.split(1);
    Rng augment_rng = root.split(2);

    TrainResult result;
    result.network = Network::build(cfg.backbone, C, init_seed, cfg.embed_dim);
    Network& net = result.network;
    ParamGroups groups = net.param_groups();

    std::vector<std::size_t> train_labels;
    train_labels.reserve(splits.train.size());
    for (const auto& w : splits.train) train_labels.push_back(w.label);
    result.prior = ClassPrior::from_labels(train_labels, C);
    result.prior.validate();

    const std::size_t train_size = splits.train.size();
    const std::size_t steps_per_epoch = (train_size + cfg.batch_size - 1) / cfg.batch_size;
    std::vector<std::size_t> order(train_size);
    for (std::size_t i = 0; i < train_size; ++i) order[i] = i;

    std::vector<std::vector<double>> best_state;
    result.best_val_f1 = -1.0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cosine_lr(cfg.base_lr, epoch, cfg.epochs);
        double lr_linear = lr, lr_quadratic = cfg.alpha * lr;
        if (cfg.lr_direction == LrDirection::linear_slower) std::swap(lr_linear, lr_quadratic);
        if (cfg.freeze_quadratic) lr_quadratic = 0.0;

        order_rng.shuffle(order);
        double epoch_crcl = 0.0, epoch_lce = 0.0;

        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            std::vector<const LabeledWindow*> batch(cfg.batch_size);
            std::vector<std::size_t> labels(cfg.batch_size);
            for (std::size_t i = 0; i < cfg.batch_size; ++i) {
                // The final slice wraps around the shuffled order so every
                // step carries a full batch.
                const auto& w = splits.train[order[(step * cfg.batch_size + i) % train_size]];
                batch[i] = &w;
                labels[i] = w.label;
            }
            auto raw = windows_to_tensor(batch, n);

            double step_crcl = 0.0, step_lce = 0.0;
            TensorPtr loss;
            try {
                if (cfg.objective == Objective::composite) {
                    std::vector<double> view_flat(2 * cfg.batch_size * n);
                    std::vector<std::size_t> view_labels(2 * cfg.batch_size);
                    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
                        auto [v1, v2] =
                            make_view_pair(batch[i]->samples, cfg.augment, augment_rng);
                        std::copy(v1.begin(), v1.end(), view_flat.begin() + (2 * i) * n);
                        std::copy(v2.begin(), v2.end(), view_flat.begin() + (2 * i + 1) * n);
                        view_labels[2 * i] = labels[i];
                        view_labels[2 * i + 1] = labels[i];
                    }
                    auto views =
                        Tensor::make({2 * cfg.batch_size, 1, n}, std::move(view_flat));
                    auto out = forward_two_branch(net, raw, views, Mode::train);
                    ContrastiveBatch cb{out.embeddings, view_labels};
                    auto crcl = crcl_loss(cb);
                    auto lce = logit_adjusted_ce(out.logits, labels, result.prior, cfg.tau_lc);
                    step_crcl = crcl->value();
                    step_lce = lce->value();
                    loss = composite_loss(crcl, lce);
                } else {
                    auto logits = net.heads.classify(net.backbone.forward(raw, Mode::train));
                    auto lce = cross_entropy(logits, labels);
                    step_lce = lce->value();
                    loss = lce;
                }
            } catch (const ContractError& e) {
                // Overflowed activations surface as broken embedding norms.
                throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                                      " step " + std::to_string(step) + ": " + e.what());
            } catch (const DegenerateInputError& e) {
                throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                                      " step " + std::to_string(step) + ": " + e.what());
            } catch (const NumericError& e) {
                throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                                      " step " + std::to_string(step) + ": " + e.what());
            }

            if (!std::isfinite(loss->value())) {
                std::ostringstream os;
                os << "training diverged: non-finite loss at epoch " << epoch << " step "
                   << step << " (crcl=" << step_crcl << ", lce=" << step_lce
                   << ", lr_linear=" << lr_linear << ", alpha=" << cfg.alpha << ")";
                throw DivergenceError(os.str());
            }

            groups.zero_grad();
            loss->backward();
            sgd_step(groups, lr_linear, lr_quadratic);
            epoch_crcl += step_crcl;
            epoch_lce += step_lce;
        }

        EvalReport val = evaluate(net, splits.val);
        EpochStats stats;
        stats.epoch = epoch;
        stats.lr_linear = lr_linear;
        stats.lr_quadratic = lr_quadratic;
        stats.train_crcl = epoch_crcl / static_cast<double>(steps_per_epoch);
        stats.train_lce = epoch_lce / static_cast<double>(steps_per_epoch);
        stats.val_acc = val.acc;
        stats.val_f1 = val.f1;
        stats.val_mcc = val.mcc;
        result.stats.push_back(stats);

        if (val.f1 > result.best_val_f1) {
            result.best_val_f1 = val.f1;
            result.best_epoch = epoch;
            best_state = snapshot_state(net);
        }
    }

    restore_state(net, best_state);
    return result;
}

void write_stats_csv(const std::filesystem::path& path,
                     const std::vector<EpochStats>& stats) {
    std::ofstream out(path);
    if (!out) throw IngestError("stats csv: cannot write " + path.string());
    out << "epoch,lr_linear,lr_quadratic,train_crcl,train_lce,val_acc,val_f1,val_mcc\n";
    out.precision(17);
    for (const auto& s : stats) {
        out << s.epoch << "," << s.lr_linear << "," << s.lr_quadratic << "," << s.train_crcl
            << "," << s.train_lce << "," << s.val_acc << "," << s.val_f1 << "," << s.val_mcc
            << "\n";
    }
}

}  // namespace qcl
