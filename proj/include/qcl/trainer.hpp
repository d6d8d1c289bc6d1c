#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qcl/data.hpp"
#include "qcl/losses.hpp"
#include "qcl/qnn.hpp"

namespace qcl {

enum class Objective { composite, ce_only };

// Which parameter group trains at the reduced rate alpha * base_lr. The
// default slows the quadratic terms; the alternative direction is kept
// selectable for comparison runs.
enum class LrDirection { quadratic_slower, linear_slower };

std::string to_string(Objective o);
Objective objective_from_string(const std::string& s);
std::string to_string(LrDirection d);
LrDirection lr_direction_from_string(const std::string& s);

struct TrainConfig {
    std::size_t batch_size = 64;
    std::size_t epochs = 200;
    double base_lr = 0.1;
    double alpha = 1e-5;  // gamma_q = alpha * gamma_l
    double tau_lc = 1.0;
    std::uint64_t seed = 0;
    Objective objective = Objective::composite;
    LrDirection lr_direction = LrDirection::quadratic_slower;
    bool freeze_quadratic = false;  // alpha -> 0 limit hook
    std::size_t embed_dim = 64;
    BackboneConfig backbone;
    AugmentConfig augment;

    void validate() const;
};

// Cosine annealing: base * 0.5 * (1 + cos(pi t / T)).
double cosine_lr(double base, std::size_t epoch, std::size_t total);

// p <- p - lr_group * grad(p), rate chosen by group tag; grads cleared after
// the step. Parameters with no populated gradient are a contract violation.
void sgd_step(ParamGroups& groups, double lr_linear, double lr_quadratic);

struct EvalReport {
    std::vector<std::vector<std::size_t>> confusion;  // rows true, cols predicted
    double acc = 0.0;       // macro-averaged precision
    double f1 = 0.0;        // macro F1
    double mcc = 0.0;
    double micro_acc = 0.0; // plain fraction correct, logged for sanity
};

// Metrics from a confusion matrix; per-class 0/0 terms and a zero MCC
// denominator resolve to 0.
EvalReport metrics_from_confusion(const std::vector<std::vector<std::size_t>>& confusion);

EvalReport evaluate(Network& net, const std::vector<LabeledWindow>& split,
                    std::size_t eval_batch = 256);

struct EpochStats {
    std::size_t epoch = 0;
    double lr_linear = 0.0;
    double lr_quadratic = 0.0;
    double train_crcl = 0.0;
    double train_lce = 0.0;
    double val_acc = 0.0;
    double val_f1 = 0.0;
    double val_mcc = 0.0;
};

struct TrainResult {
    Network network;  // best validation macro-F1 parameters restored
    std::vector<EpochStats> stats;
    std::size_t best_epoch = 0;
    double best_val_f1 = 0.0;
    ClassPrior prior;
};

// One-stage training: every step samples a raw batch from the long-tailed
// train split, builds two augmented views per sample, and descends the
// composite objective (or plain CE for the baseline) with two-group
// cosine-annealed rates. Non-finite loss aborts.
TrainResult train(const TrainConfig& cfg, const DatasetSplits& splits);

void write_stats_csv(const std::filesystem::path& path, const std::vector<EpochStats>& stats);

}  // namespace qcl
