#include "qcl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace qcl {

void ContrastiveBatch::validate() const {
    if (!embeddings || embeddings->ndim() != 2) {
        throw DimensionError("contrastive batch: embeddings must be [2B, d]");
    }
    const std::size_t rows = embeddings->shape[0];
    const std::size_t d = embeddings->shape[1];
    if (labels.size() != rows) {
        throw DimensionError("contrastive batch: " + std::to_string(rows) +
                             " embedding rows but " + std::to_string(labels.size()) +
                             " labels");
    }
    for (std::size_t i = 0; i < rows; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double v = embeddings->data[i * d + j];
            sq += v * v;
        }
        if (std::abs(std::sqrt(sq) - 1.0) > 1e-8) {
            throw ContractError("contrastive batch: row " + std::to_string(i) +
                                " is not unit-norm (|z| = " + std::to_string(std::sqrt(sq)) +
                                ")");
        }
    }
}

void ClassPrior::validate() const {
    double sum = 0.0;
    for (std::size_t c = 0; c < pi.size(); ++c) {
        if (!(pi[c] > 0.0)) {
            throw ConfigError("class prior: entry " + std::to_string(c) +
                              " must be positive, got " + std::to_string(pi[c]));
        }
        sum += pi[c];
    }
    if (std::abs(sum - 1.0) > 1e-12) {
        throw ConfigError("class prior: entries sum to " + std::to_string(sum));
    }
}

ClassPrior ClassPrior::uniform(std::size_t num_classes) {
    ClassPrior p;
    p.pi.assign(num_classes, 1.0 / static_cast<double>(num_classes));
    return p;
}

ClassPrior ClassPrior::from_labels(const std::vector<std::size_t>& labels,
                                   std::size_t num_classes) {
    std::vector<double> counts(num_classes, 0.0);
    for (std::size_t y : labels) {
        if (y >= num_classes) {
            throw ConfigError("class prior: label " + std::to_string(y) +
                              " out of range for " + std::to_string(num_classes) + " classes");
        }
        counts[y] += 1.0;
    }
    ClassPrior p;
    p.pi.resize(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        p.pi[c] = counts[c] / static_cast<double>(labels.size());
    }
    return p;
}

std::map<std::size_t, double> class_weights(const std::vector<std::size_t>& labels) {
    if (labels.empty()) throw ConfigError("class_weights: empty batch");
    std::map<std::size_t, std::size_t> counts;
    for (std::size_t y : labels) counts[y]++;
    std::map<std::size_t, double> w;
    for (const auto& [cls, count] : counts) w[cls] = 1.0 / static_cast<double>(count);
    return w;
}

namespace {

// Shared forward/backward for the contrastive family. The loss is a function
// of the pairwise dot matrix S[i][j] = z_i . z_j; per-anchor terms are
//   -(1/(|P_i| tau)) sum_p S[i][p] + log sum_{a != i} w_a exp(S[i][a] / tau)
// and the gradient flows through dL/dS contracted with the embedding rows.
TensorPtr contrastive_core(const TensorPtr& z, const std::vector<std::size_t>& labels,
                           double tau, const std::vector<double>& sample_weight) {
    const std::size_t n = z->shape[0];
    const std::size_t d = z->shape[1];

    std::vector<double> dots(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            const double* zi = z->data.data() + i * d;
            const double* zj = z->data.data() + j * d;
            for (std::size_t t = 0; t < d; ++t) s += zi[t] * zj[t];
            dots[i * n + j] = s;
            dots[j * n + i] = s;
        }
    }

    double loss = 0.0;
    auto dl_ds = std::make_shared<std::vector<double>>(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t positives = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i && labels[j] == labels[i]) ++positives;
        }
        if (positives == 0) continue;  // undefined 1/|P_i|; anchor skipped

        // Max-stabilized log of the weighted denominator over A_i.
        double max_s = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < n; ++a) {
            if (a != i) max_s = std::max(max_s, dots[i * n + a] / tau);
        }
        double denom = 0.0;
        for (std::size_t a = 0; a < n; ++a) {
            if (a != i) denom += sample_weight[a] * std::exp(dots[i * n + a] / tau - max_s);
        }
        const double log_denom = max_s + std::log(denom);

        double pos_sum = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            if (p != i && labels[p] == labels[i]) pos_sum += dots[i * n + p] / tau;
        }
        const double inv_p = 1.0 / static_cast<double>(positives);
        loss += -inv_p * pos_sum + log_denom;

        for (std::size_t a = 0; a < n; ++a) {
            if (a == i) continue;
            const double soft =
                sample_weight[a] * std::exp(dots[i * n + a] / tau - max_s) / denom;
            double g = soft / tau;
            if (labels[a] == labels[i]) g -= inv_p / tau;
            (*dl_ds)[i * n + a] = g;
        }
    }

    auto out = Tensor::scalar(loss, z->requires_grad);
    if (z->requires_grad) {
        out->parents = {z};
        Tensor* og = out.get();
        Tensor* pz = z.get();
        out->backward_fn = [og, pz, dl_ds, n, d]() {
            pz->ensure_grad();
            const double upstream = og->grad[0];
            const auto& G = *dl_ds;
            for (std::size_t i = 0; i < n; ++i) {
                double* gi = pz->grad.data() + i * d;
                for (std::size_t j = 0; j < n; ++j) {
                    const double coeff = (G[i * n + j] + G[j * n + i]) * upstream;
                    if (coeff == 0.0) continue;
                    const double* zj = pz->data.data() + j * d;
                    for (std::size_t t = 0; t < d; ++t) gi[t] += coeff * zj[t];
                }
            }
        };
    }
    return out;
}

std::vector<double> per_sample_weights(const std::vector<std::size_t>& labels,
                                       const std::map<std::size_t, double>& weights) {
    std::vector<double> w(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto it = weights.find(labels[i]);
        if (it == weights.end()) {
            throw ConfigError("crcl: no weight for class " + std::to_string(labels[i]));
        }
        w[i] = it->second;
    }
    return w;
}

}  // namespace

namespace detail {

TensorPtr scl_loss_unchecked(const TensorPtr& embeddings,
                             const std::vector<std::size_t>& labels, double tau) {
    return contrastive_core(embeddings, labels, tau,
                            std::vector<double>(labels.size(), 1.0));
}

TensorPtr crcl_loss_unchecked(const TensorPtr& embeddings,
                              const std::vector<std::size_t>& labels,
                              const std::map<std::size_t, double>& weights) {
    return contrastive_core(embeddings, labels, 1.0, per_sample_weights(labels, weights));
}

}  // namespace detail

TensorPtr scl_loss(const ContrastiveBatch& batch, double tau) {
    if (!(tau > 0.0)) throw ConfigError("scl_loss: tau must be positive");
    batch.validate();
    return detail::scl_loss_unchecked(batch.embeddings, batch.labels, tau);
}

TensorPtr crcl_loss(const ContrastiveBatch& batch) {
    batch.validate();
    return detail::crcl_loss_unchecked(batch.embeddings, batch.labels,
                                       class_weights(batch.labels));
}

TensorPtr crcl_loss_weighted(const ContrastiveBatch& batch,
                             const std::map<std::size_t, double>& weights) {
    batch.validate();
    return detail::crcl_loss_unchecked(batch.embeddings, batch.labels, weights);
}

double crcl_oracle(const ContrastiveBatch& batch) {
    batch.validate();
    const std::size_t n = batch.labels.size();
    if (n > 16) throw ConfigError("crcl_oracle: intended for small batches (2B <= 16)");
    const std::size_t d = batch.embeddings->shape[1];
    const auto& z = batch.embeddings->data;
    auto weights = class_weights(batch.labels);

    auto dot = [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t t = 0; t < d; ++t) s += z[i * d + t] * z[j * d + t];
        return s;
    };

    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> positives;
        for (std::size_t p = 0; p < n; ++p) {
            if (p != i && batch.labels[p] == batch.labels[i]) positives.push_back(p);
        }
        if (positives.empty()) continue;
        double anchor = 0.0;
        for (std::size_t p : positives) {
            double denominator = 0.0;
            for (std::size_t a = 0; a < n; ++a) {
                if (a != i) denominator += weights.at(batch.labels[a]) * std::exp(dot(i, a));
            }
            anchor += std::log(std::exp(dot(i, p)) / denominator);
        }
        total += -anchor / static_cast<double>(positives.size());
    }
    return total;
}

namespace {

TensorPtr softmax_ce_core(const TensorPtr& logits, const std::vector<std::size_t>& labels,
                          const std::vector<double>& class_shift) {
    if (logits->ndim() != 2) {
        throw DimensionError("cross entropy: logits must be [batch, C], got " +
                             shape_str(logits->shape));
    }
    const std::size_t batch = logits->shape[0];
    const std::size_t C = logits->shape[1];
    if (labels.size() != batch) {
        throw DimensionError("cross entropy: " + std::to_string(batch) +
                             " logit rows but " + std::to_string(labels.size()) + " labels");
    }
    for (std::size_t y : labels) {
        if (y >= C) {
            throw ConfigError("cross entropy: label " + std::to_string(y) +
                              " out of range for " + std::to_string(C) + " classes");
        }
    }

    double loss = 0.0;
    auto softmax = std::make_shared<std::vector<double>>(batch * C);
    for (std::size_t j = 0; j < batch; ++j) {
        const double* f = logits->data.data() + j * C;
        double max_g = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < C; ++c) max_g = std::max(max_g, f[c] + class_shift[c]);
        double denom = 0.0;
        for (std::size_t c = 0; c < C; ++c) denom += std::exp(f[c] + class_shift[c] - max_g);
        const double log_denom = max_g + std::log(denom);
        loss += log_denom - (f[labels[j]] + class_shift[labels[j]]);
        for (std::size_t c = 0; c < C; ++c) {
            (*softmax)[j * C + c] = std::exp(f[c] + class_shift[c] - max_g) / denom;
        }
    }

    auto out = Tensor::scalar(loss, logits->requires_grad);
    if (logits->requires_grad) {
        out->parents = {logits};
        Tensor* og = out.get();
        Tensor* pf = logits.get();
        auto labels_s = std::make_shared<std::vector<std::size_t>>(labels);
        out->backward_fn = [og, pf, softmax, labels_s, batch, C]() {
            pf->ensure_grad();
            const double upstream = og->grad[0];
            for (std::size_t j = 0; j < batch; ++j) {
                double* g = pf->grad.data() + j * C;
                for (std::size_t c = 0; c < C; ++c) {
                    double v = (*softmax)[j * C + c];
                    if (c == (*labels_s)[j]) v -= 1.0;
                    g[c] += upstream * v;
                }
            }
        };
    }
    return out;
}

}  // namespace

TensorPtr logit_adjusted_ce(const TensorPtr& logits, const std::vector<std::size_t>& labels,
                            const ClassPrior& prior, double tau) {
    prior.validate();
    if (logits->ndim() == 2 && prior.pi.size() != logits->shape[1]) {
        throw DimensionError("logit_adjusted_ce: prior has " +
                             std::to_string(prior.pi.size()) + " classes, logits have " +
                             std::to_string(logits->shape[1]));
    }
    std::vector<double> shift(prior.pi.size());
    for (std::size_t c = 0; c < prior.pi.size(); ++c) shift[c] = tau * std::log(prior.pi[c]);
    return softmax_ce_core(logits, labels, shift);
}

TensorPtr cross_entropy(const TensorPtr& logits, const std::vector<std::size_t>& labels) {
    const std::size_t C = logits->ndim() == 2 ? logits->shape[1] : 0;
    return softmax_ce_core(logits, labels, std::vector<double>(C, 0.0));
}

TensorPtr composite_loss(const TensorPtr& crcl, const TensorPtr& lce) {
    return add(crcl, lce);
}

}  // namespace qcl
