#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include "qcl/tensor.hpp"

namespace qcl {

// Embeddings of an augmented mini-batch (two views per raw sample, 2B rows)
// together with their class labels. Rows must be unit-norm.
struct ContrastiveBatch {
    TensorPtr embeddings;            // [2B, d], unit-norm rows (tolerance 1e-8)
    std::vector<std::size_t> labels; // length 2B

    void validate() const;
};

// Per-class prior probability vector; entries positive, sum to 1.
struct ClassPrior {
    std::vector<double> pi;

    void validate() const;
    static ClassPrior uniform(std::size_t num_classes);
    static ClassPrior from_labels(const std::vector<std::size_t>& labels,
                                  std::size_t num_classes);
};

// Supervised contrastive loss: sum over anchors of
//   -(1/|P_i|) sum_{p in P_i} log( exp(z_i.z_p / tau) / sum_{a in A_i} exp(z_i.z_a / tau) ).
// Anchors with no positives contribute 0. Log-sums are max-stabilized.
TensorPtr scl_loss(const ContrastiveBatch& batch, double tau);

// Reciprocal in-batch class counts: W_a = 1 / count(class a).
std::map<std::size_t, double> class_weights(const std::vector<std::size_t>& labels);

// Class-weighted contrastive loss (temperature-free):
//   -(1/|P_i|) sum_{p} log( exp(z_i.z_p) / sum_{a in A_i} W_a exp(z_i.z_a) )
// with W from class_weights over the batch labels.
TensorPtr crcl_loss(const ContrastiveBatch& batch);

// Same, with caller-supplied per-class denominator weights (reduction hook:
// all-ones weights recover scl_loss at tau = 1).
TensorPtr crcl_loss_weighted(const ContrastiveBatch& batch,
                             const std::map<std::size_t, double>& weights);

// Literal nested-loop evaluation of the class-weighted loss, no
// vectorization or stabilization. Independent verification path for small
// batches (2B <= 16).
double crcl_oracle(const ContrastiveBatch& batch);

// Logit-adjusted cross-entropy: each logit is shifted by tau * log(prior)
// before the softmax cross-entropy.
TensorPtr logit_adjusted_ce(const TensorPtr& logits, const std::vector<std::size_t>& labels,
                            const ClassPrior& prior, double tau = 1.0);

// Plain softmax cross-entropy (sum over the batch). Baseline objective and
// reduction check for logit_adjusted_ce with a uniform prior.
TensorPtr cross_entropy(const TensorPtr& logits, const std::vector<std::size_t>& labels);

// Composite objective: unweighted sum of the two branch losses.
TensorPtr composite_loss(const TensorPtr& crcl, const TensorPtr& lce);

namespace detail {

// Math cores without the unit-norm contract check, used by grad verification
// where coordinates are perturbed off the sphere.
TensorPtr scl_loss_unchecked(const TensorPtr& embeddings,
                             const std::vector<std::size_t>& labels, double tau);
TensorPtr crcl_loss_unchecked(const TensorPtr& embeddings,
                              const std::vector<std::size_t>& labels,
                              const std::map<std::size_t, double>& weights);

}  // namespace detail

}  // namespace qcl
