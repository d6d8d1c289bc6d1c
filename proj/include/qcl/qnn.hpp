#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "qcl/tensor.hpp"

namespace qcl {

enum class Neuron { quadratic, conventional };

// Degraded neuron forms for the ablation harness: no_power drops the
// squared-input term, single_inner drops the second inner-product factor.
enum class QuadraticVariant { full, no_power, single_inner };

std::string to_string(Neuron n);
std::string to_string(QuadraticVariant v);
Neuron neuron_from_string(const std::string& s);
QuadraticVariant variant_from_string(const std::string& s);

// One convolutional unit. A quadratic neuron computes the pre-activation
//   (x * w_r + b_r) . (x * w_g + b_g) + (x . x) * w_b + c
// (. elementwise, * translation-only convolution); a conventional neuron
// keeps only x * w_r + b_r. Kernels are [ch_out, ch_in, k], biases [ch_out].
struct QuadraticConvLayer {
    Neuron neuron = Neuron::quadratic;
    QuadraticVariant variant = QuadraticVariant::full;
    std::size_t ch_in = 1, ch_out = 1, kernel = 1;
    std::size_t stride = 1, padding = 0;
    TensorPtr w_r, b_r;          // first-order group
    TensorPtr w_g, b_g, w_b, c;  // quadratic group; absent entries stay null

    static QuadraticConvLayer create(Neuron neuron, QuadraticVariant variant,
                                     std::size_t ch_in, std::size_t ch_out,
                                     std::size_t kernel, std::size_t stride,
                                     std::size_t padding);

    // Pre-activation output; block wiring applies BN/ReLU afterwards.
    TensorPtr forward(const TensorPtr& x) const;

    void collect_params(ParamGroups& groups) const;
    void collect_named(const std::string& prefix,
                       std::vector<std::pair<std::string, TensorPtr>>& out) const;
};

// Pre-activation of the quadratic (or degraded) convolution.
TensorPtr quadratic_conv(const QuadraticConvLayer& layer, const TensorPtr& x);

struct BatchNormLayer {
    TensorPtr gamma, beta;
    BatchNormState stats;

    static BatchNormLayer create(std::size_t channels);
    TensorPtr forward(const TensorPtr& x, Mode mode);
};

struct DenseLayer {
    TensorPtr W, b;

    static DenseLayer create(std::size_t d_out, std::size_t d_in);
    TensorPtr forward(const TensorPtr& x) const;
};

// Residual block of two conv units. Equal in/out channels use an identity
// shortcut at stride 1; widening blocks halve the length with stride 2 in
// the first conv and project the shortcut through conv(k=1, stride 2) + BN.
struct QResBlock {
    QuadraticConvLayer conv1, conv2;
    BatchNormLayer bn1, bn2;
    bool projecting = false;
    QuadraticConvLayer proj;
    BatchNormLayer proj_bn;

    TensorPtr forward(const TensorPtr& x, Mode mode);
};

struct BackboneConfig {
    Neuron neuron = Neuron::quadratic;
    QuadraticVariant variant = QuadraticVariant::full;
    std::size_t input_len = 2048;
    std::size_t input_channels = 1;
    std::size_t n_blocks = 4;
    std::size_t stem_kernel = 7;
    std::size_t block_kernel = 3;
    // channels[0] is the stem width, channels[1..] one entry per block
    std::vector<std::size_t> channels = {16, 16, 32, 64, 128};

    void validate() const;
    std::size_t feature_dim() const { return channels.back(); }
};

// Stem (conv s2 -> BN -> ReLU -> max-pool k3 s2 p1) followed by the residual
// blocks, global average pool, and flatten.
class Backbone {
public:
    BackboneConfig cfg;
    QuadraticConvLayer stem;
    BatchNormLayer stem_bn;
    std::vector<QResBlock> blocks;

    static Backbone build(const BackboneConfig& cfg);
    // [batch, ch_in, input_len] -> [batch, feature_dim]
    TensorPtr forward(const TensorPtr& x, Mode mode);

    void collect_params(ParamGroups& groups) const;
    void collect_named(std::vector<std::pair<std::string, TensorPtr>>& out) const;
};

// Projection head (dense -> ReLU -> dense -> L2 normalize) for the
// contrastive branch and a single affine classifier for the logit branch.
struct Heads {
    DenseLayer proj1, proj2;
    DenseLayer classifier;
    std::size_t embed_dim = 64;

    static Heads create(std::size_t feature_dim, std::size_t num_classes,
                        std::size_t embed_dim = 64);
    TensorPtr project(const TensorPtr& features) const;
    TensorPtr classify(const TensorPtr& features) const;
};

struct Network {
    Backbone backbone;
    Heads heads;
    std::size_t num_classes = 0;

    // Builds and relinear-initializes the full two-branch network.
    static Network build(const BackboneConfig& cfg, std::size_t num_classes,
                         std::uint64_t seed, std::size_t embed_dim = 64);

    ParamGroups param_groups() const;
    std::vector<std::pair<std::string, TensorPtr>> named_params() const;
};

// First-order parameters {w_r, b_r} and dense heads get fan-in-scaled
// Gaussians; the quadratic group starts at the degenerate state
// {w_g = 0, b_g = 1, w_b = 0, c = 0} so the net initially equals its
// conventional counterpart. BN starts at gamma = 1, beta = 0.
void relinear_init(Network& net, std::uint64_t seed);

// Conventional twin sharing the quadratic net's {w_r, b_r}, BN parameters,
// running stats, and head weights.
Network make_conventional_copy(const Network& net);

struct TwoBranchOutput {
    TensorPtr logits;      // [B, C] from the raw batch
    TensorPtr embeddings;  // [2B, embed_dim], unit-norm rows, from the views
};

// Shared backbone, two branches: classifier sees the raw windows,
// projection head sees the augmented views.
TwoBranchOutput forward_two_branch(Network& net, const TensorPtr& raw_batch,
                                   const TensorPtr& view_batch, Mode mode);

// Deep copy / restore of every trainable value and BN running stat.
std::vector<std::vector<double>> snapshot_state(const Network& net);
void restore_state(Network& net, const std::vector<std::vector<double>>& snap);

}  // namespace qcl
