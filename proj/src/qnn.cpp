#include "qcl/qnn.hpp"

#include <cmath>

#include "qcl/rng.hpp"

namespace qcl {

std::string to_string(Neuron n) {
    return n == Neuron::quadratic ? "quadratic" : "conventional";
}

std::string to_string(QuadraticVariant v) {
    switch (v) {
        case QuadraticVariant::full: return "full";
        case QuadraticVariant::no_power: return "no_power";
        default: return "single_inner";
    }
}

Neuron neuron_from_string(const std::string& s) {
    if (s == "quadratic") return Neuron::quadratic;
    if (s == "conventional") return Neuron::conventional;
    throw ConfigError("unknown neuron type \"" + s + "\"");
}

QuadraticVariant variant_from_string(const std::string& s) {
    if (s == "full") return QuadraticVariant::full;
    if (s == "no_power") return QuadraticVariant::no_power;
    if (s == "single_inner") return QuadraticVariant::single_inner;
    throw ConfigError("unknown quadratic variant \"" + s + "\"");
}

QuadraticConvLayer QuadraticConvLayer::create(Neuron neuron, QuadraticVariant variant,
                                              std::size_t ch_in, std::size_t ch_out,
                                              std::size_t kernel, std::size_t stride,
                                              std::size_t padding) {
    QuadraticConvLayer layer;
    layer.neuron = neuron;
    layer.variant = variant;
    layer.ch_in = ch_in;
    layer.ch_out = ch_out;
    layer.kernel = kernel;
    layer.stride = stride;
    layer.padding = padding;
    layer.w_r = Tensor::zeros({ch_out, ch_in, kernel}, true);
    layer.b_r = Tensor::zeros({ch_out}, true);
    if (neuron == Neuron::quadratic) {
        const bool has_inner = variant != QuadraticVariant::single_inner;
        const bool has_power = variant != QuadraticVariant::no_power;
        if (has_inner) {
            layer.w_g = Tensor::zeros({ch_out, ch_in, kernel}, true);
            layer.b_g = Tensor::zeros({ch_out}, true);
        }
        if (has_power) {
            layer.w_b = Tensor::zeros({ch_out, ch_in, kernel}, true);
            layer.c = Tensor::zeros({ch_out}, true);
        }
    }
    return layer;
}

TensorPtr QuadraticConvLayer::forward(const TensorPtr& x) const {
    auto r = conv1d(x, w_r, b_r, stride, padding);
    if (neuron == Neuron::conventional) return r;
    switch (variant) {
        case QuadraticVariant::full:
            return add(hadamard(r, conv1d(x, w_g, b_g, stride, padding)),
                       conv1d(hadamard(x, x), w_b, c, stride, padding));
        case QuadraticVariant::no_power:
            return hadamard(r, conv1d(x, w_g, b_g, stride, padding));
        default:  // single_inner
            return add(r, conv1d(hadamard(x, x), w_b, c, stride, padding));
    }
}

void QuadraticConvLayer::collect_params(ParamGroups& groups) const {
    groups.linear.members.push_back(w_r);
    groups.linear.members.push_back(b_r);
    for (const auto& p : {w_g, b_g, w_b, c}) {
        if (p) groups.quadratic.members.push_back(p);
    }
}

void QuadraticConvLayer::collect_named(
    const std::string& prefix, std::vector<std::pair<std::string, TensorPtr>>& out) const {
    out.emplace_back(prefix + ".w_r", w_r);
    out.emplace_back(prefix + ".b_r", b_r);
    if (w_g) out.emplace_back(prefix + ".w_g", w_g);
    if (b_g) out.emplace_back(prefix + ".b_g", b_g);
    if (w_b) out.emplace_back(prefix + ".w_b", w_b);
    if (c) out.emplace_back(prefix + ".c", c);
}

TensorPtr quadratic_conv(const QuadraticConvLayer& layer, const TensorPtr& x) {
    return layer.forward(x);
}

BatchNormLayer BatchNormLayer::create(std::size_t channels) {
    BatchNormLayer bn;
    bn.gamma = Tensor::full({channels}, 1.0, true);
    bn.beta = Tensor::zeros({channels}, true);
    bn.stats = BatchNormState(channels);
    return bn;
}

TensorPtr BatchNormLayer::forward(const TensorPtr& x, Mode mode) {
    return batch_norm1d(x, gamma, beta, stats, mode);
}

DenseLayer DenseLayer::create(std::size_t d_out, std::size_t d_in) {
    DenseLayer d;
    d.W = Tensor::zeros({d_out, d_in}, true);
    d.b = Tensor::zeros({d_out}, true);
    return d;
}

TensorPtr DenseLayer::forward(const TensorPtr& x) const { return dense(x, W, b); }

TensorPtr QResBlock::forward(const TensorPtr& x, Mode mode) {
    auto h = relu(bn1.forward(conv1.forward(x), mode));
    h = bn2.forward(conv2.forward(h), mode);
    auto shortcut = projecting ? proj_bn.forward(proj.forward(x), mode) : x;
    return relu(add(h, shortcut));
}

void BackboneConfig::validate() const {
    if (n_blocks == 0) throw ConfigError("backbone: need at least one block");
    if (channels.size() != n_blocks + 1) {
        throw ConfigError("backbone: channel progression has " +
                          std::to_string(channels.size()) + " entries, expected n_blocks+1 = " +
                          std::to_string(n_blocks + 1));
    }
    for (std::size_t c : channels) {
        if (c == 0) throw ConfigError("backbone: zero-width channel entry");
    }
    if (stem_kernel % 2 == 0 || block_kernel % 2 == 0) {
        throw ConfigError("backbone: kernel sizes must be odd for symmetric padding");
    }
    if (input_len == 0 || input_channels == 0) {
        throw ConfigError("backbone: input_len and input_channels must be positive");
    }
}

Backbone Backbone::build(const BackboneConfig& cfg) {
    cfg.validate();
    Backbone net;
    net.cfg = cfg;
    net.stem = QuadraticConvLayer::create(cfg.neuron, cfg.variant, cfg.input_channels,
                                          cfg.channels[0], cfg.stem_kernel, 2,
                                          cfg.stem_kernel / 2);
    net.stem_bn = BatchNormLayer::create(cfg.channels[0]);
    for (std::size_t i = 0; i < cfg.n_blocks; ++i) {
        const std::size_t in = cfg.channels[i];
        const std::size_t out = cfg.channels[i + 1];
        QResBlock block;
        block.projecting = in != out;
        const std::size_t stride = block.projecting ? 2 : 1;
        block.conv1 = QuadraticConvLayer::create(cfg.neuron, cfg.variant, in, out,
                                                 cfg.block_kernel, stride,
                                                 cfg.block_kernel / 2);
        block.bn1 = BatchNormLayer::create(out);
        block.conv2 = QuadraticConvLayer::create(cfg.neuron, cfg.variant, out, out,
                                                 cfg.block_kernel, 1, cfg.block_kernel / 2);
        block.bn2 = BatchNormLayer::create(out);
        if (block.projecting) {
            block.proj = QuadraticConvLayer::create(cfg.neuron, cfg.variant, in, out, 1,
                                                    stride, 0);
            block.proj_bn = BatchNormLayer::create(out);
        }
        net.blocks.push_back(std::move(block));
    }
    return net;
}

TensorPtr Backbone::forward(const TensorPtr& x, Mode mode) {
    auto h = relu(stem_bn.forward(stem.forward(x), mode));
    h = max_pool1d(h, 3, 2, 1);
    for (auto& block : blocks) h = block.forward(h, mode);
    return flatten_pooled(avg_pool_global(h));
}

void Backbone::collect_params(ParamGroups& groups) const {
    stem.collect_params(groups);
    groups.linear.members.push_back(stem_bn.gamma);
    groups.linear.members.push_back(stem_bn.beta);
    for (const auto& block : blocks) {
        block.conv1.collect_params(groups);
        groups.linear.members.push_back(block.bn1.gamma);
        groups.linear.members.push_back(block.bn1.beta);
        block.conv2.collect_params(groups);
        groups.linear.members.push_back(block.bn2.gamma);
        groups.linear.members.push_back(block.bn2.beta);
        if (block.projecting) {
            block.proj.collect_params(groups);
            groups.linear.members.push_back(block.proj_bn.gamma);
            groups.linear.members.push_back(block.proj_bn.beta);
        }
    }
}

void Backbone::collect_named(std::vector<std::pair<std::string, TensorPtr>>& out) const {
    stem.collect_named("stem", out);
    out.emplace_back("stem_bn.gamma", stem_bn.gamma);
    out.emplace_back("stem_bn.beta", stem_bn.beta);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const std::string p = "block" + std::to_string(i);
        blocks[i].conv1.collect_named(p + ".conv1", out);
        out.emplace_back(p + ".bn1.gamma", blocks[i].bn1.gamma);
        out.emplace_back(p + ".bn1.beta", blocks[i].bn1.beta);
        blocks[i].conv2.collect_named(p + ".conv2", out);
        out.emplace_back(p + ".bn2.gamma", blocks[i].bn2.gamma);
        out.emplace_back(p + ".bn2.beta", blocks[i].bn2.beta);
        if (blocks[i].projecting) {
            blocks[i].proj.collect_named(p + ".proj", out);
            out.emplace_back(p + ".proj_bn.gamma", blocks[i].proj_bn.gamma);
            out.emplace_back(p + ".proj_bn.beta", blocks[i].proj_bn.beta);
        }
    }
}

Heads Heads::create(std::size_t feature_dim, std::size_t num_classes, std::size_t embed_dim) {
    Heads heads;
    heads.embed_dim = embed_dim;
    heads.proj1 = DenseLayer::create(feature_dim, feature_dim);
    heads.proj2 = DenseLayer::create(embed_dim, feature_dim);
    heads.classifier = DenseLayer::create(num_classes, feature_dim);
    return heads;
}

TensorPtr Heads::project(const TensorPtr& features) const {
    return l2_normalize(proj2.forward(relu(proj1.forward(features))));
}

TensorPtr Heads::classify(const TensorPtr& features) const {
    return classifier.forward(features);
}

Network Network::build(const BackboneConfig& cfg, std::size_t num_classes,
                       std::uint64_t seed, std::size_t embed_dim) {
    if (num_classes < 2) throw ConfigError("network: need at least 2 classes");
    Network net;
    net.backbone = Backbone::build(cfg);
    net.heads = Heads::create(cfg.feature_dim(), num_classes, embed_dim);
    net.num_classes = num_classes;
    relinear_init(net, seed);
    return net;
}

ParamGroups Network::param_groups() const {
    ParamGroups groups;
    backbone.collect_params(groups);
    for (const auto& d : {&heads.proj1, &heads.proj2, &heads.classifier}) {
        groups.linear.members.push_back(d->W);
        groups.linear.members.push_back(d->b);
    }
    return groups;
}

std::vector<std::pair<std::string, TensorPtr>> Network::named_params() const {
    std::vector<std::pair<std::string, TensorPtr>> out;
    backbone.collect_named(out);
    out.emplace_back("heads.proj1.W", heads.proj1.W);
    out.emplace_back("heads.proj1.b", heads.proj1.b);
    out.emplace_back("heads.proj2.W", heads.proj2.W);
    out.emplace_back("heads.proj2.b", heads.proj2.b);
    out.emplace_back("heads.classifier.W", heads.classifier.W);
    out.emplace_back("heads.classifier.b", heads.classifier.b);
    return out;
}

namespace {

void init_conv(QuadraticConvLayer& layer, Rng& rng) {
    const double fan_in = static_cast<double>(layer.ch_in * layer.kernel);
    const double w_std = std::sqrt(2.0 / fan_in);
    const double b_std = 1.0 / std::sqrt(fan_in);
    for (double& v : layer.w_r->data) v = rng.normal(0.0, w_std);
    for (double& v : layer.b_r->data) v = rng.normal(0.0, b_std);
    if (layer.w_g) {
        std::fill(layer.w_g->data.begin(), layer.w_g->data.end(), 0.0);
        std::fill(layer.b_g->data.begin(), layer.b_g->data.end(), 1.0);
    }
    if (layer.w_b) {
        std::fill(layer.w_b->data.begin(), layer.w_b->data.end(), 0.0);
        std::fill(layer.c->data.begin(), layer.c->data.end(), 0.0);
    }
}

void init_bn(BatchNormLayer& bn) {
    std::fill(bn.gamma->data.begin(), bn.gamma->data.end(), 1.0);
    std::fill(bn.beta->data.begin(), bn.beta->data.end(), 0.0);
    std::fill(bn.stats.running_mean.begin(), bn.stats.running_mean.end(), 0.0);
    std::fill(bn.stats.running_var.begin(), bn.stats.running_var.end(), 1.0);
}

void init_dense(DenseLayer& d, Rng& rng) {
    const double fan_in = static_cast<double>(d.W->shape[1]);
    const double w_std = std::sqrt(2.0 / fan_in);
    const double b_std = 1.0 / std::sqrt(fan_in);
    for (double& v : d.W->data) v = rng.normal(0.0, w_std);
    for (double& v : d.b->data) v = rng.normal(0.0, b_std);
}

}  // namespace

void relinear_init(Network& net, std::uint64_t seed) {
    // Draw order touches only first-order parameters, so quadratic and
    // conventional builds consume the stream identically for a given seed.
    Rng rng(seed);
    init_conv(net.backbone.stem, rng);
    init_bn(net.backbone.stem_bn);
    for (auto& block : net.backbone.blocks) {
        init_conv(block.conv1, rng);
        init_bn(block.bn1);
        init_conv(block.conv2, rng);
        init_bn(block.bn2);
        if (block.projecting) {
            init_conv(block.proj, rng);
            init_bn(block.proj_bn);
        }
    }
    init_dense(net.heads.proj1, rng);
    init_dense(net.heads.proj2, rng);
    init_dense(net.heads.classifier, rng);
}

namespace {

void copy_linear_conv(const QuadraticConvLayer& src, QuadraticConvLayer& dst) {
    dst.w_r->data = src.w_r->data;
    dst.b_r->data = src.b_r->data;
}

void copy_bn(const BatchNormLayer& src, BatchNormLayer& dst) {
    dst.gamma->data = src.gamma->data;
    dst.beta->data = src.beta->data;
    dst.stats = src.stats;
}

}  // namespace

Network make_conventional_copy(const Network& net) {
    BackboneConfig cfg = net.backbone.cfg;
    cfg.neuron = Neuron::conventional;
    Network twin = Network::build(cfg, net.num_classes, 0, net.heads.embed_dim);
    copy_linear_conv(net.backbone.stem, twin.backbone.stem);
    copy_bn(net.backbone.stem_bn, twin.backbone.stem_bn);
    for (std::size_t i = 0; i < net.backbone.blocks.size(); ++i) {
        const auto& s = net.backbone.blocks[i];
        auto& d = twin.backbone.blocks[i];
        copy_linear_conv(s.conv1, d.conv1);
        copy_bn(s.bn1, d.bn1);
        copy_linear_conv(s.conv2, d.conv2);
        copy_bn(s.bn2, d.bn2);
        if (s.projecting) {
            copy_linear_conv(s.proj, d.proj);
            copy_bn(s.proj_bn, d.proj_bn);
        }
    }
    twin.heads.proj1.W->data = net.heads.proj1.W->data;
    twin.heads.proj1.b->data = net.heads.proj1.b->data;
    twin.heads.proj2.W->data = net.heads.proj2.W->data;
    twin.heads.proj2.b->data = net.heads.proj2.b->data;
    twin.heads.classifier.W->data = net.heads.classifier.W->data;
    twin.heads.classifier.b->data = net.heads.classifier.b->data;
    return twin;
}

TwoBranchOutput forward_two_branch(Network& net, const TensorPtr& raw_batch,
                                   const TensorPtr& view_batch, Mode mode) {
    if (raw_batch->ndim() != 3 || view_batch->ndim() != 3) {
        throw DimensionError("forward_two_branch: batches must be [batch, ch, n]");
    }
    if (view_batch->shape[0] != 2 * raw_batch->shape[0]) {
        throw DimensionError("forward_two_branch: view batch axis 0 is " +
                             std::to_string(view_batch->shape[0]) + ", expected 2B = " +
                             std::to_string(2 * raw_batch->shape[0]));
    }
    if (view_batch->shape[1] != raw_batch->shape[1] ||
        view_batch->shape[2] != raw_batch->shape[2]) {
        throw DimensionError("forward_two_branch: raw and view windows disagree: " +
                             shape_str(raw_batch->shape) + " vs " +
                             shape_str(view_batch->shape));
    }
    TwoBranchOutput out;
    out.logits = net.heads.classify(net.backbone.forward(raw_batch, mode));
    out.embeddings = net.heads.project(net.backbone.forward(view_batch, mode));
    return out;
}

std::vector<std::vector<double>> snapshot_state(const Network& net) {
    std::vector<std::vector<double>> snap;
    for (const auto& [name, p] : net.named_params()) snap.push_back(p->data);
    auto push_bn = [&snap](const BatchNormLayer& bn) {
        snap.push_back(bn.stats.running_mean);
        snap.push_back(bn.stats.running_var);
    };
    push_bn(net.backbone.stem_bn);
    for (const auto& block : net.backbone.blocks) {
        push_bn(block.bn1);
        push_bn(block.bn2);
        if (block.projecting) push_bn(block.proj_bn);
    }
    return snap;
}

void restore_state(Network& net, const std::vector<std::vector<double>>& snap) {
    std::size_t idx = 0;
    for (const auto& [name, p] : net.named_params()) {
        if (idx >= snap.size() || snap[idx].size() != p->data.size()) {
            throw ContractError("restore_state: snapshot does not match network layout");
        }
        p->data = snap[idx++];
    }
    auto pull_bn = [&snap, &idx](BatchNormLayer& bn) {
        if (idx + 1 >= snap.size()) {
            throw ContractError("restore_state: snapshot does not match network layout");
        }
        bn.stats.running_mean = snap[idx++];
        bn.stats.running_var = snap[idx++];
    };
    pull_bn(net.backbone.stem_bn);
    for (auto& block : net.backbone.blocks) {
        pull_bn(block.bn1);
        pull_bn(block.bn2);
        if (block.projecting) pull_bn(block.proj_bn);
    }
}

}  // namespace qcl
