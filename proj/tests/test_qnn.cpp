#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "qcl/checkpoint.hpp"
#include "qcl/qnn.hpp"
#include "qcl/rng.hpp"

using namespace qcl;

namespace {

TensorPtr random_input(std::size_t batch, std::size_t ch, std::size_t n, Rng& rng,
                       bool rg = false) {
    std::vector<double> v(batch * ch * n);
    for (double& x : v) x = rng.normal();
    return Tensor::make({batch, ch, n}, std::move(v), rg);
}

void randomize_layer(QuadraticConvLayer& layer, Rng& rng) {
    for (const auto& p : {layer.w_r, layer.b_r, layer.w_g, layer.b_g, layer.w_b, layer.c}) {
        if (p) {
            for (double& v : p->data) v = rng.normal();
        }
    }
}

BackboneConfig tiny_config() {
    BackboneConfig cfg;
    cfg.input_len = 128;
    cfg.n_blocks = 2;
    cfg.channels = {8, 8, 16};
    return cfg;
}

}  // namespace

TEST_CASE("quadratic_conv: degenerate parameters reduce to the plain convolution") {
    Rng rng(1);
    for (auto variant : {QuadraticVariant::full, QuadraticVariant::no_power,
                         QuadraticVariant::single_inner}) {
        auto layer = QuadraticConvLayer::create(Neuron::quadratic, variant, 2, 3, 3, 1, 1);
        for (double& v : layer.w_r->data) v = rng.normal();
        for (double& v : layer.b_r->data) v = rng.normal();
        if (layer.b_g) std::fill(layer.b_g->data.begin(), layer.b_g->data.end(), 1.0);
        auto x = random_input(2, 2, 10, rng);
        auto q = quadratic_conv(layer, x);
        auto plain = conv1d(x, layer.w_r, layer.b_r, 1, 1);
        REQUIRE(q->shape == plain->shape);
        for (std::size_t i = 0; i < q->size(); ++i) {
            CHECK(q->data[i] == doctest::Approx(plain->data[i]).epsilon(1e-14));
        }
    }
}

TEST_CASE("quadratic_conv: unit kernels square the input") {
    auto layer = QuadraticConvLayer::create(Neuron::quadratic, QuadraticVariant::full,
                                            1, 1, 1, 1, 0);
    layer.w_r->data = {1.0};
    layer.w_g->data = {1.0};
    // all biases and w_b stay zero
    auto x = Tensor::make({1, 1, 2}, {2.0, -3.0});
    auto y = quadratic_conv(layer, x);
    CHECK(y->data[0] == doctest::Approx(4.0));
    CHECK(y->data[1] == doctest::Approx(9.0));
}

TEST_CASE("quadratic_conv: zero input exposes the bias product") {
    Rng rng(2);
    auto layer = QuadraticConvLayer::create(Neuron::quadratic, QuadraticVariant::full,
                                            1, 2, 3, 1, 0);
    randomize_layer(layer, rng);
    std::fill(layer.c->data.begin(), layer.c->data.end(), 0.0);
    auto x = Tensor::zeros({1, 1, 8});
    auto y = quadratic_conv(layer, x);
    for (std::size_t o = 0; o < 2; ++o) {
        const double expected = layer.b_r->data[o] * layer.b_g->data[o];
        for (std::size_t j = 0; j < y->shape[2]; ++j) {
            CHECK(y->data[o * y->shape[2] + j] == doctest::Approx(expected));
        }
    }
}

TEST_CASE("quadratic_conv: gradients pass for all variants") {
    for (auto variant : {QuadraticVariant::full, QuadraticVariant::no_power,
                         QuadraticVariant::single_inner}) {
        Rng rng(3 + static_cast<std::uint64_t>(variant));
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t ch_in = 1 + rng.uniform_index(2);
            const std::size_t ch_out = 1 + rng.uniform_index(2);
            const std::size_t k = 1 + 2 * rng.uniform_index(2);
            const std::size_t n = 5 + rng.uniform_index(4);
            auto layer = QuadraticConvLayer::create(Neuron::quadratic, variant, ch_in,
                                                    ch_out, k, 1 + rng.uniform_index(2),
                                                    k / 2);
            randomize_layer(layer, rng);
            auto x = random_input(1 + rng.uniform_index(2), ch_in, n, rng, true);
            std::vector<TensorPtr> params{x, layer.w_r, layer.b_r};
            for (const auto& p : {layer.w_g, layer.b_g, layer.w_b, layer.c}) {
                if (p) params.push_back(p);
            }
            auto f = [&]() {
                auto y = quadratic_conv(layer, x);
                return sum_all(hadamard(y, y));
            };
            CAPTURE(to_string(variant));
            CAPTURE(trial);
            CHECK(grad_check(f, params, 1e-5, 1e-3).passed);
        }
    }
}

TEST_CASE("relinear_init") {
    auto cfg = tiny_config();
    SUBCASE("quadratic group norm is zero at init (excluding b_g)") {
        Network net = Network::build(cfg, 3, 42);
        double sq = 0.0;
        for (const auto& [name, p] : net.named_params()) {
            if (name.ends_with(".w_g") || name.ends_with(".w_b") || name.ends_with(".c")) {
                for (double v : p->data) sq += v * v;
            }
            if (name.ends_with(".b_g")) {
                for (double v : p->data) CHECK(v == 1.0);
            }
        }
        CHECK(sq == 0.0);
    }
    SUBCASE("same seed reproduces every parameter") {
        Network a = Network::build(cfg, 3, 7);
        Network b = Network::build(cfg, 3, 7);
        auto pa = a.named_params();
        auto pb = b.named_params();
        REQUIRE(pa.size() == pb.size());
        for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].second->data == pb[i].second->data);
        Network c = Network::build(cfg, 3, 8);
        bool any_diff = false;
        auto pc = c.named_params();
        for (std::size_t i = 0; i < pa.size(); ++i) {
            any_diff = any_diff || pa[i].second->data != pc[i].second->data;
        }
        CHECK(any_diff);
    }
}

TEST_CASE("degenerate-neuron identity: fresh quadratic net equals its conventional twin") {
    Rng rng(9);
    for (auto variant : {QuadraticVariant::full, QuadraticVariant::no_power,
                         QuadraticVariant::single_inner}) {
        auto cfg = tiny_config();
        cfg.variant = variant;
        Network qnet = Network::build(cfg, 4, 1234);
        Network cnet = make_conventional_copy(qnet);
        for (int trial = 0; trial < 3; ++trial) {
            auto x = random_input(4, 1, cfg.input_len, rng);
            for (Mode mode : {Mode::train, Mode::eval}) {
                auto qf = qnet.backbone.forward(x, mode);
                auto cf = cnet.backbone.forward(x, mode);
                REQUIRE(qf->shape == cf->shape);
                for (std::size_t i = 0; i < qf->size(); ++i) {
                    CHECK(std::abs(qf->data[i] - cf->data[i]) <= 1e-10);
                }
                auto ql = qnet.heads.classify(qf);
                auto cl = cnet.heads.classify(cf);
                for (std::size_t i = 0; i < ql->size(); ++i) {
                    CHECK(std::abs(ql->data[i] - cl->data[i]) <= 1e-10);
                }
            }
        }
    }
}

TEST_CASE("backbone shapes follow the structural table for 1x2048 input") {
    BackboneConfig cfg;  // defaults: 4 blocks, channels 16/16/32/64/128
    Backbone net = Backbone::build(cfg);
    Network wrapper;  // for init only
    wrapper.backbone = std::move(net);
    wrapper.heads = Heads::create(cfg.feature_dim(), 2);
    wrapper.num_classes = 2;
    relinear_init(wrapper, 5);
    Backbone& bb = wrapper.backbone;

    Rng rng(10);
    auto x = random_input(2, 1, 2048, rng);
    auto stem_conv = bb.stem.forward(x);
    CHECK(stem_conv->shape == std::vector<std::size_t>{2, 16, 1024});
    auto stem_out = max_pool1d(relu(bb.stem_bn.forward(stem_conv, Mode::train)), 3, 2, 1);
    CHECK(stem_out->shape == std::vector<std::size_t>{2, 16, 512});

    auto h = stem_out;
    const std::vector<std::vector<std::size_t>> expected = {
        {2, 16, 512}, {2, 32, 256}, {2, 64, 128}, {2, 128, 64}};
    for (std::size_t i = 0; i < bb.blocks.size(); ++i) {
        h = bb.blocks[i].forward(h, Mode::train);
        CHECK(h->shape == expected[i]);
    }
    auto feature = flatten_pooled(avg_pool_global(h));
    CHECK(feature->shape == std::vector<std::size_t>{2, 128});

    auto full = bb.forward(x, Mode::eval);
    CHECK(full->shape == std::vector<std::size_t>{2, 128});
}

TEST_CASE("conventional backbone with the same seed stays finite and matches shapes") {
    auto cfg = tiny_config();
    cfg.neuron = Neuron::conventional;
    Network net = Network::build(cfg, 3, 77);
    Rng rng(11);
    auto x = random_input(3, 1, cfg.input_len, rng);
    auto f = net.backbone.forward(x, Mode::train);
    CHECK(f->shape == std::vector<std::size_t>{3, cfg.feature_dim()});
    for (double v : f->data) CHECK(std::isfinite(v));
}

TEST_CASE("quadratic conv parameters are exactly 3x the conventional ones") {
    auto count_conv = [](const Network& net) {
        std::size_t n = 0;
        for (const auto& [name, p] : net.named_params()) {
            if (name.find("heads.") == std::string::npos &&
                name.find("bn") == std::string::npos) {
                n += p->size();
            }
        }
        return n;
    };
    BackboneConfig cfg;  // default Table-1 sized backbone
    Network qnet = Network::build(cfg, 10, 1);
    cfg.neuron = Neuron::conventional;
    Network cnet = Network::build(cfg, 10, 1);
    const auto q = count_conv(qnet);
    const auto c = count_conv(cnet);
    CHECK(q == 3 * c);
}

TEST_CASE("forward_two_branch") {
    auto cfg = tiny_config();
    Network net = Network::build(cfg, 3, 21);
    Rng rng(12);
    const std::size_t B = 5;
    auto raw = random_input(B, 1, cfg.input_len, rng);
    auto views = random_input(2 * B, 1, cfg.input_len, rng);
    auto out = forward_two_branch(net, raw, views, Mode::train);
    CHECK(out.logits->shape == std::vector<std::size_t>{B, 3});
    CHECK(out.embeddings->shape == std::vector<std::size_t>{2 * B, 64});
    for (std::size_t r = 0; r < 2 * B; ++r) {
        double sq = 0.0;
        for (std::size_t i = 0; i < 64; ++i) {
            const double v = out.embeddings->data[r * 64 + i];
            sq += v * v;
        }
        CHECK(std::abs(std::sqrt(sq) - 1.0) <= 1e-10);
    }
    SUBCASE("size mismatch rejected") {
        auto bad = random_input(2 * B + 1, 1, cfg.input_len, rng);
        CHECK_THROWS_AS(forward_two_branch(net, raw, bad, Mode::train), DimensionError);
    }
}

TEST_CASE("gradients flow from both branches into the shared backbone") {
    auto cfg = tiny_config();
    Network net = Network::build(cfg, 2, 31);
    Rng rng(13);
    auto raw = random_input(2, 1, cfg.input_len, rng);
    auto views = random_input(4, 1, cfg.input_len, rng);
    auto groups = net.param_groups();
    groups.zero_grad();
    auto out = forward_two_branch(net, raw, views, Mode::train);
    auto loss = add(sum_all(hadamard(out.logits, out.logits)),
                    sum_all(hadamard(out.embeddings, out.embeddings)));
    loss->backward();
    double stem_grad = 0.0;
    for (double v : net.backbone.stem.w_r->grad) stem_grad += std::abs(v);
    CHECK(stem_grad > 0.0);
    double cls_grad = 0.0;
    for (double v : net.heads.classifier.W->grad) cls_grad += std::abs(v);
    CHECK(cls_grad > 0.0);
}

TEST_CASE("backbone config validation") {
    BackboneConfig cfg;
    cfg.channels = {16, 16};
    CHECK_THROWS_AS(Backbone::build(cfg), ConfigError);
    cfg = BackboneConfig{};
    cfg.stem_kernel = 4;
    CHECK_THROWS_AS(Backbone::build(cfg), ConfigError);
    cfg = BackboneConfig{};
    cfg.channels = {16, 16, 32, 64, 0};
    CHECK_THROWS_AS(Backbone::build(cfg), ConfigError);
}

TEST_CASE("checkpoint round trip and digest guard") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "qcl_ckpt_test";
    fs::create_directories(dir);
    const fs::path path = dir / "net.ckpt";

    auto cfg = tiny_config();
    Network net = Network::build(cfg, 3, 99);
    // Perturb a few values so the state is not the init state.
    net.backbone.stem.w_r->data[0] = 0.525600;
    net.backbone.stem_bn.stats.running_mean[0] = -1.25;
    net.heads.classifier.b->data[1] = 3.5;
    save_checkpoint(path, net);

    Network loaded = load_checkpoint(path, cfg, 3);
    auto pa = net.named_params();
    auto pb = loaded.named_params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].second->data == pb[i].second->data);
    }
    CHECK(loaded.backbone.stem_bn.stats.running_mean[0] == -1.25);

    SUBCASE("digest mismatch is refused") {
        auto other = cfg;
        other.channels = {8, 8, 8};
        CHECK_THROWS_AS(load_checkpoint(path, other, 3), ContractError);
        CHECK_THROWS_AS(load_checkpoint(path, cfg, 4), ContractError);
    }
    SUBCASE("digest is readable without loading") {
        CHECK(peek_digest(path) == arch_digest(net));
    }
    fs::remove_all(dir);
}
