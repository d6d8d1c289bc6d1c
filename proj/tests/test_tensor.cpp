#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "qcl/rng.hpp"
#include "qcl/tensor.hpp"

using namespace qcl;

namespace {

TensorPtr t3(std::size_t b, std::size_t c, std::size_t n, std::vector<double> v,
             bool rg = false) {
    return Tensor::make({b, c, n}, std::move(v), rg);
}

TensorPtr random_tensor(std::vector<std::size_t> shape, Rng& rng, bool rg = true) {
    std::vector<double> v(shape_product(shape));
    for (double& x : v) x = rng.normal();
    return Tensor::make(std::move(shape), std::move(v), rg);
}

}  // namespace

TEST_CASE("conv1d: sliding dot product") {
    auto x = t3(1, 1, 4, {1, 2, 3, 4});
    auto w = t3(1, 1, 3, {1, 0, -1});
    auto b = Tensor::make({1}, {0.0});
    auto y = conv1d(x, w, b, 1, 0);
    REQUIRE(y->shape == std::vector<std::size_t>{1, 1, 2});
    CHECK(y->data[0] == doctest::Approx(-2.0));
    CHECK(y->data[1] == doctest::Approx(-2.0));
}

TEST_CASE("conv1d: identity kernel is the exact identity") {
    Rng rng(11);
    auto x = random_tensor({2, 1, 9}, rng, false);
    auto w = t3(1, 1, 1, {1.0});
    auto b = Tensor::make({1}, {0.0});
    auto y = conv1d(x, w, b, 1, 0);
    REQUIRE(y->shape == x->shape);
    for (std::size_t i = 0; i < x->size(); ++i) CHECK(y->data[i] == x->data[i]);
}

TEST_CASE("conv1d: null kernel gives zeros") {
    Rng rng(12);
    auto x = random_tensor({1, 2, 8}, rng, false);
    auto w = Tensor::zeros({3, 2, 3});
    auto b = Tensor::zeros({3});
    auto y = conv1d(x, w, b, 1, 1);
    for (double v : y->data) CHECK(v == 0.0);
}

TEST_CASE("conv1d: output length and padding/stride") {
    auto x = t3(1, 1, 6, {1, 1, 1, 1, 1, 1});
    auto w = t3(1, 1, 3, {1, 1, 1});
    auto b = Tensor::make({1}, {0.5});
    auto y = conv1d(x, w, b, 2, 1);
    // padded length 8, windows at 0,2,4,6 -> m = 3? (8-3)/2+1 = 3
    REQUIRE(y->shape[2] == 3);
    CHECK(y->data[0] == doctest::Approx(2.5));  // [0,1,1]
    CHECK(y->data[1] == doctest::Approx(3.5));  // [1,1,1]
    CHECK(y->data[2] == doctest::Approx(3.5));
}

TEST_CASE("conv1d: dimension errors name the axis") {
    auto x = t3(1, 2, 8, std::vector<double>(16, 0.0));
    auto w = Tensor::zeros({3, 1, 3});
    auto b = Tensor::zeros({3});
    CHECK_THROWS_AS(conv1d(x, w, b, 1, 0), DimensionError);
    CHECK_THROWS_WITH_AS(conv1d(x, w, b, 1, 0),
                         doctest::Contains("ch_in axis mismatch"), DimensionError);
    auto w2 = Tensor::zeros({3, 2, 3});
    auto b2 = Tensor::zeros({4});
    CHECK_THROWS_WITH_AS(conv1d(x, w2, b2, 1, 0),
                         doctest::Contains("ch_out axis mismatch"), DimensionError);
    auto wlong = Tensor::zeros({1, 2, 11});
    CHECK_THROWS_AS(conv1d(x, wlong, Tensor::zeros({1}), 1, 0), DimensionError);
}

TEST_CASE("hadamard") {
    auto a = Tensor::make({2}, {1, 2});
    auto b = Tensor::make({2}, {3, 4});
    auto y = hadamard(a, b);
    CHECK(y->data == std::vector<double>{3, 8});

    Rng rng(5);
    auto x = random_tensor({3, 2}, rng, false);
    auto ones = Tensor::full({3, 2}, 1.0);
    auto zeros = Tensor::zeros({3, 2});
    CHECK(hadamard(x, ones)->data == x->data);
    auto xz = hadamard(x, zeros);
    for (double v : xz->data) CHECK(v == 0.0);

    auto bad = Tensor::zeros({3, 3});
    CHECK_THROWS_AS(hadamard(x, bad), DimensionError);
}

TEST_CASE("relu") {
    auto x = Tensor::make({3}, {-1, 0, 2});
    CHECK(relu(x)->data == std::vector<double>{0, 0, 2});
    auto neg = Tensor::make({3}, {-5, -1, -0.5});
    auto rneg = relu(neg);
    for (double v : rneg->data) CHECK(v == 0.0);
    auto pos = Tensor::make({3}, {5, 1, 0.5});
    CHECK(relu(pos)->data == pos->data);
}

TEST_CASE("batch_norm1d: forward behavior") {
    SUBCASE("zero-mean unit-variance input passes through (within eps effect)") {
        auto x = t3(2, 1, 1, {-1.0, 1.0});
        auto gamma = Tensor::full({1}, 1.0);
        auto beta = Tensor::zeros({1});
        BatchNormState stats(1);
        auto y = batch_norm1d(x, gamma, beta, stats, Mode::train);
        CHECK(y->data[0] == doctest::Approx(-1.0).epsilon(1e-4));
        CHECK(y->data[1] == doctest::Approx(1.0).epsilon(1e-4));
    }
    SUBCASE("constant channel collapses to beta") {
        auto x = t3(2, 1, 2, {3, 3, 3, 3});
        auto gamma = Tensor::full({1}, 2.0);
        auto beta = Tensor::full({1}, 0.7);
        BatchNormState stats(1);
        auto y = batch_norm1d(x, gamma, beta, stats, Mode::train);
        for (double v : y->data) CHECK(v == doctest::Approx(0.7));
    }
    SUBCASE("gamma=0 gives beta everywhere") {
        Rng rng(7);
        auto x = random_tensor({3, 2, 4}, rng, false);
        auto gamma = Tensor::zeros({2});
        auto beta = Tensor::full({2}, -1.5);
        BatchNormState stats(2);
        auto y = batch_norm1d(x, gamma, beta, stats, Mode::train);
        for (double v : y->data) CHECK(v == doctest::Approx(-1.5));
    }
    SUBCASE("batch of one rejected in train mode") {
        auto x = t3(1, 1, 4, {1, 2, 3, 4});
        auto gamma = Tensor::full({1}, 1.0);
        auto beta = Tensor::zeros({1});
        BatchNormState stats(1);
        CHECK_THROWS_AS(batch_norm1d(x, gamma, beta, stats, Mode::train), ConfigError);
        CHECK_NOTHROW(batch_norm1d(x, gamma, beta, stats, Mode::eval));
    }
    SUBCASE("eval mode uses running stats") {
        auto gamma = Tensor::full({1}, 1.0);
        auto beta = Tensor::zeros({1});
        BatchNormState stats(1);
        stats.running_mean[0] = 2.0;
        stats.running_var[0] = 4.0;
        auto x = t3(1, 1, 2, {4.0, 0.0});
        auto y = batch_norm1d(x, gamma, beta, stats, Mode::eval);
        CHECK(y->data[0] == doctest::Approx(1.0).epsilon(1e-4));
        CHECK(y->data[1] == doctest::Approx(-1.0).epsilon(1e-4));
    }
}

TEST_CASE("pooling") {
    SUBCASE("max over a full window") {
        auto x = t3(1, 1, 3, {1, 3, 2});
        auto y = max_pool1d(x, 3, 1, 0);
        REQUIRE(y->size() == 1);
        CHECK(y->data[0] == 3.0);
    }
    SUBCASE("global average") {
        auto x = t3(1, 1, 3, {2, 4, 6});
        auto y = avg_pool_global(x);
        REQUIRE(y->shape == std::vector<std::size_t>{1, 1, 1});
        CHECK(y->data[0] == doctest::Approx(4.0));
    }
    SUBCASE("constant input is preserved") {
        auto x = t3(1, 2, 4, std::vector<double>(8, 1.25));
        CHECK(max_pool1d(x, 2, 2, 0)->data == std::vector<double>(4, 1.25));
        CHECK(avg_pool_global(x)->data == std::vector<double>(2, 1.25));
    }
    SUBCASE("max pool tie routes gradient to the lowest index") {
        auto x = Tensor::make({1, 1, 3}, {2.0, 2.0, 1.0}, true);
        auto y = max_pool1d(x, 3, 1, 0);
        sum_all(y)->backward();
        CHECK(x->grad == std::vector<double>{1.0, 0.0, 0.0});
    }
}

TEST_CASE("dense") {
    SUBCASE("identity weight, zero bias") {
        auto x = Tensor::make({2, 2}, {1, 2, 3, 4});
        auto W = Tensor::make({2, 2}, {1, 0, 0, 1});
        auto b = Tensor::zeros({2});
        CHECK(dense(x, W, b)->data == x->data);
    }
    SUBCASE("row sum") {
        auto x = Tensor::make({1, 2}, {2, 3});
        auto W = Tensor::make({1, 2}, {1, 1});
        auto b = Tensor::zeros({1});
        CHECK(dense(x, W, b)->data[0] == doctest::Approx(5.0));
    }
    SUBCASE("zero weight broadcasts bias") {
        auto x = Tensor::make({2, 3}, std::vector<double>(6, 9.0));
        auto W = Tensor::zeros({2, 3});
        auto b = Tensor::make({2}, {0.5, -0.5});
        auto y = dense(x, W, b);
        CHECK(y->data == std::vector<double>{0.5, -0.5, 0.5, -0.5});
    }
    SUBCASE("inner axis mismatch") {
        auto x = Tensor::make({1, 3}, {1, 2, 3});
        auto W = Tensor::zeros({2, 2});
        auto b = Tensor::zeros({2});
        CHECK_THROWS_AS(dense(x, W, b), DimensionError);
    }
}

TEST_CASE("l2_normalize") {
    auto u = Tensor::make({1, 2}, {3, 4});
    auto z = l2_normalize(u);
    CHECK(z->data[0] == doctest::Approx(0.6));
    CHECK(z->data[1] == doctest::Approx(0.8));

    auto unit = Tensor::make({1, 2}, {0.0, 1.0});
    CHECK(l2_normalize(unit)->data == unit->data);

    auto zero = Tensor::zeros({1, 2});
    CHECK_THROWS_AS(l2_normalize(zero), DegenerateInputError);

    SUBCASE("output rows have unit norm within 1e-12") {
        Rng rng(21);
        auto x = random_tensor({16, 5}, rng, false);
        auto y = l2_normalize(x);
        for (std::size_t b = 0; b < 16; ++b) {
            double sq = 0.0;
            for (std::size_t i = 0; i < 5; ++i) sq += y->data[b * 5 + i] * y->data[b * 5 + i];
            CHECK(std::abs(std::sqrt(sq) - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("gradient accumulation is additive") {
    auto x = Tensor::make({2}, {1.0, 2.0}, true);
    auto loss = sum_all(hadamard(x, x));
    loss->backward();
    CHECK(x->grad == std::vector<double>{2.0, 4.0});
    loss->backward();
    CHECK(x->grad == std::vector<double>{4.0, 8.0});
    x->zero_grad();
    loss->backward();
    CHECK(x->grad == std::vector<double>{2.0, 4.0});
}

TEST_CASE("grad_check: closed-form quadratic") {
    auto x = Tensor::make({2}, {1.0, 2.0}, true);
    auto f = [&]() { return sum_all(hadamard(x, x)); };
    auto report = grad_check(f, {x}, 1e-5, 1e-4);
    CHECK(report.passed);
    CHECK(report.coords_checked == 2);
    // analytic gradient is [2, 4]
    x->zero_grad();
    f()->backward();
    CHECK(x->grad[0] == doctest::Approx(2.0));
    CHECK(x->grad[1] == doctest::Approx(4.0));
}

TEST_CASE("grad_check: constant function passes") {
    auto x = Tensor::make({3}, {1.0, -1.0, 0.5}, true);
    auto f = [&]() { return Tensor::scalar(3.14, true); };
    auto report = grad_check(f, {x}, 1e-5, 1e-3);
    CHECK(report.passed);
}

TEST_CASE("grad_check: corrupted gradient is caught") {
    auto x = Tensor::make({2}, {1.0, 2.0}, true);
    // f = sum(x^2) computed honestly, but backward reports twice the gradient.
    auto f = [&]() {
        double acc = x->data[0] * x->data[0] + x->data[1] * x->data[1];
        auto out = Tensor::scalar(acc, true);
        out->parents = {x};
        Tensor* og = out.get();
        Tensor* px = x.get();
        out->backward_fn = [og, px]() {
            px->ensure_grad();
            for (std::size_t i = 0; i < 2; ++i) px->grad[i] += og->grad[0] * 4.0 * px->data[i];
        };
        return out;
    };
    auto report = grad_check(f, {x}, 1e-5, 1e-3);
    CHECK_FALSE(report.passed);
}

TEST_CASE("grad_check: h outside sane range rejected") {
    auto x = Tensor::make({1}, {1.0}, true);
    auto f = [&]() { return sum_all(x); };
    CHECK_THROWS_AS(grad_check(f, {x}, 1e-2, 1e-3), ConfigError);
    CHECK_THROWS_AS(grad_check(f, {x}, 1e-7, 1e-3), ConfigError);
}

TEST_CASE("grad_check: every primitive over random small instances") {
    const double tol = 1e-3;

    SUBCASE("conv1d") {
        Rng rng(101);
        for (int trial = 0; trial < 20; ++trial) {
            std::size_t batch = 1 + rng.uniform_index(2);
            std::size_t ch_in = 1 + rng.uniform_index(2);
            std::size_t ch_out = 1 + rng.uniform_index(2);
            std::size_t n = 4 + rng.uniform_index(5);
            std::size_t k = 1 + rng.uniform_index(3);
            std::size_t stride = 1 + rng.uniform_index(2);
            std::size_t padding = rng.uniform_index(2);
            auto x = random_tensor({batch, ch_in, n}, rng);
            auto w = random_tensor({ch_out, ch_in, k}, rng);
            auto b = random_tensor({ch_out}, rng);
            auto f = [&]() { return sum_all(hadamard(conv1d(x, w, b, stride, padding),
                                                     conv1d(x, w, b, stride, padding))); };
            auto report = grad_check(f, {x, w, b}, 1e-5, tol);
            CAPTURE(trial);
            CHECK(report.passed);
        }
    }
    SUBCASE("hadamard and add") {
        Rng rng(102);
        for (int trial = 0; trial < 20; ++trial) {
            std::size_t rows = 1 + rng.uniform_index(4);
            std::size_t cols = 1 + rng.uniform_index(8);
            auto a = random_tensor({rows, cols}, rng);
            auto b = random_tensor({rows, cols}, rng);
            auto f = [&]() { return sum_all(hadamard(add(a, b), b)); };
            auto report = grad_check(f, {a, b}, 1e-5, tol);
            CHECK(report.passed);
        }
    }
    SUBCASE("batch_norm1d train and eval") {
        Rng rng(103);
        for (int trial = 0; trial < 20; ++trial) {
            std::size_t batch = 2 + rng.uniform_index(3);
            std::size_t ch = 1 + rng.uniform_index(3);
            std::size_t n = 2 + rng.uniform_index(4);
            auto x = random_tensor({batch, ch, n}, rng);
            auto gamma = random_tensor({ch}, rng);
            auto beta = random_tensor({ch}, rng);
            BatchNormState stats(ch);
            Mode mode = trial % 2 == 0 ? Mode::train : Mode::eval;
            auto f = [&]() -> TensorPtr {
                auto y = batch_norm1d(x, gamma, beta, stats, mode);
                return sum_all(hadamard(y, y));
            };
            auto report = grad_check(f, {x, gamma, beta}, 1e-5, tol);
            CAPTURE(trial);
            CHECK(report.passed);
        }
    }
    SUBCASE("max_pool1d and avg_pool_global") {
        Rng rng(104);
        for (int trial = 0; trial < 20; ++trial) {
            std::size_t batch = 1 + rng.uniform_index(2);
            std::size_t ch = 1 + rng.uniform_index(3);
            std::size_t n = 4 + rng.uniform_index(5);
            auto x = random_tensor({batch, ch, n}, rng);
            auto f = [&]() -> TensorPtr {
                auto y = max_pool1d(x, 3, 2, 1);
                return sum_all(hadamard(y, y));
            };
            CHECK(grad_check(f, {x}, 1e-5, tol).passed);
            auto g = [&]() -> TensorPtr {
                auto y = avg_pool_global(x);
                return sum_all(hadamard(y, y));
            };
            CHECK(grad_check(g, {x}, 1e-5, tol).passed);
        }
    }
    SUBCASE("dense") {
        Rng rng(105);
        for (int trial = 0; trial < 20; ++trial) {
            std::size_t batch = 1 + rng.uniform_index(4);
            std::size_t d_in = 1 + rng.uniform_index(6);
            std::size_t d_out = 1 + rng.uniform_index(6);
            auto x = random_tensor({batch, d_in}, rng);
            auto W = random_tensor({d_out, d_in}, rng);
            auto b = random_tensor({d_out}, rng);
            auto f = [&]() { return sum_all(hadamard(dense(x, W, b), dense(x, W, b))); };
            CHECK(grad_check(f, {x, W, b}, 1e-5, tol).passed);
        }
    }
    SUBCASE("relu") {
        Rng rng(106);
        for (int trial = 0; trial < 20; ++trial) {
            auto x = random_tensor({2, 6}, rng);
            auto f = [&]() { return sum_all(hadamard(relu(x), relu(x))); };
            CHECK(grad_check(f, {x}, 1e-5, tol).passed);
        }
    }
    SUBCASE("l2_normalize") {
        Rng rng(107);
        for (int trial = 0; trial < 20; ++trial) {
            std::size_t rows = 1 + rng.uniform_index(4);
            std::size_t cols = 2 + rng.uniform_index(6);
            auto x = random_tensor({rows, cols}, rng);
            auto w = random_tensor({rows, cols}, rng, false);
            auto f = [&]() { return sum_all(hadamard(l2_normalize(x), w)); };
            CHECK(grad_check(f, {x}, 1e-5, tol).passed);
        }
    }
}

TEST_CASE("grad_check: three-layer composite graph") {
    Rng rng(200);
    auto x = random_tensor({2, 2, 10}, rng);
    auto w1 = random_tensor({3, 2, 3}, rng);
    auto b1 = random_tensor({3}, rng);
    auto gamma = random_tensor({3}, rng);
    auto beta = random_tensor({3}, rng);
    auto W = random_tensor({4, 3}, rng);
    auto b2 = random_tensor({4}, rng);
    BatchNormState stats(3);
    auto f = [&]() -> TensorPtr {
        auto h1 = relu(conv1d(x, w1, b1, 1, 1));
        auto h2 = batch_norm1d(h1, gamma, beta, stats, Mode::train);
        auto h3 = dense(flatten_pooled(avg_pool_global(h2)), W, b2);
        return sum_all(hadamard(h3, h3));
    };
    auto report = grad_check(f, {x, w1, b1, gamma, beta, W, b2}, 1e-5, 1e-3);
    CHECK(report.passed);
}
