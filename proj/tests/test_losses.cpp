#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "qcl/losses.hpp"
#include "qcl/rng.hpp"
#include "qcl/tensor.hpp"

using namespace qcl;

namespace {

ContrastiveBatch make_batch(std::vector<std::vector<double>> rows,
                            std::vector<std::size_t> labels, bool rg = false) {
    const std::size_t n = rows.size();
    const std::size_t d = rows[0].size();
    std::vector<double> flat;
    flat.reserve(n * d);
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    ContrastiveBatch b;
    b.embeddings = Tensor::make({n, d}, std::move(flat), rg);
    b.labels = std::move(labels);
    return b;
}

// Random exactly-normalized embeddings.
ContrastiveBatch random_batch(std::size_t n, std::size_t d, std::size_t num_classes,
                              Rng& rng, bool rg = false) {
    std::vector<double> flat(n * d);
    for (double& v : flat) v = rng.normal();
    for (std::size_t i = 0; i < n; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) sq += flat[i * d + j] * flat[i * d + j];
        const double inv = 1.0 / std::sqrt(sq);
        for (std::size_t j = 0; j < d; ++j) flat[i * d + j] *= inv;
    }
    ContrastiveBatch b;
    b.embeddings = Tensor::make({n, d}, std::move(flat), rg);
    b.labels.resize(n);
    for (auto& y : b.labels) y = rng.uniform_index(num_classes);
    return b;
}

}  // namespace

TEST_CASE("scl_loss: single positive pair is exactly zero") {
    auto b = make_batch({{1, 0}, {0.6, 0.8}}, {3, 3});
    CHECK(scl_loss(b, 0.7)->value() == 0.0);
}

TEST_CASE("scl_loss: four identical embeddings, two classes") {
    auto b = make_batch({{1, 0}, {1, 0}, {1, 0}, {1, 0}}, {0, 0, 1, 1});
    CHECK(scl_loss(b, 1.0)->value() == doctest::Approx(4.0 * std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("scl_loss: orthogonal embeddings, lone anchor skipped") {
    auto b = make_batch({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, {0, 0, 1});
    CHECK(scl_loss(b, 1.0)->value() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("scl_loss: contract and config errors") {
    auto bad = make_batch({{1, 1}, {1, 0}}, {0, 0});
    CHECK_THROWS_AS(scl_loss(bad, 1.0), ContractError);
    auto ok = make_batch({{1, 0}, {0, 1}}, {0, 0});
    CHECK_THROWS_AS(scl_loss(ok, 0.0), ConfigError);
    CHECK_THROWS_AS(scl_loss(ok, -1.0), ConfigError);
}

TEST_CASE("scl_loss: nonnegative on random batches") {
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        auto b = random_batch(2 + 2 * rng.uniform_index(6), 4, 3, rng);
        CHECK(scl_loss(b, 0.5)->value() >= -1e-12);
    }
}

TEST_CASE("class_weights") {
    auto w = class_weights({0, 0, 1});
    CHECK(w.at(0) == doctest::Approx(0.5));
    CHECK(w.at(1) == doctest::Approx(1.0));

    auto balanced = class_weights({0, 0, 1, 1, 2, 2});
    for (const auto& [cls, weight] : balanced) CHECK(weight == doctest::Approx(0.5));

    auto single = class_weights({7, 7, 7, 7});
    CHECK(single.at(7) == doctest::Approx(0.25));
    CHECK(single.size() == 1);
}

TEST_CASE("crcl_loss: identical embeddings worked example") {
    auto b = make_batch({{1, 0}, {1, 0}, {1, 0}}, {0, 0, 1});
    CHECK(crcl_loss(b)->value() == doctest::Approx(2.0 * std::log(1.5)).epsilon(1e-12));
}

TEST_CASE("crcl_loss: orthogonal embeddings worked example") {
    auto b = make_batch({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, {0, 0, 1});
    CHECK(crcl_loss(b)->value() == doctest::Approx(2.0 * std::log(1.5)).epsilon(1e-12));
}

TEST_CASE("crcl_loss: weights forced to one reduce to scl at tau=1") {
    Rng rng(32);
    for (int trial = 0; trial < 20; ++trial) {
        auto b = random_batch(8, 5, 3, rng);
        std::map<std::size_t, double> ones;
        for (std::size_t y : b.labels) ones[y] = 1.0;
        const double lhs = crcl_loss_weighted(b, ones)->value();
        const double rhs = scl_loss(b, 1.0)->value();
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-13));
        CHECK(std::abs(lhs - rhs) <= 1e-12);
    }
}

TEST_CASE("crcl_loss: agrees with the brute-force oracle") {
    Rng rng(33);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + 2 * rng.uniform_index(8);  // 2..16
        auto b = random_batch(n, 4, 1 + rng.uniform_index(4), rng);
        CHECK(std::abs(crcl_loss(b)->value() - crcl_oracle(b)) <= 1e-9);
    }
}

TEST_CASE("losses are invariant to batch permutation") {
    Rng rng(34);
    auto b = random_batch(10, 6, 3, rng);
    const double scl0 = scl_loss(b, 0.7)->value();
    const double crcl0 = crcl_loss(b)->value();

    std::vector<std::size_t> perm(10);
    for (std::size_t i = 0; i < 10; ++i) perm[i] = i;
    rng.shuffle(perm);
    std::vector<double> flat(10 * 6);
    std::vector<std::size_t> labels(10);
    for (std::size_t i = 0; i < 10; ++i) {
        labels[i] = b.labels[perm[i]];
        for (std::size_t j = 0; j < 6; ++j)
            flat[i * 6 + j] = b.embeddings->data[perm[i] * 6 + j];
    }
    ContrastiveBatch shuffled;
    shuffled.embeddings = Tensor::make({10, 6}, std::move(flat));
    shuffled.labels = std::move(labels);

    CHECK(std::abs(scl_loss(shuffled, 0.7)->value() - scl0) <= 1e-10);
    CHECK(std::abs(crcl_loss(shuffled)->value() - crcl0) <= 1e-10);
}

TEST_CASE("logit_adjusted_ce: worked examples") {
    SUBCASE("zero logits, skewed prior, minority label") {
        auto logits = Tensor::zeros({1, 2});
        ClassPrior prior{{0.9, 0.1}};
        CHECK(logit_adjusted_ce(logits, {1}, prior)->value() ==
              doctest::Approx(-std::log(0.1)).epsilon(1e-12));
    }
    SUBCASE("zero logits, even prior") {
        auto logits = Tensor::zeros({1, 2});
        ClassPrior prior{{0.5, 0.5}};
        CHECK(logit_adjusted_ce(logits, {0}, prior)->value() ==
              doctest::Approx(std::log(2.0)).epsilon(1e-12));
        CHECK(logit_adjusted_ce(logits, {1}, prior)->value() ==
              doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("uniform prior reduces to plain cross-entropy") {
        Rng rng(35);
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t B = 1 + rng.uniform_index(8);
            const std::size_t C = 2 + rng.uniform_index(4);
            std::vector<double> vals(B * C);
            for (double& v : vals) v = 3.0 * rng.normal();
            auto logits = Tensor::make({B, C}, std::move(vals));
            std::vector<std::size_t> labels(B);
            for (auto& y : labels) y = rng.uniform_index(C);
            const double lhs = logit_adjusted_ce(logits, labels, ClassPrior::uniform(C))->value();
            const double rhs = cross_entropy(logits, labels)->value();
            CHECK(std::abs(lhs - rhs) <= 1e-12);
        }
    }
    SUBCASE("zero prior entry rejected") {
        auto logits = Tensor::zeros({1, 2});
        ClassPrior prior{{1.0, 0.0}};
        CHECK_THROWS_AS(logit_adjusted_ce(logits, {0}, prior), ConfigError);
    }
    SUBCASE("prior/logit class count mismatch") {
        auto logits = Tensor::zeros({1, 3});
        ClassPrior prior{{0.5, 0.5}};
        CHECK_THROWS_AS(logit_adjusted_ce(logits, {0}, prior), DimensionError);
    }
}

TEST_CASE("logit adjustment shifts decisions only across boundaries") {
    // argmax(f + tau log pi) with uniform prior equals plain argmax(f).
    Rng rng(36);
    const std::size_t C = 4;
    ClassPrior uniform = ClassPrior::uniform(C);
    std::vector<double> shift(C);
    for (std::size_t c = 0; c < C; ++c) shift[c] = std::log(uniform.pi[c]);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> f(C);
        for (double& v : f) v = rng.normal();
        std::size_t plain = 0, adjusted = 0;
        for (std::size_t c = 1; c < C; ++c) {
            if (f[c] > f[plain]) plain = c;
            if (f[c] + shift[c] > f[adjusted] + shift[adjusted]) adjusted = c;
        }
        CHECK(plain == adjusted);
    }
}

TEST_CASE("composite_loss") {
    CHECK(composite_loss(Tensor::scalar(0.0), Tensor::scalar(0.42))->value() ==
          doctest::Approx(0.42));
    CHECK(composite_loss(Tensor::scalar(0.42), Tensor::scalar(0.0))->value() ==
          doctest::Approx(0.42));
    const double expected = 2.0 * std::log(1.5) + std::log(2.0);
    CHECK(composite_loss(Tensor::scalar(2.0 * std::log(1.5)),
                         Tensor::scalar(std::log(2.0)))
              ->value() == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(1.5041).epsilon(1e-4));
}

TEST_CASE("loss gradients pass grad_check") {
    const double tol = 1e-3;
    SUBCASE("scl") {
        Rng rng(41);
        for (int trial = 0; trial < 20; ++trial) {
            auto b = random_batch(6, 4, 3, rng, true);
            auto f = [&]() { return detail::scl_loss_unchecked(b.embeddings, b.labels, 0.7); };
            CHECK(grad_check(f, {b.embeddings}, 1e-5, tol).passed);
        }
    }
    SUBCASE("crcl") {
        Rng rng(42);
        for (int trial = 0; trial < 20; ++trial) {
            auto b = random_batch(6, 4, 3, rng, true);
            auto w = class_weights(b.labels);
            auto f = [&]() { return detail::crcl_loss_unchecked(b.embeddings, b.labels, w); };
            CHECK(grad_check(f, {b.embeddings}, 1e-5, tol).passed);
        }
    }
    SUBCASE("logit-adjusted cross-entropy") {
        Rng rng(43);
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t B = 2 + rng.uniform_index(5);
            const std::size_t C = 2 + rng.uniform_index(4);
            std::vector<double> vals(B * C);
            for (double& v : vals) v = rng.normal();
            auto logits = Tensor::make({B, C}, std::move(vals), true);
            std::vector<std::size_t> labels(B);
            for (auto& y : labels) y = rng.uniform_index(C);
            ClassPrior prior = ClassPrior::from_labels(labels, C);
            bool all_present = true;
            for (double p : prior.pi) all_present = all_present && p > 0.0;
            if (!all_present) prior = ClassPrior::uniform(C);
            auto f = [&]() { return logit_adjusted_ce(logits, labels, prior, 1.0); };
            CHECK(grad_check(f, {logits}, 1e-5, tol).passed);
        }
    }
    SUBCASE("gradient flows through l2_normalize into the loss") {
        Rng rng(44);
        std::vector<double> vals(6 * 4);
        for (double& v : vals) v = rng.normal();
        auto u = Tensor::make({6, 4}, std::move(vals), true);
        std::vector<std::size_t> labels{0, 0, 1, 1, 2, 2};
        auto f = [&]() {
            ContrastiveBatch b{l2_normalize(u), labels};
            return crcl_loss(b);
        };
        CHECK(grad_check(f, {u}, 1e-5, tol).passed);
    }
}

TEST_CASE("crcl can be negative but stays finite") {
    // Minority-class weights < 1 can shrink the denominator below the
    // numerator term.
    Rng rng(45);
    for (int trial = 0; trial < 50; ++trial) {
        auto b = random_batch(12, 4, 2, rng);
        const double v = crcl_loss(b)->value();
        CHECK(std::isfinite(v));
    }
}
