#include <doctest.h>

#include <cmath>
#include <vector>

#include "pfssl/errors.hpp"
#include "pfssl/nn.hpp"
#include "pfssl/rng.hpp"
#include "support.hpp"

using namespace pfssl;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("deterministic forward equals the scalar oracle bitwise") {
    for (auto act : {Activation::relu, Activation::tanh, Activation::identity}) {
        const auto spec = fixture::net({3, 5, 4, 3}, 0.5, act);
        const auto p = fixture::random_params(spec, 11);
        Rng rng(3);
        for (int rep = 0; rep < 20; ++rep) {
            const auto x = random_vec(rng, 3);
            const auto got = forward(p, x, ForwardMode::deterministic());
            const auto want = oracle::scalar_forward(*spec, p.values(), x);
            for (std::size_t c = 0; c < 3; ++c) CHECK(got[c] == want.probs[c]);
        }
    }
}

TEST_CASE("dropout forward equals the oracle under the documented keep pattern") {
    const auto spec = fixture::net({2, 6, 6, 3}, 0.3);
    const auto p = fixture::random_params(spec, 5);
    Rng rng(9);
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const auto x = random_vec(rng, 2);
        const auto got = forward(p, x, ForwardMode::dropout_sample(seed));
        const auto want = oracle::scalar_forward(*spec, p.values(), x, oracle::dropout_pattern(*spec, seed));
        for (std::size_t c = 0; c < 3; ++c) CHECK(got[c] == want.probs[c]);
    }
}

TEST_CASE("averaging logits over every mask recovers the deterministic logits") {
    // one hidden layer at rate 0.5: each of the 2^h masks is equally likely
    // and the output is linear in the scaled hidden units
    const std::size_t h = 6;
    const auto spec = fixture::net({2, h, 3}, 0.5);
    const auto p = fixture::random_params(spec, 21);
    const std::vector<double> x{0.4, -1.3};
    std::vector<double> mean(3, 0.0);
    for (std::size_t bits = 0; bits < (1u << h); ++bits) {
        std::vector<std::vector<std::uint8_t>> masks(1, std::vector<std::uint8_t>(h));
        for (std::size_t o = 0; o < h; ++o) masks[0][o] = (bits >> o) & 1u;
        const auto z = forward_logits_masked(p, x, masks);
        for (std::size_t c = 0; c < 3; ++c) mean[c] += z[c] / static_cast<double>(1u << h);
    }
    const auto det = forward_logits(p, x, ForwardMode::deterministic());
    for (std::size_t c = 0; c < 3; ++c) CHECK(mean[c] == doctest::Approx(det[c]).epsilon(1e-12));
}

TEST_CASE("cross-entropy and KL worked examples") {
    const auto p = softmax(std::vector<double>{0.0, std::log(3.0)});
    CHECK(p[0] == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(p[1] == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(cross_entropy(p, 0) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
    CHECK(kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0, 0.0}) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(kl_divergence(std::vector<double>{0.2, 0.8}, std::vector<double>{0.2, 0.8}) == 0.0);
    // clamp keeps a zero prediction finite
    CHECK(cross_entropy(std::vector<double>{0.0, 1.0}, 0) == doctest::Approx(-std::log(1e-12)));
    CHECK(std::isfinite(kl_divergence(std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 1.0})));
}

TEST_CASE("softmax is stable for large logits") {
    const auto p = softmax(std::vector<double>{1000.0, 1000.0, -1000.0});
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] == doctest::Approx(0.5));
    CHECK(p[2] == 0.0);
}

TEST_CASE("analytic gradients match central differences") {
    Rng rng(77);
    for (int rep = 0; rep < 10; ++rep) {
        const auto act = rep % 2 == 0 ? Activation::relu : Activation::tanh;
        const auto spec = fixture::net({3, 4, 3}, 0.25, act);
        const auto p = fixture::random_params(spec, 100 + rep, 0.8);
        std::vector<std::vector<double>> xs, ts;
        std::vector<Example> batch;
        std::vector<oracle::OracleExample> obatch;
        const bool kl = rep % 3 == 0;
        for (int i = 0; i < 4; ++i) {
            xs.push_back(random_vec(rng, 3));
            ts.push_back(softmax(random_vec(rng, 3)));
        }
        for (int i = 0; i < 4; ++i) {
            const std::uint64_t seed = rng();
            const std::size_t label = rng.below(3);
            Example e{xs[i], label, {}, ForwardMode::dropout_sample(seed)};
            if (kl) e.target = ts[i];
            batch.push_back(e);
            obatch.push_back({xs[i], label, kl ? ts[i] : std::vector<double>{}, oracle::dropout_pattern(*spec, seed)});
        }
        const auto lg = loss_and_gradient(p, batch, kl ? LossKind::kl_divergence : LossKind::cross_entropy);
        CHECK(lg.loss == doctest::Approx(oracle::scalar_loss(*spec, p.values(), obatch)).epsilon(1e-12));
        const auto fd = oracle::finite_difference(*spec, p.values(), obatch);
        CHECK(oracle::relative_error(lg.gradient, fd.grad, fd.usable) < 1e-5);
    }
}

TEST_CASE("sgd with momentum worked example") {
    const auto spec = fixture::net({1, 2}, 0.0);
    ModelParams p(spec, {1.0, 2.0, 0.0, 0.0});
    OptimState opt(4, 0.1, 0.9);
    const std::vector<double> g{0.5, -1.0, 0.0, 0.0};
    sgd_step(p, g, opt);
    CHECK(p.values()[0] == doctest::Approx(0.95));
    CHECK(p.values()[1] == doctest::Approx(2.1));
    sgd_step(p, g, opt);
    CHECK(opt.momentum_buffer[0] == doctest::Approx(0.95));
    CHECK(p.values()[0] == doctest::Approx(0.855));
    CHECK(p.values()[1] == doctest::Approx(2.29));
}

TEST_CASE("init_params draws Glorot weights and zero biases") {
    const auto spec = fixture::net({4, 6, 3});
    const auto p = init_params(spec, 1);
    for (std::size_t l = 0; l < spec->layer_count(); ++l) {
        const std::size_t in = spec->layer_widths[l];
        const std::size_t out = spec->layer_widths[l + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        const std::size_t off = spec->weight_offset(l);
        for (std::size_t i = 0; i < in * out; ++i) CHECK(std::abs(p.values()[off + i]) <= bound);
        for (std::size_t o = 0; o < out; ++o) CHECK(p.values()[off + in * out + o] == 0.0);
    }
    CHECK(init_params(spec, 1) == p);
    CHECK_FALSE(init_params(spec, 2) == p);
}

TEST_CASE("dropout rate zero keeps every unit") {
    for (std::uint64_t s = 0; s < 50; ++s) CHECK(dropout_keeps(s, 0, s % 7, 0.0));
}

TEST_CASE("invalid shapes are rejected") {
    NetSpec bad;
    bad.layer_widths = {3};
    CHECK_THROWS(bad.validate());
    const auto spec = fixture::net({2, 2});
    CHECK_THROWS(ModelParams(spec, std::vector<double>{1.0}));
}

}
