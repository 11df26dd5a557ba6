#include <doctest.h>

#include <stdexcept>

#include <Eigen/Dense>
#include <cmath>

#include "matfield/nn.hpp"
#include "matfield/rng.hpp"
#include "oracles.hpp"

using namespace matfield;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_matrix(int rows, int cols, Rng& rng, double scale = 1.0) {
    MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

}  // namespace

TEST_CASE("silu backward matches finite differences") {
    Rng rng(3);
    const MatrixXd x = random_matrix(4, 5, rng, 2.0);
    const MatrixXd dy = random_matrix(4, 5, rng);
    const MatrixXd dx = nn::silu_backward(x, dy);
    const double step = 1e-6;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        MatrixXd hi = x, lo = x;
        hi.data()[i] += step;
        lo.data()[i] -= step;
        const double fd =
            ((nn::silu_forward(hi) - nn::silu_forward(lo)).cwiseProduct(dy)).sum() /
            (2.0 * step);
        CHECK(dx.data()[i] == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("layer norm backward matches finite differences") {
    Rng rng(5);
    const int dim = 6, batch = 3;
    const VectorXd gain = random_matrix(dim, 1, rng).col(0);
    const VectorXd bias = random_matrix(dim, 1, rng).col(0);
    const MatrixXd x = random_matrix(dim, batch, rng, 1.5);
    const MatrixXd dy = random_matrix(dim, batch, rng);

    nn::LayerNormCache cache;
    nn::layernorm_forward(gain, bias, x, cache);
    VectorXd dgain = VectorXd::Zero(dim), dbias = VectorXd::Zero(dim);
    const MatrixXd dx = nn::layernorm_backward(gain, cache, dy, &dgain, &dbias);

    auto eval = [&](const VectorXd& g, const VectorXd& b, const MatrixXd& xin) {
        nn::LayerNormCache c;
        return (nn::layernorm_forward(g, b, xin, c).cwiseProduct(dy)).sum();
    };
    const double step = 1e-6;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        MatrixXd hi = x, lo = x;
        hi.data()[i] += step;
        lo.data()[i] -= step;
        const double fd = (eval(gain, bias, hi) - eval(gain, bias, lo)) / (2.0 * step);
        CHECK(dx.data()[i] == doctest::Approx(fd).epsilon(1e-4));
    }
    for (int i = 0; i < dim; ++i) {
        VectorXd hi = gain, lo = gain;
        hi(i) += step;
        lo(i) -= step;
        const double fd = (eval(hi, bias, x) - eval(lo, bias, x)) / (2.0 * step);
        CHECK(dgain(i) == doctest::Approx(fd).epsilon(1e-4));
    }
    for (int i = 0; i < dim; ++i) {
        VectorXd hi = bias, lo = bias;
        hi(i) += step;
        lo(i) -= step;
        const double fd = (eval(gain, hi, x) - eval(gain, lo, x)) / (2.0 * step);
        CHECK(dbias(i) == doctest::Approx(fd).epsilon(1e-4));
    }
}

TEST_CASE("trunk backward matches finite differences over all parameters") {
    nn::ParamSet params;
    const nn::TrunkShape shape{3, 12, 6, 3};
    const nn::TrunkParams trunk = nn::make_trunk(params, shape, "t");
    Rng rng(11);
    nn::init_trunk(params, trunk, rng);

    const MatrixXd x = random_matrix(3, 4, rng);
    const MatrixXd dy = random_matrix(12, 4, rng);

    nn::TrunkCache cache;
    nn::trunk_forward(params, trunk, x, nullptr, cache, "t");
    nn::ParamSet grads = nn::ParamSet::zeros_like(params);
    nn::trunk_backward(params, trunk, cache, dy, &grads);

    auto eval = [&]() {
        nn::TrunkCache c;
        return (nn::trunk_forward(params, trunk, x, nullptr, c, "t").cwiseProduct(dy)).sum();
    };
    const auto res = oracles::finite_difference_check(params, grads, eval, {});
    CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("trunk input gradient matches finite differences") {
    nn::ParamSet params;
    const nn::TrunkShape shape{2, 8, 4, 2};
    const nn::TrunkParams trunk = nn::make_trunk(params, shape, "t");
    Rng rng(13);
    nn::init_trunk(params, trunk, rng);

    MatrixXd x = random_matrix(2, 3, rng);
    const MatrixXd dy = random_matrix(8, 3, rng);
    nn::TrunkCache cache;
    nn::trunk_forward(params, trunk, x, nullptr, cache, "t");
    const MatrixXd dx = nn::trunk_backward(params, trunk, cache, dy, nullptr);

    const double step = 1e-6;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double orig = x.data()[i];
        nn::TrunkCache c;
        x.data()[i] = orig + step;
        const double hi =
            (nn::trunk_forward(params, trunk, x, nullptr, c, "t").cwiseProduct(dy)).sum();
        x.data()[i] = orig - step;
        const double lo =
            (nn::trunk_forward(params, trunk, x, nullptr, c, "t").cwiseProduct(dy)).sum();
        x.data()[i] = orig;
        CHECK(dx.data()[i] == doctest::Approx((hi - lo) / (2.0 * step)).epsilon(1e-4));
    }
}

TEST_CASE("dropout masks scale kept activations and zero dropped ones") {
    const nn::TrunkShape shape{3, 16, 8, 3};
    Rng rng(17);
    const auto masks = nn::make_dropout_masks(shape, 10, 0.5, rng);
    REQUIRE(masks.size() == 4);
    for (const auto& m : masks)
        for (Eigen::Index i = 0; i < m.size(); ++i)
            CHECK((m.data()[i] == 0.0 || m.data()[i] == doctest::Approx(2.0)));
    CHECK(nn::make_dropout_masks(shape, 10, 0.0, rng).empty());
}

TEST_CASE("global norm clipping rescales to the bound") {
    nn::ParamSet g;
    g.add("a", 2, 2);
    g.add("b", 3, 1);
    g[0] << 3.0, 0.0, 0.0, 4.0;
    g[1] << 0.0, 0.0, 0.0;
    CHECK(std::sqrt(g.squared_norm()) == doctest::Approx(5.0));
    nn::clip_global_norm(g, 2.5);
    CHECK(std::sqrt(g.squared_norm()) == doctest::Approx(2.5));
    nn::clip_global_norm(g, 100.0);  // below the bound: unchanged
    CHECK(std::sqrt(g.squared_norm()) == doctest::Approx(2.5));
}

TEST_CASE("AdamW takes a decoupled weight-decay step") {
    nn::ParamSet p;
    p.add("w", 1, 1);
    p[0](0, 0) = 1.0;
    nn::ParamSet g = nn::ParamSet::zeros_like(p);
    g[0](0, 0) = 0.5;

    nn::AdamW opt;
    opt.weight_decay = 0.1;
    opt.init(p);
    opt.step(p, g, 0.01);
    // First step: mhat = g, vhat = g^2, so delta = lr*(sign(g) + wd*p).
    const double expected = 1.0 - 0.01 * (0.5 / (std::sqrt(0.25) + 1e-8) + 0.1 * 1.0);
    CHECK(p[0](0, 0) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("flat scalar addressing round-trips") {
    nn::ParamSet p;
    p.add("a", 2, 3);
    p.add("b", 1, 4);
    REQUIRE(p.scalar_count() == 10);
    for (std::size_t i = 0; i < 10; ++i) p.set_scalar(i, static_cast<double>(i));
    for (std::size_t i = 0; i < 10; ++i) CHECK(p.get_scalar(i) == static_cast<double>(i));
    CHECK_THROWS_AS(p.get_scalar(10), std::out_of_range);
}
