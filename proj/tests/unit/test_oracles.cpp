#include "doctest.h"

#include "oracles/oracles.hpp"
#include "support/functions.hpp"
#include "support/models.hpp"

#include <cmath>
#include <limits>

using namespace rbsde;
using namespace rbsde::testing;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Two regimes with frozen x and switching rate λ both ways.
ChainApprox frozen_switching_chain(double lambda, std::size_t steps) {
    ParametricModel p = constant_diffusion(0.0, 0.0);
    p.regimes.push_back(p.regimes[0]);
    p.switching = {{0.0, lambda}, {lambda, 0.0}};
    return build_chain(make_parametric_model(p), steps, {0.0, 1.0, 3});
}

}  // namespace

TEST_CASE("dense kernel rows are probability vectors") {
    const ChainApprox chain = build_chain(acceptance_model(), 5, {20.0, 300.0, 30});
    const auto P = oracle::dense_kernel(chain, 0);
    for (const auto& row : P) {
        double sum = 0.0;
        for (double p : row) {
            CHECK(p >= 0.0);
            sum += p;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-15));
    }
}

TEST_CASE("one-step means on a frozen switching chain") {
    const ChainApprox chain = frozen_switching_chain(0.5, 10);
    const double dt = chain.dt();
    const double v[6] = {1.0, 2.0, 3.0, 10.0, 20.0, 30.0};
    for (std::size_t s = 0; s < 6; ++s) {
        const double other = v[(s + 3) % 6];
        CHECK(oracle::one_step_mean(chain, 0, s, v, false) ==
              doctest::Approx((1.0 - 0.5 * dt) * v[s] + 0.5 * dt * other).epsilon(1e-14));
        CHECK(oracle::one_step_mean(chain, 0, s, v, true) == doctest::Approx(v[s]).epsilon(1e-14));
    }
}

TEST_CASE("unconstrained game is the iterated expectation") {
    const ChainApprox chain = build_chain(acceptance_model(), 6, {20.0, 300.0, 30});
    const std::size_t S = chain.states();
    auto psi = [&](std::size_t s) { return std::sin(chain.x(s) / 40.0) + chain.regime(s); };
    const auto v = oracle::dynkin_value(
        chain, [](std::size_t, std::size_t) { return -kInf; }, [](std::size_t, std::size_t) { return kInf; }, psi);
    Vector w(S);
    for (std::size_t s = 0; s < S; ++s) w[s] = psi(s);
    for (std::size_t m = chain.steps(); m-- > 0;) {
        w = conditional_expectation(chain, m, w);
        for (std::size_t s = 0; s < S; ++s) CHECK(v[m * S + s] == doctest::Approx(w[s]).epsilon(1e-13));
    }
}

TEST_CASE("coinciding payoffs fix the game value") {
    const ChainApprox chain = build_chain(acceptance_model(), 4, {20.0, 300.0, 30});
    const auto c = [](std::size_t, std::size_t) { return 7.0; };
    const auto v = oracle::dynkin_value_switch_free(chain, c, c, [](std::size_t) { return 7.0; });
    for (double x : v) CHECK(x == 7.0);
}

TEST_CASE("one-step game by hand") {
    ParametricModel p = acceptance_parametric();
    p.horizon = 0.1;
    const ChainApprox chain = build_chain(make_parametric_model(p), 1, {80.0, 120.0, 5});
    const std::size_t S = chain.states();
    const Kernel& K = chain.kernel(0);
    auto psi = [&](std::size_t s) { return chain.x(s) + 10.0 * chain.regime(s); };
    const auto lower = [](std::size_t, std::size_t s) { return s == 2 ? 200.0 : 0.0; };
    const auto upper = [](std::size_t, std::size_t s) { return s == 3 ? 50.0 : 1000.0; };
    const auto v = oracle::dynkin_value(chain, lower, upper, psi);
    for (std::size_t s = 0; s < S; ++s) {
        double mean = 0.0;
        for (std::size_t b = 0; b < K.branches; ++b) mean += K.prob[K.index(s, b)] * psi(K.target[K.index(s, b)]);
        const double expect = s == 2 ? 200.0 : s == 3 ? 50.0 : mean;
        CHECK(v[s] == doctest::Approx(expect).epsilon(1e-14));
        CHECK(v[S + s] == psi(s));
    }
}

TEST_CASE("discounted stopping on a frozen chain has a closed form") {
    // Nothing moves and the switch-free mean of v is v itself, so
    // v_m = max(1, 2 (1 − rΔt)^{M−m}).
    const std::size_t M = 40;
    const ChainApprox chain = frozen_switching_chain(0.0, M);
    const double r = 3.0, dt = chain.dt();
    const auto v = oracle::snell_value(
        chain, r, [](std::size_t, std::size_t) { return 1.0; }, [](std::size_t) { return 2.0; });
    for (std::size_t m = 0; m <= M; ++m) {
        const double held = 2.0 * std::pow(1.0 - r * dt, static_cast<double>(M - m));
        for (std::size_t s = 0; s < chain.states(); ++s)
            CHECK(v[m * chain.states() + s] == doctest::Approx(std::max(1.0, held)).epsilon(1e-13));
    }
}

TEST_CASE("switching is invisible to the switch-free game") {
    const ChainApprox fast = frozen_switching_chain(2.0, 20);
    auto psi = [](std::size_t s) { return s < 3 ? 1.0 : 5.0; };
    const auto none = [](std::size_t, std::size_t) { return -kInf; };
    const auto all = [](std::size_t, std::size_t) { return kInf; };
    const auto sf = oracle::dynkin_value_switch_free(fast, none, all, psi);
    const auto plain = oracle::dynkin_value(fast, none, all, psi);
    CHECK(sf[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(sf[3] == doctest::Approx(5.0).epsilon(1e-14));
    // With switching the values mix towards 3: (1 − 2λΔt)^M from the distance.
    const double decay = std::pow(1.0 - 4.0 * fast.dt(), 20.0);
    CHECK(plain[0] == doctest::Approx(3.0 - 2.0 * decay).epsilon(1e-12));
    CHECK(plain[3] == doctest::Approx(3.0 + 2.0 * decay).epsilon(1e-12));
}
