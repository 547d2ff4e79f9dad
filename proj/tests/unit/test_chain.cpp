#include "doctest.h"

#include "support/functions.hpp"
#include "support/models.hpp"

#include "rbsde/chain.hpp"
#include "rbsde/errors.hpp"

#include <cmath>
#include <random>

using namespace rbsde;
using namespace rbsde::testing;

namespace {

void check_stochastic(const ChainApprox& chain) {
    for (std::size_t m = 0; m < chain.steps(); ++m) {
        const Kernel& K = chain.kernel(m);
        for (std::size_t s = 0; s < chain.states(); ++s) {
            double row = 0.0;
            for (std::size_t b = 0; b < K.branches; ++b) {
                CHECK(K.prob[K.index(s, b)] >= 0.0);
                row += K.prob[K.index(s, b)];
            }
            CHECK(std::abs(row - 1.0) <= 1e-12);
        }
    }
}

}  // namespace

TEST_CASE("zero coefficients give the identity kernel") {
    ParametricModel p = constant_diffusion(0.0, 0.0);
    p.regimes.push_back(p.regimes[0]);
    p.switching = {{0.0, 0.0}, {0.0, 0.0}};
    const ChainApprox chain = build_chain(make_parametric_model(p), 5, {0.0, 1.0, 11});
    const Vector id = [&] {
        Vector v(chain.states());
        for (std::size_t s = 0; s < v.size(); ++s) v[s] = static_cast<double>(s * s) + 0.5;
        return v;
    }();
    for (std::size_t m = 0; m < 5; ++m) CHECK(conditional_expectation(chain, m, id) == id);
    CHECK(chain.consistency().monotone);
}

TEST_CASE("pure diffusion stencil matches the first two moments") {
    const double sigma = 0.3, dt = 0.01, h = 0.1;
    const ChainApprox chain = build_chain(make_parametric_model(constant_diffusion(0.0, sigma)), 100, {-1.0, 1.0, 21});
    REQUIRE(chain.h() == doctest::Approx(h));
    const Kernel& K = chain.kernel(0);
    const std::size_t s = 10;
    const double side = sigma * sigma * dt / (2.0 * h * h);
    CHECK(K.prob[K.index(s, 0)] == doctest::Approx(side).epsilon(1e-14));
    CHECK(K.prob[K.index(s, 1)] == doctest::Approx(1.0 - 2.0 * side).epsilon(1e-14));
    CHECK(K.prob[K.index(s, 2)] == doctest::Approx(side).epsilon(1e-14));
    CHECK(K.stride[s] == 1);
    CHECK(chain.x(K.target[K.index(s, 0)]) == doctest::Approx(-h));
    CHECK(chain.x(K.target[K.index(s, 2)]) == doctest::Approx(h));
    check_stochastic(chain);
}

TEST_CASE("switch probability is lambda dt at every node") {
    ParametricModel p = constant_diffusion(0.0, 0.2);
    p.regimes.push_back(p.regimes[0]);
    p.switching = {{0.0, 0.5}, {0.5, 0.0}};
    const ChainApprox chain = build_chain(make_parametric_model(p), 100, {-1.0, 1.0, 21});
    REQUIRE(chain.dt() == doctest::Approx(0.01));
    const Kernel& K = chain.kernel(0);
    for (std::size_t s = 0; s < chain.states(); ++s) {
        CHECK(K.prob[K.index(s, 3)] == doctest::Approx(0.005).epsilon(1e-13));
        CHECK(chain.regime(K.target[K.index(s, 3)]) != chain.regime(s));
        CHECK(chain.x(K.target[K.index(s, 3)]) == chain.x(s));
    }
}

TEST_CASE("acceptance chain is stochastic, monotone and locally consistent") {
    const ChainApprox chain = acceptance_chain(4);
    check_stochastic(chain);
    const ConsistencyReport& c = chain.consistency();
    CHECK(c.monotone);
    CHECK(c.max_row_sum_error <= 1e-15);
    // Jumps leaving the grid are reflected at the edge, so the global snapping error
    // is only bounded by twice the jump size.
    CHECK(c.max_snapping_error <= 2.0 + 0.5 * chain.h());
    CHECK(c.reflected_states > 0);
    // Away from the boundary the central stencil reproduces b exactly (the jump drift
    // uses the snapped jump sizes) and the diffusion variance up to O(Δt).
    const Kernel& K = chain.kernel(0);
    for (std::size_t s = 0; s < chain.states(); ++s) {
        const double x = chain.x(s);
        if (x < 60.0 || x > 200.0) continue;
        CHECK(c.drift_residual[s] <= 1e-9 * std::max(1.0, x));
        const double a = std::pow((chain.regime(s) == 0 ? 0.2 : 0.3) * x, 2);
        CHECK(c.variance_residual[s] <= 1e-6 * a + 1e-9);
        // Jump probabilities f·m·Δt.
        CHECK(K.prob[K.index(s, 3)] == doctest::Approx(0.1 * chain.dt()).epsilon(1e-12));
        CHECK(std::abs(chain.x(K.target[K.index(s, 3)]) - (x + 1.0)) <= 0.5 * chain.h() + 1e-12);
        CHECK(std::abs(chain.x(K.target[K.index(s, 4)]) - (x - 1.0)) <= 0.5 * chain.h() + 1e-12);
    }
    const ChainApprox same = acceptance_chain(1);
    CHECK(same.kernel(0).prob == K.prob);
    CHECK(same.kernel(0).target == K.target);
}

TEST_CASE("strict stencil reports the admissible step") {
    ChainOptions strict;
    strict.max_stride = 1;
    try {
        (void)build_chain(acceptance_model(), kSteps, kGrid, strict);
        FAIL("expected a CFL build error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("largest admissible time step") != std::string::npos);
    }
    // A coarse enough step works with the strict stencil.
    CHECK_NOTHROW(build_chain(make_parametric_model(constant_diffusion(0.0, 0.2)), 10, {-1.0, 1.0, 11}, strict));
}

TEST_CASE("invalid chain requests") {
    ModelSpec two_d = acceptance_model();
    two_d.dim = 2;
    CHECK_THROWS_AS(build_chain(two_d, 10, kGrid), ConfigError);
    CHECK_THROWS_AS(build_chain(acceptance_model(), 0, kGrid), ConfigError);
    CHECK_THROWS_AS(build_chain(acceptance_model(), 10, {1.0, 0.0, 10}), ConfigError);
    CHECK_THROWS_AS(build_chain(acceptance_model(), 10, {0.0, 1.0, 1}), ConfigError);
    const ChainApprox chain = build_chain(acceptance_model(), 10, {20.0, 300.0, 50});
    CHECK_THROWS_AS(conditional_expectation(chain, 0, Vector(3, 0.0)), ConfigError);
}

TEST_CASE("conditional expectation") {
    const ChainApprox chain = build_chain(acceptance_model(), 20, {20.0, 300.0, 60});
    const std::size_t S = chain.states();
    SUBCASE("constants are preserved") {
        const Vector e = conditional_expectation(chain, 3, Vector(S, 2.5));
        for (double v : e) CHECK(v == doctest::Approx(2.5).epsilon(1e-15));
    }
    SUBCASE("indicator reads off a column") {
        const std::size_t target = chain.state(30, 1);
        Vector ind(S, 0.0);
        ind[target] = 1.0;
        const Vector e = conditional_expectation(chain, 0, ind);
        const Kernel& K = chain.kernel(0);
        for (std::size_t s = 0; s < S; ++s) {
            double col = 0.0;
            for (std::size_t b = 0; b < K.branches; ++b)
                if (K.target[K.index(s, b)] == target) col += K.prob[K.index(s, b)];
            CHECK(e[s] == col);
        }
    }
}

TEST_CASE("linear values on a pure-drift chain shift by b dt") {
    const double b = 0.4;
    const ChainApprox chain = build_chain(make_parametric_model(constant_diffusion(b, 0.0)), 50, {0.0, 2.0, 41});
    Vector x(chain.states());
    for (std::size_t s = 0; s < x.size(); ++s) x[s] = chain.x(s);
    const Vector e = conditional_expectation(chain, 0, x);
    const auto& resid = chain.consistency().drift_residual;
    std::size_t exact = 0;
    for (std::size_t s = 0; s < x.size(); ++s) {
        CHECK(std::abs(e[s] - (x[s] + b * chain.dt())) <= resid[s] * chain.dt() + 1e-12);
        exact += resid[s] <= 1e-12;
    }
    CHECK(exact >= x.size() - 2);
}

TEST_CASE("martingale components") {
    const ChainApprox chain = build_chain(acceptance_model(), 20, {20.0, 300.0, 60});
    const std::size_t S = chain.states(), A = chain.atoms(), k = chain.regimes();
    SUBCASE("constant values") {
        const auto c = martingale_components(chain, 2, Vector(S, 4.0));
        for (std::size_t s = 0; s < S; ++s) {
            CHECK(c.Z[s] == 0.0);
            for (std::size_t y = 0; y < A; ++y) CHECK(c.Vtilde[s * A + y] == 0.0);
            for (std::size_t j = 0; j < k; ++j) CHECK(c.Wtilde[s * k + j] == 0.0);
        }
    }
    SUBCASE("regime-only values") {
        const double u[2] = {1.5, -0.5};
        Vector v(S);
        for (std::size_t s = 0; s < S; ++s) v[s] = u[chain.regime(s)];
        const auto c = martingale_components(chain, 0, v);
        for (std::size_t s = 0; s < S; ++s) {
            const int i = chain.regime(s);
            CHECK(std::abs(c.Z[s]) <= 1e-12);
            for (std::size_t y = 0; y < A; ++y) CHECK(c.Vtilde[s * A + y] == 0.0);
            for (std::size_t j = 0; j < k; ++j)
                CHECK(c.Wtilde[s * k + j] == doctest::Approx(static_cast<int>(j) == i ? 0.0 : u[j] - u[i]));
        }
    }
    SUBCASE("values = x give Z close to sigma") {
        const ChainApprox diff = build_chain(make_parametric_model(constant_diffusion(0.05, 0.3)), 100, {-2.0, 2.0, 41});
        Vector v(diff.states());
        for (std::size_t s = 0; s < v.size(); ++s) v[s] = diff.x(s);
        const auto c = martingale_components(diff, 0, v);
        for (std::size_t s = 2; s + 2 < v.size(); ++s) CHECK(c.Z[s] == doctest::Approx(0.3).epsilon(1e-3));
    }
    SUBCASE("decomposition is exact for arbitrary values") {
        std::mt19937_64 rng(5);
        std::normal_distribution<double> g(0.0, 10.0);
        for (std::size_t m : {std::size_t{0}, std::size_t{7}, std::size_t{19}}) {
            Vector v(S);
            for (double& x : v) x = g(rng);
            const auto c = martingale_components(chain, m, v);
            CHECK(decomposition_residual(chain, m, v, c) <= 1e-12);
            const Vector e = conditional_expectation(chain, m, v);
            for (std::size_t s = 0; s < S; ++s) CHECK(c.expectation[s] == doctest::Approx(e[s]).epsilon(1e-13));
        }
    }
}

TEST_CASE("time-dependent coefficients get one kernel per step") {
    ModelSpec m = make_parametric_model(constant_diffusion(0.0, 0.2));
    m.time_homogeneous = false;
    m.drift_fn = [](double t, std::span<const double>, int) { return Vector{t}; };
    const ChainApprox chain = build_chain(m, 10, {-1.0, 1.0, 21});
    Vector x(chain.states());
    for (std::size_t s = 0; s < x.size(); ++s) x[s] = chain.x(s);
    const Vector e0 = conditional_expectation(chain, 0, x);
    const Vector e9 = conditional_expectation(chain, 9, x);
    CHECK(e0[10] == doctest::Approx(x[10]).epsilon(1e-14));
    CHECK(e9[10] == doctest::Approx(x[10] + chain.time(9) * chain.dt()).epsilon(1e-12));
}
