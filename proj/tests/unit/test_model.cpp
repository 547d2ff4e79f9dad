#include "doctest.h"

#include "support/functions.hpp"
#include "support/models.hpp"

#include "rbsde/errors.hpp"
#include "rbsde/model.hpp"

#include <cmath>
#include <limits>
#include <random>

using namespace rbsde;
using namespace rbsde::testing;

namespace {

TestFunction combine(double a, const TestFunction& u, double b, const TestFunction& v) {
    TestFunction w;
    w.value = [=](double t, std::span<const double> x, int i) { return a * u.value(t, x, i) + b * v.value(t, x, i); };
    w.time_derivative = [=](double t, std::span<const double> x, int i) {
        return a * u.time_derivative(t, x, i) + b * v.time_derivative(t, x, i);
    };
    w.gradient = [=](double t, std::span<const double> x, int i) {
        Vector g = u.gradient(t, x, i), h = v.gradient(t, x, i);
        for (std::size_t l = 0; l < g.size(); ++l) g[l] = a * g[l] + b * h[l];
        return g;
    };
    w.hessian = [=](double t, std::span<const double> x, int i) {
        Matrix g = u.hessian(t, x, i), h = v.hessian(t, x, i);
        for (std::size_t l = 0; l < g.data.size(); ++l) g.data[l] = a * g.data[l] + b * h.data[l];
        return g;
    };
    return w;
}

ParametricModel random_model(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0), p(0.0, 1.0);
    ParametricModel m;
    m.jump_atoms = {{{u(rng)}, 0.5 + p(rng)}, {{u(rng)}, 0.5 + p(rng)}};
    for (int i = 0; i < 3; ++i) {
        ParametricRegime r;
        r.drift = {{u(rng)}, {u(rng)}};
        r.dispersion = {{0.1 + p(rng)}, {0.2 * u(rng)}};
        r.intensity = {p(rng), p(rng)};
        m.regimes.push_back(r);
    }
    m.switching.assign(3, Vector(3, 0.0));
    for (auto& row : m.switching)
        for (auto& v : row) v = p(rng);
    return m;
}

}  // namespace

TEST_CASE("generator vanishes on constants") {
    const ModelSpec m = acceptance_model();
    const double x[1] = {97.0};
    CHECK(apply_generator(m, constant_function(5.0), 0.3, x, 0) == 0.0);
    CHECK(apply_generator(m, constant_function(5.0), 0.3, x, 1) == 0.0);
}

TEST_CASE("generator of the first coordinate is the drift") {
    ParametricModel p = acceptance_parametric();
    p.switching = {{0.0, 0.0}, {0.0, 0.0}};
    for (auto& r : p.regimes) r.intensity = {0.0, 0.0};
    const ModelSpec m = make_parametric_model(p);
    const double x[1] = {120.0};
    CHECK(apply_generator(m, first_coordinate(), 0.0, x, 0) == doctest::Approx(0.03 * 120.0).epsilon(1e-14));
    CHECK(apply_generator(m, first_coordinate(), 0.0, x, 1) == doctest::Approx(0.01 * 120.0).epsilon(1e-14));
}

TEST_CASE("jump compensation leaves the drift of x unchanged") {
    // With jumps the compensated drift b − Σ δ f m and the jump integral Σ δ f m cancel.
    const ModelSpec m = acceptance_model();
    const double x[1] = {120.0};
    CHECK(apply_generator(m, first_coordinate(), 0.0, x, 0) == doctest::Approx(3.6).epsilon(1e-14));
}

TEST_CASE("generator of x squared matches a one-step weak expansion") {
    // Independent check: the Euler step x + bΔt + σ√Δt ξ has E[u] computed exactly by
    // three-point Gauss–Hermite; Richardson extrapolation of (E[u] − u)/Δt removes the
    // O(Δt) term and leaves 𝒢u.
    const double b = 0.7, s = 0.4, x0 = 1.3;
    const ModelSpec m = make_parametric_model(constant_diffusion(b, s));
    const double x[1] = {x0};
    const double gen = apply_generator(m, first_coordinate_squared(), 0.0, x, 0);
    CHECK(gen == doctest::Approx(2.0 * x0 * b + s * s).epsilon(1e-14));

    auto step_mean = [&](double dt) {
        const double nodes[3] = {-std::sqrt(3.0), 0.0, std::sqrt(3.0)};
        const double weights[3] = {1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0};
        double e = 0.0;
        for (int q = 0; q < 3; ++q) {
            const double y = x0 + b * dt + s * std::sqrt(dt) * nodes[q];
            e += weights[q] * y * y;
        }
        return e;
    };
    const double dt = 1e-3;
    const double d1 = (step_mean(dt) - x0 * x0) / dt;
    const double d2 = (step_mean(dt / 2) - x0 * x0) / (dt / 2);
    CHECK(2.0 * d2 - d1 == doctest::Approx(gen).epsilon(1e-9));
}

TEST_CASE("generator is linear on random coefficient draws") {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int draw = 0; draw < 20; ++draw) {
        const ModelSpec m = make_parametric_model(random_model(rng));
        const double a = u(rng), b = u(rng);
        const TestFunction f = wave(0.3), g = first_coordinate_squared();
        const double x[1] = {u(rng)};
        const double t = 0.5 * (u(rng) + 2.0);
        for (int i = 0; i < 3; ++i) {
            const double lhs = apply_generator(m, combine(a, f, b, g), t, x, i);
            const double rhs = a * apply_generator(m, f, t, x, i) + b * apply_generator(m, g, t, x, i);
            CHECK(std::abs(lhs - rhs) <= 1e-10);
        }
    }
}

TEST_CASE("regime switching enters through the value differences") {
    ParametricModel p = constant_diffusion(0.0, 0.0);
    p.regimes.push_back(p.regimes[0]);
    p.switching = {{0.0, 0.5}, {0.25, 0.0}};
    const ModelSpec m = make_parametric_model(p);
    const double x[1] = {2.0};
    // u = x + (0, 3): 𝒢u = λ_ij (u^j − u^i).
    CHECK(apply_generator(m, first_coordinate({0.0, 3.0}), 0.0, x, 0) == doctest::Approx(1.5));
    CHECK(apply_generator(m, first_coordinate({0.0, 3.0}), 0.0, x, 1) == doctest::Approx(-0.75));
}

TEST_CASE("switching rows sum to zero and zeta respects its bound") {
    std::mt19937_64 rng(7);
    const ModelSpec m = make_parametric_model(random_model(rng));
    const MarkSpace E = build_mark_space(m);
    for (double t : {0.0, 0.4, 1.0})
        for (double xv : {-3.0, 0.0, 2.5}) {
            const double x[1] = {xv};
            const Matrix lam = m.switching(t, x);
            for (std::size_t i = 0; i < 3; ++i) {
                double row = 0.0;
                for (std::size_t j = 0; j < 3; ++j) row += lam(i, j);
                CHECK(std::abs(row) <= 1e-12);
                for (const Mark& e : E.marks()) CHECK(E.zeta(t, x, static_cast<int>(i), e) <= E.zeta_bound());
            }
        }
    CHECK_NOTHROW(validate_model(m, std::vector<double>{0.0, 1.0}, {{-1.0}, {1.0}}));
}

TEST_CASE("mark space counts and zeta") {
    SUBCASE("no atoms, one regime") {
        const MarkSpace E = build_mark_space(make_parametric_model(constant_diffusion(0.1, 0.2)));
        REQUIRE(E.size() == 1);
        CHECK(E.marks()[0].kind == Mark::Kind::Regime);
        const double x[1] = {1.0};
        CHECK(E.zeta(0.0, x, 0, E.marks()[0]) == 0.0);
    }
    SUBCASE("two atoms, three regimes") {
        std::mt19937_64 rng(3);
        const ModelSpec m = make_parametric_model(random_model(rng));
        const MarkSpace E = build_mark_space(m);
        CHECK(E.size() == 5);
        const double x[1] = {0.5};
        const Mark own{Mark::Kind::Regime, 1};
        CHECK(E.zeta(0.0, x, 1, own) == 0.0);
        const Mark other{Mark::Kind::Regime, 2};
        CHECK(E.zeta(0.0, x, 1, other) == m.switching(0.0, x)(1, 2));
        const Mark jump{Mark::Kind::Jump, 0};
        CHECK(E.zeta(0.0, x, 1, jump) == m.intensity(0.0, x, 1, 0));
        CHECK(E.rho(jump) == m.jump_atoms[0].mass);
        CHECK(E.rho(other) == 1.0);
    }
}

TEST_CASE("compensator rate of a mark set") {
    const ModelSpec m = acceptance_model();
    const MarkSpace E = build_mark_space(m);
    const double x[1] = {100.0};
    const std::size_t both[2] = {0, 1};
    CHECK(E.compensator_rate(0.0, x, 0, both, 1) == doctest::Approx(0.1 + 0.1 + 0.5));
    CHECK(E.compensator_rate(0.0, x, 0, both, 0) == doctest::Approx(0.2));
    CHECK(E.compensator_rate(0.0, x, 1, {}, 0) == doctest::Approx(0.5));
}

TEST_CASE("model invariant violations are reported") {
    ModelSpec m = acceptance_model();
    SUBCASE("negative switching intensity") {
        m.switching_fn = [](double, std::span<const double>) {
            Matrix l(2, 2, 0.0);
            l(0, 1) = -0.1;
            l(0, 0) = 0.1;
            return l;
        };
        CHECK_THROWS_AS(validate_model(m, std::vector<double>{0.0}, {{100.0}}), ModelError);
    }
    SUBCASE("rows not summing to zero") {
        m.switching_fn = [](double, std::span<const double>) {
            Matrix l(2, 2, 0.0);
            l(0, 1) = 0.1;
            return l;
        };
        m.switching_bound = 1.0;
        CHECK_THROWS_AS(validate_model(m, std::vector<double>{0.0}, {{100.0}}), ModelError);
    }
    SUBCASE("intensity above the declared bound") {
        m.intensity_bound = 0.05;
        CHECK_THROWS_AS(validate_model(m, std::vector<double>{0.0}, {{100.0}}), ModelError);
    }
    SUBCASE("non-positive atom mass") {
        m.jump_atoms[0].mass = 0.0;
        CHECK_THROWS_AS(validate_model(m, std::vector<double>{0.0}, {{100.0}}), ModelError);
    }
    SUBCASE("non-finite drift names the coefficient") {
        m.drift_fn = [](double, std::span<const double>, int) { return Vector{std::numeric_limits<double>::quiet_NaN()}; };
        const double x[1] = {1.0};
        try {
            (void)apply_generator(m, first_coordinate(), 0.0, x, 0);
            FAIL("expected an evaluation error");
        } catch (const EvaluationError& e) {
            CHECK(e.coefficient() == "b");
        }
    }
}

TEST_CASE("parametric family rejects malformed declarations") {
    ParametricModel p = acceptance_parametric();
    p.regimes[0].intensity = {0.1};
    CHECK_THROWS_AS(make_parametric_model(p), ConfigError);
    p = acceptance_parametric();
    p.switching = {{0.0, 0.5}};
    CHECK_THROWS_AS(make_parametric_model(p), ConfigError);
}
