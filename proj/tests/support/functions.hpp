#pragma once

#include "rbsde/model.hpp"

#include <cmath>

namespace rbsde::testing {

inline TestFunction constant_function(double c) {
    TestFunction u;
    u.value = [c](double, std::span<const double>, int) { return c; };
    u.time_derivative = [](double, std::span<const double>, int) { return 0.0; };
    u.gradient = [](double, std::span<const double> x, int) { return Vector(x.size(), 0.0); };
    u.hessian = [](double, std::span<const double> x, int) { return Matrix(x.size(), x.size(), 0.0); };
    return u;
}

/// u = x_1 + shift_i, regime-dependent offset allowed.
inline TestFunction first_coordinate(Vector shift = {}) {
    TestFunction u;
    u.value = [shift](double, std::span<const double> x, int i) {
        return x[0] + (shift.empty() ? 0.0 : shift[static_cast<std::size_t>(i)]);
    };
    u.time_derivative = [](double, std::span<const double>, int) { return 0.0; };
    u.gradient = [](double, std::span<const double> x, int) {
        Vector g(x.size(), 0.0);
        g[0] = 1.0;
        return g;
    };
    u.hessian = [](double, std::span<const double> x, int) { return Matrix(x.size(), x.size(), 0.0); };
    return u;
}

inline TestFunction first_coordinate_squared() {
    TestFunction u;
    u.value = [](double, std::span<const double> x, int) { return x[0] * x[0]; };
    u.time_derivative = [](double, std::span<const double>, int) { return 0.0; };
    u.gradient = [](double, std::span<const double> x, int) {
        Vector g(x.size(), 0.0);
        g[0] = 2.0 * x[0];
        return g;
    };
    u.hessian = [](double, std::span<const double> x, int) {
        Matrix h(x.size(), x.size(), 0.0);
        h(0, 0) = 2.0;
        return h;
    };
    return u;
}

/// u = e^{ct} sin(x_1) (1 + i), smooth in every argument.
inline TestFunction wave(double c) {
    TestFunction u;
    u.value = [c](double t, std::span<const double> x, int i) { return std::exp(c * t) * std::sin(x[0]) * (1.0 + i); };
    u.time_derivative = [c](double t, std::span<const double> x, int i) {
        return c * std::exp(c * t) * std::sin(x[0]) * (1.0 + i);
    };
    u.gradient = [c](double t, std::span<const double> x, int i) {
        Vector g(x.size(), 0.0);
        g[0] = std::exp(c * t) * std::cos(x[0]) * (1.0 + i);
        return g;
    };
    u.hessian = [c](double t, std::span<const double> x, int i) {
        Matrix h(x.size(), x.size(), 0.0);
        h(0, 0) = -std::exp(c * t) * std::sin(x[0]) * (1.0 + i);
        return h;
    };
    return u;
}

/// Pure one-dimensional diffusion dX = b dt + s dB with constant coefficients.
inline ParametricModel constant_diffusion(double b, double s, double horizon = 1.0) {
    ParametricModel p;
    p.horizon = horizon;
    ParametricRegime r;
    r.drift = {{b}, {0.0}};
    r.dispersion = {{s}, {0.0}};
    p.regimes = {r};
    return p;
}

}  // namespace rbsde::testing
