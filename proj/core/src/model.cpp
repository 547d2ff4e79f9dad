#include "rbsde/model.hpp"

#include "rbsde/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rbsde {

namespace {

void require_finite(const std::string& name, double v) {
    if (!std::isfinite(v)) {
        throw EvaluationError(name, "coefficient '" + name + "' evaluated to a non-finite value");
    }
}

void require_finite(const std::string& name, std::span<const double> v) {
    for (double x : v) require_finite(name, x);
}

void require_size(const std::string& name, std::size_t got, std::size_t want) {
    if (got != want) {
        std::ostringstream os;
        os << "coefficient '" << name << "' returned " << got << " entries, expected " << want;
        throw EvaluationError(name, os.str());
    }
}

}  // namespace

Vector ModelSpec::drift(double t, std::span<const double> x, int regime) const {
    Vector b = drift_fn ? drift_fn(t, x, regime) : Vector(static_cast<std::size_t>(dim), 0.0);
    require_size("b", b.size(), static_cast<std::size_t>(dim));
    require_finite("b", b);
    return b;
}

Matrix ModelSpec::dispersion(double t, std::span<const double> x, int regime) const {
    const auto d = static_cast<std::size_t>(dim);
    Matrix s = dispersion_fn ? dispersion_fn(t, x, regime) : Matrix(d, d, 0.0);
    if (s.rows != d || s.cols != d) require_size("sigma", s.rows * s.cols, d * d);
    require_finite("sigma", s.data);
    return s;
}

Matrix ModelSpec::covariance(double t, std::span<const double> x, int regime) const {
    const Matrix s = dispersion(t, x, regime);
    const std::size_t d = s.rows;
    Matrix a(d, d, 0.0);
    for (std::size_t l = 0; l < d; ++l)
        for (std::size_t q = 0; q < d; ++q) {
            double acc = 0.0;
            for (std::size_t r = 0; r < d; ++r) acc += s(l, r) * s(q, r);
            a(l, q) = acc;
        }
    return a;
}

Vector ModelSpec::jump_size(double t, std::span<const double> x, int regime, std::size_t atom) const {
    const auto& y = jump_atoms.at(atom).location;
    Vector delta = jump_size_fn ? jump_size_fn(t, x, regime, y) : y;
    require_size("delta", delta.size(), static_cast<std::size_t>(dim));
    require_finite("delta", delta);
    return delta;
}

double ModelSpec::intensity(double t, std::span<const double> x, int regime, std::size_t atom) const {
    const double f = intensity_fn ? intensity_fn(t, x, regime, jump_atoms.at(atom).location) : 0.0;
    require_finite("f", f);
    return f;
}

Matrix ModelSpec::switching(double t, std::span<const double> x) const {
    const auto k = static_cast<std::size_t>(regimes);
    Matrix lam = switching_fn ? switching_fn(t, x) : Matrix(k, k, 0.0);
    if (lam.rows != k || lam.cols != k) require_size("lambda", lam.rows * lam.cols, k * k);
    require_finite("lambda", lam.data);
    return lam;
}

double ModelSpec::total_jump_mass() const {
    double total = 0.0;
    for (const auto& a : jump_atoms) total += a.mass;
    return total;
}

void validate_model(const ModelSpec& model, std::span<const double> times,
                    const std::vector<Vector>& points) {
    auto fail = [](const std::string& msg) { throw ModelError(msg); };
    if (model.dim < 1) fail("dimension d must be >= 1");
    if (model.regimes < 1) fail("regime count k must be >= 1");
    if (!(model.horizon > 0.0) || !std::isfinite(model.horizon)) fail("time horizon T must be positive");
    for (const auto& a : model.jump_atoms) {
        if (!(a.mass > 0.0) || !std::isfinite(a.mass)) fail("jump atom masses must be positive and finite");
        if (a.location.size() != static_cast<std::size_t>(model.dim)) fail("jump atom dimension mismatch");
    }
    if (model.intensity_bound < 0.0 || model.switching_bound < 0.0) fail("intensity bounds must be >= 0");

    const auto k = static_cast<std::size_t>(model.regimes);
    const auto d = static_cast<std::size_t>(model.dim);
    for (double t : times) {
        for (const auto& x : points) {
            if (x.size() != d) fail("sample point dimension mismatch");
            const Matrix lam = model.switching(t, x);
            for (std::size_t i = 0; i < k; ++i) {
                double row = 0.0;
                for (std::size_t j = 0; j < k; ++j) {
                    row += lam(i, j);
                    if (i == j) continue;
                    if (lam(i, j) < 0.0) fail("off-diagonal switching intensity is negative");
                    if (lam(i, j) > model.switching_bound) fail("switching intensity exceeds declared bound");
                }
                if (std::abs(row) > 1e-12) fail("switching intensity row does not sum to zero");
            }
            for (std::size_t i = 0; i < k; ++i) {
                const int regime = static_cast<int>(i);
                for (std::size_t y = 0; y < model.jump_atoms.size(); ++y) {
                    const double f = model.intensity(t, x, regime, y);
                    if (f < 0.0) fail("jump intensity is negative");
                    if (f > model.intensity_bound) fail("jump intensity exceeds declared bound F_max");
                    (void)model.jump_size(t, x, regime, y);
                }
                (void)model.drift(t, x, regime);
                // a = σσᵀ is symmetric by construction; check PSD with an LDLᵀ sweep.
                Matrix a = model.covariance(t, x, regime);
                const double scale = std::max(1.0, *std::max_element(a.data.begin(), a.data.end()));
                for (std::size_t c = 0; c < d; ++c) {
                    const double piv = a(c, c);
                    if (piv < -1e-10 * scale) fail("covariance a = sigma sigma^T is not positive semidefinite");
                    if (piv <= 1e-14 * scale) continue;
                    for (std::size_t r = c + 1; r < d; ++r) {
                        const double f = a(r, c) / piv;
                        for (std::size_t q = c; q < d; ++q) a(r, q) -= f * a(c, q);
                    }
                }
            }
        }
    }
}

double AffineCoefficient::component(std::size_t l, double x) const {
    const double c = l < constant.size() ? constant[l] : 0.0;
    const double s = l < linear.size() ? linear[l] : 0.0;
    return c + s * x;
}

ModelSpec make_parametric_model(const ParametricModel& p) {
    if (p.regimes.empty()) throw ConfigError("parametric model needs at least one regime");
    const auto k = p.regimes.size();
    const auto d = static_cast<std::size_t>(p.dim);
    if (!p.switching.empty() && p.switching.size() != k)
        throw ConfigError("switching matrix must be k x k");
    for (const auto& r : p.regimes)
        if (r.intensity.size() != p.jump_atoms.size() && !(r.intensity.empty() && p.jump_atoms.empty()))
            throw ConfigError("each regime needs one intensity per jump atom");

    Matrix lam(k, k, 0.0);
    double lam_max = 0.0;
    for (std::size_t i = 0; i < p.switching.size(); ++i) {
        if (p.switching[i].size() != k) throw ConfigError("switching matrix must be k x k");
        double row = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            if (i == j) continue;
            lam(i, j) = p.switching[i][j];
            row += lam(i, j);
            lam_max = std::max(lam_max, lam(i, j));
        }
        lam(i, i) = -row;
    }
    double f_max = 0.0;
    for (const auto& r : p.regimes)
        for (double f : r.intensity) f_max = std::max(f_max, f);

    ModelSpec m;
    m.dim = p.dim;
    m.regimes = static_cast<int>(k);
    m.horizon = p.horizon;
    m.jump_atoms = p.jump_atoms;
    m.intensity_bound = f_max;
    m.switching_bound = lam_max;
    m.time_homogeneous = true;

    auto regimes = p.regimes;
    m.drift_fn = [regimes, d](double, std::span<const double> x, int i) {
        Vector b(d);
        for (std::size_t l = 0; l < d; ++l) b[l] = regimes.at(static_cast<std::size_t>(i)).drift.component(l, x[l]);
        return b;
    };
    m.dispersion_fn = [regimes, d](double, std::span<const double> x, int i) {
        Matrix s(d, d, 0.0);
        for (std::size_t l = 0; l < d; ++l)
            s(l, l) = regimes.at(static_cast<std::size_t>(i)).dispersion.component(l, x[l]);
        return s;
    };
    m.jump_size_fn = [](double, std::span<const double>, int, std::span<const double> y) {
        return Vector(y.begin(), y.end());
    };
    auto atoms = p.jump_atoms;
    m.intensity_fn = [regimes, atoms](double, std::span<const double>, int i, std::span<const double> y) {
        const auto& r = regimes.at(static_cast<std::size_t>(i));
        for (std::size_t a = 0; a < atoms.size(); ++a)
            if (std::equal(y.begin(), y.end(), atoms[a].location.begin(), atoms[a].location.end()))
                return r.intensity.at(a);
        return 0.0;
    };
    m.switching_fn = [lam](double, std::span<const double>) { return lam; };
    return m;
}

double apply_generator(const ModelSpec& model, const TestFunction& u, double t,
                       std::span<const double> x, int regime) {
    if (!u.complete()) throw ConfigError("test function needs value, time derivative, gradient and hessian");
    const auto d = static_cast<std::size_t>(model.dim);

    const double dt_u = u.time_derivative(t, x, regime);
    const Vector grad = u.gradient(t, x, regime);
    const Matrix hess = u.hessian(t, x, regime);
    if (!std::isfinite(dt_u)) throw EvaluationError("u", "time derivative of u is not finite");
    require_finite("u", grad);
    require_finite("u", hess.data);

    // time + diffusion
    const Matrix a = model.covariance(t, x, regime);
    double diffusion = 0.0;
    for (std::size_t l = 0; l < d; ++l)
        for (std::size_t q = 0; q < d; ++q) diffusion += a(l, q) * hess(l, q);
    const double group1 = dt_u + 0.5 * diffusion;

    // compensated drift and jump integral
    Vector drift = model.drift(t, x, regime);
    const double u0 = u.value(t, x, regime);
    require_finite("u", u0);
    double jumps = 0.0;
    Vector shifted(x.begin(), x.end());
    for (std::size_t y = 0; y < model.jump_atoms.size(); ++y) {
        const double fm = model.intensity(t, x, regime, y) * model.jump_atoms[y].mass;
        if (fm == 0.0) continue;
        const Vector delta = model.jump_size(t, x, regime, y);
        for (std::size_t l = 0; l < d; ++l) {
            drift[l] -= delta[l] * fm;
            shifted[l] = x[l] + delta[l];
        }
        const double uy = u.value(t, shifted, regime);
        require_finite("u", uy);
        jumps += (uy - u0) * fm;
    }
    double group2 = 0.0;
    for (std::size_t l = 0; l < d; ++l) group2 += drift[l] * grad[l];

    // regime switching
    double group4 = 0.0;
    const Matrix lam = model.switching(t, x);
    for (int j = 0; j < model.regimes; ++j) {
        if (j == regime) continue;
        const double rate = lam(static_cast<std::size_t>(regime), static_cast<std::size_t>(j));
        if (rate == 0.0) continue;
        const double uj = u.value(t, x, j);
        require_finite("u", uj);
        group4 += rate * (uj - u0);
    }
    return group1 + group2 + jumps + group4;
}

MarkSpace::MarkSpace(ModelSpec model) : model_(std::move(model)) {
    for (std::size_t y = 0; y < model_.jump_atoms.size(); ++y)
        marks_.push_back({Mark::Kind::Jump, static_cast<int>(y)});
    for (int j = 0; j < model_.regimes; ++j) marks_.push_back({Mark::Kind::Regime, j});
}

double MarkSpace::rho(const Mark& e) const {
    if (e.kind == Mark::Kind::Jump) return model_.jump_atoms.at(static_cast<std::size_t>(e.index)).mass;
    return 1.0;
}

double MarkSpace::zeta(double t, std::span<const double> x, int regime, const Mark& e) const {
    if (e.kind == Mark::Kind::Jump) return model_.intensity(t, x, regime, static_cast<std::size_t>(e.index));
    if (e.index == regime) return 0.0;
    return model_.switching(t, x)(static_cast<std::size_t>(regime), static_cast<std::size_t>(e.index));
}

double MarkSpace::zeta_bound() const { return std::max(model_.intensity_bound, model_.switching_bound); }

double MarkSpace::compensator_rate(double t, std::span<const double> x, int regime,
                                   std::span<const std::size_t> atoms, std::optional<int> target) const {
    double rate = 0.0;
    for (std::size_t y : atoms) rate += model_.intensity(t, x, regime, y) * model_.jump_atoms.at(y).mass;
    if (target && *target != regime)
        rate += model_.switching(t, x)(static_cast<std::size_t>(regime), static_cast<std::size_t>(*target));
    return rate;
}

MarkSpace build_mark_space(const ModelSpec& model) { return MarkSpace(model); }

}  // namespace rbsde
