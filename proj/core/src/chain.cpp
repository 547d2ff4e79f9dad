#include "rbsde/chain.hpp"

#include "rbsde/errors.hpp"
#include "rbsde/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace rbsde {

namespace {

/// Rounds a probability down to a multiple of 2⁻⁵². Sums and differences of such
/// numbers in [0, 1] are exact, so the stay weight 1 − Σ others makes every row sum
/// to exactly one and conditional expectations carry no normalisation bias.
double on_lattice(double p) { return std::ldexp(std::floor(std::ldexp(p, 52)), -52); }

/// Mirror an out-of-range node index at the boundary, then clamp.
std::size_t reflect(long n, std::size_t nodes, bool& reflected) {
    const long last = static_cast<long>(nodes) - 1;
    long r = n;
    if (r < 0) r = -r;
    if (r > last) r = 2 * last - r;
    r = std::clamp(r, 0L, last);
    reflected = reflected || r != n;
    return static_cast<std::size_t>(r);
}

struct StateDiagnostics {
    double drift_residual = 0.0;
    double variance_residual = 0.0;
    double snapping_error = 0.0;
    double row_sum_error = 0.0;
    double dt_max = std::numeric_limits<double>::infinity();
    bool reflected = false;
    bool upwind = false;
    bool feasible = true;
    bool monotone = true;
};

void build_state(const ChainApprox& chain, const ModelSpec& model, double t, std::size_t s,
                 std::size_t max_stride, Kernel& K, StateDiagnostics& diag) {
    const double dt = chain.dt();
    const double h = chain.h();
    const std::size_t nodes = chain.nodes();
    const std::size_t atoms = chain.atoms();
    const std::size_t k = chain.regimes();
    const auto n = static_cast<long>(s % nodes);
    const int i = chain.regime(s);
    const double xs = chain.x(s);
    const double xv[1] = {xs};

    const double b = model.drift(t, xv, i)[0];
    const double a = model.covariance(t, xv, i)(0, 0);
    const double sig = model.dispersion(t, xv, i)(0, 0);
    const double sign = sig < 0.0 ? -1.0 : 1.0;

    double rate = 0.0;
    double jump_mean = 0.0;
    double p_marks = 0.0;
    for (std::size_t y = 0; y < atoms; ++y) {
        const double delta = model.jump_size(t, xv, i, y)[0];
        const double fm = model.intensity(t, xv, i, y) * model.jump_atoms[y].mass;
        bool refl = false;
        const auto snapped = reflect(std::lround((xs + delta - chain.grid().lower) / h), nodes, refl);
        const double dhat = chain.x(snapped) - xs;
        diag.snapping_error = std::max(diag.snapping_error, std::abs(dhat - delta));
        diag.reflected = diag.reflected || refl;
        const auto idx = K.index(s, 3 + y);
        K.target[idx] = static_cast<std::uint32_t>(chain.state(snapped, i));
        K.prob[idx] = on_lattice(fm * dt);
        p_marks += K.prob[idx];
        rate += fm;
        jump_mean += dhat * fm;
    }
    const Matrix lam = model.switching(t, xv);
    for (std::size_t slot = 0; slot + 1 < k; ++slot) {
        const int j = chain.switch_target(i, slot);
        const double l = lam(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        const auto idx = K.index(s, 3 + atoms + slot);
        K.target[idx] = static_cast<std::uint32_t>(chain.state(static_cast<std::size_t>(n), j));
        K.prob[idx] = on_lattice(l * dt);
        p_marks += K.prob[idx];
        rate += l;
    }
    const double p_diff = 1.0 - p_marks;
    const double mu = b - jump_mean;

    // Smallest stride with a nonnegative stay probability; central moments when the
    // diffusion dominates the drift at that stride, upwind otherwise.
    const std::size_t q_limit = max_stride == 0 ? std::max<std::size_t>(1, nodes - 1) : max_stride;
    double pu = 0.0, pd = 0.0;
    std::size_t q = 1;
    bool found = false;
    bool upwind = false;
    if (p_diff >= 0.0) {
        for (q = 1; q <= q_limit; ++q) {
            const double qh = static_cast<double>(q) * h;
            const double A = a * dt / (qh * qh);
            const double B = mu * dt / qh;
            upwind = a < std::abs(mu) * qh;
            if (!upwind) {
                pu = 0.5 * (A + B);
                pd = 0.5 * (A - B);
            } else {
                pu = 0.5 * A + std::max(B, 0.0);
                pd = 0.5 * A + std::max(-B, 0.0);
            }
            if (p_diff - pu - pd >= 0.0) {
                found = true;
                break;
            }
        }
    }
    {
        const double qh = static_cast<double>(std::min(q, q_limit)) * h;
        const bool up = a < std::abs(mu) * qh;
        diag.dt_max = 1.0 / (a / (qh * qh) + (up ? std::abs(mu) / qh : 0.0) + rate);
    }
    if (!found) {
        diag.feasible = false;
        return;
    }
    diag.upwind = upwind;
    pu = on_lattice(pu);
    pd = on_lattice(pd);
    const double pm = p_diff - pu - pd;

    const long ql = static_cast<long>(q);
    bool refl = false;
    const std::size_t tgt[3] = {reflect(n - ql, nodes, refl), static_cast<std::size_t>(n),
                                reflect(n + ql, nodes, refl)};
    diag.reflected = diag.reflected || refl;
    const double pr[3] = {pd, pm, pu};
    double disp[3];
    double mean_d = 0.0;
    double second = 0.0;
    for (std::size_t br = 0; br < 3; ++br) {
        const auto idx = K.index(s, br);
        K.target[idx] = static_cast<std::uint32_t>(chain.state(tgt[br], i));
        K.prob[idx] = pr[br];
        disp[br] = chain.x(tgt[br]) - xs;
        mean_d += pr[br] * disp[br];
        second += pr[br] * disp[br] * disp[br];
    }
    K.p_diffusion[s] = p_diff;
    K.stride[s] = static_cast<std::uint32_t>(q);

    // ΔB̂: centred, normalised diffusion displacement; ΔB̂⊥ spans the rest of the
    // zero-mean functions on the three diffusion branches.
    const double m_d = p_diff > 0.0 ? mean_d / p_diff : 0.0;
    double var = 0.0;
    double c[3];
    for (std::size_t br = 0; br < 3; ++br) {
        c[br] = disp[br] - m_d;
        var += pr[br] * c[br] * c[br];
    }
    double db[3] = {0.0, 0.0, 0.0};
    if (var > 0.0) {
        const double scale = std::sqrt(dt / var);
        for (std::size_t br = 0; br < 3; ++br) db[br] = sign * c[br] * scale;
    }
    double e[3];
    double e_mean = 0.0;
    for (std::size_t br = 0; br < 3; ++br) {
        e[br] = c[br] * c[br];
        e_mean += pr[br] * e[br];
    }
    e_mean = p_diff > 0.0 ? e_mean / p_diff : 0.0;
    double e_db = 0.0, e_norm = 0.0;
    for (std::size_t br = 0; br < 3; ++br) {
        e[br] -= e_mean;
        e_db += pr[br] * e[br] * db[br];
        e_norm += pr[br] * e[br] * e[br];
    }
    double n2 = 0.0;
    for (std::size_t br = 0; br < 3; ++br) {
        if (var > 0.0) e[br] -= e_db / dt * db[br];
        n2 += pr[br] * e[br] * e[br];
    }
    const bool has_perp = n2 > 0.0 && n2 > 1e-28 * e_norm;
    for (std::size_t br = 0; br < 3; ++br) {
        K.dB[s * 3 + br] = db[br];
        K.dB_perp[s * 3 + br] = has_perp ? e[br] * std::sqrt(dt / n2) : 0.0;
    }

    double row = 0.0;
    double mean_inc = mean_d;
    for (std::size_t br = 0; br < K.branches; ++br) {
        const double p = K.prob[K.index(s, br)];
        diag.monotone = diag.monotone && p >= 0.0;
        row += p;
    }
    for (std::size_t y = 0; y < atoms; ++y)
        mean_inc += K.prob[K.index(s, 3 + y)] * (chain.x(K.target[K.index(s, 3 + y)]) - xs);
    diag.row_sum_error = std::abs(row - 1.0);
    diag.drift_residual = std::abs(mean_inc / dt - b);
    diag.variance_residual = std::abs(second / dt - a);
}

}  // namespace

ChainApprox::ChainApprox(ModelSpec model, std::size_t steps, SpatialGrid grid)
    : model_(std::move(model)), steps_(steps), grid_(grid) {
    if (model_.dim != 1) throw ConfigError("the chain approximation supports d = 1 only");
    if (steps_ < 1) throw ConfigError("chain needs at least one time step");
    if (grid_.nodes < 2) throw ConfigError("chain needs at least two spatial nodes");
    if (!(grid_.upper > grid_.lower)) throw ConfigError("chain bounds must satisfy lower < upper");
    if (!(model_.horizon > 0.0)) throw ConfigError("time horizon must be positive");
    dt_ = model_.horizon / static_cast<double>(steps_);
    h_ = (grid_.upper - grid_.lower) / static_cast<double>(grid_.nodes - 1);
}

std::size_t ChainApprox::nearest_state(double xv, int reg) const {
    const double r = std::round((xv - grid_.lower) / h_);
    const double c = std::clamp(r, 0.0, static_cast<double>(grid_.nodes - 1));
    return state(static_cast<std::size_t>(c), reg);
}

ChainApprox build_chain(const ModelSpec& model, std::size_t steps, const SpatialGrid& grid,
                        const ChainOptions& options) {
    ChainApprox chain(model, steps, grid);
    const std::size_t S = chain.states();
    const std::size_t branches = 3 + chain.atoms() + chain.regimes() - 1;
    const std::size_t n_kernels = model.time_homogeneous ? 1 : steps;

    ConsistencyReport& rep = chain.report_;
    rep.drift_residual.assign(S, 0.0);
    rep.variance_residual.assign(S, 0.0);
    std::vector<StateDiagnostics> diag(S);

    chain.kernels_.resize(n_kernels);
    for (std::size_t kk = 0; kk < n_kernels; ++kk) {
        Kernel& K = chain.kernels_[kk];
        K.branches = branches;
        K.target.assign(S * branches, 0);
        K.prob.assign(S * branches, 0.0);
        K.dB.assign(S * 3, 0.0);
        K.dB_perp.assign(S * 3, 0.0);
        K.p_diffusion.assign(S, 0.0);
        K.stride.assign(S, 1);
        const double t = chain.time(kk);
        parallel_for(S, options.threads, [&](std::size_t s0, std::size_t s1) {
            for (std::size_t s = s0; s < s1; ++s) {
                diag[s] = {};
                build_state(chain, chain.model(), t, s, options.max_stride, K, diag[s]);
            }
        });

        double dt_admissible = std::numeric_limits<double>::infinity();
        std::size_t bad = S;
        for (std::size_t s = 0; s < S; ++s) {
            dt_admissible = std::min(dt_admissible, diag[s].dt_max);
            if (!diag[s].feasible && bad == S) bad = s;
        }
        if (bad != S) {
            std::ostringstream msg;
            msg << "negative stencil probability at x=" << chain.x(bad) << ", regime " << chain.regime(bad) + 1
                << ", t=" << t << " (dt=" << chain.dt() << "); largest admissible time step is "
                << dt_admissible;
            throw ConfigError(msg.str());
        }
        for (std::size_t s = 0; s < S; ++s) {
            const auto& d = diag[s];
            rep.drift_residual[s] = std::max(rep.drift_residual[s], d.drift_residual);
            rep.variance_residual[s] = std::max(rep.variance_residual[s], d.variance_residual);
            rep.max_snapping_error = std::max(rep.max_snapping_error, d.snapping_error);
            rep.max_row_sum_error = std::max(rep.max_row_sum_error, d.row_sum_error);
            rep.monotone = rep.monotone && d.monotone;
            rep.max_stride = std::max<std::size_t>(rep.max_stride, K.stride[s]);
            if (kk == 0) {
                rep.reflected_states += d.reflected ? 1 : 0;
                rep.upwind_states += d.upwind ? 1 : 0;
            }
        }
    }
    for (std::size_t s = 0; s < S; ++s) {
        rep.max_drift_residual = std::max(rep.max_drift_residual, rep.drift_residual[s]);
        rep.max_variance_residual = std::max(rep.max_variance_residual, rep.variance_residual[s]);
    }
    chain.kernel_of_step_.resize(steps);
    for (std::size_t m = 0; m < steps; ++m) chain.kernel_of_step_[m] = model.time_homogeneous ? 0 : m;
    return chain;
}

Vector conditional_expectation(const ChainApprox& chain, std::size_t m, std::span<const double> values) {
    if (m >= chain.steps()) throw ConfigError("time index out of range");
    if (values.size() != chain.states()) throw ConfigError("value vector does not match the chain state count");
    const Kernel& K = chain.kernel(m);
    Vector out(chain.states());
    for (std::size_t s = 0; s < out.size(); ++s) {
        double acc = 0.0;
        for (std::size_t b = 0; b < K.branches; ++b) acc += K.prob[K.index(s, b)] * values[K.target[K.index(s, b)]];
        out[s] = acc;
    }
    return out;
}

MartingaleComponents martingale_components(const ChainApprox& chain, std::size_t m,
                                           std::span<const double> values) {
    if (m >= chain.steps()) throw ConfigError("time index out of range");
    if (values.size() != chain.states()) throw ConfigError("value vector does not match the chain state count");
    const Kernel& K = chain.kernel(m);
    const std::size_t S = chain.states();
    const std::size_t A = chain.atoms();
    const std::size_t k = chain.regimes();
    const double dt = chain.dt();

    MartingaleComponents c;
    c.expectation.resize(S);
    c.continuation.resize(S);
    c.Z.resize(S);
    c.Z_perp.resize(S);
    c.Vtilde.assign(S * A, 0.0);
    c.Wtilde.assign(S * k, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
        // Sums are taken relative to the stay value so that rounding scales with the
        // one-step variation of v rather than with |v|; ΔB̂ and ΔB̂⊥ have zero mean.
        const double anchor = values[K.target[K.index(s, 1)]];
        double cont = 0.0, z = 0.0, zp = 0.0;
        for (std::size_t b = 0; b < 3; ++b) {
            const auto idx = K.index(s, b);
            const double pv = K.prob[idx] * (values[K.target[idx]] - anchor);
            cont += pv;
            z += pv * K.dB[s * 3 + b];
            zp += pv * K.dB_perp[s * 3 + b];
        }
        const double pD = K.p_diffusion[s];
        cont = pD > 0.0 ? anchor + cont / pD : 0.0;
        double e = cont;
        for (std::size_t y = 0; y < A; ++y) {
            const auto idx = K.index(s, 3 + y);
            const double v = values[K.target[idx]] - cont;
            c.Vtilde[s * A + y] = v;
            e += K.prob[idx] * v;
        }
        const int i = chain.regime(s);
        for (std::size_t slot = 0; slot + 1 < k; ++slot) {
            const auto idx = K.index(s, 3 + A + slot);
            const double w = values[K.target[idx]] - cont;
            c.Wtilde[s * k + static_cast<std::size_t>(chain.switch_target(i, slot))] = w;
            e += K.prob[idx] * w;
        }
        c.continuation[s] = cont;
        c.expectation[s] = e;
        c.Z[s] = z / dt;
        c.Z_perp[s] = zp / dt;
    }
    return c;
}

double decomposition_residual(const ChainApprox& chain, std::size_t m, std::span<const double> values,
                              const MartingaleComponents& c) {
    const Kernel& K = chain.kernel(m);
    const std::size_t A = chain.atoms();
    const std::size_t k = chain.regimes();
    double worst = 0.0;
    for (std::size_t s = 0; s < chain.states(); ++s) {
        const int i = chain.regime(s);
        double comp_mean = 0.0;  // Σ_y Ṽ p_y + Σ_j W̃ p_j
        for (std::size_t y = 0; y < A; ++y) comp_mean += c.Vtilde[s * A + y] * K.prob[K.index(s, 3 + y)];
        for (std::size_t slot = 0; slot + 1 < k; ++slot)
            comp_mean += c.Wtilde[s * k + static_cast<std::size_t>(chain.switch_target(i, slot))] *
                         K.prob[K.index(s, 3 + A + slot)];
        for (std::size_t b = 0; b < K.branches; ++b) {
            const auto idx = K.index(s, b);
            if (K.prob[idx] <= 0.0) continue;
            double rhs = -comp_mean;
            if (b < 3) {
                rhs += c.Z[s] * K.dB[s * 3 + b] + c.Z_perp[s] * K.dB_perp[s * 3 + b];
            } else if (b < 3 + A) {
                rhs += c.Vtilde[s * A + (b - 3)];
            } else {
                rhs += c.Wtilde[s * k + static_cast<std::size_t>(chain.switch_target(i, b - 3 - A))];
            }
            const double lhs = values[K.target[idx]] - c.expectation[s];
            worst = std::max(worst, std::abs(lhs - rhs));
        }
    }
    return worst;
}

}  // namespace rbsde
