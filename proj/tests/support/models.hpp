#pragma once

#include "rbsde/analysis.hpp"
#include "rbsde/chain.hpp"
#include "rbsde/data_spec.hpp"
#include "rbsde/model.hpp"
#include "rbsde/solver.hpp"

#include <optional>

namespace rbsde::testing {

/// Two-regime jump diffusion used across the acceptance checks: geometric coefficients,
/// unit jumps up and down with intensity 0.1, symmetric switching at rate 0.5.
inline ParametricModel acceptance_parametric() {
    ParametricModel p;
    p.dim = 1;
    p.horizon = 1.0;
    ParametricRegime r1, r2;
    r1.drift = {{0.0}, {0.03}};
    r1.dispersion = {{0.0}, {0.2}};
    r1.intensity = {0.1, 0.1};
    r2.drift = {{0.0}, {0.01}};
    r2.dispersion = {{0.0}, {0.3}};
    r2.intensity = {0.1, 0.1};
    p.regimes = {r1, r2};
    p.jump_atoms = {{{1.0}, 1.0}, {{-1.0}, 1.0}};
    p.switching = {{0.0, 0.5}, {0.5, 0.0}};
    return p;
}

inline ModelSpec acceptance_model() { return make_parametric_model(acceptance_parametric()); }

inline constexpr double kX0 = 100.0;
inline constexpr std::size_t kSteps = 200;
inline const SpatialGrid kGrid{20.0, 300.0, 400};

inline ChainApprox acceptance_chain(unsigned threads = 1) {
    ChainOptions opt;
    opt.threads = threads;
    return build_chain(acceptance_model(), kSteps, kGrid, opt);
}

/// g̃ = −0.05 u^i, Ψ = x ∨ 100, ℓ = x ∨ 80 from φ = x, h = (x + 30) ∨ 110.
struct AcceptanceCosts {
    CostFunctions cost;
    CostFunctions::BarrierFn alpha;
};

inline AcceptanceCosts acceptance_costs(const ModelSpec& model, double psi_shift = 0.0) {
    AcceptanceCosts out;
    AffineDriver g;
    g.u_self = -0.05;
    out.cost.g_tilde = g.function();
    out.cost.lipschitz = g.lipschitz();
    out.cost.monotone_in_r = true;
    out.cost.psi = [psi_shift](std::span<const double> x, int) { return std::max(x[0], 100.0) + psi_shift; };
    ClampedAffine phi_line{0.0, 1.0, std::nullopt, std::nullopt};
    const PhiBarrier lb = lower_barrier_from_phi(phi_line.phi(), 80.0, model);
    out.cost.ell = lb.ell;
    out.alpha = lb.alpha;
    out.cost.h = ClampedAffine{30.0, 1.0, 110.0, std::nullopt}.barrier();
    return out;
}

inline ProblemData acceptance_data(const ChainApprox& chain, ProblemKind kind, const TauSpec& tau = {},
                                   double psi_shift = 0.0) {
    const AcceptanceCosts c = acceptance_costs(chain.model(), psi_shift);
    return assemble(kind, c.cost, chain, tau, c.alpha);
}

inline std::size_t acceptance_start(const ChainApprox& chain) { return chain.nearest_state(kX0, 0); }

}  // namespace rbsde::testing
