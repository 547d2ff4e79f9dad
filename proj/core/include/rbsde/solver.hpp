#pragma once

#include "rbsde/chain.hpp"
#include "rbsde/data_spec.hpp"
#include "rbsde/verdict.hpp"

#include <cstdint>
#include <memory>
#include <vector>

namespace rbsde {

struct SolveOptions {
    unsigned threads = 1;
    /// Solve y = E + Δt g(y, …) by fixed-point iteration instead of evaluating g at E.
    bool implicit = false;
    double implicit_tolerance = 1e-12;
    std::size_t implicit_max_iterations = 200;
};

struct SolutionDiagnostics {
    double max_constraint_violation = 0.0;   ///< max of (L − Y)⁺, (Y − U)⁺ over active nodes
    double max_negative_increment = 0.0;     ///< max of (−ΔK±)⁺
    double max_singularity = 0.0;            ///< max of min(ΔK⁺, ΔK⁻)
    double minimality_residual = 0.0;        ///< max |Y − L| over ΔK⁺ > 0 and |U − Y| over ΔK⁻ > 0
    double equation_residual = 0.0;          ///< max |Y − (E + Δt g + ΔK⁺ − ΔK⁻)|
    std::size_t contact_nodes = 0;
    std::size_t implicit_iterations = 0;

    bool holds(double tol = 1e-12) const {
        return max_constraint_violation <= tol && max_negative_increment <= tol && max_singularity <= tol &&
               minimality_residual <= tol && equation_residual <= tol;
    }
};

/// Discrete solution on the chain. Node arrays are indexed [m · S + s]; per-step arrays
/// ([m < M]) hold what was computed at step m from the values at m + 1. Reflection is
/// stored as per-node increments ΔK±; cumulative K± is a path functional.
struct SolutionQuadruple {
    ProblemKind kind = ProblemKind::BSDE;
    std::size_t steps = 0;
    std::size_t states = 0;
    std::size_t atoms = 0;
    std::size_t regimes = 0;
    double dt = 0.0;

    Vector Y;          ///< [(M+1)·S]
    Vector Z;          ///< [M·S]
    Vector Z_perp;     ///< [M·S] orthogonal diffusion component of the chain
    Vector Vtilde;     ///< [M·S·A]
    Vector Wtilde;     ///< [M·S·k]
    Vector dKplus;     ///< [M·S]
    Vector dKminus;    ///< [M·S]
    Vector cont;       ///< [M·S] conditional expectation of the next values
    Vector G;          ///< [M·S] driver value used at the node
    /// 1 where the backward recursion ran; 0 on frozen nodes (τ already reached
    /// for the random-terminal problem) and at m = M.
    std::vector<std::uint8_t> live;
    /// For first-hitting τ: the doubly reflected solution that takes over once τ is reached.
    /// Y at a node with τ reached equals after_tau->Y there.
    std::shared_ptr<const SolutionQuadruple> after_tau;
    SolutionDiagnostics diagnostics;

    double y(std::size_t m, std::size_t s) const { return Y[m * states + s]; }
    double z(std::size_t m, std::size_t s) const { return Z[m * states + s]; }
    double kplus(std::size_t m, std::size_t s) const { return dKplus[m * states + s]; }
    double kminus(std::size_t m, std::size_t s) const { return dKminus[m * states + s]; }
    bool is_live(std::size_t m, std::size_t s) const { return live[m * states + s] != 0; }
    std::span<const double> vtilde(std::size_t m, std::size_t s) const {
        return {Vtilde.data() + (m * states + s) * atoms, atoms};
    }
    std::span<const double> wtilde(std::size_t m, std::size_t s) const {
        return {Wtilde.data() + (m * states + s) * regimes, regimes};
    }
};

/// Backward dynamic programming on the chain for every problem kind. Refuses Δt·Λ ≥ 1.
SolutionQuadruple solve(const ChainApprox& chain, const ProblemData& data, const SolveOptions& options = {});

/// τ-activated doubly reflected problem assembled from an R2BSDE solve and a
/// random-terminal RBSDE solve with terminal value Ŷ_τ at τ.
SolutionQuadruple paste_tau(const ChainApprox& chain, const ProblemData& data_r2, const TauSpec& tau,
                            const SolveOptions& options = {});

/// Recomputes every structural invariant of `sol` from scratch.
SolutionDiagnostics check_invariants(const ChainApprox& chain, const ProblemData& data,
                                     const SolutionQuadruple& sol);

/// Largest nodewise difference between two solutions over all stored arrays
/// (including the post-τ layer); infinity if the shapes differ.
double max_difference(const SolutionQuadruple& a, const SolutionQuadruple& b);

/// Per contact node: ΔK⁺/Δt ≤ 1{Y = L}(g⁻ + α) + tol, with tol the chain's drift
/// consistency residual at the node plus a rounding allowance.
Verdict kplus_density_check(const ChainApprox& chain, const ProblemData& data, const SolutionQuadruple& sol);

/// Verdict form of check_invariants.
Verdict reflection_check(const ChainApprox& chain, const ProblemData& data, const SolutionQuadruple& sol,
                         double tol = 1e-12);

}  // namespace rbsde
