#pragma once

#include "rbsde/chain.hpp"
#include "rbsde/data_spec.hpp"
#include "rbsde/solver.hpp"
#include "rbsde/verdict.hpp"

#include <span>
#include <vector>

namespace rbsde {

struct NormOptions {
    unsigned threads = 1;
    /// Threshold count for the level-set evaluation of E[sup_t |·|²]. With at most this
    /// many distinct reachable values the result is exact; otherwise a bracket is reported.
    std::size_t max_levels = 512;
};

/// E[sup_t v²] with its bracket [lower, upper]; lower == upper when exact.
struct SupNorm {
    double value = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    bool exact = true;
};

struct NormReport {
    SupNorm s2_Y;
    double h2_Z = 0.0;
    double hmu2_V = 0.0;
    double s2_Kplus = 0.0;    ///< E[(K⁺_T)²]
    double s2_Kminus = 0.0;   ///< E[(K⁻_T)²]

    double xi2 = 0.0;         ///< E[ξ²]
    double g0_h2 = 0.0;       ///< ‖g(·, 0, 0, 0)‖² in ℋ²
    SupNorm s2_L;
    SupNorm s2_U;
    double alpha_h2 = 0.0;    ///< ‖α‖² in ℋ², proxy for the decreasing part of L

    /// Φ proxy: ‖ξ‖² + ‖g(0,0,0)‖² + ‖L‖² + ‖U‖² + ‖α‖².
    double data_size() const { return xi2 + g0_h2 + s2_L.value + s2_U.value + alpha_h2; }
    double solution_size() const { return s2_Y.value + h2_Z + hmu2_V + s2_Kplus + s2_Kminus; }
};

/// Norms of a chain solution started from `start` (a chain state), by exact dynamic
/// programming over the chain law: ℋ² norms through the forward occupation measure,
/// 𝒮² norms through level sets of the running maximum, K± through E[K_T²].
NormReport norms(const ChainApprox& chain, const ProblemData& data, const SolutionQuadruple& sol,
                 std::size_t start, const NormOptions& options = {});

/// Norms of the difference of two solutions on one chain.
struct DifferenceNorms {
    SupNorm s2_Y;
    double h2_Z = 0.0;
    double hmu2_V = 0.0;
    double kplus = 0.0;       ///< E[(Σ|ΔK⁺ − ΔK⁺′|)²], an upper bound of the 𝒮² norm of K⁺ − K⁺′
    double kminus = 0.0;
    double xi2 = 0.0;
    double g_h2 = 0.0;        ///< ‖g(Y′,Z′,V′) − g′(Y′,Z′,V′)‖² in ℋ²
    SupNorm s2_L;
    SupNorm s2_U;

    double solution() const { return s2_Y.value + h2_Z + hmu2_V + kplus + kminus; }
    /// Data side with unsquared barrier-difference norms weighted by √Φ.
    double rhs_unsquared(double phi) const;
    /// Data side with squared barrier-difference norms.
    double rhs_squared() const { return xi2 + g_h2 + s2_L.value + s2_U.value; }
    /// (‖Y‖² + ‖Z‖² + ‖V‖²) / (‖ξ‖² + ‖g‖²); 0 when both vanish.
    double common_barrier_ratio() const;
};

DifferenceNorms difference_norms(const ChainApprox& chain, const ProblemData& data_n, const SolutionQuadruple& sol_n,
                                 const ProblemData& data_p, const SolutionQuadruple& sol_p, std::size_t start,
                                 const NormOptions& options = {});

struct AprioriReport {
    std::vector<NormReport> norms;                ///< per entry
    std::vector<DifferenceNorms> differences;     ///< per entry, against the reference entry
    std::size_t reference = 0;
    double max_size_ratio = 0.0;                  ///< max solution_size / (1 + data_size)
    Verdict bounded;                              ///< solution norms finite and bounded by the data
    Verdict trend;                                ///< differences decrease along the sequence
    Verdict common_barrier;                       ///< ratio finite when the barriers coincide
};

/// Norm and difference tables over a sequence of problems on one chain. The trend
/// verdict checks that the difference to `reference` decreases, within 1e−12, along
/// the remaining entries in order.
AprioriReport apriori_report(const ChainApprox& chain, std::span<const ProblemData> data,
                             std::span<const SolutionQuadruple> sols, std::size_t reference, std::size_t start,
                             const NormOptions& options = {});

/// Coefficients of a linear driver βy + πz + κ Σ_e V(e) η(e) ζ(e) ρ(e), per node [m · S + s];
/// η per mark [(m · S + s) · (A + k) + e] with marks = atoms then regimes.
struct LinearCoefficients {
    Vector beta;
    Vector pi;
    Vector kappa;
    Vector eta;
};

/// Branch factors of the discrete adjoint: Γ_{m+1} = Γ_m (1 + D), with
///   D = βΔt + πΔB̂ − κΔt Σ_e ηζρ / p_D   on diffusion branches,
///   D = βΔt + κη(e)                      on the branch of mark e,
/// so that E[D | s] = βΔt exactly.
struct AdjointPath {
    std::size_t steps = 0;
    std::size_t states = 0;
    std::size_t branches = 0;
    Vector factor;          ///< [m][s][branch], 1 + D
    /// E[Γ_m 1{state_m = s, m ≤ τ}] from the start state: Γ-weighted occupation stopped at τ.
    Vector gamma_mass;      ///< [(M+1)·S]
    double min_factor = 1.0;
    double max_factor = 1.0;
};

AdjointPath adjoint_gamma(const ChainApprox& chain, const LinearCoefficients& coeffs, std::size_t start,
                          const ResolvedTau& tau = {});

struct LinearProblem {
    LinearCoefficients coeffs;
    Vector increments;      ///< ΔA per node [M·S]
    Vector terminal;        ///< ξ per state, used at τ (or at T)
    ResolvedTau tau;
};

struct LinearCheck {
    double y0 = 0.0;
    double representation = 0.0;   ///< E[Γ_τ Y_τ + Σ_{m<τ} Γ_m ΔA_m]
    double residual = 0.0;
    Vector Y;                      ///< [(M+1)·S]
};

/// Solves the linear BSDE on the chain and evaluates its adjoint representation.
LinearCheck linear_representation_check(const ChainApprox& chain, const LinearProblem& problem, std::size_t start);

struct ComparisonOptions {
    double tolerance = 1e-12;
    /// Run the ordering check although g is not declared monotone in r; the verdict
    /// is then informational (NOT-APPLICABLE) and reports whether the ordering held.
    bool counterexample = false;
};

/// Verifies the comparison hypotheses nodewise, then Y ≤ Y′ everywhere.
Verdict comparison_check(const ChainApprox& chain, const ProblemData& data, const SolutionQuadruple& sol,
                         const ProblemData& data_prime, const SolutionQuadruple& sol_prime,
                         const ComparisonOptions& options = {});

}  // namespace rbsde
