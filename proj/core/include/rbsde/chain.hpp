#pragma once

#include "rbsde/model.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace rbsde {

struct SpatialGrid {
    double lower = 0.0;
    double upper = 1.0;
    std::size_t nodes = 2;
};

struct ChainOptions {
    unsigned threads = 1;
    /// Largest admissible diffusion stride in grid cells; 0 means unlimited.
    /// With 1 the stencil is the nearest-neighbour trinomial and an infeasible
    /// Δt is reported as a build error.
    std::size_t max_stride = 0;
};

/// One-step transition kernel with a fixed branch layout per state:
///   [0,3)            diffusion moves down / stay / up by the state's stride
///   [3, 3+A)         jump to the node nearest x + δ(atom)
///   [3+A, 3+A+k−1)   switch to each other regime, in increasing regime order
struct Kernel {
    std::size_t branches = 0;
    std::vector<std::uint32_t> target;   ///< [state][branch]
    std::vector<double> prob;            ///< [state][branch]
    /// Normalised diffusion-increment proxy ΔB̂ and its orthogonal complement on
    /// the three diffusion branches; zero on mark branches. E[ΔB̂²] = Δt.
    std::vector<double> dB;              ///< [state][3]
    std::vector<double> dB_perp;         ///< [state][3]
    std::vector<double> p_diffusion;     ///< [state] total weight of the diffusion branches
    std::vector<std::uint32_t> stride;   ///< [state]

    std::size_t index(std::size_t s, std::size_t b) const { return s * branches + b; }
};

struct ConsistencyReport {
    /// Per state, max over steps of |E[ΔX]/Δt − b|.
    std::vector<double> drift_residual;
    /// Per state, max over steps of |Var_diffusion/Δt − a| (upwinding and reflection both show up here).
    std::vector<double> variance_residual;
    double max_drift_residual = 0.0;
    double max_variance_residual = 0.0;
    double max_snapping_error = 0.0;
    double max_row_sum_error = 0.0;
    std::size_t reflected_states = 0;
    std::size_t upwind_states = 0;
    std::size_t max_stride = 1;
    /// All one-step weights are nonnegative.
    bool monotone = true;
};

/// Finite-state approximation of (X, N) on grid × regimes × time grid (d = 1).
/// State index s = regime · nodes + n.
class ChainApprox {
public:
    ChainApprox(ModelSpec model, std::size_t steps, SpatialGrid grid);

    const ModelSpec& model() const { return model_; }
    std::size_t steps() const { return steps_; }
    std::size_t nodes() const { return grid_.nodes; }
    std::size_t regimes() const { return static_cast<std::size_t>(model_.regimes); }
    std::size_t atoms() const { return model_.jump_atoms.size(); }
    std::size_t states() const { return grid_.nodes * regimes(); }
    double dt() const { return dt_; }
    double h() const { return h_; }
    double time(std::size_t m) const { return static_cast<double>(m) * dt_; }
    const SpatialGrid& grid() const { return grid_; }

    double x(std::size_t s) const { return grid_.lower + static_cast<double>(s % grid_.nodes) * h_; }
    int regime(std::size_t s) const { return static_cast<int>(s / grid_.nodes); }
    std::size_t state(std::size_t node, int regime) const {
        return static_cast<std::size_t>(regime) * grid_.nodes + node;
    }
    /// Nearest grid node to x (clamped into the grid) in the given regime.
    std::size_t nearest_state(double x, int regime) const;
    /// Regime reached through switch branch `slot` from regime i.
    int switch_target(int regime, std::size_t slot) const {
        return static_cast<int>(slot) < regime ? static_cast<int>(slot) : static_cast<int>(slot) + 1;
    }

    const Kernel& kernel(std::size_t m) const { return kernels_[kernel_of_step_[m]]; }
    const ConsistencyReport& consistency() const { return report_; }

private:
    friend ChainApprox build_chain(const ModelSpec&, std::size_t, const SpatialGrid&, const ChainOptions&);

    ModelSpec model_;
    std::size_t steps_;
    SpatialGrid grid_;
    double dt_;
    double h_;
    std::vector<Kernel> kernels_;
    std::vector<std::size_t> kernel_of_step_;
    ConsistencyReport report_;
};

/// Builds the locally consistent chain. Coefficients are sampled at the left end of
/// each step; one kernel is shared by all steps when the model is time homogeneous.
/// Throws ConfigError when no admissible stencil exists (message carries the largest
/// admissible Δt).
ChainApprox build_chain(const ModelSpec& model, std::size_t steps, const SpatialGrid& grid,
                        const ChainOptions& options = {});

/// P_m · values.
Vector conditional_expectation(const ChainApprox& chain, std::size_t m, std::span<const double> values);

struct MartingaleComponents {
    Vector expectation;     ///< E[v(next) | s]
    Vector continuation;    ///< mean of v over the diffusion branches
    Vector Z;               ///< E[v ΔB̂ | s] / Δt
    Vector Z_perp;          ///< E[v ΔB̂⊥ | s] / Δt
    Vector Vtilde;          ///< [state][atom]   v(jump target) − continuation
    Vector Wtilde;          ///< [state][regime] v(x_s, j) − continuation, 0 at j = i_s
};

/// Components of v(next) − E[v | s] against the chain's elementary martingales:
///   v_b − E = Z ΔB̂_b + Z⊥ ΔB̂⊥_b + Σ_y Ṽ_y (1{b=J_y} − p_y) + Σ_j W̃_j (1{b=S_j} − p_j).
MartingaleComponents martingale_components(const ChainApprox& chain, std::size_t m,
                                           std::span<const double> values);

/// Largest branchwise error of the decomposition above, over all states.
double decomposition_residual(const ChainApprox& chain, std::size_t m, std::span<const double> values,
                              const MartingaleComponents& c);

}  // namespace rbsde
