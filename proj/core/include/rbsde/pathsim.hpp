#pragma once

#include "rbsde/model.hpp"
#include "rbsde/verdict.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace rbsde {

/// How the drift b enters a simulated step.
enum class JumpDrift {
    /// dX = b dt + σ dB + ∫ δ (χ − f m dt): jumps enter through the compensated measure.
    Compensated,
    /// dX = b dt + σ dB + ∫ δ χ: b is read as the drift of the uncompensated form.
    Raw,
};

struct SimulationOptions {
    unsigned threads = 1;
    JumpDrift jump_drift = JumpDrift::Compensated;
    bool record_events = true;
};

/// Realized jump (Mark::Kind::Jump) or regime switch (Mark::Kind::Regime, index = new regime).
struct PathEvent {
    double time = 0.0;
    Mark mark;
};

struct ThinningCounts {
    std::uint64_t jump_candidates = 0;
    std::uint64_t jump_accepted = 0;
    std::uint64_t switch_candidates = 0;
    std::uint64_t switch_accepted = 0;
};

/// Write-once bundle of simulated paths of (X, N) on a time grid.
struct PathBundle {
    Vector grid;
    std::size_t n_paths = 0;
    int dim = 1;
    std::uint64_t seed = 0;
    std::vector<double> x;       ///< [path][step][component]
    std::vector<int> regime;     ///< [path][step], 0-based
    std::vector<std::vector<PathEvent>> events;
    ThinningCounts thinning;

    std::size_t steps() const { return grid.empty() ? 0 : grid.size() - 1; }
    double x_at(std::size_t path, std::size_t step, std::size_t l = 0) const {
        return x[(path * grid.size() + step) * static_cast<std::size_t>(dim) + l];
    }
    std::span<const double> point(std::size_t path, std::size_t step) const {
        return {x.data() + (path * grid.size() + step) * static_cast<std::size_t>(dim),
                static_cast<std::size_t>(dim)};
    }
    int regime_at(std::size_t path, std::size_t step) const { return regime[path * grid.size() + step]; }
};

Vector uniform_grid(double t0, double t1, std::size_t steps);

/// Euler scheme for the continuous part; jumps and switches by thinning against
/// F_max·m(R^d) + Λ_max·(k−1). Intensities are evaluated at (t_m, X_{t_m}, N_{s−}).
/// Bit-identical for a given (seed, grid, n_paths) regardless of `threads`.
PathBundle simulate_paths(const ModelSpec& model, const InitialState& start, std::span<const double> grid,
                          std::size_t n_paths, std::uint64_t seed, const SimulationOptions& options = {});

struct MarkStatistic {
    std::string label;
    double mean_count = 0.0;
    double mean_compensator = 0.0;
    double std_error = 0.0;
    double z = 0.0;
};

struct CompensatorReport {
    std::vector<MarkStatistic> marks;
    Status status = Status::Pass;
    double threshold = 4.0;
    std::vector<std::string> warnings;
};

/// Compares realized mark counts with the path-integrated compensator ∫ζ ρ ds.
/// Marks checked: each atom alone, each regime target alone, and all atoms ⊕ {j}.
CompensatorReport compensator_check(const PathBundle& bundle, const ModelSpec& model, double threshold = 4.0);

struct WeakErrorRow {
    double dt = 0.0;
    double mean_value = 0.0;     ///< Monte Carlo E[u(t+Δt, X, N)]
    double generator = 0.0;      ///< 𝒢u(t,x,i)
    double raw_error = 0.0;      ///< |E u − u − 𝒢u Δt|
    double error = 0.0;          ///< raw_error / Δt
    double std_error = 0.0;      ///< standard error of `error`
    bool resolved = false;       ///< error exceeds 4 standard errors
};

struct WeakErrorReport {
    std::vector<WeakErrorRow> rows;
    double order = 0.0;          ///< log-log slope of `error` over resolved rows
    Status status = Status::Inconclusive;
};

/// One-step weak error of the simulation against the generator, per Δt.
WeakErrorReport generator_weak_error(const ModelSpec& model, const TestFunction& u, double t,
                                     const InitialState& start, std::span<const double> dt_list,
                                     std::size_t n_samples, std::uint64_t seed,
                                     const SimulationOptions& options = {}, double min_order = 0.9);

/// Mean over paths of sup_m |X_{t_m}|^p.
double moment_report(const PathBundle& bundle, double p);

/// CSV dump with columns path,t,x_1..x_d,regime (regime 1-based).
void write_paths_csv(const PathBundle& bundle, std::ostream& out, std::size_t max_paths);

}  // namespace rbsde
