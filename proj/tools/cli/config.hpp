#pragma once

#include "cli/json_source.hpp"

#include "rbsde/chain.hpp"
#include "rbsde/data_spec.hpp"
#include "rbsde/model.hpp"
#include "rbsde/pathsim.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace rbsde::cli {

/// Checks a run can request; anything else in the config is an error.
inline const std::vector<std::string>& known_checks() {
    static const std::vector<std::string> names{"reflection", "kplus_density", "norms",  "comparison",
                                                "apriori",    "compensator",   "probes"};
    return names;
}

struct ProblemConfig {
    ProblemKind kind = ProblemKind::BSDE;
    AffineDriver driver;
    ClampedAffine terminal;
    /// φ = intercept + slope·x with floor c; ℓ = φ ∨ c and α from the generator of φ.
    std::optional<ClampedAffine> lower;
    std::optional<ClampedAffine> upper;
    TauSpec tau;
    double start_x = 0.0;
    int start_regime = 0;   ///< 0-based
    bool implicit = false;
};

struct SimulateConfig {
    std::size_t paths = 1000;
    std::size_t steps = 100;
    std::size_t csv_paths = 10;
    JumpDrift jump_drift = JumpDrift::Compensated;
};

/// Perturbation defining the primed problem of the comparison check.
struct CompareConfig {
    double terminal_shift = 0.0;
    double lower_shift = 0.0;
    double upper_shift = 0.0;
    double driver_shift = 0.0;
    bool counterexample = false;
};

struct RunConfig {
    std::string path;
    std::string text;
    std::uint64_t seed = 0;
    unsigned threads = 1;

    ParametricModel model;
    std::size_t steps = 0;
    SpatialGrid grid;
    std::size_t max_stride = 0;

    ProblemConfig problem;
    std::optional<SimulateConfig> simulate;
    std::optional<CompareConfig> compare;
    std::vector<double> apriori_shifts;
    std::vector<std::string> checks;
    std::string out_dir = "out";

    /// Parsed source, kept for cross-config comparisons.
    std::shared_ptr<const JsonSource> source;
};

/// Reads and validates a run configuration. Throws ConfigFileError.
RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& name, const std::string& text);

/// Model and chain sections of two configs describe the same chain.
bool same_chain(const RunConfig& a, const RunConfig& b);

struct BuiltCosts {
    CostFunctions cost;
    CostFunctions::BarrierFn alpha;
};

BuiltCosts build_costs(const ProblemConfig& p, const ModelSpec& model);

}  // namespace rbsde::cli
