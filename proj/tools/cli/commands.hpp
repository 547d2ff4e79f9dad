#pragma once

#include "json.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace rbsde::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFail = 1;
inline constexpr int kExitConfig = 2;

/// Version of report.json; bumped whenever its layout changes.
inline constexpr int kReportVersion = 1;
inline constexpr int kManifestVersion = 1;

const char* code_version();

struct RunOptions {
    std::string config;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    /// Config of the primed problem for `compare`; overrides the compare block.
    std::optional<std::string> other;
};

/// simulate | solve | check | compare. Writes the run directory and returns the exit code.
int run_command(const std::string& command, const RunOptions& options, std::ostream& out, std::ostream& err);

/// Verifies a run directory and prints its summary.
int report_command(const std::string& dir, std::ostream& out, std::ostream& err);

/// Plain-text rendering of a report.json document.
std::string render_summary(const nlohmann::json& report);

}  // namespace rbsde::cli
