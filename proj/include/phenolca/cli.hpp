#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "phenolca/io.hpp"

namespace phenolca::cli {

enum ExitCode : int { kOk = 0, kDiagnosticWarning = 1, kInputError = 2, kDivergence = 3 };

enum class Backend { gibbs, advi };

/// Everything a command needs, parsed from one JSON document:
///
///   { "seed": 1, "threads": 0, "anchor_biomarker": 1, "divergence_multiple": 2,
///     "export_csv": false, "cohort": "cohort.csv",
///     "simulation": {...}, "priors": {...}, "mcmc": {...}, "advi": {...} }
struct RunConfig
{
    std::uint64_t seed = 0;
    std::size_t threads = 0; // 0 = all cores
    std::size_t anchor_biomarker = kDefaultAnchorBiomarker;
    double divergence_multiple = diagnostics::kDivergenceMultiple;
    std::size_t advi_draws = 1000;
    bool export_csv = false;
    std::filesystem::path cohort;
    io::Json simulation = io::Json::object();
    io::Json priors = io::Json::object();
    io::Json mcmc = io::Json::object();
    io::Json advi = io::Json::object();

    /// Canonical form used for the config hash (thread count excluded).
    io::Json canonical() const;
    std::string hash() const;
};

/// Throws ConfigError on malformed documents or unknown keys. Relative cohort
/// paths resolve against `base_dir`.
RunConfig parse_config(const io::Json& document, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// cohort.csv and truth.json.
int cmd_simulate(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream& log);

/// draws.jsonl and meta.json, plus trace.csv for advi and draws.csv on request.
int cmd_fit(const RunConfig& config, Backend backend, const std::filesystem::path& out_dir, std::ostream& log);

/// psis.csv, waic.json and rhat.csv. Several files are pooled as extra chains.
int cmd_diagnose(const std::vector<std::filesystem::path>& draws_files, const std::filesystem::path& out_dir,
                 std::ostream& log);

/// summary.csv and parameters.csv; with a second file also summary_b.csv and comparison.csv.
int cmd_report(const std::filesystem::path& draws_a, const std::optional<std::filesystem::path>& draws_b,
               const std::filesystem::path& out_dir, std::size_t anchor_biomarker, double multiple,
               std::ostream& log);

/// Argument parsing and dispatch; returns the process exit code.
int run(int argc, char** argv);

} // namespace phenolca::cli
