#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "phenolca/advi.hpp"
#include "phenolca/diagnostics.hpp"
#include "phenolca/draws.hpp"
#include "phenolca/gibbs.hpp"
#include "phenolca/model.hpp"
#include "phenolca/synthgen.hpp"

namespace phenolca::io {

using Json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

/// Malformed or inconsistent input file. `details` lists offending rows.
class InputError : public std::runtime_error
{
public:
    explicit InputError(const std::string& what, std::vector<std::string> details = {})
        : std::runtime_error(what), details_(std::move(details))
    {
    }
    const std::vector<std::string>& details() const { return details_; }

private:
    std::vector<std::string> details_;
};

/// Provenance written at the top of every output file.
struct Header
{
    std::string kind;
    std::uint64_t seed = 0;
    std::string config_hash;
};

/// Shortest decimal text that parses back to the same double.
std::string format_double(double x);
double parse_double(const std::string& text);

/// 64-bit FNV-1a of the text, as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

/// "# phenolca kind=<kind> version=<v> seed=<seed> config_hash=<hash>"
std::string header_line(const Header& header);
Header parse_header_line(const std::string& line);

// ---------------------------------------------------------------------------
// Cohort

std::vector<std::string> cohort_columns(std::size_t m, std::size_t j, std::size_t k, std::size_t l);

void write_cohort_csv(std::ostream& out, const CohortData& data, const Header& header);

/// Column counts are read from the header row. Throws InputError listing up
/// to 20 offending rows.
CohortData read_cohort_csv(std::istream& in, Header* header = nullptr);

// ---------------------------------------------------------------------------
// JSON encodings

Json to_json(const ParameterState& state, bool with_eta = true);
ParameterState parameters_from_json(const Json& j);

Json truth_json(const SimulatedCohort& cohort, const SimulationConfig& config, const Header& header);

// ---------------------------------------------------------------------------
// Draws

struct DrawsFile
{
    Header header;
    std::string backend;
    PosteriorDraws draws;
};

/// One header object, then one object per draw with chain id, parameters and
/// pointwise log-likelihood.
void write_draws_jsonl(std::ostream& out, const PosteriorDraws& draws, const std::string& backend,
                       const Header& header);
DrawsFile read_draws_jsonl(std::istream& in);

/// Flat table with one column per coefficient, tau2 and (when stored) eta.
void write_draws_csv(std::ostream& out, const PosteriorDraws& draws, const Header& header);

// ---------------------------------------------------------------------------
// Reports

void write_trace_csv(std::ostream& out, const advi::ElboTrace& trace, const Header& header);
void write_psis_csv(std::ostream& out, const diagnostics::PsisResult& psis, const Header& header);
void write_summary_csv(std::ostream& out, const diagnostics::SummaryReport& report, const Header& header);
diagnostics::SummaryReport read_summary_csv(std::istream& in, Header* header = nullptr);
void write_comparison_csv(std::ostream& out, const diagnostics::ComparisonTable& table, const Header& header);

struct NamedConvergence
{
    std::string name;
    diagnostics::ConvergenceResult result;
};
void write_rhat_csv(std::ostream& out, const std::vector<NamedConvergence>& rows, const Header& header);

// ---------------------------------------------------------------------------
// Configuration

Json to_json(const PriorSpec& priors);
PriorSpec priors_from_json(const Json& j, std::size_t n_covariates);

/// {"scenario": "default", "n_patients": N, ...} with optional overrides of the
/// truth and covariates.
SimulationConfig simulation_from_json(const Json& j, std::uint64_t seed);
gibbs::McmcConfig mcmc_from_json(const Json& j);
advi::AdviConfig advi_from_json(const Json& j);
Json to_json(const gibbs::McmcConfig& config);
Json to_json(const advi::AdviConfig& config);
Json to_json(const SimulationConfig& config);

void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

} // namespace phenolca::io
