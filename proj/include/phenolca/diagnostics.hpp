#pragma once

#include <array>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "phenolca/draws.hpp"
#include "phenolca/model.hpp"

namespace phenolca::diagnostics {

// ---------------------------------------------------------------------------
// Pareto smoothed importance sampling

struct GpdFit
{
    double k = 0.0;
    double sigma = 0.0;
};

/// Generalized Pareto fit to positive exceedances sorted ascending, using the
/// profile-likelihood grid estimator with weakly informative shrinkage of k
/// towards 0.5.
GpdFit gpd_fit(const std::vector<double>& sorted_exceedances);

/// Quantile function of the generalized Pareto distribution with location 0.
double gpd_quantile(double p, double k, double sigma);

/// Number of draws treated as the tail: ceil(min(0.2 S, 3 sqrt(S))).
std::size_t psis_tail_length(std::size_t n_draws);

struct SmoothedWeights
{
    std::vector<double> log_weights; // normalised to sum to one
    double pareto_k = 0.0;           // -inf for a constant column
};

/// Smooths one column of raw log importance ratios.
SmoothedWeights psis_smooth(const std::vector<double>& log_ratios);

enum class KBucket { degenerate, good, ok, bad, very_bad };

/// k < 0.5 good, [0.5, 0.7) ok, [0.7, 1] bad, k > 1 very bad.
KBucket classify_k(double k);
std::string to_string(KBucket bucket);

inline constexpr double kParetoWarning = 0.7;

struct PsisResult
{
    Vector pareto_k;     // one per observation, -inf when degenerate
    Vector elpd_pointwise;
    double elpd_loo = 0.0;
    double elpd_loo_se = 0.0;
    double p_loo = 0.0;
    RowMatrix smoothed_log_weights; // S x N, empty unless retained
    std::array<std::size_t, 5> bucket_counts{}; // indexed by KBucket
    std::vector<std::string> notes;

    std::size_t n_above(double threshold) const;
};

/// PSIS-LOO on an S x N pointwise log-likelihood matrix.
PsisResult psis_loo(const RowMatrix& loglik, bool keep_weights = false);
PsisResult psis_loo(const PosteriorDraws& draws, bool keep_weights = false);

struct WaicResult
{
    double elpd_waic = 0.0;
    double elpd_waic_se = 0.0;
    double p_waic = 0.0;
    double lppd = 0.0;
};

WaicResult waic(const RowMatrix& loglik);
WaicResult waic(const PosteriorDraws& draws);

// ---------------------------------------------------------------------------
// Convergence

struct ConvergenceResult
{
    double rhat = std::numeric_limits<double>::quiet_NaN(); // NaN with a single chain
    double ess_bulk = 0.0;
};

/// Rank-normalised split R-hat (maximum of bulk and folded) and bulk ESS.
/// Chains must have equal length of at least 4.
ConvergenceResult rhat_ess(const std::vector<std::vector<double>>& chains);

/// Effective sample size of the given chains without splitting or ranking.
double ess_basic(const std::vector<std::vector<double>>& chains);

// ---------------------------------------------------------------------------
// Summaries

struct SummaryRow
{
    std::string name;
    double mean = 0.0;
    double lower = 0.0; // 2.5% quantile
    double upper = 0.0; // 97.5% quantile
};

struct SummaryReport
{
    std::vector<SummaryRow> rows;
    std::size_t n_draws = 0;
    bool relabeled = false; // classes were swapped to make the anchor shift positive

    const SummaryRow& row(const std::string& name) const;
};

/// Mean and 2.5/97.5% quantiles of per-draw values.
SummaryRow summarize_values(std::string name, std::vector<double> values);

/// Clinical rows computed per draw: sensitivity and specificity of every code
/// and medication, then the phenotype shift of every biomarker. Classes are
/// swapped when the posterior mean shift of `anchor_biomarker` is negative.
SummaryReport summarize(const PosteriorDraws& draws, std::size_t anchor_biomarker);

/// One row per global model coefficient (eta excluded), named as in ParameterLayout.
SummaryReport summarize_parameters(const PosteriorDraws& draws);

struct ComparisonRow
{
    std::string name;
    SummaryRow a;
    SummaryRow b;
    double difference = 0.0;         // b.mean - a.mean
    double pooled_half_width = 0.0;  // mean of the two interval half-widths
    bool divergent = false;
};

struct ComparisonTable
{
    std::vector<ComparisonRow> rows;
    double multiple = 0.0;

    std::size_t n_divergent() const;
    const ComparisonRow& row(const std::string& name) const;
};

/// Default flagging multiple of the pooled interval half-width.
inline constexpr double kDivergenceMultiple = 2.0;

/// Side-by-side rows; a row is divergent when |difference| exceeds
/// multiple * pooled_half_width. Throws ShapeError on different row sets.
ComparisonTable compare(const SummaryReport& a, const SummaryReport& b, double multiple = kDivergenceMultiple);

} // namespace phenolca::diagnostics
