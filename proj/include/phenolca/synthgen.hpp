#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "phenolca/model.hpp"

namespace phenolca {

class ConfigError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

struct CovariateSpec
{
    enum class Kind { standard_normal, bernoulli, constant };

    Kind kind = Kind::standard_normal;
    double value = 0.0; // success probability for bernoulli, the value for constant
    std::string name;
};

struct SimulationConfig
{
    std::size_t n_patients = 0;
    ParameterState true_params;
    std::vector<CovariateSpec> covariates;
    double eta_lower = -1.0;
    double eta_upper = 1.0;
    // When false, true_params.eta (length n_patients) is used as given.
    bool regenerate_eta = true;
    std::uint64_t seed = 0;

    /// Throws ConfigError.
    void validate() const;
};

struct SimulatedCohort
{
    CohortData data;
    std::vector<std::uint8_t> true_D;
    Vector true_eta;
};

/// Draws a cohort from the generative model. Y is drawn for every cell; cells
/// with R = 0 keep their draw in memory but are never read by the model and
/// are written as NA. The output is a pure function of the config.
SimulatedCohort simulate_cohort(const SimulationConfig& config);

/**
 * Built-in scenario shaped like the paediatric diabetes example: covariates
 * age (standard normal), ethnicity (Bernoulli 0.2) and BMI z-score (standard
 * normal); biomarkers glucose then HbA1c; two codes; two medications; about 2%
 * phenotype prevalence and 40-65% of biomarker cells unavailable. The HbA1c
 * phenotype shift is 4.8.
 */
SimulationConfig default_scenario(std::size_t n_patients, std::uint64_t seed);

/// Priors matched to default_scenario: logit-scale N(0, 4) families and
/// per-biomarker priors whose shift means follow the AUC 0.95 recipe.
PriorSpec default_scenario_priors();

/// Index of the HbA1c-like biomarker in default_scenario.
inline constexpr std::size_t kDefaultAnchorBiomarker = 1;

} // namespace phenolca
