#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

/**
 * Two-class latent phenotype model for EHR cohorts.
 *
 * Each patient i carries a binary latent phenotype D_i. Conditional on D_i the
 * observed record factorises into
 *
 *   R_ij ~ Bern(expit((1, X_i, D_i) . beta_R[j]))             biomarker availability
 *   Y_ij ~ N((1, X_i, D_i) . beta_Y[j], tau2[j])  if R_ij = 1  biomarker value
 *   W_ik ~ Bern(expit((1, X_i, D_i) . beta_W[k]))             clinical codes
 *   P_il ~ Bern(expit((1, X_i, D_i) . beta_P[l]))             medications
 *
 * with D_i ~ Bern(expit((1, X_i) . beta_D + eta_i)) and eta_i ~ Unif(a, b).
 * The last coefficient of every conditional family is the phenotype effect.
 * Everything is evaluated in log space and the latent class is summed out
 * with log-sum-exp.
 */

namespace phenolca {

using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using BinaryMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ModelError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Parameter on or outside the boundary of its support.
class DomainError : public ModelError
{
public:
    using ModelError::ModelError;
};

/// Dimensions of two objects do not agree.
class ShapeError : public ModelError
{
public:
    using ModelError::ModelError;
};

inline double expit(double x) noexcept
{
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) noexcept
{
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double log_expit(double x) noexcept { return -softplus(-x); }

inline double log_sum_exp(double a, double b) noexcept
{
    const double m = std::max(a, b);
    if (m == -INFINITY) return -INFINITY;
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/// Probability that an indicator fires for a phenotype-positive patient.
inline double sensitivity(double intercept, double phenotype_effect) noexcept
{
    return expit(intercept + phenotype_effect);
}

/// Probability that an indicator stays silent for a phenotype-negative patient.
inline double specificity(double intercept) noexcept { return 1.0 - expit(intercept); }

struct CohortData
{
    RowMatrix X;    // N x M covariates
    BinaryMatrix R; // N x J biomarker availability
    RowMatrix Y;    // N x J biomarker values, read only where R = 1
    BinaryMatrix W; // N x K clinical codes
    BinaryMatrix P; // N x L medications

    std::size_t n_patients() const { return static_cast<std::size_t>(R.rows()); }
    std::size_t n_covariates() const { return static_cast<std::size_t>(X.cols()); }
    std::size_t n_biomarkers() const { return static_cast<std::size_t>(R.cols()); }
    std::size_t n_codes() const { return static_cast<std::size_t>(W.cols()); }
    std::size_t n_medications() const { return static_cast<std::size_t>(P.cols()); }

    /// Throws ShapeError or std::invalid_argument describing the first violation.
    /// An empty cohort is only accepted with allow_empty.
    void validate(bool allow_empty = false) const;

    /// Allocates zero-filled matrices of the given shape.
    static CohortData zeros(std::size_t n, std::size_t m, std::size_t j, std::size_t k, std::size_t l);
};

struct DiagonalGaussian
{
    Vector mean;
    Vector variance;

    std::size_t dimension() const { return static_cast<std::size_t>(mean.size()); }
    double log_density(const Vector& x) const;

    static DiagonalGaussian isotropic(std::size_t dim, double mean, double variance);
};

struct PriorSpec
{
    DiagonalGaussian beta_D; // length M + 1
    DiagonalGaussian beta_R; // length M + 2 for the conditional families
    DiagonalGaussian beta_Y;
    DiagonalGaussian beta_W;
    DiagonalGaussian beta_P;
    // Optional per-biomarker replacements for beta_Y; biomarkers measured on
    // different scales rarely share one prior.
    std::vector<DiagonalGaussian> beta_Y_by_biomarker;
    double eta_lower = -1.0;
    double eta_upper = 1.0;
    double tau2_shape = 1.0;
    double tau2_scale = 1.0;

    /// a < b. With a == b every eta_i is pinned to a and the random effect vanishes.
    bool eta_enabled() const { return eta_lower < eta_upper; }
    const DiagonalGaussian& biomarker(std::size_t j) const;
    void validate(std::size_t n_covariates, std::size_t n_biomarkers) const;
};

/// Zero means and variance 4 for every coefficient family.
PriorSpec default_priors(std::size_t n_covariates);

/// Phenotype shift of a binormal biomarker with common standard deviation tau
/// whose ROC curve has the requested area.
double auc_shift(double tau, double auc);

struct ParameterState
{
    Vector beta_D;
    std::vector<Vector> beta_R;
    std::vector<Vector> beta_Y;
    Vector tau2;
    std::vector<Vector> beta_W;
    std::vector<Vector> beta_P;
    Vector eta;

    /// Correctly shaped state with zero coefficients, unit tau2 and eta at the
    /// lower bound.
    static ParameterState zeros(const CohortData& data, const PriorSpec& priors);

    /// Throws ShapeError if the dimensions do not fit the cohort.
    void check_shape(const CohortData& data) const;
};

/**
 * Flat layout of ParameterState used by gradients and the variational engine:
 *
 *   beta_D (M+1) | beta_R[0..J) | beta_Y[0..J) | tau2 (J) | beta_W[0..K) | beta_P[0..L) | eta (N)
 *
 * each conditional-family vector having length M+2. The eta segment is absent
 * when the random effect is disabled.
 */
class ParameterLayout
{
public:
    ParameterLayout(std::size_t n_covariates, std::size_t n_biomarkers, std::size_t n_codes,
                    std::size_t n_medications, std::size_t n_patients, bool eta_enabled);

    static ParameterLayout of(const CohortData& data, const PriorSpec& priors);

    std::size_t size() const { return eta_offset_ + (eta_enabled_ ? n_ : 0); }
    std::size_t global_size() const { return eta_offset_; }
    std::size_t family_width() const { return m_ + 2; }

    std::size_t beta_D() const { return 0; }
    std::size_t beta_R(std::size_t j) const { return m_ + 1 + j * family_width(); }
    std::size_t beta_Y(std::size_t j) const { return m_ + 1 + (j_ + j) * family_width(); }
    std::size_t tau2(std::size_t j) const { return m_ + 1 + 2 * j_ * family_width() + j; }
    std::size_t beta_W(std::size_t k) const { return tau2(0) + j_ + k * family_width(); }
    std::size_t beta_P(std::size_t l) const { return tau2(0) + j_ + (k_ + l) * family_width(); }
    std::size_t eta(std::size_t i) const { return eta_offset_ + i; }

    bool eta_enabled() const { return eta_enabled_; }
    std::size_t n_covariates() const { return m_; }
    std::size_t n_biomarkers() const { return j_; }
    std::size_t n_codes() const { return k_; }
    std::size_t n_medications() const { return l_; }
    std::size_t n_patients() const { return n_; }

    Vector flatten(const ParameterState& state) const;
    /// eta_pinned fills the eta vector when the random effect is disabled.
    ParameterState unflatten(const Vector& flat, double eta_pinned = 0.0) const;

    /// Human-readable coordinate name such as "beta_W[1][3]".
    std::string name(std::size_t index) const;

private:
    std::size_t m_, j_, k_, l_, n_;
    bool eta_enabled_;
    std::size_t eta_offset_;
};

/// Per-class log terms log P(D_i = d) + log f(record_i | D_i = d) for d = 0, 1.
std::array<double, 2> class_log_terms(const ParameterState& params, const CohortData& data,
                                      std::size_t i);

/// Marginal log-likelihood of patient i with the latent class summed out.
double log_lik_patient(const ParameterState& params, const CohortData& data, std::size_t i);

/// P(D_i = 1 | record_i, params).
double class_posterior(const ParameterState& params, const CohortData& data, std::size_t i);

/// Sum of independent prior log-densities; -inf outside the support.
double log_prior(const ParameterState& params, const PriorSpec& priors);

/// Sum over patients of log_lik_patient plus log_prior.
double log_joint(const ParameterState& params, const PriorSpec& priors, const CohortData& data);

/// Pointwise log-likelihood of every patient.
Vector pointwise_log_lik(const ParameterState& params, const CohortData& data);

/// Analytic gradient of log_joint in the constrained parameterisation, laid
/// out by ParameterLayout::of(data, priors). Throws DomainError on the
/// boundary of the support.
Vector grad_log_joint(const ParameterState& params, const PriorSpec& priors, const CohortData& data);

struct GradientOptions
{
    // Reject parameters on the boundary of the support with DomainError.
    bool require_interior = true;
    // Restrict the likelihood to these patients (all when null) and multiply
    // it by likelihood_scale; eta entries of other patients get prior terms only.
    const std::vector<std::size_t>* patients = nullptr;
    double likelihood_scale = 1.0;
};

/// log_joint and its gradient from a single pass over the cohort.
double log_joint_with_gradient(const ParameterState& params, const PriorSpec& priors,
                               const CohortData& data, Vector& gradient, const GradientOptions& options = {});

/// Swaps the meaning of the two classes: every conditional family keeps the
/// same class-wise predictors, beta_D changes sign and eta is reflected about
/// the centre of (a, b), which is exact when the bounds are symmetric.
ParameterState relabel_classes(const ParameterState& params, const PriorSpec& priors);

} // namespace phenolca
