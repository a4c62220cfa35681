#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "phenolca/draws.hpp"
#include "phenolca/model.hpp"
#include "phenolca/random.hpp"

namespace phenolca::advi {

enum class TransformKind { identity, log, scaled_logit };

/// Map from an unconstrained coordinate v to the model's constrained scalar.
struct Transform
{
    TransformKind kind = TransformKind::identity;
    double lower = 0.0; // scaled_logit only
    double upper = 1.0;

    double to_constrained(double v) const;
    /// Throws DomainError on or outside the boundary.
    double to_unconstrained(double x) const;
    double log_abs_jacobian(double v) const;
    /// d constrained / d v.
    double derivative(double v) const;
    /// d log_abs_jacobian / d v.
    double log_jacobian_derivative(double v) const;
};

/**
 * Density to approximate, expressed on the unconstrained space: log p of the
 * back-transformed parameters plus the log absolute Jacobian.
 */
class Target
{
public:
    virtual ~Target() = default;

    virtual std::size_t dimension() const = 0;
    virtual double log_density(const Vector& v) const = 0;
    /// Returns log_density(v) and writes its gradient.
    virtual double log_density_gradient(const Vector& v, Vector& gradient) const = 0;

    virtual std::vector<Transform> transforms() const;
    virtual Vector initial_location() const;
    /// Per-coordinate multipliers for the location step (natural scale of each
    /// coordinate). Mean-field Gaussians are closed under per-coordinate
    /// rescaling, so this only changes optimiser geometry.
    virtual Vector step_scales() const;

    /// Observation count for minibatching; zero when unsupported.
    virtual std::size_t n_observations() const { return 0; }
    /// Unbiased estimate using only the listed observations, scaled by `scale`.
    virtual double log_density_gradient_batch(const Vector& v, const std::vector<std::size_t>& batch,
                                              double scale, Vector& gradient) const;
};

struct VariationalState
{
    Vector location;
    Vector log_scale;
    std::vector<Transform> transform_map;

    std::size_t dimension() const { return static_cast<std::size_t>(location.size()); }
    /// Exact entropy of the Gaussian on the unconstrained space.
    double entropy() const;
    /// Throws std::invalid_argument when the invariants fail.
    void validate() const;
};

enum class StopReason { threshold, max_iterations, diverged };
std::string to_string(StopReason reason);

struct ElboTrace
{
    std::vector<std::size_t> iteration;
    std::vector<double> elbo;
    std::vector<double> elbo_se;       // Monte Carlo standard error of each estimate
    std::vector<double> window_median; // median of the last `window` estimates
    std::vector<double> rel_change;    // relative change of window_median, NaN at the first evaluation
    StopReason stop_reason = StopReason::max_iterations;

    std::size_t size() const { return iteration.size(); }
};

enum class StepDecay { adagrad };

struct AdviConfig
{
    std::size_t n_mc_grad = 10;
    std::size_t n_mc_elbo = 100;
    std::size_t eval_every = 100;
    std::size_t max_iterations = 50000;
    double rel_tol = 1e-4;
    double step_size = 0.1;
    StepDecay step_decay = StepDecay::adagrad;
    double step_offset = 1e-8;
    std::size_t window = 5;
    // Abort when the window median falls across this many consecutive
    // evaluations and the total fall exceeds divergence_guard * |median|.
    std::size_t divergence_window = 10;
    double divergence_guard = 1e-3;
    double init_log_scale = -2.3; // in units of step_scales
    std::size_t minibatch_size = 0; // 0 = full batch (experimental otherwise)
    std::uint64_t seed = 0;

    void validate() const;
};

struct ElboEstimate
{
    double value = 0.0;
    double std_error = 0.0;
    std::size_t non_finite = 0;
};

struct ElboGradient
{
    Vector location;
    Vector log_scale;
    std::size_t non_finite = 0;
};

struct FitResult
{
    VariationalState state;
    ElboTrace trace;
    std::size_t iterations = 0;
};

class DivergenceError : public std::runtime_error
{
public:
    DivergenceError(const std::string& what, FitResult partial)
        : std::runtime_error(what), partial_(std::move(partial))
    {
    }
    const FitResult& partial() const { return partial_; }

private:
    FitResult partial_;
};

/// Reparameterised Monte Carlo ELBO: mean of log_density at q-draws plus the
/// exact entropy. A non-finite draw makes the estimate -inf.
ElboEstimate elbo_estimate(const VariationalState& q, const Target& target, std::size_t n_mc, Rng& rng);

/// Reparameterisation-trick gradient with respect to (location, log_scale).
/// Draws with a non-finite log density are dropped and counted.
ElboGradient elbo_gradient(const VariationalState& q, const Target& target, std::size_t n_mc, Rng& rng);

/// Adaptive stochastic ascent on the ELBO with windowed-median stopping.
/// Throws DivergenceError carrying the trace when the guard trips.
FitResult fit(const Target& target, const AdviConfig& config);

// ---------------------------------------------------------------------------
// Latent phenotype model

/// The latent phenotype posterior on the unconstrained space: identity for
/// coefficients, log for tau2, scaled logit into (a, b) for eta.
class LcaTarget : public Target
{
public:
    LcaTarget(const PriorSpec& priors, const CohortData& data);

    std::size_t dimension() const override { return layout_.size(); }
    double log_density(const Vector& v) const override;
    double log_density_gradient(const Vector& v, Vector& gradient) const override;
    std::vector<Transform> transforms() const override;
    /// Complete-data posterior mode given the code-or-medication heuristic
    /// classes, with eta at the midpoint.
    Vector initial_location() const override;
    /// Prior standard deviations for coefficients, 1 elsewhere.
    Vector step_scales() const override;
    std::size_t n_observations() const override { return data_.n_patients(); }
    double log_density_gradient_batch(const Vector& v, const std::vector<std::size_t>& batch, double scale,
                                      Vector& gradient) const override;

    const ParameterLayout& layout() const { return layout_; }

private:
    double finish_gradient(const Vector& v, double value, Vector& gradient) const;

    const PriorSpec& priors_;
    const CohortData& data_;
    ParameterLayout layout_;
    std::vector<Transform> transforms_;
};

std::vector<Transform> lca_transforms(const ParameterLayout& layout, const PriorSpec& priors);
Vector to_unconstrained(const ParameterState& params, const PriorSpec& priors, const CohortData& data);
ParameterState from_unconstrained(const Vector& v, const PriorSpec& priors, const CohortData& data);
double log_abs_jacobian(const Vector& v, const std::vector<Transform>& transforms);

FitResult fit(const AdviConfig& config, const PriorSpec& priors, const CohortData& data);

/// Draws from q mapped back to the constrained space, with pointwise log-likelihood.
PosteriorDraws sample_posterior(const VariationalState& q, const PriorSpec& priors, const CohortData& data,
                                std::size_t n_draws, Rng& rng, bool store_eta = true);

} // namespace phenolca::advi
