#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "phenolca/draws.hpp"
#include "phenolca/model.hpp"
#include "phenolca/random.hpp"

namespace phenolca::gibbs {

struct McmcConfig
{
    std::size_t n_chains = 3;
    std::size_t n_warmup = 1000;
    std::size_t n_samples = 1000; // post-warmup iterations per chain
    std::size_t thin = 1;
    double rw_scale_beta = 0.05;  // initial random-walk sd of coefficient blocks
    double rw_scale_eta = 0.5;    // initial shared random-walk sd of eta_i
    double adapt_target = 0.234;  // multivariate blocks
    double adapt_target_scalar = 0.44;
    // Early warmup iterations that keep D at its initial heuristic value so the
    // coefficients settle before the classes move (capped at n_warmup / 2).
    std::size_t n_anchor = 200;
    bool store_eta = true;
    bool store_loglik = true;
    // Refuse to start when the retained draws would exceed this many bytes.
    std::uint64_t memory_limit_bytes = 8ull << 30;
    std::uint64_t seed = 0;

    std::size_t draws_per_chain() const { return n_samples / thin; }
    void validate() const;
};

class InitializationError : public std::runtime_error
{
public:
    InitializationError(const std::string& what, std::size_t chain, std::string payload)
        : std::runtime_error(what), chain_(chain), payload_(std::move(payload))
    {
    }
    std::size_t chain() const { return chain_; }
    /// Breakdown of the non-finite log-joint terms.
    const std::string& payload() const { return payload_; }

private:
    std::size_t chain_;
    std::string payload_;
};

enum class BlockKind { beta_D, beta_R, beta_W, beta_P, eta };

struct BlockId
{
    BlockKind kind = BlockKind::beta_D;
    std::size_t index = 0;

    std::string name() const;
};

/**
 * Gaussian random-walk proposal with Robbins-Monro scale adaptation. During
 * warmup it also learns the block's posterior covariance and switches to a
 * proposal of that shape; everything is frozen once warmup ends.
 */
class RandomWalkProposal
{
public:
    RandomWalkProposal(std::size_t dim, double scale, double target);

    Vector propose(const Vector& current, Rng& rng) const;
    double propose_scalar(double current, Rng& rng) const;

    /// Warmup step `iteration` of `n_warmup` with acceptance probability alpha
    /// at the post-step state.
    void adapt(std::size_t iteration, std::size_t n_warmup, double alpha, const Vector* state);
    void freeze() { frozen_ = true; }
    bool frozen() const { return frozen_; }

    double scale() const { return std::exp(log_scale_); }
    double target() const { return target_; }
    std::size_t dimension() const { return dim_; }

private:
    std::size_t dim_;
    double log_scale_;
    double target_;
    bool frozen_ = false;
    Eigen::MatrixXd shape_; // lower Cholesky factor of the proposal shape
    Vector mean_;
    Eigen::MatrixXd scatter_;
    std::size_t seen_ = 0;
};

struct BlockUpdate
{
    std::size_t proposed = 0;
    std::size_t accepted = 0;
    double mean_accept_prob = 0.0;
};

/// Draws D_i from its full conditional, class_posterior(params, data, i).
int sample_D_conditional(const ParameterState& params, const CohortData& data, std::size_t i, Rng& rng);

/// Complete-data log target of one block given the latent classes D.
double block_log_target(const ParameterState& params, BlockId block, const PriorSpec& priors,
                        const CohortData& data, std::span<const std::uint8_t> D);

/// One random-walk Metropolis step on the block (patient-wise for eta, with
/// proposals reflected into [a, b]).
BlockUpdate update_logistic_block(ParameterState& params, BlockId block, const PriorSpec& priors,
                                  const CohortData& data, std::span<const std::uint8_t> D,
                                  const RandomWalkProposal& proposal, Rng& rng);

/// Conjugate draw of beta_Y[j] given tau2[j] and D, using rows with R_ij = 1.
void draw_beta_Y_given_tau2(ParameterState& params, std::size_t j, const CohortData& data,
                            std::span<const std::uint8_t> D, const PriorSpec& priors, Rng& rng);

/// Inverse-gamma draw of tau2[j] given beta_Y[j] and D.
void draw_tau2_given_beta_Y(ParameterState& params, std::size_t j, const CohortData& data,
                            std::span<const std::uint8_t> D, const PriorSpec& priors, Rng& rng);

/// Both conditional draws for every biomarker. A biomarker without available
/// rows is redrawn from its prior.
void update_beta_Y_tau2(ParameterState& params, const CohortData& data, std::span<const std::uint8_t> D,
                        const PriorSpec& priors, Rng& rng);

/// Runs independent chains (in parallel) and collects thinned post-warmup draws
/// with their pointwise log-likelihood.
PosteriorDraws run_chains(const McmcConfig& config, const PriorSpec& priors, const CohortData& data);

/// Starting state of a chain: coefficients drawn from the priors with standard
/// deviations scaled by 0.1, tau2 at the prior mean (mode when the mean does not
/// exist), eta at the midpoint and D = 1 for patients with any code or medication.
ParameterState initial_state(const PriorSpec& priors, const CohortData& data, Rng& rng);
std::vector<std::uint8_t> initial_classes(const CohortData& data);

/// Posterior mode of every coefficient family and tau2 with the classes fixed
/// at D and eta at the midpoint of (a, b), by Newton iterations.
ParameterState complete_data_map(const PriorSpec& priors, const CohortData& data, std::span<const std::uint8_t> D);

} // namespace phenolca::gibbs
