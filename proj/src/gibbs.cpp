#include "phenolca/gibbs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <tbb/parallel_for.h>

#include "phenolca/parallel.hpp"

namespace phenolca::gibbs {

namespace {

double covariate_part(const Vector& beta, const CohortData& data, std::size_t i)
{
    const std::size_t m = data.n_covariates();
    const double* x = data.X.row(static_cast<Eigen::Index>(i)).data();
    double u = beta[0];
    for (std::size_t c = 0; c < m; ++c) u += beta[static_cast<Eigen::Index>(c + 1)] * x[c];
    return u;
}

// Bernoulli column of the cohort that a block models.
const BinaryMatrix& block_matrix(const CohortData& data, BlockKind kind)
{
    switch (kind) {
    case BlockKind::beta_R: return data.R;
    case BlockKind::beta_W: return data.W;
    case BlockKind::beta_P: return data.P;
    default: throw std::logic_error("block has no response matrix");
    }
}

template <class State>
decltype(auto) block_vector(State& s, BlockId b)
{
    switch (b.kind) {
    case BlockKind::beta_D: return (s.beta_D);
    case BlockKind::beta_R: return s.beta_R.at(b.index);
    case BlockKind::beta_W: return s.beta_W.at(b.index);
    case BlockKind::beta_P: return s.beta_P.at(b.index);
    case BlockKind::eta: return (s.eta);
    }
    throw std::logic_error("unknown block");
}

const DiagonalGaussian& block_prior(const PriorSpec& priors, BlockKind kind)
{
    switch (kind) {
    case BlockKind::beta_D: return priors.beta_D;
    case BlockKind::beta_R: return priors.beta_R;
    case BlockKind::beta_W: return priors.beta_W;
    case BlockKind::beta_P: return priors.beta_P;
    default: throw std::logic_error("eta has no Gaussian prior");
    }
}

// sum_i D_i z_i - softplus(z_i) with z_i = (1, X_i) beta_D + eta_i.
double phenotype_loglik(const Vector& beta_D, const Vector& eta, const CohortData& data,
                        std::span<const std::uint8_t> D)
{
    return parallel::ordered_sum(data.n_patients(), [&](std::size_t begin, std::size_t end) {
        double s = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            const double z = covariate_part(beta_D, data, i) + eta[static_cast<Eigen::Index>(i)];
            s += (D[i] ? z : 0.0) - softplus(z);
        }
        return s;
    });
}

double indicator_loglik(const Vector& beta, const BinaryMatrix& response, std::size_t column,
                        const CohortData& data, std::span<const std::uint8_t> D)
{
    const double shift = beta[beta.size() - 1];
    const auto col = static_cast<Eigen::Index>(column);
    return parallel::ordered_sum(data.n_patients(), [&](std::size_t begin, std::size_t end) {
        double s = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            const double u = covariate_part(beta, data, i) + (D[i] ? shift : 0.0);
            s += (response(static_cast<Eigen::Index>(i), col) ? u : 0.0) - softplus(u);
        }
        return s;
    });
}

double block_log_target_with(const Vector& value, const ParameterState& params, BlockId block,
                             const PriorSpec& priors, const CohortData& data, std::span<const std::uint8_t> D)
{
    if (block.kind == BlockKind::beta_D)
        return phenotype_loglik(value, params.eta, data, D) + priors.beta_D.log_density(value);
    return indicator_loglik(value, block_matrix(data, block.kind), block.index, data, D) +
           block_prior(priors, block.kind).log_density(value);
}

double reflect(double x, double a, double b)
{
    const double w = b - a;
    double y = std::fmod(x - a, 2.0 * w);
    if (y < 0.0) y += 2.0 * w;
    return y <= w ? a + y : a + 2.0 * w - y;
}

std::vector<BlockId> coefficient_blocks(const CohortData& data)
{
    std::vector<BlockId> blocks{{BlockKind::beta_D, 0}};
    for (std::size_t j = 0; j < data.n_biomarkers(); ++j) blocks.push_back({BlockKind::beta_R, j});
    for (std::size_t k = 0; k < data.n_codes(); ++k) blocks.push_back({BlockKind::beta_W, k});
    for (std::size_t l = 0; l < data.n_medications(); ++l) blocks.push_back({BlockKind::beta_P, l});
    return blocks;
}

std::string init_payload(const ParameterState& state, const PriorSpec& priors, const CohortData& data)
{
    std::ostringstream os;
    os << "log_prior=" << log_prior(state, priors);
    std::size_t bad = 0, first = 0;
    for (std::size_t i = 0; i < data.n_patients(); ++i)
        if (!std::isfinite(log_lik_patient(state, data, i)) && bad++ == 0) first = i;
    os << " non_finite_patients=" << bad;
    if (bad) os << " first=" << first;
    return os.str();
}

struct ChainResult
{
    std::vector<ParameterState> draws;
    std::vector<Vector> loglik;
    std::vector<AcceptanceStats> acceptance;
};

ChainResult run_chain(const McmcConfig& config, const PriorSpec& priors, const CohortData& data,
                      std::size_t chain)
{
    Rng rng = make_stream(config.seed, chain);
    ParameterState state = initial_state(priors, data, rng);
    std::vector<std::uint8_t> D = initial_classes(data);

    const double lj = log_joint(state, priors, data);
    if (!std::isfinite(lj))
        throw InitializationError("non-finite log joint at initialisation of chain " + std::to_string(chain),
                                  chain, init_payload(state, priors, data));

    const auto blocks = coefficient_blocks(data);
    std::vector<RandomWalkProposal> proposals;
    for (const auto& b : blocks) {
        const std::size_t dim = static_cast<std::size_t>(block_vector(state, b).size());
        proposals.emplace_back(dim, config.rw_scale_beta, dim > 1 ? config.adapt_target : config.adapt_target_scalar);
    }
    RandomWalkProposal eta_proposal(1, config.rw_scale_eta, config.adapt_target_scalar);

    std::vector<AcceptanceStats> stats(blocks.size() + 1);
    std::vector<double> warm_sum(stats.size(), 0.0);
    for (std::size_t b = 0; b < blocks.size(); ++b) stats[b].block = blocks[b].name();
    stats.back().block = "eta";
    for (auto& s : stats) s.chain = chain;

    ChainResult out;
    const std::size_t total = config.n_warmup + config.n_samples;
    const std::size_t n = data.n_patients();
    std::vector<std::array<double, 2>> terms(n);
    const std::size_t n_anchor = std::min(config.n_anchor, config.n_warmup / 2);

    auto record = [&](std::size_t slot, const BlockUpdate& u, bool warm) {
        if (warm) warm_sum[slot] += static_cast<double>(u.accepted) / static_cast<double>(std::max<std::size_t>(u.proposed, 1));
        else {
            stats[slot].proposed += u.proposed;
            stats[slot].accepted += u.accepted;
        }
    };

    for (std::size_t t = 0; t < total; ++t) {
        const bool warm = t < config.n_warmup;
        if (t == config.n_warmup) {
            for (auto& p : proposals) p.freeze();
            eta_proposal.freeze();
        }

        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const BlockUpdate u = update_logistic_block(state, blocks[b], priors, data, D, proposals[b], rng);
            record(b, u, warm);
            if (warm) proposals[b].adapt(t, config.n_warmup, u.mean_accept_prob, &block_vector(state, blocks[b]));
            if (b == 0 && priors.eta_enabled()) {
                const BlockUpdate ue =
                    update_logistic_block(state, {BlockKind::eta, 0}, priors, data, D, eta_proposal, rng);
                record(blocks.size(), ue, warm);
                if (warm) eta_proposal.adapt(t, config.n_warmup, ue.mean_accept_prob, nullptr);
            }
        }
        update_beta_Y_tau2(state, data, D, priors, rng);

        parallel::for_each_chunk(n, [&](std::size_t begin, std::size_t end, std::size_t) {
            for (std::size_t i = begin; i < end; ++i) terms[i] = class_log_terms(state, data, i);
        });
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (std::size_t i = 0; i < n && t >= n_anchor; ++i) {
            const double p1 = std::exp(terms[i][1] - log_sum_exp(terms[i][0], terms[i][1]));
            D[i] = unit(rng) < p1 ? 1 : 0;
        }

        if (!warm && (t - config.n_warmup + 1) % config.thin == 0) {
            ParameterState kept = state;
            if (!config.store_eta || !priors.eta_enabled()) kept.eta.resize(0);
            out.draws.push_back(std::move(kept));
            if (config.store_loglik) {
                Vector ll(static_cast<Eigen::Index>(n));
                for (std::size_t i = 0; i < n; ++i) ll[static_cast<Eigen::Index>(i)] = log_sum_exp(terms[i][0], terms[i][1]);
                out.loglik.push_back(std::move(ll));
            }
        }
    }

    for (std::size_t b = 0; b < stats.size(); ++b) {
        stats[b].warmup_rate = config.n_warmup ? warm_sum[b] / static_cast<double>(config.n_warmup) : 0.0;
        stats[b].final_scale = b < proposals.size() ? proposals[b].scale() : eta_proposal.scale();
    }
    if (!priors.eta_enabled()) stats.pop_back();
    out.acceptance = std::move(stats);
    return out;
}

} // namespace

// ---------------------------------------------------------------------------

void McmcConfig::validate() const
{
    if (n_chains < 1) throw std::invalid_argument("n_chains must be at least 1");
    if (n_samples < 1) throw std::invalid_argument("n_samples must be at least 1");
    if (thin < 1) throw std::invalid_argument("thin must be at least 1");
    if (n_samples < thin) throw std::invalid_argument("n_samples must be at least thin");
    auto in_range = [](double t) { return t > 0.1 && t < 0.9; };
    if (!in_range(adapt_target) || !in_range(adapt_target_scalar))
        throw std::invalid_argument("adaptation targets must lie in (0.1, 0.9)");
    if (!(rw_scale_beta > 0.0) || !(rw_scale_eta > 0.0))
        throw std::invalid_argument("random-walk scales must be positive");
}

std::string BlockId::name() const
{
    switch (kind) {
    case BlockKind::beta_D: return "beta_D";
    case BlockKind::beta_R: return "beta_R[" + std::to_string(index) + "]";
    case BlockKind::beta_W: return "beta_W[" + std::to_string(index) + "]";
    case BlockKind::beta_P: return "beta_P[" + std::to_string(index) + "]";
    case BlockKind::eta: return "eta";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// RandomWalkProposal

RandomWalkProposal::RandomWalkProposal(std::size_t dim, double scale, double target)
    : dim_(dim),
      log_scale_(std::log(scale)),
      target_(target),
      shape_(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim))),
      mean_(Vector::Zero(static_cast<Eigen::Index>(dim))),
      scatter_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim)))
{
    if (dim < 1 || !(scale > 0.0)) throw std::invalid_argument("proposal needs dim >= 1 and positive scale");
}

Vector RandomWalkProposal::propose(const Vector& current, Rng& rng) const
{
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector z(static_cast<Eigen::Index>(dim_));
    for (Eigen::Index c = 0; c < z.size(); ++c) z[c] = normal(rng);
    const Vector step = shape_.triangularView<Eigen::Lower>() * z;
    return current + scale() * step;
}

double RandomWalkProposal::propose_scalar(double current, Rng& rng) const
{
    std::normal_distribution<double> normal(0.0, 1.0);
    return current + scale() * shape_(0, 0) * normal(rng);
}

void RandomWalkProposal::adapt(std::size_t iteration, std::size_t n_warmup, double alpha, const Vector* state)
{
    if (frozen_) return;
    const double gain = std::pow(static_cast<double>(iteration + 1), -0.6);
    log_scale_ += gain * (alpha - target_);
    log_scale_ = std::clamp(log_scale_, -20.0, 5.0);
    if (!state) return;

    // Welford accumulation over the later three quarters of warmup.
    if (iteration >= n_warmup / 4) {
        ++seen_;
        const Vector delta = *state - mean_;
        mean_ += delta / static_cast<double>(seen_);
        scatter_ += delta * (*state - mean_).transpose();
    }
    const bool checkpoint = (iteration + 1 == n_warmup / 2) || (iteration + 1 == (3 * n_warmup) / 4);
    if (checkpoint && seen_ >= 2 * dim_ + 10) {
        Eigen::MatrixXd cov = scatter_ / static_cast<double>(seen_ - 1);
        cov.diagonal().array() += 1e-10 + 1e-8 * cov.diagonal().mean();
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() == Eigen::Success) {
            shape_ = llt.matrixL();
            log_scale_ = std::log(2.38 / std::sqrt(static_cast<double>(dim_)));
        }
    }
}

// ---------------------------------------------------------------------------
// Updates

int sample_D_conditional(const ParameterState& params, const CohortData& data, std::size_t i, Rng& rng)
{
    const double p1 = class_posterior(params, data, i);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    return unit(rng) < p1 ? 1 : 0;
}

double block_log_target(const ParameterState& params, BlockId block, const PriorSpec& priors,
                        const CohortData& data, std::span<const std::uint8_t> D)
{
    if (D.size() != data.n_patients()) throw ShapeError("D must have one entry per patient");
    if (block.kind == BlockKind::eta) {
        const double log_width = priors.eta_enabled() ? std::log(priors.eta_upper - priors.eta_lower) : 0.0;
        return phenotype_loglik(params.beta_D, params.eta, data, D) -
               static_cast<double>(data.n_patients()) * log_width;
    }
    return block_log_target_with(block_vector(params, block), params, block, priors, data, D);
}

BlockUpdate update_logistic_block(ParameterState& params, BlockId block, const PriorSpec& priors,
                                  const CohortData& data, std::span<const std::uint8_t> D,
                                  const RandomWalkProposal& proposal, Rng& rng)
{
    if (D.size() != data.n_patients()) throw ShapeError("D must have one entry per patient");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    BlockUpdate result;

    if (block.kind == BlockKind::eta) {
        if (!priors.eta_enabled()) return result;
        const double a = priors.eta_lower, b = priors.eta_upper;
        double accept_sum = 0.0;
        for (std::size_t i = 0; i < data.n_patients(); ++i) {
            const auto row = static_cast<Eigen::Index>(i);
            const double base = covariate_part(params.beta_D, data, i);
            const double current = params.eta[row];
            const double candidate = reflect(proposal.propose_scalar(current, rng), a, b);
            const double z0 = base + current, z1 = base + candidate;
            const double delta = (D[i] ? z1 - z0 : 0.0) - softplus(z1) + softplus(z0);
            const double alpha = delta >= 0.0 ? 1.0 : std::exp(delta);
            accept_sum += alpha;
            ++result.proposed;
            if (unit(rng) < alpha) {
                params.eta[row] = candidate;
                ++result.accepted;
            }
        }
        result.mean_accept_prob = result.proposed ? accept_sum / static_cast<double>(result.proposed) : 0.0;
        return result;
    }

    Vector& current = block_vector(params, block);
    if (static_cast<std::size_t>(current.size()) != proposal.dimension())
        throw ShapeError("proposal dimension does not match block " + block.name());
    const double now = block_log_target_with(current, params, block, priors, data, D);
    Vector candidate = proposal.propose(current, rng);
    const double next = block_log_target_with(candidate, params, block, priors, data, D);
    const double delta = next - now;
    const double alpha = std::isnan(delta) ? 0.0 : (delta >= 0.0 ? 1.0 : std::exp(delta));
    result.proposed = 1;
    result.mean_accept_prob = alpha;
    if (unit(rng) < alpha) {
        current = std::move(candidate);
        result.accepted = 1;
    }
    return result;
}

void draw_beta_Y_given_tau2(ParameterState& params, std::size_t j, const CohortData& data,
                            std::span<const std::uint8_t> D, const PriorSpec& priors, Rng& rng)
{
    const std::size_t m = data.n_covariates();
    const auto w = static_cast<Eigen::Index>(m + 2);
    const auto col = static_cast<Eigen::Index>(j);
    const DiagonalGaussian& prior = priors.biomarker(j);
    const double inv_tau2 = 1.0 / params.tau2[col];

    Eigen::MatrixXd precision = prior.variance.cwiseInverse().asDiagonal();
    Vector rhs = prior.mean.cwiseQuotient(prior.variance);
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(w, w);
    Vector xy = Vector::Zero(w);
    Vector x(w);
    for (std::size_t i = 0; i < data.n_patients(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        if (!data.R(row, col)) continue;
        x[0] = 1.0;
        for (std::size_t c = 0; c < m; ++c) x[static_cast<Eigen::Index>(c + 1)] = data.X(row, static_cast<Eigen::Index>(c));
        x[w - 1] = D[i] ? 1.0 : 0.0;
        gram.selfadjointView<Eigen::Lower>().rankUpdate(x);
        xy += data.Y(row, col) * x;
    }
    precision += inv_tau2 * Eigen::MatrixXd(gram.selfadjointView<Eigen::Lower>());
    rhs += inv_tau2 * xy;

    Eigen::LLT<Eigen::MatrixXd> llt(precision);
    if (llt.info() != Eigen::Success) throw ModelError("biomarker posterior precision is not positive definite");
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector z(w);
    for (Eigen::Index c = 0; c < w; ++c) z[c] = normal(rng);
    params.beta_Y[j] = llt.solve(rhs) + llt.matrixU().solve(z);
}

void draw_tau2_given_beta_Y(ParameterState& params, std::size_t j, const CohortData& data,
                            std::span<const std::uint8_t> D, const PriorSpec& priors, Rng& rng)
{
    const auto col = static_cast<Eigen::Index>(j);
    const Vector& beta = params.beta_Y[j];
    const double shift = beta[beta.size() - 1];
    double rss = 0.0;
    std::size_t rows = 0;
    for (std::size_t i = 0; i < data.n_patients(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        if (!data.R(row, col)) continue;
        const double e = data.Y(row, col) - covariate_part(beta, data, i) - (D[i] ? shift : 0.0);
        rss += e * e;
        ++rows;
    }
    const double shape = priors.tau2_shape + 0.5 * static_cast<double>(rows);
    const double scale = priors.tau2_scale + 0.5 * rss;
    std::gamma_distribution<double> gamma(shape, 1.0 / scale);
    params.tau2[col] = 1.0 / gamma(rng);
}

void update_beta_Y_tau2(ParameterState& params, const CohortData& data, std::span<const std::uint8_t> D,
                        const PriorSpec& priors, Rng& rng)
{
    if (D.size() != data.n_patients()) throw ShapeError("D must have one entry per patient");
    for (std::size_t j = 0; j < data.n_biomarkers(); ++j) {
        draw_beta_Y_given_tau2(params, j, data, D, priors, rng);
        draw_tau2_given_beta_Y(params, j, data, D, priors, rng);
    }
}

ParameterState initial_state(const PriorSpec& priors, const CohortData& data, Rng& rng)
{
    ParameterState s = ParameterState::zeros(data, priors);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto draw = [&](const DiagonalGaussian& g) {
        Vector v(g.mean.size());
        for (Eigen::Index c = 0; c < v.size(); ++c) v[c] = g.mean[c] + 0.1 * std::sqrt(g.variance[c]) * normal(rng);
        return v;
    };
    s.beta_D = draw(priors.beta_D);
    for (std::size_t j = 0; j < data.n_biomarkers(); ++j) {
        s.beta_R[j] = draw(priors.beta_R);
        s.beta_Y[j] = draw(priors.biomarker(j));
    }
    for (auto& b : s.beta_W) b = draw(priors.beta_W);
    for (auto& b : s.beta_P) b = draw(priors.beta_P);
    const double c = priors.tau2_shape, d = priors.tau2_scale;
    s.tau2.setConstant(c > 1.0 ? d / (c - 1.0) : d / (c + 1.0));
    return s;
}

std::vector<std::uint8_t> initial_classes(const CohortData& data)
{
    std::vector<std::uint8_t> D(data.n_patients(), 0);
    for (std::size_t i = 0; i < data.n_patients(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        const bool coded = (data.W.cols() > 0 && data.W.row(row).cast<int>().sum() > 0) ||
                           (data.P.cols() > 0 && data.P.row(row).cast<int>().sum() > 0);
        D[i] = coded ? 1 : 0;
    }
    return D;
}

namespace {

// Mode of a logistic regression with a diagonal Gaussian prior. Row i of the
// design is (1, X_i) followed by D_i when with_class is set.
Vector logistic_map(const DiagonalGaussian& prior, const CohortData& data, std::span<const std::uint8_t> D,
                    bool with_class, const BinaryMatrix* response, Eigen::Index col, double offset)
{
    const std::size_t m = data.n_covariates();
    const auto w = static_cast<Eigen::Index>(m + 1 + (with_class ? 1 : 0));
    const Vector inv_var = prior.variance.cwiseInverse();
    Vector beta = prior.mean;
    Vector x(w);
    for (int iter = 0; iter < 50; ++iter) {
        Vector grad = -(beta - prior.mean).cwiseProduct(inv_var);
        Eigen::MatrixXd hess = inv_var.asDiagonal();
        for (std::size_t i = 0; i < data.n_patients(); ++i) {
            const auto row = static_cast<Eigen::Index>(i);
            x[0] = 1.0;
            for (std::size_t c = 0; c < m; ++c) x[static_cast<Eigen::Index>(c + 1)] = data.X(row, static_cast<Eigen::Index>(c));
            if (with_class) x[w - 1] = D[i] ? 1.0 : 0.0;
            const double y = response ? (*response)(row, col) : D[i];
            const double p = expit(x.dot(beta) + offset);
            grad += (y - p) * x;
            hess.selfadjointView<Eigen::Lower>().rankUpdate(x, p * (1.0 - p));
        }
        const Vector step = Eigen::MatrixXd(hess.selfadjointView<Eigen::Lower>()).llt().solve(grad);
        beta += step;
        if (step.cwiseAbs().maxCoeff() < 1e-10) break;
    }
    return beta;
}

} // namespace

ParameterState complete_data_map(const PriorSpec& priors, const CohortData& data, std::span<const std::uint8_t> D)
{
    if (D.size() != data.n_patients()) throw ShapeError("class vector length does not match the cohort");
    ParameterState s = ParameterState::zeros(data, priors);
    const double eta0 = priors.eta_enabled() ? 0.5 * (priors.eta_lower + priors.eta_upper) : priors.eta_lower;
    s.beta_D = logistic_map(priors.beta_D, data, D, false, nullptr, 0, eta0);
    for (std::size_t j = 0; j < data.n_biomarkers(); ++j)
        s.beta_R[j] = logistic_map(priors.beta_R, data, D, true, &data.R, static_cast<Eigen::Index>(j), 0.0);
    for (std::size_t k = 0; k < data.n_codes(); ++k)
        s.beta_W[k] = logistic_map(priors.beta_W, data, D, true, &data.W, static_cast<Eigen::Index>(k), 0.0);
    for (std::size_t l = 0; l < data.n_medications(); ++l)
        s.beta_P[l] = logistic_map(priors.beta_P, data, D, true, &data.P, static_cast<Eigen::Index>(l), 0.0);

    // Alternate the two biomarker conditional modes.
    const double c = priors.tau2_shape, d = priors.tau2_scale;
    const std::size_t m = data.n_covariates();
    for (std::size_t j = 0; j < data.n_biomarkers(); ++j) {
        const auto col = static_cast<Eigen::Index>(j);
        const DiagonalGaussian& prior = priors.biomarker(j);
        const auto w = static_cast<Eigen::Index>(m + 2);
        Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(w, w);
        Vector xy = Vector::Zero(w), x(w);
        double n_rows = 0.0;
        for (std::size_t i = 0; i < data.n_patients(); ++i) {
            const auto row = static_cast<Eigen::Index>(i);
            if (!data.R(row, col)) continue;
            x[0] = 1.0;
            for (std::size_t a = 0; a < m; ++a) x[static_cast<Eigen::Index>(a + 1)] = data.X(row, static_cast<Eigen::Index>(a));
            x[w - 1] = D[i] ? 1.0 : 0.0;
            gram.selfadjointView<Eigen::Lower>().rankUpdate(x);
            xy += data.Y(row, col) * x;
            n_rows += 1.0;
        }
        gram = gram.selfadjointView<Eigen::Lower>();
        double tau2 = d / (c + 1.0);
        Vector beta = prior.mean;
        for (int iter = 0; iter < 20; ++iter) {
            Eigen::MatrixXd precision = gram / tau2;
            precision.diagonal() += prior.variance.cwiseInverse();
            beta = precision.llt().solve(xy / tau2 + prior.mean.cwiseQuotient(prior.variance));
            double rss = 0.0;
            for (std::size_t i = 0; i < data.n_patients(); ++i) {
                const auto row = static_cast<Eigen::Index>(i);
                if (!data.R(row, col)) continue;
                double mu = beta[0] + (D[i] ? beta[w - 1] : 0.0);
                for (std::size_t a = 0; a < m; ++a)
                    mu += beta[static_cast<Eigen::Index>(a + 1)] * data.X(row, static_cast<Eigen::Index>(a));
                rss += (data.Y(row, col) - mu) * (data.Y(row, col) - mu);
            }
            tau2 = (d + 0.5 * rss) / (c + 0.5 * n_rows + 1.0);
        }
        s.beta_Y[j] = beta;
        s.tau2[col] = tau2;
    }
    return s;
}

PosteriorDraws run_chains(const McmcConfig& config, const PriorSpec& priors, const CohortData& data)
{
    config.validate();
    data.validate();
    priors.validate(data.n_covariates(), data.n_biomarkers());

    const std::uint64_t per_draw =
        ParameterLayout::of(data, priors).global_size() +
        (config.store_loglik ? data.n_patients() : 0) + (config.store_eta && priors.eta_enabled() ? data.n_patients() : 0);
    const std::uint64_t bytes = 8ull * per_draw * config.n_chains * config.draws_per_chain();
    if (bytes > config.memory_limit_bytes)
        throw std::invalid_argument("retained draws need " + std::to_string(bytes >> 20) +
                                    " MiB, above memory_limit_bytes; raise thin or drop eta/loglik storage");

    std::vector<ChainResult> chains(config.n_chains);
    tbb::parallel_for(std::size_t{0}, config.n_chains,
                      [&](std::size_t c) { chains[c] = run_chain(config, priors, data, c); });

    PosteriorDraws out;
    out.n_chains = config.n_chains;
    out.eta_stored = config.store_eta && priors.eta_enabled();
    const std::size_t per_chain = config.draws_per_chain();
    if (config.store_loglik)
        out.pointwise_loglik.resize(static_cast<Eigen::Index>(per_chain * config.n_chains),
                                    static_cast<Eigen::Index>(data.n_patients()));
    for (std::size_t c = 0; c < config.n_chains; ++c) {
        for (std::size_t s = 0; s < chains[c].draws.size(); ++s) {
            if (config.store_loglik)
                out.pointwise_loglik.row(static_cast<Eigen::Index>(out.draws.size())) = chains[c].loglik[s].transpose();
            out.draws.push_back(std::move(chains[c].draws[s]));
            out.chain_id.push_back(c);
        }
        for (auto& a : chains[c].acceptance) out.acceptance.push_back(std::move(a));
    }
    return out;
}

} // namespace phenolca::gibbs
