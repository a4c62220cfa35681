#include "phenolca/advi.hpp"

#include "phenolca/gibbs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace phenolca::advi {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
const double kLog2Pi = std::log(2.0 * M_PI);

double median(std::vector<double> v)
{
    const std::size_t n = v.size();
    std::sort(v.begin(), v.end());
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Vector standard_normal(std::size_t dim, Rng& rng)
{
    std::normal_distribution<double> z(0.0, 1.0);
    Vector eps(static_cast<Eigen::Index>(dim));
    for (Eigen::Index c = 0; c < eps.size(); ++c) eps[c] = z(rng);
    return eps;
}

ElboGradient gradient_impl(const VariationalState& q, const Target& target, std::size_t n_mc, Rng& rng,
                           const std::vector<std::size_t>* batch, double scale)
{
    const auto dim = static_cast<Eigen::Index>(q.dimension());
    const Vector sigma = q.log_scale.array().exp();
    ElboGradient out;
    out.location = Vector::Zero(dim);
    out.log_scale = Vector::Zero(dim);
    Vector g;
    std::size_t kept = 0;
    for (std::size_t s = 0; s < n_mc; ++s) {
        const Vector eps = standard_normal(q.dimension(), rng);
        const Vector v = q.location + sigma.cwiseProduct(eps);
        const double lp = batch ? target.log_density_gradient_batch(v, *batch, scale, g)
                                : target.log_density_gradient(v, g);
        if (!std::isfinite(lp) || !g.allFinite()) {
            ++out.non_finite;
            continue;
        }
        out.location += g;
        out.log_scale += g.cwiseProduct(eps);
        ++kept;
    }
    if (kept > 0) {
        out.location /= static_cast<double>(kept);
        out.log_scale = (out.log_scale / static_cast<double>(kept)).cwiseProduct(sigma);
    }
    out.log_scale.array() += 1.0;
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// Transforms

double Transform::to_constrained(double v) const
{
    switch (kind) {
    case TransformKind::log: return std::exp(v);
    case TransformKind::scaled_logit: return lower + (upper - lower) * expit(v);
    default: return v;
    }
}

double Transform::to_unconstrained(double x) const
{
    switch (kind) {
    case TransformKind::log:
        if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("log transform needs a positive finite value");
        return std::log(x);
    case TransformKind::scaled_logit:
        if (!(x > lower && x < upper)) throw DomainError("scaled logit needs a value strictly inside (a, b)");
        return std::log(x - lower) - std::log(upper - x);
    default:
        if (!std::isfinite(x)) throw DomainError("value is not finite");
        return x;
    }
}

double Transform::log_abs_jacobian(double v) const
{
    switch (kind) {
    case TransformKind::log: return v;
    case TransformKind::scaled_logit: return std::log(upper - lower) - softplus(-v) - softplus(v);
    default: return 0.0;
    }
}

double Transform::derivative(double v) const
{
    switch (kind) {
    case TransformKind::log: return std::exp(v);
    case TransformKind::scaled_logit: {
        const double p = expit(v);
        return (upper - lower) * p * (1.0 - p);
    }
    default: return 1.0;
    }
}

double Transform::log_jacobian_derivative(double v) const
{
    switch (kind) {
    case TransformKind::log: return 1.0;
    case TransformKind::scaled_logit: return expit(-v) - expit(v);
    default: return 0.0;
    }
}

// ---------------------------------------------------------------------------
// Target defaults

std::vector<Transform> Target::transforms() const { return std::vector<Transform>(dimension()); }

Vector Target::initial_location() const { return Vector::Zero(static_cast<Eigen::Index>(dimension())); }

Vector Target::step_scales() const { return Vector::Ones(static_cast<Eigen::Index>(dimension())); }

double Target::log_density_gradient_batch(const Vector&, const std::vector<std::size_t>&, double, Vector&) const
{
    throw std::logic_error("target does not support minibatch gradients");
}

// ---------------------------------------------------------------------------
// Variational state

double VariationalState::entropy() const
{
    return log_scale.sum() + 0.5 * static_cast<double>(log_scale.size()) * (1.0 + kLog2Pi);
}

void VariationalState::validate() const
{
    if (location.size() != log_scale.size())
        throw std::invalid_argument("location and log_scale differ in length");
    if (transform_map.size() != dimension())
        throw std::invalid_argument("transform map does not cover every coordinate");
    for (Eigen::Index c = 0; c < log_scale.size(); ++c) {
        const double s = std::exp(log_scale[c]);
        if (!std::isfinite(location[c]) || !std::isfinite(s) || !(s > 0.0))
            throw std::invalid_argument("variational coordinate " + std::to_string(c) + " is degenerate");
    }
}

std::string to_string(StopReason reason)
{
    switch (reason) {
    case StopReason::threshold: return "threshold";
    case StopReason::diverged: return "diverged";
    default: return "max_iter";
    }
}

void AdviConfig::validate() const
{
    if (n_mc_grad < 1 || n_mc_elbo < 1 || eval_every < 1 || max_iterations < 1 || window < 1 ||
        divergence_window < 1)
        throw std::invalid_argument("ADVI counts must be at least 1");
    if (!(rel_tol >= 0.0)) throw std::invalid_argument("rel_tol must be non-negative");
    if (!(step_size > 0.0) || !std::isfinite(step_size)) throw std::invalid_argument("step_size must be positive");
    if (!(step_offset > 0.0)) throw std::invalid_argument("step_offset must be positive");
    if (!(divergence_guard >= 0.0)) throw std::invalid_argument("divergence_guard must be non-negative");
    if (!std::isfinite(init_log_scale)) throw std::invalid_argument("init_log_scale must be finite");
}

// ---------------------------------------------------------------------------
// Estimators

ElboEstimate elbo_estimate(const VariationalState& q, const Target& target, std::size_t n_mc, Rng& rng)
{
    if (n_mc < 1) throw std::invalid_argument("n_mc must be at least 1");
    if (q.dimension() != target.dimension()) throw ShapeError("variational state does not match the target");
    const Vector sigma = q.log_scale.array().exp();
    std::vector<double> values;
    values.reserve(n_mc);
    ElboEstimate out;
    for (std::size_t s = 0; s < n_mc; ++s) {
        const Vector eps = standard_normal(q.dimension(), rng);
        const double lp = target.log_density(q.location + sigma.cwiseProduct(eps));
        if (!std::isfinite(lp)) ++out.non_finite;
        values.push_back(lp);
    }
    if (out.non_finite > 0) {
        out.value = -kInf;
        out.std_error = kInf;
        return out;
    }
    const double n = static_cast<double>(n_mc);
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    out.value = mean + q.entropy();
    out.std_error = n_mc > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
    return out;
}

ElboGradient elbo_gradient(const VariationalState& q, const Target& target, std::size_t n_mc, Rng& rng)
{
    if (n_mc < 1) throw std::invalid_argument("n_mc must be at least 1");
    if (q.dimension() != target.dimension()) throw ShapeError("variational state does not match the target");
    return gradient_impl(q, target, n_mc, rng, nullptr, 1.0);
}

// ---------------------------------------------------------------------------
// Optimiser

FitResult fit(const Target& target, const AdviConfig& config)
{
    config.validate();
    const std::size_t dim = target.dimension();
    const auto n = static_cast<Eigen::Index>(dim);

    FitResult result;
    auto& q = result.state;
    q.location = target.initial_location();
    const Vector scales = target.step_scales();
    if (q.location.size() != n || scales.size() != n)
        throw ShapeError("target initial location or step scales have the wrong length");
    q.log_scale = scales.array().log() + config.init_log_scale;
    q.transform_map = target.transforms();
    q.validate();

    Rng rng = make_stream(config.seed, 0);
    Vector acc_location = Vector::Zero(n), acc_log_scale = Vector::Zero(n);

    const std::size_t n_obs = target.n_observations();
    const bool minibatch = config.minibatch_size > 0 && n_obs > config.minibatch_size;
    std::vector<std::size_t> order(n_obs), batch;
    std::iota(order.begin(), order.end(), std::size_t{0});

    auto& trace = result.trace;
    std::size_t falling = 0;
    double fall_start = 0.0;

    auto evaluate = [&](std::size_t iteration) -> bool {
        const ElboEstimate e = elbo_estimate(q, target, config.n_mc_elbo, rng);
        trace.iteration.push_back(iteration);
        trace.elbo.push_back(e.value);
        trace.elbo_se.push_back(e.std_error);
        const std::size_t t = trace.elbo.size();
        const std::size_t from = t > config.window ? t - config.window : 0;
        const double m = median(std::vector<double>(trace.elbo.begin() + static_cast<std::ptrdiff_t>(from),
                                                    trace.elbo.end()));
        trace.window_median.push_back(m);
        if (t == 1) {
            trace.rel_change.push_back(std::numeric_limits<double>::quiet_NaN());
            return false;
        }
        const double prev = trace.window_median[t - 2];
        const double rel = std::abs(m - prev) / std::abs(m);
        trace.rel_change.push_back(rel);

        if (m < prev) {
            if (falling == 0) fall_start = prev;
            ++falling;
            if (falling >= config.divergence_window && fall_start - m > config.divergence_guard * std::abs(m)) {
                trace.stop_reason = StopReason::diverged;
                result.iterations = iteration;
                throw DivergenceError("ELBO window median fell across " + std::to_string(falling) +
                                          " consecutive evaluations",
                                      result);
            }
        } else {
            falling = 0;
        }
        return rel < config.rel_tol;
    };

    for (std::size_t it = 1; it <= config.max_iterations; ++it) {
        ElboGradient g;
        if (minibatch) {
            for (std::size_t b = 0; b < config.minibatch_size; ++b) {
                std::uniform_int_distribution<std::size_t> pick(b, n_obs - 1);
                std::swap(order[b], order[pick(rng)]);
            }
            batch.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(config.minibatch_size));
            std::sort(batch.begin(), batch.end());
            const double scale = static_cast<double>(n_obs) / static_cast<double>(config.minibatch_size);
            g = gradient_impl(q, target, config.n_mc_grad, rng, &batch, scale);
        } else {
            g = gradient_impl(q, target, config.n_mc_grad, rng, nullptr, 1.0);
        }
        if (g.non_finite < config.n_mc_grad) {
            acc_location += g.location.cwiseAbs2();
            acc_log_scale += g.log_scale.cwiseAbs2();
            q.location.array() += config.step_size * scales.array() * g.location.array() /
                                  (config.step_offset + acc_location.array().sqrt());
            q.log_scale.array() +=
                config.step_size * g.log_scale.array() / (config.step_offset + acc_log_scale.array().sqrt());
        }
        result.iterations = it;
        if (it % config.eval_every == 0 && evaluate(it)) {
            trace.stop_reason = StopReason::threshold;
            return result;
        }
    }
    if (trace.iteration.empty() || trace.iteration.back() != config.max_iterations) {
        if (evaluate(config.max_iterations)) {
            trace.stop_reason = StopReason::threshold;
            return result;
        }
    }
    trace.stop_reason = StopReason::max_iterations;
    return result;
}

// ---------------------------------------------------------------------------
// Latent phenotype target

std::vector<Transform> lca_transforms(const ParameterLayout& layout, const PriorSpec& priors)
{
    std::vector<Transform> t(layout.size());
    for (std::size_t j = 0; j < layout.n_biomarkers(); ++j) t[layout.tau2(j)].kind = TransformKind::log;
    if (layout.eta_enabled())
        for (std::size_t i = 0; i < layout.n_patients(); ++i)
            t[layout.eta(i)] = {TransformKind::scaled_logit, priors.eta_lower, priors.eta_upper};
    return t;
}

double log_abs_jacobian(const Vector& v, const std::vector<Transform>& transforms)
{
    if (transforms.size() != static_cast<std::size_t>(v.size())) throw ShapeError("transform map length mismatch");
    double s = 0.0;
    for (Eigen::Index c = 0; c < v.size(); ++c) s += transforms[static_cast<std::size_t>(c)].log_abs_jacobian(v[c]);
    return s;
}

Vector to_unconstrained(const ParameterState& params, const PriorSpec& priors, const CohortData& data)
{
    params.check_shape(data);
    const ParameterLayout layout = ParameterLayout::of(data, priors);
    const auto transforms = lca_transforms(layout, priors);
    Vector v = layout.flatten(params);
    for (Eigen::Index c = 0; c < v.size(); ++c) v[c] = transforms[static_cast<std::size_t>(c)].to_unconstrained(v[c]);
    return v;
}

ParameterState from_unconstrained(const Vector& v, const PriorSpec& priors, const CohortData& data)
{
    const ParameterLayout layout = ParameterLayout::of(data, priors);
    if (static_cast<std::size_t>(v.size()) != layout.size()) throw ShapeError("unconstrained vector has the wrong length");
    const auto transforms = lca_transforms(layout, priors);
    Vector x(v.size());
    for (Eigen::Index c = 0; c < v.size(); ++c) {
        if (!std::isfinite(v[c])) throw DomainError("unconstrained coordinate is not finite");
        x[c] = transforms[static_cast<std::size_t>(c)].to_constrained(v[c]);
    }
    return layout.unflatten(x, priors.eta_lower);
}

LcaTarget::LcaTarget(const PriorSpec& priors, const CohortData& data)
    : priors_(priors), data_(data), layout_(ParameterLayout::of(data, priors))
{
    data.validate(true);
    priors.validate(data.n_covariates(), data.n_biomarkers());
    transforms_ = lca_transforms(layout_, priors);
}

std::vector<Transform> LcaTarget::transforms() const { return transforms_; }

double LcaTarget::log_density(const Vector& v) const
{
    try {
        const ParameterState p = from_unconstrained(v, priors_, data_);
        return log_joint(p, priors_, data_) + log_abs_jacobian(v, transforms_);
    } catch (const DomainError&) {
        return -kInf;
    }
}

double LcaTarget::finish_gradient(const Vector& v, double value, Vector& gradient) const
{
    for (Eigen::Index c = 0; c < v.size(); ++c) {
        const auto& t = transforms_[static_cast<std::size_t>(c)];
        gradient[c] = gradient[c] * t.derivative(v[c]) + t.log_jacobian_derivative(v[c]);
    }
    return value + log_abs_jacobian(v, transforms_);
}

double LcaTarget::log_density_gradient(const Vector& v, Vector& gradient) const
{
    try {
        const ParameterState p = from_unconstrained(v, priors_, data_);
        GradientOptions options;
        options.require_interior = false;
        const double value = log_joint_with_gradient(p, priors_, data_, gradient, options);
        return finish_gradient(v, value, gradient);
    } catch (const DomainError&) {
        gradient = Vector::Constant(v.size(), std::numeric_limits<double>::quiet_NaN());
        return -kInf;
    }
}

double LcaTarget::log_density_gradient_batch(const Vector& v, const std::vector<std::size_t>& batch, double scale,
                                             Vector& gradient) const
{
    try {
        const ParameterState p = from_unconstrained(v, priors_, data_);
        GradientOptions options;
        options.require_interior = false;
        options.patients = &batch;
        options.likelihood_scale = scale;
        const double value = log_joint_with_gradient(p, priors_, data_, gradient, options);
        return finish_gradient(v, value, gradient);
    } catch (const DomainError&) {
        gradient = Vector::Constant(v.size(), std::numeric_limits<double>::quiet_NaN());
        return -kInf;
    }
}

Vector LcaTarget::initial_location() const
{
    const std::vector<std::uint8_t> D = gibbs::initial_classes(data_);
    ParameterState start = gibbs::complete_data_map(priors_, data_, D);
    Vector v = layout_.flatten(start);
    for (std::size_t j = 0; j < data_.n_biomarkers(); ++j) {
        const auto c = static_cast<Eigen::Index>(layout_.tau2(j));
        v[c] = std::log(v[c]);
    }
    if (layout_.eta_enabled()) v.tail(static_cast<Eigen::Index>(layout_.n_patients())).setZero();
    return v;
}

Vector LcaTarget::step_scales() const
{
    Vector s = Vector::Ones(static_cast<Eigen::Index>(layout_.size()));
    auto put = [&](std::size_t offset, const Vector& variance) {
        s.segment(static_cast<Eigen::Index>(offset), variance.size()) = variance.array().sqrt();
    };
    put(layout_.beta_D(), priors_.beta_D.variance);
    for (std::size_t j = 0; j < data_.n_biomarkers(); ++j) {
        put(layout_.beta_R(j), priors_.beta_R.variance);
        put(layout_.beta_Y(j), priors_.biomarker(j).variance);
    }
    for (std::size_t k = 0; k < data_.n_codes(); ++k) put(layout_.beta_W(k), priors_.beta_W.variance);
    for (std::size_t l = 0; l < data_.n_medications(); ++l) put(layout_.beta_P(l), priors_.beta_P.variance);
    return s;
}

FitResult fit(const AdviConfig& config, const PriorSpec& priors, const CohortData& data)
{
    const LcaTarget target(priors, data);
    return fit(target, config);
}

PosteriorDraws sample_posterior(const VariationalState& q, const PriorSpec& priors, const CohortData& data,
                                std::size_t n_draws, Rng& rng, bool store_eta)
{
    if (n_draws < 1) throw std::invalid_argument("n_draws must be at least 1");
    const ParameterLayout layout = ParameterLayout::of(data, priors);
    if (q.dimension() != layout.size()) throw ShapeError("variational state does not match the model");
    const Vector sigma = q.log_scale.array().exp();

    PosteriorDraws out;
    out.n_chains = 1;
    out.eta_stored = store_eta && priors.eta_enabled();
    out.pointwise_loglik.resize(static_cast<Eigen::Index>(n_draws), static_cast<Eigen::Index>(data.n_patients()));
    out.draws.reserve(n_draws);
    for (std::size_t s = 0; s < n_draws; ++s) {
        const Vector v = q.location + sigma.cwiseProduct(standard_normal(q.dimension(), rng));
        ParameterState p = from_unconstrained(v, priors, data);
        out.pointwise_loglik.row(static_cast<Eigen::Index>(s)) = pointwise_log_lik(p, data).transpose();
        if (!out.eta_stored) p.eta.resize(0);
        out.draws.push_back(std::move(p));
        out.chain_id.push_back(0);
    }
    return out;
}

} // namespace phenolca::advi
