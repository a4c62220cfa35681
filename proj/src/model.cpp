#include "phenolca/model.hpp"

#include <limits>
#include <numbers>
#include <sstream>

#include <boost/math/distributions/normal.hpp>

#include "phenolca/parallel.hpp"

namespace phenolca {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

bool is_binary(const BinaryMatrix& m)
{
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            if (m(r, c) > 1) return false;
    return true;
}

// beta[0] + sum_m beta[1 + m] * x[m]; the phenotype coefficient is not included.
inline double covariate_part(const Vector& beta, const double* x, std::size_t m)
{
    double u = beta[0];
    for (std::size_t c = 0; c < m; ++c) u += beta[c + 1] * x[c];
    return u;
}

inline double bernoulli_log_pmf(std::uint8_t y, double u) { return y ? log_expit(u) : log_expit(-u); }

inline double normal_log_density(double y, double mean, double var)
{
    const double e = y - mean;
    return -0.5 * (kLog2Pi + std::log(var)) - 0.5 * e * e / var;
}

void check_family(const std::vector<Vector>& family, std::size_t count, std::size_t width, const char* name)
{
    if (family.size() != count) {
        std::ostringstream os;
        os << name << " has " << family.size() << " vectors, expected " << count;
        throw ShapeError(os.str());
    }
    for (const auto& v : family)
        if (static_cast<std::size_t>(v.size()) != width) {
            std::ostringstream os;
            os << name << " vector has length " << v.size() << ", expected " << width;
            throw ShapeError(os.str());
        }
}

void check_index(const CohortData& data, std::size_t i)
{
    if (i >= data.n_patients())
        throw std::out_of_range("patient index " + std::to_string(i) + " out of range for cohort of " +
                                std::to_string(data.n_patients()));
}

// Scratch buffers for one patient: class-wise residuals of every factor.
struct PatientScratch
{
    std::vector<double> r0, r1; // Bernoulli residual y - expit(u_d), availability then codes then meds
    std::vector<double> e0, e1; // biomarker residual y - mu_d

    explicit PatientScratch(const CohortData& data)
        : r0(data.n_biomarkers() + data.n_codes() + data.n_medications()),
          r1(r0.size()),
          e0(data.n_biomarkers()),
          e1(data.n_biomarkers())
    {
    }
};

// Evaluates both class terms of patient i and, when grad is non-null, adds the
// patient's contribution to the gradient. eta_grad receives d/d eta_i.
double patient_terms(const ParameterState& p, const CohortData& data, const ParameterLayout* layout,
                     std::size_t i, PatientScratch* scratch, double* grad, double* eta_grad,
                     std::array<double, 2>* terms_out = nullptr)
{
    const std::size_t m = data.n_covariates();
    const std::size_t nj = data.n_biomarkers(), nk = data.n_codes(), nl = data.n_medications();
    const double* x = data.X.row(static_cast<Eigen::Index>(i)).data();
    const auto row = static_cast<Eigen::Index>(i);

    const double z = covariate_part(p.beta_D, x, m) + p.eta[row];
    double t0 = log_expit(-z);
    double t1 = log_expit(z);

    auto bernoulli = [&](const Vector& beta, std::uint8_t y, std::size_t slot) {
        const double u0 = covariate_part(beta, x, m);
        const double u1 = u0 + beta[static_cast<Eigen::Index>(m + 1)];
        t0 += bernoulli_log_pmf(y, u0);
        t1 += bernoulli_log_pmf(y, u1);
        if (scratch) {
            scratch->r0[slot] = y - expit(u0);
            scratch->r1[slot] = y - expit(u1);
        }
    };

    for (std::size_t j = 0; j < nj; ++j) {
        const auto col = static_cast<Eigen::Index>(j);
        const std::uint8_t avail = data.R(row, col);
        bernoulli(p.beta_R[j], avail, j);
        if (avail) {
            const Vector& b = p.beta_Y[j];
            const double mu0 = covariate_part(b, x, m);
            const double mu1 = mu0 + b[static_cast<Eigen::Index>(m + 1)];
            const double y = data.Y(row, col);
            const double var = p.tau2[col];
            t0 += normal_log_density(y, mu0, var);
            t1 += normal_log_density(y, mu1, var);
            if (scratch) {
                scratch->e0[j] = y - mu0;
                scratch->e1[j] = y - mu1;
            }
        }
    }
    for (std::size_t k = 0; k < nk; ++k)
        bernoulli(p.beta_W[k], data.W(row, static_cast<Eigen::Index>(k)), nj + k);
    for (std::size_t l = 0; l < nl; ++l)
        bernoulli(p.beta_P[l], data.P(row, static_cast<Eigen::Index>(l)), nj + nk + l);

    const double lse = log_sum_exp(t0, t1);
    if (terms_out) *terms_out = {t0, t1};
    if (!grad) return lse;

    const double w1 = std::exp(t1 - lse);
    const double w0 = std::exp(t0 - lse);
    auto add_design = [&](double* g, double common, double phenotype) {
        g[0] += common;
        for (std::size_t c = 0; c < m; ++c) g[c + 1] += common * x[c];
        g[m + 1] += phenotype;
    };

    // Phenotype model: d/dz of log(sum_d pi_d f_d) = w1 - expit(z).
    const double dz = w1 - expit(z);
    grad[layout->beta_D()] += dz;
    for (std::size_t c = 0; c < m; ++c) grad[layout->beta_D() + 1 + c] += dz * x[c];
    if (eta_grad) *eta_grad += dz;

    for (std::size_t j = 0; j < nj; ++j) {
        const double a0 = w0 * scratch->r0[j], a1 = w1 * scratch->r1[j];
        add_design(grad + layout->beta_R(j), a0 + a1, a1);
        if (data.R(row, static_cast<Eigen::Index>(j))) {
            const double var = p.tau2[static_cast<Eigen::Index>(j)];
            const double e0 = scratch->e0[j], e1 = scratch->e1[j];
            const double b0 = w0 * e0 / var, b1 = w1 * e1 / var;
            add_design(grad + layout->beta_Y(j), b0 + b1, b1);
            grad[layout->tau2(j)] +=
                -0.5 / var + 0.5 * (w0 * e0 * e0 + w1 * e1 * e1) / (var * var);
        }
    }
    for (std::size_t k = 0; k < nk; ++k) {
        const double a0 = w0 * scratch->r0[nj + k], a1 = w1 * scratch->r1[nj + k];
        add_design(grad + layout->beta_W(k), a0 + a1, a1);
    }
    for (std::size_t l = 0; l < nl; ++l) {
        const double a0 = w0 * scratch->r0[nj + nk + l], a1 = w1 * scratch->r1[nj + nk + l];
        add_design(grad + layout->beta_P(l), a0 + a1, a1);
    }
    return lse;
}

double gaussian_log_density_grad(const DiagonalGaussian& prior, const Vector& x, double* grad)
{
    double lp = 0.0;
    for (Eigen::Index c = 0; c < x.size(); ++c) {
        const double e = x[c] - prior.mean[c];
        const double v = prior.variance[c];
        lp += -0.5 * (kLog2Pi + std::log(v)) - 0.5 * e * e / v;
        if (grad) grad[c] -= e / v;
    }
    return lp;
}

double inv_gamma_log_density(double x, double shape, double scale)
{
    return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
}

void check_interior(const ParameterState& params, const PriorSpec& priors)
{
    for (Eigen::Index j = 0; j < params.tau2.size(); ++j)
        if (!(params.tau2[j] > 0.0) || !std::isfinite(params.tau2[j]))
            throw DomainError("tau2[" + std::to_string(j) + "] is not strictly positive");
    if (priors.eta_enabled()) {
        for (Eigen::Index i = 0; i < params.eta.size(); ++i)
            if (!(params.eta[i] > priors.eta_lower && params.eta[i] < priors.eta_upper))
                throw DomainError("eta[" + std::to_string(i) + "] is not strictly inside (a, b)");
    }
}

} // namespace

// ---------------------------------------------------------------------------
// CohortData

CohortData CohortData::zeros(std::size_t n, std::size_t m, std::size_t j, std::size_t k, std::size_t l)
{
    const auto N = static_cast<Eigen::Index>(n);
    CohortData d;
    d.X = RowMatrix::Zero(N, static_cast<Eigen::Index>(m));
    d.R = BinaryMatrix::Zero(N, static_cast<Eigen::Index>(j));
    d.Y = RowMatrix::Zero(N, static_cast<Eigen::Index>(j));
    d.W = BinaryMatrix::Zero(N, static_cast<Eigen::Index>(k));
    d.P = BinaryMatrix::Zero(N, static_cast<Eigen::Index>(l));
    return d;
}

void CohortData::validate(bool allow_empty) const
{
    const Eigen::Index n = R.rows();
    if (n == 0 && !allow_empty) throw std::invalid_argument("cohort has no patients");
    if (R.cols() < 1) throw std::invalid_argument("cohort needs at least one biomarker");
    if (X.rows() != n || Y.rows() != n || W.rows() != n || P.rows() != n)
        throw ShapeError("cohort matrices disagree on the number of patients");
    if (Y.cols() != R.cols()) throw ShapeError("Y and R disagree on the number of biomarkers");
    if (!is_binary(R)) throw std::invalid_argument("R contains a value other than 0 or 1");
    if (!is_binary(W)) throw std::invalid_argument("W contains a value other than 0 or 1");
    if (!is_binary(P)) throw std::invalid_argument("P contains a value other than 0 or 1");
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index c = 0; c < X.cols(); ++c)
            if (!std::isfinite(X(i, c)))
                throw std::invalid_argument("X[" + std::to_string(i) + "] is not finite");
        for (Eigen::Index j = 0; j < R.cols(); ++j)
            if (R(i, j) && !std::isfinite(Y(i, j)))
                throw std::invalid_argument("Y[" + std::to_string(i) + "][" + std::to_string(j) +
                                            "] is missing but marked available");
    }
}

// ---------------------------------------------------------------------------
// Priors

double DiagonalGaussian::log_density(const Vector& x) const
{
    if (x.size() != mean.size()) throw ShapeError("prior dimension mismatch");
    return gaussian_log_density_grad(*this, x, nullptr);
}

DiagonalGaussian DiagonalGaussian::isotropic(std::size_t dim, double mean, double variance)
{
    const auto d = static_cast<Eigen::Index>(dim);
    return {Vector::Constant(d, mean), Vector::Constant(d, variance)};
}

const DiagonalGaussian& PriorSpec::biomarker(std::size_t j) const
{
    if (beta_Y_by_biomarker.empty()) return beta_Y;
    return beta_Y_by_biomarker.at(j);
}

void PriorSpec::validate(std::size_t n_covariates, std::size_t n_biomarkers) const
{
    auto check = [](const DiagonalGaussian& g, std::size_t dim, const std::string& name) {
        if (g.dimension() != dim || static_cast<std::size_t>(g.variance.size()) != dim)
            throw ShapeError("prior " + name + " has dimension " + std::to_string(g.dimension()) +
                             ", expected " + std::to_string(dim));
        for (Eigen::Index c = 0; c < g.variance.size(); ++c)
            if (!(g.variance[c] > 0.0) || !std::isfinite(g.variance[c]) || !std::isfinite(g.mean[c]))
                throw std::invalid_argument("prior " + name + " needs finite means and positive variances");
    };
    check(beta_D, n_covariates + 1, "beta_D");
    check(beta_R, n_covariates + 2, "beta_R");
    check(beta_Y, n_covariates + 2, "beta_Y");
    check(beta_W, n_covariates + 2, "beta_W");
    check(beta_P, n_covariates + 2, "beta_P");
    if (!beta_Y_by_biomarker.empty()) {
        if (beta_Y_by_biomarker.size() != n_biomarkers)
            throw ShapeError("per-biomarker priors given for " + std::to_string(beta_Y_by_biomarker.size()) +
                             " biomarkers, cohort has " + std::to_string(n_biomarkers));
        for (std::size_t j = 0; j < n_biomarkers; ++j)
            check(beta_Y_by_biomarker[j], n_covariates + 2, "beta_Y[" + std::to_string(j) + "]");
    }
    if (!(tau2_shape > 0.0) || !(tau2_scale > 0.0))
        throw std::invalid_argument("inverse-gamma shape and scale must be positive");
    if (!(eta_lower <= eta_upper) || !std::isfinite(eta_lower) || !std::isfinite(eta_upper))
        throw std::invalid_argument("eta bounds must satisfy a <= b");
}

PriorSpec default_priors(std::size_t m)
{
    PriorSpec p;
    p.beta_D = DiagonalGaussian::isotropic(m + 1, 0.0, 4.0);
    p.beta_R = DiagonalGaussian::isotropic(m + 2, 0.0, 4.0);
    p.beta_Y = DiagonalGaussian::isotropic(m + 2, 0.0, 4.0);
    p.beta_W = DiagonalGaussian::isotropic(m + 2, 0.0, 4.0);
    p.beta_P = DiagonalGaussian::isotropic(m + 2, 0.0, 4.0);
    return p;
}

double auc_shift(double tau, double auc)
{
    if (!(auc > 0.0 && auc < 1.0)) throw std::invalid_argument("AUC must lie in (0, 1)");
    if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
    return std::numbers::sqrt2 * tau * boost::math::quantile(boost::math::normal(), auc);
}

// ---------------------------------------------------------------------------
// ParameterState

ParameterState ParameterState::zeros(const CohortData& data, const PriorSpec& priors)
{
    const auto m = static_cast<Eigen::Index>(data.n_covariates());
    ParameterState s;
    s.beta_D = Vector::Zero(m + 1);
    s.beta_R.assign(data.n_biomarkers(), Vector::Zero(m + 2));
    s.beta_Y.assign(data.n_biomarkers(), Vector::Zero(m + 2));
    s.tau2 = Vector::Ones(static_cast<Eigen::Index>(data.n_biomarkers()));
    s.beta_W.assign(data.n_codes(), Vector::Zero(m + 2));
    s.beta_P.assign(data.n_medications(), Vector::Zero(m + 2));
    s.eta = Vector::Constant(static_cast<Eigen::Index>(data.n_patients()),
                             priors.eta_enabled() ? 0.5 * (priors.eta_lower + priors.eta_upper)
                                                  : priors.eta_lower);
    return s;
}

void ParameterState::check_shape(const CohortData& data) const
{
    const std::size_t m = data.n_covariates();
    if (static_cast<std::size_t>(beta_D.size()) != m + 1)
        throw ShapeError("beta_D has length " + std::to_string(beta_D.size()) + ", expected " +
                         std::to_string(m + 1));
    check_family(beta_R, data.n_biomarkers(), m + 2, "beta_R");
    check_family(beta_Y, data.n_biomarkers(), m + 2, "beta_Y");
    check_family(beta_W, data.n_codes(), m + 2, "beta_W");
    check_family(beta_P, data.n_medications(), m + 2, "beta_P");
    if (static_cast<std::size_t>(tau2.size()) != data.n_biomarkers())
        throw ShapeError("tau2 length does not match the number of biomarkers");
    if (static_cast<std::size_t>(eta.size()) != data.n_patients())
        throw ShapeError("eta has length " + std::to_string(eta.size()) + ", cohort has " +
                         std::to_string(data.n_patients()) + " patients");
}

// ---------------------------------------------------------------------------
// ParameterLayout

ParameterLayout::ParameterLayout(std::size_t m, std::size_t j, std::size_t k, std::size_t l, std::size_t n,
                                 bool eta_enabled)
    : m_(m), j_(j), k_(k), l_(l), n_(n), eta_enabled_(eta_enabled)
{
    eta_offset_ = (m + 1) + (2 * j + k + l) * (m + 2) + j;
}

ParameterLayout ParameterLayout::of(const CohortData& data, const PriorSpec& priors)
{
    return ParameterLayout(data.n_covariates(), data.n_biomarkers(), data.n_codes(), data.n_medications(),
                           data.n_patients(), priors.eta_enabled());
}

Vector ParameterLayout::flatten(const ParameterState& s) const
{
    Vector out(static_cast<Eigen::Index>(size()));
    const auto w = static_cast<Eigen::Index>(family_width());
    out.segment(0, static_cast<Eigen::Index>(m_ + 1)) = s.beta_D;
    for (std::size_t j = 0; j < j_; ++j) {
        out.segment(static_cast<Eigen::Index>(beta_R(j)), w) = s.beta_R[j];
        out.segment(static_cast<Eigen::Index>(beta_Y(j)), w) = s.beta_Y[j];
        out[static_cast<Eigen::Index>(tau2(j))] = s.tau2[static_cast<Eigen::Index>(j)];
    }
    for (std::size_t k = 0; k < k_; ++k) out.segment(static_cast<Eigen::Index>(beta_W(k)), w) = s.beta_W[k];
    for (std::size_t l = 0; l < l_; ++l) out.segment(static_cast<Eigen::Index>(beta_P(l)), w) = s.beta_P[l];
    if (eta_enabled_) {
        if (static_cast<std::size_t>(s.eta.size()) != n_) throw ShapeError("eta length mismatch in flatten");
        out.segment(static_cast<Eigen::Index>(eta_offset_), static_cast<Eigen::Index>(n_)) = s.eta;
    }
    return out;
}

ParameterState ParameterLayout::unflatten(const Vector& flat, double eta_pinned) const
{
    if (static_cast<std::size_t>(flat.size()) != size()) throw ShapeError("flat vector has the wrong length");
    const auto w = static_cast<Eigen::Index>(family_width());
    ParameterState s;
    s.beta_D = flat.segment(0, static_cast<Eigen::Index>(m_ + 1));
    s.tau2.resize(static_cast<Eigen::Index>(j_));
    for (std::size_t j = 0; j < j_; ++j) {
        s.beta_R.push_back(flat.segment(static_cast<Eigen::Index>(beta_R(j)), w));
        s.beta_Y.push_back(flat.segment(static_cast<Eigen::Index>(beta_Y(j)), w));
        s.tau2[static_cast<Eigen::Index>(j)] = flat[static_cast<Eigen::Index>(tau2(j))];
    }
    for (std::size_t k = 0; k < k_; ++k) s.beta_W.push_back(flat.segment(static_cast<Eigen::Index>(beta_W(k)), w));
    for (std::size_t l = 0; l < l_; ++l) s.beta_P.push_back(flat.segment(static_cast<Eigen::Index>(beta_P(l)), w));
    if (eta_enabled_)
        s.eta = flat.segment(static_cast<Eigen::Index>(eta_offset_), static_cast<Eigen::Index>(n_));
    else
        s.eta = Vector::Constant(static_cast<Eigen::Index>(n_), eta_pinned);
    return s;
}

std::string ParameterLayout::name(std::size_t index) const
{
    const std::size_t w = family_width();
    auto fam = [&](const char* f, std::size_t start, std::size_t count) -> std::string {
        const std::size_t rel = index - start;
        if (rel < count * w)
            return std::string(f) + "[" + std::to_string(rel / w) + "][" + std::to_string(rel % w) + "]";
        return {};
    };
    if (index < m_ + 1) return "beta_D[" + std::to_string(index) + "]";
    if (index < beta_Y(0)) return fam("beta_R", beta_R(0), j_);
    if (index < tau2(0)) return fam("beta_Y", beta_Y(0), j_);
    if (index < tau2(0) + j_) return "tau2[" + std::to_string(index - tau2(0)) + "]";
    if (index < tau2(0) + j_ + k_ * w) return fam("beta_W", tau2(0) + j_, k_);
    if (index < eta_offset_) return fam("beta_P", tau2(0) + j_ + k_ * w, l_);
    if (index < size()) return "eta[" + std::to_string(index - eta_offset_) + "]";
    throw std::out_of_range("coordinate index out of range");
}

// ---------------------------------------------------------------------------
// Likelihood

std::array<double, 2> class_log_terms(const ParameterState& params, const CohortData& data, std::size_t i)
{
    check_index(data, i);
    params.check_shape(data);
    std::array<double, 2> terms{};
    patient_terms(params, data, nullptr, i, nullptr, nullptr, nullptr, &terms);
    return terms;
}

double log_lik_patient(const ParameterState& params, const CohortData& data, std::size_t i)
{
    check_index(data, i);
    params.check_shape(data);
    return patient_terms(params, data, nullptr, i, nullptr, nullptr, nullptr);
}

double class_posterior(const ParameterState& params, const CohortData& data, std::size_t i)
{
    const auto t = class_log_terms(params, data, i);
    return std::exp(t[1] - log_sum_exp(t[0], t[1]));
}

Vector pointwise_log_lik(const ParameterState& params, const CohortData& data)
{
    params.check_shape(data);
    Vector out(static_cast<Eigen::Index>(data.n_patients()));
    parallel::for_each_chunk(data.n_patients(), [&](std::size_t begin, std::size_t end, std::size_t) {
        for (std::size_t i = begin; i < end; ++i)
            out[static_cast<Eigen::Index>(i)] = patient_terms(params, data, nullptr, i, nullptr, nullptr, nullptr);
    });
    return out;
}

double log_prior(const ParameterState& params, const PriorSpec& priors)
{
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < params.tau2.size(); ++j)
        if (!(params.tau2[j] > 0.0)) return neg_inf;
    for (Eigen::Index i = 0; i < params.eta.size(); ++i) {
        const double e = params.eta[i];
        if (priors.eta_enabled() ? !(e >= priors.eta_lower && e <= priors.eta_upper) : e != priors.eta_lower)
            return neg_inf;
    }

    double lp = priors.beta_D.log_density(params.beta_D);
    for (std::size_t j = 0; j < params.beta_R.size(); ++j) {
        lp += priors.beta_R.log_density(params.beta_R[j]);
        lp += priors.biomarker(j).log_density(params.beta_Y[j]);
        lp += inv_gamma_log_density(params.tau2[static_cast<Eigen::Index>(j)], priors.tau2_shape, priors.tau2_scale);
    }
    for (const auto& b : params.beta_W) lp += priors.beta_W.log_density(b);
    for (const auto& b : params.beta_P) lp += priors.beta_P.log_density(b);
    if (priors.eta_enabled())
        lp -= static_cast<double>(params.eta.size()) * std::log(priors.eta_upper - priors.eta_lower);
    return lp;
}

double log_joint(const ParameterState& params, const PriorSpec& priors, const CohortData& data)
{
    params.check_shape(data);
    const double lp = log_prior(params, priors);
    if (lp == -std::numeric_limits<double>::infinity()) return lp;
    const double ll = parallel::ordered_sum(data.n_patients(), [&](std::size_t begin, std::size_t end) {
        double s = 0.0;
        for (std::size_t i = begin; i < end; ++i) s += patient_terms(params, data, nullptr, i, nullptr, nullptr, nullptr);
        return s;
    });
    return ll + lp;
}

double log_joint_with_gradient(const ParameterState& params, const PriorSpec& priors, const CohortData& data,
                               Vector& gradient, const GradientOptions& options)
{
    params.check_shape(data);
    if (options.require_interior) check_interior(params, priors);
    const ParameterLayout layout = ParameterLayout::of(data, priors);
    gradient = Vector::Zero(static_cast<Eigen::Index>(layout.size()));
    const std::size_t global = layout.global_size();

    const std::size_t count = options.patients ? options.patients->size() : data.n_patients();
    auto patient_at = [&](std::size_t q) { return options.patients ? (*options.patients)[q] : q; };
    const double scale = options.likelihood_scale;

    const std::size_t chunks = parallel::chunk_count(count);
    std::vector<double> partial_value(chunks, 0.0);
    std::vector<std::vector<double>> partial_grad(chunks);
    parallel::for_each_chunk(count, [&](std::size_t begin, std::size_t end, std::size_t c) {
        PatientScratch scratch(data);
        std::vector<double> g(global, 0.0);
        double s = 0.0;
        for (std::size_t q = begin; q < end; ++q) {
            const std::size_t i = patient_at(q);
            check_index(data, i);
            double eta_g = 0.0;
            s += patient_terms(params, data, &layout, i, &scratch, g.data(), &eta_g);
            if (layout.eta_enabled()) gradient[static_cast<Eigen::Index>(layout.eta(i))] += scale * eta_g;
        }
        partial_value[c] = s;
        partial_grad[c] = std::move(g);
    });

    double value = 0.0;
    for (std::size_t c = 0; c < chunks; ++c) {
        value += partial_value[c];
        for (std::size_t q = 0; q < global; ++q) gradient[static_cast<Eigen::Index>(q)] += partial_grad[c][q];
    }
    if (scale != 1.0) {
        value *= scale;
        gradient.head(static_cast<Eigen::Index>(global)) *= scale;
    }

    // Prior terms.
    double* g = gradient.data();
    value += gaussian_log_density_grad(priors.beta_D, params.beta_D, g + layout.beta_D());
    const double c = priors.tau2_shape, d = priors.tau2_scale;
    for (std::size_t j = 0; j < params.beta_R.size(); ++j) {
        value += gaussian_log_density_grad(priors.beta_R, params.beta_R[j], g + layout.beta_R(j));
        value += gaussian_log_density_grad(priors.biomarker(j), params.beta_Y[j], g + layout.beta_Y(j));
        const double t = params.tau2[static_cast<Eigen::Index>(j)];
        value += inv_gamma_log_density(t, c, d);
        g[layout.tau2(j)] += -(c + 1.0) / t + d / (t * t);
    }
    for (std::size_t k = 0; k < params.beta_W.size(); ++k)
        value += gaussian_log_density_grad(priors.beta_W, params.beta_W[k], g + layout.beta_W(k));
    for (std::size_t l = 0; l < params.beta_P.size(); ++l)
        value += gaussian_log_density_grad(priors.beta_P, params.beta_P[l], g + layout.beta_P(l));
    if (priors.eta_enabled())
        value -= static_cast<double>(params.eta.size()) * std::log(priors.eta_upper - priors.eta_lower);
    return value;
}

Vector grad_log_joint(const ParameterState& params, const PriorSpec& priors, const CohortData& data)
{
    Vector g;
    log_joint_with_gradient(params, priors, data, g);
    return g;
}

ParameterState relabel_classes(const ParameterState& params, const PriorSpec& priors)
{
    ParameterState out = params;
    auto flip = [](Vector& b) {
        const Eigen::Index last = b.size() - 1;
        b[0] += b[last];
        b[last] = -b[last];
    };
    for (auto& b : out.beta_R) flip(b);
    for (auto& b : out.beta_Y) flip(b);
    for (auto& b : out.beta_W) flip(b);
    for (auto& b : out.beta_P) flip(b);
    out.beta_D = -params.beta_D;
    if (priors.eta_enabled() && out.eta.size() > 0)
        out.eta = Vector::Constant(out.eta.size(), priors.eta_lower + priors.eta_upper) - params.eta;
    return out;
}

} // namespace phenolca
