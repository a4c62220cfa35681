#include "phenolca/synthgen.hpp"

#include <random>

namespace phenolca {

namespace {

Vector vec(std::initializer_list<double> values)
{
    Vector v(static_cast<Eigen::Index>(values.size()));
    Eigen::Index c = 0;
    for (double x : values) v[c++] = x;
    return v;
}

double linear(const Vector& beta, const double* x, std::size_t m, int d)
{
    double u = beta[0];
    for (std::size_t c = 0; c < m; ++c) u += beta[static_cast<Eigen::Index>(c + 1)] * x[c];
    if (d) u += beta[static_cast<Eigen::Index>(m + 1)];
    return u;
}

} // namespace

void SimulationConfig::validate() const
{
    if (n_patients < 1) throw ConfigError("n_patients must be at least 1");
    for (std::size_t c = 0; c < covariates.size(); ++c) {
        const auto& cov = covariates[c];
        if (cov.kind == CovariateSpec::Kind::bernoulli && !(cov.value >= 0.0 && cov.value <= 1.0))
            throw ConfigError("covariate " + std::to_string(c) + ": Bernoulli probability must lie in [0, 1]");
        if (cov.kind == CovariateSpec::Kind::constant && !std::isfinite(cov.value))
            throw ConfigError("covariate " + std::to_string(c) + ": constant must be finite");
    }
    if (!(eta_lower <= eta_upper)) throw ConfigError("eta bounds must satisfy a <= b");

    const std::size_t m = covariates.size();
    const auto& p = true_params;
    if (static_cast<std::size_t>(p.beta_D.size()) != m + 1)
        throw ConfigError("true beta_D must have length M + 1 = " + std::to_string(m + 1));
    if (p.beta_R.empty()) throw ConfigError("at least one biomarker is required");
    if (p.beta_Y.size() != p.beta_R.size() || static_cast<std::size_t>(p.tau2.size()) != p.beta_R.size())
        throw ConfigError("beta_R, beta_Y and tau2 must describe the same biomarkers");
    auto check = [&](const std::vector<Vector>& fam, const char* name) {
        for (const auto& b : fam)
            if (static_cast<std::size_t>(b.size()) != m + 2)
                throw ConfigError(std::string("true ") + name + " vectors must have length M + 2");
    };
    check(p.beta_R, "beta_R");
    check(p.beta_Y, "beta_Y");
    check(p.beta_W, "beta_W");
    check(p.beta_P, "beta_P");
    for (Eigen::Index j = 0; j < p.tau2.size(); ++j)
        if (!(p.tau2[j] > 0.0)) throw ConfigError("true tau2 must be positive");
    if (!regenerate_eta) {
        if (static_cast<std::size_t>(p.eta.size()) != n_patients)
            throw ConfigError("fixed eta must have one entry per patient");
        for (Eigen::Index i = 0; i < p.eta.size(); ++i)
            if (!(p.eta[i] >= eta_lower && p.eta[i] <= eta_upper))
                throw ConfigError("fixed eta lies outside [a, b]");
    }
}

SimulatedCohort simulate_cohort(const SimulationConfig& config)
{
    config.validate();
    const auto& truth = config.true_params;
    const std::size_t n = config.n_patients, m = config.covariates.size();
    const std::size_t nj = truth.beta_R.size(), nk = truth.beta_W.size(), nl = truth.beta_P.size();

    SimulatedCohort out;
    out.data = CohortData::zeros(n, m, nj, nk, nl);
    out.true_D.resize(n);
    out.true_eta.resize(static_cast<Eigen::Index>(n));

    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> std_normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto bernoulli = [&](double p) -> std::uint8_t { return unit(rng) < p ? 1 : 0; };

    for (std::size_t i = 0; i < n; ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        for (std::size_t c = 0; c < m; ++c) {
            const auto& cov = config.covariates[c];
            double v = cov.value;
            if (cov.kind == CovariateSpec::Kind::standard_normal) v = std_normal(rng);
            else if (cov.kind == CovariateSpec::Kind::bernoulli) v = bernoulli(cov.value);
            out.data.X(row, static_cast<Eigen::Index>(c)) = v;
        }
        const double* x = out.data.X.row(row).data();

        double eta = config.eta_lower;
        if (!config.regenerate_eta) eta = truth.eta[row];
        else if (config.eta_lower < config.eta_upper)
            eta = config.eta_lower + (config.eta_upper - config.eta_lower) * unit(rng);
        out.true_eta[row] = eta;

        double z = truth.beta_D[0] + eta;
        for (std::size_t c = 0; c < m; ++c) z += truth.beta_D[static_cast<Eigen::Index>(c + 1)] * x[c];
        const int d = bernoulli(expit(z));
        out.true_D[i] = static_cast<std::uint8_t>(d);

        for (std::size_t j = 0; j < nj; ++j) {
            const auto col = static_cast<Eigen::Index>(j);
            out.data.R(row, col) = bernoulli(expit(linear(truth.beta_R[j], x, m, d)));
            const double mean = linear(truth.beta_Y[j], x, m, d);
            out.data.Y(row, col) = mean + std::sqrt(truth.tau2[col]) * std_normal(rng);
        }
        for (std::size_t k = 0; k < nk; ++k)
            out.data.W(row, static_cast<Eigen::Index>(k)) = bernoulli(expit(linear(truth.beta_W[k], x, m, d)));
        for (std::size_t l = 0; l < nl; ++l)
            out.data.P(row, static_cast<Eigen::Index>(l)) = bernoulli(expit(linear(truth.beta_P[l], x, m, d)));
    }
    return out;
}

SimulationConfig default_scenario(std::size_t n_patients, std::uint64_t seed)
{
    SimulationConfig c;
    c.n_patients = n_patients;
    c.seed = seed;
    c.covariates = {
        {CovariateSpec::Kind::standard_normal, 0.0, "age"},
        {CovariateSpec::Kind::bernoulli, 0.2, "ethnicity"},
        {CovariateSpec::Kind::standard_normal, 0.0, "bmi_z"},
    };
    auto& t = c.true_params;
    t.beta_D = vec({-4.4, 0.3, 0.5, 0.6});
    // Biomarker 0 is glucose-like (mg/dL), biomarker 1 HbA1c-like (%).
    t.beta_R = {vec({0.2, 0.1, 0.2, 0.3, 2.5}), vec({-0.5, 0.1, 0.1, 0.4, 3.5})};
    t.beta_Y = {vec({90.0, 1.0, 2.0, 3.0, 89.3}), vec({5.3, 0.05, 0.1, 0.15, 4.8})};
    t.tau2 = vec({225.0, 0.16});
    // Codes: diabetes diagnosis, endocrinologist visit.
    t.beta_W = {vec({-4.5, 0.1, 0.3, 0.2, 3.5}), vec({-3.0, 0.1, 0.2, 0.3, 2.5})};
    // Medications: metformin, insulin.
    t.beta_P = {vec({-4.0, 0.1, 0.2, 0.3, 3.6}), vec({-5.0, 0.0, 0.1, 0.1, 5.0})};
    c.eta_lower = -1.0;
    c.eta_upper = 1.0;
    return c;
}

PriorSpec default_scenario_priors()
{
    PriorSpec p = default_priors(3);
    // Shift means encode AUC 0.95 at a guessed within-class spread; the wide
    // shift variances leave the data in charge of the magnitude.
    DiagonalGaussian glucose{vec({90.0, 0.0, 0.0, 0.0, auc_shift(15.0, 0.95)}),
                             vec({400.0, 100.0, 100.0, 100.0, 2500.0})};
    DiagonalGaussian hba1c{vec({5.5, 0.0, 0.0, 0.0, auc_shift(0.5, 0.95)}), vec({4.0, 1.0, 1.0, 1.0, 9.0})};
    p.beta_Y = hba1c;
    p.beta_Y_by_biomarker = {glucose, hba1c};
    p.tau2_shape = 1.0;
    p.tau2_scale = 1.0;
    p.eta_lower = -1.0;
    p.eta_upper = 1.0;
    return p;
}

} // namespace phenolca
