#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "phenolca/model.hpp"
#include "phenolca/random.hpp"

namespace phenolca::testing {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Cohort with random covariates, roughly half the biomarkers unavailable and
/// arbitrary values in the masked Y cells.
inline CohortData random_cohort(std::size_t n, std::size_t m, std::size_t j, std::size_t k, std::size_t l, Rng& rng)
{
    std::normal_distribution<double> z(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    CohortData d = CohortData::zeros(n, m, j, k, l);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        for (Eigen::Index c = 0; c < d.X.cols(); ++c) d.X(r, c) = z(rng);
        for (Eigen::Index c = 0; c < d.R.cols(); ++c) {
            d.R(r, c) = coin(rng) ? 1 : 0;
            d.Y(r, c) = 2.0 * z(rng) + 1.0;
        }
        for (Eigen::Index c = 0; c < d.W.cols(); ++c) d.W(r, c) = coin(rng) ? 1 : 0;
        for (Eigen::Index c = 0; c < d.P.cols(); ++c) d.P(r, c) = coin(rng) ? 1 : 0;
    }
    return d;
}

/// Priors with distinct random means and variances in every family.
inline PriorSpec random_priors(std::size_t m, std::size_t j, Rng& rng)
{
    std::uniform_real_distribution<double> mean(-1.0, 1.0), var(0.5, 3.0);
    auto gauss = [&](std::size_t dim) {
        DiagonalGaussian g{Vector(static_cast<Eigen::Index>(dim)), Vector(static_cast<Eigen::Index>(dim))};
        for (Eigen::Index c = 0; c < g.mean.size(); ++c) {
            g.mean[c] = mean(rng);
            g.variance[c] = var(rng);
        }
        return g;
    };
    PriorSpec p;
    p.beta_D = gauss(m + 1);
    p.beta_R = gauss(m + 2);
    p.beta_Y = gauss(m + 2);
    p.beta_W = gauss(m + 2);
    p.beta_P = gauss(m + 2);
    for (std::size_t b = 0; b < j; ++b) p.beta_Y_by_biomarker.push_back(gauss(m + 2));
    p.eta_lower = -0.7;
    p.eta_upper = 1.1;
    p.tau2_shape = 2.5;
    p.tau2_scale = 1.5;
    return p;
}

/// State strictly inside the support.
inline ParameterState random_state(const CohortData& data, const PriorSpec& priors, Rng& rng)
{
    std::normal_distribution<double> z(0.0, 0.7);
    std::uniform_real_distribution<double> u(0.05, 0.95), t(0.5, 2.0);
    ParameterState s = ParameterState::zeros(data, priors);
    auto fill = [&](Vector& v) {
        for (Eigen::Index c = 0; c < v.size(); ++c) v[c] = z(rng);
    };
    fill(s.beta_D);
    for (auto& v : s.beta_R) fill(v);
    for (auto& v : s.beta_Y) fill(v);
    for (auto& v : s.beta_W) fill(v);
    for (auto& v : s.beta_P) fill(v);
    for (Eigen::Index c = 0; c < s.tau2.size(); ++c) s.tau2[c] = t(rng);
    for (Eigen::Index i = 0; i < s.eta.size(); ++i)
        s.eta[i] = priors.eta_enabled() ? priors.eta_lower + (priors.eta_upper - priors.eta_lower) * u(rng)
                                        : priors.eta_lower;
    return s;
}

/// Per-class log terms of one patient evaluated factor by factor with plain
/// probabilities, independent of the library's log-space code.
inline std::array<double, 2> class_terms_oracle(const ParameterState& p, const CohortData& data, std::size_t i)
{
    const auto r = static_cast<Eigen::Index>(i);
    const std::size_t m = data.n_covariates();
    auto lin = [&](const Vector& b, int d) {
        double s = b[0];
        for (std::size_t c = 0; c < m; ++c) s += b[static_cast<Eigen::Index>(c + 1)] * data.X(r, static_cast<Eigen::Index>(c));
        return s + (b.size() > static_cast<Eigen::Index>(m + 1) ? b[static_cast<Eigen::Index>(m + 1)] * d : 0.0);
    };
    auto logistic = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    std::array<double, 2> out{};
    for (int d = 0; d <= 1; ++d) {
        const double pd = logistic(lin(p.beta_D, 0) + p.eta[r]);
        double lik = d ? pd : 1.0 - pd;
        for (std::size_t j = 0; j < data.n_biomarkers(); ++j) {
            const auto c = static_cast<Eigen::Index>(j);
            const double pr = logistic(lin(p.beta_R[j], d));
            if (data.R(r, c)) {
                const double e = data.Y(r, c) - lin(p.beta_Y[j], d);
                lik *= pr * std::exp(-0.5 * e * e / p.tau2[c]) / std::sqrt(2.0 * std::numbers::pi * p.tau2[c]);
            } else {
                lik *= 1.0 - pr;
            }
        }
        for (std::size_t k = 0; k < data.n_codes(); ++k) {
            const double pw = logistic(lin(p.beta_W[k], d));
            lik *= data.W(r, static_cast<Eigen::Index>(k)) ? pw : 1.0 - pw;
        }
        for (std::size_t l = 0; l < data.n_medications(); ++l) {
            const double pp = logistic(lin(p.beta_P[l], d));
            lik *= data.P(r, static_cast<Eigen::Index>(l)) ? pp : 1.0 - pp;
        }
        out[static_cast<std::size_t>(d)] = std::log(lik);
    }
    return out;
}

inline double mean_of(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double variance_of(const std::vector<double>& v)
{
    const double mu = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - mu) * (x - mu);
    return s / static_cast<double>(v.size() - 1);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / ("phenolca_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace phenolca::testing
