#include <doctest.h>

#include <cmath>
#include <limits>

#include "phenolca/model.hpp"
#include "support.hpp"

using namespace phenolca;
using phenolca::testing::class_terms_oracle;
using phenolca::testing::kLog2Pi;
using phenolca::testing::random_cohort;
using phenolca::testing::random_priors;
using phenolca::testing::random_state;

namespace {

double inv_gamma_log_density(double x, double c, double d)
{
    return c * std::log(d) - std::lgamma(c) - (c + 1.0) * std::log(x) - d / x;
}

double normal_log_density(double x, double mu, double var)
{
    return -0.5 * (kLog2Pi + std::log(var) + (x - mu) * (x - mu) / var);
}

} // namespace

TEST_CASE("expit at reference points")
{
    CHECK(expit(0.0) == 0.5);
    CHECK(std::abs(expit(40.0) - 1.0) < 1e-15);
    CHECK(expit(std::log(3.0)) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(std::isfinite(expit(-800.0)));
    CHECK(expit(-800.0) >= 0.0);
    CHECK(expit(800.0) == 1.0);
}

TEST_CASE("empty record has likelihood one")
{
    CohortData data = CohortData::zeros(1, 0, 0, 0, 0);
    PriorSpec priors = default_priors(0);
    priors.eta_lower = priors.eta_upper = 0.0;
    ParameterState s = ParameterState::zeros(data, priors);
    CHECK(s.beta_D.size() == 1);
    CHECK(std::abs(log_lik_patient(s, data, 0)) < 1e-15);
}

TEST_CASE("single patient likelihood matches a hand evaluated two-term sum")
{
    CohortData data = CohortData::zeros(1, 1, 1, 0, 0);
    data.X(0, 0) = 0.5;
    data.R(0, 0) = 1;
    data.Y(0, 0) = 2.0;
    PriorSpec priors = default_priors(1);
    priors.eta_lower = priors.eta_upper = 0.0;
    ParameterState s = ParameterState::zeros(data, priors);
    s.beta_D << -1.0, 0.4;
    s.beta_R[0] << 0.2, -0.3, 1.0;
    s.beta_Y[0] << 1.0, 0.5, 1.5;
    s.tau2[0] = 0.8;

    // Class 0: P(D=0) = 1 - expit(-0.8), P(R=1) = expit(0.05), Y ~ N(1.25, 0.8).
    // Class 1: P(D=1) = expit(-0.8),     P(R=1) = expit(1.05), Y ~ N(2.75, 0.8).
    const double pd = 1.0 / (1.0 + std::exp(0.8));
    const double dens0 = std::exp(-0.5 * 0.75 * 0.75 / 0.8) / std::sqrt(2.0 * M_PI * 0.8);
    const double dens1 = std::exp(-0.5 * 0.75 * 0.75 / 0.8) / std::sqrt(2.0 * M_PI * 0.8);
    const double lik = (1.0 - pd) * (1.0 / (1.0 + std::exp(-0.05))) * dens0 +
                       pd * (1.0 / (1.0 + std::exp(-1.05))) * dens1;
    CHECK(log_lik_patient(s, data, 0) == doctest::Approx(std::log(lik)).epsilon(1e-13));
}

TEST_CASE("per-class terms match the factorwise oracle and sum to the likelihood")
{
    Rng rng = make_stream(11, 0);
    for (int rep = 0; rep < 50; ++rep) {
        CohortData data = random_cohort(6, 2, 2, 2, 1, rng);
        PriorSpec priors = random_priors(2, 2, rng);
        ParameterState s = random_state(data, priors, rng);
        for (std::size_t i = 0; i < data.n_patients(); ++i) {
            const auto lib = class_log_terms(s, data, i);
            const auto ref = class_terms_oracle(s, data, i);
            CHECK(lib[0] == doctest::Approx(ref[0]).epsilon(1e-12));
            CHECK(lib[1] == doctest::Approx(ref[1]).epsilon(1e-12));
            CHECK(std::abs(log_sum_exp(lib[0], lib[1]) - log_lik_patient(s, data, i)) < 1e-12);
            const double p1 = class_posterior(s, data, i);
            CHECK(p1 >= 0.0);
            CHECK(p1 <= 1.0);
            const double p0 = std::exp(lib[0] - log_sum_exp(lib[0], lib[1]));
            CHECK(std::abs(p0 + p1 - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("masked biomarker values are never read")
{
    Rng rng = make_stream(12, 0);
    CohortData data = random_cohort(30, 3, 2, 2, 2, rng);
    PriorSpec priors = random_priors(3, 2, rng);
    ParameterState s = random_state(data, priors, rng);
    CohortData poked = data;
    for (Eigen::Index i = 0; i < data.Y.rows(); ++i)
        for (Eigen::Index j = 0; j < data.Y.cols(); ++j)
            if (!data.R(i, j)) poked.Y(i, j) = (i % 2) ? 1e300 : std::numeric_limits<double>::quiet_NaN();
    for (std::size_t i = 0; i < data.n_patients(); ++i)
        CHECK(log_lik_patient(s, data, i) == log_lik_patient(s, poked, i));
    CHECK(log_joint(s, priors, data) == log_joint(s, priors, poked));
    Vector g0, g1;
    CHECK(log_joint_with_gradient(s, priors, data, g0) == log_joint_with_gradient(s, priors, poked, g1));
    CHECK(g0 == g1);
}

TEST_CASE("out of range patient index")
{
    CohortData data = CohortData::zeros(2, 0, 1, 0, 0);
    PriorSpec priors = default_priors(0);
    ParameterState s = ParameterState::zeros(data, priors);
    CHECK_THROWS_AS(log_lik_patient(s, data, 2), std::out_of_range);
    CHECK_THROWS_AS(class_posterior(s, data, 5), std::out_of_range);
}

TEST_CASE("log prior")
{
    SUBCASE("inverse-gamma term peaks at its mode")
    {
        CohortData data = CohortData::zeros(1, 0, 1, 0, 0);
        PriorSpec priors = default_priors(0);
        priors.tau2_shape = 3.0;
        priors.tau2_scale = 2.0;
        ParameterState s = ParameterState::zeros(data, priors);
        s.eta.setZero();
        const double mode = 2.0 / 4.0;
        s.tau2[0] = mode;
        const double at_mode = log_prior(s, priors);
        for (double f : {0.9, 0.99, 1.01, 1.1}) {
            s.tau2[0] = mode * f;
            CHECK(log_prior(s, priors) < at_mode);
        }
    }
    SUBCASE("standardised Gaussian terms at the mean")
    {
        CohortData data = CohortData::zeros(1, 2, 1, 1, 1);
        PriorSpec priors = default_priors(2);
        for (auto* g : {&priors.beta_D, &priors.beta_R, &priors.beta_Y, &priors.beta_W, &priors.beta_P})
            g->variance.setOnes();
        priors.eta_lower = priors.eta_upper = 0.0;
        ParameterState s = ParameterState::zeros(data, priors);
        s.tau2[0] = 1.0;
        const double ig = inv_gamma_log_density(1.0, priors.tau2_shape, priors.tau2_scale);
        const double dim = 3 + 4 * 4;
        CHECK(log_prior(s, priors) == doctest::Approx(-0.5 * dim * kLog2Pi + ig).epsilon(1e-14));
    }
    SUBCASE("sum of scalar densities")
    {
        Rng rng = make_stream(13, 0);
        CohortData data = random_cohort(3, 1, 2, 1, 1, rng);
        PriorSpec priors = random_priors(1, 2, rng);
        ParameterState s = random_state(data, priors, rng);
        double ref = 0.0;
        auto add = [&](const Vector& x, const DiagonalGaussian& g) {
            for (Eigen::Index c = 0; c < x.size(); ++c) ref += normal_log_density(x[c], g.mean[c], g.variance[c]);
        };
        add(s.beta_D, priors.beta_D);
        for (std::size_t j = 0; j < 2; ++j) {
            add(s.beta_R[j], priors.beta_R);
            add(s.beta_Y[j], priors.biomarker(j));
            ref += inv_gamma_log_density(s.tau2[static_cast<Eigen::Index>(j)], priors.tau2_shape, priors.tau2_scale);
        }
        add(s.beta_W[0], priors.beta_W);
        add(s.beta_P[0], priors.beta_P);
        ref -= 3.0 * std::log(priors.eta_upper - priors.eta_lower);
        CHECK(log_prior(s, priors) == doctest::Approx(ref).epsilon(1e-13));
    }
    SUBCASE("outside the support")
    {
        Rng rng = make_stream(14, 0);
        CohortData data = random_cohort(3, 1, 1, 0, 0, rng);
        PriorSpec priors = random_priors(1, 1, rng);
        ParameterState s = random_state(data, priors, rng);
        ParameterState bad = s;
        bad.tau2[0] = 0.0;
        CHECK(log_prior(bad, priors) == -std::numeric_limits<double>::infinity());
        bad = s;
        bad.eta[1] = priors.eta_upper + 0.1;
        CHECK(log_prior(bad, priors) == -std::numeric_limits<double>::infinity());
        CHECK(log_joint(bad, priors, data) == -std::numeric_limits<double>::infinity());
    }
}

TEST_CASE("log joint composition")
{
    Rng rng = make_stream(15, 0);
    PriorSpec priors = random_priors(2, 1, rng);

    CohortData empty = CohortData::zeros(0, 2, 1, 1, 1);
    ParameterState s0 = random_state(empty, priors, rng);
    CHECK(log_joint(s0, priors, empty) == log_prior(s0, priors));

    CohortData two = random_cohort(2, 2, 1, 1, 1, rng);
    ParameterState s = random_state(two, priors, rng);
    const double expected = log_prior(s, priors) + log_lik_patient(s, two, 0) + log_lik_patient(s, two, 1);
    CHECK(log_joint(s, priors, two) == doctest::Approx(expected).epsilon(1e-14));

    // Appending a copy of patient 1 adds its likelihood (and one eta prior term).
    CohortData three = CohortData::zeros(3, 2, 1, 1, 1);
    for (Eigen::Index r = 0; r < 3; ++r) {
        const Eigen::Index src = r < 2 ? r : 1;
        three.X.row(r) = two.X.row(src);
        three.R.row(r) = two.R.row(src);
        three.Y.row(r) = two.Y.row(src);
        three.W.row(r) = two.W.row(src);
        three.P.row(r) = two.P.row(src);
    }
    ParameterState s3 = s;
    s3.eta.conservativeResize(3);
    s3.eta[2] = s.eta[1];
    const double eta_term = -std::log(priors.eta_upper - priors.eta_lower);
    CHECK(log_joint(s3, priors, three) ==
          doctest::Approx(log_joint(s, priors, two) + log_lik_patient(s, two, 1) + eta_term).epsilon(1e-14));
}

TEST_CASE("gradient matches central differences")
{
    Rng rng = make_stream(16, 0);
    for (int rep = 0; rep < 20; ++rep) {
        CohortData data = random_cohort(8, 2, 2, 2, 1, rng);
        PriorSpec priors = random_priors(2, 2, rng);
        ParameterState s = random_state(data, priors, rng);
        const ParameterLayout layout = ParameterLayout::of(data, priors);
        const Vector g = grad_log_joint(s, priors, data);
        REQUIRE(static_cast<std::size_t>(g.size()) == layout.size());
        const Vector x = layout.flatten(s);
        const double h = 1e-5;
        for (std::size_t c = 0; c < layout.size(); ++c) {
            Vector up = x, down = x;
            up[static_cast<Eigen::Index>(c)] += h;
            down[static_cast<Eigen::Index>(c)] -= h;
            const double fd = (log_joint(layout.unflatten(up), priors, data) -
                               log_joint(layout.unflatten(down), priors, data)) /
                              (2.0 * h);
            const double gc = g[static_cast<Eigen::Index>(c)];
            INFO(layout.name(c));
            CHECK(std::abs(gc - fd) / std::max(1.0, std::abs(fd)) <= 1e-6);
        }
    }
}

TEST_CASE("gradient vanishes at a symmetric stationary point")
{
    // Nothing observed and zero conditional coefficients: the two classes are
    // interchangeable, so beta_D and beta_Y only feel their zero-mean priors.
    CohortData data = CohortData::zeros(10, 2, 1, 2, 2);
    PriorSpec priors = default_priors(2);
    priors.eta_lower = priors.eta_upper = 0.0;
    ParameterState s = ParameterState::zeros(data, priors);
    const ParameterLayout layout = ParameterLayout::of(data, priors);
    const Vector g = grad_log_joint(s, priors, data);
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(g[static_cast<Eigen::Index>(layout.beta_D() + c)]) < 1e-12);
    for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(g[static_cast<Eigen::Index>(layout.beta_Y(0) + c)]) < 1e-12);
}

TEST_CASE("masked rows contribute only prior terms to the biomarker gradient")
{
    Rng rng = make_stream(17, 0);
    CohortData data = random_cohort(5, 1, 1, 0, 0, rng);
    data.R.setZero();
    PriorSpec priors = random_priors(1, 1, rng);
    ParameterState s = random_state(data, priors, rng);
    const ParameterLayout layout = ParameterLayout::of(data, priors);
    const Vector g = grad_log_joint(s, priors, data);
    const DiagonalGaussian& prior = priors.biomarker(0);
    for (Eigen::Index c = 0; c < 3; ++c) {
        const double expected = -(s.beta_Y[0][c] - prior.mean[c]) / prior.variance[c];
        CHECK(g[static_cast<Eigen::Index>(layout.beta_Y(0)) + c] == doctest::Approx(expected).epsilon(1e-14));
    }
}

TEST_CASE("gradient rejects boundary parameters")
{
    Rng rng = make_stream(18, 0);
    CohortData data = random_cohort(3, 1, 1, 0, 0, rng);
    PriorSpec priors = random_priors(1, 1, rng);
    ParameterState s = random_state(data, priors, rng);
    ParameterState bad = s;
    bad.tau2[0] = 0.0;
    CHECK_THROWS_AS(grad_log_joint(bad, priors, data), DomainError);
    bad = s;
    bad.eta[0] = priors.eta_lower;
    CHECK_THROWS_AS(grad_log_joint(bad, priors, data), DomainError);
}

TEST_CASE("class posterior special cases")
{
    SUBCASE("identical class conditionals and even prevalence")
    {
        Rng rng = make_stream(19, 0);
        CohortData data = random_cohort(4, 2, 2, 1, 1, rng);
        PriorSpec priors = default_priors(2);
        priors.eta_lower = priors.eta_upper = 0.0;
        ParameterState s = random_state(data, priors, rng);
        s.beta_D.setZero();
        for (auto* fam : {&s.beta_R, &s.beta_Y, &s.beta_W, &s.beta_P})
            for (auto& v : *fam) v[v.size() - 1] = 0.0;
        for (std::size_t i = 0; i < 4; ++i) CHECK(class_posterior(s, data, i) == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("no indicators reduces to prior prevalence")
    {
        Rng rng = make_stream(20, 0);
        CohortData data = random_cohort(4, 2, 1, 0, 0, rng);
        data.R.setZero();
        PriorSpec priors = random_priors(2, 1, rng);
        ParameterState s = random_state(data, priors, rng);
        for (auto& v : s.beta_R) v[v.size() - 1] = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            const double z = s.beta_D[0] + s.beta_D[1] * data.X(r, 0) + s.beta_D[2] * data.X(r, 1) + s.eta[r];
            CHECK(class_posterior(s, data, i) == doctest::Approx(expit(z)).epsilon(1e-13));
        }
    }
}

TEST_CASE("sensitivity and specificity")
{
    CHECK(sensitivity(0.0, 0.0) == 0.5);
    CHECK(specificity(0.0) == 0.5);
    CHECK(sensitivity(-40.0, 80.0) > 1.0 - 1e-15);
    CHECK(specificity(-40.0) > 1.0 - 1e-15);
    double prev_sens = 0.0, prev_spec = 1.0;
    for (double x = -10.0; x <= 10.0; x += 0.25) {
        const double se = sensitivity(-1.0, x), sp = specificity(x);
        CHECK(se > prev_sens);
        CHECK(sp < prev_spec);
        prev_sens = se;
        prev_spec = sp;
    }
}

TEST_CASE("layout flattens and restores every scalar once")
{
    Rng rng = make_stream(21, 0);
    CohortData data = random_cohort(4, 3, 2, 2, 2, rng);
    PriorSpec priors = random_priors(3, 2, rng);
    ParameterState s = random_state(data, priors, rng);
    const ParameterLayout layout = ParameterLayout::of(data, priors);
    CHECK(layout.size() == 4 + 2 * 5 * 2 + 2 + 4 * 5 + 4);
    CHECK(layout.global_size() == layout.size() - 4);
    const Vector x = layout.flatten(s);
    const ParameterState back = layout.unflatten(x);
    CHECK(layout.flatten(back) == x);
    CHECK(layout.name(layout.tau2(1)) == "tau2[1]");

    PriorSpec no_eta = priors;
    no_eta.eta_lower = no_eta.eta_upper = 0.0;
    const ParameterLayout fixed = ParameterLayout::of(data, no_eta);
    CHECK(fixed.size() == layout.global_size());
}

TEST_CASE("relabelling leaves every likelihood unchanged")
{
    Rng rng = make_stream(22, 0);
    CohortData data = random_cohort(10, 2, 2, 2, 2, rng);
    PriorSpec priors = random_priors(2, 2, rng);
    priors.eta_lower = -1.0;
    priors.eta_upper = 1.0;
    ParameterState s = random_state(data, priors, rng);
    const ParameterState r = relabel_classes(s, priors);
    for (std::size_t i = 0; i < data.n_patients(); ++i) {
        CHECK(log_lik_patient(r, data, i) == doctest::Approx(log_lik_patient(s, data, i)).epsilon(1e-12));
        CHECK(class_posterior(r, data, i) == doctest::Approx(1.0 - class_posterior(s, data, i)).epsilon(1e-12));
    }
    CHECK(r.beta_Y[1][3] == doctest::Approx(-s.beta_Y[1][3]));
}

TEST_CASE("auc shift recipe")
{
    CHECK(auc_shift(1.0, 0.5) == doctest::Approx(0.0));
    // AUC = Phi(shift / (sqrt(2) tau)).
    CHECK(auc_shift(2.0, 0.8413447460685429) == doctest::Approx(2.0 * std::sqrt(2.0)).epsilon(1e-9));
    CHECK_THROWS(auc_shift(1.0, 1.0));
}

TEST_CASE("cohort validation")
{
    CohortData d = CohortData::zeros(2, 1, 1, 0, 0);
    CHECK_NOTHROW(d.validate());
    d.R(0, 0) = 2;
    CHECK_THROWS(d.validate());
    d.R(0, 0) = 1;
    d.Y(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS(d.validate());
    d.R(0, 0) = 0;
    CHECK_NOTHROW(d.validate());
    CHECK_THROWS(CohortData::zeros(0, 1, 1, 0, 0).validate());
    CHECK_NOTHROW(CohortData::zeros(0, 1, 1, 0, 0).validate(true));
}
