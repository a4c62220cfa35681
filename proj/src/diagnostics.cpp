#include "phenolca/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <boost/math/distributions/normal.hpp>

#include "phenolca/parallel.hpp"

namespace phenolca::diagnostics {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(const std::vector<double>& v)
{
    const double m = *std::max_element(v.begin(), v.end());
    if (m == kNegInf) return kNegInf;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

double sample_variance(const std::vector<double>& v)
{
    const double n = static_cast<double>(v.size());
    if (v.size() < 2) return 0.0;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return ss / (n - 1.0);
}

/// Quantile of sorted values with linear interpolation between order statistics.
double quantile_sorted(const std::vector<double>& sorted, double p)
{
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::vector<double> column(const RowMatrix& m, Eigen::Index i)
{
    std::vector<double> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index s = 0; s < m.rows(); ++s) out[static_cast<std::size_t>(s)] = m(s, i);
    return out;
}

void check_loglik(const RowMatrix& loglik)
{
    if (loglik.rows() < 2) throw std::invalid_argument("at least two draws are needed");
    if (loglik.cols() < 1) throw std::invalid_argument("the log-likelihood matrix has no observations");
    if (!loglik.allFinite()) throw std::invalid_argument("the log-likelihood matrix has non-finite entries");
}

// Chains split in half, each of equal length.
std::vector<std::vector<double>> split_chains(const std::vector<std::vector<double>>& chains)
{
    std::vector<std::vector<double>> out;
    for (const auto& c : chains) {
        const std::size_t half = c.size() / 2;
        out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
        out.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
    }
    return out;
}

// Normal scores of pooled ranks, ties sharing their average rank.
std::vector<std::vector<double>> rank_normalize(const std::vector<std::vector<double>>& chains)
{
    std::vector<std::pair<double, std::size_t>> pooled;
    for (const auto& c : chains)
        for (double x : c) pooled.emplace_back(x, pooled.size());
    const std::size_t total = pooled.size();
    std::sort(pooled.begin(), pooled.end());
    std::vector<double> rank(total);
    for (std::size_t a = 0; a < total;) {
        std::size_t b = a;
        while (b + 1 < total && pooled[b + 1].first == pooled[a].first) ++b;
        const double r = 0.5 * static_cast<double>(a + b) + 1.0;
        for (std::size_t c = a; c <= b; ++c) rank[pooled[c].second] = r;
        a = b + 1;
    }
    const boost::math::normal_distribution<double> normal;
    std::vector<std::vector<double>> out;
    std::size_t pos = 0;
    for (const auto& c : chains) {
        std::vector<double> z(c.size());
        for (auto& v : z)
            v = boost::math::quantile(normal, (rank[pos++] - 0.375) / (static_cast<double>(total) + 0.25));
        out.push_back(std::move(z));
    }
    return out;
}

double rhat_basic(const std::vector<std::vector<double>>& chains)
{
    const double m = static_cast<double>(chains.size());
    const double n = static_cast<double>(chains[0].size());
    std::vector<double> means, vars;
    for (const auto& c : chains) {
        means.push_back(std::accumulate(c.begin(), c.end(), 0.0) / n);
        vars.push_back(sample_variance(c));
    }
    const double w = std::accumulate(vars.begin(), vars.end(), 0.0) / m;
    const double b = n * sample_variance(means);
    const double var_plus = (n - 1.0) / n * w + b / n;
    return std::sqrt(var_plus / w);
}

void check_chains(const std::vector<std::vector<double>>& chains)
{
    if (chains.empty()) throw std::invalid_argument("no chains given");
    const std::size_t n = chains[0].size();
    for (const auto& c : chains) {
        if (c.size() != n) throw ShapeError("chains differ in length");
        for (double x : c)
            if (!std::isfinite(x)) throw std::invalid_argument("chain values must be finite");
    }
    if (n < 4) throw std::invalid_argument("chains need at least 4 draws");
}

} // namespace

// ---------------------------------------------------------------------------
// PSIS

GpdFit gpd_fit(const std::vector<double>& x)
{
    const std::size_t n = x.size();
    if (n < 2) throw std::invalid_argument("gpd_fit needs at least two exceedances");
    constexpr double prior = 3.0;
    const std::size_t grid = 30 + static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
    const double xstar = x[static_cast<std::size_t>(std::floor(static_cast<double>(n) / 4.0 + 0.5)) - 1];
    const double nd = static_cast<double>(n);

    std::vector<double> theta(grid), profile(grid);
    for (std::size_t j = 0; j < grid; ++j) {
        const double jj = static_cast<double>(j + 1);
        theta[j] = 1.0 / x[n - 1] + (1.0 - std::sqrt(static_cast<double>(grid) / (jj - 0.5))) / prior / xstar;
        double k = 0.0;
        for (double v : x) k += std::log1p(-theta[j] * v);
        k /= nd;
        profile[j] = nd * (std::log(-theta[j] / k) - k - 1.0);
    }
    const double lse = log_sum_exp(profile);
    double theta_hat = 0.0;
    for (std::size_t j = 0; j < grid; ++j) {
        const double w = std::exp(profile[j] - lse);
        if (std::isfinite(w)) theta_hat += theta[j] * w;
    }
    double k = 0.0;
    for (double v : x) k += std::log1p(-theta_hat * v);
    k /= nd;
    GpdFit fit;
    fit.sigma = -k / theta_hat;
    fit.k = (nd * k + 10.0 * 0.5) / (nd + 10.0);
    if (std::isnan(fit.k)) fit.k = std::numeric_limits<double>::infinity();
    return fit;
}

double gpd_quantile(double p, double k, double sigma)
{
    if (k == 0.0) return -sigma * std::log1p(-p);
    return sigma * std::expm1(-k * std::log1p(-p)) / k;
}

std::size_t psis_tail_length(std::size_t s)
{
    const double sd = static_cast<double>(s);
    return static_cast<std::size_t>(std::ceil(std::min(0.2 * sd, 3.0 * std::sqrt(sd))));
}

SmoothedWeights psis_smooth(const std::vector<double>& log_ratios)
{
    const std::size_t s = log_ratios.size();
    if (s < 2) throw std::invalid_argument("psis_smooth needs at least two draws");
    SmoothedWeights out;
    const double mx = *std::max_element(log_ratios.begin(), log_ratios.end());
    const double mn = *std::min_element(log_ratios.begin(), log_ratios.end());
    if (mx == mn) {
        out.pareto_k = kNegInf;
        out.log_weights.assign(s, -std::log(static_cast<double>(s)));
        return out;
    }
    std::vector<double> lw(s);
    for (std::size_t a = 0; a < s; ++a) lw[a] = log_ratios[a] - mx;

    out.pareto_k = std::numeric_limits<double>::infinity();
    const std::size_t tail = psis_tail_length(s);
    if (tail >= 5 && tail < s) {
        std::vector<std::size_t> order(s);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lw[a] < lw[b]; });
        const std::size_t first = s - tail;
        const double cutoff = lw[order[first - 1]];
        if (std::abs(lw[order[s - 1]] - lw[order[first]]) < std::numeric_limits<double>::epsilon() / 100.0) {
            out.pareto_k = 0.0;
        } else {
            std::vector<double> exceed(tail);
            const double exp_cut = std::exp(cutoff);
            for (std::size_t a = 0; a < tail; ++a) exceed[a] = std::exp(lw[order[first + a]]) - exp_cut;
            const GpdFit fit = gpd_fit(exceed);
            out.pareto_k = fit.k;
            if (std::isfinite(fit.k)) {
                for (std::size_t a = 0; a < tail; ++a) {
                    const double p = (static_cast<double>(a) + 0.5) / static_cast<double>(tail);
                    lw[order[first + a]] = std::log(gpd_quantile(p, fit.k, fit.sigma) + exp_cut);
                }
            }
        }
    }
    for (auto& v : lw) v = std::min(v, 0.0);
    const double norm = log_sum_exp(lw);
    for (auto& v : lw) v -= norm;
    out.log_weights = std::move(lw);
    return out;
}

KBucket classify_k(double k)
{
    if (k == kNegInf) return KBucket::degenerate;
    if (k < 0.5) return KBucket::good;
    if (k < kParetoWarning) return KBucket::ok;
    if (k <= 1.0) return KBucket::bad;
    return KBucket::very_bad;
}

std::string to_string(KBucket bucket)
{
    switch (bucket) {
    case KBucket::degenerate: return "degenerate";
    case KBucket::good: return "good";
    case KBucket::ok: return "ok";
    case KBucket::bad: return "bad";
    default: return "very_bad";
    }
}

std::size_t PsisResult::n_above(double threshold) const
{
    return static_cast<std::size_t>((pareto_k.array() > threshold).count());
}

PsisResult psis_loo(const RowMatrix& loglik, bool keep_weights)
{
    check_loglik(loglik);
    const Eigen::Index s = loglik.rows(), n = loglik.cols();
    PsisResult out;
    out.pareto_k.resize(n);
    out.elpd_pointwise.resize(n);
    if (keep_weights) out.smoothed_log_weights.resize(s, n);
    if (s < 100) out.notes.push_back("fewer than 100 draws; Pareto k estimates are unreliable");

    std::vector<double> lppd(static_cast<std::size_t>(n));
    parallel::for_each_chunk(static_cast<std::size_t>(n), [&](std::size_t begin, std::size_t end, std::size_t) {
        std::vector<double> tmp(static_cast<std::size_t>(s));
        for (std::size_t i = begin; i < end; ++i) {
            const auto col = static_cast<Eigen::Index>(i);
            const std::vector<double> ll = column(loglik, col);
            std::vector<double> ratios(ll.size());
            for (std::size_t a = 0; a < ll.size(); ++a) ratios[a] = -ll[a];
            const SmoothedWeights w = psis_smooth(ratios);
            for (std::size_t a = 0; a < ll.size(); ++a) tmp[a] = w.log_weights[a] + ll[a];
            out.elpd_pointwise[col] = log_sum_exp(tmp);
            out.pareto_k[col] = w.pareto_k;
            lppd[i] = log_sum_exp(ll) - std::log(static_cast<double>(s));
            if (keep_weights)
                for (Eigen::Index a = 0; a < s; ++a)
                    out.smoothed_log_weights(a, col) = w.log_weights[static_cast<std::size_t>(a)];
        }
    });

    std::vector<double> elpd(out.elpd_pointwise.data(), out.elpd_pointwise.data() + n);
    out.elpd_loo = std::accumulate(elpd.begin(), elpd.end(), 0.0);
    out.elpd_loo_se = std::sqrt(static_cast<double>(n) * sample_variance(elpd));
    out.p_loo = std::accumulate(lppd.begin(), lppd.end(), 0.0) - out.elpd_loo;
    std::size_t degenerate = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const KBucket b = classify_k(out.pareto_k[i]);
        ++out.bucket_counts[static_cast<std::size_t>(b)];
        if (b == KBucket::degenerate) ++degenerate;
    }
    if (degenerate > 0)
        out.notes.push_back(std::to_string(degenerate) +
                            " observations have a constant log-likelihood; k is undefined and reported as -inf");
    return out;
}

PsisResult psis_loo(const PosteriorDraws& draws, bool keep_weights)
{
    if (!draws.has_loglik()) throw std::invalid_argument("draws carry no pointwise log-likelihood");
    return psis_loo(draws.pointwise_loglik, keep_weights);
}

WaicResult waic(const RowMatrix& loglik)
{
    check_loglik(loglik);
    const Eigen::Index s = loglik.rows(), n = loglik.cols();
    WaicResult out;
    std::vector<double> pointwise(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const std::vector<double> ll = column(loglik, i);
        const double lppd = log_sum_exp(ll) - std::log(static_cast<double>(s));
        const double v = sample_variance(ll);
        out.lppd += lppd;
        out.p_waic += v;
        pointwise[static_cast<std::size_t>(i)] = lppd - v;
    }
    out.elpd_waic = out.lppd - out.p_waic;
    out.elpd_waic_se = std::sqrt(static_cast<double>(n) * sample_variance(pointwise));
    return out;
}

WaicResult waic(const PosteriorDraws& draws)
{
    if (!draws.has_loglik()) throw std::invalid_argument("draws carry no pointwise log-likelihood");
    return waic(draws.pointwise_loglik);
}

// ---------------------------------------------------------------------------
// Convergence

double ess_basic(const std::vector<std::vector<double>>& chains)
{
    check_chains(chains);
    const std::size_t m = chains.size(), n = chains[0].size();
    const double nd = static_cast<double>(n);

    std::vector<double> means(m);
    std::vector<std::vector<double>> centred(m);
    for (std::size_t c = 0; c < m; ++c) {
        means[c] = std::accumulate(chains[c].begin(), chains[c].end(), 0.0) / nd;
        centred[c].resize(n);
        for (std::size_t t = 0; t < n; ++t) centred[c][t] = chains[c][t] - means[c];
    }
    // Mean over chains of the biased autocovariance at `lag`.
    auto mean_acov = [&](std::size_t lag) {
        double total = 0.0;
        for (const auto& x : centred) {
            double s = 0.0;
            for (std::size_t t = 0; t + lag < n; ++t) s += x[t] * x[t + lag];
            total += s / nd;
        }
        return total / static_cast<double>(m);
    };

    const double acov0 = mean_acov(0);
    const double mean_var = acov0 * nd / (nd - 1.0);
    double var_plus = mean_var * (nd - 1.0) / nd;
    if (m > 1) var_plus += sample_variance(means);
    if (!(var_plus > 0.0)) return static_cast<double>(m * n);

    std::vector<double> rho(n, 0.0);
    rho[0] = 1.0;
    double rho_even = 1.0;
    double rho_odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
    rho[1] = rho_odd;
    std::size_t t = 0;
    while (t + 5 < n && !std::isnan(rho_even + rho_odd) && rho_even + rho_odd > 0.0) {
        t += 2;
        rho_even = 1.0 - (mean_var - mean_acov(t)) / var_plus;
        rho_odd = 1.0 - (mean_var - mean_acov(t + 1)) / var_plus;
        if (rho_even + rho_odd >= 0.0) {
            rho[t] = rho_even;
            rho[t + 1] = rho_odd;
        }
    }
    const std::size_t max_t = t;
    if (rho_even > 0.0) rho[max_t] = rho_even;
    for (t = 0; t + 4 <= max_t;) {
        t += 2;
        if (rho[t] + rho[t + 1] > rho[t - 2] + rho[t - 1]) {
            rho[t] = 0.5 * (rho[t - 2] + rho[t - 1]);
            rho[t + 1] = rho[t];
        }
    }
    const double total = static_cast<double>(m * n);
    double tau = -1.0 + rho[max_t];
    for (std::size_t a = 0; a < max_t; ++a) tau += 2.0 * rho[a];
    if (max_t == 0) tau = -1.0 + 3.0 * rho[0];
    tau = std::max(tau, 1.0 / std::log10(total));
    return total / tau;
}

ConvergenceResult rhat_ess(const std::vector<std::vector<double>>& chains)
{
    check_chains(chains);
    const auto split = split_chains(chains);
    const auto z = rank_normalize(split);
    ConvergenceResult out;
    out.ess_bulk = ess_basic(z);
    if (chains.size() < 2) return out;

    std::vector<double> pooled;
    for (const auto& c : split) pooled.insert(pooled.end(), c.begin(), c.end());
    std::sort(pooled.begin(), pooled.end());
    const double med = quantile_sorted(pooled, 0.5);
    auto folded = split;
    for (auto& c : folded)
        for (auto& v : c) v = std::abs(v - med);
    out.rhat = std::max(rhat_basic(z), rhat_basic(rank_normalize(folded)));
    return out;
}

// ---------------------------------------------------------------------------
// Summaries

const SummaryRow& SummaryReport::row(const std::string& name) const
{
    for (const auto& r : rows)
        if (r.name == name) return r;
    throw std::out_of_range("no summary row named " + name);
}

SummaryRow summarize_values(std::string name, std::vector<double> values)
{
    if (values.empty()) throw std::invalid_argument("cannot summarize zero draws");
    SummaryRow row;
    row.name = std::move(name);
    row.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    std::sort(values.begin(), values.end());
    row.lower = quantile_sorted(values, 0.025);
    row.upper = quantile_sorted(values, 0.975);
    return row;
}

SummaryReport summarize(const PosteriorDraws& draws, std::size_t anchor)
{
    if (draws.draws.empty()) throw std::invalid_argument("cannot summarize zero draws");
    const auto& first = draws.draws.front();
    const std::size_t nj = first.beta_Y.size(), nk = first.beta_W.size(), nl = first.beta_P.size();
    if (anchor >= nj) throw std::out_of_range("anchor biomarker index out of range");
    const auto last = static_cast<Eigen::Index>(first.beta_D.size()); // index of the phenotype effect

    SummaryReport report;
    report.n_draws = draws.size();
    double anchor_mean = 0.0;
    for (const auto& d : draws.draws) anchor_mean += d.beta_Y[anchor][last];
    report.relabeled = anchor_mean < 0.0;
    const bool swap = report.relabeled;

    // Under a class swap the intercept becomes b0 + b1 and the effect -b1.
    auto sens = [&](const Vector& b) { return swap ? expit(b[0]) : sensitivity(b[0], b[last]); };
    auto spec = [&](const Vector& b) { return swap ? specificity(b[0] + b[last]) : specificity(b[0]); };

    auto add_indicator_rows = [&](auto member, std::size_t count, const std::string& label) {
        for (std::size_t k = 0; k < count; ++k) {
            std::vector<double> se, sp;
            for (const auto& d : draws.draws) {
                const Vector& b = (d.*member)[k];
                se.push_back(sens(b));
                sp.push_back(spec(b));
            }
            const std::string idx = std::to_string(k + 1);
            report.rows.push_back(summarize_values("sensitivity_" + label + "_" + idx, std::move(se)));
            report.rows.push_back(summarize_values("specificity_" + label + "_" + idx, std::move(sp)));
        }
    };
    add_indicator_rows(&ParameterState::beta_W, nk, "code");
    add_indicator_rows(&ParameterState::beta_P, nl, "medication");
    for (std::size_t j = 0; j < nj; ++j) {
        std::vector<double> shift;
        for (const auto& d : draws.draws) shift.push_back(swap ? -d.beta_Y[j][last] : d.beta_Y[j][last]);
        report.rows.push_back(summarize_values("shift_biomarker_" + std::to_string(j + 1), std::move(shift)));
    }
    return report;
}

SummaryReport summarize_parameters(const PosteriorDraws& draws)
{
    if (draws.draws.empty()) throw std::invalid_argument("cannot summarize zero draws");
    const auto& first = draws.draws.front();
    const ParameterLayout layout(static_cast<std::size_t>(first.beta_D.size()) - 1, first.beta_R.size(),
                                 first.beta_W.size(), first.beta_P.size(), 0, false);
    std::vector<Vector> flat;
    flat.reserve(draws.size());
    for (const auto& d : draws.draws) {
        ParameterState g = d;
        g.eta.resize(0);
        flat.push_back(layout.flatten(g));
    }
    SummaryReport report;
    report.n_draws = draws.size();
    for (std::size_t c = 0; c < layout.global_size(); ++c) {
        std::vector<double> values;
        values.reserve(flat.size());
        for (const auto& f : flat) values.push_back(f[static_cast<Eigen::Index>(c)]);
        report.rows.push_back(summarize_values(layout.name(c), std::move(values)));
    }
    return report;
}

std::size_t ComparisonTable::n_divergent() const
{
    return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.divergent; }));
}

const ComparisonRow& ComparisonTable::row(const std::string& name) const
{
    for (const auto& r : rows)
        if (r.name == name) return r;
    throw std::out_of_range("no comparison row named " + name);
}

ComparisonTable compare(const SummaryReport& a, const SummaryReport& b, double multiple)
{
    if (!(multiple > 0.0)) throw std::invalid_argument("divergence multiple must be positive");
    if (a.rows.size() != b.rows.size()) throw ShapeError("summary reports have different row counts");
    ComparisonTable table;
    table.multiple = multiple;
    for (std::size_t r = 0; r < a.rows.size(); ++r) {
        if (a.rows[r].name != b.rows[r].name)
            throw ShapeError("summary rows differ: " + a.rows[r].name + " vs " + b.rows[r].name);
        ComparisonRow row;
        row.name = a.rows[r].name;
        row.a = a.rows[r];
        row.b = b.rows[r];
        row.difference = row.b.mean - row.a.mean;
        row.pooled_half_width = 0.25 * ((row.a.upper - row.a.lower) + (row.b.upper - row.b.lower));
        row.divergent = std::abs(row.difference) > multiple * row.pooled_half_width;
        table.rows.push_back(std::move(row));
    }
    return table;
}

} // namespace phenolca::diagnostics
