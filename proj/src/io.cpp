#include "phenolca/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace phenolca::io {

namespace {

std::vector<std::string> split(const std::string& line, char sep)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string strip_cr(std::string line)
{
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

// Next line that is not blank, reading past comment lines. Comment lines are
// handed to `on_comment`.
template <class Fn>
bool next_data_line(std::istream& in, std::string& line, Fn&& on_comment)
{
    while (std::getline(in, line)) {
        line = strip_cr(line);
        if (line.empty()) continue;
        if (line[0] == '#') {
            on_comment(line);
            continue;
        }
        return true;
    }
    return false;
}

Json vector_json(const Vector& v)
{
    Json a = Json::array();
    for (Eigen::Index c = 0; c < v.size(); ++c) a.push_back(v[c]);
    return a;
}

Json family_json(const std::vector<Vector>& fam)
{
    Json a = Json::array();
    for (const auto& v : fam) a.push_back(vector_json(v));
    return a;
}

Vector vector_from_json(const Json& j, const std::string& what)
{
    if (!j.is_array()) throw ConfigError(what + " must be an array of numbers");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t c = 0; c < j.size(); ++c) {
        if (!j[c].is_number()) throw ConfigError(what + " must be an array of numbers");
        v[static_cast<Eigen::Index>(c)] = j[c].get<double>();
    }
    return v;
}

std::vector<Vector> family_from_json(const Json& j, const std::string& what)
{
    if (!j.is_array()) throw ConfigError(what + " must be an array of arrays");
    std::vector<Vector> out;
    for (std::size_t c = 0; c < j.size(); ++c) out.push_back(vector_from_json(j[c], what));
    return out;
}

void reject_unknown(const Json& j, std::initializer_list<const char*> allowed, const std::string& where)
{
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || item.key() == a;
        if (!ok) throw ConfigError("unknown key '" + item.key() + "' in " + where);
    }
}

template <class T>
void read_field(const Json& j, const char* key, T& target)
{
    if (!j.contains(key)) return;
    try {
        target = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
}

Json gaussian_json(const DiagonalGaussian& g)
{
    Json j;
    j["mean"] = vector_json(g.mean);
    j["variance"] = vector_json(g.variance);
    return j;
}

DiagonalGaussian gaussian_from_json(const Json& j, const std::string& what)
{
    reject_unknown(j, {"mean", "variance"}, what);
    if (!j.contains("mean") || !j.contains("variance")) throw ConfigError(what + " needs mean and variance");
    DiagonalGaussian g{vector_from_json(j["mean"], what + ".mean"), vector_from_json(j["variance"], what + ".variance")};
    if (g.mean.size() != g.variance.size()) throw ConfigError(what + " mean and variance differ in length");
    return g;
}

void header_fields(Json& j, const Header& h)
{
    j["format"] = "phenolca";
    j["kind"] = h.kind;
    j["version"] = kFormatVersion;
    j["seed"] = h.seed;
    j["config_hash"] = h.config_hash;
}

Header header_from_json(const Json& j)
{
    Header h;
    if (!j.is_object() || j.value("format", "") != "phenolca") throw InputError("missing phenolca metadata header");
    if (j.value("version", 0) != kFormatVersion)
        throw InputError("unsupported format version " + std::to_string(j.value("version", 0)));
    h.kind = j.value("kind", "");
    h.seed = j.value("seed", std::uint64_t{0});
    h.config_hash = j.value("config_hash", "");
    return h;
}

std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

} // namespace

// ---------------------------------------------------------------------------
// Scalars and headers

std::string format_double(double x)
{
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& text)
{
    if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (text == "inf") return std::numeric_limits<double>::infinity();
    if (text == "-inf") return -std::numeric_limits<double>::infinity();
    double x = 0.0;
    const char* end = text.data() + text.size();
    const auto res = std::from_chars(text.data(), end, x);
    if (res.ec != std::errc() || res.ptr != end) throw InputError("not a number: '" + text + "'");
    return x;
}

std::string fnv1a_hex(const std::string& text)
{
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

std::string header_line(const Header& h)
{
    return "# phenolca kind=" + h.kind + " version=" + std::to_string(kFormatVersion) +
           " seed=" + std::to_string(h.seed) + " config_hash=" + h.config_hash;
}

Header parse_header_line(const std::string& line)
{
    const auto parts = split(strip_cr(line), ' ');
    if (parts.size() < 2 || parts[0] != "#" || parts[1] != "phenolca") throw InputError("missing phenolca metadata header");
    Header h;
    int version = 0;
    for (std::size_t p = 2; p < parts.size(); ++p) {
        const auto eq = parts[p].find('=');
        if (eq == std::string::npos) continue;
        const std::string key = parts[p].substr(0, eq), value = parts[p].substr(eq + 1);
        if (key == "kind") h.kind = value;
        else if (key == "seed") h.seed = std::stoull(value);
        else if (key == "config_hash") h.config_hash = value;
        else if (key == "version") version = std::stoi(value);
    }
    if (version != kFormatVersion) throw InputError("unsupported format version " + std::to_string(version));
    return h;
}

// ---------------------------------------------------------------------------
// Cohort

std::vector<std::string> cohort_columns(std::size_t m, std::size_t j, std::size_t k, std::size_t l)
{
    std::vector<std::string> cols{"patient_id"};
    auto add = [&](const char* prefix, std::size_t count) {
        for (std::size_t c = 1; c <= count; ++c) cols.push_back(prefix + std::to_string(c));
    };
    add("x_", m);
    add("r_", j);
    add("y_", j);
    add("w_", k);
    add("p_", l);
    return cols;
}

void write_cohort_csv(std::ostream& out, const CohortData& data, const Header& header)
{
    const std::size_t m = data.n_covariates(), nj = data.n_biomarkers(), nk = data.n_codes(), nl = data.n_medications();
    out << header_line(header) << '\n';
    const auto cols = cohort_columns(m, nj, nk, nl);
    for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c];
    out << '\n';
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(data.n_patients()); ++i) {
        out << (i + 1);
        for (Eigen::Index c = 0; c < data.X.cols(); ++c) out << ',' << format_double(data.X(i, c));
        for (Eigen::Index c = 0; c < data.R.cols(); ++c) out << ',' << int(data.R(i, c));
        for (Eigen::Index c = 0; c < data.Y.cols(); ++c)
            out << ',' << (data.R(i, c) ? format_double(data.Y(i, c)) : std::string("NA"));
        for (Eigen::Index c = 0; c < data.W.cols(); ++c) out << ',' << int(data.W(i, c));
        for (Eigen::Index c = 0; c < data.P.cols(); ++c) out << ',' << int(data.P(i, c));
        out << '\n';
    }
}

CohortData read_cohort_csv(std::istream& in, Header* header)
{
    std::string line;
    bool have_header = false;
    Header h;
    auto on_comment = [&](const std::string& c) {
        if (!have_header) {
            h = parse_header_line(c);
            have_header = true;
        }
    };
    if (!next_data_line(in, line, on_comment)) throw InputError("cohort file has no column header");
    if (!have_header) throw InputError("cohort file lacks the metadata header line");
    if (header) *header = h;

    const auto cols = split(line, ',');
    std::size_t counts[5] = {0, 0, 0, 0, 0};
    const char* prefixes[5] = {"x_", "r_", "y_", "w_", "p_"};
    for (std::size_t c = 1; c < cols.size(); ++c)
        for (int p = 0; p < 5; ++p)
            if (cols[c].rfind(prefixes[p], 0) == 0) ++counts[p];
    if (counts[1] != counts[2]) throw InputError("cohort header has different numbers of r_ and y_ columns");
    const auto expected = cohort_columns(counts[0], counts[1], counts[3], counts[4]);
    if (cols != expected) {
        std::string want;
        for (const auto& c : expected) want += (want.empty() ? "" : ",") + c;
        throw InputError("cohort header does not match the schema", {"expected: " + want, "found: " + line});
    }
    const std::size_t m = counts[0], nj = counts[1], nk = counts[3], nl = counts[4];

    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> problems;
    std::size_t line_no = 0, n_problems = 0;
    auto problem = [&](std::size_t row, const std::string& what) {
        if (n_problems++ < 20) problems.push_back("row " + std::to_string(row) + ": " + what);
    };
    std::vector<std::size_t> row_no;
    while (next_data_line(in, line, [](const std::string&) {})) {
        rows.push_back(split(line, ','));
        row_no.push_back(++line_no);
    }
    std::size_t n_good = 0;
    for (const auto& f : rows) n_good += f.size() == cols.size();

    CohortData d = CohortData::zeros(n_good, m, nj, nk, nl);
    auto binary = [&](const std::string& s, std::size_t row, const std::string& col) -> std::uint8_t {
        if (s == "0") return 0;
        if (s == "1") return 1;
        problem(row, col + " must be 0 or 1, found '" + s + "'");
        return 0;
    };
    Eigen::Index i = -1;
    for (std::size_t q = 0; q < rows.size(); ++q) {
        const auto& f = rows[q];
        const std::size_t r = row_no[q] - 1;
        if (f.size() != cols.size()) {
            problem(r + 1, "expected " + std::to_string(cols.size()) + " fields, found " + std::to_string(f.size()));
            continue;
        }
        ++i;
        std::size_t c = 1;
        for (std::size_t a = 0; a < m; ++a, ++c) {
            try {
                d.X(i, static_cast<Eigen::Index>(a)) = parse_double(f[c]);
                if (!std::isfinite(d.X(i, static_cast<Eigen::Index>(a)))) problem(r + 1, cols[c] + " is not finite");
            } catch (const InputError&) {
                problem(r + 1, cols[c] + " is not a number: '" + f[c] + "'");
            }
        }
        for (std::size_t a = 0; a < nj; ++a, ++c) d.R(i, static_cast<Eigen::Index>(a)) = binary(f[c], r + 1, cols[c]);
        for (std::size_t a = 0; a < nj; ++a, ++c) {
            const bool available = d.R(i, static_cast<Eigen::Index>(a)) != 0;
            double y = std::numeric_limits<double>::quiet_NaN();
            if (f[c] == "NA") {
                if (available) problem(r + 1, cols[c] + " is NA but " + cols[c - nj] + " = 1");
            } else if (!available) {
                problem(r + 1, cols[c] + " must be NA where " + cols[c - nj] + " = 0");
            } else {
                try {
                    y = parse_double(f[c]);
                    if (!std::isfinite(y)) problem(r + 1, cols[c] + " is not finite");
                } catch (const InputError&) {
                    problem(r + 1, cols[c] + " is not a number: '" + f[c] + "'");
                }
            }
            d.Y(i, static_cast<Eigen::Index>(a)) = y;
        }
        for (std::size_t a = 0; a < nk; ++a, ++c) d.W(i, static_cast<Eigen::Index>(a)) = binary(f[c], r + 1, cols[c]);
        for (std::size_t a = 0; a < nl; ++a, ++c) d.P(i, static_cast<Eigen::Index>(a)) = binary(f[c], r + 1, cols[c]);
    }
    if (n_problems > 0) {
        if (n_problems > problems.size())
            problems.push_back("... and " + std::to_string(n_problems - problems.size()) + " more");
        throw InputError("cohort file violates the schema", problems);
    }
    if (n_good == 0) throw InputError("cohort file has no patients");
    return d;
}

// ---------------------------------------------------------------------------
// JSON encodings

Json to_json(const ParameterState& s, bool with_eta)
{
    Json j;
    j["beta_D"] = vector_json(s.beta_D);
    j["beta_R"] = family_json(s.beta_R);
    j["beta_Y"] = family_json(s.beta_Y);
    j["tau2"] = vector_json(s.tau2);
    j["beta_W"] = family_json(s.beta_W);
    j["beta_P"] = family_json(s.beta_P);
    if (with_eta && s.eta.size() > 0) j["eta"] = vector_json(s.eta);
    return j;
}

ParameterState parameters_from_json(const Json& j)
{
    reject_unknown(j, {"beta_D", "beta_R", "beta_Y", "tau2", "beta_W", "beta_P", "eta"}, "parameters");
    ParameterState s;
    try {
        s.beta_D = vector_from_json(j.at("beta_D"), "beta_D");
        s.beta_R = family_from_json(j.at("beta_R"), "beta_R");
        s.beta_Y = family_from_json(j.at("beta_Y"), "beta_Y");
        s.tau2 = vector_from_json(j.at("tau2"), "tau2");
        s.beta_W = family_from_json(j.at("beta_W"), "beta_W");
        s.beta_P = family_from_json(j.at("beta_P"), "beta_P");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("incomplete parameter record: ") + e.what());
    }
    if (j.contains("eta")) s.eta = vector_from_json(j["eta"], "eta");
    return s;
}

Json truth_json(const SimulatedCohort& cohort, const SimulationConfig& config, const Header& header)
{
    Json j;
    header_fields(j, header);
    j["n_patients"] = config.n_patients;
    j["eta_lower"] = config.eta_lower;
    j["eta_upper"] = config.eta_upper;
    ParameterState truth = config.true_params;
    truth.eta = cohort.true_eta;
    j["parameters"] = to_json(truth, config.eta_lower < config.eta_upper);
    Json d = Json::array();
    for (auto v : cohort.true_D) d.push_back(int(v));
    j["D"] = d;
    double prevalence = 0.0;
    for (auto v : cohort.true_D) prevalence += v;
    j["prevalence"] = cohort.true_D.empty() ? 0.0 : prevalence / static_cast<double>(cohort.true_D.size());
    return j;
}

// ---------------------------------------------------------------------------
// Draws

void write_draws_jsonl(std::ostream& out, const PosteriorDraws& draws, const std::string& backend, const Header& header)
{
    Json h;
    header_fields(h, header);
    h["backend"] = backend;
    h["n_chains"] = draws.n_chains;
    h["n_draws"] = draws.size();
    h["n_patients"] = draws.has_loglik() ? draws.pointwise_loglik.cols() : 0;
    h["eta_stored"] = draws.eta_stored;
    h["has_loglik"] = draws.has_loglik();
    Json acc = Json::array();
    for (const auto& a : draws.acceptance) {
        Json r;
        r["chain"] = a.chain;
        r["block"] = a.block;
        r["warmup_rate"] = a.warmup_rate;
        r["rate"] = a.rate();
        r["final_scale"] = a.final_scale;
        acc.push_back(r);
    }
    h["acceptance"] = acc;
    out << h.dump() << '\n';
    for (std::size_t s = 0; s < draws.size(); ++s) {
        Json line;
        line["draw"] = s;
        line["chain"] = draws.chain_id[s];
        line["parameters"] = to_json(draws.draws[s], draws.eta_stored);
        if (draws.has_loglik()) {
            Json ll = Json::array();
            const auto row = static_cast<Eigen::Index>(s);
            for (Eigen::Index i = 0; i < draws.pointwise_loglik.cols(); ++i) ll.push_back(draws.pointwise_loglik(row, i));
            line["loglik"] = ll;
        }
        out << line.dump() << '\n';
    }
}

DrawsFile read_draws_jsonl(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line)) throw InputError("draws file is empty");
    DrawsFile file;
    Json h;
    try {
        h = Json::parse(line);
    } catch (const nlohmann::json::exception&) {
        throw InputError("draws file header is not valid JSON");
    }
    file.header = header_from_json(h);
    file.backend = h.value("backend", "");
    auto& d = file.draws;
    d.n_chains = h.value("n_chains", std::size_t{1});
    d.eta_stored = h.value("eta_stored", false);
    const bool has_loglik = h.value("has_loglik", false);
    const std::size_t n_draws = h.value("n_draws", std::size_t{0});
    const auto n = static_cast<Eigen::Index>(h.value("n_patients", std::size_t{0}));
    if (h.contains("acceptance"))
        for (const auto& a : h["acceptance"]) {
            AcceptanceStats st;
            st.chain = a.value("chain", std::size_t{0});
            st.block = a.value("block", "");
            st.warmup_rate = a.value("warmup_rate", 0.0);
            st.final_scale = a.value("final_scale", 0.0);
            d.acceptance.push_back(st);
        }
    if (has_loglik) d.pointwise_loglik.resize(static_cast<Eigen::Index>(n_draws), n);

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        const std::size_t s = d.draws.size();
        if (s >= n_draws) throw InputError("draws file has more records than its header declares");
        try {
            const Json rec = Json::parse(line);
            const std::size_t chain = rec.at("chain").get<std::size_t>();
            if (chain >= d.n_chains) throw InputError("line " + std::to_string(line_no) + ": chain id out of range");
            d.draws.push_back(parameters_from_json(rec.at("parameters")));
            d.chain_id.push_back(chain);
            if (has_loglik) {
                const auto& ll = rec.at("loglik");
                if (static_cast<Eigen::Index>(ll.size()) != n)
                    throw InputError("line " + std::to_string(line_no) + ": loglik has the wrong length");
                for (Eigen::Index i = 0; i < n; ++i)
                    d.pointwise_loglik(static_cast<Eigen::Index>(s), i) = ll[static_cast<std::size_t>(i)].get<double>();
            }
        } catch (const nlohmann::json::exception& e) {
            throw InputError("line " + std::to_string(line_no) + ": malformed draw record (" + e.what() + ")");
        } catch (const ConfigError& e) {
            throw InputError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (d.draws.size() != n_draws)
        throw InputError("draws file declares " + std::to_string(n_draws) + " draws but holds " +
                         std::to_string(d.draws.size()));
    return file;
}

void write_draws_csv(std::ostream& out, const PosteriorDraws& draws, const Header& header)
{
    out << header_line(header) << '\n';
    if (draws.draws.empty()) return;
    const auto& f = draws.draws.front();
    const bool with_eta = draws.eta_stored && f.eta.size() > 0;
    const ParameterLayout layout(static_cast<std::size_t>(f.beta_D.size()) - 1, f.beta_R.size(), f.beta_W.size(),
                                 f.beta_P.size(), static_cast<std::size_t>(f.eta.size()), with_eta);
    out << "draw,chain";
    for (std::size_t c = 0; c < layout.size(); ++c) out << ',' << layout.name(c);
    out << '\n';
    for (std::size_t s = 0; s < draws.size(); ++s) {
        ParameterState p = draws.draws[s];
        if (!with_eta) p.eta.resize(0);
        const Vector flat = layout.flatten(p);
        out << s << ',' << draws.chain_id[s];
        for (Eigen::Index c = 0; c < flat.size(); ++c) out << ',' << format_double(flat[c]);
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Reports

void write_trace_csv(std::ostream& out, const advi::ElboTrace& trace, const Header& header)
{
    out << header_line(header) << '\n';
    out << "# stop_reason=" << advi::to_string(trace.stop_reason) << '\n';
    out << "iteration,elbo,rel_change\n";
    for (std::size_t t = 0; t < trace.size(); ++t)
        out << trace.iteration[t] << ',' << format_double(trace.elbo[t]) << ','
            << (std::isnan(trace.rel_change[t]) ? std::string("NA") : format_double(trace.rel_change[t])) << '\n';
}

void write_psis_csv(std::ostream& out, const diagnostics::PsisResult& psis, const Header& header)
{
    out << header_line(header) << '\n';
    out << "observation,pareto_k,bucket,elpd_loo\n";
    for (Eigen::Index i = 0; i < psis.pareto_k.size(); ++i)
        out << (i + 1) << ',' << format_double(psis.pareto_k[i]) << ','
            << diagnostics::to_string(diagnostics::classify_k(psis.pareto_k[i])) << ','
            << format_double(psis.elpd_pointwise[i]) << '\n';
}

void write_summary_csv(std::ostream& out, const diagnostics::SummaryReport& report, const Header& header)
{
    out << header_line(header) << '\n';
    out << "# n_draws=" << report.n_draws << " relabeled=" << (report.relabeled ? 1 : 0) << '\n';
    out << "quantity,mean,lower,upper\n";
    for (const auto& r : report.rows)
        out << csv_field(r.name) << ',' << format_double(r.mean) << ',' << format_double(r.lower) << ','
            << format_double(r.upper) << '\n';
}

diagnostics::SummaryReport read_summary_csv(std::istream& in, Header* header)
{
    diagnostics::SummaryReport report;
    bool have_header = false;
    auto on_comment = [&](const std::string& c) {
        if (!have_header) {
            const Header h = parse_header_line(c);
            if (header) *header = h;
            have_header = true;
            return;
        }
        for (const auto& part : split(c.substr(1), ' ')) {
            if (part.rfind("n_draws=", 0) == 0) report.n_draws = std::stoull(part.substr(8));
            if (part.rfind("relabeled=", 0) == 0) report.relabeled = part.substr(10) == "1";
        }
    };
    std::string line;
    if (!next_data_line(in, line, on_comment) || line != "quantity,mean,lower,upper")
        throw InputError("summary file lacks its column header");
    if (!have_header) throw InputError("summary file lacks the metadata header line");
    while (next_data_line(in, line, on_comment)) {
        const auto f = split(line, ',');
        if (f.size() != 4) throw InputError("summary row has the wrong number of fields: " + line);
        report.rows.push_back({f[0], parse_double(f[1]), parse_double(f[2]), parse_double(f[3])});
    }
    return report;
}

void write_comparison_csv(std::ostream& out, const diagnostics::ComparisonTable& table, const Header& header)
{
    out << header_line(header) << '\n';
    out << "# multiple=" << format_double(table.multiple) << '\n';
    out << "quantity,mean_a,lower_a,upper_a,mean_b,lower_b,upper_b,difference,pooled_half_width,divergent\n";
    for (const auto& r : table.rows)
        out << csv_field(r.name) << ',' << format_double(r.a.mean) << ',' << format_double(r.a.lower) << ','
            << format_double(r.a.upper) << ',' << format_double(r.b.mean) << ',' << format_double(r.b.lower) << ','
            << format_double(r.b.upper) << ',' << format_double(r.difference) << ','
            << format_double(r.pooled_half_width) << ',' << (r.divergent ? 1 : 0) << '\n';
}

void write_rhat_csv(std::ostream& out, const std::vector<NamedConvergence>& rows, const Header& header)
{
    out << header_line(header) << '\n';
    out << "quantity,rhat,ess_bulk\n";
    for (const auto& r : rows)
        out << csv_field(r.name) << ',' << (std::isnan(r.result.rhat) ? std::string("NA") : format_double(r.result.rhat))
            << ',' << format_double(r.result.ess_bulk) << '\n';
}

// ---------------------------------------------------------------------------
// Configuration

Json to_json(const PriorSpec& p)
{
    Json j;
    j["beta_D"] = gaussian_json(p.beta_D);
    j["beta_R"] = gaussian_json(p.beta_R);
    j["beta_Y"] = gaussian_json(p.beta_Y);
    Json by = Json::array();
    for (const auto& g : p.beta_Y_by_biomarker) by.push_back(gaussian_json(g));
    j["beta_Y_by_biomarker"] = by;
    j["beta_W"] = gaussian_json(p.beta_W);
    j["beta_P"] = gaussian_json(p.beta_P);
    j["eta_lower"] = p.eta_lower;
    j["eta_upper"] = p.eta_upper;
    j["tau2_shape"] = p.tau2_shape;
    j["tau2_scale"] = p.tau2_scale;
    return j;
}

PriorSpec priors_from_json(const Json& j, std::size_t m)
{
    reject_unknown(j, {"scenario", "beta_D", "beta_R", "beta_Y", "beta_Y_by_biomarker", "beta_W", "beta_P",
                       "eta_lower", "eta_upper", "tau2_shape", "tau2_scale"},
                   "priors");
    PriorSpec p;
    const std::string scenario = j.value("scenario", "generic");
    if (scenario == "default") {
        if (m != 3) throw ConfigError("the default prior scenario needs exactly 3 covariates");
        p = default_scenario_priors();
    } else if (scenario == "generic") {
        p = default_priors(m);
    } else {
        throw ConfigError("unknown prior scenario '" + scenario + "'");
    }
    if (j.contains("beta_D")) p.beta_D = gaussian_from_json(j["beta_D"], "priors.beta_D");
    if (j.contains("beta_R")) p.beta_R = gaussian_from_json(j["beta_R"], "priors.beta_R");
    if (j.contains("beta_Y")) p.beta_Y = gaussian_from_json(j["beta_Y"], "priors.beta_Y");
    if (j.contains("beta_W")) p.beta_W = gaussian_from_json(j["beta_W"], "priors.beta_W");
    if (j.contains("beta_P")) p.beta_P = gaussian_from_json(j["beta_P"], "priors.beta_P");
    if (j.contains("beta_Y_by_biomarker")) {
        p.beta_Y_by_biomarker.clear();
        for (const auto& g : j["beta_Y_by_biomarker"])
            p.beta_Y_by_biomarker.push_back(gaussian_from_json(g, "priors.beta_Y_by_biomarker"));
    }
    read_field(j, "eta_lower", p.eta_lower);
    read_field(j, "eta_upper", p.eta_upper);
    read_field(j, "tau2_shape", p.tau2_shape);
    read_field(j, "tau2_scale", p.tau2_scale);
    return p;
}

SimulationConfig simulation_from_json(const Json& j, std::uint64_t seed)
{
    reject_unknown(j, {"scenario", "n_patients", "eta_lower", "eta_upper", "true_params", "covariates"}, "simulation");
    const std::string scenario = j.value("scenario", "default");
    if (scenario != "default") throw ConfigError("unknown simulation scenario '" + scenario + "'");
    std::int64_t n = 5000;
    read_field(j, "n_patients", n);
    if (n < 0) throw ConfigError("n_patients must be non-negative");
    SimulationConfig c = default_scenario(static_cast<std::size_t>(n), seed);
    read_field(j, "eta_lower", c.eta_lower);
    read_field(j, "eta_upper", c.eta_upper);
    if (j.contains("covariates")) {
        c.covariates.clear();
        for (const auto& cj : j["covariates"]) {
            reject_unknown(cj, {"kind", "value", "name"}, "simulation.covariates");
            CovariateSpec cov;
            const std::string kind = cj.value("kind", "standard_normal");
            if (kind == "standard_normal") cov.kind = CovariateSpec::Kind::standard_normal;
            else if (kind == "bernoulli") cov.kind = CovariateSpec::Kind::bernoulli;
            else if (kind == "constant") cov.kind = CovariateSpec::Kind::constant;
            else throw ConfigError("unknown covariate kind '" + kind + "'");
            read_field(cj, "value", cov.value);
            read_field(cj, "name", cov.name);
            c.covariates.push_back(cov);
        }
    }
    if (j.contains("true_params")) {
        const Json& t = j["true_params"];
        reject_unknown(t, {"beta_D", "beta_R", "beta_Y", "tau2", "beta_W", "beta_P", "eta"}, "simulation.true_params");
        auto& p = c.true_params;
        if (t.contains("beta_D")) p.beta_D = vector_from_json(t["beta_D"], "true beta_D");
        if (t.contains("beta_R")) p.beta_R = family_from_json(t["beta_R"], "true beta_R");
        if (t.contains("beta_Y")) p.beta_Y = family_from_json(t["beta_Y"], "true beta_Y");
        if (t.contains("tau2")) p.tau2 = vector_from_json(t["tau2"], "true tau2");
        if (t.contains("beta_W")) p.beta_W = family_from_json(t["beta_W"], "true beta_W");
        if (t.contains("beta_P")) p.beta_P = family_from_json(t["beta_P"], "true beta_P");
        if (t.contains("eta")) {
            p.eta = vector_from_json(t["eta"], "true eta");
            c.regenerate_eta = false;
        }
    }
    return c;
}

gibbs::McmcConfig mcmc_from_json(const Json& j)
{
    reject_unknown(j, {"n_chains", "n_warmup", "n_samples", "thin", "rw_scale_beta", "rw_scale_eta", "adapt_target",
                       "adapt_target_scalar", "n_anchor", "store_eta", "store_loglik", "memory_limit_bytes"},
                   "mcmc");
    gibbs::McmcConfig c;
    read_field(j, "n_chains", c.n_chains);
    read_field(j, "n_warmup", c.n_warmup);
    read_field(j, "n_samples", c.n_samples);
    read_field(j, "thin", c.thin);
    read_field(j, "rw_scale_beta", c.rw_scale_beta);
    read_field(j, "rw_scale_eta", c.rw_scale_eta);
    read_field(j, "adapt_target", c.adapt_target);
    read_field(j, "adapt_target_scalar", c.adapt_target_scalar);
    read_field(j, "n_anchor", c.n_anchor);
    read_field(j, "store_eta", c.store_eta);
    read_field(j, "store_loglik", c.store_loglik);
    read_field(j, "memory_limit_bytes", c.memory_limit_bytes);
    return c;
}

advi::AdviConfig advi_from_json(const Json& j)
{
    reject_unknown(j, {"n_mc_grad", "n_mc_elbo", "eval_every", "max_iterations", "rel_tol", "step_size", "step_decay",
                       "step_offset", "window", "divergence_window", "divergence_guard", "init_log_scale",
                       "minibatch_size", "n_draws"},
                   "advi");
    advi::AdviConfig c;
    read_field(j, "n_mc_grad", c.n_mc_grad);
    read_field(j, "n_mc_elbo", c.n_mc_elbo);
    read_field(j, "eval_every", c.eval_every);
    read_field(j, "max_iterations", c.max_iterations);
    read_field(j, "rel_tol", c.rel_tol);
    read_field(j, "step_size", c.step_size);
    if (j.contains("step_decay") && j["step_decay"] != "adagrad")
        throw ConfigError("step_decay supports only \"adagrad\"");
    read_field(j, "step_offset", c.step_offset);
    read_field(j, "window", c.window);
    read_field(j, "divergence_window", c.divergence_window);
    read_field(j, "divergence_guard", c.divergence_guard);
    read_field(j, "init_log_scale", c.init_log_scale);
    read_field(j, "minibatch_size", c.minibatch_size);
    return c;
}

Json to_json(const gibbs::McmcConfig& c)
{
    Json j;
    j["n_chains"] = c.n_chains;
    j["n_warmup"] = c.n_warmup;
    j["n_samples"] = c.n_samples;
    j["thin"] = c.thin;
    j["rw_scale_beta"] = c.rw_scale_beta;
    j["rw_scale_eta"] = c.rw_scale_eta;
    j["adapt_target"] = c.adapt_target;
    j["adapt_target_scalar"] = c.adapt_target_scalar;
    j["n_anchor"] = c.n_anchor;
    j["store_eta"] = c.store_eta;
    j["store_loglik"] = c.store_loglik;
    j["memory_limit_bytes"] = c.memory_limit_bytes;
    return j;
}

Json to_json(const advi::AdviConfig& c)
{
    Json j;
    j["n_mc_grad"] = c.n_mc_grad;
    j["n_mc_elbo"] = c.n_mc_elbo;
    j["eval_every"] = c.eval_every;
    j["max_iterations"] = c.max_iterations;
    j["rel_tol"] = c.rel_tol;
    j["step_size"] = c.step_size;
    j["step_decay"] = "adagrad";
    j["step_offset"] = c.step_offset;
    j["window"] = c.window;
    j["divergence_window"] = c.divergence_window;
    j["divergence_guard"] = c.divergence_guard;
    j["init_log_scale"] = c.init_log_scale;
    j["minibatch_size"] = c.minibatch_size;
    return j;
}

Json to_json(const SimulationConfig& c)
{
    Json j;
    j["n_patients"] = c.n_patients;
    j["eta_lower"] = c.eta_lower;
    j["eta_upper"] = c.eta_upper;
    Json cov = Json::array();
    for (const auto& v : c.covariates) {
        Json x;
        x["kind"] = v.kind == CovariateSpec::Kind::standard_normal ? "standard_normal"
                    : v.kind == CovariateSpec::Kind::bernoulli     ? "bernoulli"
                                                                   : "constant";
        x["value"] = v.value;
        x["name"] = v.name;
        cov.push_back(x);
    }
    j["covariates"] = cov;
    j["true_params"] = to_json(c.true_params, !c.regenerate_eta);
    return j;
}

void write_text_file(const std::filesystem::path& path, const std::string& content)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
    out << content;
    out.flush();
    if (!out) throw InputError("failed writing '" + path.string() + "'");
}

std::string read_text_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open '" + path.string() + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

} // namespace phenolca::io
