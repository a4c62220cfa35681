#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "phenolca/cli.hpp"
#include "phenolca/io.hpp"
#include "support.hpp"

using namespace phenolca;
namespace fs = std::filesystem;
using phenolca::testing::random_cohort;
using phenolca::testing::random_priors;
using phenolca::testing::random_state;
using phenolca::testing::scratch_dir;

namespace {

int invoke(std::vector<std::string> args)
{
    args.insert(args.begin(), "phenolca");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) { return io::read_text_file(p); }

std::vector<std::string> lines(const std::string& text)
{
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

fs::path write_config(const fs::path& dir, const std::string& name, const io::Json& j)
{
    const fs::path p = dir / name;
    io::write_text_file(p, j.dump(2));
    return p;
}

io::Json small_config(std::size_t n)
{
    io::Json j;
    j["seed"] = 21;
    j["simulation"] = {{"n_patients", n}};
    j["priors"] = {{"scenario", "default"}};
    j["mcmc"] = {{"n_chains", 2}, {"n_warmup", 40}, {"n_samples", 30}, {"n_anchor", 10}};
    j["advi"] = {{"max_iterations", 200}, {"eval_every", 50}, {"n_mc_elbo", 10}, {"n_draws", 50}};
    return j;
}

} // namespace

TEST_CASE("number formatting round trips bit-exactly")
{
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::uint64_t> bits;
    for (int k = 0; k < 5000; ++k) {
        std::uint64_t b = bits(rng);
        double x;
        std::memcpy(&x, &b, sizeof x);
        if (!std::isfinite(x)) continue;
        const double back = io::parse_double(io::format_double(x));
        CHECK(std::memcmp(&back, &x, sizeof x) == 0);
    }
    CHECK(io::format_double(0.1) == "0.1");
    CHECK_THROWS(io::parse_double("1.5x"));
}

TEST_CASE("header line")
{
    const io::Header h{"cohort", 18446744073709551615ull, "0123456789abcdef"};
    const std::string line = io::header_line(h);
    CHECK(line == "# phenolca kind=cohort version=1 seed=18446744073709551615 config_hash=0123456789abcdef");
    const io::Header back = io::parse_header_line(line);
    CHECK(back.kind == h.kind);
    CHECK(back.seed == h.seed);
    CHECK(back.config_hash == h.config_hash);
    CHECK(io::fnv1a_hex("") == "cbf29ce484222325");
}

TEST_CASE("cohort CSV schema and round trip")
{
    CHECK(io::cohort_columns(2, 1, 1, 0) ==
          std::vector<std::string>{"patient_id", "x_1", "x_2", "r_1", "y_1", "w_1"});
    Rng rng = make_stream(81, 0);
    const CohortData d = random_cohort(40, 2, 2, 1, 2, rng);
    std::stringstream buf;
    io::write_cohort_csv(buf, d, {"cohort", 1, "h"});
    const std::string text = buf.str();
    const auto ls = lines(text);
    CHECK(ls[1] == "patient_id,x_1,x_2,r_1,r_2,y_1,y_2,w_1,p_1,p_2");
    for (std::size_t i = 0; i < 40; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const bool na1 = ls[i + 2].find(",NA,") != std::string::npos || ls[i + 2].find(",NA") != std::string::npos;
        CHECK(na1 == (!d.R(r, 0) || !d.R(r, 1)));
    }
    const CohortData back = io::read_cohort_csv(buf);
    CHECK(back.X == d.X);
    CHECK(back.R == d.R);
    CHECK(back.W == d.W);
    CHECK(back.P == d.P);
    for (Eigen::Index i = 0; i < d.Y.rows(); ++i)
        for (Eigen::Index j = 0; j < d.Y.cols(); ++j)
            if (d.R(i, j)) CHECK(back.Y(i, j) == d.Y(i, j));
}

TEST_CASE("cohort schema violations list the offending rows")
{
    const std::string head = "# phenolca kind=cohort version=1 seed=0 config_hash=x\npatient_id,x_1,r_1,y_1,w_1\n";
    auto read = [](const std::string& s) {
        std::istringstream in(s);
        return io::read_cohort_csv(in);
    };
    CHECK_NOTHROW(read(head + "1,0.5,1,2.0,0\n2,0.1,0,NA,1\n"));
    try {
        read(head + "1,0.5,1,NA,0\n2,0.2,1,1.0\n3,0.1,0,3.0,1\n4,0.1,2,1.0,1\n");
        FAIL("expected an input error");
    } catch (const io::InputError& e) {
        REQUIRE(e.details().size() == 5);
        CHECK(e.details()[0].rfind("row 1: y_1 is NA", 0) == 0);
        CHECK(e.details()[1].rfind("row 2: expected 5 fields", 0) == 0);
        CHECK(e.details()[2].rfind("row 3: y_1 must be NA", 0) == 0);
        CHECK(e.details()[3].rfind("row 4: r_1 must be 0 or 1", 0) == 0);
        CHECK(e.details()[4].rfind("row 4: y_1 must be NA", 0) == 0);
    }
    std::string many = head;
    for (int i = 0; i < 30; ++i) many += std::to_string(i) + ",0,0,1.0,0\n";
    try {
        read(many);
        FAIL("expected an input error");
    } catch (const io::InputError& e) {
        CHECK(e.details().size() <= 21);
    }
    CHECK_THROWS_AS(read("patient_id,x_1,r_1,y_1\n"), io::InputError);
    CHECK_THROWS_AS(read("# phenolca kind=cohort version=1 seed=0 config_hash=x\npatient_id,r_1,x_1,y_1\n"),
                    io::InputError);
}

TEST_CASE("draws JSONL round trip")
{
    Rng rng = make_stream(82, 0);
    const CohortData data = random_cohort(5, 1, 1, 1, 1, rng);
    const PriorSpec priors = random_priors(1, 1, rng);
    PosteriorDraws d;
    d.n_chains = 2;
    d.pointwise_loglik.resize(4, 5);
    for (int s = 0; s < 4; ++s) {
        const ParameterState p = random_state(data, priors, rng);
        d.draws.push_back(p);
        d.chain_id.push_back(static_cast<std::size_t>(s / 2));
        d.pointwise_loglik.row(s) = pointwise_log_lik(p, data).transpose();
    }
    std::stringstream buf;
    io::write_draws_jsonl(buf, d, "gibbs", {"draws", 3, "hh"});
    const io::DrawsFile back = io::read_draws_jsonl(buf);
    CHECK(back.backend == "gibbs");
    CHECK(back.header.seed == 3);
    CHECK(back.draws.n_chains == 2);
    CHECK(back.draws.chain_id == d.chain_id);
    CHECK(back.draws.pointwise_loglik == d.pointwise_loglik);
    const ParameterLayout layout = ParameterLayout::of(data, priors);
    for (std::size_t s = 0; s < 4; ++s) CHECK(layout.flatten(back.draws.draws[s]) == layout.flatten(d.draws[s]));

    d.eta_stored = false;
    for (auto& p : d.draws) p.eta.resize(0);
    std::stringstream no_eta;
    io::write_draws_jsonl(no_eta, d, "advi", {"draws", 3, "hh"});
    CHECK(no_eta.str().find("\"eta\"") == std::string::npos);
    CHECK(!io::read_draws_jsonl(no_eta).draws.eta_stored);
}

TEST_CASE("config parsing")
{
    CHECK_THROWS_AS(cli::parse_config(io::Json{{"sede", 1}}), ConfigError);
    CHECK_THROWS_AS(cli::parse_config(io::Json{{"mcmc", {{"n_chain", 2}}}}), ConfigError);
    CHECK_THROWS_AS(cli::parse_config(io::Json{{"mcmc", {{"thin", 0}}}}), std::exception);
    const cli::RunConfig a = cli::parse_config(io::Json{{"seed", 4}, {"threads", 1}});
    const cli::RunConfig b = cli::parse_config(io::Json{{"seed", 4}, {"threads", 8}});
    const cli::RunConfig c = cli::parse_config(io::Json{{"seed", 5}});
    CHECK(a.hash() == b.hash());
    CHECK(a.hash() != c.hash());
    CHECK(a.hash().size() == 16);
}

TEST_CASE("simulate command")
{
    const fs::path dir = scratch_dir("simulate");
    const fs::path cfg = write_config(dir, "cfg.json", small_config(300));
    REQUIRE(invoke({"simulate", "--config", cfg.string(), "--out", (dir / "a").string()}) == cli::kOk);
    REQUIRE(invoke({"simulate", "--config", cfg.string(), "--out", (dir / "b").string(), "--threads", "1"}) == cli::kOk);
    const std::string cohort = slurp(dir / "a" / "cohort.csv");
    const auto ls = lines(cohort);
    CHECK(ls[0].rfind("# phenolca kind=cohort version=1 seed=21 config_hash=", 0) == 0);
    CHECK(ls[1] == "patient_id,x_1,x_2,x_3,r_1,r_2,y_1,y_2,w_1,w_2,p_1,p_2");
    CHECK(ls.size() == 302);
    CHECK(cohort == slurp(dir / "b" / "cohort.csv"));
    CHECK(slurp(dir / "a" / "truth.json") == slurp(dir / "b" / "truth.json"));
    const io::Json truth = io::Json::parse(slurp(dir / "a" / "truth.json"));
    CHECK(truth["D"].size() == 300);

    REQUIRE(invoke({"simulate", "--config", cfg.string(), "--seed", "22", "--out", (dir / "c").string()}) == cli::kOk);
    CHECK(cohort != slurp(dir / "c" / "cohort.csv"));

    const fs::path empty = write_config(dir, "empty.json", small_config(0));
    CHECK(invoke({"simulate", "--config", empty.string(), "--out", (dir / "d").string()}) == cli::kInputError);
    CHECK(invoke({"simulate", "--config", cfg.string(), "--out", "/proc/phenolca/none"}) == cli::kInputError);
    CHECK(invoke({"simulate", "--out", (dir / "e").string(), "--bogus"}) == cli::kInputError);
}

TEST_CASE("fit, diagnose and report commands")
{
    const fs::path dir = scratch_dir("pipeline");
    io::Json j = small_config(300);
    const fs::path cfg = write_config(dir, "cfg.json", j);
    REQUIRE(invoke({"simulate", "--config", cfg.string(), "--out", (dir / "sim").string()}) == cli::kOk);
    const std::string cohort = (dir / "sim" / "cohort.csv").string();

    REQUIRE(invoke({"fit", "--config", cfg.string(), "--cohort", cohort, "--out", (dir / "g").string()}) == cli::kOk);
    const io::Json meta = io::Json::parse(slurp(dir / "g" / "meta.json"));
    CHECK(meta["seed"] == 21);
    CHECK(meta.contains("wall_clock_seconds"));
    std::ifstream in(dir / "g" / "draws.jsonl");
    const io::DrawsFile draws = io::read_draws_jsonl(in);
    CHECK(draws.draws.size() == 60);
    CHECK(draws.draws.n_chains == 2);
    CHECK(draws.draws.chain_id.front() == 0);
    CHECK(draws.draws.chain_id.back() == 1);
    CHECK(draws.draws.eta_stored);

    SUBCASE("thread cap does not change any output")
    {
        REQUIRE(invoke({"fit", "--config", cfg.string(), "--cohort", cohort, "--threads", "1", "--out",
                        (dir / "g1").string()}) == cli::kOk);
        CHECK(slurp(dir / "g" / "draws.jsonl") == slurp(dir / "g1" / "draws.jsonl"));
    }
    SUBCASE("report")
    {
        const std::string f = (dir / "g" / "draws.jsonl").string();
        REQUIRE(invoke({"report", f, f, "--out", (dir / "r").string()}) == cli::kOk);
        const auto ls = lines(slurp(dir / "r" / "summary.csv"));
        CHECK(ls[0].rfind("# phenolca kind=summary", 0) == 0);
        CHECK(ls.size() == 3 + 10);
        const std::string cmp = slurp(dir / "r" / "comparison.csv");
        for (const auto& l : lines(cmp))
            if (l.rfind("#", 0) != 0 && l.rfind("quantity", 0) != 0) CHECK(l.back() == '0');
    }
    SUBCASE("diagnose")
    {
        const int code = invoke({"diagnose", (dir / "g" / "draws.jsonl").string(), "--out", (dir / "d").string()});
        CHECK((code == cli::kOk || code == cli::kDiagnosticWarning));
        CHECK(lines(slurp(dir / "d" / "psis.csv")).size() == 2 + 300);
        const io::Json w = io::Json::parse(slurp(dir / "d" / "waic.json"));
        CHECK(w["p_waic"].get<double>() >= 0.0);
        CHECK(lines(slurp(dir / "d" / "rhat.csv")).size() > 2);
    }
    SUBCASE("advi")
    {
        REQUIRE(invoke({"fit", "--backend", "advi", "--config", cfg.string(), "--cohort", cohort, "--out",
                        (dir / "a").string()}) == cli::kOk);
        const auto trace = lines(slurp(dir / "a" / "trace.csv"));
        CHECK(trace[0].rfind("# phenolca kind=trace", 0) == 0);
        const io::Json m = io::Json::parse(slurp(dir / "a" / "meta.json"));
        CHECK(m.contains("stop_reason"));
        std::ifstream ain(dir / "a" / "draws.jsonl");
        CHECK(io::read_draws_jsonl(ain).draws.size() == 50);
    }
    SUBCASE("single draw cannot be diagnosed")
    {
        io::Json one = j;
        one["mcmc"] = {{"n_chains", 1}, {"n_warmup", 4}, {"n_samples", 1}, {"n_anchor", 0}};
        const fs::path c1 = write_config(dir, "one.json", one);
        REQUIRE(invoke({"fit", "--config", c1.string(), "--cohort", cohort, "--out", (dir / "one").string()}) ==
                cli::kOk);
        CHECK(invoke({"diagnose", (dir / "one" / "draws.jsonl").string(), "--out", (dir / "d1").string()}) ==
              cli::kInputError);
    }
    SUBCASE("disabled random effect omits eta")
    {
        io::Json fixed = j;
        fixed["priors"]["eta_lower"] = 0.0;
        fixed["priors"]["eta_upper"] = 0.0;
        const fs::path c2 = write_config(dir, "fixed.json", fixed);
        REQUIRE(invoke({"fit", "--config", c2.string(), "--cohort", cohort, "--out", (dir / "f").string()}) ==
                cli::kOk);
        CHECK(slurp(dir / "f" / "draws.jsonl").find("\"eta\"") == std::string::npos);
    }
    SUBCASE("mismatched draws files")
    {
        io::Json other = j;
        other["simulation"]["n_patients"] = 200;
        const fs::path c3 = write_config(dir, "other.json", other);
        REQUIRE(invoke({"simulate", "--config", c3.string(), "--out", (dir / "sim2").string()}) == cli::kOk);
        REQUIRE(invoke({"fit", "--config", c3.string(), "--cohort", (dir / "sim2" / "cohort.csv").string(), "--out",
                        (dir / "o").string()}) == cli::kOk);
        CHECK(invoke({"diagnose", (dir / "g" / "draws.jsonl").string(), (dir / "o" / "draws.jsonl").string(), "--out",
                      (dir / "dd").string()}) == cli::kInputError);
    }
    SUBCASE("schema violation in the cohort")
    {
        std::string text = slurp(dir / "sim" / "cohort.csv");
        const auto pos = text.find(",NA,");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 4, ",1.5,");
        const fs::path bad = dir / "bad.csv";
        io::write_text_file(bad, text);
        CHECK(invoke({"fit", "--config", cfg.string(), "--cohort", bad.string(), "--out", (dir / "b").string()}) ==
              cli::kInputError);
    }
    SUBCASE("divergence abort")
    {
        io::Json dj = j;
        dj["advi"] = {{"max_iterations", 2000}, {"eval_every", 2}, {"n_mc_elbo", 5}, {"rel_tol", 0.0},
                      {"divergence_window", 1}, {"divergence_guard", 0.0}};
        const fs::path c4 = write_config(dir, "div.json", dj);
        CHECK(invoke({"fit", "--backend", "advi", "--config", c4.string(), "--cohort", cohort, "--out",
                      (dir / "v").string()}) == cli::kDivergence);
        CHECK(fs::exists(dir / "v" / "trace.csv"));
        CHECK(io::Json::parse(slurp(dir / "v" / "meta.json"))["stop_reason"] == "diverged");
    }
}
