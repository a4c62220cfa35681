#include "phenolca/cli.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "phenolca/parallel.hpp"

namespace phenolca::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

void prepare_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw io::InputError("cannot create output directory '" + dir.string() + "'");
}

template <class Fn>
std::string render(Fn&& fn)
{
    std::ostringstream os;
    fn(os);
    return os.str();
}

// Runs a command body and maps failures onto the exit-code contract.
template <class Fn>
int guarded(std::ostream& log, Fn&& body)
{
    try {
        return body();
    } catch (const advi::DivergenceError& e) {
        log << "error: " << e.what() << '\n';
        return kDivergence;
    } catch (const io::InputError& e) {
        log << "error: " << e.what() << '\n';
        for (const auto& d : e.details()) log << "  " << d << '\n';
        return kInputError;
    } catch (const gibbs::InitializationError& e) {
        log << "error: " << e.what() << "\n  " << e.payload() << '\n';
        return kInputError;
    } catch (const std::invalid_argument& e) {
        log << "error: " << e.what() << '\n';
        return kInputError;
    } catch (const ModelError& e) {
        log << "error: " << e.what() << '\n';
        return kInputError;
    } catch (const fs::filesystem_error& e) {
        log << "error: " << e.what() << '\n';
        return kInputError;
    } catch (const std::out_of_range& e) {
        log << "error: " << e.what() << '\n';
        return kInputError;
    }
}

io::Header header_for(const RunConfig& config, const std::string& kind)
{
    return {kind, config.seed, config.hash()};
}

io::DrawsFile load_draws(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io::InputError("cannot open draws file '" + path.string() + "'");
    return io::read_draws_jsonl(in);
}

bool same_shape(const ParameterState& a, const ParameterState& b)
{
    auto fam = [](const std::vector<Vector>& x, const std::vector<Vector>& y) {
        if (x.size() != y.size()) return false;
        for (std::size_t c = 0; c < x.size(); ++c)
            if (x[c].size() != y[c].size()) return false;
        return true;
    };
    return a.beta_D.size() == b.beta_D.size() && fam(a.beta_R, b.beta_R) && fam(a.beta_Y, b.beta_Y) &&
           a.tau2.size() == b.tau2.size() && fam(a.beta_W, b.beta_W) && fam(a.beta_P, b.beta_P);
}

void check_draws_shape(const PosteriorDraws& d, const std::string& what)
{
    for (const auto& s : d.draws)
        if (!same_shape(s, d.draws.front())) throw io::InputError(what + ": draws differ in model shape");
}

} // namespace

// ---------------------------------------------------------------------------
// Configuration

io::Json RunConfig::canonical() const
{
    io::Json j;
    j["seed"] = seed;
    j["anchor_biomarker"] = anchor_biomarker;
    j["divergence_multiple"] = divergence_multiple;
    j["advi_draws"] = advi_draws;
    j["export_csv"] = export_csv;
    j["simulation"] = simulation;
    j["priors"] = priors;
    j["mcmc"] = mcmc;
    j["advi"] = advi;
    return j;
}

std::string RunConfig::hash() const { return io::fnv1a_hex(canonical().dump()); }

RunConfig parse_config(const io::Json& doc, const fs::path& base_dir)
{
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& item : doc.items()) {
        static const char* allowed[] = {"seed", "threads", "anchor_biomarker", "divergence_multiple", "export_csv",
                                        "cohort", "simulation", "priors", "mcmc", "advi"};
        bool ok = false;
        for (const char* a : allowed) ok = ok || item.key() == a;
        if (!ok) throw ConfigError("unknown config key '" + item.key() + "'");
    }
    RunConfig c;
    try {
        c.seed = doc.value("seed", std::uint64_t{0});
        c.threads = doc.value("threads", std::size_t{0});
        c.anchor_biomarker = doc.value("anchor_biomarker", kDefaultAnchorBiomarker);
        c.divergence_multiple = doc.value("divergence_multiple", diagnostics::kDivergenceMultiple);
        c.export_csv = doc.value("export_csv", false);
        if (doc.contains("cohort")) {
            c.cohort = doc["cohort"].get<std::string>();
            if (c.cohort.is_relative() && !base_dir.empty()) c.cohort = base_dir / c.cohort;
        }
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("a top-level config value has the wrong type");
    }
    if (doc.contains("simulation")) c.simulation = doc["simulation"];
    if (doc.contains("priors")) c.priors = doc["priors"];
    if (doc.contains("mcmc")) c.mcmc = doc["mcmc"];
    if (doc.contains("advi")) {
        c.advi = doc["advi"];
        c.advi_draws = c.advi.value("n_draws", std::size_t{1000});
    }
    // Validate every section eagerly so mistakes surface before any work.
    io::mcmc_from_json(c.mcmc).validate();
    io::advi_from_json(c.advi).validate();
    if (!c.simulation.is_object()) throw ConfigError("simulation must be a JSON object");
    if (!c.priors.is_object()) throw ConfigError("priors must be a JSON object");
    if (!(c.divergence_multiple > 0.0)) throw ConfigError("divergence_multiple must be positive");
    if (c.advi_draws < 2) throw ConfigError("advi.n_draws must be at least 2");
    return c;
}

RunConfig load_config(const fs::path& path)
{
    const std::string text = io::read_text_file(path);
    io::Json doc;
    try {
        doc = io::Json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return parse_config(doc, path.parent_path());
}

// ---------------------------------------------------------------------------
// Commands

int cmd_simulate(const RunConfig& config, const fs::path& out_dir, std::ostream& log)
{
    return guarded(log, [&] {
        const SimulationConfig sim = io::simulation_from_json(config.simulation, config.seed);
        sim.validate();
        prepare_dir(out_dir);
        const SimulatedCohort cohort = simulate_cohort(sim);
        io::write_text_file(out_dir / "cohort.csv", render([&](std::ostream& os) {
                                io::write_cohort_csv(os, cohort.data, header_for(config, "cohort"));
                            }));
        io::write_text_file(out_dir / "truth.json", io::truth_json(cohort, sim, header_for(config, "truth")).dump(2) + "\n");
        log << "simulated " << sim.n_patients << " patients into " << out_dir.string() << '\n';
        return int(kOk);
    });
}

int cmd_fit(const RunConfig& config, Backend backend, const fs::path& out_dir, std::ostream& log)
{
    return guarded(log, [&] {
        if (config.cohort.empty()) throw io::InputError("no cohort file given (--cohort or \"cohort\" in the config)");
        std::ifstream in(config.cohort, std::ios::binary);
        if (!in) throw io::InputError("cannot open cohort file '" + config.cohort.string() + "'");
        const CohortData data = io::read_cohort_csv(in);
        data.validate();
        const PriorSpec priors = io::priors_from_json(config.priors, data.n_covariates());
        priors.validate(data.n_covariates(), data.n_biomarkers());
        prepare_dir(out_dir);

        const auto start = std::chrono::steady_clock::now();
        io::Json meta;
        meta["format"] = "phenolca";
        meta["kind"] = "meta";
        meta["version"] = io::kFormatVersion;
        meta["seed"] = config.seed;
        meta["config_hash"] = config.hash();
        meta["backend"] = backend == Backend::gibbs ? "gibbs" : "advi";
        meta["config"] = config.canonical();
        auto finish_meta = [&]() {
            meta["wall_clock_seconds"] =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            io::write_text_file(out_dir / "meta.json", meta.dump(2) + "\n");
        };

        PosteriorDraws draws;
        if (backend == Backend::gibbs) {
            gibbs::McmcConfig mc = io::mcmc_from_json(config.mcmc);
            mc.seed = config.seed;
            draws = gibbs::run_chains(mc, priors, data);
            meta["stop_reason"] = "completed";
            io::Json acc = io::Json::array();
            for (const auto& a : draws.acceptance) {
                io::Json r;
                r["chain"] = a.chain;
                r["block"] = a.block;
                r["rate"] = a.rate();
                acc.push_back(r);
            }
            meta["acceptance"] = acc;
        } else {
            advi::AdviConfig ac = io::advi_from_json(config.advi);
            ac.seed = config.seed;
            const io::Header trace_header = header_for(config, "trace");
            advi::FitResult result;
            try {
                result = advi::fit(ac, priors, data);
            } catch (const advi::DivergenceError& e) {
                io::write_text_file(out_dir / "trace.csv", render([&](std::ostream& os) {
                                        io::write_trace_csv(os, e.partial().trace, trace_header);
                                    }));
                meta["stop_reason"] = "diverged";
                meta["iterations"] = e.partial().iterations;
                finish_meta();
                throw;
            }
            io::write_text_file(out_dir / "trace.csv", render([&](std::ostream& os) {
                                    io::write_trace_csv(os, result.trace, trace_header);
                                }));
            meta["stop_reason"] = advi::to_string(result.trace.stop_reason);
            meta["iterations"] = result.iterations;
            meta["final_elbo"] = result.trace.elbo.empty() ? 0.0 : result.trace.elbo.back();
            Rng rng = make_stream(config.seed, 1);
            draws = advi::sample_posterior(result.state, priors, data, config.advi_draws, rng);
        }

        const std::string backend_name = backend == Backend::gibbs ? "gibbs" : "advi";
        io::write_text_file(out_dir / "draws.jsonl", render([&](std::ostream& os) {
                                io::write_draws_jsonl(os, draws, backend_name, header_for(config, "draws"));
                            }));
        if (config.export_csv)
            io::write_text_file(out_dir / "draws.csv", render([&](std::ostream& os) {
                                    io::write_draws_csv(os, draws, header_for(config, "draws_csv"));
                                }));
        meta["n_draws"] = draws.size();
        finish_meta();
        log << backend_name << " fit wrote " << draws.size() << " draws to " << out_dir.string() << '\n';
        return int(kOk);
    });
}

int cmd_diagnose(const std::vector<fs::path>& files, const fs::path& out_dir, std::ostream& log)
{
    return guarded(log, [&] {
        if (files.empty()) throw io::InputError("no draws file given");
        io::DrawsFile pooled = load_draws(files.front());
        for (std::size_t f = 1; f < files.size(); ++f) {
            io::DrawsFile more = load_draws(files[f]);
            auto& p = pooled.draws;
            if (!more.draws.draws.empty() && !p.draws.empty() && !same_shape(more.draws.draws.front(), p.draws.front()))
                throw io::InputError("draws files describe different models");
            if (more.draws.pointwise_loglik.cols() != p.pointwise_loglik.cols())
                throw io::InputError("draws files cover different numbers of patients");
            const std::size_t offset = p.n_chains;
            const auto rows = p.pointwise_loglik.rows();
            RowMatrix ll(rows + more.draws.pointwise_loglik.rows(), p.pointwise_loglik.cols());
            ll << p.pointwise_loglik, more.draws.pointwise_loglik;
            p.pointwise_loglik = std::move(ll);
            for (std::size_t s = 0; s < more.draws.size(); ++s) {
                p.draws.push_back(std::move(more.draws.draws[s]));
                p.chain_id.push_back(offset + more.draws.chain_id[s]);
            }
            p.n_chains += more.draws.n_chains;
        }
        const PosteriorDraws& draws = pooled.draws;
        check_draws_shape(draws, files.front().string());
        if (draws.size() < 2) throw io::InputError("diagnostics need at least two draws");
        if (!draws.has_loglik()) throw io::InputError("draws carry no pointwise log-likelihood");
        prepare_dir(out_dir);

        io::Header h = pooled.header;
        const diagnostics::PsisResult psis = diagnostics::psis_loo(draws);
        h.kind = "psis";
        io::write_text_file(out_dir / "psis.csv", render([&](std::ostream& os) { io::write_psis_csv(os, psis, h); }));

        const diagnostics::WaicResult w = diagnostics::waic(draws);
        io::Json wj;
        wj["format"] = "phenolca";
        wj["kind"] = "waic";
        wj["version"] = io::kFormatVersion;
        wj["seed"] = h.seed;
        wj["config_hash"] = h.config_hash;
        wj["elpd_waic"] = w.elpd_waic;
        wj["elpd_waic_se"] = w.elpd_waic_se;
        wj["p_waic"] = w.p_waic;
        wj["lppd"] = w.lppd;
        wj["elpd_loo"] = psis.elpd_loo;
        wj["elpd_loo_se"] = psis.elpd_loo_se;
        wj["p_loo"] = psis.p_loo;
        io::Json buckets;
        for (std::size_t b = 0; b < psis.bucket_counts.size(); ++b)
            buckets[diagnostics::to_string(static_cast<diagnostics::KBucket>(b))] = psis.bucket_counts[b];
        wj["pareto_k_buckets"] = buckets;
        io::write_text_file(out_dir / "waic.json", wj.dump(2) + "\n");

        std::vector<io::NamedConvergence> rows;
        const auto& f = draws.draws.front();
        const ParameterLayout layout(static_cast<std::size_t>(f.beta_D.size()) - 1, f.beta_R.size(),
                                     f.beta_W.size(), f.beta_P.size(), 0, false);
        std::vector<Vector> flat;
        for (const auto& d : draws.draws) {
            ParameterState g = d;
            g.eta.resize(0);
            flat.push_back(layout.flatten(g));
        }
        for (std::size_t c = 0; c < layout.global_size(); ++c) {
            std::vector<std::vector<double>> chains(draws.n_chains);
            for (std::size_t s = 0; s < flat.size(); ++s)
                chains[draws.chain_id[s]].push_back(flat[s][static_cast<Eigen::Index>(c)]);
            io::NamedConvergence row{layout.name(c), {}};
            try {
                row.result = diagnostics::rhat_ess(chains);
            } catch (const std::exception&) {
                row.result.ess_bulk = std::numeric_limits<double>::quiet_NaN();
            }
            rows.push_back(row);
        }
        h.kind = "rhat";
        io::write_text_file(out_dir / "rhat.csv", render([&](std::ostream& os) { io::write_rhat_csv(os, rows, h); }));

        for (const auto& note : psis.notes) log << "note: " << note << '\n';
        const std::size_t high = psis.n_above(diagnostics::kParetoWarning);
        log << "elpd_loo " << io::format_double(psis.elpd_loo) << " (se " << io::format_double(psis.elpd_loo_se)
            << "), " << high << " observations with pareto_k > " << diagnostics::kParetoWarning << '\n';
        return int(high > 0 ? kDiagnosticWarning : kOk);
    });
}

int cmd_report(const fs::path& draws_a, const std::optional<fs::path>& draws_b, const fs::path& out_dir,
               std::size_t anchor, double multiple, std::ostream& log)
{
    return guarded(log, [&] {
        const io::DrawsFile a = load_draws(draws_a);
        check_draws_shape(a.draws, draws_a.string());
        if (a.draws.size() < 1) throw io::InputError("report needs at least one draw");
        const diagnostics::SummaryReport sa = diagnostics::summarize(a.draws, anchor);
        std::optional<io::DrawsFile> b;
        if (draws_b) {
            b = load_draws(*draws_b);
            check_draws_shape(b->draws, draws_b->string());
            if (b->draws.size() < 1) throw io::InputError("report needs at least one draw");
            if (!same_shape(a.draws.draws.front(), b->draws.draws.front()))
                throw io::InputError("draws files describe different models");
        }
        prepare_dir(out_dir);
        io::Header h = a.header;
        h.kind = "summary";
        io::write_text_file(out_dir / "summary.csv",
                            render([&](std::ostream& os) { io::write_summary_csv(os, sa, h); }));
        h.kind = "parameters";
        io::write_text_file(out_dir / "parameters.csv", render([&](std::ostream& os) {
                                io::write_summary_csv(os, diagnostics::summarize_parameters(a.draws), h);
                            }));
        if (!b) {
            log << "summary of " << sa.n_draws << " draws written to " << out_dir.string() << '\n';
            return int(kOk);
        }
        const diagnostics::SummaryReport sb = diagnostics::summarize(b->draws, anchor);
        io::Header hb = b->header;
        hb.kind = "summary";
        io::write_text_file(out_dir / "summary_b.csv",
                            render([&](std::ostream& os) { io::write_summary_csv(os, sb, hb); }));
        const diagnostics::ComparisonTable table = diagnostics::compare(sa, sb, multiple);
        h.kind = "comparison";
        h.config_hash = io::fnv1a_hex(a.header.config_hash + "|" + b->header.config_hash);
        io::write_text_file(out_dir / "comparison.csv",
                            render([&](std::ostream& os) { io::write_comparison_csv(os, table, h); }));
        for (const auto& r : table.rows)
            if (r.divergent)
                log << "divergent: " << r.name << " " << io::format_double(r.a.mean) << " vs "
                    << io::format_double(r.b.mean) << '\n';
        log << table.n_divergent() << " of " << table.rows.size() << " rows flagged\n";
        return int(kOk);
    });
}

// ---------------------------------------------------------------------------
// Entry point

int run(int argc, char** argv)
{
    CLI::App app{"Bayesian latent-class phenotyping"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    std::string config_path, out_dir, backend_name = "gibbs", cohort;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::vector<std::string> draws_files;
    std::size_t anchor = kDefaultAnchorBiomarker;
    std::optional<double> multiple;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "Seed, overriding the config");
        sub->add_option("--threads", threads, "Worker thread cap (0 = all cores)");
        sub->add_option("--out", out_dir, "Output directory")->required();
    };
    CLI::App* simulate = app.add_subcommand("simulate", "Generate a synthetic cohort");
    add_common(simulate);
    CLI::App* fit = app.add_subcommand("fit", "Fit the model to a cohort");
    add_common(fit);
    fit->add_option("--backend", backend_name, "Inference backend")->check(CLI::IsMember({"gibbs", "advi"}));
    fit->add_option("--cohort", cohort, "Cohort CSV, overriding the config");
    CLI::App* diagnose = app.add_subcommand("diagnose", "PSIS-LOO, WAIC and R-hat for draws files");
    add_common(diagnose);
    diagnose->add_option("draws", draws_files, "draws.jsonl files")->required()->check(CLI::ExistingFile);
    CLI::App* report = app.add_subcommand("report", "Posterior summaries and backend comparison");
    add_common(report);
    report->add_option("draws", draws_files, "One or two draws.jsonl files")
        ->required()
        ->expected(1, 2)
        ->check(CLI::ExistingFile);
    report->add_option("--anchor", anchor, "Biomarker whose shift fixes the class labels (0-based)");
    report->add_option("--multiple", multiple, "Divergence multiple of pooled interval half-widths");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? int(kOk) : int(kInputError);
    }

    RunConfig config;
    try {
        if (!config_path.empty()) config = load_config(config_path);
        else config = parse_config(io::Json::object());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInputError;
    }
    if (seed) config.seed = *seed;
    if (threads) config.threads = *threads;
    if (!cohort.empty()) config.cohort = cohort;
    const parallel::ThreadLimit limit(config.threads);

    if (*simulate) return cmd_simulate(config, out_dir, std::cerr);
    if (*fit) return cmd_fit(config, backend_name == "advi" ? Backend::advi : Backend::gibbs, out_dir, std::cerr);
    std::vector<fs::path> paths(draws_files.begin(), draws_files.end());
    if (*diagnose) return cmd_diagnose(paths, out_dir, std::cerr);
    std::optional<fs::path> second;
    if (paths.size() > 1) second = paths[1];
    return cmd_report(paths[0], second, out_dir, anchor, multiple.value_or(config.divergence_multiple), std::cerr);
}

} // namespace phenolca::cli
