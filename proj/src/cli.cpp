#include "mlcoda/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <map>
#include <sstream>

#include "mlcoda/csv.hpp"
#include "mlcoda/diagnostics.hpp"
#include "mlcoda/errors.hpp"
#include "mlcoda/ilr.hpp"
#include "mlcoda/model.hpp"
#include "mlcoda/multilevel.hpp"
#include "mlcoda/simulation.hpp"
#include "mlcoda/substitution.hpp"
#include "mlcoda/version.hpp"

namespace mlcoda::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kDrawsFile = "draws.csv";
constexpr const char* kFitFile = "fit.json";

void add_shared(CLI::App* sub, RunConfig& cfg, bool data_required, bool outcome_required) {
    auto* data = sub->add_option("--data", cfg.data, "Long-format CSV, one row per occasion")
                     ->check(CLI::ExistingFile);
    auto* id = sub->add_option("--id", cfg.id, "Cluster identifier column");
    auto* outcome = sub->add_option("--outcome", cfg.outcome, "Outcome column");
    auto* parts = sub->add_option("--parts", cfg.parts, "Composition columns, comma separated")
                      ->delimiter(',');
    sub->add_option("--covariates", cfg.covariates, "Extra predictor columns, comma separated")
        ->delimiter(',');
    auto* total = sub->add_option("--total", cfg.total, "Sum of the parts, e.g. 1440")
                      ->check(CLI::PositiveNumber);
    sub->add_option("--sbp", cfg.sbp, "Sequential binary partition file (default: pivot SBP)")
        ->check(CLI::ExistingFile);
    if (data_required) {
        data->required();
        id->required();
        parts->required();
        total->required();
    }
    if (outcome_required) outcome->required();
}

void add_common(CLI::App* sub, RunConfig& cfg, bool out_required) {
    sub->add_option("--seed", cfg.seed, "Master random seed");
    auto* out = sub->add_option("--out", cfg.out, "Output directory");
    if (out_required) out->required();
    sub->add_option("--workers", cfg.workers, "Worker threads")->check(CLI::PositiveNumber);
}

void add_sampler(CLI::App* sub, RunConfig& cfg) {
    sub->add_option("--chains", cfg.chains, "Markov chains")->check(CLI::PositiveNumber);
    sub->add_option("--warmup", cfg.warmup, "Warmup iterations per chain")->check(CLI::NonNegativeNumber);
    sub->add_option("--iter", cfg.iterations, "Post-warmup iterations per chain")
        ->check(CLI::PositiveNumber);
    sub->add_option("--adapt-delta", cfg.adapt_delta, "Target acceptance statistic")
        ->check(CLI::Range(0.0, 1.0));
    sub->add_option("--max-depth", cfg.max_depth, "Maximum tree depth")->check(CLI::PositiveNumber);
    sub->add_option("--parameterization", cfg.parameterization, "Cluster effects")
        ->check(CLI::IsMember({"centered", "noncentered"}));
}

void check_conflicts(const RunConfig& cfg) {
    if (cfg.subcommand == "substitute") {
        if (cfg.t_min > cfg.t_max) throw UsageError("--t-min must not exceed --t-max");
        if (cfg.ref == "file" && cfg.ref_file.empty()) {
            throw UsageError("--ref file needs --ref-file");
        }
        if (cfg.ref == "mean" && !cfg.ref_file.empty()) {
            throw UsageError("--ref-file conflicts with --ref mean");
        }
    }
    if (cfg.subcommand == "fit") {
        if (static_cast<long>(cfg.chains) * cfg.iterations < static_cast<long>(kMinSummaryDraws)) {
            throw UsageError("--chains x --iter must give at least " + std::to_string(kMinSummaryDraws) +
                             " draws");
        }
        if (!(cfg.adapt_delta > 0.0 && cfg.adapt_delta < 1.0)) {
            throw UsageError("--adapt-delta must lie strictly between 0 and 1");
        }
    }
    for (const auto& c : cfg.covariates) {
        if (std::find(cfg.parts.begin(), cfg.parts.end(), c) != cfg.parts.end()) {
            throw UsageError("column '" + c + "' is both a part and a covariate");
        }
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write " + path.string());
    f << text;
    if (!f) throw Error("failed writing " + path.string());
}

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void write_manifest(const RunConfig& cfg, const fs::path& dir, const std::vector<std::string>& outputs,
                    const json& extra = json::object()) {
    json m;
    m["tool"] = "mlcoda";
    m["version"] = kVersion;
    m["subcommand"] = cfg.subcommand;
    m["seed"] = cfg.seed;
    m["config_hash"] = config_hash(cfg);
    m["config"] = json::parse(config_json(cfg));
    m["outputs"] = outputs;
    for (const auto& [k, v] : extra.items()) m[k] = v;
    write_text(dir / (cfg.subcommand + ".manifest.json"), m.dump(2) + "\n");
}

struct Loaded {
    IngestResult ingest;
    OrthonormalBasis basis;
    csv::Table records;
};

OrthonormalBasis basis_for(const RunConfig& cfg) {
    const std::size_t d = cfg.parts.size();
    if (cfg.sbp.empty()) return build_basis(default_sbp(d, cfg.parts));
    const Sbp sbp = read_sbp(cfg.sbp);
    if (sbp.parts() != d) {
        throw DataError("SBP has " + std::to_string(sbp.parts()) + " rows but " + std::to_string(d) +
                        " parts were given");
    }
    const Sbp fallback = default_sbp(d);
    if (sbp.part_names() != cfg.parts && sbp.part_names() != fallback.part_names()) {
        throw DataError("SBP part names do not match --parts");
    }
    return build_basis(validate_sbp(sbp.matrix(), cfg.parts));
}

Loaded load_data(const RunConfig& cfg, std::ostream& err) {
    Loaded l;
    l.records = csv::read(cfg.data);
    l.ingest = ingest(l.records, Schema{cfg.id, cfg.parts, cfg.outcome, cfg.covariates}, cfg.total);
    for (const auto& msg : l.ingest.report.messages) err << msg << "\n";
    if (l.ingest.report.dropped() > 0) {
        err << l.ingest.report.dropped() << " of " << l.ingest.report.rows_read << " rows dropped\n";
    }
    l.basis = basis_for(cfg);
    return l;
}

std::vector<std::string> numbered(const std::string& prefix, std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t k = 1; k <= n; ++k) out.push_back(prefix + std::to_string(k));
    return out;
}

int do_transform(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const Loaded l = load_data(cfg, err);
    const DecomposedCoords split = between_within_split(l.ingest.table, l.basis);
    const fs::path dir(cfg.out);
    fs::create_directories(dir);

    std::ostringstream text;
    std::vector<std::string> header = l.records.header;
    const std::size_t k = l.basis.dims();
    for (const auto& prefix : {"z", "zb", "zw"}) {
        for (const auto& name : numbered(prefix, k)) header.push_back(name);
    }
    csv::write_row(text, header);
    const auto& rows = l.ingest.table.rows;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::vector<std::string> cells = l.records.rows[l.ingest.source_rows[r]];
        const auto rr = static_cast<Eigen::Index>(r);
        const auto j = static_cast<Eigen::Index>(rows[r].cluster);
        for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(k); ++c) cells.push_back(csv::format(split.total(rr, c)));
        for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(k); ++c) cells.push_back(csv::format(split.between(j, c)));
        for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(k); ++c) cells.push_back(csv::format(split.within(rr, c)));
        csv::write_row(text, cells);
    }
    write_text(dir / "coordinates.csv", text.str());
    write_manifest(cfg, dir, {"coordinates.csv"});
    out << "wrote " << rows.size() << " rows to " << (dir / "coordinates.csv").string() << "\n";
    return kOk;
}

json sbp_json(const OrthonormalBasis& basis) {
    json rows = json::array();
    for (Eigen::Index d = 0; d < basis.contrast.rows(); ++d) {
        json row = json::array();
        for (Eigen::Index k = 0; k < basis.contrast.cols(); ++k) {
            const double v = basis.contrast(d, k);
            row.push_back(v > 0.0 ? 1 : (v < 0.0 ? -1 : 0));
        }
        rows.push_back(row);
    }
    return rows;
}

json optional_number(const std::optional<double>& v) {
    return v ? json(*v) : json(nullptr);
}

json diagnostics_json(const DiagnosticsReport& report) {
    json params = json::array();
    for (const auto& p : report.parameters) {
        params.push_back({{"parameter", p.name},
                          {"rhat", optional_number(p.rhat)},
                          {"ess_bulk", optional_number(p.ess_bulk)},
                          {"ess_tail", optional_number(p.ess_tail)},
                          {"sensitivity", p.sensitivity.index},
                          {"informative_prior", p.sensitivity.informative},
                          {"sensitivity_reliable", p.sensitivity.reliable}});
    }
    return {{"divergences", report.divergences},
            {"draws", report.draws},
            {"converged", report.converged()},
            {"breaches", report.breaches()},
            {"parameters", params}};
}

void write_draws_csv(std::ostream& text, const PosteriorDraws& draws) {
    csv::write_row(text, {"chain", "iteration", "parameter", "value"});
    for (std::size_t c = 0; c < draws.chains; ++c) {
        for (std::size_t i = 0; i < draws.iterations; ++i) {
            const auto row = static_cast<Eigen::Index>(c * draws.iterations + i);
            const std::string chain = std::to_string(c + 1);
            const std::string iter = std::to_string(i + 1);
            for (std::size_t p = 0; p < draws.parameters(); ++p) {
                text << chain << ',' << iter << ',' << csv::escape(draws.names[p]) << ','
                     << csv::format(draws.values(row, static_cast<Eigen::Index>(p))) << '\n';
            }
            text << chain << ',' << iter << ",lprior__," << csv::format(draws.log_prior(row)) << '\n';
            text << chain << ',' << iter << ",divergent__," << (draws.divergent[static_cast<std::size_t>(row)] ? 1 : 0)
                 << '\n';
        }
    }
}

void print_diagnostics(std::ostream& out, const DiagnosticsReport& report) {
    auto cell = [](const std::optional<double>& v, int precision) {
        if (!v) return std::string("NA");
        std::ostringstream s;
        s << std::fixed << std::setprecision(precision) << *v;
        return s.str();
    };
    out << std::left << std::setw(24) << "parameter" << std::right << std::setw(9) << "rhat"
        << std::setw(10) << "ess_bulk" << std::setw(10) << "ess_tail" << std::setw(13) << "sensitivity"
        << "\n";
    for (const auto& p : report.parameters) {
        std::string flag;
        if (p.sensitivity.informative) flag += " informative-prior";
        if (!p.sensitivity.reliable) flag += " sensitivity-unreliable";
        out << std::left << std::setw(24) << p.name << std::right << std::setw(9) << cell(p.rhat, 3)
            << std::setw(10) << cell(p.ess_bulk, 0) << std::setw(10) << cell(p.ess_tail, 0)
            << std::setw(13) << cell(p.sensitivity.index, 3) << flag << "\n";
    }
    out << "divergent transitions: " << report.divergences << " of " << report.draws << "\n";
}

int do_fit(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const Loaded l = load_data(cfg, err);
    const LongTable& table = l.ingest.table;
    const DecomposedCoords split = between_within_split(table, l.basis);
    const ModelSpec spec = make_spec(table, l.basis);
    const Design design = build_design(split, table, spec);
    const PriorSpec priors = default_priors(design.y);

    SamplerConfig sc;
    sc.chains = cfg.chains;
    sc.warmup = cfg.warmup;
    sc.iterations = cfg.iterations;
    sc.seed = cfg.seed;
    sc.adapt_target = cfg.adapt_delta;
    sc.max_depth = cfg.max_depth;
    sc.parameterization =
        cfg.parameterization == "centered" ? Parameterization::centered : Parameterization::noncentered;
    sc.workers = cfg.workers;
    const PosteriorDraws draws = fit(spec, design, priors, sc);
    const DiagnosticsReport report = diagnose(draws, cfg.workers);
    const ReferenceComposition ref = sample_reference(table, l.basis);

    const fs::path dir(cfg.out);
    fs::create_directories(dir);
    std::ostringstream text;
    write_draws_csv(text, draws);
    write_text(dir / kDrawsFile, text.str());

    json summary = json::array();
    for (std::size_t p = 0; p < draws.parameters(); ++p) {
        const Summary s = summarize(draws.values.col(static_cast<Eigen::Index>(p)));
        summary.push_back({{"parameter", draws.names[p]},
                           {"mean", s.mean},
                           {"median", s.median},
                           {"ci_low", s.ci_low},
                           {"ci_high", s.ci_high},
                           {"significant", s.significant}});
    }
    json fit_json;
    fit_json["parts"] = l.basis.part_names;
    fit_json["total"] = table.total;
    fit_json["sbp"] = sbp_json(l.basis);
    fit_json["outcome"] = table.outcome_name;
    fit_json["covariates"] = table.covariate_names;
    fit_json["rows"] = table.rows.size();
    fit_json["clusters"] = table.clusters();
    fit_json["parameters"] = draws.names;
    fit_json["chains"] = draws.chains;
    fit_json["iterations"] = draws.iterations;
    fit_json["step_sizes"] = draws.step_sizes;
    fit_json["reference"] = std::vector<double>(ref.x0.parts().begin(), ref.x0.parts().end());
    fit_json["priors"] = {{"intercept", priors.intercept.describe()},
                          {"coefficients", priors.coefficients.describe()},
                          {"sd_intercept", priors.sd_intercept.describe()},
                          {"sd_residual", priors.sd_residual.describe()}};
    fit_json["summary"] = summary;
    fit_json["diagnostics"] = diagnostics_json(report);
    fit_json["config"] = json::parse(config_json(cfg));
    write_text(dir / kFitFile, fit_json.dump(2) + "\n");
    write_manifest(cfg, dir, {kDrawsFile, kFitFile});

    print_diagnostics(out, report);
    for (const auto& b : report.breaches()) err << "warning: " << b << "\n";
    if (report.divergences > 0) {
        err << "warning: " << report.divergences
            << " divergent transitions; consider a higher --adapt-delta or --parameterization centered\n";
    }
    return kOk;
}

struct FitArtifacts {
    PosteriorDraws draws;
    OrthonormalBasis basis;
    Composition reference;
};

FitArtifacts load_fit(const fs::path& dir) {
    std::ifstream f(dir / kFitFile);
    if (!f) throw UsageError("cannot read " + (dir / kFitFile).string());
    json j;
    try {
        f >> j;
        const auto parts = j.at("parts").get<std::vector<std::string>>();
        const auto sbp_rows = j.at("sbp").get<std::vector<std::vector<int>>>();
        Eigen::MatrixXi sbp(static_cast<Eigen::Index>(sbp_rows.size()),
                            static_cast<Eigen::Index>(parts.size() - 1));
        for (std::size_t d = 0; d < sbp_rows.size(); ++d) {
            if (sbp_rows[d].size() != parts.size() - 1) throw DataError("fit.json: malformed sbp");
            for (std::size_t k = 0; k + 1 < parts.size(); ++k) {
                sbp(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k)) = sbp_rows[d][k];
            }
        }
        const double total = j.at("total").get<double>();
        FitArtifacts a{{}, build_basis(validate_sbp(sbp, parts)),
                       Composition(j.at("reference").get<std::vector<double>>(), total)};
        auto& d = a.draws;
        d.names = j.at("parameters").get<std::vector<std::string>>();
        d.chains = j.at("chains").get<std::size_t>();
        d.iterations = j.at("iterations").get<std::size_t>();
        d.parts = parts.size();
        d.covariates = j.at("covariates").size();
        d.step_sizes = j.at("step_sizes").get<std::vector<double>>();

        const csv::Table t = csv::read(dir / kDrawsFile);
        std::map<std::string, Eigen::Index> index;
        for (std::size_t p = 0; p < d.names.size(); ++p) index[d.names[p]] = static_cast<Eigen::Index>(p);
        const auto n = static_cast<Eigen::Index>(d.chains * d.iterations);
        d.values = Eigen::MatrixXd::Constant(n, static_cast<Eigen::Index>(d.names.size()), std::nan(""));
        d.log_prior = Eigen::VectorXd::Zero(n);
        d.divergent.assign(static_cast<std::size_t>(n), 0);
        for (const auto& row : t.rows) {
            if (row.size() != 4) throw DataError("draws.csv: expected 4 columns");
            const long chain = std::stol(row[0]);
            const long iter = std::stol(row[1]);
            if (chain < 1 || iter < 1 || chain > static_cast<long>(d.chains) ||
                iter > static_cast<long>(d.iterations)) {
                throw DataError("draws.csv: chain or iteration out of range");
            }
            const Eigen::Index r = (chain - 1) * static_cast<long>(d.iterations) + (iter - 1);
            const auto v = csv::to_number(row[3]);
            if (!v) throw DataError("draws.csv: missing value");
            if (row[2] == "lprior__") {
                d.log_prior(r) = *v;
            } else if (row[2] == "divergent__") {
                d.divergent[static_cast<std::size_t>(r)] = *v != 0.0;
            } else {
                auto it = index.find(row[2]);
                if (it == index.end()) throw DataError("draws.csv: unknown parameter " + row[2]);
                d.values(r, it->second) = *v;
            }
        }
        if (!d.values.allFinite()) throw DataError("draws.csv is incomplete");
        return a;
    } catch (const json::exception& e) {
        throw DataError(std::string("fit.json is malformed: ") + e.what());
    } catch (const std::invalid_argument&) {
        throw DataError("draws.csv has a non-numeric chain or iteration");
    }
}

Composition read_reference(const RunConfig& cfg, const OrthonormalBasis& basis, double total) {
    const csv::Table t = csv::read(cfg.ref_file);
    if (t.rows.size() != 1) throw DataError("reference file must hold exactly one data row");
    std::vector<double> parts;
    for (const auto& name : basis.part_names) {
        const auto col = t.find(name);
        if (!col) throw DataError("reference file lacks part column '" + name + "'");
        const auto v = csv::to_number(t.rows[0].at(*col));
        if (!v) throw DataError("reference part '" + name + "' is missing");
        parts.push_back(*v);
    }
    return Composition(std::move(parts), total);
}

int do_substitute(const RunConfig& cfg, std::ostream& out, std::ostream&) {
    const FitArtifacts a = load_fit(cfg.fit_dir);
    const ReferenceComposition ref =
        cfg.ref == "file"
            ? user_reference(read_reference(cfg, a.basis, a.reference.total()), a.basis)
            : ReferenceComposition{a.reference, ilr(a.reference, a.basis),
                                   ReferenceComposition::Source::sample_mean};
    std::vector<Level> levels;
    if (cfg.level != "within") levels.push_back(Level::between);
    if (cfg.level != "between") levels.push_back(Level::within);
    const SubstitutionGrid grid = make_grid(a.basis.parts(), cfg.t_min, cfg.t_max, levels);
    DeltaOptions opts;
    opts.mode = cfg.within_mode == "multiplicative" ? WithinMode::multiplicative : WithinMode::absolute;
    opts.workers = cfg.workers;
    const SubstitutionResult result = estimate_delta(a.draws, a.basis, grid, ref, opts);

    const fs::path dir(cfg.out);
    fs::create_directories(dir);
    std::ostringstream text;
    write_substitution_csv(text, result);
    write_text(dir / "substitution.csv", text.str());
    write_manifest(cfg, dir, {"substitution.csv"});
    out << "wrote " << result.rows.size() << " substitution rows to "
        << (dir / "substitution.csv").string() << "\n";
    return kOk;
}

int do_diagnose(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const FitArtifacts a = load_fit(cfg.fit_dir);
    const DiagnosticsReport report = diagnose(a.draws, cfg.workers);
    print_diagnostics(out, report);
    if (!cfg.out.empty()) {
        const fs::path dir(cfg.out);
        fs::create_directories(dir);
        write_text(dir / "diagnostics.json", diagnostics_json(report).dump(2) + "\n");
        write_manifest(cfg, dir, {"diagnostics.json"});
    }
    const auto breaches = report.breaches();
    for (const auto& b : breaches) err << "breach: " << b << "\n";
    return breaches.empty() ? kOk : kDiagnostics;
}

int do_simulate(const RunConfig& cfg, std::ostream& out, std::ostream&) {
    sim::StudyConfig study = sim::load_study(cfg.study);
    if (cfg.seed_set) study.seed = cfg.seed;
    if (cfg.workers_set) study.workers = cfg.workers;
    const auto results = sim::run_study(study);

    const fs::path dir(cfg.out);
    fs::create_directories(dir);
    std::ostringstream reps, mets;
    sim::write_replications_csv(reps, results);
    sim::write_metrics_csv(mets, results);
    write_text(dir / "replications.csv", reps.str());
    write_text(dir / "metrics.csv", mets.str());

    json cells = json::array();
    for (const auto& c : results) {
        json entry = {{"cell", c.cell.label()}, {"replications", c.replications.size()}};
        if (c.summary) {
            entry["excluded"] = c.summary->excluded;
            entry["failed"] = c.summary->failed;
            entry["rhat_failures"] = c.summary->rhat_failures;
            entry["divergent"] = c.summary->divergent;
            entry["low_ess"] = c.summary->low_ess;
        } else {
            entry["metrics_error"] = c.metrics_error;
        }
        cells.push_back(entry);
    }
    write_manifest(cfg, dir, {"replications.csv", "metrics.csv"},
                   {{"seed", study.seed}, {"study", json::parse(sim::study_to_json(study))}, {"cells", cells}});
    out << "simulated " << results.size() << " cell(s); outputs in " << dir.string() << "\n";
    return kOk;
}

}  // namespace

RunConfig parse(const std::vector<std::string>& args) {
    RunConfig cfg;
    CLI::App app{"Bayesian multilevel models with compositional predictors", "mlcoda"};
    app.set_config("--config", "", "Read option values from a TOML or INI file");
    app.require_subcommand(1);

    auto* transform = app.add_subcommand("transform", "Write total, between and within ilr coordinates");
    add_shared(transform, cfg, true, false);
    add_common(transform, cfg, true);

    auto* fit_cmd = app.add_subcommand("fit", "Fit the multilevel model and save posterior draws");
    add_shared(fit_cmd, cfg, true, true);
    add_common(fit_cmd, cfg, true);
    add_sampler(fit_cmd, cfg);

    auto* substitute = app.add_subcommand("substitute", "Pairwise reallocation effects from saved draws");
    substitute->add_option("--fit", cfg.fit_dir, "Directory written by `fit`")
        ->required()
        ->check(CLI::ExistingDirectory);
    add_common(substitute, cfg, true);
    substitute->add_option("--level", cfg.level, "between, within or both")
        ->check(CLI::IsMember({"between", "within", "both"}));
    substitute->add_option("--t-min", cfg.t_min, "Smallest reallocation")->check(CLI::NonNegativeNumber);
    substitute->add_option("--t-max", cfg.t_max, "Largest reallocation")->check(CLI::NonNegativeNumber);
    substitute->add_option("--ref", cfg.ref, "Reference composition: sample mean or a file")
        ->check(CLI::IsMember({"mean", "file"}));
    substitute->add_option("--ref-file", cfg.ref_file, "CSV with one row of part values")
        ->check(CLI::ExistingFile);
    substitute->add_option("--within-mode", cfg.within_mode,
                           "absolute moves t units; multiplicative scales by 1 -/+ t/total")
        ->check(CLI::IsMember({"absolute", "multiplicative"}));

    auto* simulate = app.add_subcommand("simulate", "Run a simulation study from a JSON description");
    simulate->add_option("--study", cfg.study, "Study config file")->required()->check(CLI::ExistingFile);
    add_common(simulate, cfg, true);

    auto* diag = app.add_subcommand("diagnose", "Convergence and prior-sensitivity report for a fit");
    diag->add_option("--fit", cfg.fit_dir, "Directory written by `fit`")
        ->required()
        ->check(CLI::ExistingDirectory);
    add_common(diag, cfg, false);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            std::ostringstream o, ignored;
            app.exit(e, o, ignored);
            throw HelpRequested{o.str()};
        }
        throw UsageError(e.what());
    }
    const auto* sub = app.get_subcommands().front();
    cfg.subcommand = sub->get_name();
    cfg.seed_set = sub->count("--seed") > 0;
    cfg.workers_set = sub->count("--workers") > 0;
    check_conflicts(cfg);
    return cfg;
}

std::string config_json(const RunConfig& cfg) {
    json j = {{"subcommand", cfg.subcommand},
              {"data", cfg.data},
              {"id", cfg.id},
              {"outcome", cfg.outcome},
              {"parts", cfg.parts},
              {"covariates", cfg.covariates},
              {"total", cfg.total},
              {"sbp", cfg.sbp},
              {"seed", cfg.seed},
              {"out", cfg.out},
              {"workers", cfg.workers},
              {"chains", cfg.chains},
              {"warmup", cfg.warmup},
              {"iter", cfg.iterations},
              {"adapt_delta", cfg.adapt_delta},
              {"max_depth", cfg.max_depth},
              {"parameterization", cfg.parameterization},
              {"fit", cfg.fit_dir},
              {"level", cfg.level},
              {"t_min", cfg.t_min},
              {"t_max", cfg.t_max},
              {"ref", cfg.ref},
              {"ref_file", cfg.ref_file},
              {"within_mode", cfg.within_mode},
              {"study", cfg.study}};
    return j.dump();
}

std::string config_hash(const RunConfig& cfg) {
    std::string text = config_json(cfg);
    // A study run is also defined by the study file's contents.
    if (!cfg.study.empty()) {
        std::ifstream f(cfg.study, std::ios::binary);
        std::ostringstream s;
        s << f.rdbuf();
        text += s.str();
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
    return buf;
}

int execute(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    if (cfg.subcommand == "transform") return do_transform(cfg, out, err);
    if (cfg.subcommand == "fit") return do_fit(cfg, out, err);
    if (cfg.subcommand == "substitute") return do_substitute(cfg, out, err);
    if (cfg.subcommand == "diagnose") return do_diagnose(cfg, out, err);
    if (cfg.subcommand == "simulate") return do_simulate(cfg, out, err);
    throw UsageError("unknown subcommand '" + cfg.subcommand + "'");
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    try {
        return execute(parse(args), out, err);
    } catch (const HelpRequested& h) {
        out << h.text;
        return kOk;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\nRun with --help for usage.\n";
        return kUsage;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kData;
    } catch (const SamplingError& e) {
        err << "sampling error: " << e.what() << "\n";
        return kSampling;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kFailure;
    }
}

}  // namespace mlcoda::cli
