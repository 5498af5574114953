#include "mlcoda/simulation.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "mlcoda/csv.hpp"
#include "mlcoda/diagnostics.hpp"
#include "mlcoda/errors.hpp"
#include "mlcoda/parallel.hpp"
#include "mlcoda/substitution.hpp"

namespace mlcoda::sim {

namespace {

using nlohmann::json;

bool is_identity(const PartGroups& groups) {
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (groups[g].size() != 1 || groups[g][0] != g) return false;
    }
    return true;
}

OrthonormalBasis base_basis(const DGPParams& p) {
    return build_basis(validate_sbp(p.base_sbp, p.base_parts));
}

Eigen::MatrixXd cholesky_factor(const Eigen::MatrixXd& sigma, const char* what) {
    if (sigma.rows() != sigma.cols() || !sigma.isApprox(sigma.transpose())) {
        throw DataError(std::string(what) + " must be a symmetric square matrix");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success) {
        throw DataError(std::string(what) + " is not positive definite");
    }
    return llt.matrixL();
}

Eigen::VectorXd standard_normal(Eigen::Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    Eigen::VectorXd out(n);
    for (Eigen::Index i = 0; i < n; ++i) out(i) = normal(rng);
    return out;
}

std::string delta_name(Level level, const std::string& from, const std::string& to) {
    return "delta_" + to_string(level) + "_" + from + "_" + to;
}

/// Model parameters (excluding cluster effects) in draw order.
std::vector<std::size_t> population_indices(std::size_t parts) {
    std::vector<std::size_t> idx(2 * (parts - 1) + 3);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
}

Eigen::VectorXd truth_vector(const Truth& t) {
    Eigen::VectorXd v(t.beta.size() + 3);
    v(0) = t.gamma0;
    v.segment(1, t.beta.size()) = t.beta;
    v(t.beta.size() + 1) = t.sigma_u;
    v(t.beta.size() + 2) = t.sigma_e;
    return v;
}

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) {
        throw UsageError("study config: '" + where + "' must be an object");
    }
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : j.items()) {
        if (!ok.contains(key)) {
            throw UsageError("study config: unknown key '" + key + "' in " + where);
        }
    }
}

template <typename T>
std::vector<T> vector_of(const json& j, const std::string& key) {
    if (!j.is_array() || j.empty()) {
        throw UsageError("study config: '" + key + "' must be a non-empty array");
    }
    return j.get<std::vector<T>>();
}

}  // namespace

void DGPParams::validate() const {
    const auto b = static_cast<Eigen::Index>(base_parts.size());
    if (b < 2 || base_sbp.rows() != b || base_sbp.cols() != b - 1) {
        throw DataError("base SBP must be D x (D-1) for the base parts");
    }
    if (mu_b.size() != b - 1 || mu_w.size() != b - 1 || sigma_b.rows() != b - 1 ||
        sigma_w.rows() != b - 1) {
        throw DataError("generative means and covariances must have D-1 base dimensions");
    }
    cholesky_factor(sigma_b, "between covariance");
    cholesky_factor(sigma_w, "within covariance");
    check_partition(groups, base_parts.size());
    if (part_names.size() != groups.size()) {
        throw DataError("one name is needed per analysed part");
    }
    if (beta.size() != static_cast<Eigen::Index>(2 * (groups.size() - 1))) {
        throw DataError("beta must have 2(D-1) = " + std::to_string(2 * (groups.size() - 1)) +
                        " entries");
    }
    if (!(sigma_u >= 0.0) || !(sigma_e >= 0.0) || !(total > 0.0)) {
        throw DataError("standard deviations must be non-negative and the total positive");
    }
}

DGPParams default_dgp(std::size_t parts) {
    if (parts < 3 || parts > 5) {
        throw UsageError("default generator supports D = 3, 4 or 5");
    }
    DGPParams p;
    p.base_parts = {"Sleep", "Awake", "MVPA", "LPA", "SB"};
    p.base_sbp.resize(5, 4);
    p.base_sbp << 1, 1, 0, 0,
                  1, -1, 0, 0,
                  -1, 0, 1, 0,
                  -1, 0, -1, 1,
                  -1, 0, -1, -1;
    p.total = 1440.0;
    const Composition centre({450.0, 50.0, 40.0, 300.0, 600.0}, p.total);
    p.mu_b = ilr(centre, base_basis(p));
    p.mu_w = Eigen::VectorXd::Zero(4);
    p.sigma_b = Eigen::Vector4d(0.35, 0.45, 0.6, 0.4).array().square().matrix().asDiagonal();
    p.sigma_w = Eigen::Vector4d(0.3, 0.4, 0.55, 0.35).array().square().matrix().asDiagonal();

    switch (parts) {
        case 5:
            p.groups = {{0}, {1}, {2}, {3}, {4}};
            p.part_names = p.base_parts;
            break;
        case 4:
            p.groups = {{0, 1}, {2}, {3}, {4}};
            p.part_names = {"Sleep", "MVPA", "LPA", "SB"};
            break;
        default:
            p.groups = {{0, 1}, {2, 3}, {4}};
            p.part_names = {"Sleep", "PA", "SB"};
            break;
    }
    const double between[] = {0.3, -0.2, 0.15, -0.1};
    const double within[] = {-0.5, 0.25, -0.2, 0.1};
    const auto k = static_cast<Eigen::Index>(parts - 1);
    p.beta.resize(2 * k);
    for (Eigen::Index i = 0; i < k; ++i) {
        p.beta(i) = between[i];
        p.beta(k + i) = within[i];
    }
    p.gamma0 = 2.0;
    p.sigma_u = 1.0;
    p.sigma_e = 1.0;
    return p;
}

OrthonormalBasis analysis_basis(const DGPParams& params) {
    if (is_identity(params.groups)) {
        return build_basis(validate_sbp(params.base_sbp, params.part_names));
    }
    return build_basis(default_sbp(params.parts(), params.part_names));
}

Dataset generate(const DGPParams& params, std::size_t clusters, std::size_t cluster_size,
                 std::uint64_t seed) {
    params.validate();
    if (clusters < 1 || cluster_size < 1) {
        throw DataError("need at least one cluster of at least one row");
    }
    const OrthonormalBasis base = base_basis(params);
    const Eigen::MatrixXd lb = cholesky_factor(params.sigma_b, "between covariance");
    const Eigen::MatrixXd lw = cholesky_factor(params.sigma_w, "within covariance");
    const Eigen::Index k_base = params.mu_b.size();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;

    Dataset out;
    Truth& truth = out.truth;
    truth.gamma0 = params.gamma0;
    truth.beta = params.beta;
    truth.sigma_u = params.sigma_u;
    truth.sigma_e = params.sigma_e;
    truth.u.resize(static_cast<Eigen::Index>(clusters));
    truth.z_b.resize(static_cast<Eigen::Index>(clusters), k_base);
    truth.z_w.resize(static_cast<Eigen::Index>(clusters * cluster_size), k_base);

    LongTable& table = out.table;
    table.total = params.total;
    table.part_names = params.part_names;
    table.outcome_name = "y";
    const bool identity = is_identity(params.groups);
    for (std::size_t j = 0; j < clusters; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        table.cluster_labels.push_back("c" + std::to_string(j + 1));
        truth.u(jj) = params.sigma_u * normal(rng);
        truth.z_b.row(jj) = (params.mu_b + lb * standard_normal(k_base, rng)).transpose();
        for (std::size_t i = 0; i < cluster_size; ++i) {
            const auto row = static_cast<Eigen::Index>(j * cluster_size + i);
            truth.z_w.row(row) = (params.mu_w + lw * standard_normal(k_base, rng)).transpose();
            const IlrCoords z = (truth.z_b.row(jj) + truth.z_w.row(row)).transpose();
            Composition x = ilr_inverse(z, base, params.total);
            if (!identity) x = collapse(x, params.groups);
            table.rows.push_back(Observation{j, i, std::move(x), 0.0, {}});
        }
    }

    const OrthonormalBasis basis = analysis_basis(params);
    const DecomposedCoords split = between_within_split(table, basis);
    const auto k = static_cast<Eigen::Index>(basis.dims());
    const Eigen::VectorXd beta_b = params.beta.head(k);
    const Eigen::VectorXd beta_w = params.beta.tail(k);
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        auto& obs = table.rows[r];
        const auto j = static_cast<Eigen::Index>(obs.cluster);
        const auto rr = static_cast<Eigen::Index>(r);
        obs.outcome = params.gamma0 + truth.u(j) + split.between.row(j).dot(beta_b) +
                      split.within.row(rr).dot(beta_w) + params.sigma_e * normal(rng);
    }
    return out;
}

void check_partition(const PartGroups& groups, std::size_t parts) {
    std::vector<int> seen(parts, 0);
    for (const auto& g : groups) {
        if (g.empty()) {
            throw DataError("collapse mapping has an empty group");
        }
        for (std::size_t d : g) {
            if (d >= parts) {
                throw DataError("collapse mapping refers to part " + std::to_string(d + 1) +
                                " of " + std::to_string(parts));
            }
            ++seen[d];
        }
    }
    for (std::size_t d = 0; d < parts; ++d) {
        if (seen[d] != 1) {
            throw DataError("collapse mapping must use part " + std::to_string(d + 1) +
                            " exactly once");
        }
    }
}

Composition collapse(const Composition& x, const PartGroups& groups) {
    check_partition(groups, x.size());
    std::vector<double> parts;
    parts.reserve(groups.size());
    for (const auto& g : groups) {
        double s = 0.0;
        for (std::size_t d : g) s += x[d];
        parts.push_back(s);
    }
    return Composition(std::move(parts), x.total());
}

LongTable collapse(const LongTable& table, const PartGroups& groups,
                   std::vector<std::string> part_names) {
    check_partition(groups, table.parts());
    if (part_names.size() != groups.size()) {
        throw DataError("collapse needs one name per group");
    }
    LongTable out = table;
    out.part_names = std::move(part_names);
    for (auto& row : out.rows) row.parts = collapse(row.parts, groups);
    return out;
}

std::string Cell::label() const {
    return "J" + std::to_string(clusters) + "_I" + std::to_string(cluster_size) + "_D" +
           std::to_string(parts) + "_u" + csv::format(var_u) + "_e" + csv::format(var_e);
}

std::vector<Cell> ConditionGrid::cells() const {
    validate();
    std::vector<Cell> out;
    for (auto j : clusters)
        for (auto i : cluster_sizes)
            for (auto d : parts)
                for (const auto& [u, e] : variances) out.push_back(Cell{j, i, d, u, e});
    return out;
}

void ConditionGrid::validate() const {
    if (clusters.empty() || cluster_sizes.empty() || parts.empty() || variances.empty()) {
        throw UsageError("every grid factor needs at least one level");
    }
    for (auto j : clusters)
        if (j < 2) throw UsageError("cluster counts must be at least 2");
    for (auto i : cluster_sizes)
        if (i < 1) throw UsageError("cluster sizes must be positive");
    for (auto d : parts)
        if (d < 3 || d > 5) throw UsageError("D must be 3, 4 or 5");
    for (const auto& [u, e] : variances)
        if (!(u > 0.0) || !(e > 0.0)) throw UsageError("variances must be positive");
}

ConditionGrid full_grid() {
    ConditionGrid g;
    g.clusters = {30, 50, 360, 1200};
    g.cluster_sizes = {3, 5, 7, 14};
    g.parts = {3, 4, 5};
    g.variances = {{1.0, 1.0}, {1.5, 0.5}, {0.5, 1.5}, {1.0, 0.5}, {1.0, 1.5}};
    return g;
}

Replication run_replication(const Cell& cell, const DGPParams& params, std::size_t index,
                            const RunSettings& settings) {
    Replication rep;
    rep.index = index;
    rep.seed = derive_seed(settings.seed, {settings.cell_index, index});
    try {
        const Dataset data =
            generate(params, cell.clusters, cell.cluster_size, derive_seed(rep.seed, {0}));
        const OrthonormalBasis basis = analysis_basis(params);
        const DecomposedCoords split = between_within_split(data.table, basis);
        const ModelSpec spec = make_spec(data.table, basis);
        const Design design = build_design(split, data.table, spec);
        SamplerConfig cfg = settings.sampler;
        cfg.seed = derive_seed(rep.seed, {1});
        cfg.workers = 1;
        const PosteriorDraws draws = fit(spec, design, default_priors(design.y), cfg);

        const DiagnosticsReport report = diagnose(draws, 1, false);
        rep.max_rhat = report.max_rhat();
        rep.divergences = report.divergences;
        for (const auto& p : report.parameters) {
            if ((p.ess_bulk && *p.ess_bulk <= kEssThreshold) ||
                (p.ess_tail && *p.ess_tail <= kEssThreshold)) {
                rep.low_ess = true;
            }
        }

        const Eigen::VectorXd truth = truth_vector(data.truth);
        for (std::size_t p : population_indices(spec.parts())) {
            const Summary s = summarize(draws.values.col(static_cast<Eigen::Index>(p)));
            rep.estimates.push_back(
                {draws.names[p], truth(static_cast<Eigen::Index>(p)), s.mean, s.ci_low, s.ci_high});
        }

        const ReferenceComposition ref = sample_reference(data.table, basis);
        const LevelCoords base{ref.z_b0, IlrCoords::Zero(ref.z_b0.size())};
        const auto k = static_cast<Eigen::Index>(basis.dims());
        for (Level level : {Level::between, Level::within}) {
            for (std::size_t a = 0; a < spec.parts(); ++a) {
                for (std::size_t b = 0; b < spec.parts(); ++b) {
                    if (a == b) continue;
                    const auto moved = reallocate(ref, basis, a, b, settings.t, level);
                    const LevelCoords after{moved.between, moved.within};
                    const Summary s = summarize(prediction_delta(draws, after, base));
                    const double true_delta =
                        data.truth.beta.head(k).dot(after.between - base.between) +
                        data.truth.beta.tail(k).dot(after.within - base.within);
                    rep.estimates.push_back({delta_name(level, basis.part_names[a], basis.part_names[b]),
                                             true_delta, s.mean, s.ci_low, s.ci_high});
                }
            }
        }
    } catch (const std::exception& e) {
        rep.failed = true;
        rep.error = e.what();
        rep.estimates.clear();
    }
    rep.excluded = rep.failed || rep.max_rhat >= kRhatThreshold;
    return rep;
}

std::vector<Replication> run_condition(const Cell& cell, const DGPParams& params, int n_sim,
                                       const RunSettings& settings) {
    if (n_sim < 1) {
        throw UsageError("n_sim must be at least 1");
    }
    std::vector<Replication> reps(static_cast<std::size_t>(n_sim));
    parallel_for(reps.size(), settings.workers, [&](std::size_t r) {
        reps[r] = run_replication(cell, params, r, settings);
    });
    return reps;
}

MetricsSummary metrics(const std::vector<Replication>& replications) {
    MetricsSummary out;
    out.replications = replications.size();
    std::vector<const Replication*> kept;
    for (const auto& r : replications) {
        if (r.failed) ++out.failed;
        if (!r.failed && r.max_rhat >= kRhatThreshold) ++out.rhat_failures;
        if (r.divergences > 0) ++out.divergent;
        if (r.low_ess) ++out.low_ess;
        if (r.excluded) {
            ++out.excluded;
        } else {
            kept.push_back(&r);
        }
    }
    if (kept.size() < 2) {
        throw DataError("metrics need at least 2 included replications, have " +
                        std::to_string(kept.size()));
    }
    const auto n = static_cast<double>(kept.size());
    const auto& first = kept.front()->estimates;
    for (std::size_t p = 0; p < first.size(); ++p) {
        ParameterMetrics m;
        m.parameter = first[p].parameter;
        m.n = kept.size();
        std::vector<double> err;
        for (const auto* r : kept) {
            const auto& e = r->estimates.at(p);
            if (e.parameter != m.parameter) {
                throw DataError("replications report different parameters");
            }
            err.push_back(e.mean - e.truth);
        }
        double sum = 0.0;
        for (double e : err) sum += e;
        m.bias = sum / n;
        double ss = 0.0;
        for (double e : err) ss += (e - m.bias) * (e - m.bias);
        m.bias_mcse = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
        std::size_t covered = 0, be_covered = 0;
        for (const auto* r : kept) {
            const auto& e = r->estimates[p];
            if (e.ci_low <= e.truth && e.truth <= e.ci_high) ++covered;
            // The bias-eliminated target: truth shifted by the mean error.
            const double centre = e.truth + m.bias;
            if (e.ci_low <= centre && centre <= e.ci_high) ++be_covered;
        }
        m.coverage = static_cast<double>(covered) / n;
        m.coverage_mcse = std::sqrt(m.coverage * (1.0 - m.coverage) / n);
        m.be_coverage = static_cast<double>(be_covered) / n;
        m.be_coverage_mcse = std::sqrt(m.be_coverage * (1.0 - m.be_coverage) / n);
        out.parameters.push_back(m);
    }
    return out;
}

DGPParams StudyConfig::params_for(const Cell& cell) const {
    DGPParams p = default_dgp(cell.parts);
    if (gamma0) p.gamma0 = *gamma0;
    if (total) p.total = *total;
    for (const auto& [d, b] : beta) {
        if (d == cell.parts) p.beta = b;
    }
    p.sigma_u = std::sqrt(cell.var_u);
    p.sigma_e = std::sqrt(cell.var_e);
    p.validate();
    return p;
}

StudyConfig parse_study(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw UsageError(std::string("study config is not valid JSON: ") + e.what());
    }
    reject_unknown(j, {"seed", "n_sim", "workers", "t", "full_scale", "grid", "sampler", "dgp"},
                   "study");
    StudyConfig c;
    try {
        c.seed = j.value("seed", c.seed);
        c.n_sim = j.value("n_sim", c.n_sim);
        c.workers = j.value("workers", c.workers);
        c.t = j.value("t", c.t);
        if (j.value("full_scale", false)) {
            c.grid = full_grid();
            c.n_sim = j.value("n_sim", 2000);
            c.sampler.warmup = 500;
            c.sampler.iterations = 2500;
            c.sampler.chains = 4;
        } else {
            c.sampler.chains = 2;
            c.sampler.warmup = 500;
            c.sampler.iterations = 500;
        }
        if (j.contains("grid")) {
            const json& g = j["grid"];
            reject_unknown(g, {"clusters", "cluster_sizes", "parts", "variances"}, "grid");
            if (g.contains("clusters")) c.grid.clusters = vector_of<std::size_t>(g["clusters"], "clusters");
            if (g.contains("cluster_sizes"))
                c.grid.cluster_sizes = vector_of<std::size_t>(g["cluster_sizes"], "cluster_sizes");
            if (g.contains("parts")) c.grid.parts = vector_of<std::size_t>(g["parts"], "parts");
            if (g.contains("variances")) {
                c.grid.variances.clear();
                for (const auto& v : vector_of<std::vector<double>>(g["variances"], "variances")) {
                    if (v.size() != 2) {
                        throw UsageError("study config: each variance entry is [var_u, var_e]");
                    }
                    c.grid.variances.emplace_back(v[0], v[1]);
                }
            }
        }
        if (j.contains("sampler")) {
            const json& s = j["sampler"];
            reject_unknown(s, {"chains", "warmup", "iterations", "adapt_delta", "max_depth",
                               "parameterization"},
                           "sampler");
            c.sampler.chains = s.value("chains", c.sampler.chains);
            c.sampler.warmup = s.value("warmup", c.sampler.warmup);
            c.sampler.iterations = s.value("iterations", c.sampler.iterations);
            c.sampler.adapt_target = s.value("adapt_delta", c.sampler.adapt_target);
            c.sampler.max_depth = s.value("max_depth", c.sampler.max_depth);
            const auto param = s.value("parameterization", std::string("noncentered"));
            if (param == "centered") {
                c.sampler.parameterization = Parameterization::centered;
            } else if (param != "noncentered") {
                throw UsageError("study config: parameterization must be centered or noncentered");
            }
        }
        if (j.contains("dgp")) {
            const json& d = j["dgp"];
            reject_unknown(d, {"gamma0", "total", "beta"}, "dgp");
            if (d.contains("gamma0")) c.gamma0 = d["gamma0"].get<double>();
            if (d.contains("total")) c.total = d["total"].get<double>();
            if (d.contains("beta")) {
                reject_unknown(d["beta"], {"3", "4", "5"}, "dgp.beta");
                for (const auto& [key, value] : d["beta"].items()) {
                    const auto v = vector_of<double>(value, "beta");
                    c.beta.emplace_back(std::stoul(key),
                                        Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
                }
            }
        }
    } catch (const json::exception& e) {
        throw UsageError(std::string("study config has a value of the wrong type: ") + e.what());
    }
    if (c.n_sim < 1) throw UsageError("n_sim must be at least 1");
    if (c.workers < 1) throw UsageError("workers must be at least 1");
    if (!(c.t > 0.0)) throw UsageError("t must be positive");
    c.grid.validate();
    c.sampler.validate();
    for (const auto& cell : c.grid.cells()) c.params_for(cell);
    return c;
}

StudyConfig load_study(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw UsageError("cannot read study config " + path.string());
    }
    std::ostringstream text;
    text << in.rdbuf();
    return parse_study(text.str());
}

std::string study_to_json(const StudyConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["n_sim"] = c.n_sim;
    j["workers"] = c.workers;
    j["t"] = c.t;
    json variances = json::array();
    for (const auto& [u, e] : c.grid.variances) variances.push_back({u, e});
    j["grid"] = {{"clusters", c.grid.clusters},
                 {"cluster_sizes", c.grid.cluster_sizes},
                 {"parts", c.grid.parts},
                 {"variances", variances}};
    j["sampler"] = {{"chains", c.sampler.chains},
                    {"warmup", c.sampler.warmup},
                    {"iterations", c.sampler.iterations},
                    {"adapt_delta", c.sampler.adapt_target},
                    {"max_depth", c.sampler.max_depth},
                    {"parameterization", c.sampler.parameterization == Parameterization::centered
                                             ? "centered"
                                             : "noncentered"}};
    json dgp = json::object();
    if (c.gamma0) dgp["gamma0"] = *c.gamma0;
    if (c.total) dgp["total"] = *c.total;
    if (!c.beta.empty()) {
        json b = json::object();
        for (const auto& [d, v] : c.beta) b[std::to_string(d)] = std::vector<double>(v.begin(), v.end());
        dgp["beta"] = b;
    }
    j["dgp"] = dgp;
    return j.dump(2);
}

std::vector<CellResult> run_study(const StudyConfig& config) {
    std::vector<CellResult> out;
    const auto cells = config.grid.cells();
    for (std::size_t c = 0; c < cells.size(); ++c) {
        RunSettings settings{config.sampler, config.seed, c, config.workers, config.t};
        CellResult result;
        result.cell = cells[c];
        result.replications = run_condition(cells[c], config.params_for(cells[c]), config.n_sim, settings);
        try {
            result.summary = metrics(result.replications);
        } catch (const DataError& e) {
            result.metrics_error = e.what();
        }
        out.push_back(std::move(result));
    }
    return out;
}

void write_replications_csv(std::ostream& out, const std::vector<CellResult>& cells) {
    csv::write_row(out, {"cell", "replication", "seed", "parameter", "truth", "mean", "ci_low",
                         "ci_high", "excluded", "failed", "max_rhat", "divergences"});
    for (const auto& cell : cells) {
        const std::string label = cell.cell.label();
        for (const auto& r : cell.replications) {
            const std::vector<std::string> common{label, std::to_string(r.index), std::to_string(r.seed)};
            auto tail = [&](std::vector<std::string> row) {
                row.insert(row.begin(), common.begin(), common.end());
                row.push_back(r.excluded ? "1" : "0");
                row.push_back(r.failed ? "1" : "0");
                row.push_back(csv::format(r.max_rhat));
                row.push_back(std::to_string(r.divergences));
                csv::write_row(out, row);
            };
            if (r.failed) {
                tail({"", "", "", "", ""});
                continue;
            }
            for (const auto& e : r.estimates) {
                tail({e.parameter, csv::format(e.truth), csv::format(e.mean), csv::format(e.ci_low),
                      csv::format(e.ci_high)});
            }
        }
    }
}

void write_metrics_csv(std::ostream& out, const std::vector<CellResult>& cells) {
    csv::write_row(out, {"cell", "parameter", "n", "bias", "bias_mcse", "coverage", "coverage_mcse",
                         "be_coverage", "be_coverage_mcse"});
    for (const auto& cell : cells) {
        if (!cell.summary) continue;
        for (const auto& m : cell.summary->parameters) {
            csv::write_row(out, {cell.cell.label(), m.parameter, std::to_string(m.n),
                                 csv::format(m.bias), csv::format(m.bias_mcse),
                                 csv::format(m.coverage), csv::format(m.coverage_mcse),
                                 csv::format(m.be_coverage), csv::format(m.be_coverage_mcse)});
        }
    }
}

double draw_from(const Prior& prior, std::mt19937_64& rng, bool half) {
    double x = 0.0;
    switch (prior.family) {
        case Prior::Family::flat:
            throw DataError("cannot draw from a flat prior");
        case Prior::Family::fixed:
            return prior.location;
        case Prior::Family::normal:
            x = std::normal_distribution<double>()(rng);
            break;
        case Prior::Family::student_t:
            x = std::student_t_distribution<double>(prior.df)(rng);
            break;
    }
    if (half) x = std::abs(x);
    return prior.location + prior.scale * x;
}

SbcResult run_sbc(const SbcSettings& s) {
    if (s.replications < 2 || s.rank_draws < 1 || s.bins < 2 || (s.rank_draws + 1) % s.bins != 0) {
        throw UsageError("SBC needs 2+ replications and bins dividing rank_draws + 1");
    }
    const DGPParams base = default_dgp(s.cell.parts);
    const auto k = static_cast<Eigen::Index>(s.cell.parts - 1);
    const auto n_params = static_cast<std::size_t>(2 * k + 3);

    struct Outcome {
        bool failed = false;
        double max_rhat = 1.0;
        std::size_t divergences = 0;
        std::vector<int> ranks;
        std::vector<double> errors;
    };
    std::vector<Outcome> outcomes(static_cast<std::size_t>(s.replications));
    std::vector<std::string> names;

    parallel_for(outcomes.size(), s.workers, [&](std::size_t r) {
        Outcome& o = outcomes[r];
        try {
            std::mt19937_64 rng(derive_seed(s.seed, {r, 0}));
            DGPParams p = base;
            p.gamma0 = draw_from(s.priors.intercept, rng);
            for (Eigen::Index i = 0; i < p.beta.size(); ++i) p.beta(i) = draw_from(s.priors.coefficients, rng);
            p.sigma_u = draw_from(s.priors.sd_intercept, rng, true);
            p.sigma_e = draw_from(s.priors.sd_residual, rng, true);
            const Dataset data = generate(p, s.cell.clusters, s.cell.cluster_size, derive_seed(s.seed, {r, 1}));
            const OrthonormalBasis basis = analysis_basis(p);
            const ModelSpec spec = make_spec(data.table, basis);
            const Design design = build_design(between_within_split(data.table, basis), data.table, spec);
            SamplerConfig cfg = s.sampler;
            cfg.seed = derive_seed(s.seed, {r, 2});
            cfg.workers = 1;
            const PosteriorDraws draws = fit(spec, design, s.priors, cfg);
            const DiagnosticsReport report = diagnose(draws, 1, false);
            o.max_rhat = report.max_rhat();
            o.divergences = report.divergences;

            const Eigen::VectorXd truth = truth_vector(data.truth);
            const auto total = static_cast<double>(draws.draws());
            for (std::size_t p_idx = 0; p_idx < n_params; ++p_idx) {
                const auto col = draws.values.col(static_cast<Eigen::Index>(p_idx));
                const double t = truth(static_cast<Eigen::Index>(p_idx));
                int rank = 0;
                for (int l = 0; l < s.rank_draws; ++l) {
                    const auto at = static_cast<Eigen::Index>((l + 0.5) * total / s.rank_draws);
                    if (col(at) < t) ++rank;
                }
                o.ranks.push_back(rank);
                o.errors.push_back(col.mean() - t);
            }
            if (r == 0) names.assign(draws.names.begin(), draws.names.begin() + static_cast<long>(n_params));
        } catch (const std::exception&) {
            o.failed = true;
        }
    });

    if (names.empty()) {
        names.push_back("gamma_0");
        for (Eigen::Index i = 0; i < k; ++i) names.push_back("beta_b" + std::to_string(i + 1));
        for (Eigen::Index i = 0; i < k; ++i) names.push_back("beta_w" + std::to_string(i + 1));
        names.push_back("sigma_u");
        names.push_back("sigma_e");
    }

    SbcResult result;
    std::size_t used = 0;
    for (const auto& o : outcomes) {
        if (o.failed) {
            ++result.failed;
            continue;
        }
        ++used;
        if (o.max_rhat >= kRhatThreshold) ++result.rhat_failures;
        if (o.divergences > 0) ++result.divergent;
    }
    if (used < 2) {
        throw SamplingError("SBC: fewer than 2 replications completed");
    }
    const int width = (s.rank_draws + 1) / s.bins;
    const double expected = static_cast<double>(used) / s.bins;
    const boost::math::chi_squared_distribution<double> chi2(s.bins - 1);
    for (std::size_t p = 0; p < n_params; ++p) {
        SbcParameter out;
        out.name = names[p];
        out.histogram.assign(static_cast<std::size_t>(s.bins), 0);
        double sum = 0.0, sum_sq = 0.0;
        for (const auto& o : outcomes) {
            if (o.failed) continue;
            out.ranks.push_back(o.ranks[p]);
            ++out.histogram[static_cast<std::size_t>(o.ranks[p] / width)];
            sum += o.errors[p];
            sum_sq += o.errors[p] * o.errors[p];
        }
        for (int h : out.histogram) {
            out.chi_square += (h - expected) * (h - expected) / expected;
        }
        out.p_value = boost::math::cdf(boost::math::complement(chi2, out.chi_square));
        const auto n = static_cast<double>(used);
        out.mean_error = sum / n;
        out.mean_error_mcse = std::sqrt(std::max(0.0, (sum_sq - n * out.mean_error * out.mean_error) / (n - 1.0)) / n);
        result.parameters.push_back(std::move(out));
    }
    return result;
}

}  // namespace mlcoda::sim
