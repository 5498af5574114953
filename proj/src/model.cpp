#include "mlcoda/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "mlcoda/errors.hpp"
#include "mlcoda/nuts.hpp"
#include "mlcoda/parallel.hpp"

namespace mlcoda {

Prior Prior::normal(double location, double scale) {
    if (!(scale > 0.0) || !std::isfinite(location)) {
        throw DataError("normal prior needs a finite location and positive scale");
    }
    return Prior{Family::normal, 0.0, location, scale};
}

Prior Prior::student_t(double df, double location, double scale) {
    if (!(df > 0.0) || !(scale > 0.0) || !std::isfinite(location)) {
        throw DataError("student_t prior needs df > 0, positive scale, finite location");
    }
    return Prior{Family::student_t, df, location, scale};
}

Prior Prior::fixed(double value) {
    if (!std::isfinite(value)) {
        throw DataError("fixed prior value must be finite");
    }
    return Prior{Family::fixed, 0.0, value, 0.0};
}

double Prior::log_density(double x) const {
    switch (family) {
        case Family::normal: {
            const double z = (x - location) / scale;
            return -0.5 * z * z - std::log(scale) - 0.5 * std::log(2.0 * std::numbers::pi);
        }
        case Family::student_t: {
            const double z = (x - location) / scale;
            return std::lgamma(0.5 * (df + 1.0)) - std::lgamma(0.5 * df) -
                   0.5 * std::log(df * std::numbers::pi) - std::log(scale) -
                   0.5 * (df + 1.0) * std::log1p(z * z / df);
        }
        case Family::flat:
        case Family::fixed:
            return 0.0;
    }
    return 0.0;
}

double Prior::gradient(double x) const {
    switch (family) {
        case Family::normal:
            return -(x - location) / (scale * scale);
        case Family::student_t: {
            const double d = x - location;
            return -(df + 1.0) * d / (df * scale * scale + d * d);
        }
        case Family::flat:
        case Family::fixed:
            return 0.0;
    }
    return 0.0;
}

std::string Prior::describe() const {
    std::ostringstream out;
    switch (family) {
        case Family::flat: out << "flat"; break;
        case Family::normal: out << "normal(" << location << ", " << scale << ")"; break;
        case Family::student_t:
            out << "student_t(" << df << ", " << location << ", " << scale << ")";
            break;
        case Family::fixed: out << "fixed(" << location << ")"; break;
    }
    return out.str();
}

PriorSpec default_priors(const Eigen::VectorXd& outcome) {
    if (outcome.size() < 2) {
        throw DataError("default priors need at least 2 outcome values");
    }
    if (!outcome.allFinite()) {
        throw DataError("outcome contains non-finite values");
    }
    std::vector<double> y(outcome.data(), outcome.data() + outcome.size());
    const double med = quantile(y, 0.5);
    if (std::all_of(y.begin(), y.end(), [&](double v) { return v == y.front(); })) {
        throw DataError("outcome is constant; prior scale would be zero");
    }
    std::vector<double> dev;
    dev.reserve(y.size());
    for (double v : y) dev.push_back(std::abs(v - med));
    const double mad = 1.4826 * quantile(dev, 0.5);
    const double scale = std::max(2.5, std::round(mad * 10.0) / 10.0);
    return PriorSpec{Prior::student_t(3.0, med, scale), Prior::flat(),
                     Prior::student_t(3.0, 0.0, scale), Prior::student_t(3.0, 0.0, scale)};
}

void SamplerConfig::validate() const {
    if (chains < 1) throw UsageError("chains must be at least 1");
    if (iterations < 1) throw UsageError("iterations must be at least 1");
    if (warmup < 0) throw UsageError("warmup must be non-negative");
    if (!(adapt_target > 0.0 && adapt_target < 1.0)) {
        throw UsageError("adapt target must lie strictly between 0 and 1");
    }
    if (max_depth < 1) throw UsageError("max tree depth must be at least 1");
}

ModelSpec make_spec(const LongTable& table, const OrthonormalBasis& basis) {
    if (basis.parts() != table.parts()) {
        throw ShapeError("basis and table disagree on the number of parts");
    }
    return ModelSpec{table.outcome_name, basis, table.covariate_names};
}

Eigen::MatrixXd Design::membership() const {
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(cluster.size()),
                                              static_cast<Eigen::Index>(clusters));
    for (std::size_t i = 0; i < cluster.size(); ++i) {
        z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(cluster[i])) = 1.0;
    }
    return z;
}

Eigen::MatrixXd cluster_membership(const LongTable& table) {
    Design d;
    d.clusters = table.clusters();
    for (const auto& r : table.rows) d.cluster.push_back(r.cluster);
    return d.membership();
}

Design build_design(const DecomposedCoords& coords, const LongTable& table, const ModelSpec& spec) {
    const auto n = static_cast<Eigen::Index>(table.rows.size());
    const auto k = static_cast<Eigen::Index>(spec.basis.dims());
    const auto c = static_cast<Eigen::Index>(spec.covariates.size());
    if (coords.total.rows() != n || coords.within.rows() != n ||
        coords.between.rows() != static_cast<Eigen::Index>(table.clusters())) {
        throw ShapeError("coordinates are not aligned with the table rows");
    }
    if (coords.between.cols() != k || table.parts() != spec.parts()) {
        throw ShapeError("coordinates do not match the model's basis");
    }
    if (table.covariate_names.size() != spec.covariates.size()) {
        throw ShapeError("table and model disagree on covariates");
    }

    Design d;
    d.X.resize(n, 1 + 2 * k + c);
    d.y.resize(n);
    d.clusters = table.clusters();
    d.cluster_labels = table.cluster_labels;
    d.column_names.push_back("intercept");
    for (Eigen::Index j = 0; j < k; ++j) d.column_names.push_back("zb" + std::to_string(j + 1));
    for (Eigen::Index j = 0; j < k; ++j) d.column_names.push_back("zw" + std::to_string(j + 1));
    for (const auto& name : spec.covariates) d.column_names.push_back(name);

    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& row = table.rows[static_cast<std::size_t>(i)];
        d.X(i, 0) = 1.0;
        d.X.block(i, 1, 1, k) = coords.between.row(static_cast<Eigen::Index>(row.cluster));
        d.X.block(i, 1 + k, 1, k) = coords.within.row(i);
        for (Eigen::Index j = 0; j < c; ++j) {
            d.X(i, 1 + 2 * k + j) = row.covariates[static_cast<std::size_t>(j)];
        }
        d.y(i) = row.outcome;
        d.cluster.push_back(row.cluster);
    }

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d.X);
    qr.setThreshold(1e-10);
    if (qr.rank() < d.X.cols()) {
        throw DegenerateDesign("design matrix has rank " + std::to_string(qr.rank()) + " but " +
                               std::to_string(d.X.cols()) +
                               " columns; a predictor is constant or collinear");
    }
    return d;
}

PosteriorDensity::PosteriorDensity(const Design& design, const PriorSpec& priors,
                                   Parameterization param)
    : design_(design), priors_(priors), param_(param) {
    if (priors.intercept.family == Prior::Family::fixed ||
        priors.coefficients.family == Prior::Family::fixed) {
        throw DataError("only standard deviations can be fixed");
    }
    for (const Prior* p : {&priors.sd_intercept, &priors.sd_residual}) {
        if (p->family == Prior::Family::fixed && !(p->location > 0.0)) {
            throw DataError("a fixed standard deviation must be positive");
        }
        if ((p->family == Prior::Family::normal || p->family == Prior::Family::student_t) &&
            p->location != 0.0) {
            throw DataError("standard-deviation priors are half distributions centred at 0");
        }
    }
    predictors_ = design.X.cols() - 1;
    Xc_ = design.X.rightCols(predictors_);
    x_mean_ = Xc_.colwise().mean().transpose();
    Xc_.rowwise() -= x_mean_.transpose();
    fixed_su_ = priors.sd_intercept.family == Prior::Family::fixed;
    fixed_se_ = priors.sd_residual.family == Prior::Family::fixed;
    dim_ = 1 + predictors_ + (fixed_su_ ? 0 : 1) + (fixed_se_ ? 0 : 1) +
           static_cast<Eigen::Index>(design.clusters);
}

double PosteriorDensity::operator()(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const {
    const auto P = predictors_;
    const auto J = static_cast<Eigen::Index>(design_.clusters);
    const auto N = design_.y.size();
    grad.setZero(dim_);

    const double alpha = q(0);
    const auto beta = q.segment(1, P);
    Eigen::Index idx = 1 + P;
    const Eigen::Index su_idx = fixed_su_ ? -1 : idx++;
    const Eigen::Index se_idx = fixed_se_ ? -1 : idx++;
    const Eigen::Index u_idx = idx;
    const double su = fixed_su_ ? priors_.sd_intercept.location : std::exp(q(su_idx));
    const double se = fixed_se_ ? priors_.sd_residual.location : std::exp(q(se_idx));
    if (!std::isfinite(su) || !std::isfinite(se) || su <= 0.0 || se <= 0.0) {
        return -INFINITY;
    }
    const auto u_raw = q.segment(u_idx, J);
    const bool noncentered = param_ == Parameterization::noncentered;

    const double gamma0 = alpha - x_mean_.dot(beta);
    double lp = priors_.intercept.log_density(gamma0);
    const double g_int = priors_.intercept.gradient(gamma0);
    for (Eigen::Index k = 0; k < P; ++k) {
        lp += priors_.coefficients.log_density(beta(k));
        grad(1 + k) = priors_.coefficients.gradient(beta(k));
    }
    if (!fixed_su_) lp += priors_.sd_intercept.log_density(su) + q(su_idx);
    if (!fixed_se_) lp += priors_.sd_residual.log_density(se) + q(se_idx);

    Eigen::VectorXd mu = Xc_ * beta;
    mu.array() += alpha;
    for (Eigen::Index i = 0; i < N; ++i) {
        const auto j = static_cast<Eigen::Index>(design_.cluster[static_cast<std::size_t>(i)]);
        mu(i) += noncentered ? su * u_raw(j) : u_raw(j);
    }
    const Eigen::VectorXd e = design_.y - mu;
    const double sse = e.squaredNorm();
    const double inv_var = 1.0 / (se * se);
    lp += -0.5 * sse * inv_var - static_cast<double>(N) * std::log(se);

    const Eigen::VectorXd r = e * inv_var;
    Eigen::VectorXd r_cluster = Eigen::VectorXd::Zero(J);
    for (Eigen::Index i = 0; i < N; ++i) {
        r_cluster(static_cast<Eigen::Index>(design_.cluster[static_cast<std::size_t>(i)])) += r(i);
    }

    grad(0) = r.sum() + g_int;
    grad.segment(1, P) += Xc_.transpose() * r - x_mean_ * g_int;

    if (noncentered) {
        lp += -0.5 * u_raw.squaredNorm();
        grad.segment(u_idx, J) = su * r_cluster - u_raw;
        if (!fixed_su_) {
            grad(su_idx) = su * u_raw.dot(r_cluster) + su * priors_.sd_intercept.gradient(su) + 1.0;
        }
    } else {
        const double ss = u_raw.squaredNorm();
        lp += -0.5 * ss / (su * su) - static_cast<double>(J) * std::log(su);
        grad.segment(u_idx, J) = r_cluster - u_raw / (su * su);
        if (!fixed_su_) {
            grad(su_idx) = ss / (su * su) - static_cast<double>(J) +
                           su * priors_.sd_intercept.gradient(su) + 1.0;
        }
    }
    if (!fixed_se_) {
        grad(se_idx) = sse * inv_var - static_cast<double>(N) +
                       se * priors_.sd_residual.gradient(se) + 1.0;
    }
    return lp;
}

Eigen::VectorXd PosteriorDensity::constrain(const Eigen::VectorXd& q) const {
    const auto P = predictors_;
    const auto J = static_cast<Eigen::Index>(design_.clusters);
    Eigen::VectorXd out(1 + P + 2 + J);
    const auto beta = q.segment(1, P);
    out(0) = q(0) - x_mean_.dot(beta);
    out.segment(1, P) = beta;
    Eigen::Index idx = 1 + P;
    const double su = fixed_su_ ? priors_.sd_intercept.location : std::exp(q(idx++));
    const double se = fixed_se_ ? priors_.sd_residual.location : std::exp(q(idx++));
    out(1 + P) = su;
    out(2 + P) = se;
    const auto u_raw = q.segment(idx, J);
    out.segment(3 + P, J) = param_ == Parameterization::noncentered ? Eigen::VectorXd(su * u_raw)
                                                                     : Eigen::VectorXd(u_raw);
    return out;
}

double PosteriorDensity::log_prior(const Eigen::VectorXd& c) const {
    const auto P = predictors_;
    double lp = priors_.intercept.log_density(c(0));
    for (Eigen::Index k = 0; k < P; ++k) lp += priors_.coefficients.log_density(c(1 + k));
    lp += priors_.sd_intercept.log_density(c(1 + P));
    lp += priors_.sd_residual.log_density(c(2 + P));
    return lp;
}

std::size_t PosteriorDraws::index(const std::string& name) const {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) {
        throw DataError("unknown parameter '" + name + "'");
    }
    return static_cast<std::size_t>(it - names.begin());
}

Eigen::VectorXd PosteriorDraws::column(const std::string& name) const {
    return values.col(static_cast<Eigen::Index>(index(name)));
}

Eigen::MatrixXd PosteriorDraws::by_chain(std::size_t param) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(iterations), static_cast<Eigen::Index>(chains));
    for (std::size_t c = 0; c < chains; ++c) {
        out.col(static_cast<Eigen::Index>(c)) =
            values.block(static_cast<Eigen::Index>(c * iterations), static_cast<Eigen::Index>(param),
                         static_cast<Eigen::Index>(iterations), 1);
    }
    return out;
}

std::size_t PosteriorDraws::divergences() const {
    return static_cast<std::size_t>(std::count(divergent.begin(), divergent.end(), 1));
}

std::vector<std::string> parameter_names(const ModelSpec& spec, const Design& design) {
    std::vector<std::string> names{"gamma_0"};
    for (std::size_t k = 0; k < spec.basis.dims(); ++k) names.push_back("beta_b" + std::to_string(k + 1));
    for (std::size_t k = 0; k < spec.basis.dims(); ++k) names.push_back("beta_w" + std::to_string(k + 1));
    for (const auto& c : spec.covariates) names.push_back("beta_" + c);
    names.push_back("sigma_u");
    names.push_back("sigma_e");
    for (const auto& label : design.cluster_labels) names.push_back("u[" + label + "]");
    return names;
}

PosteriorDraws fit(const ModelSpec& spec, const Design& design, const PriorSpec& priors,
                   const SamplerConfig& cfg) {
    cfg.validate();
    if (static_cast<std::size_t>(design.X.cols()) != 1 + spec.predictors()) {
        throw ShapeError("design does not match the model specification");
    }
    const PosteriorDensity density(design, priors, cfg.parameterization);
    const nuts::LogDensity target = [&density](const Eigen::VectorXd& q, Eigen::VectorXd& g) {
        return density(q, g);
    };

    const auto chains = static_cast<std::size_t>(cfg.chains);
    std::vector<nuts::ChainOutput> outputs(chains);
    parallel_for(chains, cfg.workers, [&](std::size_t c) {
        nuts::Settings s;
        s.warmup = cfg.warmup;
        s.iterations = cfg.iterations;
        s.adapt_target = cfg.adapt_target;
        s.max_depth = cfg.max_depth;
        s.seed = derive_seed(cfg.seed, {c});
        outputs[c] = nuts::run_chain(target, density.dim(), s);
    });

    PosteriorDraws draws;
    draws.names = parameter_names(spec, design);
    draws.chains = chains;
    draws.iterations = static_cast<std::size_t>(cfg.iterations);
    draws.parts = spec.parts();
    draws.covariates = spec.covariates.size();
    const auto total = static_cast<Eigen::Index>(chains * draws.iterations);
    draws.values.resize(total, static_cast<Eigen::Index>(draws.names.size()));
    draws.log_prior.resize(total);
    Eigen::Index row = 0;
    for (const auto& out : outputs) {
        for (Eigen::Index i = 0; i < out.draws.rows(); ++i, ++row) {
            Eigen::VectorXd c = density.constrain(out.draws.row(i).transpose());
            draws.values.row(row) = c.transpose();
            draws.log_prior(row) = density.log_prior(c);
        }
        draws.divergent.insert(draws.divergent.end(), out.divergent.begin(), out.divergent.end());
        draws.step_sizes.push_back(out.step_size);
    }
    return draws;
}

Eigen::VectorXd predict_expectation(const PosteriorDraws& draws, const IlrCoords& between,
                                    const IlrCoords& within, const Eigen::VectorXd& covariates) {
    const auto k = static_cast<Eigen::Index>(draws.parts - 1);
    if (between.size() != k || within.size() != k) {
        throw ShapeError("coordinates must have " + std::to_string(k) + " entries");
    }
    if (covariates.size() != static_cast<Eigen::Index>(draws.covariates)) {
        throw ShapeError("expected " + std::to_string(draws.covariates) + " covariate values");
    }
    Eigen::VectorXd yhat = draws.values.col(0);
    yhat += draws.values.middleCols(1, k) * between;
    yhat += draws.values.middleCols(1 + k, k) * within;
    if (covariates.size() > 0) {
        yhat += draws.values.middleCols(1 + 2 * k, covariates.size()) * covariates;
    }
    return yhat;
}

double quantile(std::vector<double> values, double prob) {
    if (values.empty()) {
        throw DataError("quantile of an empty sample");
    }
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * prob;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

Summary summarize(const Eigen::VectorXd& draws) {
    if (static_cast<std::size_t>(draws.size()) < kMinSummaryDraws) {
        throw DataError("summaries need at least " + std::to_string(kMinSummaryDraws) +
                        " draws, got " + std::to_string(draws.size()));
    }
    std::vector<double> v(draws.data(), draws.data() + draws.size());
    std::sort(v.begin(), v.end());
    // Offsetting by the first draw keeps the mean of constant draws exact.
    const double anchor = v.front();
    double acc = 0.0;
    for (double x : v) acc += x - anchor;
    Summary s;
    s.mean = anchor + acc / static_cast<double>(v.size());
    s.median = quantile(v, 0.5);
    s.ci_low = quantile(v, 0.025);
    s.ci_high = quantile(v, 0.975);
    s.significant = s.ci_low > 0.0 || s.ci_high < 0.0;
    return s;
}

Summary summarize(const PosteriorDraws& draws, const std::string& parameter) {
    return summarize(draws.column(parameter));
}

}  // namespace mlcoda
