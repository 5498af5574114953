#include "mlcoda/diagnostics.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mlcoda/errors.hpp"
#include "mlcoda/parallel.hpp"

namespace mlcoda {

namespace {

void require_chains(const Eigen::MatrixXd& chains) {
    if (chains.cols() < 1 || chains.rows() < 4) {
        throw DataError("diagnostics need at least 4 iterations per chain");
    }
    if (!chains.allFinite()) {
        throw DataError("diagnostics need finite draws");
    }
}

bool is_constant(const Eigen::MatrixXd& m) {
    return m.size() == 0 || (m.array() == m(0, 0)).all();
}

}  // namespace

Eigen::MatrixXd split_chains(const Eigen::MatrixXd& chains) {
    const Eigen::Index n = chains.rows();
    const Eigen::Index half = n / 2;
    Eigen::MatrixXd out(half, 2 * chains.cols());
    for (Eigen::Index c = 0; c < chains.cols(); ++c) {
        out.col(2 * c) = chains.col(c).head(half);
        out.col(2 * c + 1) = chains.col(c).tail(half);
    }
    return out;
}

Eigen::MatrixXd rank_normalize(const Eigen::MatrixXd& chains) {
    const Eigen::Index s = chains.size();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(s));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    const double* x = chains.data();
    std::stable_sort(order.begin(), order.end(),
                     [x](Eigen::Index a, Eigen::Index b) { return x[a] < x[b]; });

    Eigen::MatrixXd out(chains.rows(), chains.cols());
    const boost::math::normal_distribution<double> normal;
    const double denom = static_cast<double>(s) + 0.25;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
        // Ties share the average of their 1-based ranks.
        const double rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        const double z = boost::math::quantile(normal, (rank - 0.375) / denom);
        for (std::size_t k = i; k <= j; ++k) out.data()[order[k]] = z;
        i = j + 1;
    }
    return out;
}

std::optional<double> basic_rhat(const Eigen::MatrixXd& chains) {
    const auto n = static_cast<double>(chains.rows());
    const Eigen::Index m = chains.cols();
    if (m < 2 || chains.rows() < 2 || is_constant(chains)) return std::nullopt;
    const Eigen::VectorXd means = chains.colwise().mean().transpose();
    Eigen::VectorXd vars(m);
    for (Eigen::Index c = 0; c < m; ++c) {
        vars(c) = (chains.col(c).array() - means(c)).square().sum() / (n - 1.0);
    }
    const double w = vars.mean();
    const double b = n * (means.array() - means.mean()).square().sum() / static_cast<double>(m - 1);
    if (!(w > 0.0)) return std::nullopt;
    const double var_plus = (n - 1.0) / n * w + b / n;
    return std::sqrt(var_plus / w);
}

std::optional<double> split_rhat(const Eigen::MatrixXd& chains) {
    require_chains(chains);
    if (chains.cols() < 2) {
        throw DataError("R-hat needs at least 2 chains");
    }
    if (is_constant(chains)) return std::nullopt;
    return basic_rhat(rank_normalize(split_chains(chains)));
}

std::optional<double> basic_ess(const Eigen::MatrixXd& chains) {
    const Eigen::Index n = chains.rows();
    const Eigen::Index m = chains.cols();
    if (n < 4 || m < 1 || is_constant(chains)) return std::nullopt;
    const auto nd = static_cast<double>(n);

    Eigen::MatrixXd centred = chains;
    const Eigen::VectorXd means = chains.colwise().mean().transpose();
    for (Eigen::Index c = 0; c < m; ++c) centred.col(c).array() -= means(c);

    // Mean over chains of the biased autocovariance at a lag; evaluated
    // lazily because the truncation usually stops after a few lags.
    auto acov = [&](Eigen::Index lag) {
        double total = 0.0;
        for (Eigen::Index c = 0; c < m; ++c) {
            total += centred.col(c).head(n - lag).dot(centred.col(c).tail(n - lag));
        }
        return total / (nd * static_cast<double>(m));
    };

    const double mean_var = acov(0) * nd / (nd - 1.0);
    double var_plus = mean_var * (nd - 1.0) / nd;
    if (m > 1) {
        var_plus += (means.array() - means.mean()).square().sum() / static_cast<double>(m - 1);
    }
    if (!(var_plus > 0.0)) return std::nullopt;

    std::vector<double> rho(static_cast<std::size_t>(n), 0.0);
    rho[0] = 1.0;
    double rho_even = 1.0;
    double rho_odd = 1.0 - (mean_var - acov(1)) / var_plus;
    rho[1] = rho_odd;

    std::size_t t = 1;
    const auto limit = static_cast<std::size_t>(n - 5);
    while (t < limit && rho_even + rho_odd > 0.0) {
        rho_even = 1.0 - (mean_var - acov(static_cast<Eigen::Index>(t + 1))) / var_plus;
        rho_odd = 1.0 - (mean_var - acov(static_cast<Eigen::Index>(t + 2))) / var_plus;
        if (rho_even + rho_odd >= 0.0) {
            rho[t + 1] = rho_even;
            rho[t + 2] = rho_odd;
        }
        t += 2;
    }
    const std::size_t max_t = t;
    if (rho_even > 0.0) rho[max_t + 1] = rho_even;

    // Initial monotone sequence on the paired sums.
    for (t = 1; t + 2 <= max_t; t += 2) {
        if (rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]) {
            rho[t + 1] = 0.5 * (rho[t - 1] + rho[t]);
            rho[t + 2] = rho[t + 1];
        }
    }

    const double draws = nd * static_cast<double>(m);
    double tau = -1.0 + 2.0 * std::accumulate(rho.begin(), rho.begin() + static_cast<long>(max_t) + 1, 0.0) +
                 rho[max_t + 1];
    tau = std::max(tau, 1.0 / std::log10(draws));
    return draws / tau;
}

std::optional<double> ess(const Eigen::MatrixXd& chains, EssKind kind) {
    require_chains(chains);
    if (is_constant(chains)) return std::nullopt;
    const Eigen::MatrixXd split = split_chains(chains);
    if (kind == EssKind::bulk) {
        return basic_ess(rank_normalize(split));
    }
    std::vector<double> pooled(split.data(), split.data() + split.size());
    std::optional<double> result;
    for (double prob : {0.05, 0.95}) {
        const double q = quantile(pooled, prob);
        const Eigen::MatrixXd indicator = (split.array() <= q).cast<double>();
        const auto e = basic_ess(indicator);
        if (e && (!result || *e < *result)) result = e;
    }
    return result;
}

double cjs_distance(const Eigen::VectorXd& draws, const Eigen::VectorXd& base_weights,
                    const Eigen::VectorXd& weights) {
    const Eigen::Index n = draws.size();
    if (base_weights.size() != n || weights.size() != n) {
        throw ShapeError("draws and weights differ in length");
    }
    if (n < 2) return 0.0;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return draws(a) < draws(b); });

    const double p_total = base_weights.sum();
    const double q_total = weights.sum();
    double p_cdf = 0.0, q_cdf = 0.0;
    double p_int = 0.0, q_int = 0.0;
    double pq = 0.0, qp = 0.0;
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        p_cdf += base_weights(order[i]) / p_total;
        q_cdf += weights(order[i]) / q_total;
        const double width = draws(order[i + 1]) - draws(order[i]);
        if (width == 0.0) continue;
        const double mid = 0.5 * (p_cdf + q_cdf);
        p_int += width * p_cdf;
        q_int += width * q_cdf;
        if (p_cdf > 0.0) pq += width * p_cdf * std::log2(p_cdf / mid);
        if (q_cdf > 0.0) qp += width * q_cdf * std::log2(q_cdf / mid);
    }
    const double bound = p_int + q_int;
    if (!(bound > 0.0)) return 0.0;
    const double correction = 0.5 / std::log(2.0);
    const double cjs_pq = pq + correction * (q_int - p_int);
    const double cjs_qp = qp + correction * (p_int - q_int);
    return std::sqrt(std::max(0.0, (cjs_pq + cjs_qp) / bound));
}

Sensitivity power_scale_sensitivity(const Eigen::VectorXd& draws, const Eigen::VectorXd& log_prior,
                                    const std::vector<double>& alphas) {
    if (draws.size() != log_prior.size()) {
        throw ShapeError("draws and log-prior values differ in length");
    }
    if (alphas.empty()) {
        throw UsageError("power-scaling needs at least one alpha");
    }
    const auto n = static_cast<double>(draws.size());
    const Eigen::VectorXd base = Eigen::VectorXd::Ones(draws.size());
    Sensitivity s;
    s.effective_weights = n;
    double total = 0.0;
    for (double alpha : alphas) {
        if (!(alpha > 0.0)) {
            throw UsageError("power-scaling alpha must be positive");
        }
        Eigen::VectorXd lw = (alpha - 1.0) * log_prior;
        lw.array() -= lw.maxCoeff();
        const Eigen::VectorXd w = lw.array().exp();
        const double effective = w.sum() * w.sum() / w.squaredNorm();
        s.effective_weights = std::min(s.effective_weights, effective);
        total += cjs_distance(draws, base, w);
    }
    s.index = total / static_cast<double>(alphas.size());
    s.informative = s.index > kSensitivityThreshold;
    s.reliable = s.effective_weights >= kMinEffectiveWeights &&
                 s.effective_weights >= kMinEffectiveWeightFraction * n;
    return s;
}

std::vector<std::string> DiagnosticsReport::breaches() const {
    std::vector<std::string> out;
    auto fmt = [](double v) {
        std::ostringstream s;
        s.precision(4);
        s << v;
        return s.str();
    };
    for (const auto& p : parameters) {
        if (p.rhat && *p.rhat >= kRhatThreshold) {
            out.push_back(p.name + ": R-hat " + fmt(*p.rhat) + " >= " + fmt(kRhatThreshold));
        }
        if (p.ess_bulk && *p.ess_bulk <= kEssThreshold) {
            out.push_back(p.name + ": bulk ESS " + fmt(*p.ess_bulk) + " <= " + fmt(kEssThreshold));
        }
        if (p.ess_tail && *p.ess_tail <= kEssThreshold) {
            out.push_back(p.name + ": tail ESS " + fmt(*p.ess_tail) + " <= " + fmt(kEssThreshold));
        }
    }
    return out;
}

double DiagnosticsReport::max_rhat() const {
    double best = 1.0;
    for (const auto& p : parameters) {
        if (p.rhat) best = std::max(best, *p.rhat);
    }
    return best;
}

DiagnosticsReport diagnose(const PosteriorDraws& draws, int workers, bool sensitivity) {
    DiagnosticsReport report;
    report.divergences = draws.divergences();
    report.draws = draws.draws();
    report.parameters.resize(draws.parameters());
    const bool multi_chain = draws.chains >= 2;
    parallel_for(draws.parameters(), workers, [&](std::size_t p) {
        auto& out = report.parameters[p];
        out.name = draws.names[p];
        const Eigen::MatrixXd chains = draws.by_chain(p);
        if (multi_chain) out.rhat = split_rhat(chains);
        out.ess_bulk = ess(chains, EssKind::bulk);
        out.ess_tail = ess(chains, EssKind::tail);
        if (!sensitivity) return;
        out.sensitivity = power_scale_sensitivity(draws.values.col(static_cast<Eigen::Index>(p)),
                                                  draws.log_prior);
    });
    return report;
}

}  // namespace mlcoda
