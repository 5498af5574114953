#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "mlcoda/ilr.hpp"
#include "mlcoda/multilevel.hpp"

namespace mlcoda {

/// Univariate prior. Standard-deviation parameters use the half version of
/// `normal` and `student_t` (location must then be 0).
struct Prior {
    enum class Family { flat, normal, student_t, fixed };

    Family family = Family::flat;
    double df = 0.0;
    double location = 0.0;
    double scale = 1.0;

    static Prior flat() { return {}; }
    static Prior normal(double location, double scale);
    static Prior student_t(double df, double location, double scale);
    /// Point mass; the parameter is held at `value` and not sampled.
    static Prior fixed(double value);

    /// Log density up to the usual normalising constant; 0 for flat.
    double log_density(double x) const;
    /// d/dx of `log_density`.
    double gradient(double x) const;
    std::string describe() const;
};

struct PriorSpec {
    Prior intercept;
    Prior coefficients;
    Prior sd_intercept;
    Prior sd_residual;
};

/// student_t(3, median(y), s) on the intercept, flat coefficients and
/// half-student_t(3, 0, s) on both standard deviations, where
/// s = max(2.5, round(1.4826 * MAD(y), 1)).
PriorSpec default_priors(const Eigen::VectorXd& outcome);

enum class Parameterization { noncentered, centered };

struct SamplerConfig {
    int chains = 4;
    int warmup = 500;
    int iterations = 2500;
    std::uint64_t seed = 1;
    double adapt_target = 0.8;
    int max_depth = 10;
    Parameterization parameterization = Parameterization::noncentered;
    /// Chains run on at most this many threads.
    int workers = 1;

    void validate() const;
};

/// Normal, identity-link random-intercept model with between and within ilr predictors.
struct ModelSpec {
    std::string outcome;
    OrthonormalBasis basis;
    std::vector<std::string> covariates;

    std::size_t parts() const noexcept { return basis.parts(); }
    /// 2(D-1) + covariates.
    std::size_t predictors() const noexcept { return 2 * basis.dims() + covariates.size(); }
};

ModelSpec make_spec(const LongTable& table, const OrthonormalBasis& basis);

struct Design {
    /// Columns: intercept, z_b1..z_b(D-1), z_w1..z_w(D-1), covariates.
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    /// Cluster index of every row (sparse form of Z).
    std::vector<std::size_t> cluster;
    std::size_t clusters = 0;
    std::vector<std::string> cluster_labels;
    std::vector<std::string> column_names;

    /// Dense rows x clusters membership indicator.
    Eigen::MatrixXd membership() const;
};

/// Dense rows x clusters indicator matrix of a table.
Eigen::MatrixXd cluster_membership(const LongTable& table);

/// Throws DegenerateDesign if X is rank deficient (constant or collinear predictors).
Design build_design(const DecomposedCoords& coords, const LongTable& table, const ModelSpec& spec);

/**
 * Log posterior of the random-intercept model on the unconstrained scale.
 *
 * Layout: centred intercept, coefficients, log sigma_u (unless fixed),
 * log sigma_e (unless fixed), cluster effects (standardised when
 * non-centred). The intercept is sampled after centring the predictors;
 * the reported intercept and its prior refer to the uncentred gamma_0.
 */
class PosteriorDensity {
public:
    PosteriorDensity(const Design& design, const PriorSpec& priors, Parameterization param);

    Eigen::Index dim() const noexcept { return dim_; }
    double operator()(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const;

    /// gamma_0, coefficients, sigma_u, sigma_e, u_1..u_J.
    Eigen::VectorXd constrain(const Eigen::VectorXd& q) const;
    /// Sum of the power-scalable priors (intercept, coefficients, both SDs)
    /// at a constrained parameter vector.
    double log_prior(const Eigen::VectorXd& constrained) const;

private:
    const Design& design_;
    PriorSpec priors_;
    Parameterization param_;
    Eigen::MatrixXd Xc_;  // predictors without the intercept column, centred
    Eigen::VectorXd x_mean_;
    Eigen::Index predictors_ = 0;
    bool fixed_su_ = false, fixed_se_ = false;
    Eigen::Index dim_ = 0;
};

struct PosteriorDraws {
    std::vector<std::string> names;
    std::size_t chains = 0;
    std::size_t iterations = 0;
    std::size_t parts = 0;       ///< D of the fitted model
    std::size_t covariates = 0;
    /// (chains * iterations) x parameters, chain-major.
    Eigen::MatrixXd values;
    std::vector<char> divergent;
    Eigen::VectorXd log_prior;
    std::vector<double> step_sizes;

    std::size_t parameters() const noexcept { return names.size(); }
    std::size_t draws() const noexcept { return static_cast<std::size_t>(values.rows()); }
    std::size_t index(const std::string& name) const;
    Eigen::VectorXd column(const std::string& name) const;
    /// iterations x chains view of one parameter.
    Eigen::MatrixXd by_chain(std::size_t param) const;
    std::size_t divergences() const;

    std::size_t intercept_index() const { return 0; }
    std::size_t coefficient_index(std::size_t k) const { return 1 + k; }
    std::size_t coefficient_count() const { return 2 * (parts - 1) + covariates; }
};

/// Parameter names in draw order.
std::vector<std::string> parameter_names(const ModelSpec& spec, const Design& design);

/// Deterministic given config (including seed). Chains run on up to
/// cfg.workers threads and never share random streams.
PosteriorDraws fit(const ModelSpec& spec, const Design& design, const PriorSpec& priors,
                   const SamplerConfig& cfg);

/// Population-level expectation per draw: gamma_0 + beta_b . z_b + beta_w . z_w + covariate terms.
Eigen::VectorXd predict_expectation(const PosteriorDraws& draws, const IlrCoords& between,
                                    const IlrCoords& within,
                                    const Eigen::VectorXd& covariates = Eigen::VectorXd());

struct Summary {
    double mean = 0.0;
    double median = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    /// The 95% interval excludes 0.
    bool significant = false;
};

inline constexpr std::size_t kMinSummaryDraws = 100;

/// Mean, median and 95% equal-tailed interval. Throws DataError below kMinSummaryDraws.
Summary summarize(const Eigen::VectorXd& draws);
Summary summarize(const PosteriorDraws& draws, const std::string& parameter);

/// Type-7 sample quantile (linear interpolation of order statistics).
double quantile(std::vector<double> values, double prob);

}  // namespace mlcoda
