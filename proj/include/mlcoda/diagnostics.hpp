#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "mlcoda/model.hpp"

namespace mlcoda {

inline constexpr double kRhatThreshold = 1.05;
inline constexpr double kEssThreshold = 400.0;
inline constexpr double kSensitivityThreshold = 0.05;
/// Importance weights are unreliable below this many effective draws ...
inline constexpr double kMinEffectiveWeights = 10.0;
/// ... or below this fraction of the draws.
inline constexpr double kMinEffectiveWeightFraction = 0.01;

/// Split each chain (columns of an iterations x chains matrix) into halves,
/// dropping the middle draw of odd-length chains.
Eigen::MatrixXd split_chains(const Eigen::MatrixXd& chains);

/// Replace draws by normal scores of their pooled average ranks.
Eigen::MatrixXd rank_normalize(const Eigen::MatrixXd& chains);

/// Rank-normalized split R-hat. Input is iterations x chains; needs at
/// least 2 chains and 4 iterations. Empty for constant draws.
std::optional<double> split_rhat(const Eigen::MatrixXd& chains);

/// Plain R-hat of the given chains as they are (no splitting or ranking).
std::optional<double> basic_rhat(const Eigen::MatrixXd& chains);

enum class EssKind { bulk, tail };

/// Bulk: ESS of rank-normalized split chains. Tail: the smaller ESS of the
/// 5% and 95% quantile indicators. Empty for constant draws.
std::optional<double> ess(const Eigen::MatrixXd& chains, EssKind kind);

/// ESS of the chains as given, with autocorrelations truncated by Geyer's
/// initial monotone sequence.
std::optional<double> basic_ess(const Eigen::MatrixXd& chains);

struct Sensitivity {
    double index = 0.0;
    /// Smallest effective number of importance weights over the alphas.
    double effective_weights = 0.0;
    bool informative = false;
    bool reliable = true;
};

/// Cumulative Jensen-Shannon distance between two weightings of the same
/// draws, normalised to [0, 1]. Weights need not be normalised.
double cjs_distance(const Eigen::VectorXd& draws, const Eigen::VectorXd& base_weights,
                    const Eigen::VectorXd& weights);

/// Prior power-scaling sensitivity of one parameter: importance weights
/// proportional to exp((alpha - 1) * log_prior), index averaged over alphas.
Sensitivity power_scale_sensitivity(const Eigen::VectorXd& draws, const Eigen::VectorXd& log_prior,
                                    const std::vector<double>& alphas = {0.5, 2.0});

struct ParameterDiagnostics {
    std::string name;
    std::optional<double> rhat;
    std::optional<double> ess_bulk;
    std::optional<double> ess_tail;
    Sensitivity sensitivity;
};

struct DiagnosticsReport {
    std::vector<ParameterDiagnostics> parameters;
    std::size_t divergences = 0;
    std::size_t draws = 0;

    /// Human-readable reasons the fit misses the R-hat or ESS thresholds.
    std::vector<std::string> breaches() const;
    bool converged() const { return breaches().empty(); }
    /// Largest R-hat over parameters with a defined value (1 if none).
    double max_rhat() const;
};

/// Full report; parameters are processed on up to `workers` threads.
/// Power-scaling is skipped when `sensitivity` is false.
DiagnosticsReport diagnose(const PosteriorDraws& draws, int workers = 1, bool sensitivity = true);

}  // namespace mlcoda
