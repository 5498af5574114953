#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "mlcoda/model.hpp"
#include "mlcoda/multilevel.hpp"

namespace mlcoda::sim {

using PartGroups = std::vector<std::vector<std::size_t>>;

/**
 * Generative model. Compositions are drawn in the ilr space of a base
 * composition (five parts by default), then the base parts are summed into
 * the analysed parts given by `groups`.
 */
struct DGPParams {
    std::vector<std::string> base_parts;
    Eigen::MatrixXi base_sbp;
    Eigen::VectorXd mu_b;
    Eigen::MatrixXd sigma_b;
    Eigen::VectorXd mu_w;
    Eigen::MatrixXd sigma_w;
    double total = 1440.0;

    PartGroups groups;
    std::vector<std::string> part_names;

    double gamma0 = 0.0;
    /// Between coefficients then within coefficients, 2 (D - 1) in all.
    Eigen::VectorXd beta;
    double sigma_u = 1.0;
    double sigma_e = 1.0;

    std::size_t parts() const noexcept { return groups.size(); }
    /// Throws DataError for shape mismatches, non-PD covariances or negative SDs.
    void validate() const;
};

/// Synthetic time-use defaults for D in {3, 4, 5}: sleep, awake in bed,
/// MVPA, LPA and SB, collapsed to sleep / MVPA / LPA / SB or sleep / PA / SB.
DGPParams default_dgp(std::size_t parts);

/// Basis used to analyse data generated with `params`.
OrthonormalBasis analysis_basis(const DGPParams& params);

struct Truth {
    double gamma0 = 0.0;
    Eigen::VectorXd beta;
    double sigma_u = 0.0;
    double sigma_e = 0.0;
    Eigen::VectorXd u;
    /// Generative base-space coordinates.
    Eigen::MatrixXd z_b;
    Eigen::MatrixXd z_w;
};

struct Dataset {
    LongTable table;
    Truth truth;
};

/// J clusters of I rows each. Outcomes follow the model on the decomposed
/// coordinates of the analysed composition. Deterministic per seed.
Dataset generate(const DGPParams& params, std::size_t clusters, std::size_t cluster_size,
                 std::uint64_t seed);

/// Throws DataError unless `groups` partitions 0..parts-1 into non-empty groups.
void check_partition(const PartGroups& groups, std::size_t parts);
Composition collapse(const Composition& x, const PartGroups& groups);
LongTable collapse(const LongTable& table, const PartGroups& groups,
                   std::vector<std::string> part_names);

struct Cell {
    std::size_t clusters = 50;
    std::size_t cluster_size = 5;
    std::size_t parts = 3;
    double var_u = 1.0;
    double var_e = 1.0;

    std::string label() const;
};

struct ConditionGrid {
    std::vector<std::size_t> clusters{50};
    std::vector<std::size_t> cluster_sizes{5};
    std::vector<std::size_t> parts{3};
    std::vector<std::pair<double, double>> variances{{1.0, 1.0}};

    /// Clusters vary slowest, variances fastest.
    std::vector<Cell> cells() const;
    void validate() const;
};

/// The 4 x 4 x 3 x 5 design of the original study.
ConditionGrid full_grid();

struct Estimate {
    std::string parameter;
    double truth = 0.0;
    double mean = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
};

struct Replication {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    bool failed = false;
    std::string error;
    double max_rhat = 1.0;
    std::size_t divergences = 0;
    bool low_ess = false;
    /// Failed or R-hat at or above the threshold; left out of the metrics.
    bool excluded = false;
    std::vector<Estimate> estimates;
};

struct RunSettings {
    SamplerConfig sampler;
    std::uint64_t seed = 1;
    std::size_t cell_index = 0;
    int workers = 1;
    /// Reallocation amount for the substitution estimates.
    double t = 30.0;
};

/// Replication r uses seeds derived from (seed, cell_index, r), so each
/// one can be rerun on its own. Failures are recorded, not thrown.
std::vector<Replication> run_condition(const Cell& cell, const DGPParams& params, int n_sim,
                                       const RunSettings& settings);

/// One replication; used by `run_condition`.
Replication run_replication(const Cell& cell, const DGPParams& params, std::size_t index,
                            const RunSettings& settings);

struct ParameterMetrics {
    std::string parameter;
    std::size_t n = 0;
    double bias = 0.0;
    double bias_mcse = 0.0;
    double coverage = 0.0;
    double coverage_mcse = 0.0;
    double be_coverage = 0.0;
    double be_coverage_mcse = 0.0;
};

struct MetricsSummary {
    std::vector<ParameterMetrics> parameters;
    std::size_t replications = 0;
    std::size_t excluded = 0;
    std::size_t failed = 0;
    std::size_t rhat_failures = 0;
    std::size_t divergent = 0;
    std::size_t low_ess = 0;
};

/// Bias, coverage and bias-eliminated coverage over the included
/// replications. Throws DataError when fewer than 2 remain.
MetricsSummary metrics(const std::vector<Replication>& replications);

struct StudyConfig {
    std::uint64_t seed = 1;
    int n_sim = 200;
    int workers = 1;
    ConditionGrid grid;
    SamplerConfig sampler;
    double t = 30.0;
    /// Overrides applied to the defaults of every D.
    std::optional<double> gamma0;
    std::optional<double> total;
    /// Keyed by D.
    std::vector<std::pair<std::size_t, Eigen::VectorXd>> beta;

    DGPParams params_for(const Cell& cell) const;
};

/// Reads a JSON study description; unknown keys are rejected.
StudyConfig parse_study(const std::string& json_text);
StudyConfig load_study(const std::filesystem::path& path);
/// Canonical JSON echo of a study configuration.
std::string study_to_json(const StudyConfig& config);

struct CellResult {
    Cell cell;
    std::vector<Replication> replications;
    std::optional<MetricsSummary> summary;
    std::string metrics_error;
};

std::vector<CellResult> run_study(const StudyConfig& config);

/// Long format: cell, replication, seed, parameter, truth, mean, ci_low,
/// ci_high, excluded, failed, max_rhat, divergences.
void write_replications_csv(std::ostream& out, const std::vector<CellResult>& cells);
void write_metrics_csv(std::ostream& out, const std::vector<CellResult>& cells);

/// Draw from a prior; standard deviations use the half version.
double draw_from(const Prior& prior, std::mt19937_64& rng, bool half = false);

struct SbcSettings {
    Cell cell{30, 3, 3, 1.0, 1.0};
    int replications = 200;
    /// Posterior draws kept per replication; ranks run from 0 to this value.
    int rank_draws = 99;
    int bins = 10;
    PriorSpec priors;
    SamplerConfig sampler;
    std::uint64_t seed = 1;
    int workers = 1;
};

struct SbcParameter {
    std::string name;
    std::vector<int> ranks;
    std::vector<int> histogram;
    double chi_square = 0.0;
    double p_value = 1.0;
    /// Mean and Monte Carlo SE of posterior mean minus truth.
    double mean_error = 0.0;
    double mean_error_mcse = 0.0;
};

struct SbcResult {
    std::vector<SbcParameter> parameters;
    std::size_t failed = 0;
    std::size_t rhat_failures = 0;
    std::size_t divergent = 0;
};

/// Simulation-based calibration: truths drawn from `priors`, data from the
/// default generator for the cell's D, posterior fitted with the same priors.
SbcResult run_sbc(const SbcSettings& settings);

}  // namespace mlcoda::sim
