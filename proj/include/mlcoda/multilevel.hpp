#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mlcoda/composition.hpp"
#include "mlcoda/csv.hpp"
#include "mlcoda/ilr.hpp"

namespace mlcoda {

/// Rows whose parts sum within this relative distance of the total are re-closed.
inline constexpr double kRecloseTolerance = 0.005;

struct Observation {
    std::size_t cluster = 0;   ///< contiguous internal index, 0-based
    std::size_t occasion = 0;  ///< position within the cluster, in input order
    Composition parts;
    double outcome = 0.0;
    std::vector<double> covariates;
};

/// Clustered long-format observations, all sharing the same parts and total.
struct LongTable {
    double total = 1.0;
    std::vector<std::string> part_names;
    std::string outcome_name;
    std::vector<std::string> covariate_names;
    /// External identifier of each cluster, indexed by Observation::cluster.
    std::vector<std::string> cluster_labels;
    std::vector<Observation> rows;

    std::size_t parts() const noexcept { return part_names.size(); }
    std::size_t clusters() const noexcept { return cluster_labels.size(); }
    std::vector<std::size_t> cluster_sizes() const;
    /// Row indices per cluster, in row order.
    std::vector<std::vector<std::size_t>> rows_by_cluster() const;
    Eigen::VectorXd outcomes() const;
};

/// Column selection for `ingest`. An empty outcome name skips outcome handling.
struct Schema {
    std::string id;
    std::vector<std::string> parts;
    std::string outcome;
    std::vector<std::string> covariates;
};

struct IngestReport {
    std::size_t rows_read = 0;
    std::size_t dropped_missing = 0;   ///< missing part, outcome or covariate
    std::size_t dropped_zero = 0;      ///< zero or negative part
    std::size_t rejected_total = 0;    ///< sum off by more than kRecloseTolerance
    std::size_t reclosed = 0;          ///< sum off by a small amount, rescaled
    std::vector<std::string> messages; ///< one line per dropped or re-closed row

    std::size_t dropped() const noexcept { return dropped_missing + dropped_zero + rejected_total; }
};

struct IngestResult {
    LongTable table;
    IngestReport report;
    /// Record index of each kept row, parallel to table.rows.
    std::vector<std::size_t> source_rows;
};

/// Screen and load a CSV table. Throws DataError for unknown columns, fewer
/// than two parts, or nothing left after screening.
IngestResult ingest(const csv::Table& records, const Schema& schema, double total);

/// Total, between-cluster and within-cluster ilr coordinates.
struct DecomposedCoords {
    Eigen::MatrixXd total;    ///< rows x (D-1)
    Eigen::MatrixXd between;  ///< clusters x (D-1)
    Eigen::MatrixXd within;   ///< rows x (D-1)
    std::vector<Composition> between_compositions;
    std::vector<Composition> within_compositions;
};

/// Between-cluster composition = closed per-part geometric mean of the cluster's
/// rows; within-cluster composition = closure(x / x_between).
DecomposedCoords between_within_split(const LongTable& table, const OrthonormalBasis& basis);

struct LevelCoords {
    IlrCoords between;
    IlrCoords within;
};

/// Split ilr(x) around a given between-level composition.
LevelCoords coordinates_of(const Composition& x, const Composition& reference_between,
                           const OrthonormalBasis& basis);

}  // namespace mlcoda
