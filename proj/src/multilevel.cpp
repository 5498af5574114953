#include "mlcoda/multilevel.hpp"

#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "mlcoda/errors.hpp"

namespace mlcoda {

std::vector<std::size_t> LongTable::cluster_sizes() const {
    std::vector<std::size_t> sizes(clusters(), 0);
    for (const auto& r : rows) {
        ++sizes.at(r.cluster);
    }
    return sizes;
}

std::vector<std::vector<std::size_t>> LongTable::rows_by_cluster() const {
    std::vector<std::vector<std::size_t>> out(clusters());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.at(rows[i].cluster).push_back(i);
    }
    return out;
}

Eigen::VectorXd LongTable::outcomes() const {
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        y(static_cast<Eigen::Index>(i)) = rows[i].outcome;
    }
    return y;
}

namespace {

std::size_t require_column(const csv::Table& records, const std::string& name) {
    auto idx = records.find(name);
    if (!idx) {
        throw DataError("unknown column '" + name + "'");
    }
    return *idx;
}

std::string row_note(std::size_t line, const std::string& what) {
    // +2: one for the header, one for 1-based numbering.
    return "row " + std::to_string(line + 2) + ": " + what;
}

}  // namespace

IngestResult ingest(const csv::Table& records, const Schema& schema, double total) {
    if (!std::isfinite(total) || total <= 0.0) {
        throw DataError("total must be finite and positive");
    }
    if (schema.parts.size() < 2) {
        throw DataError("at least 2 part columns are required");
    }
    const auto id_col = require_column(records, schema.id);
    std::vector<std::size_t> part_cols, cov_cols;
    for (const auto& p : schema.parts) part_cols.push_back(require_column(records, p));
    for (const auto& c : schema.covariates) cov_cols.push_back(require_column(records, c));
    const bool with_outcome = !schema.outcome.empty();
    const std::size_t outcome_col = with_outcome ? require_column(records, schema.outcome) : 0;

    IngestResult result;
    auto& table = result.table;
    auto& report = result.report;
    table.total = total;
    table.part_names = schema.parts;
    table.outcome_name = schema.outcome;
    table.covariate_names = schema.covariates;

    std::map<std::string, std::size_t> cluster_index;
    std::vector<std::size_t> occasions;

    for (std::size_t line = 0; line < records.rows.size(); ++line) {
        const auto& cells = records.rows[line];
        ++report.rows_read;

        const std::string& id = cells[id_col];
        if (id.empty() || id == "NA") {
            ++report.dropped_missing;
            report.messages.push_back(row_note(line, "dropped (missing id)"));
            continue;
        }

        std::vector<double> raw;
        bool missing = false, nonpositive = false;
        for (auto c : part_cols) {
            auto v = csv::to_number(cells[c]);
            if (!v) {
                missing = true;
            } else if (!std::isfinite(*v) || *v <= 0.0) {
                nonpositive = true;
            } else {
                raw.push_back(*v);
            }
        }
        double outcome = std::nan("");
        if (with_outcome) {
            auto v = csv::to_number(cells[outcome_col]);
            if (!v || !std::isfinite(*v)) missing = true;
            else outcome = *v;
        }
        std::vector<double> covs;
        for (auto c : cov_cols) {
            auto v = csv::to_number(cells[c]);
            if (!v || !std::isfinite(*v)) missing = true;
            else covs.push_back(*v);
        }
        if (nonpositive) {
            ++report.dropped_zero;
            report.messages.push_back(row_note(line, "dropped (zero part)"));
            continue;
        }
        if (missing) {
            ++report.dropped_missing;
            report.messages.push_back(row_note(line, "dropped (missing value)"));
            continue;
        }

        const double sum = std::accumulate(raw.begin(), raw.end(), 0.0);
        const double deviation = std::abs(sum - total) / total;
        if (deviation > kRecloseTolerance) {
            ++report.rejected_total;
            std::ostringstream msg;
            msg << "rejected (parts sum to " << sum << ", total is " << total << ")";
            report.messages.push_back(row_note(line, msg.str()));
            continue;
        }
        if (deviation > kTotalTolerance) {
            ++report.reclosed;
            std::ostringstream msg;
            msg << "warning: parts sum to " << sum << ", re-closed to " << total;
            report.messages.push_back(row_note(line, msg.str()));
        }

        auto [it, inserted] = cluster_index.try_emplace(id, table.cluster_labels.size());
        if (inserted) {
            table.cluster_labels.push_back(id);
            occasions.push_back(0);
        }
        table.rows.push_back(Observation{it->second, occasions[it->second]++,
                                         closure(raw, total), outcome, std::move(covs)});
        result.source_rows.push_back(line);
    }

    if (table.rows.empty()) {
        throw DataError("no usable rows after screening (" + std::to_string(report.dropped()) +
                        " of " + std::to_string(report.rows_read) + " dropped)");
    }
    return result;
}

DecomposedCoords between_within_split(const LongTable& table, const OrthonormalBasis& basis) {
    if (table.rows.empty()) {
        throw DataError("cannot decompose an empty table");
    }
    if (basis.parts() != table.parts()) {
        throw ShapeError("basis has " + std::to_string(basis.parts()) + " parts, table has " +
                         std::to_string(table.parts()));
    }
    const auto n = static_cast<Eigen::Index>(table.rows.size());
    const auto j = static_cast<Eigen::Index>(table.clusters());
    const auto k = static_cast<Eigen::Index>(basis.dims());

    DecomposedCoords out;
    out.total.resize(n, k);
    out.between.resize(j, k);
    out.within.resize(n, k);

    const auto groups = table.rows_by_cluster();
    for (std::size_t c = 0; c < groups.size(); ++c) {
        if (groups[c].empty()) {
            throw DataError("cluster '" + table.cluster_labels[c] + "' has no rows");
        }
        std::vector<Composition> members;
        members.reserve(groups[c].size());
        for (auto i : groups[c]) members.push_back(table.rows[i].parts);
        out.between_compositions.push_back(geometric_mean_composition(members));
        out.between.row(static_cast<Eigen::Index>(c)) =
            ilr(out.between_compositions.back(), basis).transpose();
    }

    out.within_compositions.reserve(table.rows.size());
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        const auto& xb = out.between_compositions[row.cluster];
        std::vector<double> ratio(row.parts.size());
        for (std::size_t d = 0; d < ratio.size(); ++d) {
            ratio[d] = row.parts[d] / xb[d];
        }
        out.within_compositions.push_back(closure(ratio, table.total));
        const auto r = static_cast<Eigen::Index>(i);
        out.total.row(r) = ilr(row.parts, basis).transpose();
        out.within.row(r) = ilr(out.within_compositions.back(), basis).transpose();
    }
    return out;
}

LevelCoords coordinates_of(const Composition& x, const Composition& reference_between,
                           const OrthonormalBasis& basis) {
    detail::require_compatible(x, reference_between);
    LevelCoords out;
    out.between = ilr(reference_between, basis);
    out.within = ilr(x, basis) - out.between;
    return out;
}

}  // namespace mlcoda
