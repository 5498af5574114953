#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

#include "mlcoda/composition.hpp"

namespace mlcoda {

/// ilr coordinates, D - 1 entries.
using IlrCoords = Eigen::VectorXd;

/**
 * Sequential binary partition: a D x (D-1) sign matrix. Column k splits one
 * group produced by the earlier columns into a +1 set and a -1 set.
 *
 * Only obtainable through `validate_sbp`, `default_sbp` or `read_sbp`, so
 * every instance satisfies the partition rules.
 */
class Sbp {
public:
    const Eigen::MatrixXi& matrix() const noexcept { return signs_; }
    std::size_t parts() const noexcept { return static_cast<std::size_t>(signs_.rows()); }
    const std::vector<std::string>& part_names() const noexcept { return names_; }

private:
    Sbp(Eigen::MatrixXi signs, std::vector<std::string> names)
        : signs_(std::move(signs)), names_(std::move(names)) {}

    friend Sbp validate_sbp(const Eigen::MatrixXi&, std::vector<std::string>);

    Eigen::MatrixXi signs_;
    std::vector<std::string> names_;
};

/// Check the recursive-partition rules. `part_names` may be empty, in which
/// case parts are labelled x1..xD. Throws DataError naming the offending column.
Sbp validate_sbp(const Eigen::MatrixXi& matrix, std::vector<std::string> part_names = {});

/// Pivot partition: part 1 vs the rest, part 2 vs the remainder, ...
/// Any valid basis gives identical substitution results, so this choice is arbitrary.
Sbp default_sbp(std::size_t parts, std::vector<std::string> part_names = {});

/// Parse a plain-text SBP: D rows of D-1 entries from {-1, 0, 1}, separated by
/// commas or whitespace. A first row containing non-numeric tokens is read as
/// part names; a leading non-numeric label column is also accepted.
Sbp parse_sbp(const std::string& text);
Sbp read_sbp(const std::filesystem::path& path);

/// Orthonormal basis induced by an SBP, stored as its contrast matrix.
struct OrthonormalBasis {
    /// D x (D-1); column k holds a_k on +1 parts, b_k on -1 parts, 0 elsewhere.
    Eigen::MatrixXd contrast;
    /// Number of +1 and -1 parts per column.
    std::vector<int> plus_counts;
    std::vector<int> minus_counts;
    std::vector<std::string> part_names;

    std::size_t parts() const noexcept { return static_cast<std::size_t>(contrast.rows()); }
    std::size_t dims() const noexcept { return static_cast<std::size_t>(contrast.cols()); }
};

OrthonormalBasis build_basis(const Sbp& sbp);

/// z = contrast^T ln(x).
IlrCoords ilr(const Composition& x, const OrthonormalBasis& basis);

/// closure(exp(contrast z)) at the requested total.
Composition ilr_inverse(const IlrCoords& z, const OrthonormalBasis& basis, double total);

}  // namespace mlcoda
