#pragma once

#include <Eigen/Dense>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "mlcoda/composition.hpp"
#include "mlcoda/ilr.hpp"
#include "mlcoda/model.hpp"
#include "mlcoda/multilevel.hpp"

namespace mlcoda {

struct ReferenceComposition {
    enum class Source { sample_mean, user };

    Composition x0;
    IlrCoords z_b0;
    Source source = Source::sample_mean;
};

/// Compositional mean of the clusters' between-level compositions.
ReferenceComposition sample_reference(const LongTable& table, const OrthonormalBasis& basis);
ReferenceComposition user_reference(const Composition& x0, const OrthonormalBasis& basis);

enum class Level { between, within };
std::string to_string(Level level);

/// How a within-level reallocation of t is applied. `absolute` moves t units
/// between the parts; `multiplicative` scales them by (1 - t/total) and
/// (1 + t/total).
enum class WithinMode { absolute, multiplicative };

struct Reallocation {
    Composition composition;
    IlrCoords between;
    IlrCoords within;
};

/// Move t units from part `from` to part `to` at the given level. Requires
/// from != to and 0 <= t < min(x0[from], total - x0[to]).
Reallocation reallocate(const ReferenceComposition& ref, const OrthonormalBasis& basis,
                        std::size_t from, std::size_t to, double t, Level level,
                        WithinMode mode = WithinMode::absolute);

struct SubstitutionGrid {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::vector<double> amounts;
    std::vector<Level> levels;

    std::size_t size() const noexcept { return pairs.size() * amounts.size() * levels.size(); }
};

/// All ordered pairs of distinct parts, t = t_min, t_min + 1, ..., t_max.
SubstitutionGrid make_grid(std::size_t parts, double t_min = 1.0, double t_max = 30.0,
                           std::vector<Level> levels = {Level::between, Level::within});

struct SubstitutionRow {
    Level level = Level::between;
    std::size_t from = 0;
    std::size_t to = 0;
    double t = 0.0;
    Summary summary;
    /// Per-draw differences, kept only on request.
    Eigen::VectorXd deltas;
};

struct SubstitutionResult {
    std::vector<std::string> part_names;
    std::vector<SubstitutionRow> rows;
};

struct DeltaOptions {
    WithinMode mode = WithinMode::absolute;
    bool keep_draws = false;
    int workers = 1;
};

/// Posterior differences in the expected outcome between each reallocated
/// composition and the reference, via the population-level prediction.
SubstitutionResult estimate_delta(const PosteriorDraws& draws, const OrthonormalBasis& basis,
                                  const SubstitutionGrid& grid, const ReferenceComposition& ref,
                                  const DeltaOptions& options = {});

/// Per-draw prediction difference between two coordinate sets.
Eigen::VectorXd prediction_delta(const PosteriorDraws& draws, const LevelCoords& reallocated,
                                 const LevelCoords& reference);

/// The same difference written as coefficients times coordinate changes.
Eigen::VectorXd formula_delta(const PosteriorDraws& draws, const LevelCoords& reallocated,
                              const LevelCoords& reference);

/// Re-express compositional coefficients fitted on one basis in another
/// basis of the same parts. Predictions and differences are unchanged.
PosteriorDraws change_basis(const PosteriorDraws& draws, const OrthonormalBasis& from,
                            const OrthonormalBasis& to);

/// Columns level, from_part, to_part, t, mean, ci_low, ci_high, significant.
void write_substitution_csv(std::ostream& out, const SubstitutionResult& result);

}  // namespace mlcoda
