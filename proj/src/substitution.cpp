#include "mlcoda/substitution.hpp"

#include <cmath>

#include "mlcoda/csv.hpp"
#include "mlcoda/errors.hpp"
#include "mlcoda/parallel.hpp"

namespace mlcoda {

namespace {

LevelCoords reference_coords(const ReferenceComposition& ref) {
    return {ref.z_b0, IlrCoords::Zero(ref.z_b0.size())};
}

void require_basis(const PosteriorDraws& draws, const OrthonormalBasis& basis) {
    if (draws.parts != basis.parts()) {
        throw ShapeError("model was fitted on " + std::to_string(draws.parts) +
                         " parts but the basis has " + std::to_string(basis.parts()));
    }
}

}  // namespace

ReferenceComposition sample_reference(const LongTable& table, const OrthonormalBasis& basis) {
    const auto split = between_within_split(table, basis);
    Composition x0 = geometric_mean_composition(split.between_compositions);
    IlrCoords z = ilr(x0, basis);
    return {std::move(x0), std::move(z), ReferenceComposition::Source::sample_mean};
}

ReferenceComposition user_reference(const Composition& x0, const OrthonormalBasis& basis) {
    if (x0.size() != basis.parts()) {
        throw ShapeError("reference composition has " + std::to_string(x0.size()) +
                         " parts, basis has " + std::to_string(basis.parts()));
    }
    return {x0, ilr(x0, basis), ReferenceComposition::Source::user};
}

std::string to_string(Level level) {
    return level == Level::between ? "between" : "within";
}

Reallocation reallocate(const ReferenceComposition& ref, const OrthonormalBasis& basis,
                        std::size_t from, std::size_t to, double t, Level level, WithinMode mode) {
    const std::size_t d = ref.x0.size();
    if (from >= d || to >= d) {
        throw UsageError("part index out of range");
    }
    if (from == to) {
        throw UsageError("cannot reallocate a part to itself");
    }
    const double total = ref.x0.total();
    const double limit = std::min(ref.x0[from], total - ref.x0[to]);
    if (!(t >= 0.0) || !(t < limit)) {
        throw UsageError("reallocation t = " + csv::format(t) + " from " + basis.part_names[from] +
                         " to " + basis.part_names[to] + " must lie in [0, " + csv::format(limit) +
                         ")");
    }
    if (t == 0.0) {
        return {ref.x0, ref.z_b0, IlrCoords::Zero(ref.z_b0.size())};
    }

    std::vector<double> parts(ref.x0.parts().begin(), ref.x0.parts().end());
    if (level == Level::within && mode == WithinMode::multiplicative) {
        const double f = t / total;
        parts[from] *= 1.0 - f;
        parts[to] *= 1.0 + f;
        const auto closed = closure(parts, total);
        parts.assign(closed.parts().begin(), closed.parts().end());
    } else {
        parts[from] -= t;
        parts[to] += t;
    }
    Composition moved(std::move(parts), total);
    IlrCoords z = ilr(moved, basis);
    if (level == Level::between) {
        const auto k = z.size();
        return {std::move(moved), std::move(z), IlrCoords::Zero(k)};
    }
    IlrCoords zw = z - ref.z_b0;
    return {std::move(moved), ref.z_b0, std::move(zw)};
}

SubstitutionGrid make_grid(std::size_t parts, double t_min, double t_max, std::vector<Level> levels) {
    if (parts < 2) {
        throw UsageError("substitution needs at least 2 parts");
    }
    if (!(t_min >= 0.0) || !(t_max >= t_min)) {
        throw UsageError("need 0 <= t-min <= t-max");
    }
    SubstitutionGrid grid;
    for (std::size_t a = 0; a < parts; ++a) {
        for (std::size_t b = 0; b < parts; ++b) {
            if (a != b) grid.pairs.emplace_back(a, b);
        }
    }
    for (double t = t_min; t <= t_max + 1e-9; t += 1.0) grid.amounts.push_back(t);
    grid.levels = std::move(levels);
    return grid;
}

Eigen::VectorXd prediction_delta(const PosteriorDraws& draws, const LevelCoords& reallocated,
                                 const LevelCoords& reference) {
    const Eigen::VectorXd cov = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(draws.covariates));
    return predict_expectation(draws, reallocated.between, reallocated.within, cov) -
           predict_expectation(draws, reference.between, reference.within, cov);
}

Eigen::VectorXd formula_delta(const PosteriorDraws& draws, const LevelCoords& reallocated,
                              const LevelCoords& reference) {
    const auto k = static_cast<Eigen::Index>(draws.parts - 1);
    return draws.values.middleCols(1, k) * (reallocated.between - reference.between) +
           draws.values.middleCols(1 + k, k) * (reallocated.within - reference.within);
}

SubstitutionResult estimate_delta(const PosteriorDraws& draws, const OrthonormalBasis& basis,
                                  const SubstitutionGrid& grid, const ReferenceComposition& ref,
                                  const DeltaOptions& options) {
    require_basis(draws, basis);
    if (ref.x0.size() != basis.parts()) {
        throw ShapeError("reference composition does not match the basis");
    }
    SubstitutionResult result;
    result.part_names = basis.part_names;
    result.rows.resize(grid.size());
    const LevelCoords base = reference_coords(ref);

    // Reallocations are validated up front so a bad grid fails before any work.
    std::vector<LevelCoords> coords(grid.size());
    std::size_t i = 0;
    for (Level level : grid.levels) {
        for (const auto& [from, to] : grid.pairs) {
            for (double t : grid.amounts) {
                const auto r = reallocate(ref, basis, from, to, t, level, options.mode);
                coords[i] = {r.between, r.within};
                result.rows[i] = {level, from, to, t, {}, {}};
                ++i;
            }
        }
    }
    parallel_for(grid.size(), options.workers, [&](std::size_t j) {
        Eigen::VectorXd delta = prediction_delta(draws, coords[j], base);
        result.rows[j].summary = summarize(delta);
        if (options.keep_draws) result.rows[j].deltas = std::move(delta);
    });
    return result;
}

PosteriorDraws change_basis(const PosteriorDraws& draws, const OrthonormalBasis& from,
                            const OrthonormalBasis& to) {
    require_basis(draws, from);
    if (from.parts() != to.parts() || from.part_names != to.part_names) {
        throw ShapeError("bases must describe the same parts in the same order");
    }
    // z_to = Q z_from with Q orthogonal, so beta_to = Q beta_from.
    const Eigen::MatrixXd q = to.contrast.transpose() * from.contrast;
    const auto k = static_cast<Eigen::Index>(from.dims());
    PosteriorDraws out = draws;
    out.values.middleCols(1, k) = draws.values.middleCols(1, k) * q.transpose();
    out.values.middleCols(1 + k, k) = draws.values.middleCols(1 + k, k) * q.transpose();
    return out;
}

void write_substitution_csv(std::ostream& out, const SubstitutionResult& result) {
    csv::write_row(out, {"level", "from_part", "to_part", "t", "mean", "ci_low", "ci_high",
                         "significant"});
    for (const auto& row : result.rows) {
        csv::write_row(out, {to_string(row.level), result.part_names[row.from],
                             result.part_names[row.to], csv::format(row.t),
                             csv::format(row.summary.mean), csv::format(row.summary.ci_low),
                             csv::format(row.summary.ci_high), row.summary.significant ? "1" : "0"});
    }
}

}  // namespace mlcoda
