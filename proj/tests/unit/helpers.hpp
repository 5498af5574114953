#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

#include "mlcoda/composition.hpp"
#include "mlcoda/model.hpp"
#include "mlcoda/multilevel.hpp"
#include "mlcoda/simulation.hpp"

namespace testing {

/// Random composition with log-normal parts, closed to `total`.
inline mlcoda::Composition random_composition(std::size_t parts, std::mt19937_64& rng,
                                              double total = 1.0, double spread = 1.5) {
    std::normal_distribution<double> n(0.0, spread);
    std::vector<double> raw(parts);
    for (auto& v : raw) v = std::exp(n(rng));
    return mlcoda::closure(raw, total);
}

inline double max_rel_diff(const mlcoda::Composition& a, const mlcoda::Composition& b) {
    double worst = 0.0;
    for (std::size_t d = 0; d < a.size(); ++d) {
        worst = std::max(worst, std::abs(a[d] - b[d]) / std::abs(b[d]));
    }
    return worst;
}

/// Simulated data with everything needed to fit it.
struct Fixture {
    mlcoda::sim::Dataset data;
    mlcoda::OrthonormalBasis basis;
    mlcoda::DecomposedCoords coords;
    mlcoda::ModelSpec spec;
    mlcoda::Design design;
};

inline Fixture make_fixture(std::size_t clusters, std::size_t cluster_size, std::size_t parts,
                            std::uint64_t seed) {
    const auto params = mlcoda::sim::default_dgp(parts);
    Fixture f{mlcoda::sim::generate(params, clusters, cluster_size, seed),
              mlcoda::sim::analysis_basis(params), {}, {}, {}};
    f.coords = mlcoda::between_within_split(f.data.table, f.basis);
    f.spec = mlcoda::make_spec(f.data.table, f.basis);
    f.design = mlcoda::build_design(f.coords, f.data.table, f.spec);
    return f;
}

}  // namespace testing
