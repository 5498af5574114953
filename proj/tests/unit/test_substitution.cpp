#include <doctest.h>

#include <sstream>

#include "helpers.hpp"
#include "mlcoda/errors.hpp"
#include "mlcoda/substitution.hpp"

using namespace mlcoda;
using testing::make_fixture;

namespace {

Sbp sleep_sbp() {
    Eigen::MatrixXi m(5, 4);
    m << 1, 1, 0, 0,
         1, -1, 0, 0,
         -1, 0, 1, 0,
         -1, 0, -1, 1,
         -1, 0, -1, -1;
    return validate_sbp(m, {"Sleep", "Awake", "MVPA", "LPA", "SB"});
}

/// Draws with fixed coefficient rows; intercept and SDs are filler.
PosteriorDraws constant_draws(std::size_t parts, const std::vector<Eigen::VectorXd>& betas) {
    PosteriorDraws d;
    d.parts = parts;
    d.chains = 1;
    d.iterations = betas.size();
    const auto k = static_cast<Eigen::Index>(2 * (parts - 1));
    d.values.resize(static_cast<Eigen::Index>(betas.size()), 1 + k + 2);
    for (std::size_t r = 0; r < betas.size(); ++r) {
        const auto i = static_cast<Eigen::Index>(r);
        d.values(i, 0) = 1.0;
        d.values.row(i).segment(1, k) = betas[r].transpose();
        d.values(i, k + 1) = 1.0;
        d.values(i, k + 2) = 1.0;
    }
    return d;
}

/// The fixture's fit, run once.
const testing::Fixture& fitted() {
    static const testing::Fixture f = make_fixture(20, 4, 3, 37);
    return f;
}

const PosteriorDraws& fitted_draws() {
    static const PosteriorDraws d = [] {
        SamplerConfig cfg;
        cfg.chains = 2;
        cfg.warmup = 200;
        cfg.iterations = 200;
        cfg.seed = 41;
        const auto& f = fitted();
        return fit(f.spec, f.design, default_priors(f.design.y), cfg);
    }();
    return d;
}

}  // namespace

TEST_CASE("between-level reallocation moves minutes between two parts") {
    const auto basis = build_basis(sleep_sbp());
    const auto ref = user_reference(Composition({480, 60, 30, 210, 660}, 1440), basis);
    const auto r = reallocate(ref, basis, 4, 0, 30.0, Level::between);
    const std::vector<double> expected{510, 60, 30, 210, 630};
    for (std::size_t d = 0; d < 5; ++d) CHECK(r.composition[d] == expected[d]);
    CHECK((r.between - ilr(r.composition, basis)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(r.within.isZero());

    const auto w = reallocate(ref, basis, 4, 0, 30.0, Level::within);
    CHECK(w.between == ref.z_b0);
    CHECK((w.within - (ilr(w.composition, basis) - ref.z_b0)).cwiseAbs().maxCoeff() < 1e-15);

    // Moving only the share t / total keeps the composition positive for any t below the limit.
    const auto m = reallocate(ref, basis, 4, 0, 30.0, Level::within, WithinMode::multiplicative);
    CHECK(m.composition[0] / m.composition[4] ==
          doctest::Approx(480.0 * (1 + 30.0 / 1440) / (660.0 * (1 - 30.0 / 1440))).epsilon(1e-14));
}

TEST_CASE("zero reallocation is exactly the reference") {
    const auto basis = build_basis(sleep_sbp());
    const auto ref = user_reference(Composition({480, 60, 30, 210, 660}, 1440), basis);
    const auto d = constant_draws(5, std::vector<Eigen::VectorXd>(100, Eigen::VectorXd::LinSpaced(8, -1, 1)));
    for (Level level : {Level::between, Level::within}) {
        const auto r = reallocate(ref, basis, 1, 2, 0.0, level);
        const auto delta = prediction_delta(d, {r.between, r.within}, {ref.z_b0, IlrCoords::Zero(4)});
        CHECK(delta.isZero(0.0));
    }
}

TEST_CASE("reallocation limits") {
    const auto basis = build_basis(sleep_sbp());
    const auto ref = user_reference(Composition({480, 60, 30, 210, 660}, 1440), basis);
    CHECK_THROWS_AS(reallocate(ref, basis, 2, 0, 30.0, Level::between), UsageError);
    CHECK_THROWS_AS(reallocate(ref, basis, 2, 0, -1.0, Level::between), UsageError);
    CHECK_THROWS_AS(reallocate(ref, basis, 2, 2, 1.0, Level::between), UsageError);
    CHECK_THROWS_AS(reallocate(ref, basis, 5, 0, 1.0, Level::between), UsageError);
    CHECK_NOTHROW(reallocate(ref, basis, 2, 0, 29.0, Level::between));
    CHECK_THROWS_AS(user_reference(Composition({1, 2, 3}, 6), basis), ShapeError);
}

TEST_CASE("hand-computed three-part difference") {
    const auto basis = build_basis(default_sbp(3));
    const auto ref = user_reference(Composition({600, 400, 440}, 1440), basis);
    Eigen::VectorXd beta(4);
    beta << 0.5, -1.0, 2.0, 0.25;
    const auto d = constant_draws(3, std::vector<Eigen::VectorXd>(100, beta));
    const auto balance1 = [](double a, double b, double c) { return std::sqrt(2.0 / 3.0) * std::log(a / std::sqrt(b * c)); };
    const auto balance2 = [](double b, double c) { return std::sqrt(0.5) * std::log(b / c); };

    const double between = 0.5 * (balance1(660, 340, 440) - balance1(600, 400, 440)) -
                           1.0 * (balance2(340, 440) - balance2(400, 440));
    const double within = 2.0 * (balance1(660, 340, 440) - balance1(600, 400, 440)) +
                          0.25 * (balance2(340, 440) - balance2(400, 440));
    SubstitutionGrid grid{{{1, 0}}, {60.0}, {Level::between, Level::within}};
    const auto res = estimate_delta(d, basis, grid, ref);
    REQUIRE(res.rows.size() == 2);
    CHECK(res.rows[0].summary.mean == doctest::Approx(between).epsilon(1e-12));
    CHECK(res.rows[1].summary.mean == doctest::Approx(within).epsilon(1e-12));
    CHECK(res.rows[0].level == Level::between);
    CHECK(res.rows[1].level == Level::within);
}

TEST_CASE("prediction and coefficient forms agree on a fitted model") {
    const auto& f = fitted();
    const auto& draws = fitted_draws();
    const auto ref = sample_reference(f.data.table, f.basis);
    for (Level level : {Level::between, Level::within}) {
        for (double t : {1.0, 15.0, 30.0}) {
            const auto r = reallocate(ref, f.basis, 2, 0, t, level);
            const LevelCoords base{ref.z_b0, IlrCoords::Zero(2)};
            const auto p = prediction_delta(draws, {r.between, r.within}, base);
            const auto q = formula_delta(draws, {r.between, r.within}, base);
            CHECK((p - q).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("differences do not depend on the partition") {
    const auto& f = fitted();
    const auto& draws = fitted_draws();
    const auto other = build_basis(default_sbp(3, f.basis.part_names));
    const auto moved = change_basis(draws, f.basis, other);
    const auto grid = make_grid(3, 1, 30);
    const auto a = estimate_delta(draws, f.basis, grid, sample_reference(f.data.table, f.basis));
    const auto b = estimate_delta(moved, other, grid, sample_reference(f.data.table, other));
    REQUIRE(a.rows.size() == b.rows.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        worst = std::max({worst, std::abs(a.rows[i].summary.mean - b.rows[i].summary.mean),
                          std::abs(a.rows[i].summary.ci_low - b.rows[i].summary.ci_low),
                          std::abs(a.rows[i].summary.ci_high - b.rows[i].summary.ci_high)});
    }
    CHECK(worst < 1e-10);
    // Round trip restores the coefficients.
    CHECK((change_basis(moved, other, f.basis).values - draws.values).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("swapping the direction cancels to first order") {
    const auto& f = fitted();
    const auto& draws = fitted_draws();
    const auto ref = sample_reference(f.data.table, f.basis);
    const LevelCoords base{ref.z_b0, IlrCoords::Zero(2)};
    for (Level level : {Level::between, Level::within}) {
        for (const auto& [a, b] : std::vector<std::pair<std::size_t, std::size_t>>{{0, 2}, {1, 2}, {0, 1}}) {
            const auto ab = reallocate(ref, f.basis, a, b, 1.0, level);
            const auto ba = reallocate(ref, f.basis, b, a, 1.0, level);
            const double fwd = prediction_delta(draws, {ab.between, ab.within}, base).mean();
            const double back = prediction_delta(draws, {ba.between, ba.within}, base).mean();
            CHECK(std::abs(fwd + back) < std::abs(fwd));
            // The leftover is second order: halving t quarters it.
            const auto ab2 = reallocate(ref, f.basis, a, b, 0.5, level);
            const auto ba2 = reallocate(ref, f.basis, b, a, 0.5, level);
            const double half = prediction_delta(draws, {ab2.between, ab2.within}, base).mean() +
                                prediction_delta(draws, {ba2.between, ba2.within}, base).mean();
            CHECK(half / (fwd + back) == doctest::Approx(0.25).epsilon(0.02));
        }
    }
}

TEST_CASE("the sample reference is the mean of the cluster compositions") {
    const auto basis = build_basis(default_sbp(3));
    LongTable t;
    t.total = 24.0;
    t.part_names = {"x1", "x2", "x3"};
    t.cluster_labels = {"a", "b"};
    const Composition x({8, 10, 6}, 24);
    t.rows = {Observation{0, 0, x, 0, {}}, Observation{1, 0, x, 0, {}}, Observation{1, 1, x, 0, {}}};
    const auto ref = sample_reference(t, basis);
    CHECK(testing::max_rel_diff(ref.x0, x) < 1e-14);
    CHECK(ref.source == ReferenceComposition::Source::sample_mean);
    CHECK((ref.z_b0 - ilr(x, basis)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("no between effect and a within effect give the expected verdicts") {
    // Within effects sized so the smallest within difference at t = 30
    // (Sleep <-> SB) sits about 7 posterior SDs from zero with J = 100, I = 5.
    auto params = sim::default_dgp(3);
    params.beta << 0.0, 0.0, -1.5, 0.75;
    const auto data = sim::generate(params, 100, 5, 61);
    const auto basis = sim::analysis_basis(params);
    const auto spec = make_spec(data.table, basis);
    const auto design = build_design(between_within_split(data.table, basis), data.table, spec);
    SamplerConfig cfg;
    cfg.chains = 2;
    cfg.warmup = 500;
    cfg.iterations = 1000;
    cfg.seed = 67;
    const auto draws = fit(spec, design, default_priors(design.y), cfg);
    const auto res = estimate_delta(draws, basis, make_grid(3, 30, 30), sample_reference(data.table, basis));
    for (const auto& row : res.rows) {
        INFO(to_string(row.level), " ", row.from, "->", row.to);
        CHECK(row.summary.significant == (row.level == Level::within));
    }
}

TEST_CASE("grid layout and output") {
    const auto g = make_grid(4);
    CHECK(g.pairs.size() == 12);
    CHECK(g.amounts.size() == 30);
    CHECK(g.size() == 2 * 4 * 3 * 30);
    CHECK_THROWS_AS(make_grid(1), UsageError);
    CHECK_THROWS_AS(make_grid(3, 5, 2), UsageError);

    const auto& f = fitted();
    const auto res = estimate_delta(fitted_draws(), f.basis, make_grid(3, 1, 2, {Level::between}),
                                    sample_reference(f.data.table, f.basis), {WithinMode::absolute, true, 2});
    CHECK(res.rows.size() == 12);
    CHECK(res.rows[0].deltas.size() == 400);
    std::ostringstream out;
    write_substitution_csv(out, res);
    const auto text = out.str();
    CHECK(text.rfind("level,from_part,to_part,t,mean,ci_low,ci_high,significant\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 13);
    CHECK_THROWS_AS(estimate_delta(fitted_draws(), build_basis(default_sbp(4)), g,
                                   sample_reference(f.data.table, f.basis)),
                    ShapeError);
}
