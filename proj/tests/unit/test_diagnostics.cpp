#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "mlcoda/diagnostics.hpp"
#include "mlcoda/errors.hpp"

using namespace mlcoda;

namespace {

/// 200 x 4 AR(1) draws, rho = 0.7, fourth chain shifted by 0.3.
Eigen::MatrixXd load_ar1() {
    std::ifstream in(std::string(MLCODA_TEST_DATA) + "/chains_ar1.csv");
    REQUIRE(in);
    std::vector<double> v;
    std::string line;
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    }
    REQUIRE(v.size() == 800);
    Eigen::MatrixXd m(200, 4);
    for (Eigen::Index i = 0; i < 200; ++i)
        for (Eigen::Index c = 0; c < 4; ++c) m(i, c) = v[static_cast<std::size_t>(i * 4 + c)];
    return m;
}

Eigen::MatrixXd ar1(Eigen::Index n, Eigen::Index chains, double rho, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> norm(0.0, 1.0);
    Eigen::MatrixXd m(n, chains);
    const double innovation = std::sqrt(1.0 - rho * rho);
    for (Eigen::Index c = 0; c < chains; ++c) {
        double x = norm(rng);
        for (Eigen::Index i = 0; i < n; ++i) {
            x = rho * x + innovation * norm(rng);
            m(i, c) = x;
        }
    }
    return m;
}

}  // namespace

TEST_CASE("diagnostics match the reference implementation") {
    const auto x = load_ar1();
    CHECK(*split_rhat(x) == doctest::Approx(1.0156207434013347).epsilon(1e-10));
    CHECK(*ess(x, EssKind::bulk) == doctest::Approx(180.83756444674597).epsilon(1e-10));
    CHECK(*ess(x, EssKind::tail) == doctest::Approx(336.9930032591713).epsilon(1e-10));
    CHECK(*basic_ess(split_chains(x)) == doctest::Approx(180.07147565171206).epsilon(1e-10));

    const Eigen::VectorXd draws = x.col(0);
    const Eigen::VectorXd lp = -0.5 * draws.array().square();
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(200);
    const Eigen::VectorXd w_half = (-0.5 * lp.array()).exp();
    CHECK(cjs_distance(draws, ones, w_half) == doctest::Approx(0.0639640431825271).epsilon(1e-10));
    const auto s = power_scale_sensitivity(draws, lp);
    CHECK(s.index == doctest::Approx(0.5 * (0.0639640431825271 + 0.062046671489023215)).epsilon(1e-10));
    CHECK(s.informative);
}

TEST_CASE("split and rank helpers") {
    Eigen::MatrixXd m(5, 1);
    m << 1, 2, 3, 4, 5;
    const auto s = split_chains(m);
    CHECK(s.rows() == 2);
    CHECK(s.cols() == 2);
    CHECK(s(0, 1) == 4);
    Eigen::MatrixXd ties(2, 2);
    ties << 1, 1, 2, 3;
    const auto r = rank_normalize(ties);
    CHECK(r(0, 0) == r(0, 1));
    CHECK(r(0, 0) < 0.0);
    CHECK(r(1, 1) > r(1, 0));
}

TEST_CASE("independent chains look converged") {
    const auto x = ar1(1000, 4, 0.0, 7);
    CHECK(*split_rhat(x) < 1.01);
    const double e = *ess(x, EssKind::bulk);
    CHECK(e > 3200);
    CHECK(e < 4800);
    CHECK(*ess(x, EssKind::tail) > 2500);
}

TEST_CASE("separated chains are flagged") {
    auto x = ar1(500, 4, 0.0, 9);
    x.col(3).array() += 3.0;
    CHECK(*split_rhat(x) > 1.05);
    // A trend inside one chain only shows up after splitting.
    auto y = ar1(500, 2, 0.0, 11);
    for (Eigen::Index i = 0; i < 500; ++i) {
        y(i, 0) += 6.0 * static_cast<double>(i) / 500.0 - 3.0;
        y(i, 1) -= 6.0 * static_cast<double>(i) / 500.0 - 3.0;
    }
    CHECK(*basic_rhat(y) < 1.05);
    CHECK(*split_rhat(y) > 1.05);
}

TEST_CASE("constant draws have no R-hat or ESS") {
    const Eigen::MatrixXd c = Eigen::MatrixXd::Constant(100, 4, 2.5);
    CHECK_FALSE(split_rhat(c));
    CHECK_FALSE(ess(c, EssKind::bulk));
    CHECK_FALSE(ess(c, EssKind::tail));
}

TEST_CASE("ESS of an autocorrelated chain") {
    const double rho = 0.9;
    const auto x = ar1(5000, 4, rho, 13);
    const double expected = 20000.0 * (1 - rho) / (1 + rho);
    const double e = *ess(x, EssKind::bulk);
    CHECK(e > expected / 2);
    CHECK(e < expected * 2);
}

TEST_CASE("rank-based diagnostics ignore monotone transforms and chain order") {
    const auto x = load_ar1();
    const Eigen::MatrixXd ex = x.array().exp();
    CHECK(*split_rhat(ex) == doctest::Approx(*split_rhat(x)).epsilon(1e-12));
    CHECK(*ess(ex, EssKind::bulk) == doctest::Approx(*ess(x, EssKind::bulk)).epsilon(1e-12));
    CHECK(*ess(ex, EssKind::tail) == doctest::Approx(*ess(x, EssKind::tail)).epsilon(1e-12));

    Eigen::MatrixXd perm(200, 4);
    perm << x.col(2), x.col(0), x.col(3), x.col(1);
    CHECK(*split_rhat(perm) == doctest::Approx(*split_rhat(x)).epsilon(1e-12));
    CHECK(*ess(perm, EssKind::bulk) == doctest::Approx(*ess(x, EssKind::bulk)).epsilon(1e-12));
}

TEST_CASE("power-scaling sensitivity edge cases") {
    const auto x = load_ar1();
    const Eigen::VectorXd draws = x.col(1);
    // A flat prior has nothing to scale.
    const auto flat = power_scale_sensitivity(draws, Eigen::VectorXd::Constant(200, -3.0));
    CHECK(flat.index == 0.0);
    CHECK_FALSE(flat.informative);
    CHECK(flat.reliable);
    // alpha = 1 leaves the weights unchanged.
    CHECK(power_scale_sensitivity(draws, -0.5 * draws.array().square().matrix(), {1.0}).index == 0.0);
    CHECK(cjs_distance(draws, Eigen::VectorXd::Ones(200), Eigen::VectorXd::Ones(200)) == 0.0);

    // A prior so sharp that one draw takes all the weight.
    const Eigen::VectorXd sharp = -1e4 * draws.array().square();
    const auto s = power_scale_sensitivity(draws, sharp);
    CHECK_FALSE(s.reliable);
    CHECK(s.effective_weights < kMinEffectiveWeights);
}

TEST_CASE("report thresholds") {
    DiagnosticsReport r;
    r.parameters.push_back({"a", 1.01, 1000.0, 900.0, {}});
    CHECK(r.converged());
    CHECK(r.max_rhat() == 1.01);
    r.parameters.push_back({"b", 1.2, 50.0, 900.0, {}});
    CHECK_FALSE(r.converged());
    CHECK(r.breaches().size() >= 2);
    CHECK(r.max_rhat() == 1.2);
    r.parameters.push_back({"c", std::nullopt, std::nullopt, std::nullopt, {}});
    CHECK(r.max_rhat() == 1.2);
}
