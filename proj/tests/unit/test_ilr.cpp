#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "mlcoda/errors.hpp"
#include "mlcoda/ilr.hpp"

using namespace mlcoda;
using testing::max_rel_diff;
using testing::random_composition;

namespace {

Eigen::MatrixXi sleep_sbp() {
    Eigen::MatrixXi m(5, 4);
    m << 1, 1, 0, 0,
         1, -1, 0, 0,
         -1, 0, 1, 0,
         -1, 0, -1, 1,
         -1, 0, -1, -1;
    return m;
}

}  // namespace

TEST_CASE("partition rules") {
    CHECK_NOTHROW(validate_sbp(sleep_sbp()));

    Eigen::MatrixXi nested(3, 2);
    nested << 1, 1, 1, -1, -1, 0;
    CHECK_NOTHROW(validate_sbp(nested));

    Eigen::MatrixXi crossing(3, 2);
    crossing << 1, 1, 1, 0, -1, -1;
    CHECK_THROWS_AS(validate_sbp(crossing), DataError);

    Eigen::MatrixXi first_has_zero(3, 2);
    first_has_zero << 1, 1, 0, -1, -1, 0;
    CHECK_THROWS_AS(validate_sbp(first_has_zero), DataError);

    Eigen::MatrixXi empty_minus(3, 2);
    empty_minus << 1, 1, 1, 1, -1, 0;
    CHECK_THROWS_AS(validate_sbp(empty_minus), DataError);

    Eigen::MatrixXi bad_entry(3, 2);
    bad_entry << 2, 1, 1, -1, -1, 0;
    CHECK_THROWS_AS(validate_sbp(bad_entry), DataError);

    CHECK_THROWS_AS(validate_sbp(Eigen::MatrixXi::Ones(3, 3)), DataError);
    CHECK_THROWS_AS(validate_sbp(Eigen::MatrixXi::Ones(3, 2), {"a", "b"}), DataError);
}

TEST_CASE("pivot partition") {
    CHECK(default_sbp(2).matrix() == (Eigen::MatrixXi(2, 1) << 1, -1).finished());
    CHECK(default_sbp(3).matrix() == (Eigen::MatrixXi(3, 2) << 1, 0, -1, 1, -1, -1).finished());
    CHECK_NOTHROW(validate_sbp(default_sbp(5).matrix()));
    CHECK(default_sbp(3).part_names() == std::vector<std::string>{"x1", "x2", "x3"});
    CHECK_THROWS_AS(default_sbp(1), DataError);
}

TEST_CASE("basis coefficients of the five-part sleep partition") {
    const auto b = build_basis(validate_sbp(sleep_sbp()));
    const auto& v = b.contrast;
    CHECK(v(0, 0) == doctest::Approx(std::sqrt(3.0 / 10.0)).epsilon(1e-15));
    CHECK(v(2, 0) == doctest::Approx(-std::sqrt(2.0 / 15.0)).epsilon(1e-15));
    CHECK(v(0, 1) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
    CHECK(v(1, 1) == doctest::Approx(-std::sqrt(0.5)).epsilon(1e-15));
    CHECK(v(2, 2) == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-15));
    CHECK(v(3, 2) == doctest::Approx(-std::sqrt(1.0 / 6.0)).epsilon(1e-15));
    CHECK(v(0, 2) == 0.0);
    CHECK(b.plus_counts == std::vector<int>{2, 1, 1, 1});
    CHECK(b.minus_counts == std::vector<int>{3, 1, 2, 1});

    const auto two = build_basis(default_sbp(2));
    CHECK(two.contrast(0, 0) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
    CHECK(two.contrast(1, 0) == doctest::Approx(-std::sqrt(0.5)).epsilon(1e-15));
}

TEST_CASE("basis orthonormality and centring") {
    for (std::size_t d = 2; d <= 8; ++d) {
        const auto b = build_basis(default_sbp(d));
        const auto n = static_cast<Eigen::Index>(d);
        const Eigen::MatrixXd gram = b.contrast.transpose() * b.contrast;
        CHECK((gram - Eigen::MatrixXd::Identity(n - 1, n - 1)).cwiseAbs().maxCoeff() < 1e-12);
        const Eigen::MatrixXd proj = b.contrast * b.contrast.transpose();
        const Eigen::MatrixXd centring =
            Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(d));
        CHECK((proj - centring).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(b.contrast.colwise().sum().cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("forward and inverse transform on worked values") {
    const auto b = build_basis(default_sbp(2));
    const IlrCoords z = ilr(Composition({16, 8}, 24), b);
    CHECK(z(0) == doctest::Approx(0.490129071734273596).epsilon(1e-14));
    const auto x = ilr_inverse(z, b, 24.0);
    CHECK(x[0] == doctest::Approx(16.0).epsilon(1e-14));
    CHECK(x[1] == doctest::Approx(8.0).epsilon(1e-14));

    const auto b5 = build_basis(default_sbp(5));
    CHECK(ilr(neutral(5, 1440.0), b5).cwiseAbs().maxCoeff() < 1e-14);
    const auto origin = ilr_inverse(IlrCoords::Zero(4), b5, 24.0);
    for (std::size_t d = 0; d < 5; ++d) CHECK(origin[d] == doctest::Approx(4.8).epsilon(1e-15));

    CHECK_THROWS_AS(ilr(neutral(4, 1.0), b5), ShapeError);
    IlrCoords bad = IlrCoords::Zero(4);
    bad(1) = NAN;
    CHECK_THROWS_AS(ilr_inverse(bad, b5, 1.0), DataError);
}

TEST_CASE("coordinates match the geometric-mean ratio form") {
    const auto b = build_basis(validate_sbp(sleep_sbp()));
    const IlrCoords z = ilr(Composition({480, 60, 30, 210, 660}, 1440), b);
    CHECK(z(0) == doctest::Approx(0.0590266913680786167).epsilon(1e-13));
    CHECK(z(1) == doctest::Approx(1.47038721520282079).epsilon(1e-14));
    CHECK(z(2) == doctest::Approx(-2.05632728908287000).epsilon(1e-14));
    CHECK(z(3) == doctest::Approx(-0.809730817728430177).epsilon(1e-14));

    // Direct transcription of the ratio form on random compositions.
    std::mt19937_64 rng(29);
    for (int i = 0; i < 500; ++i) {
        const auto x = random_composition(5, rng, 1440.0);
        const IlrCoords got = ilr(x, b);
        const double g12 = std::sqrt(x[0] * x[1]);
        const double g345 = std::cbrt(x[2] * x[3] * x[4]);
        CHECK(std::abs(got(0) - std::sqrt(6.0 / 5.0) * std::log(g12 / g345)) < 1e-10);
        CHECK(std::abs(got(1) - std::sqrt(0.5) * std::log(x[0] / x[1])) < 1e-10);
        CHECK(std::abs(got(2) - std::sqrt(2.0 / 3.0) * std::log(x[2] / std::sqrt(x[3] * x[4]))) < 1e-10);
        CHECK(std::abs(got(3) - std::sqrt(0.5) * std::log(x[3] / x[4])) < 1e-10);
    }
}

TEST_CASE("linearity, isometry and round trip") {
    std::mt19937_64 rng(31);
    for (std::size_t d = 3; d <= 5; ++d) {
        const auto b = build_basis(default_sbp(d));
        for (int i = 0; i < 300; ++i) {
            const auto x = random_composition(d, rng, 1440.0);
            const auto y = random_composition(d, rng, 1440.0);
            CHECK((ilr(perturb(x, y), b) - ilr(x, b) - ilr(y, b)).cwiseAbs().maxCoeff() < 1e-10);
            CHECK((ilr(power(x, 2.5), b) - 2.5 * ilr(x, b)).cwiseAbs().maxCoeff() < 1e-10);
            CHECK(std::abs(inner_product(x, y) - ilr(x, b).dot(ilr(y, b))) < 1e-10);
            CHECK(max_rel_diff(ilr_inverse(ilr(x, b), b, 1440.0), x) < 1e-10);
        }
    }
}

TEST_CASE("partition text parsing") {
    const auto plain = parse_sbp("1 1 0 0\n1 -1 0 0\n-1 0 1 0\n-1 0 -1 1\n-1 0 -1 -1\n");
    CHECK(plain.matrix() == sleep_sbp());

    const auto with_header = parse_sbp("a,b,c\n1,0\n-1,1\n-1,-1\n");
    CHECK(with_header.parts() == 3);

    const auto labelled = parse_sbp("sleep;1;1\nwake;1;-1\nsb;-1;0\n");
    CHECK(labelled.part_names() == std::vector<std::string>{"sleep", "wake", "sb"});

    CHECK_THROWS_AS(parse_sbp("1 1\n1 -1\n"), DataError);
    CHECK_THROWS_AS(parse_sbp("1 x\n-1 1\n-1 -1\n"), DataError);
}
