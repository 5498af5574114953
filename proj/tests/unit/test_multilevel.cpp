#include <doctest.h>

#include <random>
#include <sstream>

#include "helpers.hpp"
#include "mlcoda/csv.hpp"
#include "mlcoda/errors.hpp"
#include "mlcoda/multilevel.hpp"

using namespace mlcoda;
using testing::max_rel_diff;
using testing::random_composition;

namespace {

csv::Table table_from(const std::string& text) {
    std::istringstream in(text);
    return csv::parse(in);
}

const Schema kSchema{"id", {"a", "b", "c"}, "y", {}};

/// Unbalanced random table: J clusters with 1..10 rows each.
LongTable random_table(std::size_t clusters, std::mt19937_64& rng, std::size_t parts = 4) {
    std::uniform_int_distribution<std::size_t> size(1, 10);
    LongTable t;
    t.total = 1440.0;
    for (std::size_t d = 0; d < parts; ++d) t.part_names.push_back("p" + std::to_string(d));
    for (std::size_t j = 0; j < clusters; ++j) {
        t.cluster_labels.push_back("c" + std::to_string(j));
        const std::size_t n = size(rng);
        for (std::size_t i = 0; i < n; ++i) {
            t.rows.push_back(Observation{j, i, random_composition(parts, rng, 1440.0), 0.0, {}});
        }
    }
    return t;
}

}  // namespace

TEST_CASE("csv reading and number parsing") {
    const auto t = table_from("id,a,\"b,c\"\n1,2.5,\"x \"\"q\"\"\"\n2,NA,\n");
    CHECK(t.header == std::vector<std::string>{"id", "a", "b,c"});
    CHECK(t.rows[0][2] == "x \"q\"");
    CHECK(*csv::to_number("2.5") == 2.5);
    CHECK_FALSE(csv::to_number("NA"));
    CHECK_FALSE(csv::to_number(""));
    CHECK_THROWS_AS(csv::to_number("abc"), DataError);
    CHECK(csv::format(0.1) == "0.1");
    CHECK(std::stod(csv::format(1.0 / 3.0)) == 1.0 / 3.0);
    CHECK(csv::escape("a,b") == "\"a,b\"");
}

TEST_CASE("ingest drops a row with a zero part") {
    const auto r = ingest(table_from("id,a,b,c,y\n1,600,400,440,1\n1,0,1000,440,2\n2,500,500,440,3\n"),
                          kSchema, 1440.0);
    CHECK(r.table.rows.size() == 2);
    CHECK(r.report.dropped_zero == 1);
    CHECK(r.report.dropped() == 1);
    REQUIRE(r.report.messages.size() == 1);
    CHECK(r.report.messages[0].find("dropped (zero part)") != std::string::npos);
    CHECK(r.source_rows == std::vector<std::size_t>{0, 2});
    CHECK(r.table.clusters() == 2);
}

TEST_CASE("ingest re-closes small deviations and rejects large ones") {
    const auto r = ingest(table_from("id,a,b,c,y\n1,600,400,439.9,1\n1,600,400,200,2\n2,500,500,440,3\n"),
                          kSchema, 1440.0);
    CHECK(r.table.rows.size() == 2);
    CHECK(r.report.reclosed == 1);
    CHECK(r.report.rejected_total == 1);
    const auto& x = r.table.rows[0].parts;
    CHECK(x[0] + x[1] + x[2] == doctest::Approx(1440.0).epsilon(1e-12));
    CHECK(x[0] / x[1] == doctest::Approx(1.5).epsilon(1e-14));
}

TEST_CASE("ingest drops missing values and checks columns") {
    const auto r = ingest(table_from("id,a,b,c,y\n1,600,400,440,\n1,600,400,440,2\n"), kSchema, 1440.0);
    CHECK(r.report.dropped_missing == 1);
    CHECK_THROWS_AS(ingest(table_from("id,a,b,y\n1,600,840,1\n"), kSchema, 1440.0), DataError);
    CHECK_THROWS_AS(ingest(table_from("id,a,b,c,y\n1,0,1000,440,1\n"), kSchema, 1440.0), DataError);
    CHECK_THROWS_AS(ingest(table_from("id,a,y\n1,1440,1\n"), Schema{"id", {"a"}, "y", {}}, 1440.0),
                    DataError);
}

TEST_CASE("worked two-part decomposition") {
    LongTable t;
    t.total = 24.0;
    t.part_names = {"a", "b"};
    t.cluster_labels = {"p"};
    t.rows = {Observation{0, 0, Composition({18, 6}, 24), 0, {}},
              Observation{0, 1, Composition({8, 16}, 24), 0, {}}};
    const auto basis = build_basis(default_sbp(2));
    const auto s = between_within_split(t, basis);
    CHECK(s.between_compositions[0][0] == doctest::Approx(13.2122461732037256).epsilon(1e-14));
    CHECK(s.between(0, 0) == doctest::Approx(0.143353563738909814).epsilon(1e-13));
    CHECK(s.within(0, 0) == doctest::Approx(0.633482635473183410).epsilon(1e-13));
    CHECK(s.within(1, 0) == doctest::Approx(-0.633482635473183410).epsilon(1e-13));
}

TEST_CASE("single rows and identical rows have zero within coordinates") {
    std::mt19937_64 rng(41);
    const auto x = random_composition(3, rng, 1440.0);
    LongTable t;
    t.total = 1440.0;
    t.part_names = {"a", "b", "c"};
    t.cluster_labels = {"solo", "same"};
    t.rows = {Observation{0, 0, random_composition(3, rng, 1440.0), 0, {}},
              Observation{1, 0, x, 0, {}}, Observation{1, 1, x, 0, {}}};
    const auto s = between_within_split(t, build_basis(default_sbp(3)));
    CHECK(s.within.cwiseAbs().maxCoeff() < 1e-12);
    CHECK(max_rel_diff(s.within_compositions[0], neutral(3, 1440.0)) < 1e-12);
}

TEST_CASE("decomposition identities on unbalanced random tables") {
    std::mt19937_64 rng(43);
    const auto basis = build_basis(default_sbp(4));
    for (int rep = 0; rep < 10; ++rep) {
        const auto t = random_table(100, rng);
        const auto s = between_within_split(t, basis);
        const auto groups = t.rows_by_cluster();
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
            const auto j = static_cast<Eigen::Index>(t.rows[r].cluster);
            const auto rr = static_cast<Eigen::Index>(r);
            CHECK((s.total.row(rr) - s.between.row(j) - s.within.row(rr)).cwiseAbs().maxCoeff() < 1e-12);
            const IlrCoords sum = (s.between.row(j) + s.within.row(rr)).transpose();
            CHECK(max_rel_diff(ilr_inverse(sum, basis, 1440.0), t.rows[r].parts) < 1e-10);
            CHECK(max_rel_diff(perturb(s.between_compositions[static_cast<std::size_t>(j)],
                                       s.within_compositions[r]),
                               t.rows[r].parts) < 1e-10);
        }
        for (std::size_t j = 0; j < groups.size(); ++j) {
            Eigen::VectorXd mean_w = Eigen::VectorXd::Zero(3), mean_z = Eigen::VectorXd::Zero(3);
            for (auto r : groups[j]) {
                mean_w += s.within.row(static_cast<Eigen::Index>(r)).transpose();
                mean_z += s.total.row(static_cast<Eigen::Index>(r)).transpose();
            }
            const auto n = static_cast<double>(groups[j].size());
            CHECK((mean_w / n).cwiseAbs().maxCoeff() < 1e-10);
            CHECK((mean_z / n - s.between.row(static_cast<Eigen::Index>(j)).transpose()).cwiseAbs().maxCoeff() <
                  1e-10);
        }
    }
}

TEST_CASE("decomposition does not depend on row order within clusters") {
    std::mt19937_64 rng(47);
    const auto basis = build_basis(default_sbp(4));
    auto t = random_table(20, rng);
    const auto before = between_within_split(t, basis);
    std::reverse(t.rows.begin(), t.rows.end());
    const auto after = between_within_split(t, basis);
    CHECK((before.between - after.between).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("coordinates around a reference") {
    std::mt19937_64 rng(53);
    const auto basis = build_basis(default_sbp(3));
    const auto x = random_composition(3, rng, 1440.0);
    const auto ref = random_composition(3, rng, 1440.0);
    CHECK(coordinates_of(x, x, basis).within.cwiseAbs().maxCoeff() < 1e-12);
    CHECK((coordinates_of(x, neutral(3, 1440.0), basis).within - ilr(x, basis)).cwiseAbs().maxCoeff() < 1e-12);
    const auto c = coordinates_of(x, ref, basis);
    CHECK((c.between + c.within - ilr(x, basis)).cwiseAbs().maxCoeff() < 1e-13);
    CHECK_THROWS_AS(coordinates_of(x, neutral(4, 1440.0), basis), ShapeError);
}
