#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "upbench/data.hpp"
#include "upbench/rng.hpp"

using namespace upbench;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    const auto path = (std::filesystem::temp_directory_path() / name).string();
    std::ofstream out(path);
    out << content;
    return path;
}

}  // namespace

TEST_CASE("min-max scaling maps {2,4,6} to {0,0.5,1}") {
    const auto path = write_temp("upbench_minmax.csv", "a\n2\n4\n6\n");
    const auto cm = load_covariates(path, {{"a"}, {}});
    CHECK(cm.n() == 3);
    CHECK(cm.d() == 1);
    CHECK(cm.values(0, 0) == doctest::Approx(0.0));
    CHECK(cm.values(1, 0) == doctest::Approx(0.5));
    CHECK(cm.values(2, 0) == doctest::Approx(1.0));
}

TEST_CASE("constant column scales to zeros and sets the warning flag") {
    const auto path = write_temp("upbench_const.csv", "a,b\n1,5\n2,5\n3,5\n");
    const auto cm = load_covariates(path, {{"a", "b"}, {}});
    CHECK(cm.constant_column[0] == false);
    CHECK(cm.constant_column[1] == true);
    CHECK(cm.values(0, 1) == 0.0);
    CHECK(cm.values(2, 1) == 0.0);
}

TEST_CASE("discrete columns encode by first appearance then scale") {
    const auto path = write_temp("upbench_disc.csv",
                                 "seg,val\nred,1\nblue,2\nred,3\ngreen,4\nblue,5\n");
    const auto cm = load_covariates(path, {{"seg", "val"}, {"seg"}});
    // codes: red=0, blue=1, green=2 -> scaled by max code 2
    CHECK(cm.values(0, 0) == doctest::Approx(0.0));
    CHECK(cm.values(1, 0) == doctest::Approx(0.5));
    CHECK(cm.values(2, 0) == doctest::Approx(0.0));
    CHECK(cm.values(3, 0) == doctest::Approx(1.0));
    CHECK(cm.column_kinds[0] == ColumnKind::Discrete);
    CHECK(cm.column_kinds[1] == ColumnKind::Continuous);
}

TEST_CASE("loading the same file twice is bit-identical") {
    const auto path = write_temp("upbench_rpt.csv", "a,b\n0.25,x\n0.5,y\n0.75,x\n1.0,z\n");
    const ColumnMapping mapping{{"a", "b"}, {"b"}};
    const auto m1 = load_covariates(path, mapping);
    const auto m2 = load_covariates(path, mapping);
    CHECK(m1.values == m2.values);
}

TEST_CASE("loader errors: missing file, bad cell, ragged row") {
    CHECK_THROWS_AS(load_covariates("/nonexistent/upbench.csv", {{"a"}, {}}), IoError);

    const auto bad = write_temp("upbench_bad.csv", "a\n1\noops\n3\n");
    CHECK_THROWS_WITH_AS(load_covariates(bad, {{"a"}, {}}),
                         doctest::Contains("row 2"), ParseError);

    const auto ragged = write_temp("upbench_ragged.csv", "a,b\n1,2\n3\n");
    CHECK_THROWS_AS(load_covariates(ragged, {{"a", "b"}, {}}), ParseError);

    const auto missing_col = write_temp("upbench_missing.csv", "a\n1\n2\n");
    CHECK_THROWS_AS(load_covariates(missing_col, {{"zz"}, {}}), ParseError);
}

TEST_CASE("scaling is idempotent on already-scaled data") {
    Rng rng(11);
    Matrix raw(200, 6);
    for (auto& v : raw.data()) v = rng.uniform(-3.0, 40.0);
    min_max_scale_columns(raw);
    Matrix once = raw;
    min_max_scale_columns(raw);
    for (std::size_t i = 0; i < raw.rows(); ++i)
        for (std::size_t j = 0; j < raw.cols(); ++j)
            CHECK(std::abs(raw(i, j) - once(i, j)) <= 1e-12);
}

TEST_CASE("synthesize_covariates: determinism, ranges, level sets") {
    const auto a = synthesize_covariates(10, 8, 7, 1);
    const auto b = synthesize_covariates(10, 8, 7, 1);
    CHECK(a.values == b.values);

    const auto cont = synthesize_covariates(100, 3, 0, 7);
    for (double v : cont.values.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    const auto disc = synthesize_covariates(100, 3, 3, 7);
    const std::set<double> levels{0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
    for (double v : disc.values.data()) CHECK(levels.count(v) == 1);

    CHECK_THROWS_AS(synthesize_covariates(10, 3, 4, 1), std::invalid_argument);
}

TEST_CASE("split: paper ratios with floor arithmetic") {
    const auto s100 = split(100, SplitRatios{}, 3);
    CHECK(s100.train.size() == 49);
    CHECK(s100.val.size() == 21);
    CHECK(s100.test.size() == 30);

    const auto s64k = split(64000, SplitRatios{}, 3);
    CHECK(s64k.train.size() == 31360);
    CHECK(s64k.val.size() == 13440);
    CHECK(s64k.test.size() == 19200);
}

TEST_CASE("split: deterministic per seed and a disjoint exhaustive partition") {
    const auto a = split(1000, SplitRatios{}, 17);
    const auto b = split(1000, SplitRatios{}, 17);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    CHECK(a.test == b.test);

    Rng rng(555);
    for (int rep = 0; rep < 25; ++rep) {
        const std::size_t n = 3 + static_cast<std::size_t>(rng.uniform_int(400));
        const auto s = split(n, SplitRatios{}, rng.next_u64());
        std::set<int> seen;
        for (int i : s.train) seen.insert(i);
        for (int i : s.val) seen.insert(i);
        for (int i : s.test) seen.insert(i);
        CHECK(seen.size() == n);  // disjoint and exhaustive over 0..n-1
        CHECK(*seen.begin() == 0);
        CHECK(*seen.rbegin() == static_cast<int>(n) - 1);
    }

    CHECK_THROWS_AS(split(2, SplitRatios{}, 1), std::invalid_argument);
    CHECK_THROWS_AS(split(100, SplitRatios{0.5, 0.2, 0.2}, 1), std::invalid_argument);
}

TEST_CASE("covariate invariants are validated") {
    auto cm = synthesize_covariates(50, 4, 2, 9);
    CHECK_NOTHROW(cm.validate());
    cm.values(0, 0) = 1.5;
    CHECK_THROWS_AS(cm.validate(), std::invalid_argument);
}
