#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "hpsl/cloud.hpp"
#include "hpsl/cloud_io.hpp"
#include "hpsl/rng.hpp"
#include "test_util.hpp"

using namespace hpsl;

TEST_CASE("normalize_unit_ball centers and scales", "[cloud]") {
    PointCloud c = make_cloud(2, {2, 0, 4, 0});
    PointCloud n = normalize_unit_ball(c);
    CHECK(n.coords[0] == Catch::Approx(-1.0));
    CHECK(n.coords[1] == Catch::Approx(0.0));
    CHECK(n.coords[2] == Catch::Approx(1.0));
    CHECK(n.coords[3] == Catch::Approx(0.0));
}

TEST_CASE("normalize_unit_ball is idempotent", "[cloud]") {
    PointCloud c = testutil::random_cloud(40, 3, 11);
    PointCloud once = normalize_unit_ball(c);
    PointCloud twice = normalize_unit_ball(once);
    for (std::size_t i = 0; i < once.coords.size(); ++i)
        CHECK(std::fabs(once.coords[i] - twice.coords[i]) < 1e-12);
}

TEST_CASE("normalized centroid and max norm recomputed directly", "[cloud]") {
    PointCloud n = normalize_unit_ball(testutil::random_cloud(100, 3, 5));
    std::vector<double> centroid(3, 0.0);
    double max_norm = 0.0;
    for (std::size_t i = 0; i < n.size(); ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
            centroid[j] += n.coords[i * 3 + j];
            sq += n.coords[i * 3 + j] * n.coords[i * 3 + j];
        }
        max_norm = std::max(max_norm, std::sqrt(sq));
    }
    double cnorm = 0.0;
    for (double v : centroid) cnorm += (v / 100.0) * (v / 100.0);
    CHECK(std::sqrt(cnorm) < 1e-10);
    CHECK(max_norm >= 1.0 - 1e-10);
    CHECK(max_norm <= 1.0 + 1e-12);
}

TEST_CASE("normalize handles coincident points and preserves payload", "[cloud]") {
    PointCloud c = make_cloud(2, {3, 3, 3, 3}, 1, {7.0, 8.0});
    c.labels = std::vector<int>{1, 2};
    PointCloud n = normalize_unit_ball(c);
    for (double v : n.coords) CHECK(v == 0.0);
    CHECK(n.features == c.features);
    CHECK(n.labels == c.labels);
}

TEST_CASE("normalize is translation and scale covariant", "[cloud]") {
    PointCloud base = testutil::random_cloud(60, 3, 21);
    PointCloud shifted = base;
    const double s = 2.75;
    const double t[3] = {0.4, -1.1, 3.0};
    for (std::size_t i = 0; i < base.size(); ++i)
        for (std::size_t j = 0; j < 3; ++j)
            shifted.coords[i * 3 + j] = s * base.coords[i * 3 + j] + t[j];
    PointCloud a = normalize_unit_ball(base);
    PointCloud b = normalize_unit_ball(shifted);
    for (std::size_t i = 0; i < a.coords.size(); ++i)
        CHECK(std::fabs(a.coords[i] - b.coords[i]) < 1e-10);
}

TEST_CASE("pairwise_distance basics", "[cloud]") {
    std::vector<double> a{0, 0}, b{3, 4};
    CHECK(pairwise_distance(a, b) == Catch::Approx(5.0));
    CHECK(pairwise_distance(b, b) == 0.0);
    CHECK_THROWS_AS(pairwise_distance(a, std::vector<double>{1, 2, 3}), ArgumentError);
}

TEST_CASE("pairwise_distance matches scalar-loop oracle", "[cloud]") {
    RngStream rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t d = 1 + rng.below(8);
        std::vector<double> a(d), b(d);
        for (auto& v : a) v = rng.uniform(-10, 10);
        for (auto& v : b) v = rng.uniform(-10, 10);
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += (a[j] - b[j]) * (a[j] - b[j]);
        double expect = std::sqrt(acc);
        double got = pairwise_distance(a, b);
        if (expect == 0.0)
            CHECK(got == 0.0);
        else
            CHECK(std::fabs(got - expect) / expect < 1e-12);
    }
}

TEST_CASE("triangle inequality on random triples", "[cloud]") {
    RngStream rng(123);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> a(3), b(3), c(3);
        for (auto& v : a) v = rng.uniform(-5, 5);
        for (auto& v : b) v = rng.uniform(-5, 5);
        for (auto& v : c) v = rng.uniform(-5, 5);
        CHECK(pairwise_distance(a, c) <=
              pairwise_distance(a, b) + pairwise_distance(b, c) + 1e-9);
    }
}

TEST_CASE("cloud file round trip with labels", "[cloud]") {
    std::string text =
        "#pcl d=2 c=1 labeled=1 class=4\n"
        "0.5 -1 0.25 3\n"
        "# a comment\n"
        "1 2 0.125 0\n"
        "-0.75 0 9 1\n";
    PointCloud c = parse_cloud(text);
    REQUIRE(c.size() == 3);
    CHECK(c.dim == 2);
    CHECK(c.channels == 1);
    REQUIRE(c.labels.has_value());
    CHECK((*c.labels)[0] == 3);
    CHECK(c.cloud_class == 4);

    PointCloud back = parse_cloud(format_cloud(c));
    CHECK(back.coords == c.coords);
    CHECK(back.features == c.features);
    CHECK(back.labels == c.labels);
    CHECK(back.cloud_class == c.cloud_class);
}

TEST_CASE("cloud round trip is lossless on random values", "[cloud]") {
    RngStream rng(31);
    PointCloud c = testutil::random_cloud(50, 3, 9, 2);
    // include awkward magnitudes
    c.coords[0] = 1e-300;
    c.coords[1] = -3.141592653589793e80;
    c.coords[2] = 0.1;
    c.labels = std::vector<int>(50);
    for (auto& l : *c.labels) l = static_cast<int>(rng.below(10));
    c.cloud_class = 2;

    PointCloud back = parse_cloud(format_cloud(c));
    REQUIRE(back.size() == c.size());
    CHECK(back.coords == c.coords);    // bit-identical
    CHECK(back.features == c.features);
    CHECK(back.labels == c.labels);
}

TEST_CASE("cloud file write/read through the filesystem", "[cloud]") {
    auto dir = std::filesystem::temp_directory_path() / "hpsl_cloud_io_test";
    std::filesystem::create_directories(dir);
    PointCloud c = testutil::random_cloud(17, 2, 99, 1);
    write_cloud(c, dir / "a.pcl");
    PointCloud back = read_cloud(dir / "a.pcl");
    CHECK(back.coords == c.coords);
    CHECK(back.features == c.features);
    std::filesystem::remove_all(dir);
}

TEST_CASE("cloud parse errors carry line numbers", "[cloud]") {
    // header says d=3 but rows carry 2 coordinates
    std::string bad =
        "#pcl d=3 c=0 labeled=0 class=-\n"
        "1 2 3\n"
        "4 5\n";
    try {
        parse_cloud(bad);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.position == 3);
        CHECK(std::string(e.what()).find("3") != std::string::npos);
    }

    CHECK_THROWS_AS(parse_cloud("#pcl d=2 c=0 labeled=0 class=-\n1 nan\n"), ParseError);
    CHECK_THROWS_AS(parse_cloud("#wrong\n1 2\n"), ParseError);
    CHECK_THROWS_AS(parse_cloud("#pcl d=2 c=0 labeled=0 class=-\n"), ParseError);
}

TEST_CASE("cloud invariants are validated", "[cloud]") {
    CHECK_THROWS_AS(make_cloud(2, {1.0, 2.0, 3.0}), ArgumentError);  // ragged
    PointCloud c = make_cloud(2, {1, 2, 3, 4});
    c.labels = std::vector<int>{1};
    CHECK_THROWS_AS(c.validate(), ArgumentError);  // label length
    PointCloud d = make_cloud(2, {1, 2, 3, 4});
    d.coords[1] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(d.validate(), ArgumentError);
}
