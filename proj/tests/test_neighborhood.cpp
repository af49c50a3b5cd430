#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <vector>

#include "hpsl/bench.hpp"
#include "hpsl/neighborhood.hpp"
#include "test_util.hpp"

using namespace hpsl;

namespace {

// Independent reference: naive scan with its own distance loop, keep-K rule
// and (distance, index) ordering.
std::vector<std::size_t> oracle_ball(const PointCloud& cloud,
                                     std::span<const double> center, double r,
                                     std::size_t cap) {
    std::vector<std::pair<double, std::size_t>> hits;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < cloud.dim; ++j) {
            double diff = cloud.coords[i * cloud.dim + j] - center[j];
            sq += diff * diff;
        }
        if (sq <= r * r) hits.emplace_back(sq, i);
    }
    std::sort(hits.begin(), hits.end());
    if (hits.size() > cap) hits.resize(cap);
    std::vector<std::size_t> idx;
    for (auto& h : hits) idx.push_back(h.second);
    return idx;
}

std::vector<std::size_t> oracle_knn(const PointCloud& cloud,
                                    std::span<const double> center, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> hits;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < cloud.dim; ++j) {
            double diff = cloud.coords[i * cloud.dim + j] - center[j];
            sq += diff * diff;
        }
        hits.emplace_back(sq, i);
    }
    std::sort(hits.begin(), hits.end());
    hits.resize(k);
    std::vector<std::size_t> idx;
    for (auto& h : hits) idx.push_back(h.second);
    return idx;
}

std::vector<std::size_t> indices_of(const std::vector<Neighbor>& nbs) {
    std::vector<std::size_t> idx;
    for (auto& n : nbs) idx.push_back(n.index);
    return idx;
}

}  // namespace

TEST_CASE("index cell structure", "[neighborhood]") {
    PointCloud one = make_cloud(3, {0.3, 0.4, 0.5});
    CHECK(SpatialIndex(one, 1.0).occupied_cells() == 1);

    // integer grid points, cell 1.0 -> one point per cell
    std::vector<double> coords;
    for (int x = 0; x < 3; ++x)
        for (int y = 0; y < 3; ++y)
            for (int z = 0; z < 3; ++z) {
                coords.push_back(x + 0.5);
                coords.push_back(y + 0.5);
                coords.push_back(z + 0.5);
            }
    PointCloud grid_cloud = make_cloud(3, std::move(coords));
    CHECK(SpatialIndex(grid_cloud, 1.0).occupied_cells() == 27);

    CHECK_THROWS_AS(SpatialIndex(one, 0.0), ArgumentError);
    CHECK_THROWS_AS(SpatialIndex(one, -1.0), ArgumentError);
}

TEST_CASE("every point lands in exactly one cell", "[neighborhood]") {
    PointCloud c = testutil::random_cloud(200, 3, 17);
    SpatialIndex index(c, 0.37);
    // recover the full membership via a huge ball
    auto all = index.ball(std::vector<double>{0, 0, 0}, 10.0, 200);
    std::vector<std::size_t> idx = indices_of(all);
    std::sort(idx.begin(), idx.end());
    REQUIRE(idx.size() == 200);
    for (std::size_t i = 0; i < idx.size(); ++i) CHECK(idx[i] == i);
}

TEST_CASE("ball query on unit-spaced grid with r=0.5 returns self only",
          "[neighborhood]") {
    std::vector<double> coords;
    for (int x = 0; x < 4; ++x)
        for (int y = 0; y < 4; ++y) {
            coords.push_back(x);
            coords.push_back(y);
        }
    PointCloud c = make_cloud(2, std::move(coords));
    SpatialIndex index(c, 0.5);
    for (std::size_t i = 0; i < c.size(); ++i) {
        auto hits = index.ball(c.point(i), 0.5, 8);
        REQUIRE(hits.size() == 1);
        CHECK(hits[0].index == i);
    }
}

TEST_CASE("ball query matches brute-force oracle", "[neighborhood]") {
    for (double r : {0.1, 0.2, 0.4}) {
        for (std::uint64_t seed = 0; seed < 6; ++seed) {
            PointCloud c = testutil::random_cloud(150, 3, 40 + seed);
            SpatialIndex index(c, r);
            for (std::size_t q = 0; q < c.size(); q += 7) {
                auto got = indices_of(index.ball(c.point(q), r, 16));
                CHECK(got == oracle_ball(c, c.point(q), r, 16));
            }
        }
    }
}

TEST_CASE("ball cap keeps the K nearest", "[neighborhood]") {
    // 5 points within radius, cap 3 -> 3 smallest distances
    PointCloud c = make_cloud(1, {0.1, -0.2, 0.3, 0.05, 0.4, 2.0});
    SpatialIndex index(c, 0.5);
    auto hits = indices_of(index.ball(std::vector<double>{0.0}, 0.5, 3));
    CHECK(hits == oracle_ball(c, std::vector<double>{0.0}, 0.5, 3));
    CHECK(hits == std::vector<std::size_t>{3, 0, 1});
}

TEST_CASE("knn basics", "[neighborhood]") {
    PointCloud c = testutil::random_cloud(30, 3, 8);
    SpatialIndex index(c, 0.3);
    for (std::size_t i = 0; i < c.size(); ++i) {
        auto hits = index.knn(c.point(i), 1);
        REQUIRE(hits.size() == 1);
        CHECK(hits[0].index == i);
    }
    auto all = indices_of(index.knn(c.point(0), c.size()));
    std::vector<std::size_t> sorted = all;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);

    CHECK_THROWS_AS(index.knn(c.point(0), c.size() + 1), ArgumentError);
}

TEST_CASE("knn matches brute-force oracle at the studied k values",
          "[neighborhood]") {
    for (std::size_t k : {std::size_t(16), std::size_t(64)}) {
        for (std::uint64_t seed = 0; seed < 6; ++seed) {
            PointCloud c = testutil::random_cloud(128, 3, 90 + seed);
            SpatialIndex index(c, 0.25);
            for (std::size_t q = 0; q < c.size(); q += 11) {
                auto got = indices_of(index.knn(c.point(q), k));
                CHECK(got == oracle_knn(c, c.point(q), k));
            }
        }
    }
}

TEST_CASE("knn tie-breaking by lowest index on a fixed fixture", "[neighborhood]") {
    // four points at exactly distance 1 from the origin plus one nearer
    PointCloud c = make_cloud(2, {1, 0, 0, 1, -1, 0, 0, -1, 0.25, 0});
    SpatialIndex index(c, 0.5);
    auto hits = indices_of(index.knn(std::vector<double>{0, 0}, 3));
    CHECK(hits == std::vector<std::size_t>{4, 0, 1});
    auto hits2 = indices_of(index.ball(std::vector<double>{0, 0}, 1.0, 3));
    CHECK(hits2 == std::vector<std::size_t>{4, 0, 1});
}

TEST_CASE("ball query scale covariance", "[neighborhood]") {
    PointCloud base = testutil::random_cloud(120, 3, 55);
    for (double s : {0.5, 2.0, 8.0}) {  // powers of two scale exactly
        PointCloud scaled = base;
        for (double& v : scaled.coords) v *= s;
        SpatialIndex ia(base, 0.2), ib(scaled, 0.2 * s);
        for (std::size_t q = 0; q < base.size(); q += 13) {
            auto a = indices_of(ia.ball(base.point(q), 0.2, 32));
            auto b = indices_of(ib.ball(scaled.point(q), 0.2 * s, 32));
            CHECK(a == b);
        }
    }
}

TEST_CASE("knn permutation covariance on distinct-distance clouds",
          "[neighborhood]") {
    PointCloud c = testutil::random_cloud(64, 3, 31);
    RngStream rng(5);
    std::vector<std::size_t> perm(c.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    shuffle(perm, rng);

    PointCloud p = c;
    for (std::size_t i = 0; i < perm.size(); ++i)
        for (std::size_t j = 0; j < 3; ++j)
            p.coords[i * 3 + j] = c.coords[perm[i] * 3 + j];
    // inverse: point perm[i] of c sits at slot i of p
    std::vector<std::size_t> slot_of(c.size());
    for (std::size_t i = 0; i < perm.size(); ++i) slot_of[perm[i]] = i;

    SpatialIndex ic(c, 0.3), ip(p, 0.3);
    for (std::size_t q = 0; q < c.size(); q += 5) {
        auto orig = indices_of(ic.knn(c.point(q), 8));
        auto permuted = indices_of(ip.knn(p.point(slot_of[q]), 8));
        std::vector<std::size_t> remapped;
        for (std::size_t idx : orig) remapped.push_back(slot_of[idx]);
        CHECK(remapped == permuted);
    }
}

TEST_CASE("ball monotonicity in radius below the cap", "[neighborhood]") {
    PointCloud c = testutil::random_cloud(100, 3, 61);
    SpatialIndex index(c, 0.2);
    for (std::size_t q = 0; q < c.size(); q += 9) {
        auto small = indices_of(index.ball(c.point(q), 0.15, 1000));
        auto large = indices_of(index.ball(c.point(q), 0.3, 1000));
        std::sort(small.begin(), small.end());
        std::sort(large.begin(), large.end());
        CHECK(std::includes(large.begin(), large.end(), small.begin(), small.end()));
    }
}

TEST_CASE("bench produces equal hashes for brute and grid", "[neighborhood]") {
    BenchWorkload w;
    w.n = 500;
    w.kind = NeighborhoodKind::Ball;
    w.param = 0.2;
    w.reps = 2;
    auto rows = bench_queries(w);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].result_hash == rows[1].result_hash);
    CHECK(rows[0].method == "brute");
    CHECK(rows[1].method == "grid");

    BenchWorkload w2;
    w2.n = 400;
    w2.density = "radial-falloff";
    w2.kind = NeighborhoodKind::Knn;
    w2.param = 16;
    w2.reps = 2;
    auto rows2 = bench_queries(w2);
    CHECK(rows2[0].result_hash == rows2[1].result_hash);

    BenchWorkload w3;
    w3.n = 1;
    w3.kind = NeighborhoodKind::Knn;
    w3.param = 1;
    w3.reps = 2;
    auto rows3 = bench_queries(w3);
    CHECK(rows3[0].result_hash == rows3[1].result_hash);

    auto csv = bench_csv(rows);
    CHECK(csv.find("method,kind,param,N,density,median_us,p95_us,result_hash") == 0);
    CHECK(csv.find("grid,ball") != std::string::npos);
}
