#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include "hpsl/cloud.hpp"
#include "hpsl/neighborhood.hpp"
#include "hpsl/parallel.hpp"
#include "hpsl/rng.hpp"

namespace hpsl {

struct BenchWorkload {
    std::size_t n = 1000;
    std::string density = "uniform";  // "uniform" | "radial-falloff"
    NeighborhoodKind kind = NeighborhoodKind::Ball;
    double param = 0.2;      // radius for ball, k for knn
    std::size_t cap = 64;    // ball cap
    std::size_t reps = 5;    // timed repetitions (one warmup rep runs first)
    std::uint64_t seed = 0;
    double cell_size = 0.0;  // 0 -> radius for ball, extent/cbrt(N) for knn
};

struct BenchRow {
    std::string method;  // "brute" | "grid"
    std::string kind;    // "ball" | "knn"
    double param;
    std::size_t n;
    std::string density;
    double median_us;
    double p95_us;
    std::uint64_t result_hash;
};

// 3-D test clouds. "radial-falloff" concentrates points near the origin the
// way a single-viewpoint scan concentrates samples near the sensor.
inline PointCloud bench_cloud(std::size_t n, const std::string& density,
                              std::uint64_t seed) {
    RngStream rng(seed);
    std::vector<double> coords;
    coords.reserve(n * 3);
    if (density == "uniform") {
        for (std::size_t i = 0; i < n * 3; ++i) coords.push_back(rng.uniform());
    } else if (density == "radial-falloff") {
        for (std::size_t i = 0; i < n; ++i) {
            double x = rng.normal(), y = rng.normal(), z = rng.normal();
            double norm = std::sqrt(x * x + y * y + z * z);
            if (norm == 0.0) norm = 1.0;
            double u = rng.uniform();
            double r = u * u;  // denser near the center, sparse outward
            coords.push_back(x / norm * r);
            coords.push_back(y / norm * r);
            coords.push_back(z / norm * r);
        }
    } else {
        throw ArgumentError("unknown density profile: " + density);
    }
    return make_cloud(3, std::move(coords));
}

namespace detail {

inline std::uint64_t fnv_mix(std::uint64_t h, std::uint64_t v) {
    h ^= v;
    return h * 0x100000001b3ull;
}

inline std::uint64_t hash_results(const std::vector<std::vector<Neighbor>>& results) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t c = 0; c < results.size(); ++c) {
        h = fnv_mix(h, c + 1);
        h = fnv_mix(h, results[c].size());
        for (const auto& nb : results[c]) h = fnv_mix(h, nb.index + 1);
    }
    return h;
}

inline double quantile_us(std::vector<double> samples, double q) {
    std::sort(samples.begin(), samples.end());
    if (samples.empty()) return 0.0;
    auto idx = static_cast<std::size_t>(q * static_cast<double>(samples.size() - 1) + 0.5);
    return samples[std::min(idx, samples.size() - 1)];
}

}  // namespace detail

// Runs the workload with both the brute-force scan and the grid index,
// checks the result hashes agree, and reports per-method latency. The first
// repetition is a warmup and is excluded from the statistics. Queries run on
// the pool; each centroid's result lands in its own slot, so the merged
// output is independent of scheduling.
inline std::vector<BenchRow> bench_queries(const BenchWorkload& w,
                                           ThreadPool* pool = nullptr) {
    PointCloud cloud = bench_cloud(w.n, w.density, w.seed);
    SpatialIndex index(cloud, w.cell_size > 0.0
                                  ? w.cell_size
                                  : (w.kind == NeighborhoodKind::Ball
                                         ? w.param
                                         : std::max(1e-6, 1.0 / std::cbrt(double(w.n)))));

    const std::size_t m = cloud.size();
    auto run = [&](bool use_grid) {
        std::vector<std::vector<Neighbor>> results(m);
        parallel_for(pool, m, [&](std::size_t i) {
            auto center = cloud.point(i);
            if (w.kind == NeighborhoodKind::Ball) {
                results[i] = use_grid ? index.ball(center, w.param, w.cap)
                                      : brute_ball(cloud, center, w.param, w.cap);
            } else {
                auto k = static_cast<std::size_t>(w.param);
                results[i] = use_grid ? index.knn(center, k) : brute_knn(cloud, center, k);
            }
        });
        return results;
    };

    std::vector<BenchRow> rows;
    std::uint64_t hashes[2] = {0, 0};
    for (int method = 0; method < 2; ++method) {
        const bool use_grid = (method == 1);
        std::vector<double> times_us;
        std::vector<std::vector<Neighbor>> last;
        for (std::size_t rep = 0; rep <= w.reps; ++rep) {
            auto t0 = std::chrono::steady_clock::now();
            last = run(use_grid);
            auto t1 = std::chrono::steady_clock::now();
            if (rep == 0) continue;  // warmup excluded
            times_us.push_back(
                std::chrono::duration<double, std::micro>(t1 - t0).count());
        }
        hashes[method] = detail::hash_results(last);
        rows.push_back({use_grid ? "grid" : "brute",
                        w.kind == NeighborhoodKind::Ball ? "ball" : "knn", w.param, w.n,
                        w.density, detail::quantile_us(times_us, 0.5),
                        detail::quantile_us(times_us, 0.95), hashes[method]});
    }
    if (hashes[0] != hashes[1])
        throw std::runtime_error("bench: brute and grid results disagree");
    return rows;
}

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::string out = "method,kind,param,N,density,median_us,p95_us,result_hash\n";
    for (const auto& r : rows) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s,%s,%.17g,%zu,%s,%.3f,%.3f,%016llx\n",
                      r.method.c_str(), r.kind.c_str(), r.param, r.n, r.density.c_str(),
                      r.median_us, r.p95_us,
                      static_cast<unsigned long long>(r.result_hash));
        out += buf;
    }
    return out;
}

}  // namespace hpsl
