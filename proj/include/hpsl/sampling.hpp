#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "hpsl/cloud.hpp"
#include "hpsl/errors.hpp"

namespace hpsl {

struct SampleResult {
    std::vector<std::size_t> indices;  // selection order, indices[0] == start
    std::vector<double> min_dists;     // per point, distance to the selected set
};

// Iterative farthest point sampling: each new index maximizes its minimum
// distance to the already-selected set; ties go to the lowest index. O(N*m)
// with one maintained min-distance vector.
inline SampleResult farthest_point_sample(std::span<const double> coords,
                                          std::size_t dim, std::size_t m,
                                          std::size_t start = 0) {
    const std::size_t n = coords.size() / dim;
    if (m < 1 || m > n)
        throw ArgumentError("farthest_point_sample: m must be in [1, N]");
    if (start >= n)
        throw ArgumentError("farthest_point_sample: start index out of range");

    SampleResult res;
    res.indices.reserve(m);
    res.min_dists.assign(n, std::numeric_limits<double>::infinity());

    std::size_t current = start;
    for (std::size_t k = 0; k < m; ++k) {
        res.indices.push_back(current);
        const double* c = coords.data() + current * dim;
        std::size_t next = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double* p = coords.data() + i * dim;
            double sq = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                double diff = p[j] - c[j];
                sq += diff * diff;
            }
            if (sq < res.min_dists[i]) res.min_dists[i] = sq;
            if (res.min_dists[i] > best) {
                best = res.min_dists[i];
                next = i;
            }
        }
        current = next;
    }
    for (double& v : res.min_dists) v = std::sqrt(v);
    return res;
}

inline SampleResult farthest_point_sample(const PointCloud& cloud, std::size_t m,
                                          std::size_t start = 0) {
    return farthest_point_sample(cloud.coords, cloud.dim, m, start);
}

// Max over all points of the distance to the nearest selected point.
inline double fps_covering_radius(const SampleResult& result) {
    double r = 0.0;
    for (double v : result.min_dists) r = std::max(r, v);
    return r;
}

}  // namespace hpsl
