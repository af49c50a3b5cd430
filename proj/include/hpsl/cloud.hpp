#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hpsl/errors.hpp"

namespace hpsl {

// Whether grouping distance is computed on the same coordinates the network
// consumes, or on a separate embedding (e.g. a geodesic-mimicking embedding
// supplied as metric_coords while the network inputs live in features).
enum class MetricMode {
    FeatureSpaceIsMetric,
    SeparateEmbedding,
};

struct MetricConfig {
    MetricMode mode = MetricMode::FeatureSpaceIsMetric;
};

// A set of N points: metric coordinates (N x d, used for sampling and
// grouping), feature channels (N x C, fed to networks), optional per-point
// labels and an optional cloud-level class id. Immutable by convention after
// construction; all operations return new clouds.
//
// Per-point labels are non-negative for annotated points; -1 marks a point
// without a valid annotation (scene processing needs to represent those).
struct PointCloud {
    std::size_t dim = 0;       // d
    std::size_t channels = 0;  // C
    std::vector<double> coords;    // N*d row-major
    std::vector<double> features;  // N*C row-major
    std::optional<std::vector<int>> labels;
    std::optional<int> cloud_class;

    std::size_t size() const { return dim == 0 ? 0 : coords.size() / dim; }

    std::span<const double> point(std::size_t i) const {
        return {coords.data() + i * dim, dim};
    }
    std::span<double> point(std::size_t i) {
        return {coords.data() + i * dim, dim};
    }
    std::span<const double> feature(std::size_t i) const {
        return {features.data() + i * channels, channels};
    }
    std::span<double> feature(std::size_t i) {
        return {features.data() + i * channels, channels};
    }

    void validate() const {
        if (dim < 1) throw ArgumentError("point cloud dimension must be >= 1");
        if (coords.empty() || coords.size() % dim != 0)
            throw ArgumentError("coordinate buffer size not a multiple of dim");
        const std::size_t n = size();
        if (features.size() != n * channels)
            throw ArgumentError("feature row count differs from coordinate row count");
        if (labels && labels->size() != n)
            throw ArgumentError("label count differs from point count");
        for (double v : coords)
            if (!std::isfinite(v)) throw ArgumentError("non-finite coordinate");
        for (double v : features)
            if (!std::isfinite(v)) throw ArgumentError("non-finite feature");
        if (labels)
            for (int l : *labels)
                if (l < -1) throw ArgumentError("label below -1");
    }
};

inline PointCloud make_cloud(std::size_t dim, std::vector<double> coords,
                             std::size_t channels = 0,
                             std::vector<double> features = {}) {
    PointCloud c;
    c.dim = dim;
    c.channels = channels;
    c.coords = std::move(coords);
    if (features.empty() && channels == 0)
        c.features.assign(0, 0.0);
    else
        c.features = std::move(features);
    c.validate();
    return c;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        double diff = a[j] - b[j];
        s += diff * diff;
    }
    return s;
}

// Euclidean metric on metric coordinates. Dimension mismatch is a usage
// error.
inline double pairwise_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw ArgumentError("pairwise_distance: dimension mismatch");
    return std::sqrt(squared_distance(a, b));
}

// Translates the centroid to the origin and scales so the farthest point has
// norm 1. An all-coincident cloud maps to all-zeros. Features and labels are
// untouched.
inline PointCloud normalize_unit_ball(const PointCloud& cloud) {
    const std::size_t n = cloud.size();
    const std::size_t d = cloud.dim;
    if (n == 0) throw ArgumentError("normalize_unit_ball: empty cloud");

    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += cloud.coords[i * d + j];
    for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(n);

    PointCloud out = cloud;
    double max_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            double v = cloud.coords[i * d + j] - mean[j];
            out.coords[i * d + j] = v;
            sq += v * v;
        }
        max_sq = std::max(max_sq, sq);
    }
    if (max_sq > 0.0) {
        const double inv = 1.0 / std::sqrt(max_sq);
        for (double& v : out.coords) v *= inv;
    } else {
        for (double& v : out.coords) v = 0.0;
    }
    return out;
}

}  // namespace hpsl
