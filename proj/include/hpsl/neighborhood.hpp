#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <unordered_map>
#include <vector>

#include "hpsl/cloud.hpp"
#include "hpsl/errors.hpp"

namespace hpsl {

// One query hit. Regions are always ordered by (distance, index); ties are
// compared on exact squared distances so results are bit-reproducible.
struct Neighbor {
    std::size_t index;
    double sq_dist;
};

inline bool neighbor_less(const Neighbor& a, const Neighbor& b) {
    if (a.sq_dist != b.sq_dist) return a.sq_dist < b.sq_dist;
    return a.index < b.index;
}

enum class NeighborhoodKind { Ball, Knn };

struct NeighborhoodSpec {
    NeighborhoodKind kind = NeighborhoodKind::Ball;
    double radius = 0.0;  // Ball
    std::size_t cap = 1;  // Ball: keep at most this many (the nearest ones)
    std::size_t k = 1;    // Knn

    static NeighborhoodSpec ball(double r, std::size_t cap) {
        if (r <= 0.0) throw ArgumentError("ball radius must be > 0");
        if (cap < 1) throw ArgumentError("ball cap must be >= 1");
        return {NeighborhoodKind::Ball, r, cap, 1};
    }
    static NeighborhoodSpec knn(std::size_t k) {
        if (k < 1) throw ArgumentError("knn k must be >= 1");
        return {NeighborhoodKind::Knn, 0.0, 1, k};
    }
};

// Uniform grid over the cloud's bounding box. Each point lives in exactly one
// cell (floor(x / cell_size) per axis). Immutable after build; queries return
// exactly what a brute-force scan returns.
class SpatialIndex {
public:
    SpatialIndex(const PointCloud& cloud, double cell_size)
        : cloud_(&cloud), cell_size_(cell_size) {
        if (cell_size <= 0.0) throw ArgumentError("cell_size must be > 0");
        const std::size_t n = cloud.size();
        const std::size_t d = cloud.dim;
        bounds_min_.assign(d, std::numeric_limits<double>::infinity());
        bounds_max_.assign(d, -std::numeric_limits<double>::infinity());
        for (std::size_t i = 0; i < n; ++i) {
            auto p = cloud.point(i);
            for (std::size_t j = 0; j < d; ++j) {
                bounds_min_[j] = std::min(bounds_min_[j], p[j]);
                bounds_max_[j] = std::max(bounds_max_[j], p[j]);
            }
        }
        std::vector<std::int64_t> key(d);
        for (std::size_t i = 0; i < n; ++i) {
            cell_of_(cloud.point(i), key);
            grid_[key].push_back(i);
        }
    }

    double cell_size() const { return cell_size_; }
    std::size_t occupied_cells() const { return grid_.size(); }
    std::span<const double> bounds_min() const { return bounds_min_; }
    std::span<const double> bounds_max() const { return bounds_max_; }
    const PointCloud& cloud() const { return *cloud_; }

    // All point indices with distance <= r from `center`, the nearest `cap`
    // kept if more qualify, ordered by (distance, index).
    std::vector<Neighbor> ball(std::span<const double> center, double r,
                               std::size_t cap) const {
        if (r <= 0.0) throw ArgumentError("ball radius must be > 0");
        if (cap < 1) throw ArgumentError("ball cap must be >= 1");
        std::vector<Neighbor> hits = gather_within_(center, r);
        std::sort(hits.begin(), hits.end(), neighbor_less);
        if (hits.size() > cap) hits.resize(cap);
        return hits;
    }

    // The k nearest point indices, ordered by (distance, index).
    std::vector<Neighbor> knn(std::span<const double> center, std::size_t k) const {
        const std::size_t n = cloud_->size();
        if (k < 1 || k > n) throw ArgumentError("knn: k must be in [1, N]");
        // Grow a ball until it holds >= k points. Points outside the ball are
        // strictly farther than the kth hit inside it, so the result is exact.
        double r = cell_size_;
        for (;;) {
            std::vector<Neighbor> hits = gather_within_(center, r);
            if (hits.size() >= k) {
                std::sort(hits.begin(), hits.end(), neighbor_less);
                hits.resize(k);
                return hits;
            }
            if (covers_bounds_(center, r)) {
                // everything gathered; fewer than k can only mean a logic error
                std::sort(hits.begin(), hits.end(), neighbor_less);
                return hits;
            }
            r *= 2.0;
        }
    }

private:
    struct KeyHash {
        std::size_t operator()(const std::vector<std::int64_t>& key) const {
            std::uint64_t h = 0x9e3779b97f4a7c15ull;
            for (std::int64_t v : key) {
                std::uint64_t z = h ^ static_cast<std::uint64_t>(v);
                z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
                z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
                h = z ^ (z >> 31);
            }
            return static_cast<std::size_t>(h);
        }
    };

    void cell_of_(std::span<const double> p, std::vector<std::int64_t>& key) const {
        key.resize(p.size());
        for (std::size_t j = 0; j < p.size(); ++j)
            key[j] = static_cast<std::int64_t>(std::floor(p[j] / cell_size_));
    }

    bool covers_bounds_(std::span<const double> center, double r) const {
        // true when the ball contains the whole bounding box, i.e. reaches
        // past the farthest box corner
        double corner_sq = 0.0;
        for (std::size_t j = 0; j < bounds_min_.size(); ++j) {
            double far_j = std::max(std::fabs(center[j] - bounds_min_[j]),
                                    std::fabs(center[j] - bounds_max_[j]));
            corner_sq += far_j * far_j;
        }
        return corner_sq <= r * r;
    }

    // Every point whose exact predicate dist^2 <= r^2 holds. Cell ranges are
    // padded by a relative margin so floor rounding at box boundaries cannot
    // skip a qualifying cell; the per-point check decides membership.
    std::vector<Neighbor> gather_within_(std::span<const double> center, double r) const {
        const std::size_t d = bounds_min_.size();
        const double pad = r * (1.0 + 1e-12) + 1e-300;
        std::vector<std::int64_t> lo(d), hi(d), cur(d);
        for (std::size_t j = 0; j < d; ++j) {
            lo[j] = static_cast<std::int64_t>(std::floor((center[j] - pad) / cell_size_));
            hi[j] = static_cast<std::int64_t>(std::floor((center[j] + pad) / cell_size_));
            // clamp to occupied extent
            auto lo_b = static_cast<std::int64_t>(std::floor(bounds_min_[j] / cell_size_));
            auto hi_b = static_cast<std::int64_t>(std::floor(bounds_max_[j] / cell_size_));
            lo[j] = std::max(lo[j], lo_b);
            hi[j] = std::min(hi[j], hi_b);
            if (lo[j] > hi[j]) return {};
        }
        const double r_sq = r * r;
        std::vector<Neighbor> hits;
        cur = lo;
        for (;;) {
            auto it = grid_.find(cur);
            if (it != grid_.end()) {
                for (std::size_t idx : it->second) {
                    double sq = squared_distance(cloud_->point(idx), center);
                    if (sq <= r_sq) hits.push_back({idx, sq});
                }
            }
            // advance odometer
            std::size_t j = 0;
            for (; j < d; ++j) {
                if (++cur[j] <= hi[j]) break;
                cur[j] = lo[j];
            }
            if (j == d) break;
        }
        return hits;
    }

    const PointCloud* cloud_;
    double cell_size_;
    std::vector<double> bounds_min_, bounds_max_;
    std::unordered_map<std::vector<std::int64_t>, std::vector<std::size_t>, KeyHash> grid_;
};

inline SpatialIndex build_index(const PointCloud& cloud, double cell_size) {
    return SpatialIndex(cloud, cell_size);
}

// Brute-force counterparts; same predicate and ordering as the index. Used by
// the benchmark harness and as the small-N path.
inline std::vector<Neighbor> brute_ball(const PointCloud& cloud,
                                        std::span<const double> center, double r,
                                        std::size_t cap) {
    if (r <= 0.0) throw ArgumentError("ball radius must be > 0");
    if (cap < 1) throw ArgumentError("ball cap must be >= 1");
    const double r_sq = r * r;
    std::vector<Neighbor> hits;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        double sq = squared_distance(cloud.point(i), center);
        if (sq <= r_sq) hits.push_back({i, sq});
    }
    std::sort(hits.begin(), hits.end(), neighbor_less);
    if (hits.size() > cap) hits.resize(cap);
    return hits;
}

inline std::vector<Neighbor> brute_knn(const PointCloud& cloud,
                                       std::span<const double> center, std::size_t k) {
    if (k < 1 || k > cloud.size()) throw ArgumentError("knn: k must be in [1, N]");
    std::vector<Neighbor> hits;
    hits.reserve(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i)
        hits.push_back({i, squared_distance(cloud.point(i), center)});
    std::nth_element(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k - 1),
                     hits.end(), neighbor_less);
    hits.resize(k);
    std::sort(hits.begin(), hits.end(), neighbor_less);
    return hits;
}

// Batched index queries against a list of centroid coordinates.
inline std::vector<std::vector<Neighbor>> ball_query(const SpatialIndex& index,
                                                     const std::vector<std::vector<double>>& centroids,
                                                     double r, std::size_t cap) {
    std::vector<std::vector<Neighbor>> out;
    out.reserve(centroids.size());
    for (const auto& c : centroids) out.push_back(index.ball(c, r, cap));
    return out;
}

inline std::vector<std::vector<Neighbor>> knn_query(const SpatialIndex& index,
                                                    const std::vector<std::vector<double>>& centroids,
                                                    std::size_t k) {
    std::vector<std::vector<Neighbor>> out;
    out.reserve(centroids.size());
    for (const auto& c : centroids) out.push_back(index.knn(c, k));
    return out;
}

}  // namespace hpsl
