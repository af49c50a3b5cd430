#pragma once

#include <cstdint>
#include <vector>

#include "hpsl/cloud.hpp"
#include "hpsl/neighborhood.hpp"
#include "hpsl/tensor.hpp"

namespace hpsl {

// Local regions in the fixed-shape layout: regions (N' x K x (d+C)) holding
// localized coordinates concatenated with features. Regions with fewer than K
// members repeat their nearest member; the mask marks those pads invalid so
// no reduction ever reads them. An empty ball falls back to the nearest point
// (the centroid itself when the centroid is a cloud point) as the sole
// member.
struct GroupedRegions {
    std::size_t dim = 0;
    std::size_t channels = 0;
    std::size_t cap = 0;  // K
    Tensor regions;       // N' x K x (d+C)
    std::vector<std::uint8_t> mask;             // N' x K
    std::vector<std::size_t> centroid_indices;  // N' (empty for coord centers)
    std::vector<double> centroid_coords;        // N' x d
    std::vector<std::size_t> member_indices;    // N' x K, source point per slot

    std::size_t num_regions() const { return centroid_coords.size() / dim; }
};

namespace grouping_detail {

inline std::vector<Neighbor> find_members(const PointCloud& cloud,
                                          const SpatialIndex* index,
                                          std::span<const double> center,
                                          const NeighborhoodSpec& spec) {
    if (spec.kind == NeighborhoodKind::Ball)
        return index ? index->ball(center, spec.radius, spec.cap)
                     : brute_ball(cloud, center, spec.radius, spec.cap);
    std::size_t k = std::min(spec.k, cloud.size());
    return index ? index->knn(center, k) : brute_knn(cloud, center, k);
}

}  // namespace grouping_detail

// Groups cloud points around arbitrary center coordinates (row-major, one
// center per region) and translates every member into the center's frame.
inline GroupedRegions group_around_coords(const PointCloud& cloud,
                                          std::span<const double> centers,
                                          const NeighborhoodSpec& spec,
                                          const SpatialIndex* index = nullptr) {
    const std::size_t d = cloud.dim, c = cloud.channels;
    const std::size_t cap = spec.kind == NeighborhoodKind::Ball ? spec.cap : spec.k;
    const std::size_t n_regions = centers.size() / d;

    GroupedRegions out;
    out.dim = d;
    out.channels = c;
    out.cap = cap;
    out.regions = Tensor({n_regions, cap, d + c});
    out.mask.assign(n_regions * cap, 0);
    out.centroid_coords.assign(centers.begin(), centers.end());
    out.member_indices.assign(n_regions * cap, 0);

    for (std::size_t r = 0; r < n_regions; ++r) {
        std::span<const double> center{centers.data() + r * d, d};
        auto members = grouping_detail::find_members(cloud, index, center, spec);
        if (members.empty())
            members.push_back(index ? index->knn(center, 1)[0]
                                    : brute_knn(cloud, center, 1)[0]);

        for (std::size_t s = 0; s < cap; ++s) {
            // pads repeat the nearest member and stay masked out
            const bool valid = s < members.size();
            const std::size_t src = valid ? members[s].index : members[0].index;
            out.mask[r * cap + s] = valid ? 1 : 0;
            out.member_indices[r * cap + s] = src;
            double* row = out.regions.values.data() + (r * cap + s) * (d + c);
            auto p = cloud.point(src);
            for (std::size_t j = 0; j < d; ++j) row[j] = p[j] - center[j];
            auto f = cloud.feature(src);
            for (std::size_t j = 0; j < c; ++j) row[d + j] = f[j];
        }
    }
    return out;
}

inline GroupedRegions group_and_localize(const PointCloud& cloud,
                                         const std::vector<std::size_t>& centroid_indices,
                                         const NeighborhoodSpec& spec,
                                         const SpatialIndex* index = nullptr) {
    const std::size_t d = cloud.dim;
    std::vector<double> centers(centroid_indices.size() * d);
    for (std::size_t r = 0; r < centroid_indices.size(); ++r) {
        if (centroid_indices[r] >= cloud.size())
            throw ArgumentError("group_and_localize: centroid index out of range");
        auto p = cloud.point(centroid_indices[r]);
        for (std::size_t j = 0; j < d; ++j) centers[r * d + j] = p[j];
    }
    GroupedRegions out = group_around_coords(cloud, centers, spec, index);
    out.centroid_indices = centroid_indices;
    return out;
}

}  // namespace hpsl
