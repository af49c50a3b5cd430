#pragma once

#include <vector>

#include "hpsl/blueprint.hpp"
#include "hpsl/grouping.hpp"
#include "hpsl/interpolate.hpp"
#include "hpsl/mlp.hpp"
#include "hpsl/sampling.hpp"

namespace hpsl {

// ---------------------------------------------------------------------------
// PointNet layer: shared per-point MLP + masked max over each region
// ---------------------------------------------------------------------------

struct PointnetCtx {
    std::vector<std::size_t> offsets;    // compact row range per region
    std::vector<std::size_t> row_slot;   // compact row -> (region*K + slot)
    MlpStackCtx mlp;
    std::vector<std::size_t> argmax;     // per (region, out channel): compact row
    std::size_t total_rows = 0;
    std::size_t in_width = 0;
};

// Runs h on the valid entries of each region and reduces with max over the
// region. Pads never enter the MLP, the reduction or the statistics.
inline Tensor pointnet_forward(const GroupedRegions& regions,
                               std::vector<LayerParams>& mlp, Mode mode,
                               bool update_running = false, PointnetCtx* ctx = nullptr,
                               ThreadPool* pool = nullptr) {
    const std::size_t in_width = regions.dim + regions.channels;
    if (!mlp.empty() && mlp.front().in_width() != in_width)
        throw ConfigError("pointnet_forward: MLP input width " +
                          std::to_string(mlp.front().in_width()) +
                          " != region width " + std::to_string(in_width));

    const std::size_t n_regions = regions.num_regions();
    const std::size_t cap = regions.cap;
    std::vector<std::size_t> offsets(n_regions + 1, 0);
    std::vector<std::size_t> row_slot;
    for (std::size_t r = 0; r < n_regions; ++r) {
        offsets[r + 1] = offsets[r];
        for (std::size_t s = 0; s < cap; ++s)
            if (regions.mask[r * cap + s]) {
                row_slot.push_back(r * cap + s);
                ++offsets[r + 1];
            }
    }
    Tensor rows = Tensor::matrix(row_slot.size(), in_width);
    for (std::size_t i = 0; i < row_slot.size(); ++i)
        for (std::size_t j = 0; j < in_width; ++j)
            rows.at(i, j) = regions.regions.values[row_slot[i] * in_width + j];

    MlpStackCtx* mlp_ctx = ctx ? &ctx->mlp : nullptr;
    Tensor h = mlp_forward(rows, mlp, mode, update_running, nullptr, nullptr, mlp_ctx,
                           pool);
    std::vector<std::size_t> argmax;
    Tensor out = region_max(h, offsets, ctx ? &argmax : nullptr);
    if (ctx) {
        ctx->offsets = std::move(offsets);
        ctx->row_slot = std::move(row_slot);
        ctx->argmax = std::move(argmax);
        ctx->total_rows = rows.rows();
        ctx->in_width = in_width;
    }
    return out;
}

// Returns the gradient w.r.t. the region entries (zeros at padded slots) and
// accumulates parameter gradients.
inline Tensor pointnet_backward(const Tensor& dy, const GroupedRegions& regions,
                                std::vector<LayerParams>& mlp, const PointnetCtx& ctx,
                                ThreadPool* pool = nullptr) {
    Tensor drows_out = region_max_backward(dy, ctx.argmax, ctx.total_rows);
    Tensor drows_in = mlp_backward(drows_out, mlp, ctx.mlp, pool);
    Tensor dregions(std::vector<std::size_t>{regions.num_regions(), regions.cap,
                                             ctx.in_width});
    for (std::size_t i = 0; i < ctx.row_slot.size(); ++i)
        for (std::size_t j = 0; j < ctx.in_width; ++j)
            dregions.values[ctx.row_slot[i] * ctx.in_width + j] = drows_in.at(i, j);
    return dregions;
}

// ---------------------------------------------------------------------------
// Set abstraction levels (standalone single-cloud form)
// ---------------------------------------------------------------------------

struct ScaleParams {
    SaScaleSpec spec;
    std::size_t cap = 32;
    std::vector<LayerParams> mlp;
};

struct SaLevelParams {
    SaLevelSpec spec;
    std::vector<ScaleParams> scales;
};

inline SaLevelParams make_sa_level(const SaLevelSpec& spec, std::size_t in_width,
                                   std::size_t cap) {
    SaLevelParams out;
    out.spec = spec;
    for (const auto& scale : spec.scales) {
        ScaleParams sp;
        sp.spec = scale;
        sp.cap = cap;
        sp.mlp = make_mlp(in_width, scale.widths);
        out.scales.push_back(std::move(sp));
    }
    return out;
}

struct SaLevelCtx {
    SampleResult fps;
    std::vector<GroupedRegions> groups;  // per scale
    std::vector<PointnetCtx> pointnets;  // per scale
};

// FPS centroids, per-scale group -> pointnet, features concatenated in scale
// order. Output coords are the centroid coords. Centroid count saturates at
// the cloud size so sparse (dropout-thinned) clouds stay processable.
inline PointCloud sa_level_forward(const PointCloud& cloud, SaLevelParams& level,
                                   Mode mode, std::size_t fps_start = 0,
                                   bool update_running = false,
                                   SaLevelCtx* ctx = nullptr,
                                   ThreadPool* pool = nullptr) {
    if (level.spec.global)
        throw ArgumentError("sa_level_forward: use global_sa_forward for global levels");
    const std::size_t m = std::min(level.spec.num_centroids, cloud.size());
    SampleResult fps = farthest_point_sample(cloud, m, fps_start);

    PointCloud out;
    out.dim = cloud.dim;
    out.coords.resize(m * cloud.dim);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < cloud.dim; ++j)
            out.coords[r * cloud.dim + j] = cloud.coords[fps.indices[r] * cloud.dim + j];

    std::optional<SpatialIndex> index;
    double max_radius = 0.0;
    for (const auto& s : level.scales) max_radius = std::max(max_radius, s.spec.radius);
    if (cloud.size() >= 64) index.emplace(cloud, max_radius);

    if (ctx) {
        ctx->fps = fps;
        ctx->groups.clear();
        ctx->pointnets.assign(level.scales.size(), {});
    }
    std::vector<Tensor> per_scale;
    for (std::size_t si = 0; si < level.scales.size(); ++si) {
        auto& scale = level.scales[si];
        auto spec = NeighborhoodSpec::ball(scale.spec.radius, scale.cap);
        GroupedRegions groups = group_and_localize(cloud, fps.indices, spec,
                                                   index ? &*index : nullptr);
        per_scale.push_back(pointnet_forward(groups, scale.mlp, mode, update_running,
                                             ctx ? &ctx->pointnets[si] : nullptr, pool));
        if (ctx) ctx->groups.push_back(std::move(groups));
    }

    out.channels = level.spec.output_width();
    out.features.resize(m * out.channels);
    std::size_t col = 0;
    for (const auto& feats : per_scale) {
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < feats.cols(); ++j)
                out.features[r * out.channels + col + j] = feats.at(r, j);
        col += feats.cols();
    }
    return out;
}

inline PointCloud msg_level_forward(const PointCloud& cloud, SaLevelParams& level,
                                    Mode mode, std::size_t fps_start = 0,
                                    bool update_running = false,
                                    SaLevelCtx* ctx = nullptr,
                                    ThreadPool* pool = nullptr) {
    if (level.scales.size() < 2)
        throw ArgumentError("msg_level_forward: needs >= 2 scales");
    return sa_level_forward(cloud, level, mode, fps_start, update_running, ctx, pool);
}

// Global set abstraction: one region containing every point, anchored at the
// origin (inputs are zero-mean normalized), reduced to a single vector.
inline GroupedRegions group_all(const PointCloud& cloud) {
    GroupedRegions g;
    g.dim = cloud.dim;
    g.channels = cloud.channels;
    g.cap = cloud.size();
    g.regions = Tensor({std::size_t(1), cloud.size(), cloud.dim + cloud.channels});
    g.mask.assign(cloud.size(), 1);
    g.centroid_indices = {0};
    g.centroid_coords.assign(cloud.dim, 0.0);
    g.member_indices.resize(cloud.size());
    const std::size_t w = cloud.dim + cloud.channels;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        g.member_indices[i] = i;
        for (std::size_t j = 0; j < cloud.dim; ++j)
            g.regions.values[i * w + j] = cloud.coords[i * cloud.dim + j];
        for (std::size_t j = 0; j < cloud.channels; ++j)
            g.regions.values[i * w + cloud.dim + j] =
                cloud.features[i * cloud.channels + j];
    }
    return g;
}

inline PointCloud global_sa_forward(const PointCloud& cloud, SaLevelParams& level,
                                    Mode mode, bool update_running = false,
                                    SaLevelCtx* ctx = nullptr,
                                    ThreadPool* pool = nullptr) {
    if (!level.spec.global)
        throw ArgumentError("global_sa_forward: level is not global");
    GroupedRegions groups = group_all(cloud);
    if (ctx) {
        ctx->groups.clear();
        ctx->pointnets.assign(1, {});
    }
    Tensor feats = pointnet_forward(groups, level.scales[0].mlp, mode, update_running,
                                    ctx ? &ctx->pointnets[0] : nullptr, pool);
    if (ctx) ctx->groups.push_back(std::move(groups));
    PointCloud out;
    out.dim = cloud.dim;
    out.coords.assign(cloud.dim, 0.0);
    out.channels = feats.cols();
    out.features = feats.values;
    return out;
}

// ---------------------------------------------------------------------------
// Multi-resolution combine: features of each region are the concatenation of
// (A) the abstraction of the lower level's summaries and (B) a single
// PointNet over the raw points of the region.
// ---------------------------------------------------------------------------

struct MrgLevelParams {
    SaLevelParams branch_a;  // consumes the lower-level output
    ScaleParams branch_b;    // consumes raw points around the same centroids
};

struct MrgLevelCtx {
    SaLevelCtx a;
    GroupedRegions b_groups;
    PointnetCtx b_pointnet;
};

inline PointCloud mrg_level_forward(const PointCloud& lower_level_output,
                                    const PointCloud& raw_points,
                                    MrgLevelParams& level, Mode mode,
                                    std::size_t fps_start = 0,
                                    bool update_running = false,
                                    MrgLevelCtx* ctx = nullptr,
                                    ThreadPool* pool = nullptr) {
    PointCloud a = sa_level_forward(lower_level_output, level.branch_a, mode, fps_start,
                                    update_running, ctx ? &ctx->a : nullptr, pool);

    // branch B groups the raw points around branch A's centroid coordinates
    const std::size_t m = a.size();
    auto spec = NeighborhoodSpec::ball(level.branch_b.spec.radius, level.branch_b.cap);
    GroupedRegions groups = group_around_coords(raw_points, a.coords, spec);
    Tensor b = pointnet_forward(groups, level.branch_b.mlp, mode, update_running,
                                ctx ? &ctx->b_pointnet : nullptr, pool);
    if (ctx) ctx->b_groups = std::move(groups);

    PointCloud out;
    out.dim = a.dim;
    out.coords = a.coords;
    out.channels = a.channels + b.cols();
    out.features.resize(m * out.channels);
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t j = 0; j < a.channels; ++j)
            out.features[r * out.channels + j] = a.features[r * a.channels + j];
        for (std::size_t j = 0; j < b.cols(); ++j)
            out.features[r * out.channels + a.channels + j] = b.at(r, j);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Feature propagation level
// ---------------------------------------------------------------------------

struct FpLevelParams {
    FpLevelSpec spec;
    std::vector<LayerParams> mlp;
};

struct FpLevelCtx {
    std::vector<InterpWeights> weights;
    MlpStackCtx mlp;
    std::size_t interp_width = 0;
    std::size_t skip_width = 0;
};

// Interpolates coarse features onto the fine coordinates, concatenates the
// skip-linked fine features and refines with the shared per-point MLP.
inline Tensor fp_level_forward(const PointCloud& coarse, const Tensor& coarse_features,
                               const std::vector<double>& fine_coords,
                               const Tensor* skip_features, FpLevelParams& level,
                               Mode mode, std::size_t interp_k, double interp_power,
                               bool update_running = false, RngStream* rng = nullptr,
                               FpLevelCtx* ctx = nullptr, ThreadPool* pool = nullptr) {
    const std::size_t k = std::min(interp_k, coarse.size());
    std::vector<InterpWeights> weights;
    Tensor interp = interpolate_features(fine_coords, coarse.dim, coarse,
                                         coarse_features, k, interp_power, &weights);
    const std::size_t m = interp.rows();
    const std::size_t skip_w = skip_features ? skip_features->cols() : 0;
    Tensor rows = Tensor::matrix(m, interp.cols() + skip_w);
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t j = 0; j < interp.cols(); ++j) rows.at(r, j) = interp.at(r, j);
        for (std::size_t j = 0; j < skip_w; ++j)
            rows.at(r, interp.cols() + j) = skip_features->at(r, j);
    }
    if (ctx) {
        ctx->weights = std::move(weights);
        ctx->interp_width = interp.cols();
        ctx->skip_width = skip_w;
    }
    return mlp_forward(rows, level.mlp, mode, update_running,
                       level.spec.dropout_after.empty() ? nullptr
                                                        : &level.spec.dropout_after,
                       rng, ctx ? &ctx->mlp : nullptr, pool);
}

struct FpBackwardResult {
    Tensor dcoarse;  // gradient w.r.t. the coarse features
    Tensor dskip;    // gradient w.r.t. the skip features (empty when none)
};

inline FpBackwardResult fp_level_backward(const Tensor& dy, FpLevelParams& level,
                                          const FpLevelCtx& ctx,
                                          std::size_t num_coarse,
                                          ThreadPool* pool = nullptr) {
    Tensor drows = mlp_backward(dy, level.mlp, ctx.mlp, pool);
    const std::size_t m = drows.rows();
    Tensor dinterp = Tensor::matrix(m, ctx.interp_width);
    FpBackwardResult res;
    if (ctx.skip_width > 0) res.dskip = Tensor::matrix(m, ctx.skip_width);
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t j = 0; j < ctx.interp_width; ++j)
            dinterp.at(r, j) = drows.at(r, j);
        for (std::size_t j = 0; j < ctx.skip_width; ++j)
            res.dskip.at(r, j) = drows.at(r, ctx.interp_width + j);
    }
    res.dcoarse = interpolate_backward(dinterp, ctx.weights, num_coarse);
    return res;
}

}  // namespace hpsl
