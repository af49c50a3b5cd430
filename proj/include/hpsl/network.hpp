#pragma once

#include <optional>
#include <span>
#include <vector>

#include "hpsl/archlang.hpp"
#include "hpsl/blueprint.hpp"
#include "hpsl/hierarchy.hpp"

namespace hpsl {

struct NetworkConfig {
    std::size_t input_dim = 3;
    std::size_t input_channels = 0;
    std::size_t num_classes = 2;
    std::size_t ball_cap = 32;  // per-region member limit
    std::size_t interp_k = 3;
    double interp_power = 2.0;
    MetricMode metric_mode = MetricMode::FeatureSpaceIsMetric;

    // In the separate-embedding case the coordinates exist only for
    // sampling/grouping; the per-point MLPs consume features alone.
    std::size_t localized_dim() const {
        return metric_mode == MetricMode::SeparateEmbedding ? 0 : input_dim;
    }
};

struct NetworkOptions {
    Mode mode = Mode::Eval;
    bool update_running = false;
    std::size_t fps_start = 0;  // level-1 start; deeper levels start at 0
    RngStream dropout_rng;      // consumed in train mode only
    ThreadPool* pool = nullptr;
};

struct FcLevelParams {
    FcLevelSpec spec;
    std::vector<LayerParams> mlp;  // exactly one layer
};

struct MrgNetParams {
    std::vector<SaLevelParams> branch1;
    ScaleParams branch2;
    SaLevelParams branch3;  // global over raw points
    SaLevelParams branch4;  // global over the combined branch1+branch2 cloud
};

struct NetworkLevelParams {
    BlueprintLevel::Kind kind = BlueprintLevel::Kind::Sa;
    SaLevelParams sa;
    FcLevelParams fc;
    FpLevelParams fp;
    MrgNetParams mrg;
};

// ---------------------------------------------------------------------------
// forward contexts (everything the backward pass needs)
// ---------------------------------------------------------------------------

struct ScaleFwdCtx {
    std::vector<std::size_t> offsets;     // fused region row ranges
    std::vector<std::uint32_t> row_item;  // per fused row
    std::vector<std::uint32_t> row_src;   // per fused row: point in that item's cloud
    MlpStackCtx mlp;
    std::vector<std::size_t> argmax;
    std::size_t total_rows = 0;
};

struct SaFwdCtx {
    std::vector<std::vector<std::size_t>> centroids;  // per item
    std::vector<std::size_t> region_base;             // per item
    std::vector<std::size_t> region_count;            // per item
    std::vector<ScaleFwdCtx> scales;
};

struct FpFwdCtx {
    std::vector<std::vector<InterpWeights>> weights;  // per item, per target
    MlpStackCtx mlp;
    std::vector<std::size_t> row_base;  // per item, into the fused target rows
    std::size_t interp_width = 0;
    std::size_t skip_width = 0;
    std::size_t target_level = 0;  // pyramid index receiving the propagation
};

struct MrgFwdCtx {
    std::vector<std::vector<PointCloud>> b1_pyramid;  // [stage][item]
    std::vector<SaFwdCtx> branch1;
    ScaleFwdCtx branch2;
    std::vector<PointCloud> combined;  // per item
    SaFwdCtx branch3, branch4;
    std::size_t b1_width = 0, b2_width = 0, b3_width = 0, b4_width = 0;
};

struct LevelFwdCtx {
    SaFwdCtx sa;
    MlpStackCtx fc;
    FpFwdCtx fp;
    MrgFwdCtx mrg;
};

struct ForwardCtx {
    std::vector<std::vector<PointCloud>> pyramid;  // [pyramid level][item]
    std::vector<LevelFwdCtx> levels;               // per blueprint level
    std::vector<std::size_t> pyramid_of_level;     // blueprint level -> pyramid index
    std::size_t batch = 0;
};

struct NetworkOutput {
    Tensor logits;                     // classification: B x num_classes
    std::vector<Tensor> point_logits;  // segmentation: per item, N_i x num_classes
};

namespace net_detail {

inline Tensor features_as_tensor(const PointCloud& cloud) {
    Tensor t = Tensor::matrix(cloud.size(), cloud.channels);
    t.values = cloud.features;
    return t;
}

}  // namespace net_detail

// A blueprint realized with parameters: the hierarchical encoder plus either
// the fully connected classification head or the propagation chain.
class Network {
public:
    Network() = default;

    Network(const NetworkBlueprint& bp, const NetworkConfig& config)
        : blueprint_(bp), config_(config) {
        auto diag = validate_chain(bp, config.input_dim, config.input_channels,
                                   config.num_classes);
        if (!diag.ok) throw ConfigError("blueprint invalid: " + diag.message);
        if (config.localized_dim() == 0 && config.input_channels == 0)
            throw ConfigError("separate-embedding metric needs feature channels");
        build_();
    }

    const NetworkBlueprint& blueprint() const { return blueprint_; }
    const NetworkConfig& config() const { return config_; }
    HeadKind head() const { return blueprint_.head(); }

    void init_params(std::uint64_t seed) {
        RngStream rng(seed);
        std::size_t counter = 0;
        for (Tensor* t : trainable_weights_())
            init_tensor_(t, rng.child(counter++));
    }

    std::vector<Tensor*> trainable() {
        std::vector<Tensor*> out;
        for (auto& level : levels_) collect_level_(level, out, /*state=*/false);
        return out;
    }

    // Trainable parameters plus batch-norm running statistics, in a fixed
    // traversal order (the checkpoint layout).
    std::vector<Tensor*> all_state() {
        std::vector<Tensor*> out;
        for (auto& level : levels_) collect_level_(level, out, /*state=*/true);
        return out;
    }

    void zero_grads() {
        for (Tensor* t : trainable()) {
            t->ensure_grad();
            t->zero_grad();
        }
    }

    NetworkOutput forward(std::span<const PointCloud> items, const NetworkOptions& opts,
                          ForwardCtx* ctx = nullptr) {
        ForwardCtx local;
        ForwardCtx& c = ctx ? *ctx : local;
        c.batch = items.size();
        c.levels.assign(levels_.size(), {});
        c.pyramid_of_level.assign(levels_.size(), 0);
        c.pyramid.clear();
        c.pyramid.emplace_back();
        for (const auto& item : items) {
            if (item.dim != config_.input_dim)
                throw ArgumentError("forward: cloud dimension mismatch");
            if (item.channels != config_.input_channels)
                throw ArgumentError("forward: cloud channel mismatch");
            c.pyramid[0].push_back(item);
        }

        NetworkOutput out;
        Tensor head;  // B x width while inside the FC stack
        std::vector<Tensor> current;  // per item features during FP chain
        std::size_t current_level = 0;  // pyramid index whose coords carry `current`
        bool in_fc = false, in_fp = false;

        for (std::size_t li = 0; li < levels_.size(); ++li) {
            auto& level = levels_[li];
            auto& lctx = c.levels[li];
            switch (level.kind) {
                case BlueprintLevel::Kind::Sa: {
                    auto next = sa_forward_batch_(c.pyramid.back(), level.sa, opts,
                                                  li == 0 ? opts.fps_start : 0,
                                                  &lctx.sa);
                    c.pyramid.push_back(std::move(next));
                    c.pyramid_of_level[li] = c.pyramid.size() - 1;
                    break;
                }
                case BlueprintLevel::Kind::Mrg: {
                    auto next = mrg_forward_batch_(c.pyramid.back(), level.mrg, opts,
                                                   opts.fps_start, &lctx.mrg);
                    c.pyramid.push_back(std::move(next));
                    c.pyramid_of_level[li] = c.pyramid.size() - 1;
                    break;
                }
                case BlueprintLevel::Kind::Fc: {
                    if (!in_fc) {
                        head = gather_global_(c.pyramid.back());
                        in_fc = true;
                    }
                    std::vector<double> drop{level.fc.spec.dropout};
                    RngStream rng = opts.dropout_rng.child({1, li});
                    head = mlp_forward(head, level.fc.mlp, opts.mode,
                                       opts.update_running, &drop, &rng, &lctx.fc,
                                       opts.pool);
                    break;
                }
                case BlueprintLevel::Kind::Fp: {
                    if (!in_fp) {
                        current.clear();
                        for (const auto& cl : c.pyramid.back())
                            current.push_back(net_detail::features_as_tensor(cl));
                        current_level = c.pyramid.size() - 1;
                        in_fp = true;
                    }
                    const std::size_t target = current_level - 1;
                    RngStream rng = opts.dropout_rng.child({2, li});
                    current = fp_forward_batch_(c.pyramid, current, current_level,
                                                target, level.fp, opts, rng, &lctx.fp);
                    current_level = target;
                    c.pyramid_of_level[li] = target;
                    break;
                }
            }
        }

        if (head_() == HeadKind::Classification) {
            out.logits = std::move(head);
        } else {
            out.point_logits = std::move(current);
        }
        return out;
    }

    // Backward for a classification batch. `dlogits` is B x num_classes.
    void backward(const Tensor& dlogits, ForwardCtx& ctx, ThreadPool* pool = nullptr) {
        std::vector<std::vector<Tensor>> dpyramid = make_grad_buffers_(ctx);
        Tensor dhead = dlogits;
        backward_levels_(ctx, dpyramid, &dhead, nullptr, pool);
    }

    // Backward for a segmentation batch. `dpoint_logits` is per item.
    void backward_seg(const std::vector<Tensor>& dpoint_logits, ForwardCtx& ctx,
                      ThreadPool* pool = nullptr) {
        std::vector<std::vector<Tensor>> dpyramid = make_grad_buffers_(ctx);
        backward_levels_(ctx, dpyramid, nullptr, &dpoint_logits, pool);
    }

private:
    HeadKind head_() const { return blueprint_.head(); }

    static void init_tensor_(Tensor* t, RngStream rng) {
        // weight matrices get Glorot; vectors keep their constructed values
        if (t->shape.size() == 2) {
            const double limit = std::sqrt(
                6.0 / static_cast<double>(t->shape[0] + t->shape[1]));
            for (double& v : t->values) v = rng.uniform(-limit, limit);
        }
    }

    std::vector<Tensor*> trainable_weights_() {
        std::vector<Tensor*> weights;
        for (Tensor* t : trainable())
            if (t->shape.size() == 2) weights.push_back(t);
        return weights;
    }

    void collect_level_(NetworkLevelParams& level, std::vector<Tensor*>& out,
                        bool state) {
        auto add_mlp = [&](std::vector<LayerParams>& mlp) {
            collect_trainable(mlp, out);
            if (state) collect_state(mlp, out);
        };
        switch (level.kind) {
            case BlueprintLevel::Kind::Sa:
                for (auto& s : level.sa.scales) add_mlp(s.mlp);
                break;
            case BlueprintLevel::Kind::Fc:
                add_mlp(level.fc.mlp);
                break;
            case BlueprintLevel::Kind::Fp:
                add_mlp(level.fp.mlp);
                break;
            case BlueprintLevel::Kind::Mrg:
                for (auto& sa : level.mrg.branch1)
                    for (auto& s : sa.scales) add_mlp(s.mlp);
                add_mlp(level.mrg.branch2.mlp);
                add_mlp(level.mrg.branch3.scales[0].mlp);
                add_mlp(level.mrg.branch4.scales[0].mlp);
                break;
        }
    }

    void build_() {
        const std::size_t loc = config_.localized_dim();
        std::size_t width = config_.input_channels;
        std::vector<std::size_t> skip_stack{config_.input_channels};
        bool fp_started = false, seen_global = false;

        for (const auto& bl : blueprint_.levels) {
            NetworkLevelParams level;
            level.kind = bl.kind;
            switch (bl.kind) {
                case BlueprintLevel::Kind::Sa: {
                    level.sa = make_sa_level(bl.sa, loc + width, config_.ball_cap);
                    width = bl.sa.output_width();
                    if (bl.sa.global)
                        seen_global = true;
                    else
                        skip_stack.push_back(width);
                    break;
                }
                case BlueprintLevel::Kind::Fc: {
                    const bool score = (&bl == &blueprint_.levels.back());
                    level.fc.spec = bl.fc;
                    level.fc.mlp.push_back(make_layer(width, bl.fc.width, !score));
                    width = bl.fc.width;
                    break;
                }
                case BlueprintLevel::Kind::Fp: {
                    if (!fp_started) {
                        if (!seen_global) skip_stack.pop_back();
                        fp_started = true;
                    }
                    std::size_t skip = skip_stack.back();
                    skip_stack.pop_back();
                    const bool score = (&bl == &blueprint_.levels.back());
                    level.fp.spec = bl.fp;
                    level.fp.mlp = make_mlp(width + skip, bl.fp.widths, score);
                    width = bl.fp.widths.back();
                    break;
                }
                case BlueprintLevel::Kind::Mrg: {
                    std::size_t w = config_.input_channels;
                    for (const auto& sa : bl.mrg.branch1) {
                        level.mrg.branch1.push_back(
                            make_sa_level(sa, loc + w, config_.ball_cap));
                        w = sa.output_width();
                    }
                    level.mrg.branch2.spec = bl.mrg.branch2.scales[0];
                    level.mrg.branch2.cap = config_.ball_cap;
                    level.mrg.branch2.mlp =
                        make_mlp(loc + config_.input_channels,
                                 bl.mrg.branch2.scales[0].widths);

                    SaLevelSpec g3;
                    g3.global = true;
                    g3.scales.push_back({0.0, bl.mrg.branch3_widths});
                    level.mrg.branch3 =
                        make_sa_level(g3, loc + config_.input_channels, config_.ball_cap);

                    const std::size_t b1w = w;
                    const std::size_t b2w = bl.mrg.branch2.scales[0].widths.back();
                    SaLevelSpec g4;
                    g4.global = true;
                    g4.scales.push_back({0.0, bl.mrg.branch4_widths});
                    level.mrg.branch4 =
                        make_sa_level(g4, loc + b1w + b2w, config_.ball_cap);
                    width = bl.mrg.branch3_widths.back() + bl.mrg.branch4_widths.back();
                    seen_global = true;
                    break;
                }
            }
            levels_.push_back(std::move(level));
        }
    }

    // ---- batched pieces -------------------------------------------------

    // Builds fused compact rows for one scale over per-item member lists.
    struct FusedRows {
        Tensor rows;
        std::vector<std::size_t> offsets;
        std::vector<std::uint32_t> row_item, row_src;
    };

    FusedRows fuse_rows_(const std::vector<PointCloud>& in,
                         const std::vector<std::vector<std::vector<Neighbor>>>& members,
                         const std::vector<std::vector<double>>& centers) const {
        const std::size_t d = config_.input_dim;
        const std::size_t loc = config_.localized_dim();
        FusedRows f;
        std::size_t total = 0, regions = 0;
        for (const auto& item_members : members) {
            regions += item_members.size();
            for (const auto& m : item_members) total += m.size();
        }
        const std::size_t width = loc + in[0].channels;
        f.rows = Tensor::matrix(total, width);
        f.offsets.assign(regions + 1, 0);
        f.row_item.resize(total);
        f.row_src.resize(total);

        std::size_t row = 0, region = 0;
        for (std::size_t i = 0; i < members.size(); ++i) {
            const PointCloud& cloud = in[i];
            for (std::size_t r = 0; r < members[i].size(); ++r) {
                const double* center = centers[i].data() + r * d;
                for (const Neighbor& nb : members[i][r]) {
                    double* dst = f.rows.row(row);
                    auto p = cloud.point(nb.index);
                    for (std::size_t j = 0; j < loc; ++j) dst[j] = p[j] - center[j];
                    auto feat = cloud.feature(nb.index);
                    for (std::size_t j = 0; j < cloud.channels; ++j)
                        dst[loc + j] = feat[j];
                    f.row_item[row] = static_cast<std::uint32_t>(i);
                    f.row_src[row] = static_cast<std::uint32_t>(nb.index);
                    ++row;
                }
                f.offsets[region + 1] = row;
                ++region;
            }
        }
        return f;
    }

    std::vector<PointCloud> sa_forward_batch_(const std::vector<PointCloud>& in,
                                              SaLevelParams& level,
                                              const NetworkOptions& opts,
                                              std::size_t fps_start, SaFwdCtx* ctx) {
        const std::size_t items = in.size();
        const std::size_t d = config_.input_dim;

        std::vector<std::vector<std::size_t>> centroids(items);
        std::vector<std::vector<double>> centers(items);
        std::vector<std::optional<SpatialIndex>> indexes(items);

        if (!level.spec.global) {
            double max_radius = 0.0;
            for (const auto& s : level.scales)
                max_radius = std::max(max_radius, s.spec.radius);
            parallel_for(opts.pool, items, [&](std::size_t i) {
                const std::size_t n = in[i].size();
                const std::size_t m = std::min(level.spec.num_centroids, n);
                const std::size_t start = fps_start < n ? fps_start : 0;
                centroids[i] = farthest_point_sample(in[i], m, start).indices;
                centers[i].resize(m * d);
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t j = 0; j < d; ++j)
                        centers[i][r * d + j] = in[i].coords[centroids[i][r] * d + j];
                if (n >= 64) indexes[i].emplace(in[i], max_radius);
            });
        } else {
            for (std::size_t i = 0; i < items; ++i) {
                centroids[i] = {};
                centers[i].assign(d, 0.0);
            }
        }

        if (ctx) {
            ctx->centroids = centroids;
            ctx->region_base.assign(items, 0);
            ctx->region_count.assign(items, 0);
            std::size_t base = 0;
            for (std::size_t i = 0; i < items; ++i) {
                ctx->region_base[i] = base;
                ctx->region_count[i] = level.spec.global ? 1 : centroids[i].size();
                base += ctx->region_count[i];
            }
            ctx->scales.assign(level.scales.size(), {});
        }

        std::vector<Tensor> per_scale;  // fused regions x width_s
        for (std::size_t si = 0; si < level.scales.size(); ++si) {
            auto& scale = level.scales[si];
            std::vector<std::vector<std::vector<Neighbor>>> members(items);
            if (level.spec.global) {
                parallel_for(opts.pool, items, [&](std::size_t i) {
                    std::vector<Neighbor> all(in[i].size());
                    for (std::size_t p = 0; p < in[i].size(); ++p) all[p] = {p, 0.0};
                    members[i] = {std::move(all)};
                });
            } else {
                parallel_for(opts.pool, items, [&](std::size_t i) {
                    members[i].resize(centroids[i].size());
                    for (std::size_t r = 0; r < centroids[i].size(); ++r) {
                        std::span<const double> center{centers[i].data() + r * d, d};
                        auto hits = indexes[i]
                                        ? indexes[i]->ball(center, scale.spec.radius,
                                                           scale.cap)
                                        : brute_ball(in[i], center, scale.spec.radius,
                                                     scale.cap);
                        if (hits.empty()) hits.push_back({centroids[i][r], 0.0});
                        members[i][r] = std::move(hits);
                    }
                });
            }

            FusedRows fused = fuse_rows_(in, members, centers);
            ScaleFwdCtx* sc = ctx ? &ctx->scales[si] : nullptr;
            Tensor h = mlp_forward(fused.rows, scale.mlp, opts.mode, opts.update_running,
                                   nullptr, nullptr, sc ? &sc->mlp : nullptr, opts.pool);
            std::vector<std::size_t> argmax;
            Tensor reduced = region_max(h, fused.offsets, sc ? &argmax : nullptr);
            if (sc) {
                sc->offsets = std::move(fused.offsets);
                sc->row_item = std::move(fused.row_item);
                sc->row_src = std::move(fused.row_src);
                sc->argmax = std::move(argmax);
                sc->total_rows = fused.rows.rows();
            }
            per_scale.push_back(std::move(reduced));
        }

        // split fused region features back into per-item clouds
        const std::size_t out_width = level.spec.output_width();
        std::vector<PointCloud> out(items);
        std::size_t region = 0;
        for (std::size_t i = 0; i < items; ++i) {
            const std::size_t m = level.spec.global ? 1 : centroids[i].size();
            out[i].dim = d;
            out[i].channels = out_width;
            out[i].coords = centers[i];
            out[i].features.assign(m * out_width, 0.0);
            for (std::size_t r = 0; r < m; ++r) {
                std::size_t col = 0;
                for (const auto& feats : per_scale) {
                    for (std::size_t j = 0; j < feats.cols(); ++j)
                        out[i].features[r * out_width + col + j] =
                            feats.at(region + r, j);
                    col += feats.cols();
                }
            }
            region += m;
        }
        return out;
    }

    // Scatters gradient w.r.t. the fused output features of one SA level back
    // to the per-item input feature gradients.
    void sa_backward_batch_(const std::vector<PointCloud>& in,
                            const std::vector<Tensor>& dout, SaLevelParams& level,
                            SaFwdCtx& ctx, std::vector<Tensor>& din,
                            ThreadPool* pool) {
        const std::size_t items = in.size();
        const std::size_t loc = config_.localized_dim();
        std::size_t total_regions = 0;
        for (std::size_t i = 0; i < items; ++i) total_regions += ctx.region_count[i];

        std::size_t col = 0;
        for (std::size_t si = 0; si < level.scales.size(); ++si) {
            auto& scale = level.scales[si];
            auto& sc = ctx.scales[si];
            const std::size_t w = scale.spec.widths.back();
            Tensor dreduced = Tensor::matrix(total_regions, w);
            for (std::size_t i = 0; i < items; ++i)
                for (std::size_t r = 0; r < ctx.region_count[i]; ++r)
                    for (std::size_t j = 0; j < w; ++j)
                        dreduced.at(ctx.region_base[i] + r, j) =
                            dout[i].at(r, col + j);
            col += w;

            Tensor drows_out = region_max_backward(dreduced, sc.argmax, sc.total_rows);
            Tensor drows_in = mlp_backward(drows_out, scale.mlp, sc.mlp, pool);

            // feature part scatters to the input clouds; localized coordinate
            // part carries no parameters and is dropped. Fused rows are
            // item-major, so each item owns one contiguous range.
            parallel_for(pool, items, [&](std::size_t i) {
                const std::size_t c = in[i].channels;
                if (c == 0) return;
                const std::size_t begin = sc.offsets[ctx.region_base[i]];
                const std::size_t end =
                    sc.offsets[ctx.region_base[i] + ctx.region_count[i]];
                for (std::size_t row = begin; row < end; ++row) {
                    double* dst = din[i].row(sc.row_src[row]);
                    const double* g = drows_in.row(row) + loc;
                    for (std::size_t j = 0; j < c; ++j) dst[j] += g[j];
                }
            });
        }
    }

    std::vector<PointCloud> mrg_forward_batch_(const std::vector<PointCloud>& in,
                                               MrgNetParams& level,
                                               const NetworkOptions& opts,
                                               std::size_t fps_start, MrgFwdCtx* ctx) {
        const std::size_t items = in.size();
        const std::size_t d = config_.input_dim;
        if (ctx) {
            ctx->branch1.assign(level.branch1.size(), {});
            ctx->b1_pyramid.clear();
        }

        // branch 1: SA chain over the raw points
        std::vector<PointCloud> cur = in;
        if (ctx) ctx->b1_pyramid.push_back(cur);
        for (std::size_t bi = 0; bi < level.branch1.size(); ++bi) {
            cur = sa_forward_batch_(cur, level.branch1[bi], opts,
                                    bi == 0 ? fps_start : 0,
                                    ctx ? &ctx->branch1[bi] : nullptr);
            if (ctx) ctx->b1_pyramid.push_back(cur);
        }

        // branch 2: raw points grouped around branch 1's final centroids
        std::vector<std::vector<std::vector<Neighbor>>> members(items);
        std::vector<std::vector<double>> centers(items);
        parallel_for(opts.pool, items, [&](std::size_t i) {
            centers[i] = cur[i].coords;
            const std::size_t m = cur[i].size();
            members[i].resize(m);
            for (std::size_t r = 0; r < m; ++r) {
                std::span<const double> center{centers[i].data() + r * d, d};
                auto hits = brute_ball(in[i], center, level.branch2.spec.radius,
                                       level.branch2.cap);
                if (hits.empty()) hits.push_back(brute_knn(in[i], center, 1)[0]);
                members[i][r] = std::move(hits);
            }
        });
        FusedRows fused = fuse_rows_(in, members, centers);
        ScaleFwdCtx* b2 = ctx ? &ctx->branch2 : nullptr;
        Tensor h = mlp_forward(fused.rows, level.branch2.mlp, opts.mode,
                               opts.update_running, nullptr, nullptr,
                               b2 ? &b2->mlp : nullptr, opts.pool);
        std::vector<std::size_t> argmax;
        Tensor b_feats = region_max(h, fused.offsets, b2 ? &argmax : nullptr);
        if (b2) {
            b2->offsets = std::move(fused.offsets);
            b2->row_item = std::move(fused.row_item);
            b2->row_src = std::move(fused.row_src);
            b2->argmax = std::move(argmax);
            b2->total_rows = fused.rows.rows();
        }

        // combined cloud: [branch1 | branch2] features at the shared centroids
        const std::size_t b1w = cur[0].channels;
        const std::size_t b2w = b_feats.cols();
        std::vector<PointCloud> combined(items);
        std::size_t region = 0;
        for (std::size_t i = 0; i < items; ++i) {
            const std::size_t m = cur[i].size();
            combined[i].dim = d;
            combined[i].coords = cur[i].coords;
            combined[i].channels = b1w + b2w;
            combined[i].features.assign(m * (b1w + b2w), 0.0);
            for (std::size_t r = 0; r < m; ++r) {
                for (std::size_t j = 0; j < b1w; ++j)
                    combined[i].features[r * (b1w + b2w) + j] =
                        cur[i].features[r * b1w + j];
                for (std::size_t j = 0; j < b2w; ++j)
                    combined[i].features[r * (b1w + b2w) + b1w + j] =
                        b_feats.at(region + r, j);
            }
            region += m;
        }
        if (ctx) {
            ctx->combined = combined;
            ctx->b1_width = b1w;
            ctx->b2_width = b2w;
        }

        // branch 4 over the combined cloud, branch 3 over the raw points
        auto g4 = sa_forward_batch_(combined, level.branch4, opts, 0,
                                    ctx ? &ctx->branch4 : nullptr);
        auto g3 = sa_forward_batch_(in, level.branch3, opts, 0,
                                    ctx ? &ctx->branch3 : nullptr);
        if (ctx) {
            ctx->b3_width = g3[0].channels;
            ctx->b4_width = g4[0].channels;
        }

        std::vector<PointCloud> out(items);
        for (std::size_t i = 0; i < items; ++i) {
            out[i].dim = d;
            out[i].coords.assign(d, 0.0);
            out[i].channels = g3[i].channels + g4[i].channels;
            out[i].features.resize(out[i].channels);
            for (std::size_t j = 0; j < g3[i].channels; ++j)
                out[i].features[j] = g3[i].features[j];
            for (std::size_t j = 0; j < g4[i].channels; ++j)
                out[i].features[g3[i].channels + j] = g4[i].features[j];
        }
        return out;
    }

    void mrg_backward_batch_(const std::vector<PointCloud>& in,
                             const std::vector<Tensor>& dout, MrgNetParams& level,
                             MrgFwdCtx& ctx, std::vector<Tensor>& din,
                             ThreadPool* pool) {
        const std::size_t items = in.size();
        // split the head gradient into branch3 / branch4 parts
        std::vector<Tensor> dg3(items), dg4(items);
        for (std::size_t i = 0; i < items; ++i) {
            dg3[i] = Tensor::matrix(1, ctx.b3_width);
            dg4[i] = Tensor::matrix(1, ctx.b4_width);
            for (std::size_t j = 0; j < ctx.b3_width; ++j)
                dg3[i].at(0, j) = dout[i].at(0, j);
            for (std::size_t j = 0; j < ctx.b4_width; ++j)
                dg4[i].at(0, j) = dout[i].at(0, ctx.b3_width + j);
        }

        // branch 3 scatters straight into the raw gradients
        sa_backward_batch_(in, dg3, level.branch3, ctx.branch3, din, pool);

        // branch 4 produces gradients for the combined cloud
        std::vector<Tensor> dcombined(items);
        for (std::size_t i = 0; i < items; ++i)
            dcombined[i] = Tensor::matrix(ctx.combined[i].size(),
                                          ctx.combined[i].channels);
        sa_backward_batch_(ctx.combined, dg4, level.branch4, ctx.branch4, dcombined,
                           pool);

        // split combined gradient into branch1 (A) and branch2 (B) halves
        std::vector<Tensor> da(items);
        std::size_t total_regions = 0;
        for (std::size_t i = 0; i < items; ++i) total_regions += ctx.combined[i].size();
        Tensor db_fused = Tensor::matrix(total_regions, ctx.b2_width);
        std::size_t region = 0;
        for (std::size_t i = 0; i < items; ++i) {
            const std::size_t m = ctx.combined[i].size();
            da[i] = Tensor::matrix(m, ctx.b1_width);
            for (std::size_t r = 0; r < m; ++r) {
                for (std::size_t j = 0; j < ctx.b1_width; ++j)
                    da[i].at(r, j) = dcombined[i].at(r, j);
                for (std::size_t j = 0; j < ctx.b2_width; ++j)
                    db_fused.at(region + r, j) = dcombined[i].at(r, ctx.b1_width + j);
            }
            region += m;
        }

        // branch 2 backward: pointnet over raw points
        {
            auto& sc = ctx.branch2;
            Tensor drows_out = region_max_backward(db_fused, sc.argmax, sc.total_rows);
            Tensor drows_in = mlp_backward(drows_out, level.branch2.mlp, sc.mlp, pool);
            const std::size_t loc = config_.localized_dim();
            for (std::size_t row = 0; row < sc.total_rows; ++row) {
                const std::size_t i = sc.row_item[row];
                const std::size_t c = in[i].channels;
                if (c == 0) continue;
                double* dst = din[i].row(sc.row_src[row]);
                const double* g = drows_in.row(row) + loc;
                for (std::size_t j = 0; j < c; ++j) dst[j] += g[j];
            }
        }

        // branch 1 chain backward
        std::vector<Tensor> dcur = std::move(da);
        for (std::size_t bi = level.branch1.size(); bi-- > 0;) {
            const auto& stage_in = ctx.b1_pyramid[bi];
            std::vector<Tensor> dstage(items);
            for (std::size_t i = 0; i < items; ++i)
                dstage[i] = Tensor::matrix(stage_in[i].size(), stage_in[i].channels);
            sa_backward_batch_(stage_in, dcur, level.branch1[bi], ctx.branch1[bi],
                               dstage, pool);
            dcur = std::move(dstage);
        }
        for (std::size_t i = 0; i < items; ++i)
            for (std::size_t j = 0; j < din[i].values.size(); ++j)
                din[i].values[j] += dcur[i].values[j];
    }

    Tensor gather_global_(const std::vector<PointCloud>& tops) const {
        const std::size_t width = tops[0].channels;
        Tensor head = Tensor::matrix(tops.size(), width);
        for (std::size_t i = 0; i < tops.size(); ++i) {
            if (tops[i].size() != 1)
                throw ConfigError("FC head expects a single global vector per item");
            for (std::size_t j = 0; j < width; ++j)
                head.at(i, j) = tops[i].features[j];
        }
        return head;
    }

    std::vector<Tensor> fp_forward_batch_(
        const std::vector<std::vector<PointCloud>>& pyramid,
        const std::vector<Tensor>& current, std::size_t src_level,
        std::size_t target_level, FpLevelParams& level, const NetworkOptions& opts,
        RngStream& rng, FpFwdCtx* ctx) {
        const std::size_t items = current.size();
        const auto& sources = pyramid[src_level];
        const auto& targets = pyramid[target_level];

        std::vector<std::vector<InterpWeights>> weights(items);
        parallel_for(opts.pool, items, [&](std::size_t i) {
            const std::size_t k = std::min(config_.interp_k, sources[i].size());
            const std::size_t m = targets[i].size();
            weights[i].resize(m);
            for (std::size_t t = 0; t < m; ++t)
                weights[i][t] = interpolation_weights(targets[i].point(t), sources[i], k,
                                                      config_.interp_power);
        });

        const std::size_t interp_w = current[0].cols();
        const std::size_t skip_w = targets[0].channels;
        std::size_t total = 0;
        std::vector<std::size_t> row_base(items, 0);
        for (std::size_t i = 0; i < items; ++i) {
            row_base[i] = total;
            total += targets[i].size();
        }

        Tensor rows = Tensor::matrix(total, interp_w + skip_w);
        parallel_for(opts.pool, items, [&](std::size_t i) {
            for (std::size_t t = 0; t < targets[i].size(); ++t) {
                double* dst = rows.row(row_base[i] + t);
                apply_interpolation(weights[i][t], current[i], dst, interp_w);
                auto f = targets[i].feature(t);
                for (std::size_t j = 0; j < skip_w; ++j) dst[interp_w + j] = f[j];
            }
        });

        Tensor h = mlp_forward(rows, level.mlp, opts.mode, opts.update_running,
                               level.spec.dropout_after.empty()
                                   ? nullptr
                                   : &level.spec.dropout_after,
                               &rng, ctx ? &ctx->mlp : nullptr, opts.pool);

        if (ctx) {
            ctx->weights = std::move(weights);
            ctx->row_base = row_base;
            ctx->interp_width = interp_w;
            ctx->skip_width = skip_w;
            ctx->target_level = target_level;
        }

        std::vector<Tensor> out(items);
        for (std::size_t i = 0; i < items; ++i) {
            out[i] = Tensor::matrix(targets[i].size(), h.cols());
            for (std::size_t t = 0; t < targets[i].size(); ++t)
                for (std::size_t j = 0; j < h.cols(); ++j)
                    out[i].at(t, j) = h.at(row_base[i] + t, j);
        }
        return out;
    }

    std::vector<std::vector<Tensor>> make_grad_buffers_(const ForwardCtx& ctx) const {
        std::vector<std::vector<Tensor>> dpyramid(ctx.pyramid.size());
        for (std::size_t l = 0; l < ctx.pyramid.size(); ++l) {
            dpyramid[l].resize(ctx.batch);
            for (std::size_t i = 0; i < ctx.batch; ++i)
                dpyramid[l][i] = Tensor::matrix(ctx.pyramid[l][i].size(),
                                                ctx.pyramid[l][i].channels);
        }
        return dpyramid;
    }

    void backward_levels_(ForwardCtx& ctx, std::vector<std::vector<Tensor>>& dpyramid,
                          Tensor* dhead, const std::vector<Tensor>* dpoints,
                          ThreadPool* pool) {
        std::vector<Tensor> dcurrent;  // FP chain gradient (per item)
        if (dpoints) dcurrent = *dpoints;
        bool fp_done = false;

        for (std::size_t li = levels_.size(); li-- > 0;) {
            auto& level = levels_[li];
            auto& lctx = ctx.levels[li];
            switch (level.kind) {
                case BlueprintLevel::Kind::Fc: {
                    *dhead = mlp_backward(*dhead, level.fc.mlp, lctx.fc, pool);
                    bool first_fc = (li == 0) ||
                                    (levels_[li - 1].kind != BlueprintLevel::Kind::Fc);
                    if (first_fc) {
                        // hand the head gradient to the top pyramid level
                        auto& dtop = dpyramid.back();
                        for (std::size_t i = 0; i < ctx.batch; ++i)
                            for (std::size_t j = 0; j < dtop[i].cols(); ++j)
                                dtop[i].at(0, j) += dhead->at(i, j);
                    }
                    break;
                }
                case BlueprintLevel::Kind::Fp: {
                    auto& fctx = lctx.fp;
                    const std::size_t items = ctx.batch;
                    const auto& targets = ctx.pyramid[fctx.target_level];
                    std::size_t total = 0;
                    for (std::size_t i = 0; i < items; ++i) total += targets[i].size();
                    Tensor dy = Tensor::matrix(total, dcurrent[0].cols());
                    for (std::size_t i = 0; i < items; ++i)
                        for (std::size_t t = 0; t < targets[i].size(); ++t)
                            for (std::size_t j = 0; j < dcurrent[i].cols(); ++j)
                                dy.at(fctx.row_base[i] + t, j) = dcurrent[i].at(t, j);

                    Tensor drows = mlp_backward(dy, level.fp.mlp, fctx.mlp, pool);

                    const std::size_t src_level = fctx.target_level + 1;
                    std::vector<Tensor> dsource(items);
                    parallel_for(pool, items, [&](std::size_t i) {
                        const std::size_t n_src = ctx.pyramid[src_level][i].size();
                        Tensor dinterp = Tensor::matrix(targets[i].size(),
                                                        fctx.interp_width);
                        for (std::size_t t = 0; t < targets[i].size(); ++t) {
                            const double* g = drows.row(fctx.row_base[i] + t);
                            for (std::size_t j = 0; j < fctx.interp_width; ++j)
                                dinterp.at(t, j) = g[j];
                            // skip half goes to the target level's features
                            double* dskip = dpyramid[fctx.target_level][i].row(t);
                            for (std::size_t j = 0; j < fctx.skip_width; ++j)
                                dskip[j] += g[fctx.interp_width + j];
                        }
                        dsource[i] =
                            interpolate_backward(dinterp, fctx.weights[i], n_src);
                    });
                    dcurrent = std::move(dsource);

                    bool first_fp = (li == 0) ||
                                    (levels_[li - 1].kind != BlueprintLevel::Kind::Fp);
                    if (first_fp) {
                        auto& dtop = dpyramid[fctx.target_level + 1];
                        for (std::size_t i = 0; i < ctx.batch; ++i)
                            for (std::size_t j = 0; j < dtop[i].values.size(); ++j)
                                dtop[i].values[j] += dcurrent[i].values[j];
                        fp_done = true;
                    }
                    break;
                }
                case BlueprintLevel::Kind::Sa: {
                    const std::size_t out_level = ctx.pyramid_of_level[li];
                    sa_backward_batch_(ctx.pyramid[out_level - 1],
                                       dpyramid[out_level], level.sa, lctx.sa,
                                       dpyramid[out_level - 1], pool);
                    break;
                }
                case BlueprintLevel::Kind::Mrg: {
                    const std::size_t out_level = ctx.pyramid_of_level[li];
                    mrg_backward_batch_(ctx.pyramid[out_level - 1],
                                        dpyramid[out_level], level.mrg, lctx.mrg,
                                        dpyramid[out_level - 1], pool);
                    break;
                }
            }
        }
        (void)fp_done;
    }

    NetworkBlueprint blueprint_;
    NetworkConfig config_;
    std::vector<NetworkLevelParams> levels_;
};

}  // namespace hpsl
