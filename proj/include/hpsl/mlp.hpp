#pragma once

#include <vector>

#include "hpsl/ops.hpp"

namespace hpsl {

struct MlpLayerCtx {
    LinearCtx lin;
    BatchNormCtx bn;
    std::vector<std::uint8_t> relu_mask;
    DropoutCtx drop;
};

struct MlpStackCtx {
    std::vector<MlpLayerCtx> layers;
};

// Shared per-row MLP: linear -> bn -> relu (-> dropout) per layer, with bn and
// relu skipped on layers built as score layers. `dropout_after` is optional
// per-layer dropout applied in train mode.
inline Tensor mlp_forward(const Tensor& x, std::vector<LayerParams>& layers, Mode mode,
                          bool update_running = true,
                          const std::vector<double>* dropout_after = nullptr,
                          RngStream* rng = nullptr, MlpStackCtx* ctx = nullptr,
                          ThreadPool* pool = nullptr) {
    if (ctx) ctx->layers.assign(layers.size(), {});
    Tensor h = x;
    for (std::size_t li = 0; li < layers.size(); ++li) {
        MlpLayerCtx* lc = ctx ? &ctx->layers[li] : nullptr;
        h = linear_forward(h, layers[li], lc ? &lc->lin : nullptr, pool);
        if (layers[li].has_bn)
            h = batchnorm_forward(h, layers[li], mode, update_running,
                                  lc ? &lc->bn : nullptr, pool);
        if (layers[li].has_relu) h = relu_forward(h, lc ? &lc->relu_mask : nullptr);
        double rate = dropout_after ? (*dropout_after)[li] : 0.0;
        if (rate > 0.0 && mode == Mode::Train) {
            if (!rng)
                throw ConfigError("mlp_forward: dropout requires an rng stream");
            RngStream layer_rng = rng->child(li);
            h = dropout_forward(h, rate, mode, layer_rng, lc ? &lc->drop : nullptr);
        }
    }
    return h;
}

inline Tensor mlp_backward(const Tensor& dy, std::vector<LayerParams>& layers,
                           const MlpStackCtx& ctx, ThreadPool* pool = nullptr) {
    Tensor g = dy;
    for (std::size_t li = layers.size(); li-- > 0;) {
        const MlpLayerCtx& lc = ctx.layers[li];
        if (lc.drop.active) g = dropout_backward(g, lc.drop);
        if (layers[li].has_relu) g = relu_backward(g, lc.relu_mask);
        if (layers[li].has_bn) g = batchnorm_backward(g, layers[li], lc.bn, pool);
        g = linear_backward(g, layers[li], lc.lin, pool);
    }
    return g;
}

// Builds the layer stack for a width chain: in -> w0 -> ... -> wn. The last
// layer is a plain linear score layer when `last_is_score`.
inline std::vector<LayerParams> make_mlp(std::size_t in,
                                         const std::vector<std::size_t>& widths,
                                         bool last_is_score = false) {
    std::vector<LayerParams> layers;
    std::size_t cur = in;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        bool bn_relu = !(last_is_score && i + 1 == widths.size());
        layers.push_back(make_layer(cur, widths[i], bn_relu));
        cur = widths[i];
    }
    return layers;
}

inline void init_mlp(std::vector<LayerParams>& layers, RngStream rng) {
    for (std::size_t i = 0; i < layers.size(); ++i) init_layer(layers[i], rng.child(i));
}

inline void collect_trainable(std::vector<LayerParams>& layers,
                              std::vector<Tensor*>& out) {
    for (auto& l : layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
        if (l.has_bn) {
            out.push_back(&l.bn_gamma);
            out.push_back(&l.bn_beta);
        }
    }
}

inline void collect_state(std::vector<LayerParams>& layers, std::vector<Tensor*>& out) {
    for (auto& l : layers) {
        if (l.has_bn) {
            out.push_back(&l.bn_running_mean);
            out.push_back(&l.bn_running_var);
        }
    }
}

}  // namespace hpsl
