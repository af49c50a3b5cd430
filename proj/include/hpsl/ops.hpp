#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "hpsl/errors.hpp"
#include "hpsl/parallel.hpp"
#include "hpsl/rng.hpp"
#include "hpsl/tensor.hpp"

namespace hpsl {

enum class Mode { Train, Eval };

// One shared fully connected layer: weight (out x in), bias, and batch
// normalization state. Score prediction layers run without bn/relu.
struct LayerParams {
    Tensor weight;  // out x in
    Tensor bias;    // out
    Tensor bn_gamma, bn_beta;               // out, trainable
    Tensor bn_running_mean, bn_running_var;  // out, updated in train mode
    double bn_momentum = 0.9;
    bool has_bn = true;
    bool has_relu = true;

    std::size_t in_width() const { return weight.cols(); }
    std::size_t out_width() const { return weight.rows(); }
};

inline LayerParams make_layer(std::size_t in, std::size_t out, bool bn_relu = true) {
    LayerParams p;
    p.weight = Tensor::matrix(out, in);
    p.bias = Tensor::vector_of(out);
    p.has_bn = p.has_relu = bn_relu;
    if (bn_relu) {
        p.bn_gamma = Tensor::vector_of(out);
        p.bn_beta = Tensor::vector_of(out);
        p.bn_running_mean = Tensor::vector_of(out);
        p.bn_running_var = Tensor::vector_of(out);
        for (std::size_t i = 0; i < out; ++i) {
            p.bn_gamma.values[i] = 1.0;
            p.bn_running_var.values[i] = 1.0;
        }
    }
    return p;
}

// Glorot-uniform weights; bias zero.
inline void init_layer(LayerParams& p, RngStream rng) {
    const double limit =
        std::sqrt(6.0 / static_cast<double>(p.in_width() + p.out_width()));
    for (double& w : p.weight.values) w = rng.uniform(-limit, limit);
    for (double& b : p.bias.values) b = 0.0;
}

constexpr double kBatchNormEps = 1e-5;

// ---------------------------------------------------------------------------
// linear: y = W x + b per row
// ---------------------------------------------------------------------------

struct LinearCtx {
    Tensor x;  // saved input, rows x in
};

inline Tensor linear_forward(const Tensor& x, const LayerParams& p,
                             LinearCtx* ctx = nullptr, ThreadPool* pool = nullptr) {
    const std::size_t in = p.in_width(), out = p.out_width();
    if (x.cols() != in)
        throw ConfigError("linear_forward: input width " + std::to_string(x.cols()) +
                          " != layer input width " + std::to_string(in));
    const std::size_t rows = x.rows();
    Tensor y = Tensor::matrix(rows, out);
    parallel_for(pool, rows, [&](std::size_t r) {
        const double* xr = x.row(r);
        double* yr = y.row(r);
        for (std::size_t o = 0; o < out; ++o) {
            const double* w = p.weight.row(o);
            double acc = p.bias.values[o];
            for (std::size_t i = 0; i < in; ++i) acc += w[i] * xr[i];
            yr[o] = acc;
        }
    });
    if (ctx) ctx->x = x;
    return y;
}

// Accumulates into p.weight.grad / p.bias.grad and returns dx. Weight and
// bias gradients are computed one output channel per task, so each gradient
// entry has a single sequential owner regardless of worker count.
inline Tensor linear_backward(const Tensor& dy, LayerParams& p, const LinearCtx& ctx,
                              ThreadPool* pool = nullptr) {
    const std::size_t in = p.in_width(), out = p.out_width();
    const std::size_t rows = ctx.x.rows();
    p.weight.ensure_grad();
    p.bias.ensure_grad();

    parallel_for(pool, out, [&](std::size_t o) {
        double* wg = p.weight.grad.data() + o * in;
        double bg = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
            const double g = dy.at(r, o);
            if (g == 0.0) continue;
            const double* xr = ctx.x.row(r);
            for (std::size_t i = 0; i < in; ++i) wg[i] += g * xr[i];
            bg += g;
        }
        p.bias.grad[o] += bg;
    });

    Tensor dx = Tensor::matrix(rows, in);
    parallel_for(pool, rows, [&](std::size_t r) {
        const double* gr = dy.row(r);
        double* dxr = dx.row(r);
        for (std::size_t o = 0; o < out; ++o) {
            const double g = gr[o];
            if (g == 0.0) continue;
            const double* w = p.weight.row(o);
            for (std::size_t i = 0; i < in; ++i) dxr[i] += g * w[i];
        }
    });
    return dx;
}

// ---------------------------------------------------------------------------
// batch normalization over the row axis
// ---------------------------------------------------------------------------

struct BatchNormCtx {
    Mode mode = Mode::Train;
    Tensor xhat;                  // rows x out (train mode)
    std::vector<double> inv_std;  // per channel
    std::size_t rows = 0;
};

// Train mode normalizes with batch statistics (biased variance, eps 1e-5) and
// optionally folds them into the running estimates; eval mode normalizes with
// the running estimates. Train mode needs >= 2 rows.
inline Tensor batchnorm_forward(const Tensor& x, LayerParams& p, Mode mode,
                                bool update_running = true,
                                BatchNormCtx* ctx = nullptr,
                                ThreadPool* pool = nullptr) {
    const std::size_t rows = x.rows(), out = x.cols();
    if (out != p.out_width())
        throw ConfigError("batchnorm_forward: channel count mismatch");
    Tensor y = Tensor::matrix(rows, out);
    if (ctx) {
        ctx->mode = mode;
        ctx->rows = rows;
        ctx->inv_std.assign(out, 0.0);
    }

    if (mode == Mode::Eval) {
        if (ctx) ctx->xhat = Tensor::matrix(rows, out);
        parallel_for(pool, rows, [&](std::size_t r) {
            const double* xr = x.row(r);
            double* yr = y.row(r);
            for (std::size_t o = 0; o < out; ++o) {
                double inv = 1.0 / std::sqrt(p.bn_running_var.values[o] + kBatchNormEps);
                double xh = (xr[o] - p.bn_running_mean.values[o]) * inv;
                if (ctx) ctx->xhat.at(r, o) = xh;
                yr[o] = p.bn_gamma.values[o] * xh + p.bn_beta.values[o];
            }
        });
        if (ctx)
            for (std::size_t o = 0; o < out; ++o)
                ctx->inv_std[o] = 1.0 / std::sqrt(p.bn_running_var.values[o] + kBatchNormEps);
        return y;
    }

    if (rows < 2)
        throw ArgumentError("batchnorm_forward: train mode needs a batch of >= 2 rows");

    std::vector<double> mean(out, 0.0), var(out, 0.0);
    parallel_for(pool, out, [&](std::size_t o) {
        double m = 0.0;
        for (std::size_t r = 0; r < rows; ++r) m += x.at(r, o);
        m /= static_cast<double>(rows);
        double v = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
            double diff = x.at(r, o) - m;
            v += diff * diff;
        }
        v /= static_cast<double>(rows);
        mean[o] = m;
        var[o] = v;
    });

    if (ctx) ctx->xhat = Tensor::matrix(rows, out);
    parallel_for(pool, rows, [&](std::size_t r) {
        const double* xr = x.row(r);
        double* yr = y.row(r);
        for (std::size_t o = 0; o < out; ++o) {
            double inv = 1.0 / std::sqrt(var[o] + kBatchNormEps);
            double xh = (xr[o] - mean[o]) * inv;
            if (ctx) ctx->xhat.at(r, o) = xh;
            yr[o] = p.bn_gamma.values[o] * xh + p.bn_beta.values[o];
        }
    });
    if (ctx)
        for (std::size_t o = 0; o < out; ++o)
            ctx->inv_std[o] = 1.0 / std::sqrt(var[o] + kBatchNormEps);

    if (update_running) {
        const double m = p.bn_momentum;
        for (std::size_t o = 0; o < out; ++o) {
            p.bn_running_mean.values[o] = m * p.bn_running_mean.values[o] + (1.0 - m) * mean[o];
            p.bn_running_var.values[o] = m * p.bn_running_var.values[o] + (1.0 - m) * var[o];
        }
    }
    return y;
}

inline Tensor batchnorm_backward(const Tensor& dy, LayerParams& p,
                                 const BatchNormCtx& ctx, ThreadPool* pool = nullptr) {
    const std::size_t rows = dy.rows(), out = dy.cols();
    p.bn_gamma.ensure_grad();
    p.bn_beta.ensure_grad();
    Tensor dx = Tensor::matrix(rows, out);

    if (ctx.mode == Mode::Eval) {
        // Running statistics are constants here, so rows decouple.
        parallel_for(pool, out, [&](std::size_t o) {
            const double scale = p.bn_gamma.values[o] * ctx.inv_std[o];
            double dg = 0.0, db = 0.0;
            for (std::size_t r = 0; r < rows; ++r) {
                const double g = dy.at(r, o);
                dg += g * ctx.xhat.at(r, o);
                db += g;
                dx.at(r, o) = g * scale;
            }
            p.bn_gamma.grad[o] += dg;
            p.bn_beta.grad[o] += db;
        });
        return dx;
    }

    parallel_for(pool, out, [&](std::size_t o) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
            const double g = dy.at(r, o);
            sum_dy += g;
            sum_dy_xhat += g * ctx.xhat.at(r, o);
        }
        p.bn_gamma.grad[o] += sum_dy_xhat;
        p.bn_beta.grad[o] += sum_dy;
        const double gamma = p.bn_gamma.values[o];
        const double inv_std = ctx.inv_std[o];
        const double n = static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            const double g = dy.at(r, o);
            const double xh = ctx.xhat.at(r, o);
            dx.at(r, o) = gamma * inv_std / n * (n * g - sum_dy - xh * sum_dy_xhat);
        }
    });
    return dx;
}

// ---------------------------------------------------------------------------
// relu / dropout
// ---------------------------------------------------------------------------

// Clamps at zero; subgradient 0 at exactly 0.
inline Tensor relu_forward(const Tensor& x, std::vector<std::uint8_t>* mask = nullptr) {
    Tensor y = x;
    if (mask) mask->assign(x.size(), 0);
    for (std::size_t i = 0; i < y.values.size(); ++i) {
        if (y.values[i] > 0.0) {
            if (mask) (*mask)[i] = 1;
        } else {
            y.values[i] = 0.0;
        }
    }
    return y;
}

inline Tensor relu_backward(const Tensor& dy, const std::vector<std::uint8_t>& mask) {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.values.size(); ++i)
        if (!mask[i]) dx.values[i] = 0.0;
    return dx;
}

struct DropoutCtx {
    std::vector<std::uint8_t> keep;
    double scale = 1.0;
    bool active = false;
};

// Train mode zeroes each entry with probability `rate` and scales survivors
// by 1/(1-rate); eval mode and rate 0 are the identity.
inline Tensor dropout_forward(const Tensor& x, double rate, Mode mode, RngStream& rng,
                              DropoutCtx* ctx = nullptr) {
    if (rate < 0.0 || rate >= 1.0)
        throw ArgumentError("dropout rate must be in [0, 1)");
    if (mode == Mode::Eval || rate == 0.0) {
        if (ctx) ctx->active = false;
        return x;
    }
    Tensor y = x;
    const double scale = 1.0 / (1.0 - rate);
    if (ctx) {
        ctx->keep.assign(x.size(), 0);
        ctx->scale = scale;
        ctx->active = true;
    }
    for (std::size_t i = 0; i < y.values.size(); ++i) {
        if (rng.uniform() < rate) {
            y.values[i] = 0.0;
        } else {
            y.values[i] *= scale;
            if (ctx) ctx->keep[i] = 1;
        }
    }
    return y;
}

inline Tensor dropout_backward(const Tensor& dy, const DropoutCtx& ctx) {
    if (!ctx.active) return dy;
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.values.size(); ++i)
        dx.values[i] = ctx.keep[i] ? dx.values[i] * ctx.scale : 0.0;
    return dx;
}

// ---------------------------------------------------------------------------
// masked set max
// ---------------------------------------------------------------------------

// values: (regions x K x C), mask: (regions x K). Reduces over the K axis
// using only mask-true entries; masked slots are never read, so poisoned pad
// values cannot leak through. Backward routes each channel's gradient to the
// first (lowest slot) argmax.
inline Tensor masked_set_max(const Tensor& values, const std::vector<std::uint8_t>& mask,
                             std::vector<std::size_t>* argmax = nullptr) {
    if (values.shape.size() != 3)
        throw ArgumentError("masked_set_max: expected a regions x K x C tensor");
    const std::size_t regions = values.shape[0], k = values.shape[1], c = values.shape[2];
    if (mask.size() != regions * k)
        throw ArgumentError("masked_set_max: mask size mismatch");
    Tensor out = Tensor::matrix(regions, c);
    if (argmax) argmax->assign(regions * c, 0);
    for (std::size_t r = 0; r < regions; ++r) {
        bool any = false;
        for (std::size_t s = 0; s < k; ++s) {
            if (!mask[r * k + s]) continue;
            const double* row = values.values.data() + (r * k + s) * c;
            if (!any) {
                for (std::size_t j = 0; j < c; ++j) {
                    out.at(r, j) = row[j];
                    if (argmax) (*argmax)[r * c + j] = s;
                }
                any = true;
            } else {
                for (std::size_t j = 0; j < c; ++j) {
                    if (row[j] > out.at(r, j)) {
                        out.at(r, j) = row[j];
                        if (argmax) (*argmax)[r * c + j] = s;
                    }
                }
            }
        }
        if (!any)
            throw ArgumentError("masked_set_max: region " + std::to_string(r) +
                                " has no valid entries");
    }
    return out;
}

inline Tensor masked_set_max_backward(const Tensor& dy,
                                      const std::vector<std::size_t>& argmax,
                                      std::size_t regions, std::size_t k, std::size_t c) {
    Tensor dx(std::vector<std::size_t>{regions, k, c});
    for (std::size_t r = 0; r < regions; ++r)
        for (std::size_t j = 0; j < c; ++j)
            dx.values[(r * k + argmax[r * c + j]) * c + j] = dy.at(r, j);
    return dx;
}

// Compact variant used inside networks: rows of several regions are packed
// contiguously, region r owning rows [offsets[r], offsets[r+1]).
inline Tensor region_max(const Tensor& rows, const std::vector<std::size_t>& offsets,
                         std::vector<std::size_t>* argmax_rows = nullptr) {
    const std::size_t regions = offsets.size() - 1, c = rows.cols();
    Tensor out = Tensor::matrix(regions, c);
    if (argmax_rows) argmax_rows->assign(regions * c, 0);
    for (std::size_t r = 0; r < regions; ++r) {
        const std::size_t begin = offsets[r], end = offsets[r + 1];
        if (begin >= end)
            throw ArgumentError("region_max: empty region " + std::to_string(r));
        for (std::size_t j = 0; j < c; ++j) {
            double best = rows.at(begin, j);
            std::size_t best_row = begin;
            for (std::size_t i = begin + 1; i < end; ++i) {
                if (rows.at(i, j) > best) {
                    best = rows.at(i, j);
                    best_row = i;
                }
            }
            out.at(r, j) = best;
            if (argmax_rows) (*argmax_rows)[r * c + j] = best_row;
        }
    }
    return out;
}

inline Tensor region_max_backward(const Tensor& dy,
                                  const std::vector<std::size_t>& argmax_rows,
                                  std::size_t total_rows) {
    const std::size_t regions = dy.rows(), c = dy.cols();
    Tensor dx = Tensor::matrix(total_rows, c);
    for (std::size_t r = 0; r < regions; ++r)
        for (std::size_t j = 0; j < c; ++j)
            dx.at(argmax_rows[r * c + j], j) += dy.at(r, j);
    return dx;
}

// ---------------------------------------------------------------------------
// softmax cross entropy
// ---------------------------------------------------------------------------

// Numerically stable (max-subtracted) loss for one logit row; fills dlogits
// with softmax - onehot when given.
inline double softmax_cross_entropy(std::span<const double> logits, std::size_t label,
                                    std::span<double> dlogits = {}) {
    const std::size_t c = logits.size();
    if (label >= c) throw ArgumentError("softmax_cross_entropy: label out of range");
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    const double log_sum = std::log(sum) + mx;
    const double loss = log_sum - logits[label];
    if (!dlogits.empty()) {
        for (std::size_t j = 0; j < c; ++j)
            dlogits[j] = std::exp(logits[j] - log_sum);
        dlogits[label] -= 1.0;
    }
    return loss;
}

}  // namespace hpsl
