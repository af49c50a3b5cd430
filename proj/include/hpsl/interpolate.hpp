#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "hpsl/cloud.hpp"
#include "hpsl/errors.hpp"
#include "hpsl/neighborhood.hpp"
#include "hpsl/tensor.hpp"

namespace hpsl {

constexpr double kInterpCoincidenceDist = 1e-12;

// Inverse-distance weights over the k nearest sources: w_i = 1/d^p,
// normalized to sum 1. A source closer than 1e-12 short-circuits to weight 1
// on that source (lowest index wins), so features at source points reproduce
// exactly.
struct InterpWeights {
    std::vector<std::size_t> sources;  // k nearest, by (distance, index)
    std::vector<double> weights;       // normalized
};

inline InterpWeights interpolation_weights(std::span<const double> target,
                                           const PointCloud& sources, std::size_t k,
                                           double power) {
    if (k < 1 || k > sources.size())
        throw ArgumentError("interpolation_weights: k must be in [1, N]");
    if (power <= 0.0) throw ArgumentError("interpolation_weights: power must be > 0");
    auto nearest = brute_knn(sources, target, k);

    InterpWeights out;
    out.sources.reserve(k);
    for (const auto& nb : nearest) {
        out.sources.push_back(nb.index);
        if (std::sqrt(nb.sq_dist) < kInterpCoincidenceDist) {
            out.sources.assign(1, nb.index);
            out.weights.assign(1, 1.0);
            return out;
        }
    }
    double total = 0.0;
    std::vector<double> raw;
    raw.reserve(k);
    for (const auto& nb : nearest) {
        double w = 1.0 / std::pow(std::sqrt(nb.sq_dist), power);
        raw.push_back(w);
        total += w;
    }
    out.weights.resize(k);
    for (std::size_t i = 0; i < k; ++i) out.weights[i] = raw[i] / total;
    return out;
}

// Weighted average anchored at the nearest source: the sum runs over feature
// differences, so interpolating a constant field returns the constant bit-
// exactly.
inline void apply_interpolation(const InterpWeights& w, const Tensor& source_features,
                                double* out_row, std::size_t channels) {
    const double* anchor = source_features.row(w.sources[0]);
    for (std::size_t j = 0; j < channels; ++j) out_row[j] = anchor[j];
    for (std::size_t i = 0; i < w.sources.size(); ++i) {
        const double* f = source_features.row(w.sources[i]);
        for (std::size_t j = 0; j < channels; ++j)
            out_row[j] += w.weights[i] * (f[j] - anchor[j]);
    }
}

// Inverse-distance interpolation of source features onto target coordinates.
inline Tensor interpolate_features(const std::vector<double>& target_coords,
                                   std::size_t dim, const PointCloud& sources,
                                   const Tensor& source_features, std::size_t k,
                                   double power,
                                   std::vector<InterpWeights>* saved = nullptr) {
    const std::size_t m = target_coords.size() / dim;
    const std::size_t channels = source_features.cols();
    Tensor out = Tensor::matrix(m, channels);
    if (saved) saved->assign(m, {});
    for (std::size_t t = 0; t < m; ++t) {
        std::span<const double> target{target_coords.data() + t * dim, dim};
        InterpWeights w = interpolation_weights(target, sources, k, power);
        apply_interpolation(w, source_features, out.row(t), channels);
        if (saved) (*saved)[t] = std::move(w);
    }
    return out;
}

// Gradient of the interpolation w.r.t. source features: the algebraic
// Jacobian is just the weight table transposed.
inline Tensor interpolate_backward(const Tensor& dy,
                                   const std::vector<InterpWeights>& saved,
                                   std::size_t num_sources) {
    const std::size_t channels = dy.cols();
    Tensor dsrc = Tensor::matrix(num_sources, channels);
    for (std::size_t t = 0; t < dy.rows(); ++t) {
        const auto& w = saved[t];
        for (std::size_t i = 0; i < w.sources.size(); ++i) {
            double* dst = dsrc.row(w.sources[i]);
            const double* g = dy.row(t);
            for (std::size_t j = 0; j < channels; ++j) dst[j] += w.weights[i] * g[j];
        }
    }
    return dsrc;
}

}  // namespace hpsl
