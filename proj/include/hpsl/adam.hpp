#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "hpsl/errors.hpp"
#include "hpsl/tensor.hpp"

namespace hpsl {

// Adam with bias correction. lr 0.001 is the training default; the remaining
// constants are the conventional ones.
struct AdamState {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t t = 0;
    std::vector<std::vector<double>> m, v;  // one buffer per parameter tensor

    void reset(std::span<Tensor* const> params) {
        t = 0;
        m.clear();
        v.clear();
        for (const Tensor* p : params) {
            m.emplace_back(p->size(), 0.0);
            v.emplace_back(p->size(), 0.0);
        }
    }
};

// One update step from the gradients stored in each tensor's grad buffer.
inline void adam_step(std::span<Tensor* const> params, AdamState& state) {
    if (state.m.size() != params.size()) state.reset(params);
    ++state.t;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        if (p.grad.size() != p.values.size())
            throw ArgumentError("adam_step: parameter has no gradient buffer");
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        if (m.size() != p.size())
            throw ArgumentError("adam_step: state shape mismatch");
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double g = p.grad[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.values[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

}  // namespace hpsl
