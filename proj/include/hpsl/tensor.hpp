#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "hpsl/errors.hpp"

namespace hpsl {

// Dense row-major real array with an optional gradient buffer of the same
// shape. The whole engine runs on 64-bit floats.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until ensure_grad()

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        values.assign(count(shape), 0.0);
    }

    static Tensor matrix(std::size_t rows, std::size_t cols) {
        return Tensor({rows, cols});
    }

    static Tensor vector_of(std::size_t n) { return Tensor({n}); }

    static std::size_t count(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t(1),
                               [](std::size_t a, std::size_t b) { return a * b; });
    }

    std::size_t size() const { return values.size(); }

    std::size_t rows() const {
        assert(!shape.empty());
        return shape[0];
    }

    std::size_t cols() const {
        assert(shape.size() == 2);
        return shape[1];
    }

    double& at(std::size_t r, std::size_t c) {
        assert(shape.size() == 2);
        return values[r * shape[1] + c];
    }
    double at(std::size_t r, std::size_t c) const {
        assert(shape.size() == 2);
        return values[r * shape[1] + c];
    }

    double* row(std::size_t r) {
        assert(shape.size() == 2);
        return values.data() + r * shape[1];
    }
    const double* row(std::size_t r) const {
        assert(shape.size() == 2);
        return values.data() + r * shape[1];
    }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }

    void zero_grad() {
        if (!grad.empty()) grad.assign(values.size(), 0.0);
    }

    bool all_finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

}  // namespace hpsl
