#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hpsl/tensor.hpp"

namespace hpsl {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t worst_param = 0;  // index into the parameter list
    std::size_t worst_coord = 0;  // flat coordinate inside that tensor
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t checked = 0;

    bool passed(double tolerance) const { return max_rel_err < tolerance; }
};

// Central-difference check of analytic gradients. `loss` must be a
// deterministic scalar function of the parameter values (dropout off, seeds
// fixed). When `with_grad` is true it must also populate every parameter's
// grad buffer for that evaluation.
inline GradCheckReport grad_check(const std::function<double(bool with_grad)>& loss,
                                  std::span<Tensor* const> params, double step = 1e-5,
                                  std::size_t max_coords_per_tensor = 0,
                                  double denom_floor = 1e-3) {
    for (Tensor* p : params) {
        p->ensure_grad();
        p->zero_grad();
    }
    loss(true);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const Tensor* p : params) analytic.push_back(p->grad);

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        std::size_t limit = p.size();
        if (max_coords_per_tensor > 0 && limit > max_coords_per_tensor)
            limit = max_coords_per_tensor;
        for (std::size_t i = 0; i < limit; ++i) {
            const double saved = p.values[i];
            p.values[i] = saved + step;
            const double up = loss(false);
            p.values[i] = saved - step;
            const double down = loss(false);
            p.values[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[pi][i];
            const double denom = std::max({std::fabs(a), std::fabs(numeric), denom_floor});
            const double rel = std::fabs(a - numeric) / denom;
            ++report.checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = pi;
                report.worst_coord = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace hpsl
