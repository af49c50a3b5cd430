#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "hpsl/errors.hpp"

namespace hpsl {

struct EvalMetrics {
    double accuracy = std::numeric_limits<double>::quiet_NaN();
    double per_point_accuracy = std::numeric_limits<double>::quiet_NaN();
    double mean_iou = std::numeric_limits<double>::quiet_NaN();
};

inline double classification_accuracy(std::span<const int> predictions,
                                      std::span<const int> truth) {
    if (predictions.size() != truth.size() || predictions.empty())
        throw ArgumentError("accuracy: prediction/label size mismatch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == truth[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

// Macro-averaged point IoU over the classes that occur in either the truth
// or the prediction. Points with negative truth labels are ignored.
inline double mean_iou(std::span<const int> predictions, std::span<const int> truth,
                       std::size_t num_classes) {
    if (predictions.size() != truth.size())
        throw ArgumentError("mean_iou: prediction/label size mismatch");
    std::vector<std::size_t> inter(num_classes, 0), uni(num_classes, 0);
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (truth[i] < 0) continue;
        const auto t = static_cast<std::size_t>(truth[i]);
        const auto p = static_cast<std::size_t>(predictions[i]);
        if (t >= num_classes || p >= num_classes)
            throw ArgumentError("mean_iou: label outside the class range");
        if (t == p) {
            ++inter[t];
            ++uni[t];
        } else {
            ++uni[t];
            ++uni[p];
        }
    }
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (uni[c] == 0) continue;
        sum += static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
        ++counted;
    }
    if (counted == 0) throw ArgumentError("mean_iou: no labeled points");
    return sum / static_cast<double>(counted);
}

}  // namespace hpsl
