#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace hpsl {

enum class HeadKind { Classification, Segmentation };

// One grouping scale of a set abstraction level: ball radius plus the widths
// of the shared per-point MLP.
struct SaScaleSpec {
    double radius = 0.0;  // unused for global levels
    std::vector<std::size_t> widths;

    bool operator==(const SaScaleSpec&) const = default;
};

struct SaLevelSpec {
    bool global = false;
    std::size_t num_centroids = 0;  // 0 when global
    std::vector<SaScaleSpec> scales;

    bool multi_scale() const { return scales.size() > 1; }

    std::size_t output_width() const {
        std::size_t w = 0;
        for (const auto& s : scales) w += s.widths.back();
        return w;
    }

    bool operator==(const SaLevelSpec&) const = default;
};

struct FcLevelSpec {
    std::size_t width = 0;
    double dropout = 0.0;

    bool operator==(const FcLevelSpec&) const = default;
};

struct FpLevelSpec {
    std::vector<std::size_t> widths;
    // Per layer, applied after bn+relu; derived (last two pre-score layers of
    // the whole FP chain get 0.5), not part of the notation.
    std::vector<double> dropout_after;

    bool operator==(const FpLevelSpec&) const = default;
};

// The cross-level multi-resolution net. branch1 is an SA chain over the raw
// points whose final level fixes the region centroids; branch2 encodes raw
// points around those same centroids (its printed centroid count is accepted
// but the built network reuses branch1's); branch3 and branch4 are global
// encoders over the raw points and over the concatenated branch1+branch2
// features respectively.
struct MrgSpec {
    std::vector<SaLevelSpec> branch1;
    SaLevelSpec branch2;
    std::vector<std::size_t> branch3_widths;
    std::vector<std::size_t> branch4_widths;

    bool operator==(const MrgSpec&) const = default;
};

struct BlueprintLevel {
    enum class Kind { Sa, Fc, Fp, Mrg };
    Kind kind = Kind::Sa;
    SaLevelSpec sa;
    FcLevelSpec fc;
    FpLevelSpec fp;
    MrgSpec mrg;

    bool operator==(const BlueprintLevel&) const = default;
};

struct NetworkBlueprint {
    std::vector<BlueprintLevel> levels;

    bool operator==(const NetworkBlueprint&) const = default;

    HeadKind head() const {
        for (const auto& l : levels)
            if (l.kind == BlueprintLevel::Kind::Fp) return HeadKind::Segmentation;
        return HeadKind::Classification;
    }
};

struct ChainDiagnostic {
    bool ok = true;
    std::string message;  // names the first offending level when !ok
};

}  // namespace hpsl
