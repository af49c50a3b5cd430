#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "hpsl/cloud.hpp"
#include "hpsl/mesh.hpp"
#include "hpsl/rng.hpp"

namespace hpsl {

// ---------------------------------------------------------------------------
// training-time augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
    double dropout_p = 0.95;  // random input dropout upper bound
    double jitter_sigma = 0.0;
    double jitter_clip = 0.0;
    double scale_lo = 1.0, scale_hi = 1.0;
    bool rotate_up_axis = false;
    // Feature column where a dim-sized unit normal starts; rotated with the
    // cloud and re-unit-normalized after scaling.
    std::optional<std::size_t> normals_start;

    void validate() const {
        if (dropout_p < 0.0 || dropout_p >= 1.0)
            throw ArgumentError("dropout_p must be in [0, 1)");
        if (jitter_sigma < 0.0 || jitter_clip < 0.0)
            throw ArgumentError("jitter parameters must be >= 0");
        if (scale_lo > scale_hi) throw ArgumentError("scale_lo must be <= scale_hi");
        if (scale_lo <= 0.0) throw ArgumentError("scale range must be positive");
    }
};

// Draws one dropout ratio theta ~ U[0, p] per cloud and drops each point
// independently with probability theta. Never returns an empty cloud: if
// every point would drop, one uniformly chosen point survives.
inline PointCloud random_input_dropout(const PointCloud& cloud, double p,
                                       RngStream& rng) {
    if (p < 0.0 || p >= 1.0)
        throw ArgumentError("random_input_dropout: p must be in [0, 1)");
    if (p == 0.0) return cloud;
    const double theta = rng.uniform(0.0, p);
    const std::size_t n = cloud.size();
    std::vector<std::size_t> kept;
    kept.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        if (!(rng.uniform() < theta)) kept.push_back(i);
    if (kept.empty()) kept.push_back(static_cast<std::size_t>(rng.below(n)));

    PointCloud out;
    out.dim = cloud.dim;
    out.channels = cloud.channels;
    out.cloud_class = cloud.cloud_class;
    if (cloud.labels) out.labels.emplace();
    for (std::size_t i : kept) {
        auto pnt = cloud.point(i);
        out.coords.insert(out.coords.end(), pnt.begin(), pnt.end());
        auto f = cloud.feature(i);
        out.features.insert(out.features.end(), f.begin(), f.end());
        if (cloud.labels) out.labels->push_back((*cloud.labels)[i]);
    }
    return out;
}

namespace datagen_detail {

inline double clipped_normal(RngStream& rng, double sigma, double clip) {
    double v = sigma * rng.normal();
    return std::clamp(v, -clip, clip);
}

}  // namespace datagen_detail

// Applies, in order: rotation about the up axis by U[0, 2pi), uniform scale
// from [scale_lo, scale_hi], one global translation offset, and per-point
// jitter N(0, sigma^2) clipped to +-clip. The translation offset uses the
// same clipped-normal rule as the per-point jitter. Declared normal columns
// rotate with the cloud and are re-unit-normalized.
inline PointCloud augment(const PointCloud& cloud, const AugmentConfig& config,
                          RngStream& rng) {
    config.validate();
    const std::size_t d = cloud.dim;
    PointCloud out = cloud;

    if (config.rotate_up_axis && d >= 2) {
        // rotate in the plane of the first two axes (up = last axis)
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double ca = std::cos(angle), sa = std::sin(angle);
        auto rotate = [&](double* row) {
            double x = row[0], y = row[1];
            row[0] = ca * x - sa * y;
            row[1] = sa * x + ca * y;
        };
        for (std::size_t i = 0; i < out.size(); ++i) rotate(&out.coords[i * d]);
        if (config.normals_start)
            for (std::size_t i = 0; i < out.size(); ++i)
                rotate(&out.features[i * out.channels + *config.normals_start]);
    }

    const double scale = rng.uniform(config.scale_lo, config.scale_hi);
    if (scale != 1.0)
        for (double& v : out.coords) v *= scale;

    if (config.jitter_sigma > 0.0) {
        std::vector<double> shift(d);
        for (auto& v : shift)
            v = datagen_detail::clipped_normal(rng, config.jitter_sigma,
                                               config.jitter_clip);
        for (std::size_t i = 0; i < out.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) {
                out.coords[i * d + j] += shift[j];
                out.coords[i * d + j] += datagen_detail::clipped_normal(
                    rng, config.jitter_sigma, config.jitter_clip);
            }
    }

    if (config.normals_start) {
        for (std::size_t i = 0; i < out.size(); ++i) {
            double* nrm = &out.features[i * out.channels + *config.normals_start];
            double len = 0.0;
            for (std::size_t j = 0; j < d; ++j) len += nrm[j] * nrm[j];
            len = std::sqrt(len);
            if (len > 0.0)
                for (std::size_t j = 0; j < d; ++j) nrm[j] /= len;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// mesh surface sampling
// ---------------------------------------------------------------------------

// Area-weighted face choice + uniform barycentric sampling. With
// `face_normals_as_features`, each point carries its face's unit normal.
inline PointCloud sample_mesh_surface(const TriangleMesh& mesh, std::size_t n,
                                      RngStream& rng,
                                      bool face_normals_as_features = false) {
    mesh.validate();
    std::vector<double> cumulative;
    cumulative.reserve(mesh.num_faces());
    double total = 0.0;
    for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
        double a = mesh.face_area(f);
        total += a > kDegenerateFaceArea ? a : 0.0;
        cumulative.push_back(total);
    }
    if (total <= 0.0)
        throw ArgumentError("sample_mesh_surface: mesh has no non-degenerate faces");

    PointCloud out;
    out.dim = 3;
    out.channels = face_normals_as_features ? 3 : 0;
    if (mesh.face_labels) out.labels.emplace();
    out.coords.reserve(n * 3);
    for (std::size_t i = 0; i < n; ++i) {
        const double pick = rng.uniform() * total;
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
        std::size_t f = std::min<std::size_t>(
            static_cast<std::size_t>(it - cumulative.begin()), mesh.num_faces() - 1);
        double u = rng.uniform(), v = rng.uniform();
        if (u + v > 1.0) {  // fold into the triangle
            u = 1.0 - u;
            v = 1.0 - v;
        }
        auto a = mesh.vertex(mesh.faces[f][0]);
        auto b = mesh.vertex(mesh.faces[f][1]);
        auto c = mesh.vertex(mesh.faces[f][2]);
        for (int j = 0; j < 3; ++j)
            out.coords.push_back(a[j] + u * (b[j] - a[j]) + v * (c[j] - a[j]));
        if (face_normals_as_features) {
            auto nrm = mesh.face_normal(f);
            out.features.insert(out.features.end(), nrm.begin(), nrm.end());
        }
        if (mesh.face_labels) out.labels->push_back((*mesh.face_labels)[f]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// image to point set
// ---------------------------------------------------------------------------

constexpr double kPixelJitterSigma = 0.01;
constexpr double kPixelJitterClip = 0.03;

// Pixels brighter than 0.5 become 2-D points in [-1,1]^2 (image center at the
// origin, y up). Short sets are padded with jittered copies of random valid
// points up to target_n; long sets are subsampled uniformly (order
// preserved).
inline PointCloud pixels_to_pointcloud(const GrayImage& image, std::size_t target_n,
                                       RngStream& rng) {
    if (target_n < 1) throw ArgumentError("pixels_to_pointcloud: target_n must be >= 1");
    std::vector<double> base;
    for (std::size_t row = 0; row < image.height; ++row)
        for (std::size_t col = 0; col < image.width; ++col) {
            if (image.at(row, col) <= 0.5) continue;
            double x = (2.0 * (static_cast<double>(col) + 0.5) -
                        static_cast<double>(image.width)) /
                       static_cast<double>(image.width);
            double y = (static_cast<double>(image.height) -
                        2.0 * (static_cast<double>(row) + 0.5)) /
                       static_cast<double>(image.height);
            base.push_back(x);
            base.push_back(y);
        }
    const std::size_t valid = base.size() / 2;
    if (valid == 0)
        throw ArgumentError("pixels_to_pointcloud: no pixel brighter than 0.5");

    PointCloud out;
    out.dim = 2;
    if (valid > target_n) {
        std::vector<std::size_t> pick(valid);
        for (std::size_t i = 0; i < valid; ++i) pick[i] = i;
        shuffle(pick, rng);
        pick.resize(target_n);
        std::sort(pick.begin(), pick.end());
        for (std::size_t i : pick) {
            out.coords.push_back(base[i * 2]);
            out.coords.push_back(base[i * 2 + 1]);
        }
        return out;
    }
    out.coords = base;
    while (out.coords.size() / 2 < target_n) {
        const std::size_t src = static_cast<std::size_t>(rng.below(valid));
        out.coords.push_back(base[src * 2] + datagen_detail::clipped_normal(
                                                 rng, kPixelJitterSigma,
                                                 kPixelJitterClip));
        out.coords.push_back(base[src * 2 + 1] + datagen_detail::clipped_normal(
                                                     rng, kPixelJitterSigma,
                                                     kPixelJitterClip));
    }
    return out;
}

// ---------------------------------------------------------------------------
// virtual scans
// ---------------------------------------------------------------------------

struct ScanCamera {
    std::array<double, 3> position{};
    std::array<double, 3> heading{};  // unit
    std::array<double, 3> up{};       // unit, perpendicular to heading
    std::size_t plane_w = 100, plane_h = 75;
    double fov = 60.0 * std::numbers::pi / 180.0;  // horizontal, radians

    void validate() const {
        auto norm = [](const std::array<double, 3>& v) {
            return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        };
        if (std::fabs(norm(heading) - 1.0) > 1e-9 || std::fabs(norm(up) - 1.0) > 1e-9)
            throw ArgumentError("scan camera axes must be unit vectors");
        double dot = heading[0] * up[0] + heading[1] * up[1] + heading[2] * up[2];
        if (std::fabs(dot) > 1e-9)
            throw ArgumentError("scan camera heading must be perpendicular to up");
        if (plane_w < 1 || plane_h < 1)
            throw ArgumentError("scan camera plane must be at least 1x1 pixels");
        if (fov <= 0.0 || fov >= std::numbers::pi)
            throw ArgumentError("scan camera fov out of range");
    }
};

struct VirtualScanConfig {
    std::size_t camera_count = 8;
    double camera_height = 1.5;
    std::size_t plane_w = 100, plane_h = 75;
    double fov = 60.0 * std::numbers::pi / 180.0;
    double floor_band = 0.02;  // fraction of the scene height counted as floor
};

struct VirtualScanResult {
    std::vector<PointCloud> scans;  // one per heading; may hold zero points
    std::vector<bool> empty;        // flags headings with an empty frustum
    std::vector<ScanCamera> cameras;
};

// Projects every point through each camera's pixel grid and keeps the nearest
// point per pixel (depth-buffer visibility). Emits one cloud per heading with
// the original labels; samples come out denser near the camera.
inline PointCloud scan_one(const PointCloud& scene, const ScanCamera& cam) {
    cam.validate();
    const std::array<double, 3> f = cam.heading, u = cam.up;
    const std::array<double, 3> r{f[1] * u[2] - f[2] * u[1],
                                  f[2] * u[0] - f[0] * u[2],
                                  f[0] * u[1] - f[1] * u[0]};
    const double half_w = std::tan(cam.fov / 2.0);
    const double half_h = half_w * static_cast<double>(cam.plane_h) /
                          static_cast<double>(cam.plane_w);

    // pixel -> (depth, point index), nearest wins, ties to the lowest index
    std::map<std::pair<std::size_t, std::size_t>, std::pair<double, std::size_t>> buf;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        auto p = scene.point(i);
        double v[3] = {p[0] - cam.position[0], p[1] - cam.position[1],
                       p[2] - cam.position[2]};
        const double depth = v[0] * f[0] + v[1] * f[1] + v[2] * f[2];
        if (depth <= 1e-9) continue;
        const double x = (v[0] * r[0] + v[1] * r[1] + v[2] * r[2]) / depth;
        const double y = (v[0] * u[0] + v[1] * u[1] + v[2] * u[2]) / depth;
        if (x < -half_w || x >= half_w || y < -half_h || y >= half_h) continue;
        const auto px = static_cast<std::size_t>((x + half_w) / (2.0 * half_w) *
                                                 static_cast<double>(cam.plane_w));
        const auto py = static_cast<std::size_t>((y + half_h) / (2.0 * half_h) *
                                                 static_cast<double>(cam.plane_h));
        auto key = std::make_pair(std::min(px, cam.plane_w - 1),
                                  std::min(py, cam.plane_h - 1));
        auto it = buf.find(key);
        if (it == buf.end() || depth < it->second.first)
            buf[key] = {depth, i};
    }

    PointCloud out;
    out.dim = scene.dim;
    out.channels = scene.channels;
    if (scene.labels) out.labels.emplace();
    std::vector<std::size_t> picked;
    picked.reserve(buf.size());
    for (const auto& [key, hit] : buf) picked.push_back(hit.second);
    std::sort(picked.begin(), picked.end());
    for (std::size_t i : picked) {
        auto p = scene.point(i);
        out.coords.insert(out.coords.end(), p.begin(), p.end());
        auto feat = scene.feature(i);
        out.features.insert(out.features.end(), feat.begin(), feat.end());
        if (scene.labels) out.labels->push_back((*scene.labels)[i]);
    }
    return out;
}

// Camera 1.5 m above the centroid of the floor plane (the lowest band of the
// scene along z), headings evenly spaced in the horizontal plane.
inline VirtualScanResult virtual_scan(const PointCloud& scene,
                                      const VirtualScanConfig& config = {}) {
    if (scene.dim != 3) throw ArgumentError("virtual_scan: scene must be 3-D");
    double z_min = std::numeric_limits<double>::infinity();
    double z_max = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < scene.size(); ++i) {
        z_min = std::min(z_min, scene.coords[i * 3 + 2]);
        z_max = std::max(z_max, scene.coords[i * 3 + 2]);
    }
    const double band = z_min + config.floor_band * std::max(z_max - z_min, 1e-12);
    double cx = 0.0, cy = 0.0;
    std::size_t floor_count = 0;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (scene.coords[i * 3 + 2] > band) continue;
        cx += scene.coords[i * 3];
        cy += scene.coords[i * 3 + 1];
        ++floor_count;
    }
    cx /= static_cast<double>(floor_count);
    cy /= static_cast<double>(floor_count);

    VirtualScanResult result;
    for (std::size_t k = 0; k < config.camera_count; ++k) {
        const double yaw = 2.0 * std::numbers::pi * static_cast<double>(k) /
                           static_cast<double>(config.camera_count);
        ScanCamera cam;
        cam.position = {cx, cy, z_min + config.camera_height};
        cam.heading = {std::cos(yaw), std::sin(yaw), 0.0};
        cam.up = {0.0, 0.0, 1.0};
        cam.plane_w = config.plane_w;
        cam.plane_h = config.plane_h;
        cam.fov = config.fov;
        PointCloud scan = scan_one(scene, cam);
        result.empty.push_back(scan.size() == 0);
        result.scans.push_back(std::move(scan));
        result.cameras.push_back(cam);
    }
    return result;
}

// ---------------------------------------------------------------------------
// scene cubes and vote merging
// ---------------------------------------------------------------------------

struct CubeConfig {
    double size_x = 1.5, size_y = 1.5, size_z = 3.0;  // meters
    std::size_t target_n = 8192;
    double occupancy_min = 0.02;
    double annotated_min = 0.70;
    double stride = 0.75;
    double voxel = 0.05;
};

struct CubeSet {
    std::vector<PointCloud> cubes;
    // per cube, per point: index into the scene (pads map to their source)
    std::vector<std::vector<std::size_t>> scene_indices;
    std::vector<std::array<double, 2>> origins;  // cube min-corner (x, y)
};

// Slides a cube grid over the scene; keeps cubes whose voxel occupancy and
// annotated-voxel fraction clear the thresholds, each padded/subsampled to
// exactly target_n points.
inline CubeSet extract_cubes(const PointCloud& scene, const CubeConfig& config,
                             RngStream& rng) {
    if (scene.dim != 3) throw ArgumentError("extract_cubes: scene must be 3-D");
    if (!scene.labels) throw ArgumentError("extract_cubes: scene must be labeled");
    double min_v[3], max_v[3];
    for (int j = 0; j < 3; ++j) {
        min_v[j] = std::numeric_limits<double>::infinity();
        max_v[j] = -std::numeric_limits<double>::infinity();
    }
    for (std::size_t i = 0; i < scene.size(); ++i)
        for (int j = 0; j < 3; ++j) {
            min_v[j] = std::min(min_v[j], scene.coords[i * 3 + j]);
            max_v[j] = std::max(max_v[j], scene.coords[i * 3 + j]);
        }

    const auto vx = static_cast<std::size_t>(std::lround(config.size_x / config.voxel));
    const auto vy = static_cast<std::size_t>(std::lround(config.size_y / config.voxel));
    const auto vz = static_cast<std::size_t>(std::lround(config.size_z / config.voxel));
    const double total_voxels = static_cast<double>(vx * vy * vz);

    CubeSet out;
    for (double x0 = min_v[0]; x0 < max_v[0]; x0 += config.stride) {
        for (double y0 = min_v[1]; y0 < max_v[1]; y0 += config.stride) {
            const double z0 = min_v[2];
            std::vector<std::size_t> inside;
            for (std::size_t i = 0; i < scene.size(); ++i) {
                const double* p = scene.coords.data() + i * 3;
                if (p[0] >= x0 && p[0] < x0 + config.size_x && p[1] >= y0 &&
                    p[1] < y0 + config.size_y && p[2] >= z0 &&
                    p[2] < z0 + config.size_z)
                    inside.push_back(i);
            }
            if (inside.empty()) continue;

            std::map<std::size_t, bool> occupied;  // voxel id -> any annotated
            for (std::size_t i : inside) {
                const double* p = scene.coords.data() + i * 3;
                auto ix = std::min(vx - 1, static_cast<std::size_t>(
                                               (p[0] - x0) / config.voxel));
                auto iy = std::min(vy - 1, static_cast<std::size_t>(
                                               (p[1] - y0) / config.voxel));
                auto iz = std::min(vz - 1, static_cast<std::size_t>(
                                               (p[2] - z0) / config.voxel));
                std::size_t id = (ix * vy + iy) * vz + iz;
                bool annotated = (*scene.labels)[i] >= 0;
                auto it = occupied.find(id);
                if (it == occupied.end())
                    occupied[id] = annotated;
                else
                    it->second = it->second || annotated;
            }
            const double occupancy =
                static_cast<double>(occupied.size()) / total_voxels;
            if (occupancy < config.occupancy_min) continue;
            std::size_t annotated_voxels = 0;
            for (const auto& [id, ann] : occupied)
                if (ann) ++annotated_voxels;
            if (static_cast<double>(annotated_voxels) <
                config.annotated_min * static_cast<double>(occupied.size()))
                continue;

            // pad/subsample to the fixed cardinality
            std::vector<std::size_t> chosen;
            if (inside.size() > config.target_n) {
                std::vector<std::size_t> pick = inside;
                shuffle(pick, rng);
                pick.resize(config.target_n);
                std::sort(pick.begin(), pick.end());
                chosen = std::move(pick);
            } else {
                chosen = inside;
                while (chosen.size() < config.target_n)
                    chosen.push_back(
                        inside[static_cast<std::size_t>(rng.below(inside.size()))]);
            }

            PointCloud cube;
            cube.dim = 3;
            cube.channels = scene.channels;
            cube.labels.emplace();
            std::vector<std::size_t> provenance;
            for (std::size_t idx = 0; idx < chosen.size(); ++idx) {
                const std::size_t i = chosen[idx];
                auto p = scene.point(i);
                double jit[3] = {0.0, 0.0, 0.0};
                if (idx >= inside.size()) {  // padded duplicate gets jitter
                    for (double& j : jit)
                        j = datagen_detail::clipped_normal(rng, kPixelJitterSigma,
                                                           kPixelJitterClip);
                }
                for (int j = 0; j < 3; ++j) cube.coords.push_back(p[j] + jit[j]);
                auto f = scene.feature(i);
                cube.features.insert(cube.features.end(), f.begin(), f.end());
                cube.labels->push_back((*scene.labels)[i]);
                provenance.push_back(i);
            }
            out.cubes.push_back(std::move(cube));
            out.scene_indices.push_back(std::move(provenance));
            out.origins.push_back({x0, y0});
        }
    }
    return out;
}

struct CubePrediction {
    std::vector<std::size_t> scene_indices;
    std::vector<int> labels;
};

// Majority vote per scene point across overlapping cube predictions; ties go
// to the lowest label id. Every point must be covered by at least one cube.
inline std::vector<int> merge_votes(const std::vector<CubePrediction>& predictions,
                                    std::size_t scene_points) {
    std::vector<std::map<int, std::size_t>> votes(scene_points);
    for (const auto& pred : predictions) {
        if (pred.scene_indices.size() != pred.labels.size())
            throw ArgumentError("merge_votes: index/label count mismatch");
        for (std::size_t i = 0; i < pred.scene_indices.size(); ++i) {
            if (pred.scene_indices[i] >= scene_points)
                throw ArgumentError("merge_votes: scene index out of range");
            votes[pred.scene_indices[i]][pred.labels[i]]++;
        }
    }
    std::vector<std::size_t> uncovered;
    for (std::size_t i = 0; i < scene_points; ++i)
        if (votes[i].empty()) uncovered.push_back(i);
    if (!uncovered.empty()) {
        std::string msg = "merge_votes: uncovered points:";
        for (std::size_t i = 0; i < std::min<std::size_t>(uncovered.size(), 10); ++i)
            msg += " " + std::to_string(uncovered[i]);
        if (uncovered.size() > 10)
            msg += " (+" + std::to_string(uncovered.size() - 10) + " more)";
        throw ArgumentError(msg);
    }

    std::vector<int> out(scene_points);
    for (std::size_t i = 0; i < scene_points; ++i) {
        int best_label = votes[i].begin()->first;
        std::size_t best_count = votes[i].begin()->second;
        for (const auto& [label, count] : votes[i]) {
            if (count > best_count) {  // map iterates labels ascending
                best_count = count;
                best_label = label;
            }
        }
        out[i] = best_label;
    }
    return out;
}

}  // namespace hpsl
