#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "hpsl/cloud_io.hpp"
#include "hpsl/datagen.hpp"

namespace hpsl {

// Desk-scale stand-in corpora: 2-D outline shapes, 3-D solid surfaces and
// labeled room scenes.
inline const std::vector<std::string>& corpus_classes(const std::string& kind) {
    static const std::vector<std::string> shapes2d{"circle", "square", "triangle"};
    static const std::vector<std::string> solids3d{"sphere", "box", "torus", "cylinder"};
    static const std::vector<std::string> rooms{"floor", "wall", "furniture"};
    if (kind == "2d-shapes") return shapes2d;
    if (kind == "3d-solids") return solids3d;
    if (kind == "room-scenes") return rooms;
    throw ArgumentError("unknown corpus kind: " + kind);
}

inline std::size_t corpus_dim(const std::string& kind) {
    return kind == "2d-shapes" ? 2 : 3;
}

namespace corpus_detail {

constexpr double kOutlineNoise = 0.02;

inline void rotate2(double& x, double& y, double angle) {
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double nx = ca * x - sa * y, ny = sa * x + ca * y;
    x = nx;
    y = ny;
}

inline PointCloud shape_2d(std::size_t class_id, std::size_t points, RngStream rng) {
    std::vector<double> coords;
    coords.reserve(points * 2);
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < points; ++i) {
        const double t = rng.uniform();
        double x = 0.0, y = 0.0;
        if (class_id == 0) {  // circle outline
            x = std::cos(2.0 * std::numbers::pi * t);
            y = std::sin(2.0 * std::numbers::pi * t);
        } else if (class_id == 1) {  // square perimeter
            const double s = 4.0 * t;
            const double frac = s - std::floor(s);
            switch (static_cast<int>(s) % 4) {
                case 0: x = -1.0 + 2.0 * frac; y = -1.0; break;
                case 1: x = 1.0; y = -1.0 + 2.0 * frac; break;
                case 2: x = 1.0 - 2.0 * frac; y = 1.0; break;
                default: x = -1.0; y = 1.0 - 2.0 * frac; break;
            }
        } else {  // triangle perimeter
            static const double vx[3] = {0.0, -0.8660254037844386, 0.8660254037844387};
            static const double vy[3] = {1.0, -0.5, -0.5};
            const double s = 3.0 * t;
            const int edge = static_cast<int>(s) % 3;
            const double frac = s - std::floor(s);
            x = vx[edge] + frac * (vx[(edge + 1) % 3] - vx[edge]);
            y = vy[edge] + frac * (vy[(edge + 1) % 3] - vy[edge]);
        }
        rotate2(x, y, angle);
        coords.push_back(x + kOutlineNoise * rng.normal());
        coords.push_back(y + kOutlineNoise * rng.normal());
    }
    PointCloud cloud = make_cloud(2, std::move(coords));
    cloud.cloud_class = static_cast<int>(class_id);
    return normalize_unit_ball(cloud);
}

inline PointCloud solid_3d(std::size_t class_id, std::size_t points, RngStream rng) {
    std::vector<double> coords;
    coords.reserve(points * 3);
    const double spin = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < points; ++i) {
        double p[3] = {0.0, 0.0, 0.0};
        if (class_id == 0) {  // sphere surface
            double n = 0.0;
            for (int j = 0; j < 3; ++j) {
                p[j] = rng.normal();
                n += p[j] * p[j];
            }
            n = std::sqrt(std::max(n, 1e-12));
            for (double& v : p) v /= n;
        } else if (class_id == 1) {  // box surface, equal face areas
            const auto face = static_cast<int>(rng.below(6));
            const double u = rng.uniform(-0.6, 0.6), v = rng.uniform(-0.6, 0.6);
            const int axis = face / 2;
            p[axis] = face % 2 == 0 ? -0.6 : 0.6;
            p[(axis + 1) % 3] = u;
            p[(axis + 2) % 3] = v;
        } else if (class_id == 2) {  // torus, area-correct rejection on v
            const double big_r = 0.75, small_r = 0.3;
            double u, v;
            for (;;) {
                u = rng.uniform(0.0, 2.0 * std::numbers::pi);
                v = rng.uniform(0.0, 2.0 * std::numbers::pi);
                if (rng.uniform() <=
                    (big_r + small_r * std::cos(v)) / (big_r + small_r))
                    break;
            }
            p[0] = (big_r + small_r * std::cos(v)) * std::cos(u);
            p[1] = (big_r + small_r * std::cos(v)) * std::sin(u);
            p[2] = small_r * std::sin(v);
        } else {  // cylinder with caps, area-weighted
            const double radius = 0.5, height = 1.4;
            const double side_area = 2.0 * std::numbers::pi * radius * height;
            const double cap_area = std::numbers::pi * radius * radius;
            const double pick = rng.uniform() * (side_area + 2.0 * cap_area);
            const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
            if (pick < side_area) {
                p[0] = radius * std::cos(theta);
                p[1] = radius * std::sin(theta);
                p[2] = rng.uniform(-height / 2.0, height / 2.0);
            } else {
                const double rr = radius * std::sqrt(rng.uniform());
                p[0] = rr * std::cos(theta);
                p[1] = rr * std::sin(theta);
                p[2] = pick < side_area + cap_area ? -height / 2.0 : height / 2.0;
            }
        }
        rotate2(p[0], p[1], spin);
        for (double v : p) coords.push_back(v + kOutlineNoise * rng.normal());
    }
    PointCloud cloud = make_cloud(3, std::move(coords));
    cloud.cloud_class = static_cast<int>(class_id);
    return normalize_unit_ball(cloud);
}

inline void add_quad(TriangleMesh& mesh, const std::array<double, 3>& a,
                     const std::array<double, 3>& b, const std::array<double, 3>& c,
                     const std::array<double, 3>& d, int label) {
    const std::size_t base = mesh.num_vertices();
    for (const auto& v : {a, b, c, d})
        mesh.vertices.insert(mesh.vertices.end(), v.begin(), v.end());
    mesh.faces.push_back({base, base + 1, base + 2});
    mesh.faces.push_back({base, base + 2, base + 3});
    mesh.face_labels->push_back(label);
    mesh.face_labels->push_back(label);
}

inline void add_box(TriangleMesh& mesh, double x0, double y0, double z0, double x1,
                    double y1, double z1, int label) {
    add_quad(mesh, {x0, y0, z0}, {x1, y0, z0}, {x1, y1, z0}, {x0, y1, z0}, label);
    add_quad(mesh, {x0, y0, z1}, {x1, y0, z1}, {x1, y1, z1}, {x0, y1, z1}, label);
    add_quad(mesh, {x0, y0, z0}, {x1, y0, z0}, {x1, y0, z1}, {x0, y0, z1}, label);
    add_quad(mesh, {x0, y1, z0}, {x1, y1, z0}, {x1, y1, z1}, {x0, y1, z1}, label);
    add_quad(mesh, {x0, y0, z0}, {x0, y1, z0}, {x0, y1, z1}, {x0, y0, z1}, label);
    add_quad(mesh, {x1, y0, z0}, {x1, y1, z0}, {x1, y1, z1}, {x1, y0, z1}, label);
}

}  // namespace corpus_detail

// Labeled synthetic room: floor (0), four walls (1), box furniture (2), in
// meters with z up. Surfaces are area-weighted sampled, so density is
// uniform.
inline TriangleMesh make_room_mesh(RngStream rng) {
    using namespace corpus_detail;
    TriangleMesh mesh;
    mesh.face_labels.emplace();
    const double lx = rng.uniform(4.0, 6.0);
    const double ly = rng.uniform(4.0, 6.0);
    const double h = rng.uniform(2.6, 3.0);

    add_quad(mesh, {0, 0, 0}, {lx, 0, 0}, {lx, ly, 0}, {0, ly, 0}, 0);  // floor
    add_quad(mesh, {0, 0, 0}, {lx, 0, 0}, {lx, 0, h}, {0, 0, h}, 1);
    add_quad(mesh, {0, ly, 0}, {lx, ly, 0}, {lx, ly, h}, {0, ly, h}, 1);
    add_quad(mesh, {0, 0, 0}, {0, ly, 0}, {0, ly, h}, {0, 0, h}, 1);
    add_quad(mesh, {lx, 0, 0}, {lx, ly, 0}, {lx, ly, h}, {lx, 0, h}, 1);

    const std::size_t furniture = 2 + rng.below(3);
    for (std::size_t i = 0; i < furniture; ++i) {
        const double w = rng.uniform(0.6, 1.4);
        const double dpt = rng.uniform(0.6, 1.4);
        const double hh = rng.uniform(0.4, 1.1);
        const double x0 = rng.uniform(0.3, lx - w - 0.3);
        const double y0 = rng.uniform(0.3, ly - dpt - 0.3);
        add_box(mesh, x0, y0, 0.0, x0 + w, y0 + dpt, hh, 2);
    }
    return mesh;
}

inline PointCloud make_room_scene(std::uint64_t seed, std::size_t points) {
    RngStream rng(seed);
    TriangleMesh mesh = make_room_mesh(rng.child(0));
    RngStream sampler = rng.child(1);
    return sample_mesh_surface(mesh, points, sampler);
}

// One synthetic cloud of the given class, deterministic per stream.
inline PointCloud generate_shape_cloud(const std::string& kind, std::size_t class_id,
                                       std::size_t points, RngStream rng) {
    if (kind == "2d-shapes") return corpus_detail::shape_2d(class_id, points, rng);
    if (kind == "3d-solids") return corpus_detail::solid_3d(class_id, points, rng);
    if (kind == "room-scenes") {
        PointCloud scene = make_room_scene(rng.next_u64(), points);
        return scene;
    }
    throw ArgumentError("unknown corpus kind: " + kind);
}

struct CorpusEntry {
    std::string path;  // relative to the manifest directory
    int label = 0;
};

struct CorpusManifest {
    std::string kind;
    std::vector<std::string> classes;
    std::size_t dim = 0;
    std::size_t points = 0;
    std::vector<CorpusEntry> train, test;
};

inline nlohmann::json manifest_to_json(const CorpusManifest& m) {
    nlohmann::json j;
    j["kind"] = m.kind;
    j["classes"] = m.classes;
    j["d"] = m.dim;
    j["points"] = m.points;
    for (const char* split : {"train", "test"}) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& e : (std::string(split) == "train" ? m.train : m.test))
            arr.push_back({{"path", e.path}, {"label", e.label}});
        j[split] = arr;
    }
    return j;
}

inline CorpusManifest manifest_from_json(const nlohmann::json& j) {
    CorpusManifest m;
    m.kind = j.at("kind").get<std::string>();
    m.classes = j.at("classes").get<std::vector<std::string>>();
    m.dim = j.at("d").get<std::size_t>();
    m.points = j.at("points").get<std::size_t>();
    for (const char* split : {"train", "test"}) {
        auto& dst = std::string(split) == "train" ? m.train : m.test;
        for (const auto& e : j.at(split))
            dst.push_back({e.at("path").get<std::string>(), e.at("label").get<int>()});
    }
    return m;
}

// Generates the corpus under out_dir (train/ and test/ subdirectories plus
// manifest.json). Deterministic per seed, byte for byte.
inline CorpusManifest make_synthetic_corpus(const std::string& kind,
                                            std::size_t n_per_class,
                                            std::size_t test_per_class,
                                            std::size_t points_per_cloud,
                                            std::uint64_t seed,
                                            const std::filesystem::path& out_dir) {
    const auto& classes = corpus_classes(kind);
    RngStream rng(seed);

    CorpusManifest manifest;
    manifest.kind = kind;
    manifest.classes = classes;
    manifest.dim = corpus_dim(kind);
    manifest.points = points_per_cloud;

    auto emit = [&](const std::string& split, std::size_t count,
                    std::vector<CorpusEntry>& entries, std::uint64_t split_tag) {
        if (kind == "room-scenes") {
            // per-point labeled scenes; the class list names the part labels
            for (std::size_t i = 0; i < count; ++i) {
                RngStream stream = rng.child({split_tag, 0, i});
                PointCloud scene =
                    make_room_scene(stream.next_u64(), points_per_cloud);
                char name[128];
                std::snprintf(name, sizeof(name), "%s/scene_%04zu.pcl", split.c_str(),
                              i);
                write_cloud(scene, out_dir / name);
                entries.push_back({name, -1});
            }
            return;
        }
        for (std::size_t cls = 0; cls < classes.size(); ++cls) {
            for (std::size_t i = 0; i < count; ++i) {
                RngStream stream = rng.child({split_tag, cls, i});
                PointCloud cloud =
                    generate_shape_cloud(kind, cls, points_per_cloud, stream);
                char name[128];
                std::snprintf(name, sizeof(name), "%s/%s_%04zu.pcl", split.c_str(),
                              classes[cls].c_str(), i);
                write_cloud(cloud, out_dir / name);
                entries.push_back({name, static_cast<int>(cls)});
            }
        }
    };
    emit("train", n_per_class, manifest.train, 1);
    emit("test", test_per_class, manifest.test, 2);

    write_file_atomic(out_dir / "manifest.json", manifest_to_json(manifest).dump(2) + "\n");
    return manifest;
}

inline CorpusManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path.string());
    nlohmann::json j;
    in >> j;
    return manifest_from_json(j);
}

}  // namespace hpsl
