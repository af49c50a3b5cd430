#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <vector>

#include "hpsl/cloud_io.hpp"
#include "hpsl/errors.hpp"

namespace hpsl {

constexpr double kDegenerateFaceArea = 1e-12;

// Triangle surface mesh with optional per-face labels.
struct TriangleMesh {
    std::vector<double> vertices;                   // V x 3
    std::vector<std::array<std::size_t, 3>> faces;  // F x 3
    std::optional<std::vector<int>> face_labels;

    std::size_t num_vertices() const { return vertices.size() / 3; }
    std::size_t num_faces() const { return faces.size(); }

    std::array<double, 3> vertex(std::size_t v) const {
        return {vertices[v * 3], vertices[v * 3 + 1], vertices[v * 3 + 2]};
    }

    // Cross-product area and unit normal of one face.
    std::array<double, 3> face_cross(std::size_t f) const {
        auto a = vertex(faces[f][0]), b = vertex(faces[f][1]), c = vertex(faces[f][2]);
        double u[3] = {b[0] - a[0], b[1] - a[1], b[2] - a[2]};
        double v[3] = {c[0] - a[0], c[1] - a[1], c[2] - a[2]};
        return {u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2],
                u[0] * v[1] - u[1] * v[0]};
    }

    double face_area(std::size_t f) const {
        auto x = face_cross(f);
        return 0.5 * std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
    }

    std::array<double, 3> face_normal(std::size_t f) const {
        auto x = face_cross(f);
        double n = std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
        if (n < kDegenerateFaceArea) return {0.0, 0.0, 0.0};
        return {x[0] / n, x[1] / n, x[2] / n};
    }

    void validate() const {
        for (const auto& f : faces)
            for (std::size_t v : f)
                if (v >= num_vertices())
                    throw ArgumentError("mesh face references missing vertex");
        if (face_labels && face_labels->size() != faces.size())
            throw ArgumentError("face label count differs from face count");
    }
};

// OFF subset: "OFF" header, "V F E" counts, V vertex lines, F lines of
// "3 i j k" triangles.
inline TriangleMesh parse_off(std::string_view text) {
    std::size_t line_no = 0, pos = 0;
    auto next_tokens = [&]() -> std::vector<std::string_view> {
        while (pos < text.size()) {
            std::size_t end = text.find('\n', pos);
            if (end == std::string_view::npos) end = text.size();
            std::string_view line = text.substr(pos, end - pos);
            pos = end + 1;
            ++line_no;
            auto toks = detail::split_ws(line);
            if (!toks.empty() && toks[0][0] != '#') return toks;
        }
        return {};
    };

    auto header = next_tokens();
    if (header.size() != 1 || header[0] != "OFF")
        throw ParseError("line " + std::to_string(line_no) + ": expected OFF header",
                         line_no);
    auto counts = next_tokens();
    if (counts.size() != 3)
        throw ParseError("line " + std::to_string(line_no) + ": expected 'V F E' counts",
                         line_no);
    const long v_count = detail::parse_int(counts[0], line_no);
    const long f_count = detail::parse_int(counts[1], line_no);
    if (v_count < 0 || f_count < 0)
        throw ParseError("line " + std::to_string(line_no) + ": negative counts",
                         line_no);

    TriangleMesh mesh;
    for (long v = 0; v < v_count; ++v) {
        auto toks = next_tokens();
        if (toks.size() != 3)
            throw ParseError("line " + std::to_string(line_no) +
                                 ": expected 3 vertex coordinates",
                             line_no);
        for (int j = 0; j < 3; ++j)
            mesh.vertices.push_back(detail::parse_double(toks[j], line_no));
    }
    for (long f = 0; f < f_count; ++f) {
        auto toks = next_tokens();
        if (toks.size() != 4 || toks[0] != "3")
            throw ParseError("line " + std::to_string(line_no) +
                                 ": expected triangle face '3 i j k'",
                             line_no);
        std::array<std::size_t, 3> face{};
        for (int j = 0; j < 3; ++j) {
            long idx = detail::parse_int(toks[j + 1], line_no);
            if (idx < 0 || idx >= v_count)
                throw ParseError("line " + std::to_string(line_no) +
                                     ": vertex index out of range",
                                 line_no);
            face[static_cast<std::size_t>(j)] = static_cast<std::size_t>(idx);
        }
        mesh.faces.push_back(face);
    }
    mesh.validate();
    return mesh;
}

inline TriangleMesh read_off(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_off(ss.str());
}

inline std::string format_off(const TriangleMesh& mesh) {
    std::string out = "OFF\n";
    out += std::to_string(mesh.num_vertices()) + " " + std::to_string(mesh.num_faces()) +
           " 0\n";
    for (std::size_t v = 0; v < mesh.num_vertices(); ++v) {
        for (int j = 0; j < 3; ++j) {
            if (j) out += ' ';
            detail::append_double(out, mesh.vertices[v * 3 + static_cast<std::size_t>(j)]);
        }
        out += '\n';
    }
    for (const auto& f : mesh.faces)
        out += "3 " + std::to_string(f[0]) + " " + std::to_string(f[1]) + " " +
               std::to_string(f[2]) + "\n";
    return out;
}

inline void write_off(const TriangleMesh& mesh, const std::filesystem::path& path) {
    write_file_atomic(path, format_off(mesh));
}

// Grayscale image with intensities scaled to [0, 1].
struct GrayImage {
    std::size_t width = 0, height = 0;
    std::vector<double> pixels;  // row-major

    double at(std::size_t row, std::size_t col) const {
        return pixels[row * width + col];
    }
};

// PGM reader (P2 ascii and P5 binary, 8-bit or 16-bit).
inline GrayImage parse_pgm(const std::string& data) {
    std::size_t pos = 0;
    auto skip_ws_comments = [&] {
        while (pos < data.size()) {
            char c = data[pos];
            if (c == '#') {
                while (pos < data.size() && data[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto next_int = [&]() -> long {
        skip_ws_comments();
        std::size_t start = pos;
        while (pos < data.size() && std::isdigit(static_cast<unsigned char>(data[pos])))
            ++pos;
        if (pos == start) throw ParseError("pgm: expected integer", pos);
        return std::stol(data.substr(start, pos - start));
    };

    skip_ws_comments();
    if (data.size() < 2 || data[0] != 'P' || (data[1] != '2' && data[1] != '5'))
        throw ParseError("pgm: expected P2 or P5 magic", 0);
    const bool binary = data[1] == '5';
    pos = 2;
    const long w = next_int(), h = next_int(), maxval = next_int();
    if (w < 1 || h < 1 || maxval < 1 || maxval > 65535)
        throw ParseError("pgm: bad dimensions or maxval", pos);

    GrayImage img;
    img.width = static_cast<std::size_t>(w);
    img.height = static_cast<std::size_t>(h);
    img.pixels.resize(img.width * img.height);

    if (binary) {
        ++pos;  // single whitespace after maxval
        const std::size_t bytes = maxval > 255 ? 2 : 1;
        if (pos + img.pixels.size() * bytes > data.size())
            throw ParseError("pgm: truncated pixel data", pos);
        for (auto& px : img.pixels) {
            unsigned long v = static_cast<unsigned char>(data[pos++]);
            if (bytes == 2) v = (v << 8) | static_cast<unsigned char>(data[pos++]);
            px = static_cast<double>(v) / static_cast<double>(maxval);
        }
    } else {
        for (auto& px : img.pixels)
            px = static_cast<double>(next_int()) / static_cast<double>(maxval);
    }
    return img;
}

inline GrayImage read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_pgm(ss.str());
}

}  // namespace hpsl
