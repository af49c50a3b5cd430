#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>

#include "hpsl/cloud.hpp"
#include "hpsl/errors.hpp"

namespace hpsl {

namespace detail {

// Shortest decimal form that parses back to the same double.
inline void append_double(std::string& out, double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

inline double parse_double(std::string_view tok, std::size_t line_no) {
    double v = 0.0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
        throw ParseError("line " + std::to_string(line_no) + ": bad number '" +
                             std::string(tok) + "'",
                         line_no);
    if (!std::isfinite(v))
        throw ParseError("line " + std::to_string(line_no) + ": non-finite value '" +
                             std::string(tok) + "'",
                         line_no);
    return v;
}

inline long parse_int(std::string_view tok, std::size_t line_no) {
    long v = 0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
        throw ParseError("line " + std::to_string(line_no) + ": bad integer '" +
                             std::string(tok) + "'",
                         line_no);
    return v;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> toks;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
        std::size_t start = i;
        while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r') ++i;
        if (i > start) toks.push_back(s.substr(start, i - start));
    }
    return toks;
}

}  // namespace detail

// Writes `content` to `path` atomically (temp file in the same directory,
// then rename).
inline void write_file_atomic(const std::filesystem::path& path,
                              const std::string& content) {
    namespace fs = std::filesystem;
    fs::path dir = path.parent_path();
    if (!dir.empty()) fs::create_directories(dir);
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for write: " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed: " + path.string() + ": " + ec.message());
}

// Text format:
//   #pcl d=<d> c=<C> labeled=<0|1> class=<int|->
//   then one line per point: d coords, C features, then the integer label if
//   labeled. Lines starting with '#' after the header are comments.
inline std::string format_cloud(const PointCloud& cloud) {
    cloud.validate();
    std::string out;
    out.reserve(cloud.size() * (cloud.dim + cloud.channels) * 12);
    out += "#pcl d=" + std::to_string(cloud.dim) + " c=" + std::to_string(cloud.channels) +
           " labeled=" + (cloud.labels ? "1" : "0") + " class=";
    if (cloud.cloud_class)
        out += std::to_string(*cloud.cloud_class);
    else
        out += "-";
    out += '\n';
    const std::size_t n = cloud.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < cloud.dim; ++j) {
            if (j) out += ' ';
            detail::append_double(out, cloud.coords[i * cloud.dim + j]);
        }
        for (std::size_t j = 0; j < cloud.channels; ++j) {
            out += ' ';
            detail::append_double(out, cloud.features[i * cloud.channels + j]);
        }
        if (cloud.labels) {
            out += ' ';
            out += std::to_string((*cloud.labels)[i]);
        }
        out += '\n';
    }
    return out;
}

inline void write_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
    write_file_atomic(path, format_cloud(cloud));
}

inline PointCloud parse_cloud(std::string_view text) {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    auto next_line = [&](std::string_view& line) -> bool {
        if (pos >= text.size()) return false;
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        return true;
    };

    std::string_view header;
    if (!next_line(header)) throw ParseError("empty file", 1);
    auto htoks = detail::split_ws(header);
    if (htoks.empty() || htoks[0] != "#pcl")
        throw ParseError("line 1: expected '#pcl' header", 1);

    std::size_t d = 0, c = 0;
    bool labeled = false;
    std::optional<int> cloud_class;
    bool saw_d = false, saw_c = false, saw_labeled = false;
    for (std::size_t i = 1; i < htoks.size(); ++i) {
        std::string_view t = htoks[i];
        auto eq = t.find('=');
        if (eq == std::string_view::npos)
            throw ParseError("line 1: bad header field '" + std::string(t) + "'", 1);
        std::string_view key = t.substr(0, eq), val = t.substr(eq + 1);
        if (key == "d") {
            long v = detail::parse_int(val, 1);
            if (v < 1) throw ParseError("line 1: d must be >= 1", 1);
            d = static_cast<std::size_t>(v);
            saw_d = true;
        } else if (key == "c") {
            long v = detail::parse_int(val, 1);
            if (v < 0) throw ParseError("line 1: c must be >= 0", 1);
            c = static_cast<std::size_t>(v);
            saw_c = true;
        } else if (key == "labeled") {
            if (val != "0" && val != "1")
                throw ParseError("line 1: labeled must be 0 or 1", 1);
            labeled = (val == "1");
            saw_labeled = true;
        } else if (key == "class") {
            if (val != "-") cloud_class = static_cast<int>(detail::parse_int(val, 1));
        } else {
            throw ParseError("line 1: unknown header field '" + std::string(key) + "'", 1);
        }
    }
    if (!saw_d || !saw_c || !saw_labeled)
        throw ParseError("line 1: header must declare d=, c= and labeled=", 1);

    PointCloud cloud;
    cloud.dim = d;
    cloud.channels = c;
    if (labeled) cloud.labels.emplace();
    cloud.cloud_class = cloud_class;

    const std::size_t want = d + c + (labeled ? 1 : 0);
    std::string_view line;
    while (next_line(line)) {
        if (!line.empty() && line[0] == '#') continue;
        auto toks = detail::split_ws(line);
        if (toks.empty()) continue;
        if (toks.size() != want)
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                                 std::to_string(want) + " columns, got " +
                                 std::to_string(toks.size()),
                             line_no);
        for (std::size_t j = 0; j < d; ++j)
            cloud.coords.push_back(detail::parse_double(toks[j], line_no));
        for (std::size_t j = 0; j < c; ++j)
            cloud.features.push_back(detail::parse_double(toks[d + j], line_no));
        if (labeled) {
            long lab = detail::parse_int(toks[d + c], line_no);
            if (lab < -1)
                throw ParseError("line " + std::to_string(line_no) + ": label below -1",
                                 line_no);
            cloud.labels->push_back(static_cast<int>(lab));
        }
    }
    if (cloud.coords.empty())
        throw ParseError("file contains no points", line_no);
    cloud.validate();
    return cloud;
}

inline PointCloud read_cloud(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_cloud(ss.str());
}

}  // namespace hpsl
