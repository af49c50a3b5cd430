#pragma once

#include <charconv>
#include <string>
#include <string_view>
#include <vector>

#include "hpsl/blueprint.hpp"
#include "hpsl/errors.hpp"

namespace hpsl {

namespace archlang_detail {

// Guards fuzz inputs and typos; no real architecture comes close.
constexpr std::size_t kMaxCount = 1000000;

struct Lexer {
    std::string_view text;
    std::size_t pos = 0;

    void skip_space() {
        while (pos < text.size()) {
            char c = text[pos];
            if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
                ++pos;
            } else if (c == '#') {  // comment to end of line
                while (pos < text.size() && text[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
    }

    [[noreturn]] void fail(const std::string& expected) const {
        std::string got = pos < text.size()
                              ? "'" + std::string(1, text[pos]) + "'"
                              : "end of input";
        throw ParseError("byte " + std::to_string(pos) + ": expected " + expected +
                             ", got " + got,
                         pos);
    }

    bool at_end() {
        skip_space();
        return pos >= text.size();
    }

    bool try_symbol(std::string_view sym) {
        skip_space();
        if (text.substr(pos, sym.size()) == sym) {
            pos += sym.size();
            return true;
        }
        return false;
    }

    void expect_symbol(std::string_view sym) {
        if (!try_symbol(sym)) fail("'" + std::string(sym) + "'");
    }

    std::string_view peek_ident() {
        skip_space();
        std::size_t end = pos;
        while (end < text.size() &&
               (std::isalnum(static_cast<unsigned char>(text[end])) || text[end] == '_'))
            ++end;
        return text.substr(pos, end - pos);
    }

    std::string_view take_ident() {
        auto id = peek_ident();
        if (id.empty()) fail("a level name");
        pos += id.size();
        return id;
    }

    std::size_t take_count(const char* what) {
        skip_space();
        std::size_t v = 0;
        auto res = std::from_chars(text.data() + pos, text.data() + text.size(), v);
        if (res.ec != std::errc() || res.ptr == text.data() + pos) fail(what);
        if (v < 1 || v > kMaxCount)
            throw ParseError("byte " + std::to_string(pos) + ": " + what +
                                 " must be in [1, " + std::to_string(kMaxCount) + "]",
                             pos);
        pos = static_cast<std::size_t>(res.ptr - text.data());
        return v;
    }

    double take_real(const char* what) {
        skip_space();
        double v = 0.0;
        auto res = std::from_chars(text.data() + pos, text.data() + text.size(), v);
        if (res.ec != std::errc() || res.ptr == text.data() + pos) fail(what);
        pos = static_cast<std::size_t>(res.ptr - text.data());
        return v;
    }

    bool peek_is(char c) {
        skip_space();
        return pos < text.size() && text[pos] == c;
    }
};

inline std::vector<std::size_t> parse_widths(Lexer& lx) {
    lx.expect_symbol("[");
    std::vector<std::size_t> widths;
    widths.push_back(lx.take_count("a layer width"));
    while (lx.try_symbol(",")) widths.push_back(lx.take_count("a layer width"));
    lx.expect_symbol("]");
    return widths;
}

inline SaLevelSpec parse_sa(Lexer& lx) {
    lx.expect_symbol("(");
    SaLevelSpec sa;
    if (lx.peek_is('[')) {
        // SA([l1,...,ld]) — global level
        sa.global = true;
        sa.scales.push_back({0.0, parse_widths(lx)});
        lx.expect_symbol(")");
        return sa;
    }
    sa.num_centroids = lx.take_count("a centroid count");
    lx.expect_symbol(",");
    if (lx.peek_is('[')) {
        // SA(K,[r1,...,rm],[[...],...,[...]]) — multi-scale
        lx.expect_symbol("[");
        std::vector<double> radii;
        radii.push_back(lx.take_real("a radius"));
        while (lx.try_symbol(",")) radii.push_back(lx.take_real("a radius"));
        lx.expect_symbol("]");
        lx.expect_symbol(",");
        lx.expect_symbol("[");
        std::vector<std::vector<std::size_t>> width_lists;
        width_lists.push_back(parse_widths(lx));
        while (lx.try_symbol(",")) width_lists.push_back(parse_widths(lx));
        lx.expect_symbol("]");
        lx.expect_symbol(")");
        if (radii.size() != width_lists.size())
            throw ParseError("byte " + std::to_string(lx.pos) + ": " +
                                 std::to_string(radii.size()) + " radii but " +
                                 std::to_string(width_lists.size()) + " width lists",
                             lx.pos);
        if (radii.size() < 2)
            throw ParseError("byte " + std::to_string(lx.pos) +
                                 ": multi-scale form needs >= 2 scales",
                             lx.pos);
        for (std::size_t i = 0; i < radii.size(); ++i) {
            if (radii[i] <= 0.0)
                throw ParseError("byte " + std::to_string(lx.pos) + ": radius must be > 0",
                                 lx.pos);
            for (std::size_t j = 0; j < i; ++j)
                if (radii[i] == radii[j])
                    throw ParseError("byte " + std::to_string(lx.pos) +
                                         ": multi-scale radii must be distinct",
                                     lx.pos);
            sa.scales.push_back({radii[i], width_lists[i]});
        }
        return sa;
    }
    // SA(K,r,[l1,...,ld]) — single scale
    double radius = lx.take_real("a radius");
    if (radius <= 0.0)
        throw ParseError("byte " + std::to_string(lx.pos) + ": radius must be > 0",
                         lx.pos);
    if (!lx.try_symbol(","))
        lx.fail("',' and a width list (SA needs widths)");
    sa.scales.push_back({radius, parse_widths(lx)});
    lx.expect_symbol(")");
    return sa;
}

inline FcLevelSpec parse_fc(Lexer& lx) {
    lx.expect_symbol("(");
    FcLevelSpec fc;
    fc.width = lx.take_count("a layer width");
    if (lx.try_symbol(",")) {
        fc.dropout = lx.take_real("a dropout ratio");
        if (fc.dropout < 0.0 || fc.dropout >= 1.0)
            throw ParseError("byte " + std::to_string(lx.pos) +
                                 ": dropout must be in [0, 1)",
                             lx.pos);
    }
    lx.expect_symbol(")");
    return fc;
}

inline FpLevelSpec parse_fp(Lexer& lx) {
    lx.expect_symbol("(");
    FpLevelSpec fp;
    fp.widths.push_back(lx.take_count("a layer width"));
    while (lx.try_symbol(",")) fp.widths.push_back(lx.take_count("a layer width"));
    lx.expect_symbol(")");
    return fp;
}

inline MrgSpec parse_mrg(Lexer& lx) {
    lx.expect_symbol("{");
    MrgSpec mrg;

    auto expect_branch = [&](const char* name) {
        auto id = lx.take_ident();
        if (id != name) lx.fail(std::string("'") + name + "'");
        lx.expect_symbol(":");
    };
    auto take_sa = [&]() {
        auto id = lx.take_ident();
        if (id != "SA") lx.fail("'SA'");
        return parse_sa(lx);
    };

    expect_branch("branch1");
    mrg.branch1.push_back(take_sa());
    while (lx.try_symbol("->")) mrg.branch1.push_back(take_sa());
    for (const auto& level : mrg.branch1)
        if (level.global)
            throw ParseError("byte " + std::to_string(lx.pos) +
                                 ": branch1 levels must have centroid counts",
                             lx.pos);
    lx.expect_symbol(";");

    expect_branch("branch2");
    mrg.branch2 = take_sa();
    if (mrg.branch2.global || mrg.branch2.multi_scale())
        throw ParseError("byte " + std::to_string(lx.pos) +
                             ": branch2 must be a single-scale SA level",
                         lx.pos);
    lx.expect_symbol(";");

    expect_branch("branch3");
    SaLevelSpec b3 = take_sa();
    if (!b3.global)
        throw ParseError("byte " + std::to_string(lx.pos) +
                             ": branch3 must be a global SA([...]) level",
                         lx.pos);
    mrg.branch3_widths = b3.scales[0].widths;
    lx.expect_symbol(";");

    expect_branch("branch4");
    SaLevelSpec b4 = take_sa();
    if (!b4.global)
        throw ParseError("byte " + std::to_string(lx.pos) +
                             ": branch4 must be a global SA([...]) level",
                         lx.pos);
    mrg.branch4_widths = b4.scales[0].widths;

    lx.expect_symbol("}");
    return mrg;
}

inline void append_real(std::string& out, double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

inline void render_widths(std::string& out, const std::vector<std::size_t>& widths) {
    out += '[';
    for (std::size_t i = 0; i < widths.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(widths[i]);
    }
    out += ']';
}

inline void render_sa(std::string& out, const SaLevelSpec& sa) {
    out += "SA(";
    if (sa.global) {
        render_widths(out, sa.scales[0].widths);
    } else if (sa.multi_scale()) {
        out += std::to_string(sa.num_centroids);
        out += ",[";
        for (std::size_t i = 0; i < sa.scales.size(); ++i) {
            if (i) out += ',';
            append_real(out, sa.scales[i].radius);
        }
        out += "],[";
        for (std::size_t i = 0; i < sa.scales.size(); ++i) {
            if (i) out += ',';
            render_widths(out, sa.scales[i].widths);
        }
        out += ']';
    } else {
        out += std::to_string(sa.num_centroids);
        out += ',';
        append_real(out, sa.scales[0].radius);
        out += ',';
        render_widths(out, sa.scales[0].widths);
    }
    out += ')';
}

}  // namespace archlang_detail

// Marks the last two pre-score FC layers of the FP chain with dropout 0.5.
// The last layer of the last FP is the score layer and never gets dropout.
inline void assign_fp_dropout(NetworkBlueprint& bp, double ratio = 0.5) {
    std::vector<std::pair<std::size_t, std::size_t>> fp_layers;  // (level, layer)
    for (std::size_t li = 0; li < bp.levels.size(); ++li) {
        auto& level = bp.levels[li];
        if (level.kind != BlueprintLevel::Kind::Fp) continue;
        level.fp.dropout_after.assign(level.fp.widths.size(), 0.0);
        for (std::size_t j = 0; j < level.fp.widths.size(); ++j)
            fp_layers.emplace_back(li, j);
    }
    if (fp_layers.empty()) return;
    fp_layers.pop_back();  // score layer
    for (std::size_t n = 0; n < 2 && !fp_layers.empty(); ++n) {
        auto [li, j] = fp_layers.back();
        fp_layers.pop_back();
        bp.levels[li].fp.dropout_after[j] = ratio;
    }
}

// Parses the "SA(...) -> ... -> FC(K)" notation ('#' comments allowed).
// Throws ParseError with a byte offset on anything outside the grammar.
inline NetworkBlueprint parse_blueprint(std::string_view text) {
    using namespace archlang_detail;
    Lexer lx{text, 0};
    NetworkBlueprint bp;

    for (;;) {
        auto name = lx.take_ident();
        BlueprintLevel level;
        if (name == "SA") {
            level.kind = BlueprintLevel::Kind::Sa;
            level.sa = parse_sa(lx);
        } else if (name == "FC") {
            level.kind = BlueprintLevel::Kind::Fc;
            level.fc = parse_fc(lx);
        } else if (name == "FP") {
            level.kind = BlueprintLevel::Kind::Fp;
            level.fp = parse_fp(lx);
        } else if (name == "MRG") {
            level.kind = BlueprintLevel::Kind::Mrg;
            level.mrg = parse_mrg(lx);
        } else {
            throw ParseError("byte " + std::to_string(lx.pos - name.size()) +
                                 ": unknown level name '" + std::string(name) + "'",
                             lx.pos - name.size());
        }
        bp.levels.push_back(std::move(level));
        if (lx.at_end()) break;
        lx.expect_symbol("->");
    }

    assign_fp_dropout(bp);
    return bp;
}

// Canonical text form; parse(render(bp)) == bp.
inline std::string render_blueprint(const NetworkBlueprint& bp) {
    using namespace archlang_detail;
    std::string out;
    for (std::size_t i = 0; i < bp.levels.size(); ++i) {
        if (i) out += " -> ";
        const auto& level = bp.levels[i];
        switch (level.kind) {
            case BlueprintLevel::Kind::Sa:
                render_sa(out, level.sa);
                break;
            case BlueprintLevel::Kind::Fc:
                out += "FC(" + std::to_string(level.fc.width) + ",";
                append_real(out, level.fc.dropout);
                out += ')';
                break;
            case BlueprintLevel::Kind::Fp: {
                out += "FP(";
                for (std::size_t j = 0; j < level.fp.widths.size(); ++j) {
                    if (j) out += ',';
                    out += std::to_string(level.fp.widths[j]);
                }
                out += ')';
                break;
            }
            case BlueprintLevel::Kind::Mrg: {
                out += "MRG{branch1:";
                for (std::size_t j = 0; j < level.mrg.branch1.size(); ++j) {
                    if (j) out += " -> ";
                    render_sa(out, level.mrg.branch1[j]);
                }
                out += ";branch2:";
                render_sa(out, level.mrg.branch2);
                out += ";branch3:SA(";
                render_widths(out, level.mrg.branch3_widths);
                out += ");branch4:SA(";
                render_widths(out, level.mrg.branch4_widths);
                out += ")}";
                break;
            }
        }
    }
    return out;
}

// Checks width chaining (the +d of localization at every SA input, skip-link
// widths at every FP input) plus head shape. Returns a diagnostic naming the
// first offending level instead of throwing.
inline ChainDiagnostic validate_chain(const NetworkBlueprint& bp, std::size_t input_d,
                                      std::size_t input_c, std::size_t num_classes) {
    auto diag = [](std::size_t level, const std::string& msg) {
        return ChainDiagnostic{false, "level " + std::to_string(level + 1) + ": " + msg};
    };
    if (bp.levels.empty()) return {false, "blueprint has no levels"};
    if (input_d < 1) return {false, "input dimension must be >= 1"};

    bool seen_global = false, seen_fc = false, seen_fp = false;
    std::size_t width = input_c;
    // Output widths of the pyramid levels whose features feed skip links.
    // The level currently being propagated travels in `width`, not here.
    std::vector<std::size_t> skip_widths{input_c};

    for (std::size_t li = 0; li < bp.levels.size(); ++li) {
        const auto& level = bp.levels[li];
        switch (level.kind) {
            case BlueprintLevel::Kind::Sa: {
                if (seen_fc || seen_fp)
                    return diag(li, "SA level after the head started");
                if (seen_global)
                    return diag(li, "SA level after a global SA level");
                if (level.sa.scales.empty())
                    return diag(li, "SA level has no scales");
                for (std::size_t i = 0; i < level.sa.scales.size(); ++i)
                    for (std::size_t j = 0; j < i; ++j)
                        if (level.sa.scales[i].radius == level.sa.scales[j].radius)
                            return diag(li, "multi-scale radii must be distinct");
                width = level.sa.output_width();
                if (level.sa.global)
                    seen_global = true;
                else
                    skip_widths.push_back(width);
                break;
            }
            case BlueprintLevel::Kind::Fc: {
                if (seen_fp) return diag(li, "FC level inside a propagation chain");
                if (!seen_global && !seen_fc)
                    return diag(li, "FC level requires a global feature vector");
                seen_fc = true;
                width = level.fc.width;
                break;
            }
            case BlueprintLevel::Kind::Fp: {
                if (seen_fc) return diag(li, "FP level after FC head");
                if (level.fp.widths.empty())
                    return diag(li, "FP level has no layer widths");
                if (!seen_fp && !seen_global) {
                    // the topmost non-global SA output is the propagation
                    // source, not a skip link
                    if (skip_widths.size() < 2)
                        return diag(li, "FP level with nothing to propagate from");
                    skip_widths.pop_back();
                }
                if (skip_widths.empty())
                    return diag(li, "more FP levels than abstraction levels");
                skip_widths.pop_back();
                seen_fp = true;
                width = level.fp.widths.back();
                break;
            }
            case BlueprintLevel::Kind::Mrg: {
                if (li != 0) return diag(li, "MRG must be the first level");
                width = level.mrg.branch4_widths.back() + level.mrg.branch3_widths.back();
                seen_global = true;
                break;
            }
        }
    }
    (void)width;

    const std::size_t last_index = bp.levels.size() - 1;
    const auto& last = bp.levels.back();
    if (bp.head() == HeadKind::Classification) {
        if (last.kind != BlueprintLevel::Kind::Fc)
            return diag(last_index, "classification blueprint must end in FC");
        if (last.fc.width != num_classes)
            return diag(last_index, "head width " + std::to_string(last.fc.width) +
                                        " != " + std::to_string(num_classes) + " classes");
    } else {
        if (last.kind != BlueprintLevel::Kind::Fp)
            return diag(last_index, "segmentation blueprint must end in FP");
        if (last.fp.widths.back() != num_classes)
            return diag(last_index, "head width " + std::to_string(last.fp.widths.back()) +
                                        " != " + std::to_string(num_classes) + " classes");
        if (!skip_widths.empty())
            return {false, "propagation chain stops before the original points (" +
                               std::to_string(skip_widths.size()) +
                               " pyramid levels left)"};
    }
    return {};
}

}  // namespace hpsl
