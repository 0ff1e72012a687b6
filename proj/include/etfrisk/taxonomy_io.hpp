#pragma once

// Taxonomy file format. One record per line, fields separated by a single TAB:
//
//   etfrisk-taxonomy  1
//   meta      <key>  <value>              (any number, before the first level)
//   level     <name> binary|weighted      (starts a level; most granular first)
//   category  <id>   [<parent-id>]        (parent omitted on the top level)
//   assign    <etf>  <category>           (binary levels)
//   weight    <etf>  <category> <value>   (weighted levels, shortest round-trip decimal)
//
// Within a level, categories are written in sorted order, then assignments
// or weights sorted by ETF id and category id, so identical taxonomies
// serialize to identical bytes. Backslash, TAB and newline inside fields are
// escaped as \\, \t and \n.

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "etfrisk/csv.hpp"
#include "etfrisk/errors.hpp"
#include "etfrisk/types.hpp"

namespace etfrisk {

inline constexpr std::string_view kTaxonomyMagic = "etfrisk-taxonomy";

namespace detail {

inline std::string escape_field(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '\\') out += "\\\\";
        else if (c == '\t') out += "\\t";
        else if (c == '\n') out += "\\n";
        else out += c;
    }
    return out;
}

inline std::string unescape_field(const std::string& s) {
    std::string out;
    for (std::size_t k = 0; k < s.size(); ++k) {
        if (s[k] != '\\' || k + 1 == s.size()) {
            out += s[k];
            continue;
        }
        char n = s[++k];
        out += n == 't' ? '\t' : n == 'n' ? '\n' : n;
    }
    return out;
}

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == '\t') {
            out.push_back(unescape_field(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(unescape_field(cur));
    return out;
}

}  // namespace detail

inline void write_taxonomy(const Taxonomy& t, std::ostream& os) {
    using detail::escape_field;
    os << kTaxonomyMagic << "\t1\n";
    for (const auto& [k, v] : t.metadata) os << "meta\t" << escape_field(k) << '\t' << escape_field(v) << '\n';
    for (const auto& lv : t.levels) {
        os << "level\t" << escape_field(lv.name) << '\t'
           << (lv.kind == LevelKind::Binary ? "binary" : "weighted") << '\n';
        for (const auto& c : lv.categories) {
            os << "category\t" << escape_field(c);
            auto it = lv.parent_map.find(c);
            if (it != lv.parent_map.end()) os << '\t' << escape_field(it->second);
            os << '\n';
        }
        for (const auto& [e, c] : lv.assignment)
            os << "assign\t" << escape_field(e) << '\t' << escape_field(c) << '\n';
        for (const auto& [e, w] : lv.weights)
            for (const auto& [c, x] : w)
                os << "weight\t" << escape_field(e) << '\t' << escape_field(c) << '\t'
                   << csv::format_double(x) << '\n';
    }
}

inline std::string taxonomy_to_string(const Taxonomy& t) {
    std::ostringstream os;
    write_taxonomy(t, os);
    return os.str();
}

inline void save_taxonomy(const Taxonomy& t, const std::string& path) {
    validate_taxonomy(t);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InputError(path, 0, "", "cannot open for writing");
    write_taxonomy(t, os);
    if (!os) throw InputError(path, 0, "", "write failed");
}

inline Taxonomy read_taxonomy(std::istream& in, const std::string& name = "<taxonomy>") {
    Taxonomy t;
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    auto fail = [&](const std::string& msg) { throw InputError(name, lineno, "", msg); };
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto f = detail::split_tabs(line);
        if (!header) {
            if (f.size() != 2 || f[0] != kTaxonomyMagic || f[1] != "1") fail("not a taxonomy file");
            header = true;
            continue;
        }
        const std::string& tag = f[0];
        if (tag == "meta") {
            if (f.size() != 3 || !t.levels.empty()) fail("misplaced or malformed meta record");
            t.metadata[f[1]] = f[2];
        } else if (tag == "level") {
            if (f.size() != 3 || (f[2] != "binary" && f[2] != "weighted")) fail("malformed level record");
            TaxonomyLevel lv;
            lv.name = f[1];
            lv.kind = f[2] == "binary" ? LevelKind::Binary : LevelKind::Weighted;
            t.levels.push_back(std::move(lv));
        } else if (t.levels.empty()) {
            fail("record before first level");
        } else if (tag == "category") {
            if (f.size() != 2 && f.size() != 3) fail("malformed category record");
            auto& lv = t.levels.back();
            if (f.size() == 3) {
                auto [it, inserted] = lv.parent_map.emplace(f[1], f[2]);
                if (!inserted && it->second != f[2])
                    fail("category '" + f[1] + "' maps to two parents ('" + it->second + "', '" + f[2] + "')");
            }
            if (std::find(lv.categories.begin(), lv.categories.end(), f[1]) == lv.categories.end())
                lv.categories.push_back(f[1]);
        } else if (tag == "assign") {
            auto& lv = t.levels.back();
            if (f.size() != 3 || lv.kind != LevelKind::Binary) fail("malformed assign record");
            if (!lv.assignment.emplace(f[1], f[2]).second) fail("ETF '" + f[1] + "' assigned twice");
        } else if (tag == "weight") {
            auto& lv = t.levels.back();
            if (f.size() != 4 || lv.kind != LevelKind::Weighted) fail("malformed weight record");
            auto v = csv::parse_number(f[3]);
            if (!v) fail("bad weight '" + f[3] + "'");
            if (!lv.weights[f[1]].emplace(f[2], *v).second) fail("duplicate weight record");
        } else {
            fail("unknown record '" + tag + "'");
        }
    }
    if (!header) throw InputError(name, 0, "", "empty taxonomy file");
    try {
        validate_taxonomy(t);
    } catch (const InvariantError& e) {
        throw InputError(name, 0, "", e.what());
    }
    return t;
}

inline Taxonomy load_taxonomy(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError(path, 0, "", "cannot open file");
    return read_taxonomy(in, path);
}

}  // namespace etfrisk
