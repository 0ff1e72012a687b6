#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "etfrisk/errors.hpp"
#include "etfrisk/types.hpp"

namespace etfrisk::csv {

struct Row {
    std::size_t line = 0;  // 1-based line number in the source file
    std::vector<std::string> fields;
};

/// A parsed CSV file with a mandatory header row.
struct Table {
    std::string file;
    std::vector<std::string> header;
    std::vector<Row> rows;
};

/// Splits one line on commas. Double-quoted fields may contain commas and
/// doubled quotes.
inline std::vector<std::string> split_line(std::string_view line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t k = 0; k < line.size(); ++k) {
        char c = line[k];
        if (quoted) {
            if (c == '"') {
                if (k + 1 < line.size() && line[k + 1] == '"') {
                    cur += '"';
                    ++k;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

inline Table parse(std::istream& in, const std::string& file_name) {
    Table t;
    t.file = file_name;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0)
            line.erase(0, 3);
        if (line.empty()) continue;
        auto fields = split_line(line);
        if (!have_header) {
            t.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != t.header.size())
            throw InputError(file_name, lineno, "",
                             "expected " + std::to_string(t.header.size()) + " fields, got " +
                                 std::to_string(fields.size()));
        t.rows.push_back({lineno, std::move(fields)});
    }
    if (!have_header) throw InputError(file_name, 0, "", "missing header row");
    return t;
}

inline Table read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError(path, 0, "", "cannot open file");
    return parse(in, path);
}

/// Throws unless the header is exactly `expected` (same names, same order).
inline void require_header(const Table& t, const std::vector<std::string>& expected) {
    for (const auto& name : expected)
        if (std::find(t.header.begin(), t.header.end(), name) == t.header.end())
            throw InputError(t.file, 1, name, "missing column");
    for (const auto& name : t.header)
        if (std::find(expected.begin(), expected.end(), name) == expected.end())
            throw InputError(t.file, 1, name, "unexpected column");
    if (t.header != expected) throw InputError(t.file, 1, "", "columns out of order");
}

inline bool is_missing(std::string_view field) { return field == kMissingToken; }

inline std::optional<double> parse_number(std::string_view s) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

inline double require_number(const Table& t, const Row& r, std::size_t col) {
    auto v = parse_number(r.fields[col]);
    if (!v) throw InputError(t.file, r.line, t.header[col], "not a number: '" + r.fields[col] + "'");
    return *v;
}

inline std::optional<double> optional_number(const Table& t, const Row& r, std::size_t col) {
    if (is_missing(r.fields[col])) return std::nullopt;
    return require_number(t, r, col);
}

inline std::optional<std::string> optional_string(const Row& r, std::size_t col) {
    if (is_missing(r.fields[col]) || r.fields[col].empty()) return std::nullopt;
    return r.fields[col];
}

/// Shortest round-tripping decimal for a double.
inline std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

inline std::string quote(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

}  // namespace etfrisk::csv
