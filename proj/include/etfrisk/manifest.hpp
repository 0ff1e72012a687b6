#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "etfrisk/errors.hpp"

namespace etfrisk {

inline constexpr const char* kConfigEnvVar = "RISKMODEL_CONFIG";

/// key=value lines; blank lines and lines starting with '#' are ignored.
inline std::map<std::string, std::string> parse_config(std::istream& in, const std::string& name) {
    std::map<std::string, std::string> out;
    std::string line;
    std::size_t number = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++number;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError(name + ":" + std::to_string(number) + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        if (!out.emplace(key, trim(line.substr(eq + 1))).second)
            throw ConfigError(name + ":" + std::to_string(number) + ": duplicate key '" + key + "'");
    }
    return out;
}

inline std::map<std::string, std::string> load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return parse_config(in, path);
}

/// The config named by $RISKMODEL_CONFIG, or nothing when it is unset.
inline std::map<std::string, std::string> config_from_environment() {
    const char* path = std::getenv(kConfigEnvVar);
    if (!path || !*path) return {};
    return load_config(path);
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError(path.string(), 0, "", "cannot open file");
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return hex64(fnv1a(bytes));
}

/// Run record written next to every output: parameters and input hashes,
/// sorted by key, no timestamps.
struct Manifest {
    std::map<std::string, std::string> entries;

    void set(const std::string& key, const std::string& value) { entries[key] = value; }

    void hash_input(const std::string& key, const std::filesystem::path& path) { entries["input." + key] = file_hash(path); }

    std::string to_string() const {
        std::ostringstream os;
        for (const auto& [k, v] : entries) os << k << '=' << v << '\n';
        return os.str();
    }

    void write(const std::filesystem::path& path) const {
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        std::ofstream os(path, std::ios::binary);
        if (!os) throw Error("cannot write " + path.string());
        os << to_string();
    }
};

}  // namespace etfrisk
