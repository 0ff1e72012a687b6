#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "etfrisk/synth.hpp"
#include "etfrisk/types.hpp"

namespace fixtures {

using namespace etfrisk;

inline Security security(const std::string& id, AssetClass ac, const std::string& sector = "",
                         std::optional<double> cap = std::nullopt) {
    Security s;
    s.id = id;
    s.asset_class = ac;
    if (!sector.empty()) s.sector_weights[sector] = 1.0;
    s.market_cap = cap;
    return s;
}

inline Etf etf(const std::string& id, std::optional<AssetClass> ac = std::nullopt, std::optional<double> addv = std::nullopt,
               std::optional<std::string> category = std::nullopt) {
    Etf e;
    e.id = id;
    e.name = id;
    e.asset_class = ac;
    e.addv = addv;
    e.thirdparty_category = std::move(category);
    return e;
}

inline std::vector<std::string> dates(std::size_t n) { return etfrisk::detail::business_days("2021-01-04", n); }

inline ReturnsPanel panel(std::vector<std::string> ids, const Matrix& values) {
    return ReturnsPanel::from_matrix(std::move(ids), dates(static_cast<std::size_t>(values.cols())), values);
}

inline ReturnsPanel random_panel(const std::vector<std::string>& ids, Index days, std::uint64_t seed, double vol = 0.01) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, vol);
    Matrix v(static_cast<Index>(ids.size()), days);
    for (Index i = 0; i < v.rows(); ++i)
        for (Index s = 0; s < days; ++s) v(i, s) = normal(rng);
    return panel(ids, v);
}

/// A scratch directory under the build tree, emptied on creation.
inline std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("etfrisk_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream os(p, std::ios::binary);
    os << content;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline TaxonomyLevel binary_level(const std::map<std::string, std::string>& assignment,
                                  const std::map<std::string, std::string>& parents = {}) {
    TaxonomyLevel l;
    l.name = "category";
    l.kind = LevelKind::Binary;
    l.assignment = assignment;
    l.rebuild_categories();
    l.parent_map = parents;
    return l;
}

}  // namespace fixtures
