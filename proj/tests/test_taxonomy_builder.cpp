#include <gtest/gtest.h>

#include <random>

#include "etfrisk/category_returns.hpp"
#include "etfrisk/taxonomy_builder.hpp"
#include "fixtures.hpp"

using namespace etfrisk;
using fixtures::binary_level;

namespace {

/// k orthonormal, zero-mean series of length t.
Matrix orthonormal_series(Index k, Index t, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix out(k, t);
    for (Index r = 0; r < k; ++r) {
        Vector v(t);
        for (Index s = 0; s < t; ++s) v(s) = n(rng);
        v.array() -= v.mean();
        for (Index q = 0; q < r; ++q) v -= out.row(q).dot(v) * out.row(q).transpose();
        out.row(r) = v.normalized().transpose();
    }
    return out;
}

double pearson(const Vector& x, const Vector& y) {
    const Vector a = x.array() - x.mean(), b = y.array() - y.mean();
    return a.dot(b) / std::sqrt(a.squaredNorm() * b.squaredNorm());
}

}  // namespace

TEST(AssetClassSplit, DominantClassKeepsCategory) {
    auto level = binary_level({{"E1", "C"}, {"E2", "C"}});
    auto r = split_categories_by_assetclass(level, {{"E1", "Equity"}, {"E2", "Bond"}}, {{"E1", 95.0}, {"E2", 5.0}}, 0.1);
    EXPECT_EQ(r.level.assignment.at("E2"), "C");
    EXPECT_EQ(r.asset_class.at("E2"), "Equity");
    EXPECT_EQ(r.level.parent_map.at("C"), "Equity");
    EXPECT_EQ(r.report.decisions[0].outcome, SplitOutcome::Kept);
}

TEST(AssetClassSplit, EvenSharesSplit) {
    auto level = binary_level({{"E1", "C"}, {"E2", "C"}});
    auto r = split_categories_by_assetclass(level, {{"E1", "Equity"}, {"E2", "Bond"}}, {{"E1", 50.0}, {"E2", 50.0}}, 0.1);
    EXPECT_EQ(r.level.assignment.at("E1"), "C.Equity");
    EXPECT_EQ(r.level.assignment.at("E2"), "C.Bond");
    EXPECT_EQ(r.level.parent_map.at("C.Bond"), "Bond");
    EXPECT_FALSE(r.level.parent_map.count("C"));
}

TEST(AssetClassSplit, ShareAtThresholdDoesNotCount) {
    auto level = binary_level({{"E1", "C"}, {"E2", "C"}, {"E3", "C"}});
    auto r = split_categories_by_assetclass(level, {{"E1", "Equity"}, {"E2", "Bond"}, {"E3", "Commodity"}},
                                            {{"E1", 60.0}, {"E2", 30.0}, {"E3", 10.0}}, 0.1);
    const auto& d = r.report.decisions[0];
    EXPECT_EQ(d.above, (std::vector<std::string>{"Bond", "Equity"}));
    EXPECT_EQ(d.outcome, SplitOutcome::Split);
    EXPECT_EQ(r.level.categories, (std::vector<std::string>{"C.Bond", "C.Commodity", "C.Equity"}));
}

TEST(AssetClassSplit, ZeroVolumeFallsBackToCounts) {
    auto level = binary_level({{"E1", "C"}, {"E2", "C"}, {"E3", "C"}});
    auto r = split_categories_by_assetclass(level, {{"E1", "Equity"}, {"E2", "Equity"}, {"E3", "Bond"}}, {}, 0.1);
    EXPECT_TRUE(r.report.decisions[0].count_shares);
    EXPECT_EQ(r.report.decisions[0].outcome, SplitOutcome::Split);
}

TEST(CategoryAverages, Basics) {
    Matrix v(3, 2);
    v << 0.01, 0.05, 0.03, kNaN, 0.02, 0.04;
    auto p = fixtures::panel({"A", "B", "C"}, v);
    auto level = binary_level({{"A", "X"}, {"B", "X"}, {"C", "Y"}});
    auto avg = category_average_returns(p, level);
    EXPECT_DOUBLE_EQ(avg.values(0, 0), 0.02);
    EXPECT_DOUBLE_EQ(avg.values(0, 1), 0.05);  // B missing: mean of the present value
    EXPECT_EQ(avg.values.row(1), v.row(2));    // singleton
}

TEST(Reclassify, ExactCopyOfCategoryAverage) {
    const Index t = 60;
    Matrix u = orthonormal_series(2, t, 3);
    Matrix v(7, t);
    for (int k = 0; k < 3; ++k) v.row(k) = u.row(0);
    for (int k = 3; k < 6; ++k) v.row(k) = u.row(1);
    v.row(6) = u.row(1);
    auto p = fixtures::panel({"A1", "A2", "A3", "B1", "B2", "B3", "X"}, v);
    auto level = binary_level({{"A1", "A"}, {"A2", "A"}, {"A3", "A"}, {"B1", "B"}, {"B2", "B"}, {"B3", "B"}, {"X", "S"}},
                              {{"A", "Equity"}, {"B", "Equity"}, {"S", "Equity"}});
    auto r = reclassify_small_categories(level, p);
    EXPECT_EQ(r.level.assignment.at("X"), "B");
    ASSERT_EQ(r.report.moves.size(), 1u);
    EXPECT_NEAR(r.report.moves[0].correlations.at("B"), 1.0, 1e-12);
}

TEST(Reclassify, PicksHigherCorrelation) {
    const Index t = 80;
    Matrix u = orthonormal_series(3, t, 11);
    Matrix v(7, t);
    for (int k = 0; k < 3; ++k) v.row(k) = u.row(0);
    for (int k = 3; k < 6; ++k) v.row(k) = u.row(1);
    v.row(6) = 0.40 * u.row(0) + 0.90 * u.row(1) + std::sqrt(1 - 0.16 - 0.81) * u.row(2);
    auto p = fixtures::panel({"A1", "A2", "A3", "B1", "B2", "B3", "X"}, v);
    auto level = binary_level({{"A1", "A"}, {"A2", "A"}, {"A3", "A"}, {"B1", "B"}, {"B2", "B"}, {"B3", "B"}, {"X", "S"}},
                              {{"A", "Bond"}, {"B", "Bond"}, {"S", "Bond"}});
    auto r = reclassify_small_categories(level, p);
    const auto& m = r.report.moves.at(0);
    EXPECT_NEAR(m.correlations.at("A"), pearson(v.row(6).transpose(), u.row(0).transpose()), 1e-12);
    EXPECT_NEAR(m.correlations.at("A"), 0.40, 1e-12);
    EXPECT_NEAR(m.correlations.at("B"), 0.90, 1e-12);
    EXPECT_EQ(m.chosen, "B");
    EXPECT_EQ(m.method, ReclassMethod::Correlation);
}

TEST(Reclassify, TiesGoToFirstId) {
    const Index t = 40;
    Matrix u = orthonormal_series(1, t, 5);
    Matrix v(7, t);
    for (int k = 0; k < 7; ++k) v.row(k) = u.row(0);
    auto p = fixtures::panel({"A1", "A2", "A3", "B1", "B2", "B3", "X"}, v);
    auto level = binary_level({{"A1", "B"}, {"A2", "B"}, {"A3", "B"}, {"B1", "A"}, {"B2", "A"}, {"B3", "A"}, {"X", "S"}},
                              {{"A", "Equity"}, {"B", "Equity"}, {"S", "Equity"}});
    EXPECT_EQ(reclassify_small_categories(level, p).level.assignment.at("X"), "A");
}

TEST(Reclassify, NoCandidateMergesIntoOther) {
    auto p = fixtures::random_panel({"B1", "B2", "E1", "E2", "E3"}, 30, 9);
    auto level = binary_level({{"B1", "Gov"}, {"B2", "Corp"}, {"E1", "Tech"}, {"E2", "Tech"}, {"E3", "Tech"}},
                              {{"Gov", "Bond"}, {"Corp", "Bond"}, {"Tech", "Equity"}});
    auto r = reclassify_small_categories(level, p);
    EXPECT_EQ(r.level.assignment.at("B1"), "Bond - Other");
    EXPECT_EQ(r.level.assignment.at("B2"), "Bond - Other");
    EXPECT_EQ(r.level.parent_map.at("Bond - Other"), "Bond");
    EXPECT_EQ(r.level.assignment.at("E1"), "Tech");
}

TEST(Reclassify, ShortHistoryUsesLargestCandidate) {
    auto p = fixtures::random_panel({"A1", "A2", "A3", "B1", "B2", "B3", "B4", "X"}, 10, 2);
    auto level = binary_level(
        {{"A1", "A"}, {"A2", "A"}, {"A3", "A"}, {"B1", "B"}, {"B2", "B"}, {"B3", "B"}, {"B4", "B"}, {"X", "S"}},
        {{"A", "Equity"}, {"B", "Equity"}, {"S", "Equity"}});
    auto r = reclassify_small_categories(level, p);
    EXPECT_EQ(r.report.moves.at(0).method, ReclassMethod::LargestCandidate);
    EXPECT_EQ(r.level.assignment.at("X"), "B");
}

TEST(Reclassify, DefaultMinimumSizeIsThree) { EXPECT_EQ(ReclassOptions{}.min_size, 3u); }

namespace {

Etf with_attrs(const std::string& id, std::map<std::string, std::string> attrs, std::optional<AssetClass> ac = AssetClass::Equity) {
    Etf e = fixtures::etf(id, ac);
    e.attributes = std::move(attrs);
    return e;
}

}  // namespace

TEST(NaAssignment, SingleMatch) {
    std::vector<Etf> peers = {with_attrs("P1", {{"style", "Value"}}), with_attrs("P2", {{"style", "Growth"}})};
    auto level = binary_level({{"P1", "LV"}, {"P2", "LG"}});
    std::map<std::string, std::string> ac = {{"P1", "Equity"}, {"P2", "Equity"}, {"N", "Equity"}};
    auto a = assign_na_categories({with_attrs("N", {{"style", "Growth"}})}, level, peers, ac);
    EXPECT_EQ(a[0].category, "LG");
}

TEST(NaAssignment, MostMatchingMembersWins) {
    std::vector<Etf> peers;
    std::map<std::string, std::string> assign, ac = {{"N", "Equity"}};
    for (int k = 0; k < 5; ++k) {
        peers.push_back(with_attrs("X" + std::to_string(k), {{"region", "US"}}));
        assign[peers.back().id] = "Big";
    }
    for (int k = 0; k < 3; ++k) {
        peers.push_back(with_attrs("Y" + std::to_string(k), {{"region", "US"}}));
        assign[peers.back().id] = "Alpha";
    }
    for (const auto& p : peers) ac[p.id] = "Equity";
    auto a = assign_na_categories({with_attrs("N", {{"region", "US"}})}, binary_level(assign), peers, ac);
    EXPECT_EQ(a[0].category, "Big");
    EXPECT_EQ(a[0].matching, 5u);
}

TEST(NaAssignment, FullTieGoesToFirstId) {
    // Six peers: two per category, all matching, equal class counts.
    std::vector<Etf> peers;
    std::map<std::string, std::string> assign, ac = {{"N", "Equity"}};
    for (const auto& [id, cat] : std::vector<std::pair<std::string, std::string>>{
             {"P1", "Zeta"}, {"P2", "Zeta"}, {"P3", "Mid"}, {"P4", "Mid"}, {"P5", "Beta"}, {"P6", "Beta"}}) {
        peers.push_back(with_attrs(id, {{"style", "Blend"}}));
        assign[id] = cat;
        ac[id] = "Equity";
    }
    auto a = assign_na_categories({with_attrs("N", {{"style", "Blend"}})}, binary_level(assign), peers, ac);
    EXPECT_EQ(a[0].category, "Beta");
}

TEST(NaAssignment, NoMatchGivesOther) {
    std::vector<Etf> peers = {with_attrs("P1", {{"style", "Value"}})};
    std::map<std::string, std::string> ac = {{"P1", "Equity"}, {"N", "Bond"}};
    auto a = assign_na_categories({with_attrs("N", {}, AssetClass::Bond)}, binary_level({{"P1", "LV"}}), peers, ac);
    EXPECT_EQ(a[0].category, "Bond - Other");
    EXPECT_TRUE(a[0].fallback_other);
}

TEST(AttributeSplit, SmallCategoryUntouched) {
    auto level = binary_level({{"B1", "Gov"}, {"B2", "Gov"}}, {{"Gov", "Bond"}});
    auto r = split_by_attribute(level, {{"B1", "short"}, {"B2", "long"}}, "Bond", {{"B1", 1.0}, {"B2", 1.0}}, 0.1, 4);
    EXPECT_EQ(r.level, level);
    EXPECT_EQ(r.report.decisions[0].outcome, SplitOutcome::Skipped);
}

TEST(AttributeSplit, EvenDurationSharesSplit) {
    std::map<std::string, std::string> assign, dur;
    std::map<std::string, double> addv;
    for (int k = 0; k < 10; ++k) {
        const std::string id = "B" + std::to_string(k);
        assign[id] = "Gov";
        dur[id] = k < 5 ? "short" : "long";
        addv[id] = 1.0;
    }
    auto level = binary_level(assign, {{"Gov", "Bond"}});
    auto r = split_by_attribute(level, dur, "Bond", addv, 0.1, 4);
    EXPECT_EQ(r.level.categories, (std::vector<std::string>{"Gov.long", "Gov.short"}));
    EXPECT_EQ(r.level.parent_map.at("Gov.short"), "Bond");
}

TEST(AttributeSplit, DefaultMinimumIsNOverK) {
    auto level = binary_level({{"A", "X"}, {"B", "X"}, {"C", "Y"}, {"D", "Y"}, {"E", "Z"}});
    EXPECT_EQ(default_min_split_size(level), 1u);
    level = binary_level({{"A", "X"}, {"B", "X"}, {"C", "X"}, {"D", "Y"}, {"E", "Y"}, {"F", "Y"}, {"G", "Y"}});
    EXPECT_EQ(default_min_split_size(level), 3u);
}

TEST(Augment, PureInputOnlyGainsAssetClassLevel) {
    std::vector<Etf> etfs;
    std::vector<std::string> ids;
    for (int k = 0; k < 6; ++k) {
        const std::string id = "E" + std::to_string(k);
        etfs.push_back(fixtures::etf(id, k < 3 ? AssetClass::Equity : AssetClass::Bond, 10.0, k < 3 ? "Stocks" : "Bonds"));
        ids.push_back(id);
    }
    auto result = augment_thirdparty(etfs, fixtures::random_panel(ids, 30, 4));
    const auto& t = result.taxonomy;
    ASSERT_EQ(t.levels.size(), 2u);
    EXPECT_EQ(t.levels[0].categories, (std::vector<std::string>{"Bonds", "Stocks"}));
    EXPECT_EQ(t.levels[0].assignment.at("E0"), "Stocks");
    EXPECT_EQ(t.levels[1].assignment.at("E4"), "Bond");
    EXPECT_EQ(t.metadata.at("param.vtilde"), "0.1");
    EXPECT_EQ(t.metadata.at("param.nstar"), "3");
}

namespace {

Universe organic_universe(const std::vector<std::pair<std::string, std::string>>& etf_sector) {
    Universe u;
    std::set<std::string> sectors;
    for (const auto& [e, s] : etf_sector) sectors.insert(s);
    for (const auto& s : sectors) {
        for (int k = 0; k < 2; ++k) {
            auto sec = fixtures::security(s + "#" + std::to_string(k), AssetClass::Equity, s, 5e9);
            u.securities.emplace(sec.id, sec);
        }
    }
    std::vector<Holding> hs;
    for (const auto& [e, s] : etf_sector) {
        u.etfs.push_back(fixtures::etf(e, AssetClass::Equity));
        hs.push_back({e, s + "#0", 0.5});
        hs.push_back({e, s + "#1", 0.5});
    }
    u.holdings = HoldingsTable(hs);
    return u;
}

}  // namespace

TEST(Organic, DefaultsRecorded) {
    auto u = organic_universe({{"E1", "Tech"}});
    auto r = build_organic_taxonomy(u.etfs, u.securities, u.holdings);
    EXPECT_EQ(r.taxonomy.metadata.at("param.nupper"), "30");
    EXPECT_EQ(r.taxonomy.metadata.at("param.nlower"), "3");
}

TEST(Organic, SmallSectorIsOneCategory) {
    std::vector<std::pair<std::string, std::string>> spec;
    for (int k = 0; k < 5; ++k) spec.emplace_back("E" + std::to_string(k), "Tech/Software");
    auto u = organic_universe(spec);
    auto r = build_organic_taxonomy(u.etfs, u.securities, u.holdings);
    EXPECT_EQ(r.taxonomy.levels[0].categories, std::vector<std::string>{"Equity.Tech"});
    EXPECT_EQ(r.taxonomy.levels[1].categories, std::vector<std::string>{"Equity"});
}

TEST(Organic, LargeSectorSplitsIntoIndustries) {
    std::vector<std::pair<std::string, std::string>> spec;
    for (int k = 0; k < 40; ++k) spec.emplace_back("E" + std::to_string(100 + k), k < 20 ? "Tech/Software" : "Tech/Hardware");
    auto u = organic_universe(spec);
    auto r = build_organic_taxonomy(u.etfs, u.securities, u.holdings);
    EXPECT_EQ(r.taxonomy.levels[0].categories,
              (std::vector<std::string>{"Equity.Tech.Hardware", "Equity.Tech.Software"}));
    EXPECT_EQ(r.taxonomy.levels[0].assignment.at("E100"), "Equity.Tech.Software");
}

TEST(Organic, FragmentedIndustriesRejected) {
    // 32 ETFs in one sector spread over 16 industries of 2: most groups below N_*.
    std::vector<std::pair<std::string, std::string>> spec;
    for (int k = 0; k < 32; ++k) spec.emplace_back("E" + std::to_string(100 + k), "Tech/I" + std::to_string(k / 2 + 10));
    auto u = organic_universe(spec);
    auto r = build_organic_taxonomy(u.etfs, u.securities, u.holdings);
    EXPECT_EQ(r.taxonomy.levels[0].categories, std::vector<std::string>{"Equity.Tech"});
}

TEST(Organic, BondsRefinedByCreditGroup) {
    Universe u;
    std::vector<Holding> hs;
    for (const char* rating : {"AA", "BB"}) {
        Security s = fixtures::security(std::string("S") + rating, AssetClass::Bond, "Corp");
        s.credit_rating = rating;
        s.duration_years = 5.0;
        u.securities.emplace(s.id, s);
    }
    for (int k = 0; k < 8; ++k) {
        const std::string id = "B" + std::to_string(k);
        u.etfs.push_back(fixtures::etf(id, AssetClass::Bond));
        hs.push_back({id, k < 4 ? "SAA" : "SBB", 1.0});
    }
    u.holdings = HoldingsTable(hs);
    auto r = build_organic_taxonomy(u.etfs, u.securities, u.holdings);
    EXPECT_EQ(r.taxonomy.levels[0].assignment.at("B0"), "Bond.Corp.Investment-Grade");
    EXPECT_EQ(r.taxonomy.levels[0].assignment.at("B7"), "Bond.Corp.High-Yield");
}

TEST(Organic, WeightedModeKeepsSplitExposure) {
    auto u = organic_universe({{"E1", "Tech"}, {"E2", "Health"}});
    u.etfs.push_back(fixtures::etf("E3", AssetClass::Equity));
    u.holdings = HoldingsTable([&] {
        auto hs = u.holdings.entries();
        hs.push_back({"E3", "Tech#0", 0.5});
        hs.push_back({"E3", "Health#0", 0.5});
        return hs;
    }());
    OrganicConfig cfg;
    cfg.weighted = true;
    auto r = build_organic_taxonomy(u.etfs, u.securities, u.holdings, cfg);
    const auto& l1 = r.taxonomy.levels[0];
    ASSERT_EQ(l1.kind, LevelKind::Weighted);
    EXPECT_DOUBLE_EQ(l1.weights.at("E3").at("Equity.Tech"), 0.5);
    EXPECT_DOUBLE_EQ(l1.weights.at("E1").at("Equity.Tech"), 1.0);
}

TEST(Organic, UnheldEtfWithoutClassGoesThroughNaAssignment) {
    auto u = organic_universe({{"E1", "Tech"}, {"E2", "Tech"}});
    u.etfs.push_back(fixtures::etf("E9"));
    auto r = build_organic_taxonomy(u.etfs, u.securities, u.holdings);
    EXPECT_EQ(r.taxonomy.levels[0].assignment.at("E9"), "Equity.Tech");
}
