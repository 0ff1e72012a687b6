#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "etfrisk/exposure.hpp"
#include "fixtures.hpp"

using namespace etfrisk;
using fixtures::security;

namespace {

SecurityMaster master(std::initializer_list<Security> secs) {
    SecurityMaster m;
    for (const auto& s : secs) m.emplace(s.id, s);
    return m;
}

ExposureMatrix one_row(const std::vector<double>& w) {
    ExposureMatrix e;
    e.etf_ids = {"E"};
    for (std::size_t k = 0; k < w.size(); ++k) e.category_ids.push_back("C" + std::to_string(k + 1));
    e.weights = Eigen::Map<const Vector>(w.data(), static_cast<Index>(w.size())).transpose();
    e.coverage = Vector::Ones(1);
    return e;
}

Security bond(const std::string& id, std::optional<std::string> rating, std::optional<double> duration) {
    Security s = security(id, AssetClass::Bond, "Corp");
    s.credit_rating = std::move(rating);
    s.duration_years = duration;
    return s;
}

}  // namespace

TEST(Exposures, SingleConstituentIsIndicator) {
    auto secs = master({security("S1", AssetClass::Equity, "A"), security("S2", AssetClass::Equity, "B")});
    HoldingsTable h({{"E1", "S1", 1.0}});
    auto e = compute_exposures(h, secs, {"E1"}, attributes::sector(), {}, std::vector<std::string>{"A", "B"});
    EXPECT_EQ(e.weights(0, 0), 1.0);
    EXPECT_EQ(e.weights(0, 1), 0.0);
}

TEST(Exposures, TwoSectors) {
    auto secs = master({security("S1", AssetClass::Equity, "A"), security("S2", AssetClass::Equity, "B")});
    HoldingsTable h({{"E1", "S1", 0.6}, {"E1", "S2", 0.4}});
    auto e = compute_exposures(h, secs, {"E1"}, attributes::sector());
    EXPECT_EQ(e.category_ids, (std::vector<std::string>{"A", "B"}));
    EXPECT_DOUBLE_EQ(e.weights(0, 0), 0.6);
    EXPECT_DOUBLE_EQ(e.weights(0, 1), 0.4);
}

TEST(Exposures, UnclassifiedWeightReducesCoverage) {
    auto secs = master({security("S1", AssetClass::Equity, "A"), security("S2", AssetClass::Equity)});
    HoldingsTable h({{"E1", "S1", 0.5}, {"E1", "S2", 0.5}});
    auto e = compute_exposures(h, secs, {"E1"}, attributes::sector());
    EXPECT_DOUBLE_EQ(e.weights(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(e.coverage(0), 0.5);
    ExposureOptions renorm{true};
    EXPECT_DOUBLE_EQ(compute_exposures(h, secs, {"E1"}, attributes::sector(), renorm).weights(0, 0), 1.0);
}

TEST(Exposures, MatchesExplicitProduct) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int n = 4, m = 9, k = 3;
    SecurityMaster secs;
    Matrix lambda = Matrix::Zero(m, k);
    std::vector<std::string> cats = {"A", "B", "C"};
    for (int a = 0; a < m; ++a) {
        Security s = security("S" + std::to_string(a), AssetClass::Equity);
        double w0 = u(rng), w1 = u(rng), w2 = u(rng), tot = w0 + w1 + w2;
        s.sector_weights = {{"A", w0 / tot}, {"B", w1 / tot}, {"C", w2 / tot}};
        for (int c = 0; c < k; ++c) lambda(a, c) = s.sector_weights[cats[c]];
        secs.emplace(s.id, s);
    }
    Matrix omega = Matrix::Zero(n, m);
    std::vector<Holding> hs;
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) {
        ids.push_back("E" + std::to_string(i));
        double tot = 0;
        for (int a = 0; a < m; ++a) tot += (omega(i, a) = u(rng));
        for (int a = 0; a < m; ++a) {
            omega(i, a) /= tot;
            hs.push_back({ids.back(), "S" + std::to_string(a), omega(i, a)});
        }
    }
    auto e = compute_exposures(HoldingsTable(hs), secs, ids, attributes::sector(), {}, cats);
    EXPECT_LT((e.weights - omega * lambda).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Exposures, SectorDepthTruncatesPaths) {
    Security s = security("S", AssetClass::Equity, "Tech/Software/Apps");
    EXPECT_EQ(attributes::sector(1)(s).begin()->first, "Tech");
    EXPECT_EQ(attributes::sector(2)(s).begin()->first, "Tech/Software");
    Security shallow = security("T", AssetClass::Equity, "Tech");
    EXPECT_TRUE(attributes::sector(2)(shallow).empty());
    EXPECT_EQ(attributes::sector_under("Tech", 2)(s).begin()->first, "Tech/Software");
    EXPECT_TRUE(attributes::sector_under("Health", 2)(s).empty());
}

TEST(Threshold, DefaultPicksMajorityCategory) {
    ThresholdOptions opt{1e-9, 0.5};
    auto t = threshold_exposures(one_row({0.55, 0.30, 0.15}), 0.5, ThresholdMode::Binary, opt);
    EXPECT_FALSE(t.assignments.at("E").broad);
    EXPECT_EQ(t.assignments.at("E").label(""), "C1");
}

TEST(Threshold, AllBelowIsBroad) {
    ThresholdOptions opt{1e-9, 0.5};
    auto t = threshold_exposures(one_row({0.40, 0.35, 0.25}), 0.5, ThresholdMode::Binary, opt);
    EXPECT_TRUE(t.assignments.at("E").broad);
    EXPECT_EQ(t.assignments.at("E").label("Broad"), "Broad");
}

TEST(Threshold, WeightedRenormalizesSurvivors) {
    auto t = threshold_exposures(one_row({0.45, 0.40, 0.15}), 0.35, ThresholdMode::Weighted);
    const auto& w = t.assignments.at("E").weights;
    ASSERT_EQ(w.size(), 2u);
    EXPECT_NEAR(w.at("C1"), 0.45 / 0.85, 1e-15);
    EXPECT_NEAR(w.at("C2"), 0.40 / 0.85, 1e-15);
}

TEST(Threshold, BinaryNeedsThresholdAboveHalf) {
    EXPECT_THROW(threshold_exposures(one_row({0.5, 0.5}), 0.5, ThresholdMode::Binary), ConfigError);
    EXPECT_THROW(threshold_exposures(one_row({0.5, 0.5}), 0.0, ThresholdMode::Weighted), ConfigError);
    auto t = threshold_exposures(one_row({0.5, 0.5}), 0.5, ThresholdMode::Binary, {1e-9, 0.5});
    EXPECT_TRUE(t.assignments.at("E").broad);
}

TEST(Threshold, LowCoverageIsBroad) {
    auto e = one_row({0.4});
    e.coverage(0) = 0.4;
    EXPECT_TRUE(threshold_exposures(e, 0.3, ThresholdMode::Weighted).assignments.at("E").broad);
}

TEST(Tranches, RightInclusiveBoundaries) {
    TrancheSpec spec{{1.0, 5.0}, {"t1", "t2", "t3"}};
    EXPECT_EQ(spec.label_of(1.0), "t1");
    EXPECT_EQ(spec.label_of(1.0000001), "t2");
    EXPECT_EQ(spec.label_of(5.0), "t2");
    EXPECT_EQ(spec.label_of(100.0), "t3");
    EXPECT_EQ(TrancheSpec::duration_buckets().label_of(0.0), "ultra-short");
    EXPECT_THROW((TrancheSpec{{2.0, 1.0}, {"a", "b", "c"}}.validate()), ConfigError);
}

TEST(Tranches, ExposureRows) {
    Security a = security("A", AssetClass::Equity), b = security("B", AssetClass::Equity);
    a.market_cap = 1.0;
    b.market_cap = 50.0;
    auto secs = master({a, b});
    TrancheSpec spec{{1.0, 5.0}, {"t1", "t2", "t3"}};
    auto top = tranche_exposures(HoldingsTable({{"E", "B", 1.0}}), secs, {"E"}, scalars::market_cap(), spec);
    EXPECT_EQ(top.weights.row(0), (Eigen::RowVector3d(0, 0, 1)));
    auto mixed = tranche_exposures(HoldingsTable({{"E", "A", 0.5}, {"E", "B", 0.5}}), secs, {"E"},
                                   scalars::market_cap(), spec);
    EXPECT_EQ(mixed.weights.row(0), (Eigen::RowVector3d(0.5, 0, 0.5)));
}

TEST(CapFactor, LevelsAndLogs) {
    auto secs = master({security("A", AssetClass::Equity, "", std::exp(2.0)), security("B", AssetClass::Equity, "", std::exp(4.0)),
                        security("C", AssetClass::Equity, "", 10.0), security("D", AssetClass::Equity, "", 1000.0)});
    auto one = cap_factor(HoldingsTable({{"E", "C", 1.0}}), secs, {"E"});
    EXPECT_DOUBLE_EQ(one.level(0), 10.0);
    EXPECT_DOUBLE_EQ(one.log_level(0), std::log(10.0));
    auto logs = cap_factor(HoldingsTable({{"E", "A", 0.5}, {"E", "B", 0.5}}), secs, {"E"});
    EXPECT_NEAR(logs.log_level(0), 3.0, 1e-15);
    auto lvl = cap_factor(HoldingsTable({{"E", "C", 0.9}, {"E", "D", 0.1}}), secs, {"E"});
    EXPECT_NEAR(lvl.level(0), 109.0, 1e-12);
}

TEST(CreditRating, AllAaa) {
    auto secs = master({bond("X", "AAA", std::nullopt)});
    RatingOptions opt{RatingMethod::LinearScore, true, false};
    auto r = average_credit_rating(HoldingsTable({{"E", "X", 1.0}}), secs, {"E"}, RatingTable::linear_coarse(), opt);
    EXPECT_EQ(r[0].value, 1.0);
    EXPECT_EQ(*r[0].label, "AAA");
    EXPECT_EQ(*r[0].group, kInvestmentGrade);
}

TEST(CreditRating, LinearScoreAverage) {
    auto secs = master({bond("X", "AAA", std::nullopt), bond("Y", "A", std::nullopt)});
    RatingOptions opt{RatingMethod::LinearScore, true, false};
    auto r = average_credit_rating(HoldingsTable({{"E", "X", 0.5}, {"E", "Y", 0.5}}), secs, {"E"},
                                   RatingTable::linear_coarse(), opt);
    EXPECT_EQ(r[0].value, 2.0);
    EXPECT_EQ(*r[0].label, "AA");
}

TEST(CreditRating, DefaultRateNearest) {
    auto secs = master({bond("X", "AAA", std::nullopt), bond("Y", "B", std::nullopt)});
    RatingTable table({{"AAA", 0.01}, {"BBB", 0.20}, {"B", 4.0}});
    auto r = average_credit_rating(HoldingsTable({{"E", "X", 0.5}, {"E", "Y", 0.5}}), secs, {"E"}, table);
    EXPECT_NEAR(r[0].value, 2.005, 1e-15);
    EXPECT_EQ(*r[0].label, "BBB");
    EXPECT_EQ(*r[0].group, kInvestmentGrade);
}

TEST(CreditRating, CoarseBoundary) {
    EXPECT_EQ(coarse_rating("BBB-"), "BBB");
    EXPECT_EQ(coarse_rating("BB+"), "BB");
    auto secs = master({bond("X", "BBB-", std::nullopt), bond("Y", "BB+", std::nullopt)});
    RatingOptions opt{RatingMethod::LinearScore, true, false};
    auto table = RatingTable::linear_coarse();
    auto ig = average_credit_rating(HoldingsTable({{"E", "X", 1.0}}), secs, {"E"}, table, opt);
    auto hy = average_credit_rating(HoldingsTable({{"E", "Y", 1.0}}), secs, {"E"}, table, opt);
    EXPECT_EQ(*ig[0].group, kInvestmentGrade);
    EXPECT_EQ(*hy[0].group, kHighYield);
}

TEST(CreditRating, UnknownRatingInTableIsConfigError) {
    auto secs = master({bond("X", "AA+", std::nullopt)});
    EXPECT_THROW(average_credit_rating(HoldingsTable({{"E", "X", 1.0}}), secs, {"E"}, RatingTable::linear_coarse()),
                 ConfigError);
}

TEST(Duration, AverageAndBuckets) {
    auto secs = master({bond("A", std::nullopt, 2.0), bond("B", std::nullopt, 12.0), bond("C", std::nullopt, 0.5)});
    auto avg = average_duration(HoldingsTable({{"E", "A", 0.5}, {"E", "B", 0.5}}), secs, {"E"});
    EXPECT_DOUBLE_EQ(avg.average(0), 7.0);
    EXPECT_EQ(avg.bucket_by_average[0], "intermediate");
    auto ultra = average_duration(HoldingsTable({{"E", "C", 1.0}}), secs, {"E"});
    EXPECT_EQ(ultra.bucket_of("E"), "ultra-short");
    auto split = average_duration(HoldingsTable({{"E", "A", 0.4}, {"E", "B", 0.6}}), secs, {"E"}, TrancheSpec::duration_buckets(),
                                  0.5, ThresholdMode::Binary, {1e-9, 0.5});
    EXPECT_EQ(split.bucket_of("E"), "long");
}

TEST(Duration, NegativeDurationRejected) {
    auto secs = master({bond("A", std::nullopt, -1.0)});
    EXPECT_THROW(average_duration(HoldingsTable({{"E", "A", 1.0}}), secs, {"E"}), InputError);
}
