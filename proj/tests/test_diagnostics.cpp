#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "etfrisk/diagnostics.hpp"
#include "etfrisk/ingest.hpp"
#include "etfrisk/manifest.hpp"
#include "etfrisk/synth.hpp"
#include "etfrisk/taxonomy_builder.hpp"
#include "fixtures.hpp"

using namespace etfrisk;

namespace {

Matrix random_correlation(Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    Matrix x = Matrix::NullaryExpr(n, 3 * n, [&]() { return normal(rng); });
    Matrix c = x * x.transpose();
    const Vector d = c.diagonal().cwiseSqrt().cwiseInverse();
    c = d.asDiagonal() * c * d.asDiagonal();
    c.diagonal().setOnes();
    return c;
}

double lower_mean(const Matrix& psi) {
    double s = 0.0;
    Index n = 0;
    for (Index i = 1; i < psi.rows(); ++i)
        for (Index j = 0; j < i; ++j, ++n) s += psi(i, j);
    return s / double(n);
}

}  // namespace

TEST(StyleDiagnostic, ConstantStyleFitsInterceptOnly) {
    std::mt19937_64 rng(1);
    const Matrix psi = random_correlation(6, rng);
    auto r = style_factor_diagnostic(psi, Vector::Ones(6));
    EXPECT_EQ(r.dropped, (std::vector<std::string>{"y", "z"}));
    EXPECT_NEAR(r.intercept, lower_mean(psi), 1e-14);
    EXPECT_TRUE(std::isnan(r.coef_y));
    EXPECT_EQ(r.n_pairs, 15);
}

TEST(StyleDiagnostic, InterceptIsMeanCorrelation) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> normal;
    for (int run = 0; run < 100; ++run) {
        const Index n = 3 + run % 20;
        const Matrix psi = random_correlation(n, rng);
        const Vector beta = Vector::NullaryExpr(n, [&]() { return normal(rng); });
        auto r = style_factor_diagnostic(psi, beta);
        EXPECT_NEAR(r.intercept, lower_mean(psi), 1e-10);
        EXPECT_NEAR(r.mean_correlation, lower_mean(psi), 1e-14);
        EXPECT_LT(r.max_residual_dot, 1e-8);
    }
}

TEST(StyleDiagnostic, OuterProductFitsExactly) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-0.9, 0.9);
    const Vector beta = Vector::NullaryExpr(12, [&]() { return u(rng); });
    Matrix psi = beta * beta.transpose();
    psi.diagonal().setOnes();
    auto r = style_factor_diagnostic(psi, beta);
    EXPECT_GE(r.r_squared, 1.0 - 1e-9);
    EXPECT_NEAR(r.coef_z, 1.0, 1e-9);
    EXPECT_NEAR(r.coef_y, 0.0, 1e-9);
}

TEST(StyleDiagnostic, RejectsInvalidInput) {
    Matrix psi = Matrix::Identity(3, 3);
    psi(0, 0) = 2.0;
    EXPECT_THROW(style_factor_diagnostic(psi, Vector::Ones(3)), PreconditionError);
    EXPECT_THROW(style_factor_diagnostic(Matrix::Identity(2, 2), Vector::Ones(2)), PreconditionError);
    psi = Matrix::Identity(3, 3);
    psi(0, 1) = 0.2;
    EXPECT_THROW(style_factor_diagnostic(psi, Vector::Ones(3)), PreconditionError);
}

TEST(Synth, SeededOutputIsByteIdentical) {
    SynthSpec spec;
    spec.n_etfs = 12;
    spec.days = 30;
    spec.missing_rate = 0.05;
    auto a = fixtures::scratch("synth_a"), b = fixtures::scratch("synth_b");
    write_synthetic_universe(generate_synthetic_universe(spec), a);
    write_synthetic_universe(generate_synthetic_universe(spec), b);
    for (const char* f : {"etfs.csv", "securities.csv", "holdings.csv", "returns.csv", "planted_taxonomy.txt"})
        EXPECT_EQ(fixtures::read_file(a / f), fixtures::read_file(b / f)) << f;
    spec.seed = 2;
    auto c = fixtures::scratch("synth_c");
    write_synthetic_universe(generate_synthetic_universe(spec), c);
    EXPECT_NE(fixtures::read_file(a / "returns.csv"), fixtures::read_file(c / "returns.csv"));
}

TEST(Synth, OutputPassesIngestion) {
    SynthSpec spec;
    spec.n_etfs = 30;
    spec.days = 40;
    spec.groups = {{AssetClass::Equity, 2}, {AssetClass::Bond, 2}, {AssetClass::RealEstate, 1}};
    spec.missing_rate = 0.02;
    auto u = generate_synthetic_universe(spec);
    auto dir = fixtures::scratch("synth_ingest");
    write_synthetic_universe(u, dir);
    Universe back;
    ASSERT_NO_THROW(back = load_universe(UniversePaths::in_directory(dir)));
    EXPECT_EQ(back.etfs.size(), 30u);
    EXPECT_TRUE(back.report.renormalized.empty());
    EXPECT_EQ(back.returns.values.rows(), 30);
    EXPECT_NO_THROW(validate_taxonomy(u.planted));
}

TEST(Synth, InfeasibleSpecRejected) {
    SynthSpec spec;
    spec.n_etfs = 3;
    spec.groups = {{AssetClass::Equity, 4}};
    EXPECT_THROW(generate_synthetic_universe(spec), ConfigError);
}

TEST(Synth, OrganicClassifierRecoversPlantedBlocks) {
    SynthSpec spec;  // two blocks, 0.8 within, 0.1 across, N = 40, T = 500
    auto u = generate_synthetic_universe(spec);
    auto built = build_organic_taxonomy(u.etfs, u.securities, u.holdings);
    const auto& planted = u.planted.levels[0].assignment;
    const auto& got = built.taxonomy.levels[0].assignment;
    std::size_t hits = 0;
    for (const auto& [id, cat] : planted)
        if (auto it = got.find(id); it != got.end() && it->second == cat) ++hits;
    EXPECT_GE(double(hits) / double(planted.size()), 0.95);
}

TEST(Manifest, ConfigParsing) {
    std::istringstream in("# comment\nwstar = 0.5\n\nnstar=3\n");
    auto cfg = parse_config(in, "c");
    EXPECT_EQ(cfg.at("wstar"), "0.5");
    EXPECT_EQ(cfg.at("nstar"), "3");
    std::istringstream dup("a=1\na=2\n");
    EXPECT_THROW(parse_config(dup, "c"), ConfigError);
    std::istringstream bad("novalue\n");
    EXPECT_THROW(parse_config(bad, "c"), ConfigError);
}

TEST(Manifest, SortedAndHashed) {
    auto dir = fixtures::scratch("manifest");
    fixtures::write_file(dir / "in.txt", "abc");
    Manifest m;
    m.set("z", "1");
    m.set("a", "2");
    m.hash_input("data", dir / "in.txt");
    EXPECT_EQ(m.to_string(), "a=2\ninput.data=" + hex64(fnv1a("abc")) + "\nz=1\n");
    EXPECT_EQ(hex64(fnv1a("")), "cbf29ce484222325");
}
