#pragma once

// Model files, all CSV with shortest round-trip decimals:
//   loadings.csv        etf_id,factor_id,value       (nonzero Omega entries)
//   factor_cov.csv      factor_a,factor_b,value      (full K x K, row-major)
//   specific.csv        etf_id,specific_var,total_var,gamma
//   factors.csv         factor_id,group
// The calibrated beta is loadings / gamma, so the four files determine Gamma.

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "etfrisk/csv.hpp"
#include "etfrisk/errors.hpp"
#include "etfrisk/riskmodel.hpp"

namespace etfrisk {

namespace fs = std::filesystem;

inline void write_model(const RiskModel& m, const fs::path& dir) {
    fs::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream os(dir / name, std::ios::binary);
        if (!os) throw Error("cannot write " + (dir / name).string());
        return os;
    };
    {
        auto os = open("loadings.csv");
        os << "etf_id,factor_id,value\n";
        for (Index i = 0; i < m.loadings.rows(); ++i)
            for (Index a = 0; a < m.loadings.cols(); ++a)
                if (m.loadings(i, a) != 0.0)
                    os << csv::quote(m.etf_ids[i]) << ',' << csv::quote(m.factor_ids[a]) << ','
                       << csv::format_double(m.loadings(i, a)) << '\n';
    }
    {
        auto os = open("factor_cov.csv");
        os << "factor_a,factor_b,value\n";
        for (Index a = 0; a < m.factor_cov.rows(); ++a)
            for (Index b = 0; b < m.factor_cov.cols(); ++b)
                os << csv::quote(m.factor_ids[a]) << ',' << csv::quote(m.factor_ids[b]) << ','
                   << csv::format_double(m.factor_cov(a, b)) << '\n';
    }
    {
        auto os = open("specific.csv");
        os << "etf_id,specific_var,total_var,gamma\n";
        for (Index i = 0; i < m.size(); ++i)
            os << csv::quote(m.etf_ids[i]) << ',' << csv::format_double(m.specific_var(i)) << ','
               << csv::format_double(m.total_var(i)) << ',' << csv::format_double(m.gamma(i)) << '\n';
    }
    {
        auto os = open("factors.csv");
        os << "factor_id,group\n";
        for (std::size_t a = 0; a < m.factor_ids.size(); ++a)
            os << csv::quote(m.factor_ids[a]) << ',' << csv::quote(m.factor_groups[a]) << '\n';
    }
}

inline RiskModel read_model(const fs::path& dir) {
    RiskModel m;
    const auto factors = csv::read_file(dir / "factors.csv");
    csv::require_header(factors, {"factor_id", "group"});
    std::map<std::string, Index> factor_index;
    for (const auto& r : factors.rows) {
        if (!factor_index.emplace(r.fields[0], static_cast<Index>(m.factor_ids.size())).second)
            throw InputError(factors.file, r.line, "factor_id", "duplicate factor '" + r.fields[0] + "'");
        m.factor_ids.push_back(r.fields[0]);
        m.factor_groups.push_back(r.fields[1]);
    }
    const Index k = static_cast<Index>(m.factor_ids.size());

    const auto specific = csv::read_file(dir / "specific.csv");
    csv::require_header(specific, {"etf_id", "specific_var", "total_var", "gamma"});
    std::map<std::string, Index> etf_index;
    const Index n = static_cast<Index>(specific.rows.size());
    m.specific_var.resize(n);
    m.total_var.resize(n);
    m.gamma.resize(n);
    for (const auto& r : specific.rows) {
        const Index i = static_cast<Index>(m.etf_ids.size());
        if (!etf_index.emplace(r.fields[0], i).second)
            throw InputError(specific.file, r.line, "etf_id", "duplicate ETF '" + r.fields[0] + "'");
        m.etf_ids.push_back(r.fields[0]);
        m.specific_var(i) = csv::require_number(specific, r, 1);
        m.total_var(i) = csv::require_number(specific, r, 2);
        m.gamma(i) = csv::require_number(specific, r, 3);
        if (!(m.total_var(i) > 0.0) || !(m.gamma(i) > 0.0) || m.specific_var(i) < 0.0)
            throw InputError(specific.file, r.line, "", "variances and gamma must be positive");
    }

    auto lookup = [](const std::map<std::string, Index>& idx, const csv::Table& t, const csv::Row& r, std::size_t col) {
        auto it = idx.find(r.fields[col]);
        if (it == idx.end()) throw InputError(t.file, r.line, t.header[col], "unknown id '" + r.fields[col] + "'");
        return it->second;
    };
    const auto loadings = csv::read_file(dir / "loadings.csv");
    csv::require_header(loadings, {"etf_id", "factor_id", "value"});
    m.loadings = Matrix::Zero(n, k);
    for (const auto& r : loadings.rows)
        m.loadings(lookup(etf_index, loadings, r, 0), lookup(factor_index, loadings, r, 1)) =
            csv::require_number(loadings, r, 2);

    const auto cov = csv::read_file(dir / "factor_cov.csv");
    csv::require_header(cov, {"factor_a", "factor_b", "value"});
    m.factor_cov = Matrix::Zero(k, k);
    for (const auto& r : cov.rows)
        m.factor_cov(lookup(factor_index, cov, r, 0), lookup(factor_index, cov, r, 1)) = csv::require_number(cov, r, 2);

    m.beta = m.gamma.cwiseInverse().asDiagonal() * m.loadings;
    return m;
}

}  // namespace etfrisk
