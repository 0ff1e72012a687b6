#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "etfrisk/category_returns.hpp"
#include "etfrisk/csv.hpp"
#include "etfrisk/errors.hpp"
#include "etfrisk/exposure.hpp"
#include "etfrisk/returns_prep.hpp"
#include "etfrisk/stats.hpp"
#include "etfrisk/types.hpp"

namespace etfrisk {

// ---------------------------------------------------------------------------
// Splitting categories by a per-ETF label (asset class, duration bucket, ...)
// ---------------------------------------------------------------------------

enum class SplitOutcome { Unchanged, Kept, Split, Skipped };

inline std::string to_string(SplitOutcome o) {
    switch (o) {
        case SplitOutcome::Unchanged: return "unchanged";
        case SplitOutcome::Kept: return "kept";
        case SplitOutcome::Split: return "split";
        case SplitOutcome::Skipped: return "skipped";
    }
    return "unchanged";
}

struct SplitDecision {
    std::string category;
    std::vector<std::string> present;        // Q(A), sorted
    std::map<std::string, double> shares;    // ADDV share per label in Q(A)
    std::vector<std::string> above;          // labels with share > threshold
    SplitOutcome outcome = SplitOutcome::Unchanged;
    std::vector<std::string> result_categories;
    std::string dominant;                    // set when kept
    bool count_shares = false;               // ADDV summed to zero; shares by ETF count
};

struct SplitReport {
    std::vector<SplitDecision> decisions;

    std::vector<std::string> lines(const std::string& stage) const {
        std::vector<std::string> out;
        for (const auto& d : decisions) {
            std::ostringstream os;
            os << stage << ' ' << d.category << ' ' << to_string(d.outcome);
            if (!d.shares.empty()) {
                os << " shares";
                for (const auto& [l, s] : d.shares) os << ' ' << l << '=' << csv::format_double(s);
            }
            if (d.outcome == SplitOutcome::Kept) os << " as " << d.dominant;
            if (d.outcome == SplitOutcome::Split) {
                os << " into";
                for (const auto& c : d.result_categories) os << ' ' << c;
            }
            if (d.count_shares) os << " (zero ADDV, count shares)";
            out.push_back(os.str());
        }
        return out;
    }
};

struct LabelSplit {
    TaxonomyLevel level;
    SplitReport report;
};

namespace detail {

/// Shared ADDV-gated splitting. `eligible` filters categories; `label_of`
/// gives each ETF's label (every member must have one).
inline LabelSplit split_by_labels(const TaxonomyLevel& level, const std::map<std::string, std::string>& label_of,
                                  const std::map<std::string, double>& addv, double vtilde_star,
                                  const std::function<bool(const std::string&, std::size_t)>& eligible,
                                  const std::function<std::string(const std::string&, const std::string&)>& parent_of_split) {
    if (level.kind != LevelKind::Binary) throw PreconditionError("splitting needs a binary level");
    if (!(vtilde_star >= 0.0 && vtilde_star < 1.0)) throw ConfigError("ADDV share threshold must lie in [0, 1)");
    LabelSplit out;
    out.level = level;
    for (const auto& [cat, ids] : level.members()) {
        if (ids.empty()) continue;
        SplitDecision d;
        d.category = cat;
        if (!eligible(cat, ids.size())) {
            d.outcome = SplitOutcome::Skipped;
            out.report.decisions.push_back(std::move(d));
            continue;
        }
        std::map<std::string, double> volume;
        std::map<std::string, double> count;
        for (const auto& id : ids) {
            auto l = label_of.find(id);
            if (l == label_of.end()) throw PreconditionError("ETF '" + id + "' has no label for splitting");
            auto v = addv.find(id);
            volume[l->second] += (v == addv.end() || !std::isfinite(v->second)) ? 0.0 : v->second;
            count[l->second] += 1.0;
        }
        for (const auto& [l, v] : volume) d.present.push_back(l);
        if (d.present.size() == 1) {
            d.outcome = SplitOutcome::Unchanged;
            d.dominant = d.present.front();
            out.report.decisions.push_back(std::move(d));
            continue;
        }
        double total = 0.0;
        for (const auto& [l, v] : volume) total += v;
        const auto& basis = total > 0.0 ? volume : count;
        if (!(total > 0.0)) {
            d.count_shares = true;
            total = double(ids.size());
        }
        for (const auto& [l, v] : basis) {
            d.shares[l] = v / total;
            if (v / total > vtilde_star) d.above.push_back(l);
        }
        if (d.above.size() == 1) {
            d.outcome = SplitOutcome::Kept;
            d.dominant = d.above.front();
        } else {
            d.outcome = SplitOutcome::Split;
            for (const auto& id : ids) {
                std::string sub = cat + "." + label_of.at(id);
                out.level.assignment[id] = sub;
            }
            for (const auto& l : d.present) {
                std::string sub = cat + "." + l;
                d.result_categories.push_back(sub);
                out.level.parent_map[sub] = parent_of_split(cat, l);
            }
            out.level.parent_map.erase(cat);
        }
        out.report.decisions.push_back(std::move(d));
    }
    out.level.rebuild_categories();
    return out;
}

}  // namespace detail

struct AssetClassSplit {
    TaxonomyLevel level;                              // parent_map: category -> asset class
    std::map<std::string, std::string> asset_class;   // per ETF, after relabeling
    SplitReport report;
};

/// Makes every category map to exactly one asset class. Categories whose
/// ADDV is dominated by one class (only one share above `vtilde_star`) are
/// kept and their ETFs relabeled to that class; the rest are split into
/// "<category>.<class>" subcategories, one per class present.
inline AssetClassSplit split_categories_by_assetclass(const TaxonomyLevel& level,
                                                      const std::map<std::string, std::string>& asset_class,
                                                      const std::map<std::string, double>& addv, double vtilde_star) {
    auto res = detail::split_by_labels(
        level, asset_class, addv, vtilde_star, [](const std::string&, std::size_t) { return true; },
        [](const std::string&, const std::string& label) { return label; });
    AssetClassSplit out;
    out.asset_class = asset_class;
    out.report = std::move(res.report);
    out.level = std::move(res.level);
    for (const auto& d : out.report.decisions) {
        if (d.outcome == SplitOutcome::Unchanged || d.outcome == SplitOutcome::Kept) {
            out.level.parent_map[d.category] = d.dominant;
            if (d.outcome == SplitOutcome::Kept)
                for (const auto& [e, c] : level.assignment)
                    if (c == d.category) out.asset_class[e] = d.dominant;
        }
    }
    return out;
}

/// Default m* = floor(N / K), at least 1.
inline std::size_t default_min_split_size(const TaxonomyLevel& level) {
    const std::size_t n = level.assignment.size();
    const std::size_t k = std::max<std::size_t>(level.categories.size(), 1);
    return std::max<std::size_t>(n / k, 1);
}

inline const std::string kUnknownLabel = "unknown";

/// Splits categories of one asset class by an ETF attribute (e.g. duration
/// bucket) with the same ADDV gate as the asset-class split. Categories with
/// fewer than `min_size` members are left alone; `min_size` 0 means
/// floor(N/K). Missing labels count as "unknown".
inline LabelSplit split_by_attribute(const TaxonomyLevel& level, const std::map<std::string, std::string>& attribute,
                                     const std::string& target_asset_class, const std::map<std::string, double>& addv,
                                     double vtilde_star, std::size_t min_size = 0) {
    if (min_size == 0) min_size = default_min_split_size(level);
    std::map<std::string, std::string> labels;
    for (const auto& [e, c] : level.assignment) {
        auto it = attribute.find(e);
        labels[e] = it == attribute.end() || it->second.empty() || it->second == kMissingToken ? kUnknownLabel : it->second;
    }
    auto eligible = [&](const std::string& cat, std::size_t size) {
        auto p = level.parent_map.find(cat);
        return p != level.parent_map.end() && p->second == target_asset_class && size >= min_size;
    };
    auto parent = [&](const std::string& cat, const std::string&) { return level.parent_map.at(cat); };
    return detail::split_by_labels(level, labels, addv, vtilde_star, eligible, parent);
}

// ---------------------------------------------------------------------------
// Small-category reclassification
// ---------------------------------------------------------------------------

enum class ReclassMethod { Correlation, LargestCandidate, MergedOther };

inline std::string to_string(ReclassMethod m) {
    switch (m) {
        case ReclassMethod::Correlation: return "correlation";
        case ReclassMethod::LargestCandidate: return "largest-candidate";
        case ReclassMethod::MergedOther: return "merged-other";
    }
    return "correlation";
}

struct ReclassMove {
    std::string etf_id;
    std::string source;
    std::vector<std::string> candidates;            // P(A), sorted
    std::map<std::string, double> correlations;     // finite rho per candidate
    std::string chosen;
    ReclassMethod method = ReclassMethod::Correlation;
    Index observations = 0;
};

struct ReclassReport {
    std::vector<ReclassMove> moves;

    std::vector<std::string> lines() const {
        std::vector<std::string> out;
        for (const auto& m : moves) {
            std::ostringstream os;
            os << "reclassify " << m.etf_id << ' ' << m.source << " -> " << m.chosen << " by " << to_string(m.method);
            for (const auto& [c, r] : m.correlations) os << ' ' << c << '=' << csv::format_double(r);
            out.push_back(os.str());
        }
        return out;
    }
};

struct ReclassOptions {
    std::size_t min_size = 3;     // n*
    Index window = 252;           // trading days of correlation history
    Index min_observations = 20;  // below this the window widens, then the largest candidate wins
};

struct ReclassResult {
    TaxonomyLevel level;
    ReclassReport report;
};

/// Moves every ETF of a category smaller than n* into the same-asset-class
/// category (of size >= n*) whose average return series it correlates with
/// most. Asset classes without any such candidate have their small
/// categories merged into "<class> - Other".
inline ReclassResult reclassify_small_categories(const TaxonomyLevel& level, const ReturnsPanel& panel,
                                                 const ReclassOptions& options = {}) {
    if (level.kind != LevelKind::Binary) throw PreconditionError("reclassification needs a binary level");
    if (options.min_size == 0) throw ConfigError("n* must be at least 1");
    ReclassResult out;
    out.level = level;
    const auto members = level.members();
    auto asset_class_of = [&](const std::string& cat) {
        auto it = level.parent_map.find(cat);
        if (it == level.parent_map.end()) throw PreconditionError("category '" + cat + "' has no asset class");
        return it->second;
    };

    std::map<std::string, std::vector<std::string>> small_by_class, large_by_class;
    for (const auto& [cat, ids] : members) {
        if (ids.empty()) continue;
        (ids.size() < options.min_size ? small_by_class : large_by_class)[asset_class_of(cat)].push_back(cat);
    }
    if (small_by_class.empty()) return out;

    const CategoryReturns averages = category_average_returns(panel, level);
    const Index t_all = panel.cols();
    const Index t_win = std::min(options.window, t_all);

    for (const auto& [ac, smalls] : small_by_class) {
        auto large = large_by_class.find(ac);
        if (large == large_by_class.end()) {
            const std::string merged = other_category(ac);
            for (const auto& cat : smalls)
                for (const auto& id : members.at(cat)) {
                    out.level.assignment[id] = merged;
                    out.report.moves.push_back({id, cat, {}, {}, merged, ReclassMethod::MergedOther, 0});
                }
            out.level.parent_map[merged] = ac;
            continue;
        }
        const auto& candidates = large->second;
        for (const auto& cat : smalls) {
            for (const auto& id : members.at(cat)) {
                ReclassMove m{id, cat, candidates, {}, {}, ReclassMethod::Correlation, 0};
                auto row = panel.row_of(id);
                Index obs = 0;
                if (row) {
                    for (Index span : {t_win, t_all}) {
                        m.correlations.clear();
                        obs = 0;
                        for (const auto& b : candidates) {
                            auto brow = averages.row_of(b);
                            Vector x = panel.values.row(*row).tail(span).transpose();
                            Vector y = averages.values.row(*brow).tail(span).transpose();
                            auto c = stats::pearson_pairwise(x, y);
                            obs = std::max(obs, c.observations);
                            if (c.observations >= options.min_observations && std::isfinite(c.value))
                                m.correlations[b] = c.value;
                        }
                        if (!m.correlations.empty()) break;
                    }
                }
                m.observations = obs;
                if (!m.correlations.empty()) {
                    // candidates are sorted, so strict > keeps the first id on ties
                    double best = -std::numeric_limits<double>::infinity();
                    for (const auto& b : candidates) {
                        auto it = m.correlations.find(b);
                        if (it != m.correlations.end() && it->second > best) {
                            best = it->second;
                            m.chosen = b;
                        }
                    }
                } else {
                    m.method = ReclassMethod::LargestCandidate;
                    std::size_t most = 0;
                    for (const auto& b : candidates)
                        if (members.at(b).size() > most) {
                            most = members.at(b).size();
                            m.chosen = b;
                        }
                }
                out.level.assignment[id] = m.chosen;
                out.report.moves.push_back(std::move(m));
            }
        }
    }
    out.level.rebuild_categories();
    return out;
}

// ---------------------------------------------------------------------------
// Unclassified ETFs
// ---------------------------------------------------------------------------

struct NaAssignment {
    std::string etf_id;
    std::string category;
    std::size_t matching = 0;  // same-class members of `category` that match on attributes
    bool fallback_other = false;
};

/// Places each unclassified ETF in the category holding the most peers of
/// its asset class that agree with it on every attribute it has (cap
/// tranche, style, region, duration bucket). Ties go to the larger
/// category, then to the smallest id. No match at all gives
/// "<class> - Other".
inline std::vector<NaAssignment> assign_na_categories(const std::vector<Etf>& unclassified, const TaxonomyLevel& level,
                                                      const std::vector<Etf>& peers,
                                                      const std::map<std::string, std::string>& asset_class_of) {
    if (level.kind != LevelKind::Binary) throw PreconditionError("N/A assignment needs a binary level");
    std::map<std::string, const Etf*> peer_by_id;
    for (const auto& p : peers) peer_by_id[p.id] = &p;
    auto class_of = [&](const std::string& id) -> std::optional<std::string> {
        auto it = asset_class_of.find(id);
        if (it == asset_class_of.end() || it->second.empty()) return std::nullopt;
        return it->second;
    };
    std::vector<NaAssignment> out;
    for (const auto& etf : unclassified) {
        const auto ac = class_of(etf.id);
        std::map<std::string, std::size_t> matching, size;
        for (const auto& [peer_id, cat] : level.assignment) {
            ++size[cat];
            if (ac && class_of(peer_id) != ac) continue;
            auto p = peer_by_id.find(peer_id);
            if (p == peer_by_id.end()) continue;
            bool match = true;
            for (const auto& key : kEtfAttributeKeys) {
                auto mine = etf.attribute(key);
                if (mine && p->second->attribute(key) != mine) {
                    match = false;
                    break;
                }
            }
            if (match) ++matching[cat];
        }
        NaAssignment a;
        a.etf_id = etf.id;
        for (const auto& [cat, n] : matching) {  // sorted by id
            if (a.category.empty() || n > a.matching ||
                (n == a.matching && size[cat] > size[a.category])) {
                a.category = cat;
                a.matching = n;
            }
        }
        if (a.category.empty()) {
            a.category = other_category(ac.value_or(to_string(AssetClass::Other)));
            a.fallback_other = true;
        }
        out.push_back(std::move(a));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Build results
// ---------------------------------------------------------------------------

struct BuildResult {
    Taxonomy taxonomy;
    std::vector<std::string> report;  // one decision per line

    std::string report_text() const {
        std::string s;
        for (const auto& l : report) s += l + '\n';
        return s;
    }
};

namespace detail {

inline void record(BuildResult& r, const std::string& line) {
    char key[32];
    std::snprintf(key, sizeof(key), "decision.%05zu", r.report.size() + 1);
    r.taxonomy.metadata[key] = line;
    r.report.push_back(line);
}

/// Two-level taxonomy from a binary level-1 assignment and its parent map.
inline Taxonomy two_level(TaxonomyLevel level1) {
    level1.name = "category";
    level1.rebuild_categories();
    TaxonomyLevel top;
    top.name = "asset_class";
    top.kind = LevelKind::Binary;
    if (level1.kind == LevelKind::Binary) {
        for (const auto& [e, c] : level1.assignment) top.assignment[e] = level1.parent_map.at(c);
    } else {
        for (const auto& [e, w] : level1.weights) top.assignment[e] = level1.parent_map.at(w.begin()->first);
    }
    top.rebuild_categories();
    Taxonomy t;
    t.levels = {std::move(level1), std::move(top)};
    return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Augmenting a third-party single-level classification
// ---------------------------------------------------------------------------

struct AttributeSplitSpec {
    std::string asset_class = "Bond";
    std::string attribute = "duration_bucket";
};

struct AugmentConfig {
    double vtilde_star = 0.1;
    ReclassOptions reclass;  // n*, window
    double rstar = 0.1;
    std::optional<AttributeSplitSpec> attribute_split;
    std::size_t min_split_size = 0;  // m*, 0 = floor(N/K)
};

/// Third-party categories -> two-level binary taxonomy (category, asset
/// class): N/A assignment, asset-class split, optional attribute split,
/// then small-category reclassification on cleaned returns.
inline BuildResult augment_thirdparty(const std::vector<Etf>& etfs, const ReturnsPanel& panel,
                                      const AugmentConfig& config = {}) {
    BuildResult result;
    auto& meta = result.taxonomy.metadata;
    meta["builder"] = "augment";
    meta["param.vtilde"] = csv::format_double(config.vtilde_star);
    meta["param.nstar"] = std::to_string(config.reclass.min_size);
    meta["param.window"] = std::to_string(config.reclass.window);
    meta["param.rstar"] = csv::format_double(config.rstar);
    if (config.attribute_split) {
        meta["param.split_asset_class"] = config.attribute_split->asset_class;
        meta["param.split_attribute"] = config.attribute_split->attribute;
    }

    TaxonomyLevel level;
    level.kind = LevelKind::Binary;
    std::map<std::string, std::string> asset_class;
    std::map<std::string, double> addv;
    std::vector<Etf> unclassified;
    for (const auto& e : etfs) {
        if (e.asset_class) asset_class[e.id] = to_string(*e.asset_class);
        addv[e.id] = e.addv.value_or(0.0);
        if (e.thirdparty_category)
            level.assignment[e.id] = *e.thirdparty_category;
        else
            unclassified.push_back(e);
    }
    level.rebuild_categories();
    if (level.assignment.empty()) throw PreconditionError("no ETF carries a third-party category");

    for (const auto& a : assign_na_categories(unclassified, level, etfs, asset_class)) {
        level.assignment[a.etf_id] = a.category;
        detail::record(result, "na-assign " + a.etf_id + " -> " + a.category +
                                   (a.fallback_other ? " (no match)" : " (matching " + std::to_string(a.matching) + ")"));
    }
    level.rebuild_categories();

    // ETFs without an asset class take the most common class of their category.
    const auto members = level.members();
    for (const auto& e : etfs) {
        if (asset_class.count(e.id)) continue;
        std::map<std::string, std::size_t> votes;
        for (const auto& peer : members.at(level.assignment.at(e.id)))
            if (auto it = asset_class.find(peer); it != asset_class.end()) ++votes[it->second];
        std::string chosen = to_string(AssetClass::Other);
        std::size_t most = 0;
        for (const auto& [ac, n] : votes)
            if (n > most) {
                most = n;
                chosen = ac;
            }
        asset_class[e.id] = chosen;
        detail::record(result, "asset-class " + e.id + " -> " + chosen + " (inferred from category)");
    }

    const TaxonomyLevel pre_split = level;
    auto split = split_categories_by_assetclass(level, asset_class, addv, config.vtilde_star);
    for (const auto& l : split.report.lines("asset-class-split")) detail::record(result, l);
    level = std::move(split.level);

    if (config.attribute_split) {
        std::map<std::string, std::string> labels;
        for (const auto& e : etfs)
            if (auto v = e.attribute(config.attribute_split->attribute)) labels[e.id] = *v;
        const std::size_t mstar = config.min_split_size ? config.min_split_size : default_min_split_size(level);
        meta["param.mstar"] = std::to_string(mstar);
        auto res = split_by_attribute(level, labels, config.attribute_split->asset_class, addv, config.vtilde_star, mstar);
        for (const auto& l : res.report.lines("attribute-split")) detail::record(result, l);
        level = std::move(res.level);
    }

    PrepOptions prep;
    prep.rstar = config.rstar;
    const CleanPanel clean = preprocess_returns(panel, pre_split, prep);
    auto reclass = reclassify_small_categories(level, clean.panel, config.reclass);
    for (const auto& l : reclass.report.lines()) detail::record(result, l);
    level = std::move(reclass.level);

    auto t = detail::two_level(std::move(level));
    t.metadata = std::move(result.taxonomy.metadata);
    result.taxonomy = std::move(t);
    validate_taxonomy(result.taxonomy);
    return result;
}

// ---------------------------------------------------------------------------
// Organic construction from constituents
// ---------------------------------------------------------------------------

struct OrganicConfig {
    double wstar = 0.5;
    double tie_guard = 1e-9;
    double min_coverage = 0.5;
    std::size_t nupper = 30;  // N*: split a sector into industries above this size
    std::size_t nlower = 3;   // N_*: a split must not leave most groups below this
    bool weighted = false;    // keep multi-category weight sets at level 1
    TrancheSpec cap_tranches = TrancheSpec::cap_tranches();
    TrancheSpec duration_buckets = TrancheSpec::duration_buckets();
};

namespace detail {

struct OrganicContext {
    const HoldingsTable& holdings;
    const SecurityMaster& securities;
    const OrganicConfig& config;
    BuildResult& result;

    ThresholdedClassification classify(const std::vector<std::string>& ids, const AttributeSelector& attr,
                                       ThresholdMode mode = ThresholdMode::Binary) const {
        auto e = compute_exposures(holdings, securities, ids, attr);
        ThresholdOptions opt;
        opt.min_coverage = config.min_coverage;
        opt.guard = mode == ThresholdMode::Binary ? config.tie_guard : 0.0;
        return threshold_exposures(e, config.wstar, mode, opt);
    }

    /// Label per ETF for the given attribute, with `broad` for Broad rows.
    std::map<std::string, std::string> labels(const std::vector<std::string>& ids, const AttributeSelector& attr,
                                              const std::string& broad) const {
        std::map<std::string, std::string> out;
        for (const auto& [id, a] : classify(ids, attr).assignments) out[id] = a.label(broad);
        return out;
    }

    /// A split is accepted when it yields at least two groups, fewer than
    /// half of the groups fall below N_*, and the Broad group (if any)
    /// does not hold most of the ETFs.
    bool accept(const std::map<std::string, std::vector<std::string>>& groups, std::size_t total,
                const std::string& broad) const {
        if (groups.size() < 2) return false;
        std::size_t below = 0;
        for (const auto& [l, ids] : groups)
            if (ids.size() < config.nlower) ++below;
        if (2 * below >= groups.size()) return false;
        auto b = groups.find(broad);
        return b == groups.end() || 2 * b->second.size() < total;
    }
};

using Refiner = std::function<std::map<std::string, std::string>(const std::vector<std::string>&)>;

inline std::string tag(const std::string& s) {
    std::string out = s;
    std::replace(out.begin(), out.end(), '/', '.');
    return out;
}

/// Splits `ids` by each refiner in turn, keeping a split only when the
/// context accepts it, and assigns the resulting category names.
inline void refine(OrganicContext& ctx, const std::vector<std::string>& ids, const std::string& name,
                   const std::vector<std::pair<std::string, Refiner>>& refiners, std::size_t next,
                   std::map<std::string, std::string>& assignment) {
    if (next == refiners.size()) {
        for (const auto& id : ids) assignment[id] = name;
        return;
    }
    const auto& [what, refiner] = refiners[next];
    auto labels = refiner(ids);
    std::map<std::string, std::vector<std::string>> groups;
    for (const auto& id : ids) groups[labels.at(id)].push_back(id);
    if (!ctx.accept(groups, ids.size(), "")) {
        if (groups.size() > 1) record(ctx.result, "refine " + name + " by " + what + " rejected");
        refine(ctx, ids, name, refiners, next + 1, assignment);
        return;
    }
    record(ctx.result, "refine " + name + " by " + what + " into " + std::to_string(groups.size()) + " groups");
    for (const auto& [label, members] : groups) refine(ctx, members, name + "." + tag(label), refiners, next + 1, assignment);
}

/// Sector (depth 1) concentrated equity ETFs, recursing into deeper
/// levels of the sector path while a group holds more than N* ETFs.
inline void split_sector(OrganicContext& ctx, const std::string& path, const std::vector<std::string>& ids,
                         std::size_t depth, std::map<std::string, std::string>& assignment) {
    const std::string name = "Equity." + tag(path);
    if (ids.size() <= ctx.config.nupper) {
        for (const auto& id : ids) assignment[id] = name;
        return;
    }
    const std::string broad = "";
    auto labels = ctx.labels(ids, attributes::sector_under(path, depth + 1), broad);
    std::map<std::string, std::vector<std::string>> groups;
    for (const auto& id : ids) groups[labels.at(id)].push_back(id);
    if (!ctx.accept(groups, ids.size(), broad)) {
        record(ctx.result, "recurse " + name + " (" + std::to_string(ids.size()) + " ETFs) rejected");
        for (const auto& id : ids) assignment[id] = name;
        return;
    }
    record(ctx.result, "recurse " + name + " (" + std::to_string(ids.size()) + " ETFs) into " +
                           std::to_string(groups.size()) + " groups");
    for (const auto& [label, members] : groups) {
        if (label == broad)
            for (const auto& id : members) assignment[id] = name;
        else
            split_sector(ctx, label, members, depth + 1, assignment);
    }
}

}  // namespace detail

/// Builds a two-level taxonomy (category, asset class) from constituent
/// data alone.
inline BuildResult build_organic_taxonomy(const std::vector<Etf>& etfs, const SecurityMaster& securities,
                                          const HoldingsTable& holdings, const OrganicConfig& config = {}) {
    if (config.nlower == 0 || config.nupper < config.nlower) throw ConfigError("need 1 <= N_* <= N*");
    BuildResult result;
    auto& meta = result.taxonomy.metadata;
    meta["builder"] = "organic";
    meta["param.wstar"] = csv::format_double(config.wstar);
    meta["param.tie_guard"] = csv::format_double(config.tie_guard);
    meta["param.min_coverage"] = csv::format_double(config.min_coverage);
    meta["param.nupper"] = std::to_string(config.nupper);
    meta["param.nlower"] = std::to_string(config.nlower);
    meta["param.mode"] = config.weighted ? "weighted" : "binary";
    detail::OrganicContext ctx{holdings, securities, config, result};

    std::vector<std::string> all_ids;
    for (const auto& e : etfs) all_ids.push_back(e.id);
    const auto ac_class = ctx.classify(all_ids, attributes::asset_class());

    std::map<std::string, std::string> asset_class;   // ETF -> class name
    std::map<std::string, std::vector<std::string>> by_class;
    std::map<std::string, std::string> assignment;
    std::map<std::string, std::map<std::string, double>> weighted;
    std::vector<Etf> unrouted;
    for (const auto& e : etfs) {
        const auto& a = ac_class.assignments.at(e.id);
        const auto exposure = compute_exposures(holdings, securities, {e.id}, attributes::asset_class());
        if (exposure.coverage(0) <= 0.0) {
            if (e.asset_class) {
                const std::string ac = to_string(*e.asset_class);
                asset_class[e.id] = ac;
                assignment[e.id] = other_category(ac);
                detail::record(result, "no-coverage " + e.id + " -> " + other_category(ac));
            } else {
                unrouted.push_back(e);
            }
            continue;
        }
        const std::string ac = a.broad ? to_string(AssetClass::MultiAsset) : a.label("");
        asset_class[e.id] = ac;
        by_class[ac].push_back(e.id);
    }

    const ThresholdMode primary_mode = config.weighted ? ThresholdMode::Weighted : ThresholdMode::Binary;
    auto primary = [&](const std::string& ac, const std::vector<std::string>& ids, const AttributeSelector& attr,
                       std::vector<std::string>& broad_ids) {
        std::map<std::string, std::vector<std::string>> groups;
        for (const auto& [id, a] : ctx.classify(ids, attr, primary_mode).assignments) {
            if (a.broad) {
                broad_ids.push_back(id);
            } else if (a.weights.size() > 1) {
                for (const auto& [c, w] : a.weights) weighted[id][ac + "." + detail::tag(c)] = w;
            } else {
                groups[a.weights.begin()->first].push_back(id);
            }
        }
        return groups;
    };

    const auto cap_refiner = [&](const std::vector<std::string>& ids) {
        auto e = tranche_exposures(holdings, securities, ids, scalars::market_cap(), config.cap_tranches);
        ThresholdOptions opt{config.tie_guard, config.min_coverage};
        std::map<std::string, std::string> out;
        for (const auto& [id, a] : threshold_exposures(e, config.wstar, ThresholdMode::Binary, opt).assignments)
            out[id] = a.label("multi-cap");
        return out;
    };
    const auto style_refiner = [&](const std::vector<std::string>& ids) { return ctx.labels(ids, attributes::style(), "Blend"); };
    const auto region_refiner = [&](const std::vector<std::string>& ids) { return ctx.labels(ids, attributes::region(), "Global"); };
    const auto credit_refiner = [&](const std::vector<std::string>& ids) {
        RatingOptions opt;
        opt.method = RatingMethod::LinearScore;
        opt.coarsen = true;
        opt.renormalize_coverage = true;
        std::map<std::string, std::string> out;
        for (const auto& r : average_credit_rating(holdings, securities, ids, RatingTable::linear_coarse(), opt))
            out[r.etf_id] = r.coverage >= config.min_coverage && r.group ? *r.group : "Unrated";
        return out;
    };
    const auto duration_refiner = [&](const std::vector<std::string>& ids) {
        ThresholdOptions opt{config.tie_guard, config.min_coverage};
        auto d = average_duration(holdings, securities, ids, config.duration_buckets, config.wstar, ThresholdMode::Binary, opt);
        std::map<std::string, std::string> out;
        for (std::size_t k = 0; k < ids.size(); ++k)
            out[ids[k]] = d.exposures.coverage(static_cast<Index>(k)) > 0.0 ? d.bucket_of(ids[k]) : kUnknownLabel;
        return out;
    };

    for (const auto& [ac, ids] : by_class) {
        std::vector<std::string> broad;
        if (ac == "Equity") {
            auto groups = primary(ac, ids, attributes::sector(1), broad);
            for (const auto& [sector, members] : groups) detail::split_sector(ctx, sector, members, 1, assignment);
            detail::refine(ctx, broad, "Equity.Broad",
                           {{"cap", cap_refiner}, {"style", style_refiner}, {"region", region_refiner}}, 0, assignment);
        } else if (ac == "Bond") {
            auto groups = primary(ac, ids, attributes::sector(1), broad);
            groups["Broad"] = broad;
            for (const auto& [type, members] : groups)
                detail::refine(ctx, members, "Bond." + detail::tag(type),
                               {{"credit", credit_refiner}, {"duration", duration_refiner}}, 0, assignment);
        } else if (ac == "Commodity") {
            auto groups = primary(ac, ids, attributes::sector(1), broad);
            for (const auto& [type, members] : groups)
                for (const auto& id : members) assignment[id] = "Commodity." + detail::tag(type);
            for (const auto& id : broad) assignment[id] = "Commodity.Broad";
        } else {
            auto groups = primary(ac, ids, attributes::region(), broad);
            for (const auto& [region, members] : groups)
                for (const auto& id : members) assignment[id] = ac + "." + detail::tag(region);
            for (const auto& id : broad) assignment[id] = other_category(ac);
        }
    }

    if (!unrouted.empty()) {
        TaxonomyLevel known;
        known.assignment = assignment;
        known.rebuild_categories();
        for (const auto& a : assign_na_categories(unrouted, known, etfs, asset_class)) {
            assignment[a.etf_id] = a.category;
            std::string ac = to_string(AssetClass::Other);
            if (!a.fallback_other)
                for (const auto& [id, c] : known.assignment)
                    if (c == a.category) {
                        ac = asset_class.at(id);
                        break;
                    }
            asset_class[a.etf_id] = ac;
            detail::record(result, "na-assign " + a.etf_id + " -> " + a.category);
        }
    }

    TaxonomyLevel level;
    level.kind = weighted.empty() ? LevelKind::Binary : LevelKind::Weighted;
    if (level.kind == LevelKind::Binary) {
        level.assignment = assignment;
    } else {
        level.weights = weighted;
        for (const auto& [id, c] : assignment) level.weights[id] = {{c, 1.0}};
    }
    level.rebuild_categories();
    auto parent_of = [&](const std::string& id) { return asset_class.at(id); };
    for (const auto& [id, c] : assignment) level.parent_map[c] = parent_of(id);
    for (const auto& [id, w] : weighted)
        for (const auto& [c, x] : w) level.parent_map[c] = parent_of(id);

    auto t = detail::two_level(std::move(level));
    t.metadata = std::move(result.taxonomy.metadata);
    result.taxonomy = std::move(t);
    validate_taxonomy(result.taxonomy);
    return result;
}

}  // namespace etfrisk
