// Command-line pipeline driver. Every successful run writes a manifest of
// parameters and input/output hashes next to its output; errors print one
// "kind: message" line to stderr and exit nonzero.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "etfrisk/diagnostics.hpp"
#include "etfrisk/ingest.hpp"
#include "etfrisk/manifest.hpp"
#include "etfrisk/model_io.hpp"
#include "etfrisk/returns_prep.hpp"
#include "etfrisk/riskmodel.hpp"
#include "etfrisk/synth.hpp"
#include "etfrisk/taxonomy_builder.hpp"
#include "etfrisk/taxonomy_io.hpp"

namespace fs = std::filesystem;
using namespace etfrisk;

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;

/// Keys accepted in the config file named by RISKMODEL_CONFIG.
const std::set<std::string> kConfigKeys = {"wstar", "vtilde", "nstar", "mstar", "nupper",
                                           "nlower", "rstar", "lookback", "window", "seed"};

template <class T>
T parse_value(const std::string& key, const std::string& text) {
    if constexpr (std::is_floating_point_v<T>) {
        auto v = csv::parse_number(text);
        if (!v) throw ConfigError("parameter '" + key + "' expects a number, got '" + text + "'");
        return static_cast<T>(*v);
    } else {
        if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos)
            throw ConfigError("parameter '" + key + "' expects a non-negative integer, got '" + text + "'");
        return static_cast<T>(std::stoull(text));
    }
}

template <class T>
std::string value_text(const T& v) {
    if constexpr (std::is_floating_point_v<T>)
        return csv::format_double(static_cast<double>(v));
    else
        return std::to_string(v);
}

/// Named parameters of one subcommand: a flag each, overridable from the
/// config file, all recorded in the manifest. Flags take precedence.
class Params {
public:
    template <class T>
    void add(CLI::App* app, const std::string& key, T& target, const std::string& help) {
        CLI::Option* opt = app->add_option("--" + key, target, help)->capture_default_str();
        entries_[key] = {opt, [&target, key](const std::string& s) { target = parse_value<T>(key, s); },
                         [&target] { return value_text(target); }};
    }

    void resolve(const std::map<std::string, std::string>& config, Manifest& manifest) const {
        for (const auto& [key, e] : entries_) {
            if (e.option->count() == 0)
                if (auto it = config.find(key); it != config.end()) e.assign(it->second);
            manifest.set("param." + key, e.text());
        }
    }

private:
    struct Entry {
        CLI::Option* option = nullptr;
        std::function<void(const std::string&)> assign;
        std::function<std::string()> text;
    };
    std::map<std::string, Entry> entries_;
};

std::map<std::string, std::string> checked_config() {
    auto cfg = config_from_environment();
    for (const auto& [k, v] : cfg)
        if (!kConfigKeys.count(k)) throw ConfigError("unknown config key '" + k + "'");
    return cfg;
}

Universe load_data(const fs::path& dir, bool renormalize, Manifest& manifest) {
    const auto paths = UniversePaths::in_directory(dir);
    IngestConfig cfg;
    cfg.renormalize = renormalize;
    auto u = load_universe(paths, cfg);
    manifest.hash_input("etfs", paths.etfs);
    manifest.hash_input("securities", paths.securities);
    manifest.hash_input("holdings", paths.holdings);
    manifest.hash_input("returns", paths.returns);
    return u;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path.string());
    os << text;
}

std::map<std::string, AssetClass> asset_classes(const std::vector<Etf>& etfs) {
    std::map<std::string, AssetClass> out;
    for (const auto& e : etfs)
        if (e.asset_class) out[e.id] = *e.asset_class;
    return out;
}

/// Binary view of a level: each ETF goes to its largest weight, first id on ties.
TaxonomyLevel dominant_level(const TaxonomyLevel& level) {
    if (level.kind == LevelKind::Binary) return level;
    TaxonomyLevel out = level;
    out.kind = LevelKind::Binary;
    out.weights.clear();
    for (const auto& [e, w] : level.weights) {
        auto best = w.begin();
        for (auto it = w.begin(); it != w.end(); ++it)
            if (it->second > best->second) best = it;
        out.assignment[e] = best->first;
    }
    out.rebuild_categories();
    return out;
}

std::vector<SynthGroup> parse_groups(const std::string& text) {
    std::vector<SynthGroup> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw ConfigError("group '" + item + "' must look like AssetClass:count");
        auto ac = parse_asset_class(item.substr(0, colon));
        if (!ac) throw ConfigError("unknown asset class '" + item.substr(0, colon) + "'");
        out.push_back({*ac, parse_value<std::size_t>("groups", item.substr(colon + 1))});
    }
    if (out.empty()) throw ConfigError("no groups given");
    return out;
}

std::map<std::string, double> load_style(const std::string& path) {
    auto t = csv::read_file(path);
    csv::require_header(t, {"etf_id", "value"});
    std::map<std::string, double> out;
    for (const auto& r : t.rows) {
        auto v = csv::parse_number(r.fields[1]);
        if (!v) throw InputError(path, r.line, "value", "not a number");
        if (!out.emplace(r.fields[0], *v).second) throw InputError(path, r.line, "etf_id", "duplicate id");
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ETF taxonomy and risk model pipeline"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    // Parameter storage shared by all subcommands.
    double wstar = 0.5, vtilde = 0.1, rstar = 0.1;
    std::size_t nstar = 3, mstar = 0, nupper = 30, nlower = 3, window = 252, lookback = kLongLookback;
    std::uint64_t seed = 1;

    std::string data_dir, out_path, taxonomy_path, returns_path, model_dir, style_path, log_path, split_spec;
    bool renormalize = false, weighted = false, general = false, heterotic = false, no_pc = false;
    SynthSpec synth;
    std::string groups_text = "Equity:2";

    std::map<const CLI::App*, Params> params;
    std::map<const CLI::App*, std::function<void(Manifest&)>> actions;

    auto add_common_data = [&](CLI::App* c) {
        c->add_option("--data", data_dir, "Directory with etfs.csv, securities.csv, holdings.csv, returns.csv")
            ->required()
            ->check(CLI::ExistingDirectory);
        c->add_flag("--renormalize", renormalize, "Rescale holdings rows that do not sum to 1");
    };

    // synth generate
    auto* synth_cmd = app.add_subcommand("synth", "Synthetic universes")->require_subcommand(1);
    auto* synth_gen = synth_cmd->add_subcommand("generate", "Write a seeded synthetic universe");
    synth_gen->add_option("--out", out_path, "Output directory")->required();
    synth_gen->add_option("--etfs", synth.n_etfs, "Number of ETFs")->capture_default_str();
    synth_gen->add_option("--days", synth.days, "Number of business days")->capture_default_str();
    synth_gen->add_option("--groups", groups_text, "Planted blocks, e.g. Equity:2,Bond:3")->capture_default_str();
    synth_gen->add_option("--rho-within", synth.rho_within, "Correlation within a category")->capture_default_str();
    synth_gen->add_option("--rho-group", synth.rho_group, "Correlation within a group")->capture_default_str();
    synth_gen->add_option("--rho-across", synth.rho_across, "Correlation across groups")->capture_default_str();
    synth_gen->add_option("--missing-rate", synth.missing_rate, "Fraction of missing return cells")->capture_default_str();
    synth_gen->add_option("--purity", synth.purity, "Holdings weight in the own category")->capture_default_str();
    params[synth_gen].add(synth_gen, "seed", seed, "Random seed");
    actions[synth_gen] = [&](Manifest& m) {
        synth.seed = seed;
        synth.groups = parse_groups(groups_text);
        m.set("param.etfs", std::to_string(synth.n_etfs));
        m.set("param.days", std::to_string(synth.days));
        m.set("param.groups", groups_text);
        m.set("param.rho_within", csv::format_double(synth.rho_within));
        m.set("param.rho_group", csv::format_double(synth.rho_group));
        m.set("param.rho_across", csv::format_double(synth.rho_across));
        m.set("param.missing_rate", csv::format_double(synth.missing_rate));
        m.set("param.purity", csv::format_double(synth.purity));
        const fs::path dir = out_path;
        write_synthetic_universe(generate_synthetic_universe(synth), dir);
        for (const char* f : {"etfs.csv", "securities.csv", "holdings.csv", "returns.csv", "planted_taxonomy.txt"})
            m.set(std::string("output.") + f, file_hash(dir / f));
        m.write(dir / "manifest.txt");
    };

    // taxonomy organic | augment
    auto* tax_cmd = app.add_subcommand("taxonomy", "Build a taxonomy")->require_subcommand(1);
    auto* organic = tax_cmd->add_subcommand("organic", "Build from constituent holdings");
    add_common_data(organic);
    organic->add_option("--out", out_path, "Output taxonomy file")->required();
    organic->add_flag("--weighted", weighted, "Keep multi-category weights at the category level");
    params[organic].add(organic, "wstar", wstar, "Exposure threshold W*");
    params[organic].add(organic, "nupper", nupper, "Split a sector into industries above this many ETFs (N*)");
    params[organic].add(organic, "nlower", nlower, "Smallest acceptable group size (N_*)");
    actions[organic] = [&](Manifest& m) {
        auto u = load_data(data_dir, renormalize, m);
        OrganicConfig cfg;
        cfg.wstar = wstar;
        cfg.nupper = nupper;
        cfg.nlower = nlower;
        cfg.weighted = weighted;
        m.set("param.weighted", weighted ? "true" : "false");
        auto built = build_organic_taxonomy(u.etfs, u.securities, u.holdings, cfg);
        save_taxonomy(built.taxonomy, out_path);
        m.set("output.taxonomy", file_hash(out_path));
        m.write(out_path + ".manifest.txt");
    };

    auto* augment = tax_cmd->add_subcommand("augment", "Augment the third-party classification");
    add_common_data(augment);
    augment->add_option("--out", out_path, "Output taxonomy file")->required();
    augment->add_option("--split", split_spec, "Attribute split as AssetClass:attribute, e.g. Bond:duration_bucket");
    params[augment].add(augment, "vtilde", vtilde, "Asset-class share threshold for splitting a category");
    params[augment].add(augment, "nstar", nstar, "Categories smaller than this are reclassified (n*)");
    params[augment].add(augment, "window", window, "Correlation window in days");
    params[augment].add(augment, "rstar", rstar, "Absolute return clip R*");
    params[augment].add(augment, "mstar", mstar, "Minimum attribute split size m* (0 = floor(N/K))");
    actions[augment] = [&](Manifest& m) {
        auto u = load_data(data_dir, renormalize, m);
        AugmentConfig cfg;
        cfg.vtilde_star = vtilde;
        cfg.reclass.min_size = nstar;
        cfg.reclass.window = static_cast<Index>(window);
        cfg.rstar = rstar;
        cfg.min_split_size = mstar;
        if (!split_spec.empty()) {
            const auto colon = split_spec.find(':');
            if (colon == std::string::npos) throw ConfigError("--split must look like AssetClass:attribute");
            cfg.attribute_split = AttributeSplitSpec{split_spec.substr(0, colon), split_spec.substr(colon + 1)};
            m.set("param.split", split_spec);
        }
        auto built = augment_thirdparty(u.etfs, u.returns, cfg);
        save_taxonomy(built.taxonomy, out_path);
        m.set("output.taxonomy", file_hash(out_path));
        m.write(out_path + ".manifest.txt");
    };

    // returns prep
    auto* ret_cmd = app.add_subcommand("returns", "Returns processing")->require_subcommand(1);
    auto* prep = ret_cmd->add_subcommand("prep", "Clip, fill and drop returns");
    add_common_data(prep);
    prep->add_option("--taxonomy", taxonomy_path, "Taxonomy whose first level supplies fill categories")
        ->required()
        ->check(CLI::ExistingFile);
    prep->add_option("--out", out_path, "Output returns CSV")->required();
    prep->add_option("--log", log_path, "Fill log CSV (default: <out>.log.csv)");
    params[prep].add(prep, "rstar", rstar, "Absolute return clip R*");
    params[prep].add(prep, "lookback", lookback, "Keep the last this many days (0 = all)");
    actions[prep] = [&](Manifest& m) {
        auto u = load_data(data_dir, renormalize, m);
        const auto tax = load_taxonomy(taxonomy_path);
        m.hash_input("taxonomy", taxonomy_path);
        PrepOptions opt;
        opt.rstar = rstar;
        opt.lookback = static_cast<Index>(lookback);
        auto clean = preprocess_returns(u.returns, dominant_level(tax.levels.front()), opt, asset_classes(u.etfs));
        std::ostringstream ret, log;
        write_returns(clean.complete(), ret);
        clean.write_log_csv(log);
        if (log_path.empty()) log_path = out_path + ".log.csv";
        write_text(out_path, ret.str());
        write_text(log_path, log.str());
        m.set("output.returns", file_hash(out_path));
        m.set("output.log", file_hash(log_path));
        m.write(out_path + ".manifest.txt");
    };

    // model build | invert
    auto* model_cmd = app.add_subcommand("model", "Risk models")->require_subcommand(1);
    auto* build = model_cmd->add_subcommand("build", "Build a risk model");
    add_common_data(build);
    build->add_option("--taxonomy", taxonomy_path, "Taxonomy file")->required()->check(CLI::ExistingFile);
    build->add_option("--returns", returns_path, "Returns CSV to use instead of <data>/returns.csv")
        ->check(CLI::ExistingFile);
    build->add_option("--out", out_path, "Output model directory")->required();
    auto* het_flag = build->add_flag("--heterotic", heterotic, "Block principal-component loadings (default)");
    build->add_flag("--general", general, "Loadings equal to the category exposures")->excludes(het_flag);
    build->add_flag("--no-pc", no_pc, "Indicator loadings instead of block principal components");
    params[build].add(build, "lookback", lookback, "Estimation window in days (0 = all)");
    params[build].add(build, "rstar", rstar, "Absolute return clip R*");
    actions[build] = [&](Manifest& m) {
        auto u = load_data(data_dir, renormalize, m);
        if (!returns_path.empty()) {
            ValidationReport report;
            u.returns = load_returns(returns_path, u.etfs, report);
            m.hash_input("returns_override", returns_path);
        }
        const auto tax = load_taxonomy(taxonomy_path);
        m.hash_input("taxonomy", taxonomy_path);
        m.set("param.method", general ? "general" : "heterotic");
        m.set("param.principal_components", no_pc ? "false" : "true");

        PrepOptions opt;
        opt.rstar = rstar;
        opt.lookback = static_cast<Index>(lookback);
        const auto clean = preprocess_returns(u.returns, dominant_level(tax.levels.front()), opt, asset_classes(u.etfs));
        const ReturnsPanel panel = clean.complete();

        RiskModel model;
        if (general) {
            GeneralOptions g;
            g.lookback = 0;
            if (tax.levels.size() > 1) g.factor_parents = tax.levels.front().parent_map;
            model = build_general(exposure_from_level(tax.levels.front()), panel, g);
        } else {
            model = build_heterotic(tax, panel, {0, !no_pc});
        }
        model.lookback = panel.cols();
        write_model(model, out_path);
        std::string log;
        for (const auto& id : clean.dropped) log += "dropped " + id + ": unfillable returns\n";
        for (const auto& line : model.log) log += line + '\n';
        write_text(fs::path(out_path) / "build_log.txt", log);
        std::ostringstream fills;
        clean.write_log_csv(fills);
        write_text(fs::path(out_path) / "fill_log.csv", fills.str());
        for (const char* f : {"loadings.csv", "factor_cov.csv", "specific.csv", "factors.csv", "build_log.txt",
                              "fill_log.csv"})
            m.set(std::string("output.") + f, file_hash(fs::path(out_path) / f));
        m.write(fs::path(out_path) / "manifest.txt");
    };

    auto* invert = model_cmd->add_subcommand("invert", "Write the inverse model covariance");
    invert->add_option("--model", model_dir, "Model directory")->required()->check(CLI::ExistingDirectory);
    invert->add_option("--out", out_path, "Output CSV (etf_id, then one column per ETF)")->required();
    actions[invert] = [&](Manifest& m) {
        const auto model = read_model(model_dir);
        for (const char* f : {"loadings.csv", "factor_cov.csv", "specific.csv", "factors.csv"})
            m.hash_input(f, fs::path(model_dir) / f);
        const auto inv = invert_model(model);
        if (inv.near_degenerate)
            std::cerr << "warning: " << inv.floored << " of " << model.size()
                      << " specific variances at the floor; model nearly degenerate\n";
        std::ostringstream os;
        os << "etf_id";
        for (const auto& id : model.etf_ids) os << ',' << csv::quote(id);
        os << '\n';
        for (Index i = 0; i < model.size(); ++i) {
            os << csv::quote(model.etf_ids[static_cast<std::size_t>(i)]);
            for (Index j = 0; j < model.size(); ++j) os << ',' << csv::format_double(inv.inverse(i, j));
            os << '\n';
        }
        write_text(out_path, os.str());
        m.set("output.inverse", file_hash(out_path));
        m.set("result.floored", std::to_string(inv.floored));
        m.write(out_path + ".manifest.txt");
    };

    // diagnose style
    auto* diag_cmd = app.add_subcommand("diagnose", "Model diagnostics")->require_subcommand(1);
    auto* style = diag_cmd->add_subcommand("style", "Regress model correlations on a style factor");
    style->add_option("--model", model_dir, "Model directory")->required()->check(CLI::ExistingDirectory);
    style->add_option("--style", style_path, "CSV with columns etf_id,value")->required()->check(CLI::ExistingFile);
    style->add_option("--out", out_path, "Output report (key=value lines)")->required();
    actions[style] = [&](Manifest& m) {
        const auto model = read_model(model_dir);
        for (const char* f : {"loadings.csv", "factor_cov.csv", "specific.csv", "factors.csv"})
            m.hash_input(f, fs::path(model_dir) / f);
        m.hash_input("style", style_path);
        const auto values = load_style(style_path);
        Vector beta(model.size());
        for (Index i = 0; i < model.size(); ++i) {
            const auto& id = model.etf_ids[static_cast<std::size_t>(i)];
            auto it = values.find(id);
            if (it == values.end()) throw InputError(style_path, 0, "etf_id", "no style value for '" + id + "'");
            beta(i) = it->second;
        }
        const auto r = style_factor_diagnostic(model.correlation_matrix(), beta);
        std::string dropped;
        for (const auto& d : r.dropped) dropped += (dropped.empty() ? "" : ";") + d;
        auto num = [](double v) { return std::isnan(v) ? std::string(kMissingToken) : csv::format_double(v); };
        std::ostringstream os;
        os << "n_pairs=" << r.n_pairs << '\n'
           << "intercept=" << num(r.intercept) << '\n'
           << "coef_y=" << num(r.coef_y) << '\n'
           << "coef_z=" << num(r.coef_z) << '\n'
           << "r_squared=" << num(r.r_squared) << '\n'
           << "mean_correlation=" << num(r.mean_correlation) << '\n'
           << "dropped=" << dropped << '\n';
        write_text(out_path, os.str());
        m.set("output.report", file_hash(out_path));
        m.write(out_path + ".manifest.txt");
    };

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        const auto config = checked_config();
        for (auto& [cmd, action] : actions) {
            if (!cmd->parsed()) continue;
            Manifest manifest;
            manifest.set("command", cmd->get_parent()->get_name() + " " + cmd->get_name());
            if (auto it = params.find(cmd); it != params.end()) it->second.resolve(config, manifest);
            action(manifest);
        }
    } catch (const Error& e) {
        std::cerr << e.kind() << ": " << e.what() << '\n';
        return kExitError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitError;
    }
    return 0;
}
