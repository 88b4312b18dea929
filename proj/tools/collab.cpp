// collab: command-line front end for the collaboration-scaling pipeline.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "collab/error.hpp"
#include "collab/io.hpp"
#include "collab/pipeline.hpp"
#include "collab/synth.hpp"

namespace fs = std::filesystem;

namespace {

struct Globals {
    std::string config;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> mode;
    std::optional<int> window_months;
    std::optional<std::string> input_dir;
    std::optional<std::string> events, projects, users, bots, format;
};

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<double> parse_doubles(const std::string& text) {
    std::vector<double> out;
    for (const auto& s : split_list(text)) out.push_back(collab::parse_number(s));
    return out;
}

collab::RunConfig resolve(const Globals& g) {
    collab::RunConfig c;
    if (!g.config.empty()) {
        if (!fs::exists(g.config)) throw collab::InputError("config not found: " + g.config);
        c = collab::load_run_config(g.config);
    }
    if (g.mode) c.mode = collab::parse_mode(*g.mode);
    if (g.out) c.out = *g.out;
    if (g.seed) c.seed = *g.seed;
    if (g.window_months) c.window_months = *g.window_months;
    if (g.input_dir) {
        const fs::path d = *g.input_dir;
        c.events = (d / "events.csv").string();
        c.projects = (d / "projects.csv").string();
        c.users = (d / "users.csv").string();
        c.bots = fs::exists(d / "bots.txt") ? (d / "bots.txt").string() : "";
    }
    if (g.events) c.events = *g.events;
    if (g.projects) c.projects = *g.projects;
    if (g.users) c.users = *g.users;
    if (g.bots) c.bots = *g.bots;
    if (g.format) c.event_format = collab::parse_event_format(*g.format);
    if (c.window_months < 1) throw collab::InputError("--window-months must be at least 1");
    return c;
}

void print_truth(const collab::TruthReport& report) {
    for (const auto& r : report.rows) {
        std::cout << fmt::format("{:<16} planted={:<14.8g} recovered={:<14.8g} tol={:<12.4g} {}\n", r.parameter,
                                 r.planted, r.recovered, r.tolerance, r.pass ? "PASS" : "FAIL");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Collaboration scaling analysis"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "JSON configuration (synth: generator config)");
    app.add_option("--out", g.out, "Output directory");
    app.add_option("--seed", g.seed, "Root random seed");
    app.add_option("--mode", g.mode, "github or wikipedia");
    app.add_option("--window-months", g.window_months, "Analysis window after project creation, months");
    app.add_option("--input-dir", g.input_dir, "Directory holding events.csv, projects.csv, users.csv, bots.txt");
    app.add_option("--events", g.events, "Event log");
    app.add_option("--projects", g.projects, "Project profiles CSV");
    app.add_option("--users", g.users, "User profiles CSV");
    app.add_option("--bots", g.bots, "Bot exclusion list");
    app.add_option("--format", g.format, "Event log format: csv or jsonl");

    auto* ingest = app.add_subcommand("ingest", "Parse, exclude and window the event log");
    auto* metrics = app.add_subcommand("metrics", "Groups and membership rows");
    auto* powerlaw = app.add_subcommand("fit-powerlaw", "Mean work vs group size power law");

    auto* ols = app.add_subcommand("ols", "Group- and user-level least squares");
    std::string ols_response, ols_features;
    std::optional<double> prune, ols_pct;
    bool no_outliers = false;
    ols->add_option("--response", ols_response, "Response for the user-level model (w)");
    ols->add_option("--features", ols_features, "Comma-separated user-level predictors");
    ols->add_option("--prune-threshold", prune, "Absolute correlation above which predictors are dropped");
    ols->add_option("--outlier-percentile", ols_pct, "Drop responses above this percentile");
    ols->add_flag("--no-outlier-filter", no_outliers, "Keep every row");

    auto* lme = app.add_subcommand("lme", "Binned random-intercept models");
    std::string group_by, lme_fixed, lme_response;
    std::optional<std::size_t> bins;
    lme->add_option("--group-by", group_by, "Comma-separated: n_projects, user_work, followers, user_id");
    lme->add_option("--bins", bins, "Quantile bins");
    lme->add_option("--fixed", lme_fixed, "Comma-separated fixed effects, group size first");
    lme->add_option("--response", lme_response, "Response column (only w is supported)");

    auto* chained = app.add_subcommand("chained", "Mixed models over overlapping size ranges");
    std::optional<int> span, stride;
    chained->add_option("--span", span, "Sizes per range");
    chained->add_option("--stride", stride, "Step between range starts");

    auto* unify_cmd = app.add_subcommand("unify", "Stitch chained fits into one curve");
    std::optional<double> wb1;
    unify_cmd->add_option("--wb1", wb1, "Base value at the lowest size");

    auto* s3d = app.add_subcommand("s3d", "Sum-of-squares decomposition feature selection");
    std::optional<std::size_t> max_features, folds;
    std::string lambda_grid;
    s3d->add_option("--max-features", max_features, "Features to select");
    s3d->add_option("--lambda-grid", lambda_grid, "Comma-separated penalties");
    s3d->add_option("--folds", folds, "Cross-validation folds");

    auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with planted parameters");

    auto* sweep = app.add_subcommand("sweep", "Time-window sensitivity analysis");
    std::string windows;
    sweep->add_option("--windows", windows, "Comma-separated window lengths in months")->required();

    auto* run = app.add_subcommand("run", "Run every stage");
    bool svg = false;
    run->add_flag("--svg", svg, "Also write SVG charts");

    auto* plots = app.add_subcommand("plots", "Plot data from existing artifacts");
    plots->add_flag("--svg", svg, "Also write SVG charts");

    auto* truth = app.add_subcommand("truth-check", "Compare a run against synthetic truth");
    std::string truth_path, run_dir;
    truth->add_option("--truth", truth_path, "truth.json")->required();
    truth->add_option("--run", run_dir, "Pipeline output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) {
            collab::SynthConfig sc;
            if (!g.config.empty()) {
                if (!fs::exists(g.config)) throw collab::InputError("config not found: " + g.config);
                try {
                    sc = nlohmann::json::parse(collab::read_text_file(g.config)).get<collab::SynthConfig>();
                } catch (const nlohmann::json::exception& e) {
                    throw collab::InputError("bad synth config " + g.config + ": " + e.what());
                }
            } else if (g.mode) {
                sc = collab::SynthConfig::for_mode(collab::parse_mode(*g.mode));
            }
            if (g.seed) sc.seed = *g.seed;
            const auto corpus = collab::generate(sc);
            const fs::path out = g.out.value_or("synth");
            collab::write_corpus(corpus, out);
            std::cout << fmt::format("wrote {} events, {} projects, {} users to {}\n", corpus.events.size(),
                                     corpus.projects.size(), corpus.users.size(), out.string());
            return 0;
        }
        if (truth->parsed()) {
            const auto t = collab::load_truth(truth_path);
            const auto report = collab::truth_check(t, collab::load_pipeline_outputs(run_dir));
            print_truth(report);
            return report.all_pass() ? 0 : 1;
        }

        collab::RunConfig c = resolve(g);
        if (ols->parsed()) {
            if (!ols_response.empty() && ols_response != "w") {
                throw collab::InputError("user-level OLS response must be w");
            }
            if (!ols_features.empty()) c.user_ols_features = split_list(ols_features);
            if (prune) c.prune_threshold = *prune;
            if (ols_pct) c.ols_outlier_percentile = *ols_pct;
            if (no_outliers) c.ols_outlier_percentile.reset();
            collab::stage_ols(c);
        } else if (lme->parsed()) {
            if (!lme_response.empty() && lme_response != "w") throw collab::InputError("LME response must be w");
            if (!group_by.empty()) c.lme_binnings = split_list(group_by);
            if (bins) c.lme_bins = *bins;
            if (!lme_fixed.empty()) c.lme_fixed = split_list(lme_fixed);
            collab::stage_lme(c);
        } else if (chained->parsed()) {
            auto spec = c.range_spec();
            if (span) spec.span = *span;
            if (stride) spec.stride = *stride;
            c.ranges = spec;
            collab::stage_chained(c);
        } else if (unify_cmd->parsed()) {
            if (wb1) c.wb1 = *wb1;
            collab::stage_unify(c);
        } else if (s3d->parsed()) {
            if (max_features) c.s3d_max_features = *max_features;
            if (!lambda_grid.empty()) c.lambda_grid = parse_doubles(lambda_grid);
            if (folds) c.s3d_folds = *folds;
            collab::stage_s3d(c);
        } else if (ingest->parsed()) {
            collab::stage_ingest(c);
        } else if (metrics->parsed()) {
            collab::stage_metrics(c);
        } else if (powerlaw->parsed()) {
            collab::stage_scaling(c);
        } else if (sweep->parsed()) {
            std::vector<int> ts;
            for (const auto& s : split_list(windows)) ts.push_back(static_cast<int>(collab::parse_number(s)));
            const auto report = collab::sweep_windows(c, ts);
            collab::write_sweep(report, c.out, collab::config_hash(c));
            for (const auto& r : report.ratios) {
                std::cout << fmt::format("t={}->{} forward={:.6g} backward={:.6g} events={:.6g}\n", r.t_from, r.t_to,
                                         r.forward, r.backward, r.event_ratio);
            }
            std::cout << fmt::format("z={:.6g}\n", report.z);
        } else if (run->parsed()) {
            if (svg) c.svg = true;
            const auto result = collab::run_pipeline(c);
            std::cout << fmt::format("{} artifacts in {} (config {})\n", result.artifacts.size(),
                                     result.out.string(), result.config_hash);
        } else if (plots->parsed()) {
            for (const auto& f : collab::emit_plots(c.out, svg || c.svg, collab::config_hash(c))) {
                std::cout << f << "\n";
            }
        }
    } catch (const collab::InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const collab::StageError& e) {
        std::cerr << "stage " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
