#include "collab/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <boost/math/tools/minima.hpp>
#include <fmt/format.h>

#include "collab/csv.hpp"
#include "collab/io.hpp"
#include "collab/ols.hpp"
#include "collab/scaling.hpp"
#include "collab/stats.hpp"

namespace collab {

namespace fs = std::filesystem;
using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

RangeSpec RunConfig::range_spec() const { return ranges ? *ranges : RangeSpec::for_mode(mode); }

std::int64_t RunConfig::effective_size_cap() const {
    return size_cap > 0 ? size_cap : GroupOptions::for_mode(mode).size_cap;
}

namespace {

template <class T>
void read_opt(const json& j, const char* key, T& out) {
    if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

template <class T>
void read_optional(const json& j, const char* key, std::optional<T>& out) {
    if (auto it = j.find(key); it != j.end()) {
        if (it->is_null()) {
            out.reset();
        } else {
            out = it->get<T>();
        }
    }
}

template <class T>
json opt_json(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

json range_json(const RangeSpec& r) { return {{"span", r.span}, {"stride", r.stride}, {"lo", r.lo}, {"hi", r.hi}}; }

RangeSpec range_from(const json& j, RangeSpec base) {
    read_opt(j, "span", base.span);
    read_opt(j, "stride", base.stride);
    read_opt(j, "lo", base.lo);
    read_opt(j, "hi", base.hi);
    return base;
}

}  // namespace

void to_json(json& j, const RunConfig& c) {
    j = json{{"events", c.events},
             {"projects", c.projects},
             {"users", c.users},
             {"bots", c.bots},
             {"event_format", c.event_format == EventFormat::csv ? "csv" : "jsonl"},
             {"mode", to_string(c.mode)},
             {"window_months", c.window_months},
             {"out", c.out},
             {"seed", c.seed},
             {"max_malformed_fraction", c.max_malformed_fraction},
             {"fatal_unknown_projects", c.fatal_unknown_projects},
             {"size_cap", c.size_cap},
             {"prune_threshold", c.prune_threshold},
             {"ols_outlier_percentile", opt_json(c.ols_outlier_percentile)},
             {"scale_response", c.scale_response},
             {"group_ols_features", c.group_ols_features},
             {"user_ols_features", c.user_ols_features},
             {"lme_fixed", c.lme_fixed},
             {"lme_binnings", c.lme_binnings},
             {"lme_bins", c.lme_bins},
             {"lme_outlier_percentile", opt_json(c.lme_outlier_percentile)},
             {"criterion", to_string(c.criterion)},
             {"ranges", c.ranges ? range_json(*c.ranges) : json(nullptr)},
             {"chained_outlier_percentile", opt_json(c.chained_outlier_percentile)},
             {"chained_fixed", opt_json(c.chained_fixed)},
             {"wb1", opt_json(c.wb1)},
             {"s3d_max_features", c.s3d_max_features},
             {"lambda_grid", c.lambda_grid},
             {"s3d_folds", c.s3d_folds},
             {"s3d_features", c.s3d_features},
             {"svg", c.svg},
             {"windows", c.windows}};
}

void from_json(const json& j, RunConfig& c) {
    c = RunConfig{};
    read_opt(j, "events", c.events);
    read_opt(j, "projects", c.projects);
    read_opt(j, "users", c.users);
    read_opt(j, "bots", c.bots);
    if (auto it = j.find("event_format"); it != j.end()) c.event_format = parse_event_format(it->get<std::string>());
    if (auto it = j.find("mode"); it != j.end()) c.mode = parse_mode(it->get<std::string>());
    read_opt(j, "window_months", c.window_months);
    read_opt(j, "out", c.out);
    read_opt(j, "seed", c.seed);
    read_opt(j, "max_malformed_fraction", c.max_malformed_fraction);
    read_opt(j, "fatal_unknown_projects", c.fatal_unknown_projects);
    read_opt(j, "size_cap", c.size_cap);
    read_opt(j, "prune_threshold", c.prune_threshold);
    read_optional(j, "ols_outlier_percentile", c.ols_outlier_percentile);
    read_opt(j, "scale_response", c.scale_response);
    read_opt(j, "group_ols_features", c.group_ols_features);
    read_opt(j, "user_ols_features", c.user_ols_features);
    read_opt(j, "lme_fixed", c.lme_fixed);
    read_opt(j, "lme_binnings", c.lme_binnings);
    read_opt(j, "lme_bins", c.lme_bins);
    read_optional(j, "lme_outlier_percentile", c.lme_outlier_percentile);
    if (auto it = j.find("criterion"); it != j.end()) c.criterion = parse_criterion(it->get<std::string>());
    if (auto it = j.find("ranges"); it != j.end() && !it->is_null()) {
        c.ranges = range_from(*it, RangeSpec::for_mode(c.mode));
    }
    read_optional(j, "chained_outlier_percentile", c.chained_outlier_percentile);
    read_optional(j, "chained_fixed", c.chained_fixed);
    read_optional(j, "wb1", c.wb1);
    read_opt(j, "s3d_max_features", c.s3d_max_features);
    read_opt(j, "lambda_grid", c.lambda_grid);
    read_opt(j, "s3d_folds", c.s3d_folds);
    read_opt(j, "s3d_features", c.s3d_features);
    read_opt(j, "svg", c.svg);
    read_opt(j, "windows", c.windows);
}

RunConfig load_run_config(const fs::path& path) {
    try {
        return json::parse(read_text_file(path)).get<RunConfig>();
    } catch (const json::exception& e) {
        throw InputError("bad config " + path.string() + ": " + e.what());
    }
}

// Where the artifacts land is not part of the analysis, so it stays out of the hash.
std::string config_hash(const RunConfig& config) {
    json j = config;
    j.erase("out");
    return hex64(fnv1a64(j.dump()));
}

namespace {

const std::vector<std::string>& default_group_ols_features(Mode mode) {
    static const std::vector<std::string> github = {"group_size",     "forks",           "watchers",       "project_age",
                                                    "effective_size", "mean_n_projects", "aggregate_focus"};
    static const std::vector<std::string> wikipedia = {"group_size", "project_age", "mean_n_projects",
                                                       "aggregate_focus"};
    return mode == Mode::wikipedia ? wikipedia : github;
}

const std::vector<std::string>& default_user_ols_features(Mode mode) {
    static const std::vector<std::string> github = {"effective_size", "watchers",   "group_size", "project_age",
                                                    "aggregate_focus", "n_projects", "followers",  "owned_repos"};
    static const std::vector<std::string> wikipedia = {"effective_size", "n_projects",  "group_work",
                                                       "n_max",          "created_pages", "project_age",
                                                       "n_mean",         "group_size"};
    return mode == Mode::wikipedia ? wikipedia : github;
}

std::vector<std::string> default_binnings(Mode mode) {
    if (mode == Mode::wikipedia) return {"n_projects", "user_work", "user_id"};
    return {"n_projects", "user_work", "followers", "user_id"};
}

std::string csv_with_hash(const std::string& hash, const std::string& body) {
    return "# config_hash=" + hash + "\n" + body;
}

void write_json(const fs::path& path, ordered_json j, const std::string& hash) {
    j["config_hash"] = hash;
    write_file_atomic(path, j.dump(2) + "\n");
}

ordered_json read_json(const fs::path& path) {
    if (!fs::exists(path)) throw InputError("missing artifact: " + path.string());
    try {
        return ordered_json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw InputError("bad JSON in " + path.string() + ": " + e.what());
    }
}

fs::path out_dir(const RunConfig& c) {
    fs::create_directories(c.out);
    return fs::path(c.out);
}

std::vector<UserProjectRow> load_analysis_rows(const RunConfig& c) {
    const auto path = fs::path(c.out) / "rows.csv";
    if (!fs::exists(path)) throw InputError("missing artifact: " + path.string());
    auto rows = load_rows(path);
    std::erase_if(rows, [](const UserProjectRow& r) { return r.over_cap; });
    return rows;
}

// Group records rebuilt from membership rows.
std::vector<GroupRecord> groups_from_rows(std::span<const UserProjectRow> rows) {
    std::map<std::string, GroupRecord> by_project;
    for (const auto& r : rows) {
        auto& g = by_project[r.project_id];
        g.project_id = r.project_id;
        g.member_work[r.user_id] += static_cast<std::int64_t>(std::llround(r.w));
        g.over_cap = r.over_cap;
    }
    std::vector<GroupRecord> out;
    for (auto& [id, g] : by_project) {
        g.size = static_cast<std::int64_t>(g.member_work.size());
        for (const auto& [u, w] : g.member_work) g.total_work += w;
        g.mean_work = static_cast<double>(g.total_work) / static_cast<double>(g.size);
        g.effective_size = effective_group_size(g.member_work);
        out.push_back(std::move(g));
    }
    return out;
}

ordered_json coefficients_json(std::span<const Coefficient> coefs) {
    ordered_json arr = ordered_json::array();
    for (const auto& c : coefs) {
        arr.push_back({{"variable", c.name},
                       {"notation", c.name == "intercept" ? "" : feature_notation(c.name)},
                       {"beta", c.estimate},
                       {"std_err", c.std_error},
                       {"statistic", c.statistic},
                       {"p_value", c.p_value}});
    }
    return arr;
}

ordered_json lme_json(const LmeFit& f) {
    return {{"grouping", f.grouping},
            {"criterion", to_string(f.criterion)},
            {"fixed", coefficients_json(f.fixed)},
            {"random_variance", f.random_variance},
            {"residual_variance", f.residual_variance},
            {"theta", f.theta},
            {"log_likelihood", f.log_likelihood},
            {"n_obs", f.n_obs},
            {"n_groups", f.n_groups},
            {"at_boundary", f.at_boundary}};
}

template <class F>
void run_stage(const char* name, F&& f) {
    try {
        f();
    } catch (const InputError&) {
        throw;
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

struct Inputs {
    std::vector<ContributionEvent> events;
    std::vector<MalformedRow> malformed;
    std::vector<ProjectProfile> projects;
    std::vector<UserProfile> users;
};

Inputs load_inputs(const RunConfig& c) {
    for (const auto& [label, path] : {std::pair{"events", c.events}, {"projects", c.projects}, {"users", c.users}}) {
        if (path.empty()) throw InputError(std::string("no ") + label + " input given");
        if (!fs::exists(path)) throw InputError("input not found: " + path);
    }
    if (!c.bots.empty() && !fs::exists(c.bots)) throw InputError("input not found: " + c.bots);
    Inputs in;
    LoadOptions lo;
    lo.max_malformed_fraction = c.max_malformed_fraction;
    auto loaded = load_events(c.events, c.event_format, lo);
    in.events = std::move(loaded.events);
    in.malformed = std::move(loaded.malformed);
    if (!c.bots.empty()) mark_bots(in.events, load_id_list(c.bots));
    in.projects = load_project_profiles(c.projects);
    in.users = load_user_profiles(c.users);
    return in;
}

struct WindowedRows {
    WindowResult window;
    std::vector<GroupRecord> groups;
    RowAssembly rows;
};

WindowedRows window_rows(const RunConfig& c, const Inputs& in, const ProjectIndex& pidx, const UserIndex& uidx,
                         int months) {
    WindowedRows out;
    out.window = filter_window(in.events, pidx, TimeWindow(months),
                               c.fatal_unknown_projects ? UnknownProjectPolicy::fatal : UnknownProjectPolicy::drop);
    out.groups = build_groups(out.window.events, GroupOptions{c.effective_size_cap()});
    out.rows = assemble_rows(out.groups, pidx, uidx);
    return out;
}

}  // namespace

void stage_ingest(const RunConfig& c) {
    const std::string hash = config_hash(c);
    const Inputs in = load_inputs(c);
    run_stage("ingest", [&] {
        const auto dir = out_dir(c);
        const auto pidx = index_projects(in.projects);
        const auto window = filter_window(in.events, pidx, TimeWindow(c.window_months),
                                          c.fatal_unknown_projects ? UnknownProjectPolicy::fatal
                                                                   : UnknownProjectPolicy::drop);
        std::vector<ContributionEvent> kept;
        for (const auto& e : in.events) {
            auto it = pidx.find(e.project_id);
            if (!e.is_bot && it != pidx.end() && !it->second.is_redirect) kept.push_back(e);
        }
        std::vector<Horizon> horizons;
        for (int d : {30, 60, 90, 180, 365}) horizons.emplace_back(std::chrono::days(d));
        horizons.emplace_back(std::nullopt);
        ordered_json fractions = ordered_json::array();
        if (!kept.empty()) {
            for (const auto& f : compute_activity_fraction(kept, pidx, horizons)) {
                fractions.push_back(
                    {{"horizon_days",
                      f.horizon ? json(std::chrono::duration_cast<std::chrono::days>(*f.horizon).count())
                                : json("inf")},
                     {"fraction", f.fraction}});
            }
        }
        ordered_json malformed = ordered_json::array();
        for (const auto& m : in.malformed) malformed.push_back({{"line", m.line}, {"reason", m.reason}});
        ordered_json j = {{"events_total", in.events.size() + in.malformed.size()},
                          {"events_parsed", in.events.size()},
                          {"malformed", malformed},
                          {"dropped_bot", window.dropped_bot},
                          {"dropped_redirect", window.dropped_redirect},
                          {"dropped_unknown_project", window.dropped_unknown_project},
                          {"outside_window", window.outside_window},
                          {"events_in_window", window.events.size()},
                          {"window_months", c.window_months},
                          {"activity_fraction", fractions}};
        write_json(dir / "ingest.json", j, hash);
        write_file_atomic(dir / "events_window.csv",
                          csv_with_hash(hash, serialize_events(window.events, EventFormat::csv)));
    });
}

void stage_metrics(const RunConfig& c) {
    const std::string hash = config_hash(c);
    const auto dir = out_dir(c);
    const auto events_path = dir / "events_window.csv";
    if (!fs::exists(events_path)) throw InputError("missing artifact: " + events_path.string());
    for (const auto& path : {c.projects, c.users}) {
        if (path.empty() || !fs::exists(path)) throw InputError("input not found: " + path);
    }
    run_stage("metrics", [&] {
        LoadOptions strict;
        strict.max_malformed_fraction = 0.0;
        const auto events = load_events(events_path, EventFormat::csv, strict).events;
        const auto projects = load_project_profiles(c.projects);
        const auto users = load_user_profiles(c.users);
        const auto groups = build_groups(events, GroupOptions{c.effective_size_cap()});
        const auto assembly = assemble_rows(groups, index_projects(projects), index_users(users));
        const auto group_rows = assemble_group_rows(groups, assembly.rows);
        write_file_atomic(dir / "groups.csv", csv_with_hash(hash, serialize_group_rows(group_rows)));
        write_file_atomic(dir / "rows.csv", csv_with_hash(hash, serialize_rows(assembly.rows)));
    });
}

void stage_scaling(const RunConfig& c) {
    const std::string hash = config_hash(c);
    const auto dir = out_dir(c);
    const auto rows = load_analysis_rows(c);
    run_stage("scaling", [&] {
        const auto groups = groups_from_rows(rows);
        const auto fit = fit_power_law(mean_work_points(groups), Aggregation::per_size_mean);
        const auto curve = TotalWorkCurve::from_fit(fit);
        ordered_json total = ordered_json::array();
        for (std::int64_t n = 1; n <= c.effective_size_cap(); ++n) {
            total.push_back({{"N", n}, {"W", total_work(curve, static_cast<double>(n))}});
        }
        ordered_json j = {{"alpha", fit.alpha},       {"ln_c", fit.ln_c},         {"c", fit.c()},
                          {"r2", fit.r2},             {"se_alpha", fit.se_alpha}, {"ci_low", fit.ci_low()},
                          {"ci_high", fit.ci_high()}, {"points", fit.point_count}, {"total_work", total}};
        write_json(dir / "powerlaw.json", j, hash);

        std::string csv = "N,mean,ci_low,ci_high,groups,fit\n";
        for (const auto& p : mean_work_by_size(groups)) {
            csv += join_csv({format_number(p.group_size), format_number(p.mean), format_number(p.ci_low),
                             format_number(p.ci_high), std::to_string(p.groups),
                             format_number(predict_mean_work(fit, p.group_size))}) +
                   "\n";
        }
        write_file_atomic(dir / "curve.csv", csv_with_hash(hash, csv));

        const bool has_sizes = std::any_of(rows.begin(), rows.end(), [](const auto& r) { return r.edit_size > 0; });
        if (has_sizes) {
            const auto edit = fit_edit_size_scaling(rows);
            write_json(dir / "edit_scaling.json",
                       {{"beta", edit.alpha},
                        {"ln_c", edit.ln_c},
                        {"r2", edit.r2},
                        {"se_beta", edit.se_alpha},
                        {"points", edit.point_count}},
                       hash);
        }
    });
}

void stage_ols(const RunConfig& c) {
    const std::string hash = config_hash(c);
    const auto dir = out_dir(c);
    const auto rows = load_analysis_rows(c);
    run_stage("ols", [&] {
        auto report_json = [&](const OlsReport& r, const std::string& response, bool scaled) {
            ordered_json pruned = ordered_json::array();
            for (const auto& p : r.pruned) {
                pruned.push_back(
                    {{"column", p.column}, {"correlated_with", p.correlated_with}, {"correlation", p.correlation}});
            }
            return ordered_json{{"response", response},
                                {"scaled", scaled},
                                {"coefficients", coefficients_json(r.fit.coefficients)},
                                {"r2", r.fit.r2},
                                {"n_obs", r.fit.n_obs},
                                {"rows_in", r.rows_in},
                                {"dropped_constant", r.dropped_constant},
                                {"pruned", pruned}};
        };
        OlsOptions group_opts;
        group_opts.prune_threshold = c.prune_threshold;
        group_opts.outlier_percentile = c.ols_outlier_percentile;
        group_opts.scale = true;
        group_opts.scale_response = c.scale_response;
        const auto group_features =
            c.group_ols_features.empty() ? default_group_ols_features(c.mode) : c.group_ols_features;
        const auto groups = groups_from_rows(rows);
        const auto group_rows = assemble_group_rows(groups, rows);
        std::vector<std::string> gcols = {"mean_work"};
        gcols.insert(gcols.end(), group_features.begin(), group_features.end());
        const auto group_report =
            run_ols(group_rows_to_matrix(group_rows, gcols), "mean_work", group_features, group_opts);

        OlsOptions user_opts = group_opts;
        user_opts.scale = false;
        user_opts.scale_response = false;
        const auto user_features =
            c.user_ols_features.empty() ? default_user_ols_features(c.mode) : c.user_ols_features;
        std::vector<std::string> ucols = {"w"};
        ucols.insert(ucols.end(), user_features.begin(), user_features.end());
        const auto user_report = run_ols(rows_to_matrix(rows, ucols), "w", user_features, user_opts);

        write_json(dir / "ols.json",
                   {{"group", report_json(group_report, "mean_work", true)},
                    {"user", report_json(user_report, "w", false)}},
                   hash);
    });
}

void stage_lme(const RunConfig& c) {
    const std::string hash = config_hash(c);
    const auto dir = out_dir(c);
    const auto rows = load_analysis_rows(c);
    run_stage("lme", [&] {
        BinnedOptions opts;
        opts.fixed = c.lme_fixed;
        opts.outlier_percentile = c.lme_outlier_percentile;
        opts.lme.criterion = c.criterion;
        ordered_json models = ordered_json::array();
        const auto binnings = c.lme_binnings.empty() ? default_binnings(c.mode) : c.lme_binnings;
        for (const auto& name : binnings) {
            BinSpec spec{parse_bin_attribute(name), c.lme_bins};
            const auto result = fit_binned(rows, spec, opts);
            ordered_json bins = ordered_json::array();
            for (const auto& b : result.bins) {
                ordered_json jb = {{"bin", b.bin},
                                   {"rows", b.rows},
                                   {"eligible_rows", b.eligible_rows},
                                   {"users", b.users}};
                if (b.fit) {
                    jb["fit"] = lme_json(*b.fit);
                } else {
                    jb["skipped"] = b.skip_reason;
                }
                bins.push_back(jb);
            }
            models.push_back({{"grouping", to_string(spec.attribute)},
                              {"coefficient", result.coefficient},
                              {"beta", result.pooled_beta},
                              {"std_err", result.pooled_se},
                              {"bins", result.bin_count},
                              {"max_bin_size", result.max_bin_size},
                              {"mean_bin_size", result.mean_bin_size},
                              {"warning", result.warning},
                              {"fits", bins}});
        }
        write_json(dir / "lme.json", {{"fixed", c.lme_fixed}, {"models", models}}, hash);
    });
}

void stage_chained(const RunConfig& c) {
    const std::string hash = config_hash(c);
    const auto dir = out_dir(c);
    const auto rows = load_analysis_rows(c);
    run_stage("chained", [&] {
        ChainedOptions opts;
        opts.outlier_percentile = c.chained_outlier_percentile;
        opts.fixed = c.chained_fixed;
        opts.lme.criterion = c.criterion;
        const auto fit = fit_chained(rows, c.range_spec(), c.mode, opts);
        write_file_atomic(dir / "chained.csv", csv_with_hash(hash, serialize_chained(fit)));
    });
    stage_unify(c);
}

namespace {

double observed_base(std::span<const UserProjectRow> rows, int size) {
    double sum = 0.0, count = 0.0;
    for (const auto& r : rows) {
        if (r.group_size == size) {
            sum += r.w;
            count += 1.0;
        }
    }
    if (count == 0.0) throw Error("no rows at group size " + std::to_string(size) + " to anchor the curve");
    return sum / count;
}

}  // namespace

void stage_unify(const RunConfig& c) {
    const std::string hash = config_hash(c);
    const auto dir = out_dir(c);
    const auto path = dir / "chained.csv";
    if (!fs::exists(path)) throw InputError("missing artifact: " + path.string());
    const auto chained = parse_chained(read_text_file(path));
    double base = 1.0;
    if (c.wb1) {
        base = *c.wb1;
    } else {
        const auto rows = load_analysis_rows(c);
        run_stage("unify", [&] { base = observed_base(rows, c.range_spec().lo); });
    }
    run_stage("unify", [&] {
        const auto curve = unify(chained, base);
        write_file_atomic(dir / "unified.csv", csv_with_hash(hash, serialize_unified(curve)));
    });
}

void stage_s3d(const RunConfig& c) {
    const std::string hash = config_hash(c);
    const auto dir = out_dir(c);
    const auto rows = load_analysis_rows(c);
    run_stage("s3d", [&] {
        const auto features = c.s3d_features.empty() ? s3d_default_features(c.mode) : c.s3d_features;
        std::vector<std::string> cols = {"w"};
        cols.insert(cols.end(), features.begin(), features.end());
        const FeatureMatrix m = rows_to_matrix(rows, cols);
        S3dConfig cfg;
        cfg.max_features = c.s3d_max_features;
        cfg.cv_folds = c.s3d_folds;
        const auto search = cross_validate_lambda(m, "w", c.lambda_grid, cfg, c.seed);
        cfg.lambda = search.best_lambda;
        const auto model = fit_s3d(m, "w", cfg);

        ordered_json cv = ordered_json::array();
        for (const auto& s : search.scores) cv.push_back({{"lambda", s.lambda}, {"cv_mse", s.cv_mse}});
        ordered_json steps = ordered_json::array();
        for (std::size_t i = 0; i < model.steps.size(); ++i) {
            steps.push_back({{"step", i + 1},
                             {"feature", model.steps[i].feature},
                             {"r2_gain", model.steps[i].r2_gain},
                             {"total_r2", model.steps[i].total_r2}});
        }
        ordered_json importance = ordered_json::array();
        for (const auto& r : feature_importance_steps(model)) {
            importance.push_back(
                {{"step", r.step}, {"feature", r.feature}, {"candidate_r2", r.candidate_r2}, {"selected", r.selected}});
        }
        write_json(dir / "s3d.json",
                   {{"lambda", cfg.lambda},
                    {"folds", cfg.cv_folds},
                    {"cv", cv},
                    {"selected", model.selected},
                    {"steps", steps},
                    {"importance", importance},
                    {"total_r2", model.total_r2()}},
                   hash);
        write_file_atomic(dir / "s3d_cells.csv", csv_with_hash(hash, serialize_cells(model)));
    });
}

PipelineResult run_pipeline(const RunConfig& config) {
    PipelineResult result;
    result.out = config.out;
    result.config_hash = config_hash(config);
    stage_ingest(config);
    stage_metrics(config);
    stage_scaling(config);
    stage_ols(config);
    stage_lme(config);
    stage_chained(config);
    stage_s3d(config);
    emit_plots(config.out, config.svg, result.config_hash);

    const auto dir = fs::path(config.out);
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().filename() != "manifest.json") {
            files.push_back(entry.path().filename().string());
        }
    }
    std::sort(files.begin(), files.end());
    ordered_json manifest = {{"config", json(config)}, {"artifacts", ordered_json::array()}};
    for (const auto& f : files) {
        manifest["artifacts"].push_back({{"file", f}, {"fnv1a64", hex64(fnv1a64(read_text_file(dir / f)))}});
    }
    write_json(dir / "manifest.json", manifest, result.config_hash);
    files.push_back("manifest.json");
    result.artifacts = files;
    return result;
}

namespace {

// Minimal scatter/line chart.
std::string svg_chart(const std::string& title, const std::vector<std::pair<double, double>>& points,
                      const std::vector<std::pair<double, double>>& line = {}) {
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto* set : {&points, &line}) {
        for (auto [x, y] : *set) {
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    }
    if (!(x1 > x0)) x1 = x0 + 1;
    if (!(y1 > y0)) y1 = y0 + 1;
    auto px = [&](double x) { return 50 + 500 * (x - x0) / (x1 - x0); };
    auto py = [&](double y) { return 350 - 300 * (y - y0) / (y1 - y0); };
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"400\">\n";
    s += fmt::format("<text x=\"50\" y=\"30\" font-size=\"14\">{}</text>\n", title);
    s += "<line x1=\"50\" y1=\"350\" x2=\"550\" y2=\"350\" stroke=\"black\"/>\n";
    s += "<line x1=\"50\" y1=\"50\" x2=\"50\" y2=\"350\" stroke=\"black\"/>\n";
    for (auto [x, y] : points) {
        if (std::isfinite(x) && std::isfinite(y)) {
            s += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\"/>\n", px(x), py(y));
        }
    }
    if (!line.empty()) {
        s += "<polyline fill=\"none\" stroke=\"steelblue\" points=\"";
        for (auto [x, y] : line) s += fmt::format("{:.2f},{:.2f} ", px(x), py(y));
        s += "\"/>\n";
    }
    return s + "</svg>\n";
}

}  // namespace

std::vector<std::string> emit_plots(const fs::path& dir, bool svg, const std::string& hash) {
    std::vector<std::string> written;
    auto emit = [&](const std::string& name, const std::string& body) {
        write_file_atomic(dir / name, hash.empty() ? body : csv_with_hash(hash, body));
        written.push_back(name);
    };

    if (fs::exists(dir / "rows.csv")) {
        auto rows = load_rows(dir / "rows.csv");
        std::erase_if(rows, [](const UserProjectRow& r) { return r.over_cap; });
        const auto groups = groups_from_rows(rows);
        std::optional<PowerLawFit> fit;
        try {
            fit = fit_power_law(mean_work_points(groups), Aggregation::per_size_mean);
        } catch (const Error&) {
        }
        std::string body = "N,groups,mean,ci_low,ci_high,fit\n";
        std::vector<std::pair<double, double>> pts, line;
        for (const auto& p : mean_work_by_size(groups)) {
            const double f = fit ? predict_mean_work(*fit, p.group_size) : std::nan("");
            body += join_csv({format_number(p.group_size), std::to_string(p.groups), format_number(p.mean),
                              format_number(p.ci_low), format_number(p.ci_high), format_number(f)}) +
                    "\n";
            pts.emplace_back(p.group_size, p.mean);
            if (fit) line.emplace_back(p.group_size, f);
        }
        emit("fig1.csv", body);
        if (svg) {
            write_file_atomic(dir / "fig1.svg", svg_chart("mean work per member vs group size", pts, line));
            written.push_back("fig1.svg");
        }
    }
    if (fs::exists(dir / "chained.csv")) {
        const auto chained = parse_chained(read_text_file(dir / "chained.csv"));
        std::string body = "range,midpoint,beta,ci_low,ci_high,sub_linear\n";
        std::vector<std::pair<double, double>> pts;
        for (const auto& r : marginal_gain_report(chained)) {
            body += join_csv({std::to_string(r.range.lo) + "-" + std::to_string(r.range.hi),
                              format_number(r.midpoint), format_number(r.beta), format_number(r.ci_low),
                              format_number(r.ci_high), r.sub_linear ? "1" : "0"}) +
                    "\n";
            pts.emplace_back(r.midpoint, r.beta);
        }
        emit("fig2.csv", body);
        if (svg) {
            write_file_atomic(dir / "fig2.svg", svg_chart("marginal gain by group-size range", pts));
            written.push_back("fig2.svg");
        }
    }
    if (fs::exists(dir / "unified.csv")) {
        const auto curve = parse_unified(read_text_file(dir / "unified.csv"));
        std::string body = "k,w,ci_low,ci_high\n";
        std::vector<std::pair<double, double>> line;
        for (const auto& p : curve.points) {
            body += join_csv({std::to_string(p.k), format_number(p.w), format_number(p.ci_low),
                              format_number(p.ci_high)}) +
                    "\n";
            line.emplace_back(p.k, p.w);
        }
        emit("fig3.csv", body);
        if (svg) {
            write_file_atomic(dir / "fig3.svg", svg_chart("unified work curve", {}, line));
            written.push_back("fig3.svg");
        }
    }
    if (fs::exists(dir / "ingest.json")) {
        const auto j = read_json(dir / "ingest.json");
        std::string body = "horizon_days,fraction\n";
        for (const auto& f : j.at("activity_fraction")) {
            const auto& h = f.at("horizon_days");
            body += join_csv({h.is_string() ? h.get<std::string>() : std::to_string(h.get<long long>()),
                              format_number(f.at("fraction").get<double>())}) +
                    "\n";
        }
        emit("fig4.csv", body);
    }
    if (fs::exists(dir / "s3d.json")) {
        const auto j = read_json(dir / "s3d.json");
        std::string body = "step,feature,candidate_r2,selected\n";
        for (const auto& r : j.at("importance")) {
            body += join_csv({std::to_string(r.at("step").get<int>()), r.at("feature").get<std::string>(),
                              format_number(r.at("candidate_r2").get<double>()),
                              r.at("selected").get<bool>() ? "1" : "0"}) +
                    "\n";
        }
        emit("fig5.csv", body);
    }
    return written;
}

double fit_window_constant(std::span<const double> t, std::span<const double> alpha) {
    if (t.size() != alpha.size() || t.empty()) throw Error("window fit needs matching, nonempty series");
    auto sse = [&](double log_z) {
        const double z = std::exp(log_z);
        double s = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double r = alpha[i] - t[i] / (t[i] + z);
            s += r * r;
        }
        return s;
    };
    // Coarse scan, then Brent around the best point.
    const double lo = std::log(1e-6), hi = std::log(1e6);
    const int steps = 120;
    int best = 0;
    double best_v = INFINITY;
    for (int i = 0; i <= steps; ++i) {
        const double v = sse(lo + (hi - lo) * i / steps);
        if (v < best_v) {
            best_v = v;
            best = i;
        }
    }
    const double a = lo + (hi - lo) * std::max(0, best - 1) / steps;
    const double b = lo + (hi - lo) * std::min(steps, best + 1) / steps;
    const auto r = boost::math::tools::brent_find_minima(sse, a, b, 52);
    return std::exp(r.first);
}

SensitivityReport sweep_windows(const RunConfig& config, const std::vector<int>& windows) {
    if (windows.size() < 2) throw InputError("a window sweep needs at least two windows");
    for (int t : windows) {
        if (t < 1) throw InputError("window lengths must be at least one month");
    }
    const Inputs in = load_inputs(config);
    SensitivityReport report;
    run_stage("sweep", [&] {
        const auto pidx = index_projects(in.projects);
        const auto uidx = index_users(in.users);
        const auto spec = config.range_spec();
        ChainedOptions opts;
        opts.outlier_percentile = config.chained_outlier_percentile;
        opts.fixed = config.chained_fixed;
        opts.lme.criterion = config.criterion;
        for (int t : windows) {
            WindowCurve wc;
            wc.months = t;
            try {
                auto wr = window_rows(config, in, pidx, uidx, t);
                wc.events = wr.window.events.size();
                std::erase_if(wr.rows.rows, [](const UserProjectRow& r) { return r.over_cap; });
                wc.chained = fit_chained(wr.rows.rows, spec, config.mode, opts);
                const double base = config.wb1 ? *config.wb1 : observed_base(wr.rows.rows, spec.lo);
                wc.curve = unify(wc.chained, base);
                wc.ok = true;
            } catch (const Error& e) {
                wc.skip_reason = e.what();
            }
            report.windows.push_back(std::move(wc));
        }
        std::vector<const WindowCurve*> ok;
        for (const auto& w : report.windows) {
            if (w.ok) ok.push_back(&w);
        }
        for (std::size_t i = 0; i + 1 < ok.size(); ++i) {
            const auto& a = *ok[i];
            const auto& b = *ok[i + 1];
            WindowRatio r;
            r.t_from = a.months;
            r.t_to = b.months;
            const int lo = std::max(a.curve.points.front().k, b.curve.points.front().k);
            const int hi = std::min(a.curve.points.back().k, b.curve.points.back().k);
            double fwd = 0.0, bwd = 0.0, count = 0.0;
            for (int k = lo; k <= hi; ++k) {
                fwd += b.curve.at(k).w / a.curve.at(k).w;
                bwd += a.curve.at(k).w / b.curve.at(k).w;
                count += 1.0;
            }
            r.forward = count > 0 ? fwd / count : std::nan("");
            r.backward = count > 0 ? bwd / count : std::nan("");
            r.event_ratio = static_cast<double>(b.events) / static_cast<double>(a.events);
            report.ratios.push_back(r);
        }
        if (!report.ratios.empty()) {
            std::vector<double> t, alpha;
            for (const auto& r : report.ratios) {
                t.push_back(r.t_from);
                alpha.push_back(r.backward);
            }
            report.z = fit_window_constant(t, alpha);
            for (double ti : t) report.fitted_alpha.push_back(ti / (ti + report.z));
        }
    });
    return report;
}

void write_sweep(const SensitivityReport& report, const fs::path& dir, const std::string& hash) {
    fs::create_directories(dir);
    ordered_json windows = ordered_json::array();
    std::string curves = "t,k,w,ci_low,ci_high\n";
    std::string gains = "t,range,midpoint,beta,ci_low,ci_high,sub_linear\n";
    for (const auto& w : report.windows) {
        ordered_json jw = {{"months", w.months}, {"events", w.events}, {"ok", w.ok}};
        if (!w.ok) jw["skipped"] = w.skip_reason;
        windows.push_back(jw);
        if (!w.ok) continue;
        for (const auto& p : w.curve.points) {
            curves += join_csv({std::to_string(w.months), std::to_string(p.k), format_number(p.w),
                                format_number(p.ci_low), format_number(p.ci_high)}) +
                      "\n";
        }
        for (const auto& g : marginal_gain_report(w.chained)) {
            gains += join_csv({std::to_string(w.months), std::to_string(g.range.lo) + "-" + std::to_string(g.range.hi),
                               format_number(g.midpoint), format_number(g.beta), format_number(g.ci_low),
                               format_number(g.ci_high), g.sub_linear ? "1" : "0"}) +
                     "\n";
        }
    }
    ordered_json ratios = ordered_json::array();
    for (std::size_t i = 0; i < report.ratios.size(); ++i) {
        const auto& r = report.ratios[i];
        ratios.push_back({{"t_from", r.t_from},
                          {"t_to", r.t_to},
                          {"forward", r.forward},
                          {"backward", r.backward},
                          {"event_ratio", r.event_ratio},
                          {"fitted_alpha", report.fitted_alpha.at(i)}});
    }
    write_json(dir / "sweep.json", {{"windows", windows}, {"ratios", ratios}, {"z", report.z}}, hash);
    write_file_atomic(dir / "sweep_unified.csv", csv_with_hash(hash, curves));
    write_file_atomic(dir / "sweep_marginal.csv", csv_with_hash(hash, gains));
}

PipelineOutputs load_pipeline_outputs(const fs::path& dir) {
    PipelineOutputs out;
    if (fs::exists(dir / "powerlaw.json")) {
        const auto j = read_json(dir / "powerlaw.json");
        PowerLawFit f;
        f.alpha = j.at("alpha").get<double>();
        f.ln_c = j.at("ln_c").get<double>();
        f.r2 = j.at("r2").get<double>();
        f.se_alpha = j.at("se_alpha").is_null() ? std::nan("") : j.at("se_alpha").get<double>();
        f.point_count = j.at("points").get<std::size_t>();
        out.powerlaw = f;
    }
    if (fs::exists(dir / "chained.csv")) out.chained = parse_chained(read_text_file(dir / "chained.csv"));
    if (fs::exists(dir / "lme.json")) {
        const auto j = read_json(dir / "lme.json");
        for (const auto& m : j.at("models")) {
            if (m.at("grouping") != "user_id") continue;
            for (const auto& b : m.at("fits")) {
                if (!b.contains("fit")) continue;
                const auto& f = b.at("fit");
                LmeFit fit;
                fit.grouping = f.at("grouping").get<std::string>();
                fit.random_variance = f.at("random_variance").get<double>();
                fit.residual_variance = f.at("residual_variance").get<double>();
                fit.theta = f.at("theta").get<double>();
                fit.n_obs = f.at("n_obs").get<std::size_t>();
                fit.n_groups = f.at("n_groups").get<std::size_t>();
                for (const auto& c : f.at("fixed")) {
                    Coefficient coef;
                    coef.name = c.at("variable").get<std::string>();
                    coef.estimate = c.at("beta").get<double>();
                    coef.std_error = c.at("std_err").get<double>();
                    fit.fixed.push_back(coef);
                }
                out.lme = fit;
            }
        }
    }
    if (!out.powerlaw && !out.chained && !out.lme) throw InputError("no pipeline output found in " + dir.string());
    return out;
}

}  // namespace collab
