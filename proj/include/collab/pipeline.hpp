#pragma once

// End-to-end orchestration: configuration, per-stage artifact writers, the
// time-window sweep and plot data.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "collab/chained.hpp"
#include "collab/error.hpp"
#include "collab/ingest.hpp"
#include "collab/lme.hpp"
#include "collab/metrics.hpp"
#include "collab/mode.hpp"
#include "collab/s3d.hpp"
#include "collab/synth.hpp"

namespace collab {

struct RunConfig {
    std::string events;
    std::string projects;
    std::string users;
    std::string bots;  // optional exclusion list
    EventFormat event_format = EventFormat::csv;
    Mode mode = Mode::github;
    int window_months = 3;
    std::string out = "out";
    std::uint64_t seed = 1;
    double max_malformed_fraction = 0.01;
    bool fatal_unknown_projects = false;
    std::int64_t size_cap = 0;  // 0: mode default

    // ols
    double prune_threshold = 0.8;
    std::optional<double> ols_outlier_percentile = 95.0;
    bool scale_response = true;
    std::vector<std::string> group_ols_features;  // empty: mode default
    std::vector<std::string> user_ols_features;

    // lme
    std::vector<std::string> lme_fixed = {"group_size"};
    std::vector<std::string> lme_binnings;  // empty: mode default
    std::size_t lme_bins = 5;
    std::optional<double> lme_outlier_percentile = 95.0;
    VarianceCriterion criterion = VarianceCriterion::reml;

    // chained / unify
    std::optional<RangeSpec> ranges;  // mode default when absent
    std::optional<double> chained_outlier_percentile = 95.0;
    std::optional<std::vector<std::string>> chained_fixed;
    std::optional<double> wb1;  // observed mean work at the lowest size when absent

    // s3d
    std::size_t s3d_max_features = 8;
    std::vector<double> lambda_grid = {0.0, 1e-4, 1e-3, 1e-2, 1e-1};
    std::size_t s3d_folds = 5;
    std::vector<std::string> s3d_features;  // empty: mode default

    bool svg = false;
    std::vector<int> windows;  // sweep

    RangeSpec range_spec() const;
    std::int64_t effective_size_cap() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);

// FNV-1a over the canonical (sorted-key, compact) JSON form.
std::string config_hash(const RunConfig& config);

// Raised by run_pipeline and the stage runners; names the failing stage.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& cause)
        : Error(stage + ": " + cause), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

// Stage runners. Each reads what earlier stages wrote into config.out and
// writes its own artifacts there.
void stage_ingest(const RunConfig& config);
void stage_metrics(const RunConfig& config);
void stage_scaling(const RunConfig& config);
void stage_ols(const RunConfig& config);
void stage_lme(const RunConfig& config);
void stage_chained(const RunConfig& config);
void stage_unify(const RunConfig& config);
void stage_s3d(const RunConfig& config);

struct PipelineResult {
    std::filesystem::path out;
    std::string config_hash;
    std::vector<std::string> artifacts;
};

PipelineResult run_pipeline(const RunConfig& config);

// Plot data (fig1..fig5 CSV, optional SVG) from the artifacts in `dir`.
std::vector<std::string> emit_plots(const std::filesystem::path& dir, bool svg, const std::string& hash = "");

struct WindowCurve {
    int months = 0;
    std::size_t events = 0;
    bool ok = false;
    std::string skip_reason;
    ChainedFit chained;
    UnifiedCurve curve;
};

struct WindowRatio {
    int t_from = 0;
    int t_to = 0;
    double forward = 0;   // mean over N of w(N, t_to) / w(N, t_from)
    double backward = 0;  // mean over N of w(N, t_from) / w(N, t_to)
    double event_ratio = 0;
};

struct SensitivityReport {
    std::vector<WindowCurve> windows;
    std::vector<WindowRatio> ratios;
    double z = 0;  // least-squares fit of backward(t_from) to t / (t + z)
    std::vector<double> fitted_alpha;
};

SensitivityReport sweep_windows(const RunConfig& config, const std::vector<int>& windows);
void write_sweep(const SensitivityReport& report, const std::filesystem::path& dir, const std::string& hash);

// Least-squares z in alpha(t) = t / (t + z), z > 0.
double fit_window_constant(std::span<const double> t, std::span<const double> alpha);

PipelineOutputs load_pipeline_outputs(const std::filesystem::path& dir);

}  // namespace collab
