#pragma once

// Generative model of individual productivity with planted parameters.
//
// Projects draw a group size from a truncated discrete power law; members
// are drawn by activity weight. A member's work is
//   round(max(1, w*(N) + u_user + sum_k b_k x_k + e))
// with u_user ~ N(0, s_u^2), e ~ N(0, s^2) and x_k exogenous profile
// features. Each unit of work becomes one event, uniform over the project's
// active period.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "collab/chained.hpp"
#include "collab/ingest.hpp"
#include "collab/lme.hpp"
#include "collab/metrics.hpp"
#include "collab/mode.hpp"
#include "collab/scaling.hpp"

namespace collab {

// Expected work per member as a function of group size.
struct ProductivityCurve {
    enum class Kind { power_law, linear, piecewise_linear, chained_slopes };
    Kind kind = Kind::power_law;
    double c = 11.588;     // power_law: c N^alpha
    double alpha = 0.28;
    double intercept = 5;  // value at N = 1 for linear / piecewise / chained
    double slope = 1;      // linear
    double knot = 7;       // piecewise: slope_low up to knot, slope_high after
    double slope_low = 4;
    double slope_high = 1;
    std::vector<double> slopes;  // chained: w(k+1) - w(k); the last repeats

    double operator()(double n) const;
};

struct SynthConfig {
    Mode mode = Mode::github;
    std::uint64_t seed = 1;
    std::size_t n_users = 2000;
    std::size_t n_projects = 3000;
    double size_exponent = 2.0;  // P(N) ~ N^-gamma
    int size_min = 1;
    int size_cap = 20;
    ProductivityCurve curve;
    double sigma_u = 2.0;
    double sigma = 2.0;
    bool center_noise = false;    // noise sums to zero within each user
    double activity_spread = 1.0;  // lognormal sigma of user activity weights
    std::string start = "2015-01-01T00:00:00Z";
    int creation_span_days = 365;
    int activity_months = 12;  // events fall in [created, created + this)
    std::map<std::string, double> confounds;  // planted coefficients on raw features
    double edit_beta = 1.2;
    double edit_base = 200.0;  // bytes for a single edit
    double edit_sigma = 0.0;   // lognormal noise on a member's total bytes
    std::size_t n_bots = 0;
    std::size_t bot_events = 50;
    double redirect_fraction = 0.0;

    static SynthConfig for_mode(Mode mode);
};

void to_json(nlohmann::json& j, const ProductivityCurve& c);
void from_json(const nlohmann::json& j, ProductivityCurve& c);
void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

// Exogenous features that accept a planted coefficient.
const std::vector<std::string>& plantable_features();

struct TruthRow {
    std::string user_id;
    std::string project_id;
    int group_size = 0;
    double expected = 0;  // w*(N) + u + planted confounds, before noise and rounding
    std::int64_t work = 0;
};

struct SynthTruth {
    SynthConfig config;
    std::map<std::string, double> user_intercepts;
    std::vector<TruthRow> rows;

    // Weighted least-squares slope of w*(N) on N over the truth rows inside
    // [lo, hi]; the planted marginal gain of that range.
    double planted_slope(int lo, int hi) const;
};

void to_json(nlohmann::json& j, const SynthTruth& t);
void from_json(const nlohmann::json& j, SynthTruth& t);

struct SynthCorpus {
    std::vector<ContributionEvent> events;
    std::vector<ProjectProfile> projects;
    std::vector<UserProfile> users;
    std::vector<std::string> bots;
    SynthTruth truth;
};

// Throws on an infeasible configuration.
SynthCorpus generate(const SynthConfig& config);

// events.csv, projects.csv, users.csv, bots.txt, truth.json.
void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir);
SynthTruth load_truth(const std::filesystem::path& path);

// Row-level panel for mixed-model recovery: each user gets between
// rows_min and rows_max memberships with independently drawn group sizes.
struct PanelConfig {
    std::uint64_t seed = 1;
    std::size_t n_users = 5000;
    int rows_min = 2;
    int rows_max = 5;
    double size_exponent = 0.0;  // 0 = uniform sizes
    int size_min = 1;
    int size_max = 20;
    ProductivityCurve curve;
    double sigma_u = 1.0;
    double sigma = 1.0;
    bool center_noise = false;
};

struct Panel {
    std::vector<UserProjectRow> rows;
    std::vector<double> expected;  // noiseless w per row, intercept included
};

Panel generate_panel(const PanelConfig& config);

// Discrete power law on [lo, hi] with P(k) ~ k^-gamma.
std::vector<double> size_law(double gamma, int lo, int hi);

// Lognormal noise level on E_s = base * E_n^beta at which the log-log fit
// over `edit_counts` has the target r2, found by bisection.
double calibrate_edit_noise(std::span<const double> edit_counts, double beta, double target_r2,
                            std::uint64_t seed);
// E_s draws for given edit counts (shared by calibration and tests).
std::vector<double> draw_edit_sizes(std::span<const double> edit_counts, double base, double beta, double sigma,
                                    std::uint64_t seed);

// Fitted quantities read back from a pipeline run.
struct PipelineOutputs {
    std::optional<PowerLawFit> powerlaw;
    std::optional<ChainedFit> chained;
    std::optional<LmeFit> lme;  // user random intercept over all rows, group size first
};

struct TruthTolerances {
    double alpha = 0.02;
    double beta_abs = 1e-6;
    double beta_se = 3.0;  // also pass within this many standard errors
    double sigma_u2_rel = 0.25;
    double sigma_u2_abs = 1e-6;
};

struct TruthCheckRow {
    std::string parameter;
    double planted = 0;
    double recovered = 0;
    double tolerance = 0;
    bool pass = false;
};

struct TruthReport {
    std::vector<TruthCheckRow> rows;
    bool all_pass() const;
};

// Throws when `outputs` holds nothing that can be checked.
TruthReport truth_check(const SynthTruth& truth, const PipelineOutputs& outputs, const TruthTolerances& tol = {});

}  // namespace collab
