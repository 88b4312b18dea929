#pragma once

// Random-intercept linear mixed model
//
//   y = X beta + u_g + e,   u_g ~ N(0, s_u^2),   e ~ N(0, s^2)
//
// Variance components are profiled: with theta = s_u^2 / s^2 the marginal
// covariance is s^2 H(theta), H block-diagonal with blocks I + theta 11'.
// Each block has a closed-form inverse and determinant, so the profiled
// (restricted) likelihood costs O(groups * p^2) per theta and is maximized by
// a one-dimensional search over log theta. beta is the GLS estimate at the
// optimum.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "collab/feature_matrix.hpp"
#include "collab/metrics.hpp"
#include "collab/ols.hpp"

namespace collab {

enum class VarianceCriterion { reml, ml };

VarianceCriterion parse_criterion(std::string_view text);
std::string to_string(VarianceCriterion criterion);

struct LmeOptions {
    VarianceCriterion criterion = VarianceCriterion::reml;
    double theta_min = 1e-8;
    double theta_max = 1e8;
    std::size_t grid_points = 65;  // coarse log-spaced scan before refinement
    double tolerance = 1e-10;      // final bracket width in log theta
};

struct LmeFit {
    std::vector<Coefficient> fixed;  // "intercept" first; z statistics, Wald p-values
    double random_variance = 0;      // s_u^2
    double residual_variance = 0;    // s^2
    double theta = 0;
    double log_likelihood = 0;       // maximized (restricted) log-likelihood
    VarianceCriterion criterion = VarianceCriterion::reml;
    std::string grouping;
    std::size_t n_obs = 0;
    std::size_t n_groups = 0;
    bool at_boundary = false;  // theta = 0, model collapsed to OLS

    const Coefficient& coefficient(std::string_view name) const;
};

class RandomInterceptModel {
public:
    RandomInterceptModel(const FeatureMatrix& data, std::string_view response, std::span<const std::string> fixed,
                         std::span<const std::string> group_keys);

    // Profiled log-likelihood at theta >= 0, maximized over beta and s^2.
    double profiled_log_likelihood(double theta, VarianceCriterion criterion) const;

    LmeFit fit(const LmeOptions& options = {}, std::string grouping = "group") const;

    std::size_t n_obs() const noexcept { return n_; }
    std::size_t n_groups() const noexcept { return group_sizes_.size(); }

private:
    struct Profile {
        Eigen::VectorXd beta;  // normalized-column scale
        Eigen::MatrixXd a_inv;
        double q = 0;
        double log_det_h = 0;
        double log_det_a = 0;
    };

    Profile profile(double theta) const;
    // Q recomputed from residuals; free of the cancellation in the fast path.
    double exact_quadratic(const Profile& pr, double theta) const;
    double log_likelihood_from(const Profile& pr, VarianceCriterion criterion) const;

    std::vector<std::string> names_;
    Eigen::VectorXd norms_;
    Eigen::MatrixXd xtx_;
    Eigen::VectorXd xty_;
    double yty_ = 0;
    Eigen::MatrixXd group_x_sums_;  // groups x p
    Eigen::VectorXd group_y_sums_;
    std::vector<double> group_sizes_;
    Eigen::MatrixXd x_;  // normalized design
    Eigen::VectorXd y_;
    double y_mean_ = 0;
    std::vector<std::size_t> group_of_;
    std::size_t n_ = 0;
};

LmeFit fit_random_intercept(const FeatureMatrix& data, std::string_view response,
                            std::span<const std::string> fixed, std::span<const std::string> group_keys,
                            const LmeOptions& options = {}, std::string grouping = "group");

// Convenience for membership rows grouped by user_id.
LmeFit fit_user_random_intercept(std::span<const UserProjectRow> rows, std::span<const std::size_t> indices,
                                 const std::string& response, const std::vector<std::string>& fixed,
                                 const LmeOptions& options = {});

// Keeps rows whose grouping level has at least two rows spanning at least two
// distinct group sizes. Returns retained indices in input order.
std::vector<std::size_t> filter_eligible(std::span<const std::string> keys, std::span<const double> group_sizes);
std::vector<std::size_t> filter_eligible(std::span<const UserProjectRow> rows, std::span<const std::size_t> subset);

enum class BinAttribute { n_projects, user_work, followers, user_id };

BinAttribute parse_bin_attribute(std::string_view text);
std::string to_string(BinAttribute attribute);

struct BinSpec {
    BinAttribute attribute = BinAttribute::user_id;
    std::size_t bins = 5;  // quantile modes only
};

struct Binning {
    std::map<std::string, std::vector<std::size_t>> bins;  // bin id -> row indices
    std::string warning;
};

// user_work and followers: quantile bins; n_projects: one bin per value;
// user_id: one bin per user. Quantile modes fall back to per-value bins when
// there are fewer distinct values than bins.
Binning bin_users(std::span<const UserProjectRow> rows, const BinSpec& spec);

struct BinFit {
    std::string bin;
    std::size_t rows = 0;
    std::size_t eligible_rows = 0;
    std::size_t users = 0;
    std::optional<LmeFit> fit;
    std::string skip_reason;
};

struct BinnedResult {
    BinSpec spec;
    std::string coefficient;  // pooled fixed effect
    std::vector<BinFit> bins;
    double pooled_beta = 0;
    double pooled_se = 0;
    std::size_t bin_count = 0;
    std::size_t max_bin_size = 0;
    double mean_bin_size = 0;
    std::string warning;
};

struct BinnedOptions {
    std::string response = "w";
    std::vector<std::string> fixed = {"group_size"};
    std::optional<double> outlier_percentile;  // applied to the response first
    LmeOptions lme;
};

// One user random-intercept fit per bin; pooled = observation-weighted mean
// of the per-bin coefficient with SE sqrt(sum w_b^2 SE_b^2). In user_id mode
// the bins are the random-intercept levels of a single fit.
BinnedResult fit_binned(std::span<const UserProjectRow> rows, const BinSpec& spec, const BinnedOptions& options = {});

}  // namespace collab
