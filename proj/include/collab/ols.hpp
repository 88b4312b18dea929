#pragma once

// Multivariate ordinary least squares with min-max scaling, correlated
// predictor pruning and percentile outlier filtering.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "collab/feature_matrix.hpp"

namespace collab {

struct Coefficient {
    std::string name;
    double estimate = 0;
    double std_error = 0;
    double statistic = 0;  // t (OLS) or z (mixed model)
    double p_value = 1;
};

struct MinMaxScaler {
    std::vector<std::string> columns;
    std::vector<double> mins;
    std::vector<double> maxs;

    FeatureMatrix transform(const FeatureMatrix& m) const;
    FeatureMatrix inverse(const FeatureMatrix& m) const;
};

struct ScaledMatrix {
    FeatureMatrix matrix;
    MinMaxScaler scaler;
};

// x -> (x - min) / (max - min) per column; a constant column is an error
// naming that column.
ScaledMatrix min_max_scale(const FeatureMatrix& m);

struct PrunedColumn {
    std::string column;
    std::string correlated_with;
    double correlation = 0;
};

struct PruneResult {
    FeatureMatrix matrix;
    std::vector<std::string> kept;
    std::vector<PrunedColumn> removed;
};

// Scans columns in order; drops a column whose |Pearson r| with an already
// kept column exceeds `threshold`.
PruneResult prune_correlated(const FeatureMatrix& m, double threshold = 0.8);

// Indices of values not strictly above the percentile (linear interpolation).
std::vector<std::size_t> outlier_keep_indices(std::span<const double> values, double pct = 95.0);
FeatureMatrix filter_outliers(const FeatureMatrix& m, std::string_view column, double pct = 95.0);

struct OlsFit {
    std::vector<Coefficient> coefficients;  // "intercept" first
    double r2 = 0;
    double sigma2 = 0;  // residual variance, SSR / (n - k)
    std::size_t n_obs = 0;
    std::size_t dof = 0;
    std::vector<double> residuals;

    const Coefficient& coefficient(std::string_view name) const;
};

// Regresses `response` on every other column plus an intercept. Solved by
// column-pivoted QR; a rank-deficient design throws, naming the collinear
// columns.
OlsFit fit_ols(const FeatureMatrix& m, std::string_view response);

// Columns of `predictors` (with an implicit intercept) that are linearly
// dependent on earlier ones. Empty when the design has full column rank.
std::vector<std::string> find_collinear_columns(const FeatureMatrix& predictors);

struct OlsOptions {
    double prune_threshold = 0.8;
    std::optional<double> outlier_percentile = 95.0;  // on the response
    bool scale = true;
    bool scale_response = true;
};

struct OlsReport {
    OlsFit fit;
    std::vector<std::string> dropped_constant;
    std::vector<PrunedColumn> pruned;
    std::size_t rows_in = 0;
    std::size_t rows_used = 0;
};

// Outlier filter -> drop constant predictors -> scale -> prune -> fit.
// `features` is in priority order for pruning.
OlsReport run_ols(const FeatureMatrix& data, const std::string& response, const std::vector<std::string>& features,
                  const OlsOptions& options = {});

}  // namespace collab
