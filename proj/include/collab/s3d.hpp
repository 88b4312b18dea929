#pragma once

// Structured sum-of-squares decomposition: greedy feature selection where
// each step partitions every current cell along one feature into blocks
// that maximize the between-block sum of squares, less a per-cut penalty.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "collab/feature_matrix.hpp"
#include "collab/mode.hpp"

namespace collab {

struct S3dConfig {
    std::size_t max_features = 8;
    double lambda = 0.0;        // penalty per cut, in units of total R^2
    std::size_t cv_folds = 5;
    double min_r2_gain = 1e-4;  // stop when the best step explains less
    std::size_t max_blocks = 32;           // per cell per step
    std::size_t max_candidate_values = 64;  // distinct values are pooled above this
};

struct S3dNode {
    int feature = -1;  // index into S3dModel::features; -1 for a leaf
    std::vector<double> cuts;
    std::vector<std::size_t> children;
    double mean = 0;
    std::size_t count = 0;
};

struct S3dStep {
    std::string feature;
    double r2_gain = 0;
    double total_r2 = 0;
    std::vector<double> candidate_r2;  // per feature; NaN once selected
};

struct S3dCell {
    std::vector<double> lower;  // per selected feature, -inf when unbounded
    std::vector<double> upper;  // exclusive, +inf when unbounded
    double mean = 0;
    std::size_t count = 0;
};

struct S3dModel {
    std::vector<std::string> features;  // candidate columns, in priority order
    std::vector<std::string> selected;
    std::vector<S3dStep> steps;
    std::vector<S3dNode> nodes;  // nodes[0] is the root
    double tss = 0;
    std::size_t n_obs = 0;

    double total_r2() const { return steps.empty() ? 0.0 : steps.back().total_r2; }
    // Leaf cells as boxes over the selected features.
    std::vector<S3dCell> cells() const;
};

// Every column other than `response` is a candidate.
S3dModel fit_s3d(const FeatureMatrix& m, std::string_view response, const S3dConfig& config = {});

// `row` holds values for model.features in order. Values outside every cut
// range fall into the nearest cell.
double predict_s3d(const S3dModel& model, std::span<const double> row);
std::vector<double> predict_s3d(const S3dModel& model, const FeatureMatrix& m);

struct FeatureImportanceRow {
    std::size_t step = 0;  // 1-based
    std::string feature;
    double candidate_r2 = 0;
    bool selected = false;
};

std::vector<FeatureImportanceRow> feature_importance_steps(const S3dModel& model);

struct LambdaScore {
    double lambda = 0;
    double cv_mse = 0;
    std::vector<double> fold_mse;
};

struct LambdaSearch {
    double best_lambda = 0;
    std::vector<LambdaScore> scores;
};

// Fold of each row: a seeded shuffle, then position mod k.
std::vector<std::size_t> fold_assignment(std::size_t n, std::size_t k, std::uint64_t seed);

// Ties in mean held-out error go to the larger lambda.
LambdaSearch cross_validate_lambda(const FeatureMatrix& m, std::string_view response, std::span<const double> grid,
                                   const S3dConfig& config, std::uint64_t seed);

const std::vector<std::string>& s3d_default_features(Mode mode);

std::string serialize_cells(const S3dModel& model);

}  // namespace collab
