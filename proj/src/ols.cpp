#include "collab/ols.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "collab/error.hpp"
#include "collab/stats.hpp"

namespace collab {

FeatureMatrix MinMaxScaler::transform(const FeatureMatrix& m) const {
    FeatureMatrix out = m.select_columns(columns);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) = (out.at(r, c) - mins[c]) / (maxs[c] - mins[c]);
    }
    return out;
}

FeatureMatrix MinMaxScaler::inverse(const FeatureMatrix& m) const {
    FeatureMatrix out = m.select_columns(columns);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) = mins[c] + out.at(r, c) * (maxs[c] - mins[c]);
    }
    return out;
}

ScaledMatrix min_max_scale(const FeatureMatrix& m) {
    if (m.rows() == 0) throw Error("cannot scale an empty matrix");
    MinMaxScaler scaler;
    scaler.columns = m.columns();
    for (std::size_t c = 0; c < m.cols(); ++c) {
        double lo = m.at(0, c), hi = m.at(0, c);
        for (std::size_t r = 1; r < m.rows(); ++r) {
            lo = std::min(lo, m.at(r, c));
            hi = std::max(hi, m.at(r, c));
        }
        if (!(hi > lo)) throw Error("constant column '" + m.columns()[c] + "' cannot be min-max scaled");
        scaler.mins.push_back(lo);
        scaler.maxs.push_back(hi);
    }
    FeatureMatrix scaled = scaler.transform(m);
    return {std::move(scaled), std::move(scaler)};
}

PruneResult prune_correlated(const FeatureMatrix& m, double threshold) {
    PruneResult result;
    std::vector<std::vector<double>> kept_values;
    for (std::size_t c = 0; c < m.cols(); ++c) {
        const auto values = m.column(c);
        bool drop = false;
        for (std::size_t k = 0; k < kept_values.size(); ++k) {
            const double r = pearson(values, kept_values[k]);
            if (!std::isnan(r) && std::fabs(r) > threshold) {
                result.removed.push_back({m.columns()[c], result.kept[k], r});
                drop = true;
                break;
            }
        }
        if (!drop) {
            result.kept.push_back(m.columns()[c]);
            kept_values.push_back(values);
        }
    }
    result.matrix = m.select_columns(result.kept);
    return result;
}

std::vector<std::size_t> outlier_keep_indices(std::span<const double> values, double pct) {
    std::vector<std::size_t> keep;
    if (values.empty()) return keep;
    const double cut = percentile(values, pct);
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!(values[i] > cut)) keep.push_back(i);
    }
    return keep;
}

FeatureMatrix filter_outliers(const FeatureMatrix& m, std::string_view column, double pct) {
    if (m.rows() == 0) throw Error("outlier filter on an empty table");
    const auto keep = outlier_keep_indices(m.column(column), pct);
    return m.select_rows(keep);
}

const Coefficient& OlsFit::coefficient(std::string_view name) const {
    for (const auto& c : coefficients) {
        if (c.name == name) return c;
    }
    throw Error("no coefficient named '" + std::string(name) + "'");
}

namespace {

// Design with leading intercept column, each column scaled to unit norm.
struct Design {
    Eigen::MatrixXd x;
    Eigen::VectorXd norms;
    std::vector<std::string> names;
};

Design make_design(const FeatureMatrix& predictors) {
    const auto n = static_cast<Eigen::Index>(predictors.rows());
    const auto k = static_cast<Eigen::Index>(predictors.cols()) + 1;
    Design d;
    d.x.resize(n, k);
    d.x.col(0).setOnes();
    for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index c = 1; c < k; ++c) {
            d.x(r, c) = predictors.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c - 1));
        }
    }
    d.norms = d.x.colwise().norm().transpose();
    for (Eigen::Index c = 0; c < k; ++c) {
        if (d.norms(c) > 0.0) d.x.col(c) /= d.norms(c);
    }
    d.names.push_back("intercept");
    for (const auto& c : predictors.columns()) d.names.push_back(c);
    return d;
}

constexpr double kRankThreshold = 1e-10;

std::vector<std::string> collinear_from_qr(const Design& d, const Eigen::ColPivHouseholderQR<Eigen::MatrixXd>& qr) {
    std::vector<std::string> out;
    const auto rank = qr.rank();
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index i = rank; i < perm.size(); ++i) out.push_back(d.names[static_cast<std::size_t>(perm(i))]);
    // Zero columns are always dependent.
    for (Eigen::Index c = 0; c < d.norms.size(); ++c) {
        const auto& name = d.names[static_cast<std::size_t>(c)];
        if (d.norms(c) == 0.0 && std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
    }
    return out;
}

}  // namespace

std::vector<std::string> find_collinear_columns(const FeatureMatrix& predictors) {
    const Design d = make_design(predictors);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d.x);
    qr.setThreshold(kRankThreshold);
    return collinear_from_qr(d, qr);
}

OlsFit fit_ols(const FeatureMatrix& m, std::string_view response) {
    const FeatureMatrix predictors = m.drop_column(response);
    const auto y_values = m.column(response);
    const std::size_t n = m.rows();
    const std::size_t k = predictors.cols() + 1;
    if (n <= k) throw Error("OLS needs more observations than coefficients");

    const Design d = make_design(predictors);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d.x);
    qr.setThreshold(kRankThreshold);
    if (qr.rank() < static_cast<Eigen::Index>(k)) {
        std::string msg = "rank-deficient design; collinear columns:";
        for (const auto& c : collinear_from_qr(d, qr)) msg += " " + c;
        throw Error(msg);
    }
    const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(y_values.data(), static_cast<Eigen::Index>(n));
    const Eigen::VectorXd beta_scaled = qr.solve(y);
    const Eigen::VectorXd resid = y - d.x * beta_scaled;

    OlsFit fit;
    fit.n_obs = n;
    fit.dof = n - k;
    const double ssr = resid.squaredNorm();
    const double ybar = y.mean();
    const double sst = (y.array() - ybar).square().sum();
    fit.r2 = sst > 0.0 ? std::clamp(1.0 - ssr / sst, 0.0, 1.0) : 1.0;
    fit.sigma2 = ssr / static_cast<double>(fit.dof);
    fit.residuals.assign(resid.data(), resid.data() + resid.size());

    // (X'X)^-1 of the normalized design from R: (R'R)^-1 permuted back.
    const auto kk = static_cast<Eigen::Index>(k);
    const Eigen::MatrixXd r = qr.matrixR().topLeftCorner(kk, kk).template triangularView<Eigen::Upper>();
    const Eigen::MatrixXd r_inv = r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(kk, kk));
    const Eigen::MatrixXd cov_perm = r_inv * r_inv.transpose();
    const auto& perm = qr.colsPermutation();
    const Eigen::MatrixXd cov = perm * cov_perm * perm.transpose();

    for (Eigen::Index c = 0; c < kk; ++c) {
        Coefficient coef;
        coef.name = d.names[static_cast<std::size_t>(c)];
        coef.estimate = beta_scaled(c) / d.norms(c);
        coef.std_error = std::sqrt(std::max(0.0, fit.sigma2 * cov(c, c))) / d.norms(c);
        if (coef.std_error > 0.0) {
            coef.statistic = coef.estimate / coef.std_error;
        } else {
            coef.statistic = coef.estimate == 0.0 ? 0.0 : std::copysign(INFINITY, coef.estimate);
        }
        coef.p_value = student_t_two_sided_p(coef.statistic, static_cast<double>(fit.dof));
        fit.coefficients.push_back(std::move(coef));
    }
    return fit;
}

OlsReport run_ols(const FeatureMatrix& data, const std::string& response, const std::vector<std::string>& features,
                  const OlsOptions& options) {
    std::vector<std::string> columns = features;
    columns.insert(columns.begin(), response);
    FeatureMatrix m = data.select_columns(columns);
    OlsReport report;
    report.rows_in = m.rows();
    if (options.outlier_percentile) m = filter_outliers(m, response, *options.outlier_percentile);
    report.rows_used = m.rows();

    std::vector<std::string> usable;
    for (const auto& f : features) {
        const auto values = m.column(f);
        const bool constant = std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); });
        if (constant) {
            report.dropped_constant.push_back(f);
        } else {
            usable.push_back(f);
        }
    }

    FeatureMatrix predictors = m.select_columns(usable);
    const std::vector<std::string> response_col = {response};
    FeatureMatrix y = m.select_columns(response_col);
    if (options.scale && predictors.cols() > 0) predictors = min_max_scale(predictors).matrix;
    if (options.scale && options.scale_response) y = min_max_scale(y).matrix;

    PruneResult pruned = prune_correlated(predictors, options.prune_threshold);
    report.pruned = pruned.removed;

    std::vector<std::string> names = {response};
    for (const auto& c : pruned.kept) names.push_back(c);
    FeatureMatrix design(names, m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        design.at(r, 0) = y.at(r, 0);
        for (std::size_t c = 0; c < pruned.kept.size(); ++c) design.at(r, c + 1) = pruned.matrix.at(r, c);
    }
    report.fit = fit_ols(design, response);
    return report;
}

}  // namespace collab
