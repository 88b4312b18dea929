#include "collab/lme.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <unordered_map>

#include "collab/error.hpp"
#include "collab/stats.hpp"

namespace collab {

VarianceCriterion parse_criterion(std::string_view text) {
    if (text == "reml") return VarianceCriterion::reml;
    if (text == "ml") return VarianceCriterion::ml;
    throw InputError("unknown variance criterion '" + std::string(text) + "' (expected reml or ml)");
}

std::string to_string(VarianceCriterion criterion) {
    return criterion == VarianceCriterion::reml ? "reml" : "ml";
}

const Coefficient& LmeFit::coefficient(std::string_view name) const {
    for (const auto& c : fixed) {
        if (c.name == name) return c;
    }
    throw Error("no fixed effect named '" + std::string(name) + "'");
}

namespace {

constexpr double kMinQ = std::numeric_limits<double>::min();

}  // namespace

RandomInterceptModel::RandomInterceptModel(const FeatureMatrix& data, std::string_view response,
                                           std::span<const std::string> fixed,
                                           std::span<const std::string> group_keys) {
    n_ = data.rows();
    if (group_keys.size() != n_) throw Error("one group key per row is required");
    const std::size_t p = fixed.size() + 1;
    if (n_ <= p) throw Error("mixed model needs more observations than fixed effects");

    const FeatureMatrix predictors = data.select_columns(fixed);
    if (auto collinear = find_collinear_columns(predictors); !collinear.empty()) {
        std::string msg = "rank-deficient fixed-effect design; collinear columns:";
        for (const auto& c : collinear) msg += " " + c;
        throw Error(msg);
    }

    names_.push_back("intercept");
    names_.insert(names_.end(), fixed.begin(), fixed.end());

    const auto pn = static_cast<Eigen::Index>(p);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n_), pn);
    Eigen::VectorXd y(static_cast<Eigen::Index>(n_));
    const std::size_t ycol = data.column_index(response);
    for (std::size_t r = 0; r < n_; ++r) {
        const auto ri = static_cast<Eigen::Index>(r);
        x(ri, 0) = 1.0;
        for (std::size_t c = 0; c < fixed.size(); ++c) x(ri, static_cast<Eigen::Index>(c + 1)) = predictors.at(r, c);
        y(ri) = data.at(r, ycol);
    }
    // centred response: keeps the sums of squares free of cancellation
    y_mean_ = y.mean();
    y.array() -= y_mean_;
    norms_ = x.colwise().norm().transpose();
    for (Eigen::Index c = 0; c < pn; ++c) x.col(c) /= norms_(c);

    std::unordered_map<std::string, std::size_t> level;
    std::vector<std::size_t> group_of(n_);
    for (std::size_t r = 0; r < n_; ++r) {
        auto [it, inserted] = level.try_emplace(group_keys[r], level.size());
        group_of[r] = it->second;
    }
    const std::size_t g = level.size();
    if (g < 2) throw Error("mixed model needs at least two grouping levels");

    group_sizes_.assign(g, 0.0);
    group_x_sums_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(g), pn);
    group_y_sums_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g));
    for (std::size_t r = 0; r < n_; ++r) {
        const auto gi = static_cast<Eigen::Index>(group_of[r]);
        group_sizes_[group_of[r]] += 1.0;
        group_x_sums_.row(gi) += x.row(static_cast<Eigen::Index>(r));
        group_y_sums_(gi) += y(static_cast<Eigen::Index>(r));
    }
    if (std::all_of(group_sizes_.begin(), group_sizes_.end(), [](double s) { return s < 2.0; })) {
        throw Error("mixed model is not identifiable: every grouping level is a singleton");
    }
    xtx_ = x.transpose() * x;
    xty_ = x.transpose() * y;
    yty_ = y.squaredNorm();
    x_ = std::move(x);
    y_ = std::move(y);
    group_of_ = std::move(group_of);
}

double RandomInterceptModel::exact_quadratic(const Profile& pr, double theta) const {
    const Eigen::VectorXd r = y_ - x_ * pr.beta;
    std::vector<double> sums(group_sizes_.size(), 0.0);
    for (std::size_t i = 0; i < n_; ++i) sums[group_of_[i]] += r(static_cast<Eigen::Index>(i));
    double q = r.squaredNorm();
    for (std::size_t g = 0; g < sums.size(); ++g) q -= theta / (1.0 + group_sizes_[g] * theta) * sums[g] * sums[g];
    return std::max(q, kMinQ);
}

RandomInterceptModel::Profile RandomInterceptModel::profile(double theta) const {
    const auto g = static_cast<Eigen::Index>(group_sizes_.size());
    Eigen::VectorXd d(g);
    double log_det_h = 0.0;
    for (Eigen::Index i = 0; i < g; ++i) {
        const double ng = group_sizes_[static_cast<std::size_t>(i)];
        d(i) = theta / (1.0 + ng * theta);
        log_det_h += std::log1p(ng * theta);
    }
    const Eigen::MatrixXd weighted = d.asDiagonal() * group_x_sums_;
    const Eigen::MatrixXd a = xtx_ - group_x_sums_.transpose() * weighted;
    const Eigen::VectorXd b = xty_ - weighted.transpose() * group_y_sums_;
    const double yhy = yty_ - (d.array() * group_y_sums_.array().square()).sum();

    Profile pr;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    pr.beta = ldlt.solve(b);
    pr.q = std::max(yhy - b.dot(pr.beta), kMinQ);
    pr.log_det_h = log_det_h;
    pr.log_det_a = ldlt.vectorD().array().abs().log().sum();
    pr.a_inv = ldlt.solve(Eigen::MatrixXd::Identity(a.rows(), a.cols()));
    return pr;
}

double RandomInterceptModel::log_likelihood_from(const Profile& pr, VarianceCriterion criterion) const {
    const double n = static_cast<double>(n_);
    const double p = static_cast<double>(names_.size());
    const double two_pi = 2.0 * std::numbers::pi;
    if (criterion == VarianceCriterion::ml) {
        return -0.5 * (n * (std::log(two_pi * pr.q / n) + 1.0) + pr.log_det_h);
    }
    // log|X'H^-1X| in the caller's column scale.
    const double log_det_a = pr.log_det_a + 2.0 * norms_.array().log().sum();
    return -0.5 * ((n - p) * (std::log(two_pi * pr.q / (n - p)) + 1.0) + pr.log_det_h + log_det_a);
}

double RandomInterceptModel::profiled_log_likelihood(double theta, VarianceCriterion criterion) const {
    if (!(theta >= 0.0)) throw Error("variance ratio must be nonnegative");
    return log_likelihood_from(profile(theta), criterion);
}

LmeFit RandomInterceptModel::fit(const LmeOptions& options, std::string grouping) const {
    if (!(options.theta_min > 0.0) || !(options.theta_max > options.theta_min) || options.grid_points < 3) {
        throw Error("invalid variance-ratio search settings");
    }
    auto objective = [&](double log_theta) {
        return profiled_log_likelihood(std::exp(log_theta), options.criterion);
    };

    const double lo = std::log(options.theta_min);
    const double hi = std::log(options.theta_max);
    const std::size_t m = options.grid_points;
    const double step = (hi - lo) / static_cast<double>(m - 1);
    std::size_t best = 0;
    double best_value = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
        const double v = objective(lo + step * static_cast<double>(i));
        if (v > best_value) {
            best_value = v;
            best = i;
        }
    }

    // Golden-section refinement inside the neighbouring grid cells.
    double a = lo + step * static_cast<double>(best == 0 ? 0 : best - 1);
    double b = lo + step * static_cast<double>(std::min(best + 1, m - 1));
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = objective(c);
    double fd = objective(d);
    while (b - a > options.tolerance) {
        if (fc >= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
    }
    double log_theta = fc >= fd ? c : d;
    double value = std::max(fc, fd);
    if (best_value > value) {
        log_theta = lo + step * static_cast<double>(best);
        value = best_value;
    }
    double theta = std::exp(log_theta);
    bool boundary = false;
    if (profiled_log_likelihood(0.0, options.criterion) >= value) {
        theta = 0.0;
        boundary = true;
    }

    Profile pr = profile(theta);
    pr.q = exact_quadratic(pr, theta);
    const double n = static_cast<double>(n_);
    const double p = static_cast<double>(names_.size());
    const double sigma2 = pr.q / (options.criterion == VarianceCriterion::reml ? n - p : n);

    LmeFit fit;
    fit.criterion = options.criterion;
    fit.grouping = std::move(grouping);
    fit.n_obs = n_;
    fit.n_groups = group_sizes_.size();
    fit.theta = theta;
    fit.at_boundary = boundary;
    fit.residual_variance = sigma2;
    fit.random_variance = theta * sigma2;
    fit.log_likelihood = log_likelihood_from(pr, options.criterion);
    for (std::size_t j = 0; j < names_.size(); ++j) {
        const auto ji = static_cast<Eigen::Index>(j);
        Coefficient coef;
        coef.name = names_[j];
        coef.estimate = pr.beta(ji) / norms_(ji) + (j == 0 ? y_mean_ : 0.0);
        coef.std_error = std::sqrt(std::max(0.0, sigma2 * pr.a_inv(ji, ji))) / norms_(ji);
        coef.statistic = coef.std_error > 0.0 ? coef.estimate / coef.std_error
                                              : (coef.estimate == 0.0 ? 0.0 : std::copysign(INFINITY, coef.estimate));
        coef.p_value = normal_two_sided_p(coef.statistic);
        fit.fixed.push_back(std::move(coef));
    }
    return fit;
}

LmeFit fit_random_intercept(const FeatureMatrix& data, std::string_view response,
                            std::span<const std::string> fixed, std::span<const std::string> group_keys,
                            const LmeOptions& options, std::string grouping) {
    return RandomInterceptModel(data, response, fixed, group_keys).fit(options, std::move(grouping));
}

LmeFit fit_user_random_intercept(std::span<const UserProjectRow> rows, std::span<const std::size_t> indices,
                                 const std::string& response, const std::vector<std::string>& fixed,
                                 const LmeOptions& options) {
    std::vector<std::string> columns = {response};
    columns.insert(columns.end(), fixed.begin(), fixed.end());
    FeatureMatrix m(columns, indices.size());
    std::vector<std::string> keys;
    keys.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto& row = rows[indices[r]];
        for (std::size_t c = 0; c < columns.size(); ++c) m.at(r, c) = row_feature(row, columns[c]);
        keys.push_back(row.user_id);
    }
    return fit_random_intercept(m, response, fixed, keys, options, "user_id");
}

std::vector<std::size_t> filter_eligible(std::span<const std::string> keys, std::span<const double> group_sizes) {
    if (keys.size() != group_sizes.size()) throw Error("keys and group sizes differ in length");
    struct Level {
        std::size_t count = 0;
        double lo = 0, hi = 0;
    };
    std::unordered_map<std::string_view, Level> levels;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        auto& l = levels[keys[i]];
        if (l.count == 0) {
            l.lo = l.hi = group_sizes[i];
        } else {
            l.lo = std::min(l.lo, group_sizes[i]);
            l.hi = std::max(l.hi, group_sizes[i]);
        }
        ++l.count;
    }
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        const auto& l = levels.at(keys[i]);
        if (l.count >= 2 && l.hi > l.lo) keep.push_back(i);
    }
    return keep;
}

std::vector<std::size_t> filter_eligible(std::span<const UserProjectRow> rows, std::span<const std::size_t> subset) {
    std::vector<std::string> keys;
    std::vector<double> sizes;
    keys.reserve(subset.size());
    sizes.reserve(subset.size());
    for (auto idx : subset) {
        keys.push_back(rows[idx].user_id);
        sizes.push_back(rows[idx].group_size);
    }
    std::vector<std::size_t> out;
    for (auto k : filter_eligible(keys, sizes)) out.push_back(subset[k]);
    return out;
}

BinAttribute parse_bin_attribute(std::string_view text) {
    if (text == "n_projects" || text == "G_s") return BinAttribute::n_projects;
    if (text == "user_work" || text == "w_j") return BinAttribute::user_work;
    if (text == "followers" || text == "F_l") return BinAttribute::followers;
    if (text == "user_id") return BinAttribute::user_id;
    throw InputError("unknown binning attribute '" + std::string(text) + "'");
}

std::string to_string(BinAttribute attribute) {
    switch (attribute) {
        case BinAttribute::n_projects: return "n_projects";
        case BinAttribute::user_work: return "user_work";
        case BinAttribute::followers: return "followers";
        case BinAttribute::user_id: return "user_id";
    }
    return "user_id";
}

namespace {

double bin_value(const UserProjectRow& row, BinAttribute attribute) {
    switch (attribute) {
        case BinAttribute::n_projects: return row.n_projects;
        case BinAttribute::user_work: return row.user_work;
        case BinAttribute::followers: return row.followers;
        case BinAttribute::user_id: break;
    }
    throw Error("user_id bins have no numeric value");
}

std::string value_key(double v) {
    // Zero-padded so lexical order follows numeric order for counts.
    char buf[48];
    if (v >= 0 && v < 1e12 && v == std::floor(v)) {
        std::snprintf(buf, sizeof buf, "v%012.0f", v);
    } else {
        std::snprintf(buf, sizeof buf, "v%.17g", v);
    }
    return buf;
}

}  // namespace

Binning bin_users(std::span<const UserProjectRow> rows, const BinSpec& spec) {
    Binning out;
    if (spec.attribute == BinAttribute::user_id) {
        for (std::size_t i = 0; i < rows.size(); ++i) out.bins[rows[i].user_id].push_back(i);
        return out;
    }
    std::vector<double> values(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) values[i] = bin_value(rows[i], spec.attribute);

    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    const auto distinct = static_cast<std::size_t>(std::unique(sorted.begin(), sorted.end()) - sorted.begin());

    bool per_value = spec.attribute == BinAttribute::n_projects;
    if (!per_value) {
        if (spec.bins < 2) throw Error("quantile binning needs at least two bins");
        if (distinct < spec.bins) {
            per_value = true;
            out.warning = "only " + std::to_string(distinct) + " distinct values for " + std::to_string(spec.bins) +
                          " bins; using one bin per value";
        }
    }
    if (per_value) {
        for (std::size_t i = 0; i < rows.size(); ++i) out.bins[value_key(values[i])].push_back(i);
        return out;
    }

    sorted = values;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> cuts;
    for (std::size_t k = 1; k < spec.bins; ++k) cuts.push_back(sorted[k * sorted.size() / spec.bins]);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto bin = static_cast<std::size_t>(std::upper_bound(cuts.begin(), cuts.end(), values[i]) - cuts.begin());
        char key[16];
        std::snprintf(key, sizeof key, "q%02zu", bin + 1);
        out.bins[key].push_back(i);
    }
    return out;
}

BinnedResult fit_binned(std::span<const UserProjectRow> rows, const BinSpec& spec, const BinnedOptions& options) {
    if (options.fixed.empty()) throw Error("binned fit needs at least one fixed effect");
    std::vector<UserProjectRow> kept;
    if (options.outlier_percentile) {
        std::vector<double> response(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) response[i] = row_feature(rows[i], options.response);
        for (auto idx : outlier_keep_indices(response, *options.outlier_percentile)) kept.push_back(rows[idx]);
        rows = kept;
    }

    BinnedResult result;
    result.spec = spec;
    result.coefficient = options.fixed.front();

    std::vector<std::size_t> all(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) all[i] = i;

    if (spec.attribute == BinAttribute::user_id) {
        const auto eligible = filter_eligible(rows, all);
        std::map<std::string, std::size_t> per_user;
        for (auto idx : eligible) ++per_user[rows[idx].user_id];
        BinFit bin;
        bin.bin = "all_users";
        bin.rows = rows.size();
        bin.eligible_rows = eligible.size();
        bin.users = per_user.size();
        try {
            bin.fit = fit_user_random_intercept(rows, eligible, options.response, options.fixed, options.lme);
        } catch (const Error& e) {
            bin.skip_reason = e.what();
        }
        result.bin_count = per_user.size();
        for (const auto& [user, count] : per_user) result.max_bin_size = std::max(result.max_bin_size, count);
        result.mean_bin_size =
            per_user.empty() ? 0.0 : static_cast<double>(eligible.size()) / static_cast<double>(per_user.size());
        if (bin.fit) {
            const auto& c = bin.fit->coefficient(result.coefficient);
            result.pooled_beta = c.estimate;
            result.pooled_se = c.std_error;
        }
        result.bins.push_back(std::move(bin));
        return result;
    }

    Binning binning = bin_users(rows, spec);
    result.warning = binning.warning;
    double total_obs = 0.0;
    for (auto& [id, indices] : binning.bins) {
        BinFit bin;
        bin.bin = id;
        bin.rows = indices.size();
        const auto eligible = filter_eligible(rows, indices);
        bin.eligible_rows = eligible.size();
        std::map<std::string, std::size_t> users;
        for (auto idx : eligible) ++users[rows[idx].user_id];
        bin.users = users.size();
        result.max_bin_size = std::max(result.max_bin_size, indices.size());
        try {
            bin.fit = fit_user_random_intercept(rows, eligible, options.response, options.fixed, options.lme);
            total_obs += static_cast<double>(bin.fit->n_obs);
        } catch (const Error& e) {
            bin.skip_reason = e.what();
        }
        result.bins.push_back(std::move(bin));
    }
    result.bin_count = result.bins.size();
    result.mean_bin_size = result.bins.empty() ? 0.0
                                               : static_cast<double>(rows.size()) / static_cast<double>(result.bin_count);
    if (total_obs > 0.0) {
        double var = 0.0;
        for (const auto& b : result.bins) {
            if (!b.fit) continue;
            const double weight = static_cast<double>(b.fit->n_obs) / total_obs;
            const auto& c = b.fit->coefficient(result.coefficient);
            result.pooled_beta += weight * c.estimate;
            var += weight * weight * c.std_error * c.std_error;
        }
        result.pooled_se = std::sqrt(var);
    } else {
        result.pooled_beta = result.pooled_se = std::nan("");
    }
    return result;
}

}  // namespace collab
