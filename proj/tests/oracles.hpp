#pragma once

// Reference computations used only by the tests. Each one takes a different
// route from the library code it checks: dense matrices instead of
// per-group closed forms, normal equations instead of QR, enumeration
// instead of dynamic programming.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

// Solves (X'X) b = X'y by Gaussian elimination with partial pivoting in
// long double. X includes any intercept column.
inline std::vector<double> normal_equations(const std::vector<std::vector<double>>& x, const std::vector<double>& y) {
    const std::size_t k = x.front().size();
    std::vector<std::vector<long double>> a(k, std::vector<long double>(k + 1, 0.0L));
    for (std::size_t r = 0; r < x.size(); ++r) {
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < k; ++j) a[i][j] += static_cast<long double>(x[r][i]) * x[r][j];
            a[i][k] += static_cast<long double>(x[r][i]) * y[r];
        }
    }
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < k; ++r) {
            if (std::fabs(a[r][c]) > std::fabs(a[piv][c])) piv = r;
        }
        std::swap(a[c], a[piv]);
        for (std::size_t r = 0; r < k; ++r) {
            if (r == c) continue;
            const long double f = a[r][c] / a[c][c];
            for (std::size_t j = c; j <= k; ++j) a[r][j] -= f * a[c][j];
        }
    }
    std::vector<double> b(k);
    for (std::size_t i = 0; i < k; ++i) b[i] = static_cast<double>(a[i][k] / a[i][i]);
    return b;
}

// Dense covariance s2 I + su2 Z Z' for group labels.
inline Eigen::MatrixXd marginal_cov(const std::vector<int>& group, double su2, double s2) {
    const auto n = static_cast<Eigen::Index>(group.size());
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (group[static_cast<std::size_t>(i)] == group[static_cast<std::size_t>(j)]) v(i, j) += su2;
        }
        v(i, i) += s2;
    }
    return v;
}

// Exact multivariate normal log density of y ~ N(X b, V).
inline double mvn_log_density(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, const Eigen::VectorXd& b,
                              const Eigen::MatrixXd& v) {
    const Eigen::VectorXd r = y - x * b;
    const double n = static_cast<double>(y.size());
    return -0.5 * (n * std::log(2.0 * std::numbers::pi) + std::log(v.determinant()) +
                   r.dot(v.inverse() * r));
}

// Restricted log-likelihood at (su2, s2), beta at its GLS value.
inline double reml_dense(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, const std::vector<int>& group, double su2,
                         double s2) {
    const Eigen::MatrixXd v = marginal_cov(group, su2, s2);
    const Eigen::MatrixXd vi = v.inverse();
    const Eigen::MatrixXd xvx = x.transpose() * vi * x;
    const Eigen::VectorXd b = xvx.inverse() * (x.transpose() * vi * y);
    const Eigen::VectorXd r = y - x * b;
    const double n = static_cast<double>(y.size());
    const double p = static_cast<double>(x.cols());
    return -0.5 * ((n - p) * std::log(2.0 * std::numbers::pi) + std::log(v.determinant()) +
                   std::log(xvx.determinant()) + r.dot(vi * r));
}

// Maximizes f over a box by repeated grid scans, shrinking the box around
// the best point each round.
inline double zoom_maximize(const std::function<double(const std::vector<double>&)>& f, std::vector<double> lo,
                            std::vector<double> hi, int points, int rounds, std::vector<double>* argmax = nullptr) {
    const std::size_t d = lo.size();
    std::vector<double> best_x(d);
    double best = -std::numeric_limits<double>::infinity();
    std::vector<int> idx(d);
    std::vector<double> pt(d);
    for (int round = 0; round < rounds; ++round) {
        std::fill(idx.begin(), idx.end(), 0);
        while (true) {
            for (std::size_t i = 0; i < d; ++i) pt[i] = lo[i] + (hi[i] - lo[i]) * idx[i] / (points - 1);
            const double v = f(pt);
            if (v > best) {
                best = v;
                best_x = pt;
            }
            std::size_t i = 0;
            while (i < d && ++idx[i] == points) idx[i++] = 0;
            if (i == d) break;
        }
        for (std::size_t i = 0; i < d; ++i) {
            const double w = (hi[i] - lo[i]) * 2.0 / (points - 1);
            lo[i] = best_x[i] - w;
            hi[i] = best_x[i] + w;
        }
    }
    if (argmax) *argmax = best_x;
    return best;
}

// Between-block sum of squares of y when sorted x is cut at `cuts`.
inline double between_ss(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& cuts) {
    std::vector<double> sum(cuts.size() + 1, 0.0), cnt(cuts.size() + 1, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const auto b = static_cast<std::size_t>(std::upper_bound(cuts.begin(), cuts.end(), x[i]) - cuts.begin());
        sum[b] += y[i];
        cnt[b] += 1.0;
        total += y[i];
    }
    const double mu = total / static_cast<double>(x.size());
    double ss = 0.0;
    for (std::size_t b = 0; b < sum.size(); ++b) {
        if (cnt[b] > 0.0) ss += cnt[b] * std::pow(sum[b] / cnt[b] - mu, 2);
    }
    return ss;
}

struct CutSearch {
    std::vector<double> cuts;
    double gain = 0;  // unpenalized between SS of the chosen cuts
};

// Enumerates every subset of midpoints between distinct sorted values with at
// most max_blocks - 1 cuts; maximizes between SS - penalty * cuts.
inline CutSearch exhaustive_cuts(const std::vector<double>& x, const std::vector<double>& y, std::size_t max_blocks,
                                 double penalty) {
    std::vector<double> v = x;
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    std::vector<double> mids;
    for (std::size_t i = 1; i < v.size(); ++i) mids.push_back(0.5 * (v[i - 1] + v[i]));
    CutSearch best;
    double best_obj = 0.0;
    const std::size_t m = mids.size();
    std::vector<double> cuts;
    // Depth-first over increasing cut indices.
    std::function<void(std::size_t)> rec = [&](std::size_t start) {
        if (!cuts.empty()) {
            const double g = between_ss(x, y, cuts);
            const double obj = g - penalty * static_cast<double>(cuts.size());
            if (obj > best_obj * (1.0 + 1e-12) + 1e-300) {
                best_obj = obj;
                best.cuts = cuts;
                best.gain = g;
            }
        }
        if (cuts.size() + 1 >= max_blocks) return;
        for (std::size_t i = start; i < m; ++i) {
            cuts.push_back(mids[i]);
            rec(i + 1);
            cuts.pop_back();
        }
    };
    rec(0);
    return best;
}

}  // namespace oracle
