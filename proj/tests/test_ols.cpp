#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "collab/error.hpp"
#include "collab/ols.hpp"
#include "collab/stats.hpp"
#include "oracles.hpp"

using namespace collab;

namespace {

FeatureMatrix random_design(std::mt19937_64& rng, std::size_t n, std::size_t k, double noise) {
    std::vector<std::string> cols = {"y"};
    for (std::size_t j = 0; j < k; ++j) cols.push_back("x" + std::to_string(j));
    FeatureMatrix m(cols, n);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<double> beta(k + 1);
    for (auto& b : beta) b = 3.0 * z(rng);
    for (std::size_t r = 0; r < n; ++r) {
        double y = beta[0];
        for (std::size_t j = 0; j < k; ++j) {
            m.at(r, j + 1) = z(rng) * (1.0 + double(j));
            y += beta[j + 1] * m.at(r, j + 1);
        }
        m.at(r, 0) = y + noise * z(rng);
    }
    return m;
}

std::vector<double> oracle_fit(const FeatureMatrix& m) {
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        std::vector<double> row = {1.0};
        for (std::size_t c = 1; c < m.cols(); ++c) row.push_back(m.at(r, c));
        x.push_back(row);
        y.push_back(m.at(r, 0));
    }
    return oracle::normal_equations(x, y);
}

}  // namespace

TEST_CASE("percentile and stats helpers") {
    std::vector<double> v(100);
    std::iota(v.begin(), v.end(), 1.0);
    CHECK(percentile(v, 95) == doctest::Approx(95.05));
    CHECK(percentile(v, 0) == 1);
    CHECK(percentile(v, 100) == 100);
    CHECK(mean(v) == 50.5);
    CHECK(std::isnan(pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3})));
    CHECK(normal_two_sided_p(1.959963984540054) == doctest::Approx(0.05).epsilon(1e-9));
    CHECK(student_t_two_sided_p(0.0, 10) == 1.0);
}

TEST_CASE("min-max scaling") {
    FeatureMatrix m({"a", "b"});
    m.add_row(std::vector<double>{0, 0});
    m.add_row(std::vector<double>{5, 0.5});
    m.add_row(std::vector<double>{10, 1});
    const auto s = min_max_scale(m);
    CHECK(s.matrix.column("a") == std::vector<double>{0, 0.5, 1});
    CHECK(s.matrix.column("b") == std::vector<double>{0, 0.5, 1});

    FeatureMatrix c({"k"});
    c.add_row(std::vector<double>{2});
    c.add_row(std::vector<double>{2});
    CHECK_THROWS_WITH(min_max_scale(c), doctest::Contains("'k'"));

    std::mt19937_64 rng(1);
    std::normal_distribution<double> z(10.0, 40.0);
    FeatureMatrix r({"u", "v"});
    for (int i = 0; i < 200; ++i) r.add_row(std::vector<double>{z(rng), z(rng)});
    const auto rs = min_max_scale(r);
    const auto back = rs.scaler.inverse(rs.matrix);
    for (std::size_t i = 0; i < r.rows(); ++i) {
        for (std::size_t j = 0; j < 2; ++j) CHECK(std::fabs(back.at(i, j) - r.at(i, j)) < 1e-12);
    }
}

TEST_CASE("correlated predictors are pruned by priority") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> z;
    FeatureMatrix m({"x1", "x2", "x3"});
    for (int i = 0; i < 100; ++i) {
        const double a = z(rng);
        m.add_row(std::vector<double>{a, 2 * a, z(rng)});
    }
    const auto p = prune_correlated(m);
    CHECK(p.kept == std::vector<std::string>{"x1", "x3"});
    REQUIRE(p.removed.size() == 1);
    CHECK(p.removed[0].column == "x2");
    CHECK(p.removed[0].correlated_with == "x1");

    FeatureMatrix d({"a", "b", "c"});
    for (int i = 0; i < 50; ++i) {
        const double a = z(rng);
        d.add_row(std::vector<double>{a, a, a});
    }
    CHECK(prune_correlated(d).kept.size() == 1);

    FeatureMatrix ind({"a", "b", "c", "d"});
    for (int i = 0; i < 10000; ++i) ind.add_row(std::vector<double>{z(rng), z(rng), z(rng), z(rng)});
    CHECK(prune_correlated(ind).removed.empty());
}

TEST_CASE("p95 outlier filter") {
    std::vector<double> v(100);
    std::iota(v.begin(), v.end(), 1.0);
    const auto keep = outlier_keep_indices(v);
    CHECK(keep.size() == 95);
    CHECK(v[keep.back()] == 95);

    std::vector<double> same(10, 4.0);
    CHECK(outlier_keep_indices(same).size() == 10);

    std::mt19937_64 rng(3);
    std::exponential_distribution<double> e(0.2);
    std::vector<double> r(537);
    for (auto& x : r) x = e(rng);
    auto sorted = r;
    std::sort(sorted.begin(), sorted.end());
    const double pos = 0.95 * (double(sorted.size()) - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const double cut = sorted[lo] + (pos - double(lo)) * (sorted[lo + 1] - sorted[lo]);
    std::vector<std::size_t> want;
    for (std::size_t i = 0; i < r.size(); ++i) {
        if (r[i] <= cut) want.push_back(i);
    }
    CHECK(outlier_keep_indices(r) == want);
}

TEST_CASE("exact line") {
    FeatureMatrix m({"y", "x"});
    for (int i = 0; i < 10; ++i) m.add_row(std::vector<double>{3.0 + 2.0 * i, double(i)});
    const auto f = fit_ols(m, "y");
    CHECK(f.coefficient("intercept").estimate == doctest::Approx(3.0));
    CHECK(f.coefficient("x").estimate == doctest::Approx(2.0));
    CHECK(std::fabs(f.r2 - 1.0) < 1e-12);
}

TEST_CASE("coefficients match the normal-equations oracle") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const auto m = random_design(rng, 50, 3, 1.0);
        const auto f = fit_ols(m, "y");
        const auto b = oracle_fit(m);
        for (std::size_t j = 0; j < b.size(); ++j) {
            CHECK(std::fabs(f.coefficients[j].estimate - b[j]) < 1e-8 * std::max(1.0, std::fabs(b[j])));
        }
    }
}

TEST_CASE("standard errors match sigma^2 (X'X)^-1") {
    std::mt19937_64 rng(5);
    const auto m = random_design(rng, 40, 2, 0.7);
    const auto f = fit_ols(m, "y");
    Eigen::MatrixXd x(40, 3);
    for (int r = 0; r < 40; ++r) {
        x(r, 0) = 1;
        x(r, 1) = m.at(r, 1);
        x(r, 2) = m.at(r, 2);
    }
    const Eigen::MatrixXd inv = (x.transpose() * x).inverse();
    for (int j = 0; j < 3; ++j) {
        CHECK(f.coefficients[j].std_error == doctest::Approx(std::sqrt(f.sigma2 * inv(j, j))).epsilon(1e-9));
        CHECK(f.coefficients[j].p_value ==
              doctest::Approx(student_t_two_sided_p(f.coefficients[j].statistic, 37)).epsilon(1e-12));
    }
    CHECK(f.dof == 37);
}

TEST_CASE("residuals are orthogonal to every column and row order does not matter") {
    std::mt19937_64 rng(6);
    const auto m = random_design(rng, 80, 4, 2.0);
    const auto f = fit_ols(m, "y");
    for (std::size_t c = 1; c < m.cols(); ++c) {
        const auto col = m.column(c);
        double dot = 0, norm = 0, rn = 0;
        for (std::size_t r = 0; r < m.rows(); ++r) {
            dot += col[r] * f.residuals[r];
            norm += col[r] * col[r];
            rn += f.residuals[r] * f.residuals[r];
        }
        CHECK(std::fabs(dot) / std::sqrt(norm * rn) < 1e-8);
    }
    std::vector<std::size_t> perm(m.rows());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto g = fit_ols(m.select_rows(perm), "y");
    for (std::size_t j = 0; j < f.coefficients.size(); ++j) {
        CHECK(g.coefficients[j].estimate == doctest::Approx(f.coefficients[j].estimate).epsilon(1e-10));
    }
}

TEST_CASE("a zero-amplitude extra column leaves exact-fit coefficients alone") {
    std::mt19937_64 rng(7);
    const auto m = random_design(rng, 30, 2, 0.0);
    const auto f = fit_ols(m, "y");
    std::vector<std::string> cols = m.columns();
    cols.push_back("extra");
    FeatureMatrix e(cols, m.rows());
    std::normal_distribution<double> z;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) e.at(r, c) = m.at(r, c);
        e.at(r, m.cols()) = z(rng);  // unrelated to y
    }
    const auto g = fit_ols(e, "y");
    for (std::size_t j = 0; j < f.coefficients.size(); ++j) {
        CHECK(std::fabs(g.coefficients[j].estimate - f.coefficients[j].estimate) < 1e-6);
    }
    CHECK(std::fabs(g.coefficient("extra").estimate) < 1e-6);
}

TEST_CASE("rank deficiency names the collinear columns") {
    FeatureMatrix m({"y", "a", "b"});
    for (int i = 0; i < 10; ++i) m.add_row(std::vector<double>{double(i * i), double(i), 2.0 * i});
    CHECK_THROWS_WITH(fit_ols(m, "y"), doctest::Contains("collinear"));
    CHECK_FALSE(find_collinear_columns(m.drop_column("y")).empty());
    FeatureMatrix tiny({"y", "a"});
    tiny.add_row(std::vector<double>{1, 1});
    tiny.add_row(std::vector<double>{2, 3});
    CHECK_THROWS(fit_ols(tiny, "y"));
}

TEST_CASE("planted positive size effect is significant") {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> size(1, 20);
    std::normal_distribution<double> z;
    FeatureMatrix m({"mean_work", "group_size", "effective_size", "watchers"});
    for (int i = 0; i < 2000; ++i) {
        const double n = size(rng);
        const double eff = 1 + (n - 1) * std::uniform_real_distribution<double>(0.2, 1.0)(rng);
        const double watch = std::exp(z(rng));
        m.add_row(std::vector<double>{10 + 0.9 * n + 0.3 * watch + 3 * z(rng), n, eff, watch});
    }
    OlsOptions opt;
    const auto rep = run_ols(m, "mean_work", {"group_size", "effective_size", "watchers"}, opt);
    const auto& c = rep.fit.coefficient("group_size");
    CHECK(c.estimate > 0);
    CHECK(c.p_value < 0.005);
    CHECK(rep.rows_used < rep.rows_in);
    // effective size tracks group size closely and is pruned
    REQUIRE(rep.pruned.size() == 1);
    CHECK(rep.pruned[0].column == "effective_size");
}
