#include <doctest.h>

#include <cmath>
#include <random>
#include <map>
#include <set>

#include "collab/error.hpp"
#include "collab/lme.hpp"
#include "collab/synth.hpp"
#include "oracles.hpp"

using namespace collab;

namespace {

struct Tiny {
    FeatureMatrix m{std::vector<std::string>{"y", "x"}};
    std::vector<std::string> keys;
    std::vector<int> group;
    Eigen::VectorXd y;
    Eigen::MatrixXd x;
};

// Two groups, two observations each.
Tiny tiny() {
    Tiny t;
    const double xs[] = {1, 2, 1, 3};
    const double ys[] = {1.0, 2.2, 5.0, 6.9};
    const int gs[] = {0, 0, 1, 1};
    t.y.resize(4);
    t.x.resize(4, 2);
    for (int i = 0; i < 4; ++i) {
        t.m.add_row(std::vector<double>{ys[i], xs[i]});
        t.keys.push_back(gs[i] == 0 ? "a" : "b");
        t.group.push_back(gs[i]);
        t.y(i) = ys[i];
        t.x(i, 0) = 1;
        t.x(i, 1) = xs[i];
    }
    return t;
}

const std::vector<std::string> kX = {"x"};
const std::vector<std::string> kN = {"group_size"};

PanelConfig linear_panel(std::uint64_t seed, double slope, std::size_t users = 5000) {
    PanelConfig pc;
    pc.seed = seed;
    pc.n_users = users;
    pc.curve.kind = ProductivityCurve::Kind::linear;
    pc.curve.intercept = 5;
    pc.curve.slope = slope;
    return pc;
}

std::vector<std::size_t> all_rows(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

}  // namespace

TEST_CASE("ML log-likelihood matches a dense multivariate-normal grid search") {
    const auto t = tiny();
    LmeOptions opt;
    opt.criterion = VarianceCriterion::ml;
    const auto fit = fit_random_intercept(t.m, "y", kX, t.keys, opt);
    CHECK_FALSE(fit.at_boundary);
    auto dense = [&](const std::vector<double>& p) {
        Eigen::VectorXd b(2);
        b << p[0], p[1];
        return oracle::mvn_log_density(t.y, t.x, b, oracle::marginal_cov(t.group, std::exp(p[2]), std::exp(p[3])));
    };
    std::vector<double> arg;
    const double best = oracle::zoom_maximize(dense, {-10, -5, -8, -12}, {15, 5, 6, 4}, 11, 60, &arg);
    CHECK(std::fabs(fit.log_likelihood - best) < 1e-4);
    CHECK(fit.coefficient("intercept").estimate == doctest::Approx(arg[0]).epsilon(1e-3));
    CHECK(fit.coefficient("x").estimate == doctest::Approx(arg[1]).epsilon(1e-3));
    CHECK(fit.random_variance == doctest::Approx(std::exp(arg[2])).epsilon(1e-2));
    CHECK(fit.residual_variance == doctest::Approx(std::exp(arg[3])).epsilon(1e-2));
}

TEST_CASE("REML log-likelihood matches the dense restricted likelihood") {
    const auto t = tiny();
    const auto fit = fit_random_intercept(t.m, "y", kX, t.keys);
    CHECK_FALSE(fit.at_boundary);
    auto dense = [&](const std::vector<double>& p) {
        return oracle::reml_dense(t.y, t.x, t.group, std::exp(p[0]), std::exp(p[1]));
    };
    std::vector<double> arg;
    const double best = oracle::zoom_maximize(dense, {-8, -12}, {8, 4}, 21, 60, &arg);
    CHECK(std::fabs(fit.log_likelihood - best) < 1e-4);
    CHECK(fit.random_variance == doctest::Approx(std::exp(arg[0])).epsilon(1e-3));

    // Pointwise agreement of the profiled curve at fixed theta.
    RandomInterceptModel model(t.m, "y", kX, t.keys);
    for (double theta : {0.0, 0.1, 1.0, 10.0, 100.0}) {
        auto at_theta = [&](const std::vector<double>& p) {
            const double s2 = std::exp(p[0]);
            return oracle::reml_dense(t.y, t.x, t.group, theta * s2, s2);
        };
        const double want = oracle::zoom_maximize(at_theta, {-12}, {6}, 41, 60);
        CHECK(std::fabs(model.profiled_log_likelihood(theta, VarianceCriterion::reml) - want) < 1e-6);
    }
}

TEST_CASE("zero intercept spread collapses to OLS") {
    auto pc = linear_panel(1, 2.786, 2000);
    pc.sigma_u = 0;
    pc.center_noise = true;
    const auto panel = generate_panel(pc);
    const auto idx = all_rows(panel.rows.size());
    const auto lme = fit_user_random_intercept(panel.rows, idx, "w", kN);
    const auto m = rows_to_matrix(panel.rows, std::vector<std::string>{"w", "group_size"});
    const auto ols = fit_ols(m, "w");
    CHECK(std::fabs(lme.coefficient("group_size").estimate - ols.coefficient("group_size").estimate) < 1e-6);
    CHECK(std::fabs(lme.coefficient("intercept").estimate - ols.coefficient("intercept").estimate) < 1e-6);
    CHECK(lme.random_variance < 1e-4);
}

TEST_CASE("planted slope is recovered within 2 SE on most seeds") {
    int covered = 0;
    const int seeds = 20;
    for (int s = 1; s <= seeds; ++s) {
        const auto panel = generate_panel(linear_panel(static_cast<std::uint64_t>(s), 0.066, 1000));
        const auto fit = fit_user_random_intercept(panel.rows, all_rows(panel.rows.size()), "w", kN);
        const auto& c = fit.coefficient("group_size");
        if (std::fabs(c.estimate - 0.066) <= 2 * c.std_error) ++covered;
        CHECK(fit.random_variance == doctest::Approx(1.0).epsilon(0.3));
    }
    // Nominal coverage is 95%; 17 of 20 has probability > 0.98.
    CHECK(covered >= 17);
}

TEST_CASE("adding a constant to the response moves only the intercept") {
    const auto panel = generate_panel(linear_panel(3, 1.5, 500));
    auto shifted = panel.rows;
    for (auto& r : shifted) r.w += 123.0;
    const auto idx = all_rows(panel.rows.size());
    const auto a = fit_user_random_intercept(panel.rows, idx, "w", kN);
    const auto b = fit_user_random_intercept(shifted, idx, "w", kN);
    CHECK(std::fabs(a.coefficient("group_size").estimate - b.coefficient("group_size").estimate) < 1e-8);
    CHECK(std::fabs(a.coefficient("group_size").std_error - b.coefficient("group_size").std_error) < 1e-8);
    CHECK(std::fabs(a.random_variance - b.random_variance) < 1e-8);
    CHECK(std::fabs(a.residual_variance - b.residual_variance) < 1e-8);
    CHECK(b.coefficient("intercept").estimate - a.coefficient("intercept").estimate == doctest::Approx(123.0));
}

TEST_CASE("returned theta beats 64 random probes") {
    const auto panel = generate_panel(linear_panel(4, 2.0, 400));
    const auto m = rows_to_matrix(panel.rows, std::vector<std::string>{"w", "group_size"});
    std::vector<std::string> keys;
    for (const auto& r : panel.rows) keys.push_back(r.user_id);
    RandomInterceptModel model(m, "w", kN, keys);
    const auto fit = model.fit();
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(std::log(1e-8), std::log(1e8));
    for (int i = 0; i < 64; ++i) {
        CHECK(fit.log_likelihood >= model.profiled_log_likelihood(std::exp(u(rng)), VarianceCriterion::reml) - 1e-9);
    }
    CHECK(fit.log_likelihood >= model.profiled_log_likelihood(0.0, VarianceCriterion::reml) - 1e-9);
}

TEST_CASE("noise-free duplicated observations give exact predictions") {
    FeatureMatrix m({"y", "x"});
    std::vector<std::string> keys;
    for (int g = 0; g < 6; ++g) {
        for (int rep = 0; rep < 2; ++rep) {
            for (int x = 1; x <= 3; ++x) {
                m.add_row(std::vector<double>{2.0 + 0.5 * x + g, double(x + g % 2)});
                keys.push_back("g" + std::to_string(g));
            }
        }
    }
    const auto fit = fit_random_intercept(m, "y", kX, keys);
    // The ratio search stops at theta_max, so sigma^2 only falls to about
    // (between-group spread) / theta_max rather than to zero.
    double my = 0, vy = 0;
    for (std::size_t r = 0; r < m.rows(); ++r) my += m.at(r, 0) / double(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) vy += (m.at(r, 0) - my) * (m.at(r, 0) - my) / double(m.rows() - 1);
    CHECK(fit.theta >= LmeOptions{}.theta_max * 0.5);
    CHECK(fit.residual_variance < 1e-6 * vy);
    CHECK(fit.coefficient("x").estimate == doctest::Approx(0.5).epsilon(1e-8));
}

TEST_CASE("unidentifiable data is rejected") {
    FeatureMatrix m({"y", "x"});
    std::vector<std::string> keys;
    for (int i = 0; i < 5; ++i) {
        m.add_row(std::vector<double>{double(i), double(i * i)});
        keys.push_back("g" + std::to_string(i));
    }
    CHECK_THROWS_AS(fit_random_intercept(m, "y", kX, keys), Error);
    std::vector<std::string> one(5, "same");
    CHECK_THROWS_AS(fit_random_intercept(m, "y", kX, one), Error);
}

TEST_CASE("eligibility filter") {
    std::vector<std::string> keys = {"eq", "eq", "diff", "diff", "single"};
    std::vector<double> sizes = {2, 2, 2, 3, 4};
    CHECK(filter_eligible(keys, sizes) == std::vector<std::size_t>{2, 3});
}

TEST_CASE("binning") {
    SUBCASE("one bin per user") {
        std::vector<UserProjectRow> rows;
        for (int i = 0; i < 20; ++i) {
            UserProjectRow r;
            r.user_id = "u" + std::to_string(i % 7);
            rows.push_back(r);
        }
        CHECK(bin_users(rows, {BinAttribute::user_id, 5}).bins.size() == 7);
    }
    SUBCASE("quintiles of user work") {
        std::vector<UserProjectRow> rows(1000);
        std::mt19937_64 rng(1);
        std::normal_distribution<double> z(50, 10);
        for (auto& r : rows) r.user_work = z(rng);
        const auto b = bin_users(rows, {BinAttribute::user_work, 5});
        CHECK(b.bins.size() == 5);
        for (const auto& [_, idx] : b.bins) CHECK(std::abs(int(idx.size()) - 200) <= 1);
        CHECK(b.warning.empty());
    }
    SUBCASE("per-value bins for project counts") {
        std::vector<UserProjectRow> rows(4);
        const double v[] = {1, 2, 2, 9};
        for (int i = 0; i < 4; ++i) rows[i].n_projects = v[i];
        CHECK(bin_users(rows, {BinAttribute::n_projects, 5}).bins.size() == 3);
    }
    SUBCASE("too few distinct values falls back with a warning") {
        std::vector<UserProjectRow> rows(10);
        for (int i = 0; i < 10; ++i) rows[i].followers = i % 3;
        const auto b = bin_users(rows, {BinAttribute::followers, 5});
        CHECK(b.bins.size() == 3);
        CHECK_FALSE(b.warning.empty());
    }
    CHECK(parse_bin_attribute("G_s") == BinAttribute::n_projects);
    CHECK(parse_bin_attribute("w_j") == BinAttribute::user_work);
    CHECK(parse_bin_attribute("F_l") == BinAttribute::followers);
    CHECK_THROWS(parse_bin_attribute("nonsense"));
}

TEST_CASE("binned fits") {
    SUBCASE("user_id mode equals a single fit") {
        const auto panel = generate_panel(linear_panel(5, 2.786, 800));
        const auto r = fit_binned(panel.rows, {BinAttribute::user_id, 5});
        const auto idx = filter_eligible(panel.rows, all_rows(panel.rows.size()));
        const auto f = fit_user_random_intercept(panel.rows, idx, "w", kN);
        CHECK(r.pooled_beta == f.coefficient("group_size").estimate);
        CHECK(r.pooled_se == f.coefficient("group_size").std_error);
    }
    SUBCASE("two bins with slopes 1 and 3 pool to about 2") {
        auto a = generate_panel(linear_panel(6, 1.0, 2000)).rows;
        auto b = generate_panel(linear_panel(7, 3.0, 2000)).rows;
        for (auto& r : a) r.n_projects = 1;
        for (auto& r : b) {
            r.n_projects = 2;
            r.user_id += "b";
        }
        a.insert(a.end(), b.begin(), b.end());
        const auto res = fit_binned(a, {BinAttribute::n_projects, 5});
        CHECK(res.bins.size() == 2);
        CHECK(res.bin_count == 2);
        CHECK(std::fabs(res.pooled_beta - 2.0) < 0.05 + 2 * res.pooled_se);
        // Hand-weighted mean of the per-bin estimates.
        double num = 0, den = 0;
        for (const auto& bin : res.bins) {
            num += double(bin.fit->n_obs) * bin.fit->coefficient("group_size").estimate;
            den += double(bin.fit->n_obs);
        }
        CHECK(res.pooled_beta == doctest::Approx(num / den).epsilon(1e-12));
    }
    SUBCASE("uniform small slope across quintile bins") {
        const auto panel = generate_panel(linear_panel(8, 0.066, 5000));
        auto rows = panel.rows;
        std::mt19937_64 rng(8);
        std::normal_distribution<double> z(100, 20);
        std::map<std::string, double> fl;
        for (auto& r : rows) {
            if (!fl.count(r.user_id)) fl[r.user_id] = std::round(z(rng));
            r.followers = fl[r.user_id];
        }
        const auto res = fit_binned(rows, {BinAttribute::followers, 5});
        CHECK(res.bin_count == 5);
        CHECK(std::fabs(res.pooled_beta - 0.066) <= 2 * res.pooled_se);
    }
}
