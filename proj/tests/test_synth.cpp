#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "collab/chained.hpp"
#include "collab/error.hpp"
#include "collab/io.hpp"
#include "collab/metrics.hpp"
#include "collab/scaling.hpp"
#include "collab/synth.hpp"

using namespace collab;
namespace fs = std::filesystem;

namespace {

SynthConfig small(std::uint64_t seed = 1) {
    SynthConfig c;
    c.seed = seed;
    c.n_users = 300;
    c.n_projects = 400;
    return c;
}

ProductivityCurve linear(double intercept, double slope) {
    ProductivityCurve c;
    c.kind = ProductivityCurve::Kind::linear;
    c.intercept = intercept;
    c.slope = slope;
    return c;
}

}  // namespace

TEST_CASE("curves") {
    ProductivityCurve p;
    CHECK(p(10) == doctest::Approx(11.588 * std::pow(10, 0.28)));
    CHECK(linear(5, 2)(4) == 11);
    ProductivityCurve pw;
    pw.kind = ProductivityCurve::Kind::piecewise_linear;
    CHECK(pw(7) == 5 + 4 * 6);
    CHECK(pw(9) == 5 + 4 * 6 + 2);
    ProductivityCurve ch;
    ch.kind = ProductivityCurve::Kind::chained_slopes;
    ch.intercept = 1;
    ch.slopes = {2, 1};
    CHECK(ch(1) == 1);
    CHECK(ch(2) == 3);
    CHECK(ch(4) == 5);
}

TEST_CASE("noiseless linear plant: a size-k member does exactly k") {
    auto c = small();
    c.curve = linear(1, 1);
    c.sigma = 0;
    c.sigma_u = 0;
    const auto corpus = generate(c);
    for (const auto& g : build_groups(corpus.events, {1000})) {
        for (const auto& [_, w] : g.member_work) CHECK(w == g.size);
    }
}

TEST_CASE("fixed seed gives byte-identical files") {
    const auto a = fs::temp_directory_path() / "collab_synth_a";
    const auto b = fs::temp_directory_path() / "collab_synth_b";
    auto c = small(7);
    c.n_bots = 3;
    c.redirect_fraction = 0.05;
    const auto first = generate(c);
    write_corpus(first, a);
    write_corpus(generate(c), b);
    for (const char* f : {"events.csv", "projects.csv", "users.csv", "bots.txt", "truth.json"}) {
        CHECK(read_text_file(a / f) == read_text_file(b / f));
    }
    c.seed = 8;
    const auto d = fs::temp_directory_path() / "collab_synth_d";
    write_corpus(generate(c), d);
    CHECK(read_text_file(a / "events.csv") != read_text_file(d / "events.csv"));

    // Emitted files load with zero malformed rows.
    const auto ev = load_events(a / "events.csv", EventFormat::csv);
    CHECK(ev.malformed.empty());
    CHECK(load_project_profiles(a / "projects.csv").size() == 420);
    CHECK(load_user_profiles(a / "users.csv").size() >= 300);
    CHECK(load_id_list(a / "bots.txt").size() == 3);
    const auto truth = load_truth(a / "truth.json");
    CHECK(truth.rows.size() == first.truth.rows.size());
    for (const auto& p : {a, b, d}) fs::remove_all(p);
}

TEST_CASE("group sizes follow the configured tail") {
    SynthConfig c;
    c.seed = 3;
    c.n_users = 5000;
    c.n_projects = 100000;
    c.curve = linear(1, 0);
    c.sigma = 0;
    c.sigma_u = 0;
    const auto corpus = generate(c);
    const auto hist = group_size_distribution(build_groups(corpus.events, {1000}));
    std::vector<Point> pts;
    std::int64_t total = 0;
    for (const auto& [n, count] : hist) {
        pts.push_back({double(n), double(count)});
        total += count;
    }
    CHECK(total == 100000);
    const auto fit = fit_power_law(pts, Aggregation::raw);
    CHECK(std::fabs(fit.alpha + c.size_exponent) < 0.1);
}

TEST_CASE("per-size mean work reproduces the curve") {
    SynthConfig c;
    c.seed = 4;
    c.n_users = 3000;
    c.n_projects = 10000;
    c.size_exponent = 0;  // uniform sizes
    c.size_cap = 10;
    const auto corpus = generate(c);
    std::map<int, std::vector<double>> net;  // work minus the user's intercept
    std::map<int, std::size_t> groups;
    for (const auto& r : corpus.truth.rows) {
        net[r.group_size].push_back(double(r.work) - corpus.truth.user_intercepts.at(r.user_id));
    }
    for (const auto& g : build_groups(corpus.events, {1000})) ++groups[int(g.size)];
    for (const auto& [n, v] : net) {
        CHECK(groups[n] >= 900);
        double m = 0, s = 0;
        for (double x : v) m += x;
        m /= double(v.size());
        for (double x : v) s += (x - m) * (x - m);
        const double se = std::sqrt(s / double(v.size() - 1) / double(v.size()));
        CHECK(std::fabs(m - c.curve(n)) <= 3 * se);
    }
}

TEST_CASE("generated rows satisfy the membership invariants") {
    const auto corpus = generate(small(5));
    const auto groups = build_groups(corpus.events, {1000});
    const auto rows = assemble_rows(groups, index_projects(corpus.projects), index_users(corpus.users));
    CHECK(rows.missing_project_profiles == 0);
    CHECK(rows.missing_user_profiles == 0);
    std::map<std::string, double> share;
    for (const auto& r : rows.rows) {
        CHECK(r.w >= 1);
        share[r.user_id] += r.focus_share;
    }
    for (const auto& [_, s] : share) CHECK(std::fabs(s - 1) < 1e-12);
    // Truth rows and windowed memberships agree on work.
    std::map<std::pair<std::string, std::string>, std::int64_t> truth;
    for (const auto& t : corpus.truth.rows) truth[{t.user_id, t.project_id}] = t.work;
    CHECK(truth.size() == rows.rows.size());
    for (const auto& r : rows.rows) CHECK(double(truth.at({r.user_id, r.project_id})) == r.w);
}

TEST_CASE("infeasible and invalid configurations") {
    auto c = small();
    c.n_users = 10;
    CHECK_THROWS_AS(generate(c), Error);
    c = small();
    c.sigma = -1;
    CHECK_THROWS_AS(generate(c), Error);
    c = small();
    c.confounds["group_size"] = 1;
    CHECK_THROWS_AS(generate(c), Error);
}

TEST_CASE("config json round-trip") {
    auto c = SynthConfig::for_mode(Mode::wikipedia);
    c.curve.kind = ProductivityCurve::Kind::chained_slopes;
    c.curve.slopes = {3, 2, 1};
    c.confounds["followers"] = 0.5;
    nlohmann::json j = c;
    const auto back = j.get<SynthConfig>();
    CHECK(nlohmann::json(back) == j);
    CHECK(back.size_cap == 70);
}

TEST_CASE("planted confound shifts work") {
    auto c = small(6);
    c.n_users = 1500;
    c.n_projects = 3000;
    c.confounds["followers"] = 0.2;
    const auto corpus = generate(c);
    const auto users = index_users(corpus.users);
    for (const auto& r : corpus.truth.rows) {
        const double want = c.curve(r.group_size) + corpus.truth.user_intercepts.at(r.user_id) +
                            0.2 * double(users.at(r.user_id).followers);
        CHECK(r.expected == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("panel generator") {
    PanelConfig pc;
    pc.n_users = 200;
    const auto p = generate_panel(pc);
    std::map<std::string, int> per_user;
    for (const auto& r : p.rows) {
        ++per_user[r.user_id];
        CHECK(r.group_size >= 1);
        CHECK(r.group_size <= 20);
    }
    CHECK(per_user.size() == 200);
    for (const auto& [_, n] : per_user) CHECK((n >= 2 && n <= 5));
    pc.center_noise = true;
    pc.sigma_u = 0;
    const auto q = generate_panel(pc);
    std::map<std::string, double> resid;
    for (std::size_t i = 0; i < q.rows.size(); ++i) resid[q.rows[i].user_id] += q.rows[i].w - q.expected[i];
    for (const auto& [_, s] : resid) CHECK(std::fabs(s) < 1e-9);
}

TEST_CASE("edit noise calibration hits the target r2") {
    std::vector<double> counts;
    for (int i = 0; i < 5000; ++i) counts.push_back(1 + (i * 7919) % 200);
    const double sigma = calibrate_edit_noise(counts, 1.2, 0.68, 3);
    const auto sizes = draw_edit_sizes(counts, 200, 1.2, sigma, 3);
    std::vector<Point> pts;
    for (std::size_t i = 0; i < counts.size(); ++i) pts.push_back({counts[i], sizes[i]});
    const auto fit = fit_power_law(pts, Aggregation::raw);
    CHECK(fit.r2 == doctest::Approx(0.68).epsilon(0.01));
    CHECK(std::fabs(fit.alpha - 1.2) < 0.05);
}

TEST_CASE("truth check") {
    auto c = small(9);
    c.n_users = 2000;
    c.n_projects = 3000;
    c.curve = linear(6, 2);
    c.sigma = 0;
    c.sigma_u = 0;
    const auto corpus = generate(c);
    const auto groups = build_groups(corpus.events, {1000});
    const auto rows = assemble_rows(groups, index_projects(corpus.projects), index_users(corpus.users)).rows;
    ChainedOptions opt;
    opt.outlier_percentile = std::nullopt;
    opt.fixed = std::vector<std::string>{"group_size"};
    PipelineOutputs out;
    out.chained = fit_chained(rows, RangeSpec::for_mode(Mode::github), Mode::github, opt);

    SUBCASE("noiseless corpus recovers every slope") {
        const auto rep = truth_check(corpus.truth, out);
        CHECK(rep.rows.size() >= 15);
        for (const auto& r : rep.rows) {
            CHECK(std::fabs(r.recovered - r.planted) < 1e-6);
            CHECK(r.pass);
        }
        CHECK(rep.all_pass());
    }
    SUBCASE("a wrong plant is flagged") {
        auto wrong = corpus.truth;
        wrong.config.curve.slope = 2.5;
        const auto rep = truth_check(wrong, out);
        CHECK_FALSE(rep.all_pass());
    }
    SUBCASE("nothing to check") { CHECK_THROWS(truth_check(corpus.truth, PipelineOutputs{})); }
}

TEST_CASE("power-law plant with noise: alpha within 0.02") {
    SynthConfig c;
    c.seed = 10;
    c.n_users = 4000;
    c.n_projects = 20000;
    const auto corpus = generate(c);
    const auto groups = build_groups(corpus.events, {1000});
    PipelineOutputs out;
    out.powerlaw = fit_power_law(mean_work_points(groups), Aggregation::per_size_mean);
    const auto rep = truth_check(corpus.truth, out);
    REQUIRE(rep.rows.size() == 1);
    CHECK(rep.rows[0].parameter == "alpha");
    CHECK(rep.rows[0].pass);
}
