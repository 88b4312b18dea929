#include "collab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <unordered_map>

#include "collab/error.hpp"
#include "collab/io.hpp"

namespace collab {

double ProductivityCurve::operator()(double n) const {
    switch (kind) {
        case Kind::power_law: return c * std::pow(n, alpha);
        case Kind::linear: return intercept + slope * (n - 1.0);
        case Kind::piecewise_linear:
            return intercept + slope_low * (std::min(n, knot) - 1.0) + slope_high * std::max(0.0, n - knot);
        case Kind::chained_slopes: {
            if (slopes.empty()) return intercept;
            double w = intercept;
            int k = 1;
            for (; k + 1 <= static_cast<int>(std::floor(n)); ++k) {
                w += slopes[std::min(static_cast<std::size_t>(k - 1), slopes.size() - 1)];
            }
            // Linear between integer sizes.
            const double frac = n - std::floor(n);
            if (frac > 0.0) w += frac * slopes[std::min(static_cast<std::size_t>(k - 1), slopes.size() - 1)];
            return w;
        }
    }
    return 0.0;
}

namespace {

const char* kind_name(ProductivityCurve::Kind k) {
    switch (k) {
        case ProductivityCurve::Kind::power_law: return "power_law";
        case ProductivityCurve::Kind::linear: return "linear";
        case ProductivityCurve::Kind::piecewise_linear: return "piecewise_linear";
        case ProductivityCurve::Kind::chained_slopes: return "chained_slopes";
    }
    return "power_law";
}

ProductivityCurve::Kind parse_kind(const std::string& s) {
    if (s == "power_law") return ProductivityCurve::Kind::power_law;
    if (s == "linear") return ProductivityCurve::Kind::linear;
    if (s == "piecewise_linear") return ProductivityCurve::Kind::piecewise_linear;
    if (s == "chained_slopes") return ProductivityCurve::Kind::chained_slopes;
    throw InputError("unknown productivity curve '" + s + "'");
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
    if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

// splitmix64 finalizer; decorrelates per-purpose streams from one seed.
std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t purpose) { return std::mt19937_64(mix(seed ^ mix(purpose))); }

std::string make_id(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%06zu", prefix, i);
    return buf;
}

}  // namespace

void to_json(nlohmann::json& j, const ProductivityCurve& c) {
    j = nlohmann::json{{"kind", kind_name(c.kind)}};
    switch (c.kind) {
        case ProductivityCurve::Kind::power_law:
            j["c"] = c.c;
            j["alpha"] = c.alpha;
            break;
        case ProductivityCurve::Kind::linear:
            j["intercept"] = c.intercept;
            j["slope"] = c.slope;
            break;
        case ProductivityCurve::Kind::piecewise_linear:
            j["intercept"] = c.intercept;
            j["knot"] = c.knot;
            j["slope_low"] = c.slope_low;
            j["slope_high"] = c.slope_high;
            break;
        case ProductivityCurve::Kind::chained_slopes:
            j["intercept"] = c.intercept;
            j["slopes"] = c.slopes;
            break;
    }
}

void from_json(const nlohmann::json& j, ProductivityCurve& c) {
    c = ProductivityCurve{};
    if (auto it = j.find("kind"); it != j.end()) c.kind = parse_kind(it->get<std::string>());
    read_opt(j, "c", c.c);
    read_opt(j, "alpha", c.alpha);
    read_opt(j, "intercept", c.intercept);
    read_opt(j, "slope", c.slope);
    read_opt(j, "knot", c.knot);
    read_opt(j, "slope_low", c.slope_low);
    read_opt(j, "slope_high", c.slope_high);
    read_opt(j, "slopes", c.slopes);
}

SynthConfig SynthConfig::for_mode(Mode mode) {
    SynthConfig c;
    c.mode = mode;
    if (mode == Mode::wikipedia) {
        c.size_cap = 70;
        c.size_exponent = 1.8;
    }
    return c;
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
    j = nlohmann::json{{"mode", to_string(c.mode)},
                       {"seed", c.seed},
                       {"n_users", c.n_users},
                       {"n_projects", c.n_projects},
                       {"size_exponent", c.size_exponent},
                       {"size_min", c.size_min},
                       {"size_cap", c.size_cap},
                       {"curve", c.curve},
                       {"sigma_u", c.sigma_u},
                       {"sigma", c.sigma},
                       {"center_noise", c.center_noise},
                       {"activity_spread", c.activity_spread},
                       {"start", c.start},
                       {"creation_span_days", c.creation_span_days},
                       {"activity_months", c.activity_months},
                       {"confounds", c.confounds},
                       {"edit_beta", c.edit_beta},
                       {"edit_base", c.edit_base},
                       {"edit_sigma", c.edit_sigma},
                       {"n_bots", c.n_bots},
                       {"bot_events", c.bot_events},
                       {"redirect_fraction", c.redirect_fraction}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
    Mode mode = Mode::github;
    if (auto it = j.find("mode"); it != j.end()) mode = parse_mode(it->get<std::string>());
    c = SynthConfig::for_mode(mode);
    read_opt(j, "seed", c.seed);
    read_opt(j, "n_users", c.n_users);
    read_opt(j, "n_projects", c.n_projects);
    read_opt(j, "size_exponent", c.size_exponent);
    read_opt(j, "size_min", c.size_min);
    read_opt(j, "size_cap", c.size_cap);
    read_opt(j, "curve", c.curve);
    read_opt(j, "sigma_u", c.sigma_u);
    read_opt(j, "sigma", c.sigma);
    read_opt(j, "center_noise", c.center_noise);
    read_opt(j, "activity_spread", c.activity_spread);
    read_opt(j, "start", c.start);
    read_opt(j, "creation_span_days", c.creation_span_days);
    read_opt(j, "activity_months", c.activity_months);
    read_opt(j, "confounds", c.confounds);
    read_opt(j, "edit_beta", c.edit_beta);
    read_opt(j, "edit_base", c.edit_base);
    read_opt(j, "edit_sigma", c.edit_sigma);
    read_opt(j, "n_bots", c.n_bots);
    read_opt(j, "bot_events", c.bot_events);
    read_opt(j, "redirect_fraction", c.redirect_fraction);
}

const std::vector<std::string>& plantable_features() {
    static const std::vector<std::string> names = {"followers", "owned_repos", "created_pages",
                                                   "watchers",  "forks",       "description_len"};
    return names;
}

double SynthTruth::planted_slope(int lo, int hi) const {
    double sn = 0, sw = 0, count = 0;
    for (const auto& r : rows) {
        if (r.group_size < lo || r.group_size > hi) continue;
        sn += r.group_size;
        sw += config.curve(r.group_size);
        count += 1;
    }
    if (count < 2) return std::nan("");
    const double nbar = sn / count, wbar = sw / count;
    double sxy = 0, sxx = 0;
    for (const auto& r : rows) {
        if (r.group_size < lo || r.group_size > hi) continue;
        const double dx = r.group_size - nbar;
        sxy += dx * (config.curve(r.group_size) - wbar);
        sxx += dx * dx;
    }
    return sxx > 0 ? sxy / sxx : std::nan("");
}

void to_json(nlohmann::json& j, const SynthTruth& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : t.rows) {
        rows.push_back({{"user_id", r.user_id},
                        {"project_id", r.project_id},
                        {"group_size", r.group_size},
                        {"expected", r.expected},
                        {"work", r.work}});
    }
    j = nlohmann::json{{"config", t.config}, {"user_intercepts", t.user_intercepts}, {"rows", rows}};
}

void from_json(const nlohmann::json& j, SynthTruth& t) {
    t.config = j.at("config").get<SynthConfig>();
    t.user_intercepts = j.at("user_intercepts").get<std::map<std::string, double>>();
    t.rows.clear();
    for (const auto& r : j.at("rows")) {
        t.rows.push_back({r.at("user_id").get<std::string>(), r.at("project_id").get<std::string>(),
                          r.at("group_size").get<int>(), r.at("expected").get<double>(),
                          r.at("work").get<std::int64_t>()});
    }
}

std::vector<double> size_law(double gamma, int lo, int hi) {
    if (lo < 1 || hi < lo) throw Error("invalid group-size range");
    std::vector<double> w;
    for (int k = lo; k <= hi; ++k) w.push_back(std::pow(static_cast<double>(k), -gamma));
    return w;
}

SynthCorpus generate(const SynthConfig& config) {
    if (config.n_users < 1 || config.n_projects < 1) throw Error("synthetic corpus needs users and projects");
    if (config.size_min < 1 || config.size_cap < config.size_min) throw Error("invalid group-size range");
    if (config.n_users < static_cast<std::size_t>(config.size_cap)) {
        throw Error("infeasible synthetic config: " + std::to_string(config.n_users) +
                    " users cannot fill groups of size " + std::to_string(config.size_cap));
    }
    if (config.sigma < 0 || config.sigma_u < 0 || config.edit_sigma < 0 || config.activity_spread < 0) {
        throw Error("synthetic variances must be nonnegative");
    }
    if (config.activity_months < 1) throw Error("activity period must be at least one month");
    for (const auto& [name, coef] : config.confounds) {
        const auto& ok = plantable_features();
        if (std::find(ok.begin(), ok.end(), name) == ok.end()) {
            throw InputError("cannot plant a coefficient on '" + name + "'");
        }
    }
    const auto start = parse_timestamp(config.start);
    if (!start) throw InputError("bad synthetic start timestamp '" + config.start + "'");

    SynthCorpus corpus;
    corpus.truth.config = config;

    auto rs = stream(config.seed, 1);  // structure and profiles
    std::normal_distribution<double> std_normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const std::size_t n_redirect =
        static_cast<std::size_t>(std::llround(config.redirect_fraction * static_cast<double>(config.n_projects)));
    const std::size_t total_projects = config.n_projects + n_redirect;

    std::vector<double> activity(config.n_users);
    for (std::size_t i = 0; i < config.n_users; ++i) {
        UserProfile u;
        u.user_id = make_id("u", i + 1);
        u.account_created_at = *start - std::chrono::days(static_cast<int>(unit(rs) * 1500.0));
        u.followers = static_cast<std::int64_t>(std::floor(std::exp(2.0 + std_normal(rs))));
        u.owned_repos = std::poisson_distribution<std::int64_t>(8.0)(rs);
        u.created_pages = std::poisson_distribution<std::int64_t>(5.0)(rs);
        corpus.users.push_back(u);
        activity[i] = std::exp(config.activity_spread * std_normal(rs));
    }
    for (std::size_t p = 0; p < total_projects; ++p) {
        ProjectProfile pr;
        pr.project_id = make_id("p", p + 1);
        pr.created_at = *start + std::chrono::days(static_cast<int>(unit(rs) * config.creation_span_days));
        pr.watchers = static_cast<std::int64_t>(std::floor(std::exp(3.0 + 1.2 * std_normal(rs))));
        pr.forks = static_cast<std::int64_t>(std::floor(static_cast<double>(pr.watchers) * 0.3 * unit(rs)));
        pr.description_len = std::uniform_int_distribution<std::int64_t>(0, 200)(rs);
        pr.is_redirect = p >= config.n_projects;
        corpus.projects.push_back(pr);
    }

    // Group sizes and weighted membership without replacement.
    const auto law = size_law(config.size_exponent, config.size_min, config.size_cap);
    std::discrete_distribution<int> size_draw(law.begin(), law.end());
    struct Membership {
        std::size_t project;
        std::size_t user;
        int size;
    };
    std::vector<Membership> members;
    std::vector<std::pair<double, std::size_t>> keys(config.n_users);
    std::discrete_distribution<std::size_t> user_draw(activity.begin(), activity.end());
    std::vector<char> taken(config.n_users, 0);
    for (std::size_t p = 0; p < total_projects; ++p) {
        const int n = config.size_min + size_draw(rs);
        std::vector<std::size_t> chosen;
        if (static_cast<std::size_t>(n) * 4 <= config.n_users) {
            // Weighted draws with repeats rejected: same law as successive
            // renormalised draws, and cheap when n is small against the pool.
            while (chosen.size() < static_cast<std::size_t>(n)) {
                const auto u = user_draw(rs);
                if (!taken[u]) {
                    taken[u] = 1;
                    chosen.push_back(u);
                }
            }
            for (auto u : chosen) taken[u] = 0;
        } else {
            for (std::size_t i = 0; i < config.n_users; ++i) keys[i] = {std::log(unit(rs) + 1e-300) / activity[i], i};
            std::nth_element(keys.begin(), keys.begin() + (n - 1), keys.end(), std::greater<>());
            for (int k = 0; k < n; ++k) chosen.push_back(keys[static_cast<std::size_t>(k)].second);
        }
        std::sort(chosen.begin(), chosen.end());
        for (auto u : chosen) members.push_back({p, u, n});
    }

    auto ru = stream(config.seed, 2);
    std::vector<double> intercept(config.n_users);
    for (std::size_t i = 0; i < config.n_users; ++i) {
        intercept[i] = config.sigma_u * std_normal(ru);
        corpus.truth.user_intercepts[corpus.users[i].user_id] = intercept[i];
    }

    auto rn = stream(config.seed, 3);
    std::vector<double> noise(members.size());
    for (auto& e : noise) e = config.sigma * std_normal(rn);
    if (config.center_noise) {
        std::vector<double> sum(config.n_users, 0.0), count(config.n_users, 0.0);
        for (std::size_t m = 0; m < members.size(); ++m) {
            sum[members[m].user] += noise[m];
            count[members[m].user] += 1.0;
        }
        for (std::size_t m = 0; m < members.size(); ++m) noise[m] -= sum[members[m].user] / count[members[m].user];
    }

    auto feature = [&](const std::string& name, const Membership& m) -> double {
        const auto& u = corpus.users[m.user];
        const auto& p = corpus.projects[m.project];
        if (name == "followers") return static_cast<double>(u.followers);
        if (name == "owned_repos") return static_cast<double>(u.owned_repos);
        if (name == "created_pages") return static_cast<double>(u.created_pages);
        if (name == "watchers") return static_cast<double>(p.watchers);
        if (name == "forks") return static_cast<double>(p.forks);
        return static_cast<double>(p.description_len);
    };

    auto rt = stream(config.seed, 4);
    auto re = stream(config.seed, 5);
    const bool sizes = config.mode == Mode::wikipedia;
    for (std::size_t m = 0; m < members.size(); ++m) {
        const auto& mb = members[m];
        double expected = config.curve(mb.size) + intercept[mb.user];
        for (const auto& [name, coef] : config.confounds) expected += coef * feature(name, mb);
        const auto work = static_cast<std::int64_t>(std::llround(std::max(1.0, expected + noise[m])));
        const auto& project = corpus.projects[mb.project];
        const auto& user = corpus.users[mb.user];
        if (!project.is_redirect) {
            corpus.truth.rows.push_back({user.user_id, project.project_id, mb.size, expected, work});
        }

        const double z = std_normal(re);
        std::int64_t bytes = 0;
        if (sizes) {
            const double total =
                config.edit_base * std::pow(static_cast<double>(work), config.edit_beta) * std::exp(config.edit_sigma * z);
            bytes = std::max<std::int64_t>(work, std::llround(total));
        }
        const auto span = add_months(project.created_at, config.activity_months) - project.created_at;
        std::uniform_int_distribution<std::int64_t> offset(0, span.count() - 1);
        for (std::int64_t k = 0; k < work; ++k) {
            ContributionEvent e;
            e.user_id = user.user_id;
            e.project_id = project.project_id;
            e.timestamp = project.created_at + std::chrono::seconds(offset(rt));
            if (sizes) e.size_bytes = bytes / work + (k < bytes % work ? 1 : 0);
            corpus.events.push_back(std::move(e));
        }
    }

    auto rb = stream(config.seed, 6);
    for (std::size_t b = 0; b < config.n_bots; ++b) {
        const std::string id = make_id("bot", b + 1);
        corpus.bots.push_back(id);
        UserProfile u;
        u.user_id = id;
        u.account_created_at = *start;
        corpus.users.push_back(u);
        std::uniform_int_distribution<std::size_t> pick(0, config.n_projects - 1);
        for (std::size_t k = 0; k < config.bot_events; ++k) {
            const auto& project = corpus.projects[pick(rb)];
            const auto span = add_months(project.created_at, config.activity_months) - project.created_at;
            ContributionEvent e;
            e.user_id = id;
            e.project_id = project.project_id;
            e.timestamp = project.created_at +
                          std::chrono::seconds(std::uniform_int_distribution<std::int64_t>(0, span.count() - 1)(rb));
            if (sizes) e.size_bytes = 10;
            corpus.events.push_back(std::move(e));
        }
    }

    std::sort(corpus.events.begin(), corpus.events.end(), [](const ContributionEvent& a, const ContributionEvent& b) {
        if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
        if (a.project_id != b.project_id) return a.project_id < b.project_id;
        return a.user_id < b.user_id;
    });
    return corpus;
}

void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_file_atomic(dir / "events.csv", serialize_events(corpus.events, EventFormat::csv));
    write_file_atomic(dir / "projects.csv", serialize_project_profiles(corpus.projects));
    write_file_atomic(dir / "users.csv", serialize_user_profiles(corpus.users));
    std::string bots;
    for (const auto& b : corpus.bots) bots += b + "\n";
    write_file_atomic(dir / "bots.txt", bots);
    write_file_atomic(dir / "truth.json", nlohmann::json(corpus.truth).dump(1) + "\n");
}

SynthTruth load_truth(const std::filesystem::path& path) {
    try {
        return nlohmann::json::parse(read_text_file(path)).get<SynthTruth>();
    } catch (const nlohmann::json::exception& e) {
        throw InputError("bad truth file " + path.string() + ": " + e.what());
    }
}

Panel generate_panel(const PanelConfig& config) {
    if (config.rows_min < 1 || config.rows_max < config.rows_min) throw Error("invalid rows per user");
    const auto law = size_law(config.size_exponent, config.size_min, config.size_max);
    std::discrete_distribution<int> size_draw(law.begin(), law.end());
    std::uniform_int_distribution<int> rows_draw(config.rows_min, config.rows_max);
    std::normal_distribution<double> std_normal(0.0, 1.0);
    auto rs = stream(config.seed, 11);
    auto ru = stream(config.seed, 12);
    auto rn = stream(config.seed, 13);

    Panel panel;
    std::vector<double> noise;
    for (std::size_t u = 0; u < config.n_users; ++u) {
        const std::string user = make_id("u", u + 1);
        const double intercept = config.sigma_u * std_normal(ru);
        const int count = rows_draw(rs);
        noise.resize(static_cast<std::size_t>(count));
        double mean_noise = 0.0;
        for (auto& e : noise) {
            e = config.sigma * std_normal(rn);
            mean_noise += e / count;
        }
        for (int r = 0; r < count; ++r) {
            UserProjectRow row;
            row.user_id = user;
            row.project_id = user + "_" + std::to_string(r + 1);
            row.group_size = config.size_min + size_draw(rs);
            row.effective_size = row.group_size;
            const double expected = config.curve(row.group_size) + intercept;
            const double e = noise[static_cast<std::size_t>(r)] - (config.center_noise ? mean_noise : 0.0);
            row.w = expected + e;
            row.n_projects = count;
            panel.expected.push_back(expected);
            panel.rows.push_back(std::move(row));
        }
    }
    return panel;
}

std::vector<double> draw_edit_sizes(std::span<const double> edit_counts, double base, double beta, double sigma,
                                    std::uint64_t seed) {
    auto rng = stream(seed, 21);
    std::normal_distribution<double> std_normal(0.0, 1.0);
    std::vector<double> out;
    out.reserve(edit_counts.size());
    for (double n : edit_counts) out.push_back(base * std::pow(n, beta) * std::exp(sigma * std_normal(rng)));
    return out;
}

double calibrate_edit_noise(std::span<const double> edit_counts, double beta, double target_r2, std::uint64_t seed) {
    if (!(target_r2 > 0.0 && target_r2 < 1.0)) throw Error("target r2 must lie in (0, 1)");
    auto r2_at = [&](double sigma) {
        const auto sizes = draw_edit_sizes(edit_counts, 1.0, beta, sigma, seed);
        std::vector<Point> pts;
        for (std::size_t i = 0; i < sizes.size(); ++i) pts.push_back({edit_counts[i], sizes[i]});
        return fit_power_law(pts, Aggregation::raw).r2;
    };
    double lo = 0.0, hi = 1.0;
    while (r2_at(hi) > target_r2) {
        hi *= 2.0;
        if (hi > 1e6) throw Error("cannot reach the target r2 by adding noise");
    }
    for (int i = 0; i < 100 && hi - lo > 1e-12 * hi; ++i) {
        const double mid = 0.5 * (lo + hi);
        (r2_at(mid) > target_r2 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

bool TruthReport::all_pass() const {
    return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const TruthCheckRow& r) { return r.pass; });
}

TruthReport truth_check(const SynthTruth& truth, const PipelineOutputs& outputs, const TruthTolerances& tol) {
    if (!outputs.powerlaw && !outputs.chained && !outputs.lme) throw Error("no pipeline output to check");
    TruthReport report;
    const auto& curve = truth.config.curve;

    if (outputs.powerlaw && curve.kind == ProductivityCurve::Kind::power_law) {
        TruthCheckRow r{"alpha", curve.alpha, outputs.powerlaw->alpha, tol.alpha, false};
        r.pass = std::abs(r.recovered - r.planted) <= r.tolerance;
        report.rows.push_back(r);
    }
    auto beta_row = [&](std::string name, double planted, double estimate, double se) {
        TruthCheckRow r{std::move(name), planted, estimate, std::max(tol.beta_abs, tol.beta_se * se), false};
        r.pass = std::isfinite(planted) && std::abs(estimate - planted) <= r.tolerance;
        report.rows.push_back(r);
    };
    if (outputs.chained) {
        for (const auto& range : outputs.chained->ranges) {
            if (!range.fitted) continue;
            beta_row("beta_" + std::to_string(range.range.lo) + "-" + std::to_string(range.range.hi),
                     truth.planted_slope(range.range.lo, range.range.hi), range.beta, range.se);
        }
    }
    if (outputs.lme) {
        int lo = std::numeric_limits<int>::max(), hi = 0;
        for (const auto& r : truth.rows) {
            lo = std::min(lo, r.group_size);
            hi = std::max(hi, r.group_size);
        }
        const auto& c = outputs.lme->fixed.at(1);
        beta_row("beta_overall", truth.planted_slope(lo, hi), c.estimate, c.std_error);
        const double planted = truth.config.sigma_u * truth.config.sigma_u;
        TruthCheckRow r{"sigma_u2", planted, outputs.lme->random_variance,
                        std::max(tol.sigma_u2_abs, tol.sigma_u2_rel * planted), false};
        r.pass = std::abs(r.recovered - r.planted) <= r.tolerance;
        report.rows.push_back(r);
    }
    if (report.rows.empty()) throw Error("pipeline outputs hold no parameter the truth can check");
    return report;
}

}  // namespace collab
