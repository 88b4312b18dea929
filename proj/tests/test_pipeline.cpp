#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sys/wait.h>

#include "collab/csv.hpp"
#include "collab/io.hpp"
#include "collab/pipeline.hpp"
#include "collab/synth.hpp"

using namespace collab;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "collab_pipeline_test";

int cli(const std::string& args, const fs::path& log = kRoot / "cli.log") {
    fs::create_directories(log.parent_path());
    const std::string cmd = std::string(COLLAB_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Synthetic corpus shared by the cases below, generated once.
const fs::path& corpus() {
    static const fs::path dir = [] {
        fs::remove_all(kRoot);
        fs::create_directories(kRoot);
        SynthConfig c;
        c.seed = 21;
        c.n_users = 1200;
        c.n_projects = 2000;
        c.n_bots = 2;
        nlohmann::json j = c;
        std::ofstream(kRoot / "synth.json") << j.dump();
        const auto d = kRoot / "corpus";
        REQUIRE(cli("synth --config " + (kRoot / "synth.json").string() + " --out " + d.string()) == 0);
        return d;
    }();
    return dir;
}

fs::path write_config(const std::string& name, const nlohmann::json& extra) {
    corpus();  // creates (and first wipes) the scratch root
    nlohmann::json j = {{"window_months", 12},
                        {"chained_fixed", {"group_size"}},
                        {"chained_outlier_percentile", nullptr},
                        {"lme_outlier_percentile", nullptr}};
    j.update(extra);
    const auto p = kRoot / (name + ".json");
    std::ofstream(p) << j.dump();
    return p;
}

std::string run_args(const fs::path& cfg, const fs::path& out) {
    return "run --config " + cfg.string() + " --input-dir " + corpus().string() + " --out " + out.string();
}

const char* kNumeric[] = {"events_window.csv", "groups.csv", "rows.csv",  "powerlaw.json", "curve.csv",
                          "ols.json",          "lme.json",   "chained.csv", "unified.csv", "s3d.json",
                          "s3d_cells.csv",     "fig1.csv",   "fig2.csv",  "fig3.csv",      "fig4.csv",
                          "fig5.csv"};

}  // namespace

TEST_CASE("run writes every artifact with the config hash and passes the truth check") {
    const auto cfg = write_config("base", nlohmann::json::object());
    const auto out = kRoot / "run1";
    REQUIRE(cli(run_args(cfg, out)) == 0);
    const auto hash = config_hash(load_run_config(cfg));
    for (const char* f : kNumeric) {
        REQUIRE(fs::exists(out / f));
        const auto text = read_text_file(out / f);
        if (fs::path(f).extension() == ".csv") {
            CHECK(text.rfind("# config_hash=", 0) == 0);
        } else {
            CHECK(nlohmann::json::parse(text).contains("config_hash"));
        }
    }
    CHECK(fs::exists(out / "manifest.json"));
    CHECK(cli("truth-check --truth " + (corpus() / "truth.json").string() + " --run " + out.string()) == 0);
}

TEST_CASE("rerun with the same config is byte-identical") {
    const auto cfg = write_config("base", nlohmann::json::object());
    const auto a = kRoot / "det_a", b = kRoot / "det_b";
    REQUIRE(cli(run_args(cfg, a)) == 0);
    REQUIRE(cli(run_args(cfg, b)) == 0);
    for (const char* f : kNumeric) CHECK(read_text_file(a / f) == read_text_file(b / f));
}

TEST_CASE("config hash separates configurations") {
    RunConfig a, b;
    b.window_months = 6;
    CHECK(config_hash(a) == config_hash(RunConfig{}));
    CHECK(config_hash(a) != config_hash(b));
    nlohmann::json j = a;
    CHECK(config_hash(j.get<RunConfig>()) == config_hash(a));
}

TEST_CASE("missing input is exit code 2 naming the path") {
    const auto log = kRoot / "missing.log";
    CHECK(cli("ingest --events /no/such/events.csv --projects /no/such/p.csv --out " + (kRoot / "m").string(), log) ==
          2);
    CHECK(read_text_file(log).find("/no/such/") != std::string::npos);
    CHECK(cli("--bogus-flag run", log) == 2);
}

TEST_CASE("stage subcommands chain through the output directory") {
    const auto out = kRoot / "stages";
    const std::string common = " --input-dir " + corpus().string() + " --out " + out.string() + " --window-months 12";
    CHECK(cli("ingest" + common) == 0);
    CHECK(cli("metrics" + common) == 0);
    CHECK(cli("fit-powerlaw" + common) == 0);
    CHECK(cli("chained --span 5 --stride 5" + common) == 0);
    CHECK(cli("unify --wb1 2" + common) == 0);
    const auto chained = parse_chained(read_text_file(out / "chained.csv"));
    CHECK(chained.ranges.size() == 4);
    const auto unified = parse_unified(read_text_file(out / "unified.csv"));
    CHECK(unified.points.front().w == 2);
    CHECK(cli("lme --group-by user_id" + common) == 0);
    CHECK(cli("s3d --max-features 3 --lambda-grid 0,0.01 --folds 3" + common) == 0);
    const auto s3d = nlohmann::json::parse(read_text_file(out / "s3d.json"));
    CHECK(s3d.dump().find("selected") != std::string::npos);
}

TEST_CASE("plot data projections") {
    const auto out = kRoot / "run1";
    if (!fs::exists(out / "fig2.csv")) REQUIRE(cli(run_args(write_config("base", nlohmann::json::object()), out)) == 0);
    const auto chained = parse_chained(read_text_file(out / "chained.csv"));
    std::size_t fitted = 0;
    for (const auto& r : chained.ranges) fitted += r.fitted ? 1 : 0;
    CHECK(parse_csv(read_text_file(out / "fig2.csv")).records.size() == fitted);
    const auto fig3 = parse_csv(read_text_file(out / "fig3.csv"));
    CHECK(fig3.column("ci_low") != std::string::npos);
    CHECK(fig3.column("ci_high") != std::string::npos);

    // fig1 means equal a recomputation from rows.csv: group mean work
    // averaged over the groups of each size.
    const auto rows = load_rows(out / "rows.csv");
    std::map<std::string, std::pair<double, double>> group;  // project -> (work, members)
    std::map<std::string, int> size_of;
    for (const auto& r : rows) {
        if (r.over_cap) continue;
        group[r.project_id].first += r.w;
        group[r.project_id].second += 1;
        size_of[r.project_id] = int(r.group_size);
    }
    std::map<int, std::pair<double, int>> by_size;
    for (const auto& [p, g] : group) {
        by_size[size_of[p]].first += g.first / g.second;
        by_size[size_of[p]].second += 1;
    }
    const auto fig1 = parse_csv(read_text_file(out / "fig1.csv"));
    const auto cn = fig1.require_column("N"), cm = fig1.require_column("mean"), cg = fig1.require_column("groups");
    CHECK(fig1.records.size() == by_size.size());
    for (const auto& rec : fig1.records) {
        const int n = std::stoi(rec.fields[cn]);
        CHECK(parse_number(rec.fields[cm]) == doctest::Approx(by_size[n].first / by_size[n].second).epsilon(1e-12));
        CHECK(std::stoi(rec.fields[cg]) == by_size[n].second);
    }
}

TEST_CASE("sweep with a repeated window gives ratio one") {
    auto cfg = load_run_config(write_config("sweep", nlohmann::json::object()));
    cfg.events = (corpus() / "events.csv").string();
    cfg.projects = (corpus() / "projects.csv").string();
    cfg.users = (corpus() / "users.csv").string();
    const auto rep = sweep_windows(cfg, {12, 12});
    REQUIRE(rep.ratios.size() == 1);
    CHECK(rep.ratios[0].forward == 1.0);
    CHECK(rep.ratios[0].backward == 1.0);
    CHECK(rep.ratios[0].event_ratio == 1.0);
}

TEST_CASE("window constant fit") {
    std::vector<double> t = {1, 2, 3, 6, 12}, a;
    for (double x : t) a.push_back(x / (x + 0.7));
    CHECK(fit_window_constant(t, a) == doctest::Approx(0.7).epsilon(1e-6));
}
