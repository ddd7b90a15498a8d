#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <regex>

#include <json.hpp>

#include "isac/error.hpp"
#include "isac/experiment.hpp"
#include "isac/report.hpp"

using namespace isac;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("isac_test_experiment_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ExperimentConfig tiny_config(const fs::path& root, Strategy s = Strategy::em_pfl) {
    ExperimentConfig cfg;
    cfg.strategy = s;
    cfg.rounds = 3;
    cfg.local_epochs = 1;
    cfg.batch_size = 16;
    cfg.lr = 1e-3;
    cfg.eval_batch = 3;
    cfg.samples = 60;
    cfg.antennas = 2;
    cfg.hidden = 8;
    cfg.seed = 4;
    cfg.checkpoint_every = 1;
    cfg.data_dir = root / "data";
    cfg.out_dir = root / "out";
    return cfg;
}

void make_data(const ExperimentConfig& cfg) {
    write_dataset(cfg.data_dir, generate_dataset(cfg.scenario_description(), cfg.samples, cfg.seed));
}

std::size_t count(const std::string& text, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
    return n;
}

}  // namespace

TEST_CASE("settings") {
    SUBCASE("defaults follow the training schedule") {
        const ExperimentConfig cfg;
        CHECK(cfg.rounds == 100);
        CHECK(cfg.local_epochs == 5);
        CHECK(cfg.batch_size == 64);
        CHECK(cfg.lr == 1e-4);
        CHECK(cfg.samples == 20000);
        CHECK(cfg.kappa == 1.0);
        CHECK(cfg.pi_fixed == 0.5);
    }
    SUBCASE("desk preset") {
        ExperimentConfig cfg;
        apply_preset(cfg, "desk");
        CHECK(cfg.antennas == 4);
        CHECK(cfg.samples == 2000);
        CHECK(cfg.rounds == 30);
        CHECK_THROWS_AS(apply_preset(cfg, "laptop"), ConfigError);
    }
    SUBCASE("file values, then flags") {
        const auto dir = temp_dir("settings");
        std::ofstream(dir / "run.cfg") << "# sweep\npreset = desk\nstrategy = fedper\nrounds = 7   # short\n\n"
                                          "lr = 3e-4\nscenario = homogeneous\n";
        auto kv = read_settings_file(dir / "run.cfg");
        CHECK(kv.size() == 5);
        kv["rounds"] = "9";  // a flag overriding the file
        ExperimentConfig cfg;
        apply_settings(cfg, kv);
        CHECK(cfg.strategy == Strategy::fedper);
        CHECK(cfg.rounds == 9);
        CHECK(cfg.lr == 3e-4);
        CHECK(cfg.scenario == ScenarioVariant::homogeneous);
        CHECK(cfg.samples == 2000);

        std::ofstream(dir / "bad.cfg") << "rounds 7\n";
        CHECK_THROWS_AS(read_settings_file(dir / "bad.cfg"), ConfigError);
        CHECK_THROWS_AS(read_settings_file(dir / "missing.cfg"), ConfigError);
        fs::remove_all(dir);
    }
    SUBCASE("a preset never overrides explicit keys") {
        ExperimentConfig cfg;
        apply_settings(cfg, {{"rounds", "4"}, {"preset", "desk"}});
        CHECK(cfg.rounds == 4);
        CHECK(cfg.antennas == 4);
    }
    SUBCASE("bad values") {
        ExperimentConfig cfg;
        CHECK_THROWS_AS(apply_setting(cfg, "rounds", "-1"), ConfigError);
        CHECK_THROWS_AS(apply_setting(cfg, "lr", "fast"), ConfigError);
        CHECK_THROWS_AS(apply_setting(cfg, "strategy", "fedprox"), ConfigError);
        CHECK_THROWS_AS(apply_setting(cfg, "scenario", "mixed"), ConfigError);
        CHECK_THROWS_AS(apply_setting(cfg, "colour", "red"), ConfigError);
        for (const auto& key : setting_keys()) CHECK(key.find('_') == std::string::npos);
        cfg.rounds = 0;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
        cfg = {};
        cfg.lr = 0.0;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
        cfg = {};
        cfg.batch_size = 0;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
}

TEST_CASE("metrics CSV") {
    RoundMetrics rm;
    rm.round = 2;
    rm.bs = {{0.25, -1.5, 2.0, 1.0, 1.5}, {0.75, -0.1, 0.3, 0.2, 0.1 + 0.2}};
    rm.system_utility = 1.5 + 0.1 + 0.2;
    const auto text = format_metrics_csv({rm});

    CHECK(text.rfind("round,bs,pi,loss,comm_rate,radar_rate,utility,system_utility\n", 0) == 0);
    CHECK(count(text, "\n") == 3);
    const auto rows = parse_metrics_csv(text);
    REQUIRE(rows.size() == 2);
    CHECK(rows[1].round == 2);
    CHECK(rows[1].bs == 1);
    CHECK(rows[1].pi == 0.75);
    CHECK(rows[1].utility == 0.1 + 0.2);  // 17 significant digits survive the round trip
    CHECK(rows[0].system_utility == rm.system_utility);

    CHECK_THROWS_AS(parse_metrics_csv(""), DataError);
    CHECK_THROWS_AS(parse_metrics_csv(std::string(kCsvHeader) + "\n"), DataError);
    CHECK_THROWS_AS(parse_metrics_csv("round,bs\n0,0\n"), DataError);
    CHECK_THROWS_AS(parse_metrics_csv(std::string(kCsvHeader) + "\n0,0,0.5\n"), DataError);
    CHECK_THROWS_AS(parse_metrics_csv(std::string(kCsvHeader) + "\n0,0,x,1,1,1,1,1\n"), DataError);
}

TEST_CASE("summary is a function of the CSV") {
    std::vector<CsvRow> rows;
    // Three rounds, two BSs; round 1 is the best one.
    const double sys[] = {1.0, 3.0, 2.0};
    const double pis[3][2] = {{0.5, 0.5}, {0.1, 0.6}, {0.4, 0.3}};
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t m = 0; m < 2; ++m)
            rows.push_back({t, m, pis[t][m], -1.0, 1.0, 1.0, sys[t] * (m + 1) / 3.0, sys[t]});
    const auto s = summarize(rows);
    CHECK(s.rounds == 3);
    CHECK(s.final_system_utility == 2.0);
    CHECK(s.best_system_utility == 3.0);
    CHECK(s.best_round == 1);
    CHECK(s.final_pi == std::vector<double>{0.4, 0.3});
    CHECK(s.final_pi_spread == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(s.max_pi_spread == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s.final_mean_utility == 1.0);
    CHECK_THROWS_AS(summarize({}), DataError);
}

TEST_CASE("run_experiment") {
    const auto root = temp_dir("run");
    auto cfg = tiny_config(root);

    SUBCASE("missing dataset names the generation command") {
        try {
            run_experiment(cfg);
            FAIL("expected a DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("gen-data") != std::string::npos);
        }
    }

    make_data(cfg);

    SUBCASE("one round writes one row per BS") {
        cfg.rounds = 1;
        const auto result = run_experiment(cfg);
        const auto text = read_text(cfg.out_dir / "metrics.csv");
        CHECK(count(text, "\n") == 4);
        const auto rows = read_metrics_csv(cfg.out_dir / "metrics.csv");
        REQUIRE(rows.size() == 3);
        for (const auto& r : rows) {
            CHECK(std::isfinite(r.utility));
            CHECK(std::isfinite(r.loss));
            CHECK(r.round == 0);
        }
        CHECK(result.max_power <= 1.0 + 1e-9);
        CHECK(fs::exists(cfg.out_dir / "round_0" / "global.bin"));
        CHECK(fs::exists(cfg.out_dir / "round_0" / "bs2.bin"));
    }
    SUBCASE("summary.json matches a re-derivation from metrics.csv") {
        run_experiment(cfg);
        const auto rows = read_metrics_csv(cfg.out_dir / "metrics.csv");
        const auto j = nlohmann::json::parse(read_text(cfg.out_dir / "summary.json"));

        std::map<std::size_t, std::vector<CsvRow>> by_round;
        for (const auto& r : rows) by_round[r.round].push_back(r);
        double best = -1e300, max_spread = 0.0;
        for (const auto& [t, rs] : by_round) {
            best = std::max(best, rs[0].system_utility);
            double lo = 1.0, hi = 0.0;
            for (const auto& r : rs) {
                lo = std::min(lo, r.pi);
                hi = std::max(hi, r.pi);
            }
            max_spread = std::max(max_spread, hi - lo);
        }
        const auto& last = by_round.rbegin()->second;
        double sum = 0.0;
        for (const auto& r : last) sum += r.utility;

        CHECK(j["rounds"] == 3);
        CHECK(std::abs(j["final_system_utility"].get<double>() - last[0].system_utility) <= 1e-9);
        CHECK(std::abs(j["final_system_utility"].get<double>() - sum) <= 1e-9);
        CHECK(std::abs(j["best_system_utility"].get<double>() - best) <= 1e-9);
        CHECK(std::abs(j["max_pi_spread"].get<double>() - max_spread) <= 1e-9);
        for (std::size_t m = 0; m < 3; ++m) {
            CHECK(std::abs(j["final_pi"][m].get<double>() - last[m].pi) <= 1e-9);
            CHECK(std::abs(j["final_utility_per_bs"][m].get<double>() - last[m].utility) <= 1e-9);
        }
        CHECK(j["config"]["strategy"] == "em_pfl");
    }
    SUBCASE("local_only never takes the global model") {
        cfg.strategy = Strategy::local_only;
        run_experiment(cfg);
        for (const auto& r : read_metrics_csv(cfg.out_dir / "metrics.csv")) CHECK(r.pi == 0.0);
    }
    SUBCASE("resuming reproduces the uninterrupted run") {
        cfg.rounds = 4;
        run_experiment(cfg);
        const auto full = read_text(cfg.out_dir / "metrics.csv");

        auto partial = cfg;
        partial.out_dir = root / "resumed";
        partial.rounds = 2;
        run_experiment(partial);
        CHECK(latest_checkpoint(partial.out_dir) == partial.out_dir / "round_1");
        partial.rounds = 4;
        const auto rest = run_experiment(partial, true);
        CHECK(rest.rounds.size() == 2);
        CHECK(rest.rounds.front().round == 2);
        CHECK(read_text(partial.out_dir / "metrics.csv") == full);
    }
    SUBCASE("a dataset for another scenario is refused") {
        cfg.scenario = ScenarioVariant::homogeneous;
        CHECK_THROWS_AS(run_experiment(cfg), ConfigError);
    }
    SUBCASE("in-memory simulation matches the file-backed run") {
        const auto mem = simulate(read_dataset(cfg.data_dir), cfg);
        run_experiment(cfg);
        CHECK(format_metrics_csv(mem.rounds) == read_text(cfg.out_dir / "metrics.csv"));
    }
    fs::remove_all(root);
}

TEST_CASE("plots and comparison") {
    auto run = [](const std::string& label, double base) {
        LabeledRun r{label, {}};
        for (std::size_t t = 0; t < 4; ++t)
            for (std::size_t m = 0; m < 3; ++m)
                r.rows.push_back({t, m, 0.1 * static_cast<double>(m), -1.0, 1.0, 1.0, base / 3.0, base + t});
        return r;
    };
    const auto a = run("em_pfl", 10.0), b = run("fedavg", 8.0);

    SUBCASE("one polyline per series") {
        const auto u1 = render_utility_svg({a}, "utility");
        CHECK(count(u1, "<polyline") == 1);
        CHECK(u1.find("not normalized") != std::string::npos);
        CHECK(count(render_utility_svg({a, b}, "utility"), "<polyline") == 2);
        CHECK(count(render_pi_svg({a}, "pi"), "<polyline") == 3);
        CHECK(count(render_pi_svg({a, b}, "pi"), "<polyline") == 6);
        const auto pts = std::regex_search(u1, std::regex("points=\"[0-9. ,]+\""));
        CHECK(pts);
    }
    SUBCASE("pure function of the input") {
        CHECK(render_utility_svg({a, b}, "t") == render_utility_svg({a, b}, "t"));
        CHECK(render_pi_svg({b}, "t") == render_pi_svg({b}, "t"));
        CHECK(render_utility_svg({a}, "t") != render_utility_svg({b}, "t"));
    }
    SUBCASE("labels are escaped") {
        const auto svg = render_utility_svg({run("a<b", 1.0)}, "x & y");
        CHECK(svg.find("a&lt;b") != std::string::npos);
        CHECK(svg.find("x &amp; y") != std::string::npos);
    }
    SUBCASE("empty input is an error") {
        CHECK_THROWS_AS(render_utility_svg({}, "t"), DataError);
        CHECK_THROWS_AS(render_pi_svg({LabeledRun{"empty", {}}}, "t"), DataError);
        const auto dir = temp_dir("plot");
        std::ofstream(dir / "metrics.csv") << "";
        CHECK_THROWS_AS(load_run(dir / "metrics.csv"), DataError);
        fs::remove_all(dir);
    }
    SUBCASE("comparison percentages") {
        // Final system utilities: 13 and 11.
        const auto rows = compare_runs({a, b}, 0);
        REQUIRE(rows.size() == 2);
        CHECK(rows[0].final_utility == 13.0);
        CHECK(rows[1].best_utility == 11.0);
        CHECK(rows[0].baseline_gain_pct == 0.0);
        CHECK(rows[1].baseline_gain_pct == doctest::Approx(100.0 * 2.0 / 11.0).epsilon(1e-12));
        const auto table = format_comparison(rows, "em_pfl");
        CHECK(table.find("+18.18") != std::string::npos);
        CHECK_THROWS_AS(compare_runs({a}, 1), ConfigError);
    }
    SUBCASE("labels come from the run directory") {
        const auto dir = temp_dir("label");
        fs::create_directories(dir / "fedper_s0");
        std::ofstream(dir / "fedper_s0" / "metrics.csv") << format_metrics_csv({});
        CHECK_THROWS_AS(load_run(dir / "fedper_s0" / "metrics.csv"), DataError);
        std::ofstream(dir / "fedper_s0" / "metrics.csv") << std::string(kCsvHeader) + "\n0,0,0,0,0,0,0,0\n";
        CHECK(load_run(dir / "fedper_s0" / "metrics.csv").label == "fedper_s0");
        std::ofstream(dir / "other.csv") << std::string(kCsvHeader) + "\n0,0,0,0,0,0,0,0\n";
        CHECK(load_run(dir / "other.csv").label == "other");
        fs::remove_all(dir);
    }
}
