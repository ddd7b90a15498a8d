// Command-line front end: gen-data, run, plot, compare.
//
// Exit codes: 0 success, 2 configuration/usage error, 3 data error,
// 4 numerical failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "isac/datagen.hpp"
#include "isac/error.hpp"
#include "isac/experiment.hpp"
#include "isac/report.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

std::string variant_list() {
    std::string s;
    for (auto v : isac::all_variants()) s += (s.empty() ? "" : ", ") + std::string(isac::to_string(v));
    return s;
}

std::string strategy_list() {
    std::string s;
    for (auto v : isac::all_strategies()) s += (s.empty() ? "" : ", ") + std::string(isac::to_string(v));
    return s;
}

std::vector<std::string> variant_names() {
    std::vector<std::string> out;
    for (auto v : isac::all_variants()) out.emplace_back(isac::to_string(v));
    return out;
}

struct GenDataArgs {
    std::string scenario;
    std::uint64_t seed = 0;
    std::optional<std::size_t> samples;
    std::optional<std::size_t> antennas;
    std::string preset;
    std::string out;
};

int gen_data(const GenDataArgs& a) {
    isac::ExperimentConfig cfg;
    if (!a.preset.empty()) isac::apply_preset(cfg, a.preset);
    cfg.scenario = *isac::parse_variant(a.scenario);
    if (a.samples) cfg.samples = *a.samples;
    if (a.antennas) cfg.antennas = *a.antennas;
    cfg.seed = a.seed;
    cfg.validate();
    const fs::path out = a.out.empty() ? isac::default_dataset_dir("data", cfg.scenario, cfg.seed) : fs::path(a.out);
    const auto data = isac::generate_dataset(cfg.scenario_description(), cfg.samples, cfg.seed);
    isac::write_dataset(out, data);
    std::cout << "wrote " << data.scenario.num_cells() << " files with " << data.n_samples << " samples each ("
              << data.n_train << " train / " << data.n_eval() << " eval) to " << out.string() << "\n";
    return 0;
}

struct RunArgs {
    std::string config;
    std::map<std::string, std::string> flags;
    bool resume = false;
    bool quiet = false;
};

int run(const RunArgs& a) {
    std::map<std::string, std::string> kv;
    if (!a.config.empty()) kv = isac::read_settings_file(a.config);
    for (const auto& [k, v] : a.flags) kv[k] = v;
    isac::ExperimentConfig cfg;
    isac::apply_settings(cfg, kv);
    cfg.validate();

    const auto result = isac::run_experiment(cfg, a.resume, [&](const isac::RoundMetrics& rm) {
        if (a.quiet) return;
        std::printf("round %3zu  system utility %.4f  pi", rm.round, rm.system_utility);
        for (const auto& b : rm.bs) std::printf(" %.4f", b.pi);
        std::printf("  (%.1fs)\n", rm.seconds);
        std::fflush(stdout);
    });
    std::printf("final system utility %.6f (best %.6f at round %zu), final pi spread %.4f\n",
                result.summary.final_system_utility, result.summary.best_system_utility, result.summary.best_round,
                result.summary.final_pi_spread);
    return 0;
}

int plot(const std::vector<std::string>& csvs, const std::string& out_dir, const std::string& title) {
    std::vector<isac::LabeledRun> runs;
    for (const auto& c : csvs) runs.push_back(isac::load_run(c));
    fs::create_directories(out_dir);
    auto write = [](const fs::path& p, const std::string& text) {
        std::FILE* f = std::fopen(p.string().c_str(), "wb");
        if (!f) throw isac::DataError("cannot write " + p.string());
        std::fwrite(text.data(), 1, text.size(), f);
        std::fclose(f);
        std::cout << "wrote " << p.string() << "\n";
    };
    write(fs::path(out_dir) / "utility.svg", isac::render_utility_svg(runs, title + "Multi-objective utility"));
    write(fs::path(out_dir) / "pi.svg", isac::render_pi_svg(runs, title + "EM aggregation weights"));
    return 0;
}

int compare(const std::vector<std::string>& csvs, const std::string& baseline) {
    std::vector<isac::LabeledRun> runs;
    for (const auto& c : csvs) runs.push_back(isac::load_run(c));
    std::size_t base = 0;
    if (!baseline.empty()) {
        base = runs.size();
        for (std::size_t i = 0; i < runs.size(); ++i)
            if (runs[i].label == baseline) base = i;
        if (base == runs.size()) throw isac::ConfigError("no run labeled '" + baseline + "'");
    }
    std::cout << isac::format_comparison(isac::compare_runs(runs, base), runs[base].label);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Personalized federated learning for multi-cell ISAC beamforming"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic Rician dataset (one file per BS)");
    gen_cmd->add_option("--scenario", gen.scenario, "Scenario variant: " + variant_list())
        ->required()
        ->check(CLI::IsMember(variant_names()));
    gen_cmd->add_option("--seed", gen.seed, "Master seed");
    gen_cmd->add_option("--samples", gen.samples, "Samples per BS (default 20000)");
    gen_cmd->add_option("--antennas", gen.antennas, "Antennas per array (default 8)");
    gen_cmd->add_option("--preset", gen.preset, "desk or full")->check(CLI::IsMember({"desk", "full"}));
    gen_cmd->add_option("--out", gen.out, "Output directory (default data/<scenario>/<seed>)");

    RunArgs run_args;
    auto* run_cmd = app.add_subcommand("run", "Train one strategy and write metrics.csv + summary.json");
    run_cmd->add_option("--config", run_args.config, "key = value settings file; flags override it");
    run_cmd->add_flag("--resume", run_args.resume, "Continue from the newest checkpoint in the output directory");
    run_cmd->add_flag("--quiet", run_args.quiet, "Do not print per-round progress");
    std::map<std::string, std::string> flag_values;
    std::map<std::string, CLI::Option*> flag_opts;
    for (const auto& key : isac::setting_keys()) {
        std::string help = key;
        if (key == "scenario") help = "Scenario variant: " + variant_list();
        if (key == "strategy") help = "Strategy: " + strategy_list();
        if (key == "preset") help = "desk (M=3, 4x4 arrays, 2000 samples, 30 rounds) or full (8x8 arrays, 20000 samples, 100 rounds)";
        flag_opts[key] = run_cmd->add_option("--" + key, flag_values[key], help)
                             ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }

    std::vector<std::string> plot_csvs;
    std::string plot_out = ".";
    std::string plot_title;
    auto* plot_cmd = app.add_subcommand("plot", "Render utility and pi charts (SVG) from metrics.csv files");
    plot_cmd->add_option("csv", plot_csvs, "metrics.csv files")->required();
    plot_cmd->add_option("--out-dir", plot_out, "Directory for utility.svg and pi.svg");
    plot_cmd->add_option("--title", plot_title, "Title prefix");

    std::vector<std::string> cmp_csvs;
    std::string cmp_baseline;
    auto* cmp_cmd = app.add_subcommand("compare", "Tabulate final utilities and percentage gains");
    cmp_cmd->add_option("csv", cmp_csvs, "metrics.csv files")->required();
    cmp_cmd->add_option("--baseline", cmp_baseline, "Label of the reference run (default: first)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (*gen_cmd) return gen_data(gen);
        if (*run_cmd) {
            for (const auto& [key, opt] : flag_opts)
                if (opt->count() > 0) run_args.flags[key] = flag_values[key];
            return run(run_args);
        }
        if (*plot_cmd) return plot(plot_csvs, plot_out, plot_title.empty() ? "" : plot_title + ": ");
        if (*cmp_cmd) return compare(cmp_csvs, cmp_baseline);
    } catch (const isac::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const isac::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const isac::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return 0;
}
