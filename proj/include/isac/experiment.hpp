#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "isac/datagen.hpp"
#include "isac/fl.hpp"

namespace isac {

struct ExperimentConfig {
    ScenarioVariant scenario = ScenarioVariant::heterogeneous;
    Strategy strategy = Strategy::em_pfl;
    std::size_t rounds = 100;
    std::size_t local_epochs = 5;
    std::size_t batch_size = 64;
    double lr = 1e-4;
    double kappa = 1.0;
    std::size_t eval_batch = 64;
    double pi_fixed = 0.5;
    std::size_t fedper_local_layers = 1;
    double pfedme_lambda = 15.0;
    std::size_t pfedme_inner_steps = 5;
    std::uint64_t seed = 0;
    std::size_t samples = 20000;
    std::size_t antennas = 8;
    std::size_t hidden = 256;
    std::size_t threads = 1;
    std::size_t checkpoint_every = 10;
    std::filesystem::path data_dir;
    std::filesystem::path out_dir;

    /// Throws ConfigError.
    void validate() const;
    Scenario scenario_description() const;
    SimulationConfig simulation_config(const Scenario& scn) const;
};

/// Three cells, 4x4 arrays, 2,000 samples per BS, 30 rounds.
void apply_preset(ExperimentConfig& cfg, const std::string& preset);

/// Sets one field from its textual key (the same names the CLI flags and config files use).
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Keys accepted by apply_setting, plus "preset".
const std::vector<std::string>& setting_keys();

/// Parses `key = value` lines; '#' starts a comment.
std::map<std::string, std::string> read_settings_file(const std::filesystem::path& path);

/// Applies a preset (if present) first, then every other key.
void apply_settings(ExperimentConfig& cfg, const std::map<std::string, std::string>& kv);

nlohmann::json config_to_json(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// metrics.csv: round,bs,pi,loss,comm_rate,radar_rate,utility,system_utility

struct CsvRow {
    std::size_t round = 0;
    std::size_t bs = 0;
    double pi = 0.0;
    double loss = 0.0;
    double comm_rate = 0.0;
    double radar_rate = 0.0;
    double utility = 0.0;
    double system_utility = 0.0;
};

extern const char* const kCsvHeader;

std::string format_csv_row(const CsvRow& row);
std::string format_csv_rows(const RoundMetrics& rm);
std::string format_metrics_csv(const std::vector<RoundMetrics>& rounds);
std::vector<CsvRow> parse_metrics_csv(const std::string& text);
std::vector<CsvRow> read_metrics_csv(const std::filesystem::path& path);

struct RunSummary {
    std::size_t rounds = 0;
    double final_system_utility = 0.0;
    double best_system_utility = 0.0;
    std::size_t best_round = 0;
    std::vector<double> final_utility;
    std::vector<double> final_pi;
    double final_pi_spread = 0.0;
    double max_pi_spread = 0.0;
    double final_mean_utility = 0.0;
};

/// Everything in summary.json is derived from CSV rows.
RunSummary summarize(const std::vector<CsvRow>& rows);
nlohmann::json summary_to_json(const RunSummary& s);

// ---------------------------------------------------------------------------

struct ExperimentResult {
    std::vector<RoundMetrics> rounds;
    RunSummary summary;
    /// Largest ||W_m||_F^2 observed anywhere in the run.
    double max_power = 0.0;
};

using RoundCallback = std::function<void(const RoundMetrics&)>;

/// Runs the configured strategy in memory; no files are touched.
ExperimentResult simulate(const Dataset& data, const ExperimentConfig& cfg, const RoundCallback& on_round = {});

/// Full CLI run: loads cfg.data_dir, writes metrics.csv, summary.json and
/// round_<t>/ checkpoints into cfg.out_dir. With resume set, continues from the
/// newest checkpoint found there.
ExperimentResult run_experiment(const ExperimentConfig& cfg, bool resume = false,
                                const RoundCallback& on_round = {});

/// Newest round_<t> directory holding a complete checkpoint, if any.
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& out_dir);

}  // namespace isac
