#include "isac/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "isac/error.hpp"

namespace isac {

using json = nlohmann::json;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::size_t to_count(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const auto* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

double to_real(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

std::string fmt_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (rounds < 1) throw ConfigError("rounds must be >= 1");
    if (local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
    if (!(kappa > 0.0)) throw ConfigError("kappa must be positive");
    if (eval_batch < 1) throw ConfigError("eval_batch must be >= 1");
    if (!(pi_fixed >= 0.0 && pi_fixed <= 1.0)) throw ConfigError("pi_fixed must lie in [0, 1]");
    if (samples < 10) throw ConfigError("samples must be >= 10");
    if (antennas < 1) throw ConfigError("antennas must be >= 1");
    if (hidden < 1) throw ConfigError("hidden must be >= 1");
    if (threads < 1) throw ConfigError("threads must be >= 1");
}

Scenario ExperimentConfig::scenario_description() const {
    return with_antennas(build_paper_scenario(scenario), antennas);
}

SimulationConfig ExperimentConfig::simulation_config(const Scenario& scn) const {
    SimulationConfig s;
    s.net = net_config_for(scn, hidden);
    s.strategy.kind = strategy;
    s.strategy.em.kappa = kappa;
    s.strategy.em.eval_batch = eval_batch;
    s.strategy.em.eval_subset = std::max<std::size_t>(1024, eval_batch);
    s.strategy.pi_fixed = pi_fixed;
    s.strategy.fedper_local_layers = fedper_local_layers;
    s.strategy.pfedme_lambda = pfedme_lambda;
    s.strategy.pfedme_inner_steps = pfedme_inner_steps;
    s.local_epochs = local_epochs;
    s.batch_size = batch_size;
    s.lr = lr;
    s.seed = seed;
    s.threads = threads;
    return s;
}

void apply_preset(ExperimentConfig& cfg, const std::string& preset) {
    if (preset == "desk") {
        cfg.antennas = 4;
        cfg.samples = 2000;
        cfg.rounds = 30;
    } else if (preset == "full") {
        cfg.antennas = 8;
        cfg.samples = 20000;
        cfg.rounds = 100;
    } else {
        throw ConfigError("unknown preset '" + preset + "' (expected desk or full)");
    }
}

const std::vector<std::string>& setting_keys() {
    static const std::vector<std::string> keys = {
        "preset",     "scenario",      "strategy",      "rounds",        "epochs",       "batch",
        "lr",         "kappa",         "eval-batch",    "pi-fixed",      "fedper-local", "pfedme-lambda",
        "pfedme-inner", "seed",        "samples",       "antennas",      "hidden",       "threads",
        "checkpoint-every", "data",    "out"};
    return keys;
}

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& raw) {
    const auto v = trim(raw);
    if (key == "preset") {
        apply_preset(cfg, v);
    } else if (key == "scenario") {
        const auto s = parse_variant(v);
        if (!s) throw ConfigError("unknown scenario '" + v + "'");
        cfg.scenario = *s;
    } else if (key == "strategy") {
        const auto s = parse_strategy(v);
        if (!s) throw ConfigError("unknown strategy '" + v + "'");
        cfg.strategy = *s;
    } else if (key == "rounds") {
        cfg.rounds = to_count(key, v);
    } else if (key == "epochs") {
        cfg.local_epochs = to_count(key, v);
    } else if (key == "batch") {
        cfg.batch_size = to_count(key, v);
    } else if (key == "lr") {
        cfg.lr = to_real(key, v);
    } else if (key == "kappa") {
        cfg.kappa = to_real(key, v);
    } else if (key == "eval-batch") {
        cfg.eval_batch = to_count(key, v);
    } else if (key == "pi-fixed") {
        cfg.pi_fixed = to_real(key, v);
    } else if (key == "fedper-local") {
        cfg.fedper_local_layers = to_count(key, v);
    } else if (key == "pfedme-lambda") {
        cfg.pfedme_lambda = to_real(key, v);
    } else if (key == "pfedme-inner") {
        cfg.pfedme_inner_steps = to_count(key, v);
    } else if (key == "seed") {
        cfg.seed = to_count(key, v);
    } else if (key == "samples") {
        cfg.samples = to_count(key, v);
    } else if (key == "antennas") {
        cfg.antennas = to_count(key, v);
    } else if (key == "hidden") {
        cfg.hidden = to_count(key, v);
    } else if (key == "threads") {
        cfg.threads = to_count(key, v);
    } else if (key == "checkpoint-every") {
        cfg.checkpoint_every = to_count(key, v);
    } else if (key == "data") {
        cfg.data_dir = v;
    } else if (key == "out") {
        cfg.out_dir = v;
    } else {
        throw ConfigError("unknown setting '" + key + "'");
    }
}

std::map<std::string, std::string> read_settings_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

void apply_settings(ExperimentConfig& cfg, const std::map<std::string, std::string>& kv) {
    if (const auto it = kv.find("preset"); it != kv.end()) apply_preset(cfg, trim(it->second));
    for (const auto& [k, v] : kv)
        if (k != "preset") apply_setting(cfg, k, v);
}

json config_to_json(const ExperimentConfig& cfg) {
    return {{"scenario", std::string(to_string(cfg.scenario))},
            {"strategy", std::string(to_string(cfg.strategy))},
            {"rounds", cfg.rounds},
            {"epochs", cfg.local_epochs},
            {"batch", cfg.batch_size},
            {"lr", cfg.lr},
            {"kappa", cfg.kappa},
            {"eval_batch", cfg.eval_batch},
            {"pi_fixed", cfg.pi_fixed},
            {"fedper_local", cfg.fedper_local_layers},
            {"pfedme_lambda", cfg.pfedme_lambda},
            {"pfedme_inner", cfg.pfedme_inner_steps},
            {"seed", cfg.seed},
            {"samples", cfg.samples},
            {"antennas", cfg.antennas},
            {"hidden", cfg.hidden}};
}

// ---------------------------------------------------------------------------

const char* const kCsvHeader = "round,bs,pi,loss,comm_rate,radar_rate,utility,system_utility";

std::string format_csv_row(const CsvRow& r) {
    return std::to_string(r.round) + ',' + std::to_string(r.bs) + ',' + fmt_double(r.pi) + ',' + fmt_double(r.loss) +
           ',' + fmt_double(r.comm_rate) + ',' + fmt_double(r.radar_rate) + ',' + fmt_double(r.utility) + ',' +
           fmt_double(r.system_utility) + '\n';
}

std::string format_csv_rows(const RoundMetrics& rm) {
    std::string out;
    for (std::size_t m = 0; m < rm.bs.size(); ++m) {
        const auto& b = rm.bs[m];
        out += format_csv_row({rm.round, m, b.pi, b.loss, b.comm_rate, b.radar_rate, b.utility, rm.system_utility});
    }
    return out;
}

std::string format_metrics_csv(const std::vector<RoundMetrics>& rounds) {
    std::string out = std::string(kCsvHeader) + '\n';
    for (const auto& r : rounds) out += format_csv_rows(r);
    return out;
}

std::vector<CsvRow> parse_metrics_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || trim(line) != kCsvHeader) throw DataError("metrics CSV: missing or wrong header");
    std::vector<CsvRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
        if (cells.size() != 8) throw DataError("metrics CSV line " + std::to_string(lineno) + ": expected 8 columns");
        try {
            rows.push_back({to_count("round", cells[0]), to_count("bs", cells[1]), to_real("pi", cells[2]),
                            to_real("loss", cells[3]), to_real("comm_rate", cells[4]), to_real("radar_rate", cells[5]),
                            to_real("utility", cells[6]), to_real("system_utility", cells[7])});
        } catch (const ConfigError& e) {
            throw DataError("metrics CSV line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (rows.empty()) throw DataError("metrics CSV has no rows");
    return rows;
}

std::vector<CsvRow> read_metrics_csv(const std::filesystem::path& path) {
    try {
        return parse_metrics_csv(detail::slurp(path));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

RunSummary summarize(const std::vector<CsvRow>& rows) {
    if (rows.empty()) throw DataError("cannot summarize an empty run");
    std::map<std::size_t, std::vector<const CsvRow*>> by_round;
    for (const auto& r : rows) by_round[r.round].push_back(&r);

    RunSummary s;
    s.rounds = by_round.size();
    s.best_system_utility = -INFINITY;
    for (const auto& [round, rs] : by_round) {
        const double sys = rs.front()->system_utility;
        if (sys > s.best_system_utility) {
            s.best_system_utility = sys;
            s.best_round = round;
        }
        double lo = INFINITY, hi = -INFINITY;
        for (const auto* r : rs) {
            lo = std::min(lo, r->pi);
            hi = std::max(hi, r->pi);
        }
        s.max_pi_spread = std::max(s.max_pi_spread, hi - lo);
    }
    const auto& last = by_round.rbegin()->second;
    s.final_system_utility = last.front()->system_utility;
    double lo = INFINITY, hi = -INFINITY;
    for (const auto* r : last) {
        s.final_utility.push_back(r->utility);
        s.final_pi.push_back(r->pi);
        lo = std::min(lo, r->pi);
        hi = std::max(hi, r->pi);
    }
    s.final_pi_spread = hi - lo;
    s.final_mean_utility = s.final_system_utility / static_cast<double>(last.size());
    return s;
}

json summary_to_json(const RunSummary& s) {
    return {{"rounds", s.rounds},
            {"final_system_utility", s.final_system_utility},
            {"final_mean_utility_per_bs", s.final_mean_utility},
            {"best_system_utility", s.best_system_utility},
            {"best_round", s.best_round},
            {"final_utility_per_bs", s.final_utility},
            {"final_pi", s.final_pi},
            {"final_pi_spread", s.final_pi_spread},
            {"max_pi_spread", s.max_pi_spread}};
}

// ---------------------------------------------------------------------------

namespace {

void check_round(const RoundMetrics& rm, double p_t) {
    if (rm.max_power > p_t + 1e-9)
        throw NumericalError("power budget violated in round " + std::to_string(rm.round) + ": ||W||^2 = " +
                             fmt_double(rm.max_power));
}

std::vector<CsvRow> to_rows(const std::vector<RoundMetrics>& rounds) {
    return parse_metrics_csv(format_metrics_csv(rounds));
}

}  // namespace

ExperimentResult simulate(const Dataset& data, const ExperimentConfig& cfg, const RoundCallback& on_round) {
    cfg.validate();
    Simulation sim(data, cfg.simulation_config(data.scenario));
    ExperimentResult result;
    for (std::size_t t = 0; t < cfg.rounds; ++t) {
        auto rm = sim.run_round();
        check_round(rm, data.scenario.p_t);
        result.max_power = std::max(result.max_power, rm.max_power);
        if (on_round) on_round(rm);
        result.rounds.push_back(std::move(rm));
    }
    result.summary = summarize(to_rows(result.rounds));
    return result;
}

std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(out_dir)) return std::nullopt;
    std::optional<fs::path> best;
    std::size_t best_t = 0;
    for (const auto& entry : fs::directory_iterator(out_dir)) {
        const auto name = entry.path().filename().string();
        if (!entry.is_directory() || name.rfind("round_", 0) != 0) continue;
        if (!fs::exists(entry.path() / "state.json")) continue;
        std::size_t t = 0;
        const auto digits = name.substr(6);
        const auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), t);
        if (ec != std::errc() || p != digits.data() + digits.size()) continue;
        if (!best || t > best_t) {
            best = entry.path();
            best_t = t;
        }
    }
    return best;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg_in, bool resume, const RoundCallback& on_round) {
    namespace fs = std::filesystem;
    ExperimentConfig cfg = cfg_in;
    cfg.validate();
    if (cfg.data_dir.empty()) cfg.data_dir = default_dataset_dir("data", cfg.scenario, cfg.seed);
    if (cfg.out_dir.empty())
        cfg.out_dir = fs::path("run") / (std::string(to_string(cfg.scenario)) + "_" +
                                         std::string(to_string(cfg.strategy)) + "_s" + std::to_string(cfg.seed));

    if (!fs::exists(dataset_file(cfg.data_dir, 0)))
        throw DataError("no dataset in " + cfg.data_dir.string() + "; create it with: isac_pfl gen-data --scenario " +
                        std::string(to_string(cfg.scenario)) + " --seed " + std::to_string(cfg.seed) +
                        " --samples " + std::to_string(cfg.samples) + " --antennas " + std::to_string(cfg.antennas) +
                        " --out " + cfg.data_dir.string());
    const Dataset data = read_dataset(cfg.data_dir);
    if (scenario_to_json(data.scenario) != scenario_to_json(cfg.scenario_description()))
        throw ConfigError("dataset in " + cfg.data_dir.string() + " was generated for a different scenario than '" +
                          std::string(to_string(cfg.scenario)) + "' with " + std::to_string(cfg.antennas) +
                          " antennas");

    Simulation sim(data, cfg.simulation_config(data.scenario));
    ExperimentResult result;
    fs::create_directories(cfg.out_dir);
    const auto csv_path = cfg.out_dir / "metrics.csv";

    std::string csv = std::string(kCsvHeader) + '\n';
    if (resume) {
        if (const auto ckpt = latest_checkpoint(cfg.out_dir)) {
            sim.load_checkpoint(*ckpt);
            // Keep only rows of rounds the checkpoint already covers.
            if (fs::exists(csv_path)) {
                for (const auto& r : read_metrics_csv(csv_path))
                    if (r.round < sim.rounds_completed()) csv += format_csv_row(r);
            }
        }
    }

    {
        std::ofstream out(csv_path, std::ios::trunc | std::ios::binary);
        if (!out) throw DataError("cannot write " + csv_path.string());
        out << csv;
        while (sim.rounds_completed() < cfg.rounds) {
            auto rm = sim.run_round();
            check_round(rm, data.scenario.p_t);
            result.max_power = std::max(result.max_power, rm.max_power);
            out << format_csv_rows(rm);
            out.flush();
            const std::size_t done = sim.rounds_completed();
            if ((cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) || done == cfg.rounds)
                sim.save_checkpoint(cfg.out_dir / ("round_" + std::to_string(done - 1)));
            if (on_round) on_round(rm);
            result.rounds.push_back(std::move(rm));
        }
    }

    result.summary = summarize(read_metrics_csv(csv_path));
    json summary = summary_to_json(result.summary);
    summary["config"] = config_to_json(cfg);
    summary["scenario"] = scenario_to_json(data.scenario);
    detail::spit(cfg.out_dir / "summary.json", summary.dump(2) + "\n");
    return result;
}

}  // namespace isac
