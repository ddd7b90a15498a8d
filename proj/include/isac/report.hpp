#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "isac/experiment.hpp"

namespace isac {

/// One metrics.csv with a legend label.
struct LabeledRun {
    std::string label;
    std::vector<CsvRow> rows;
};

/// Label is the parent directory for files named metrics.csv, else the file stem.
LabeledRun load_run(const std::filesystem::path& csv);

/// System utility vs round, one polyline per run.
std::string render_utility_svg(const std::vector<LabeledRun>& runs, const std::string& title);

/// pi_m vs round, one polyline per (run, BS).
std::string render_pi_svg(const std::vector<LabeledRun>& runs, const std::string& title);

struct ComparisonRow {
    std::string label;
    double final_utility = 0.0;
    double best_utility = 0.0;
    /// (baseline final - this final) / this final, in percent.
    double baseline_gain_pct = 0.0;
};

std::vector<ComparisonRow> compare_runs(const std::vector<LabeledRun>& runs, std::size_t baseline);
std::string format_comparison(const std::vector<ComparisonRow>& rows, const std::string& baseline_label);

}  // namespace isac
