#include "isac/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "isac/error.hpp"

namespace isac {

namespace {

constexpr double kWidth = 760, kHeight = 440;
constexpr double kLeft = 70, kRight = 190, kTop = 60, kBottom = 50;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string num(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", x);
    return buf;
}

std::string tick_label(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", x);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

std::string render(const std::vector<Series>& series, const std::string& title, const std::string& subtitle,
                   const std::string& y_label) {
    double x_lo = INFINITY, x_hi = -INFINITY, y_lo = INFINITY, y_hi = -INFINITY;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            x_lo = std::min(x_lo, x);
            x_hi = std::max(x_hi, x);
            y_lo = std::min(y_lo, y);
            y_hi = std::max(y_hi, y);
        }
    if (!(x_hi > x_lo)) x_hi = x_lo + 1.0;
    if (!(y_hi > y_lo)) {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    const double pad = 0.05 * (y_hi - y_lo);
    y_lo -= pad;
    y_hi += pad;

    const double plot_w = kWidth - kLeft - kRight, plot_h = kHeight - kTop - kBottom;
    auto px = [&](double x) { return kLeft + (x - x_lo) / (x_hi - x_lo) * plot_w; };
    auto py = [&](double y) { return kTop + (y_hi - y) / (y_hi - y_lo) * plot_h; };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) +
           "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + num(kLeft) + "\" y=\"24\" font-size=\"16\">" + escape(title) + "</text>\n";
    svg += "<text x=\"" + num(kLeft) + "\" y=\"42\" fill=\"#555\">" + escape(subtitle) + "</text>\n";
    svg += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" + num(plot_w) + "\" height=\"" +
           num(plot_h) + "\" fill=\"none\" stroke=\"black\"/>\n";

    for (int i = 0; i <= 5; ++i) {
        const double fx = x_lo + (x_hi - x_lo) * i / 5.0;
        const double fy = y_lo + (y_hi - y_lo) * i / 5.0;
        svg += "<line x1=\"" + num(px(fx)) + "\" y1=\"" + num(kTop + plot_h) + "\" x2=\"" + num(px(fx)) + "\" y2=\"" +
               num(kTop + plot_h + 5) + "\" stroke=\"black\"/>\n";
        svg += "<text x=\"" + num(px(fx)) + "\" y=\"" + num(kTop + plot_h + 18) + "\" text-anchor=\"middle\">" +
               tick_label(fx) + "</text>\n";
        svg += "<line x1=\"" + num(kLeft - 5) + "\" y1=\"" + num(py(fy)) + "\" x2=\"" + num(kLeft) + "\" y2=\"" +
               num(py(fy)) + "\" stroke=\"black\"/>\n";
        svg += "<text x=\"" + num(kLeft - 8) + "\" y=\"" + num(py(fy) + 4) + "\" text-anchor=\"end\">" +
               tick_label(fy) + "</text>\n";
    }
    svg += "<text x=\"" + num(kLeft + plot_w / 2) + "\" y=\"" + num(kHeight - 10) +
           "\" text-anchor=\"middle\">communication round</text>\n";
    svg += "<text x=\"16\" y=\"" + num(kTop + plot_h / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
           num(kTop + plot_h / 2) + ")\">" + escape(y_label) + "</text>\n";

    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto* color = kPalette[i % std::size(kPalette)];
        std::string pts;
        for (const auto& [x, y] : series[i].points) {
            if (!pts.empty()) pts += ' ';
            pts += num(px(x)) + ',' + num(py(y));
        }
        svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.8\" points=\"" + pts +
               "\"/>\n";
        const double ly = kTop + 10 + 18.0 * static_cast<double>(i);
        svg += "<line x1=\"" + num(kWidth - kRight + 12) + "\" y1=\"" + num(ly) + "\" x2=\"" +
               num(kWidth - kRight + 32) + "\" y2=\"" + num(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
        svg += "<text x=\"" + num(kWidth - kRight + 38) + "\" y=\"" + num(ly + 4) + "\">" + escape(series[i].label) +
               "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

void require_rows(const std::vector<LabeledRun>& runs) {
    if (runs.empty()) throw DataError("nothing to plot");
    for (const auto& r : runs)
        if (r.rows.empty()) throw DataError("run '" + r.label + "' has no rows");
}

}  // namespace

LabeledRun load_run(const std::filesystem::path& csv) {
    LabeledRun run;
    run.label = csv.filename() == "metrics.csv" && csv.has_parent_path() ? csv.parent_path().filename().string()
                                                                         : csv.stem().string();
    if (run.label.empty()) run.label = csv.string();
    run.rows = read_metrics_csv(csv);
    return run;
}

std::string render_utility_svg(const std::vector<LabeledRun>& runs, const std::string& title) {
    require_rows(runs);
    std::vector<Series> series;
    for (const auto& r : runs) {
        Series s{r.label, {}};
        std::map<std::size_t, double> per_round;
        for (const auto& row : r.rows) per_round[row.round] = row.system_utility;
        for (const auto& [t, u] : per_round) s.points.emplace_back(static_cast<double>(t), u);
        series.push_back(std::move(s));
    }
    return render(series, title, "raw system utility: sum over BSs of rho R_c + (1 - rho) R_s (not normalized)",
                  "system utility [bit/s/Hz]");
}

std::string render_pi_svg(const std::vector<LabeledRun>& runs, const std::string& title) {
    require_rows(runs);
    std::vector<Series> series;
    for (const auto& r : runs) {
        std::map<std::size_t, std::vector<std::pair<double, double>>> per_bs;
        for (const auto& row : r.rows) per_bs[row.bs].emplace_back(static_cast<double>(row.round), row.pi);
        for (auto& [m, pts] : per_bs) {
            std::sort(pts.begin(), pts.end());
            const auto label = runs.size() == 1 ? "BS" + std::to_string(m + 1) : r.label + " BS" + std::to_string(m + 1);
            series.push_back({label, std::move(pts)});
        }
    }
    return render(series, title, "weight on the global model when forming each personalized model", "pi_m");
}

std::vector<ComparisonRow> compare_runs(const std::vector<LabeledRun>& runs, std::size_t baseline) {
    require_rows(runs);
    if (baseline >= runs.size()) throw ConfigError("baseline index out of range");
    std::vector<ComparisonRow> out;
    for (const auto& r : runs) {
        const auto s = summarize(r.rows);
        out.push_back({r.label, s.final_system_utility, s.best_system_utility, 0.0});
    }
    const double base = out[baseline].final_utility;
    for (auto& row : out) row.baseline_gain_pct = 100.0 * (base - row.final_utility) / row.final_utility;
    return out;
}

std::string format_comparison(const std::vector<ComparisonRow>& rows, const std::string& baseline_label) {
    std::size_t width = 5;
    for (const auto& r : rows) width = std::max(width, r.label.size());
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-*s  %14s  %14s  %s\n", static_cast<int>(width), "run", "final utility",
                  "best utility", ("gain of " + baseline_label + " [%]").c_str());
    out += buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-*s  %14.6f  %14.6f  %+.2f\n", static_cast<int>(width), r.label.c_str(),
                      r.final_utility, r.best_utility, r.baseline_gain_pct);
        out += buf;
    }
    return out;
}

}  // namespace isac
