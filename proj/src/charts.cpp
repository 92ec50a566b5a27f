#include "mids/charts.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "mids/experiment.hpp"

namespace mids {

namespace fs = std::filesystem;

namespace {

constexpr int kWidth = 860;
constexpr int kHeight = 520;
constexpr int kMarginLeft = 70, kMarginRight = 160, kMarginTop = 48, kMarginBottom = 56;
constexpr int kPlotW = kWidth - kMarginLeft - kMarginRight;
constexpr int kPlotH = kHeight - kMarginTop - kMarginBottom;

const char* kPalette[] = {"#2563eb", "#dc2626", "#059669", "#d97706",
                          "#7c3aed", "#0891b2", "#be185d", "#4d7c0f"};
constexpr int kPaletteSize = 8;

std::string esc(const std::string& s) {
    std::string out;
    out.reserve(s.size());
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

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

struct Scale {
    double x_min = 0, x_max = 1, y_min = 0, y_max = 1;

    double px(double x) const {
        return kMarginLeft + (x - x_min) / (x_max - x_min) * kPlotW;
    }
    double py(double y) const {
        return kMarginTop + kPlotH - (y - y_min) / (y_max - y_min) * kPlotH;
    }
};

// Round tick spacing to 1/2/5 * 10^k.
double nice_step(double span, int target_ticks) {
    const double raw = span / std::max(1, target_ticks);
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 5.0, 10.0})
        if (raw <= m * mag) return m * mag;
    return 10.0 * mag;
}

void open_svg(std::ostream& out, const std::string& title) {
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
        << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n"
        << "<rect width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"#ffffff\"/>\n"
        << "<text x=\"" << kWidth / 2 << "\" y=\"26\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"17\" fill=\"#111\">" << esc(title)
        << "</text>\n";
}

void draw_axes(std::ostream& out, const Scale& s, const std::string& x_label,
               const std::string& y_label) {
    // gridlines + ticks
    const double x_step = nice_step(s.x_max - s.x_min, 8);
    const double y_step = nice_step(s.y_max - s.y_min, 6);
    for (double x = std::ceil(s.x_min / x_step) * x_step; x <= s.x_max + 1e-9; x += x_step) {
        out << "<line x1=\"" << num(s.px(x)) << "\" y1=\"" << kMarginTop << "\" x2=\""
            << num(s.px(x)) << "\" y2=\"" << kMarginTop + kPlotH
            << "\" stroke=\"#e5e7eb\" stroke-width=\"1\"/>\n";
        out << "<text x=\"" << num(s.px(x)) << "\" y=\"" << kMarginTop + kPlotH + 18
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" "
            << "fill=\"#444\">" << num(x) << "</text>\n";
    }
    for (double y = std::ceil(s.y_min / y_step) * y_step; y <= s.y_max + 1e-9; y += y_step) {
        out << "<line x1=\"" << kMarginLeft << "\" y1=\"" << num(s.py(y)) << "\" x2=\""
            << kMarginLeft + kPlotW << "\" y2=\"" << num(s.py(y))
            << "\" stroke=\"#e5e7eb\" stroke-width=\"1\"/>\n";
        out << "<text x=\"" << kMarginLeft - 8 << "\" y=\"" << num(s.py(y) + 4)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" "
            << "fill=\"#444\">" << num(y) << "</text>\n";
    }
    out << "<rect x=\"" << kMarginLeft << "\" y=\"" << kMarginTop << "\" width=\"" << kPlotW
        << "\" height=\"" << kPlotH << "\" fill=\"none\" stroke=\"#9ca3af\"/>\n";
    out << "<text x=\"" << kMarginLeft + kPlotW / 2 << "\" y=\"" << kHeight - 14
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" fill=\"#111\">"
        << esc(x_label) << "</text>\n";
    out << "<text x=\"18\" y=\"" << kMarginTop + kPlotH / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" fill=\"#111\" "
        << "transform=\"rotate(-90 18 " << kMarginTop + kPlotH / 2 << ")\">" << esc(y_label)
        << "</text>\n";
}

void draw_shading(std::ostream& out, const Scale& s,
                  const std::vector<std::pair<double, double>>& shaded) {
    for (const auto& [a, b] : shaded) {
        const double x0 = std::max(a, s.x_min), x1 = std::min(b, s.x_max);
        if (x1 <= x0) continue;
        out << "<rect x=\"" << num(s.px(x0)) << "\" y=\"" << kMarginTop << "\" width=\""
            << num(s.px(x1) - s.px(x0)) << "\" height=\"" << kPlotH
            << "\" fill=\"#9ca3af\" fill-opacity=\"0.18\"/>\n";
    }
}

void draw_legend(std::ostream& out, const std::vector<std::string>& names) {
    const int x = kMarginLeft + kPlotW + 12;
    int y = kMarginTop + 8;
    for (std::size_t i = 0; i < names.size(); ++i) {
        const char* color = kPalette[i % kPaletteSize];
        out << "<rect x=\"" << x << "\" y=\"" << y - 9 << "\" width=\"14\" height=\"4\" fill=\""
            << color << "\"/>\n";
        out << "<text x=\"" << x + 20 << "\" y=\"" << y
            << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#111\">"
            << esc(names[i]) << "</text>\n";
        y += 18;
    }
}

}  // namespace

void write_line_chart(const fs::path& path, const std::string& title, const std::string& x_label,
                      const std::string& y_label, const std::vector<ChartSeries>& series,
                      const std::vector<std::pair<double, double>>& shaded) {
    if (series.empty()) throw std::invalid_argument("write_line_chart: no series");
    Scale s;
    s.x_min = std::numeric_limits<double>::infinity();
    s.x_max = -s.x_min;
    s.y_min = s.x_min;
    s.y_max = s.x_max;
    for (const auto& sr : series)
        for (std::size_t i = 0; i < sr.x.size(); ++i) {
            if (std::isnan(sr.y[i])) continue;
            s.x_min = std::min(s.x_min, sr.x[i]);
            s.x_max = std::max(s.x_max, sr.x[i]);
            double lo = sr.lo.empty() ? sr.y[i] : sr.lo[i];
            double hi = sr.hi.empty() ? sr.y[i] : sr.hi[i];
            if (std::isnan(lo)) lo = sr.y[i];
            if (std::isnan(hi)) hi = sr.y[i];
            s.y_min = std::min(s.y_min, lo);
            s.y_max = std::max(s.y_max, hi);
        }
    if (!std::isfinite(s.x_min)) throw std::invalid_argument("write_line_chart: no finite points");
    if (s.x_max == s.x_min) s.x_max = s.x_min + 1;
    if (s.y_max == s.y_min) {
        s.y_min -= 0.5;
        s.y_max += 0.5;
    }
    const double pad = 0.06 * (s.y_max - s.y_min);
    s.y_min -= pad;
    s.y_max += pad;

    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_line_chart: cannot open " + path.string());
    open_svg(out, title);
    draw_shading(out, s, shaded);
    draw_axes(out, s, x_label, y_label);

    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& sr = series[k];
        const char* color = kPalette[k % kPaletteSize];
        if (!sr.lo.empty()) {
            std::ostringstream pts;
            bool any = false;
            for (std::size_t i = 0; i < sr.x.size(); ++i) {
                if (std::isnan(sr.hi[i]) || std::isnan(sr.y[i])) continue;
                pts << num(s.px(sr.x[i])) << "," << num(s.py(sr.hi[i])) << " ";
                any = true;
            }
            for (std::size_t i = sr.x.size(); i-- > 0;) {
                if (std::isnan(sr.lo[i]) || std::isnan(sr.y[i])) continue;
                pts << num(s.px(sr.x[i])) << "," << num(s.py(sr.lo[i])) << " ";
            }
            if (any)
                out << "<polygon points=\"" << pts.str() << "\" fill=\"" << color
                    << "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
        }
        std::ostringstream pts;
        for (std::size_t i = 0; i < sr.x.size(); ++i) {
            if (std::isnan(sr.y[i])) continue;
            pts << num(s.px(sr.x[i])) << "," << num(s.py(sr.y[i])) << " ";
        }
        out << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << color
            << "\" stroke-width=\"2\"/>\n";
    }
    std::vector<std::string> names;
    for (const auto& sr : series) names.push_back(sr.name);
    draw_legend(out, names);
    out << "</svg>\n";
}

void write_stack_chart(const fs::path& path, const std::string& title, const std::string& x_label,
                       const std::vector<std::string>& layer_names, const std::vector<double>& x,
                       const std::vector<std::vector<double>>& layers,
                       const std::vector<std::pair<double, double>>& shaded) {
    if (layers.empty() || x.empty())
        throw std::invalid_argument("write_stack_chart: empty input");
    for (const auto& layer : layers)
        if (layer.size() != x.size())
            throw std::invalid_argument("write_stack_chart: ragged layers");
    Scale s;
    s.x_min = x.front();
    s.x_max = x.back() == x.front() ? x.front() + 1 : x.back();
    s.y_min = 0.0;
    s.y_max = 1.0;

    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_stack_chart: cannot open " + path.string());
    open_svg(out, title);
    draw_axes(out, s, x_label, "share of batch");
    std::vector<double> base(x.size(), 0.0);
    for (std::size_t k = 0; k < layers.size(); ++k) {
        const char* color = kPalette[k % kPaletteSize];
        std::ostringstream pts;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double top = base[i] + (std::isnan(layers[k][i]) ? 0.0 : layers[k][i]);
            pts << num(s.px(x[i])) << "," << num(s.py(std::min(top, 1.0))) << " ";
        }
        for (std::size_t i = x.size(); i-- > 0;)
            pts << num(s.px(x[i])) << "," << num(s.py(base[i])) << " ";
        out << "<polygon points=\"" << pts.str() << "\" fill=\"" << color
            << "\" fill-opacity=\"0.65\" stroke=\"#ffffff\" stroke-width=\"0.5\"/>\n";
        for (std::size_t i = 0; i < x.size(); ++i)
            base[i] += std::isnan(layers[k][i]) ? 0.0 : layers[k][i];
    }
    draw_shading(out, s, shaded);
    draw_legend(out, layer_names);
    out << "</svg>\n";
}

namespace {

struct ArmTable {
    std::string name;
    AggregateTable table;
};

std::vector<double> col_values(const AggregateTable& t, const std::string& name) {
    const int c = t.column(name);
    std::vector<double> out;
    out.reserve(t.rows.size());
    for (const auto& row : t.rows)
        out.push_back(c >= 0 ? row[c] : std::numeric_limits<double>::quiet_NaN());
    return out;
}

bool has_data(const std::vector<double>& v) {
    return std::any_of(v.begin(), v.end(), [](double x) { return !std::isnan(x); });
}

// Contiguous x ranges where at least half the seeds hit the collapse proxy.
std::vector<std::pair<double, double>> collapse_ranges(const AggregateTable& t) {
    auto gen = col_values(t, "gen");
    auto rate = col_values(t, "collapse_rate");
    std::vector<std::pair<double, double>> out;
    for (std::size_t i = 0; i < gen.size(); ++i) {
        if (std::isnan(rate[i]) || rate[i] < 0.5) continue;
        if (!out.empty() && out.back().second + 1.0 >= gen[i])
            out.back().second = gen[i];
        else
            out.emplace_back(gen[i] - 0.5, gen[i]);
    }
    for (auto& r : out) r.second += 0.5;
    return out;
}

ChartSeries metric_series(const ArmTable& arm, const std::string& metric) {
    ChartSeries s;
    s.name = arm.name;
    s.x = col_values(arm.table, "gen");
    s.y = col_values(arm.table, metric + "_mean");
    auto ci = col_values(arm.table, metric + "_ci95");
    s.lo.resize(s.y.size());
    s.hi.resize(s.y.size());
    for (std::size_t i = 0; i < s.y.size(); ++i) {
        const double c = std::isnan(ci[i]) ? 0.0 : ci[i];
        s.lo[i] = s.y[i] - c;
        s.hi[i] = s.y[i] + c;
    }
    return s;
}

}  // namespace

std::vector<fs::path> emit_charts(const fs::path& run_dir) {
    std::vector<ArmTable> arms;
    if (fs::is_directory(run_dir))
        for (const auto& entry : fs::directory_iterator(run_dir)) {
            if (!entry.is_directory()) continue;
            const fs::path csv = entry.path() / "aggregate.csv";
            if (fs::exists(csv)) arms.push_back({entry.path().filename().string(), read_csv(csv)});
        }
    if (arms.empty())
        throw ConfigError("emit_charts: no aggregated CSV found under " + run_dir.string());
    std::sort(arms.begin(), arms.end(),
              [](const auto& a, const auto& b) { return a.name < b.name; });

    const fs::path out_dir = run_dir / "charts";
    fs::create_directories(out_dir);
    std::vector<fs::path> written;
    const auto shaded = collapse_ranges(arms.front().table);

    struct MetricChart {
        const char* column;
        const char* title;
        const char* y_label;
    };
    const MetricChart charts[] = {
        {"accuracy", "Accuracy over generations", "accuracy"},
        {"accuracy_gap", "Max group accuracy gap", "accuracy gap"},
        {"dp_diff", "Demographic parity difference", "DP difference"},
        {"eodds_diff", "Equalized odds difference", "EOdds difference"},
        {"kl_classifier", "KL(classifier strata || ideal)", "KL divergence"},
        {"kl_generator", "KL(generator strata || ideal)", "KL divergence"},
        {"rel_accuracy", "Relative accuracy (vs. predecessor labels)", "accuracy"},
        {"rel_eodds_diff", "Relative equalized odds difference", "EOdds difference"},
        {"class_balance_0", "Class balance (share of label 0)", "share"},
        {"group_balance_0_0", "Group balance (share of group 0)", "share"},
        {"star_resample_frac", "Batch fraction resampled", "resample fraction"},
        {"probe_variance", "Generated-feature variance", "pooled variance"},
    };
    for (const auto& chart : charts) {
        std::vector<ChartSeries> series;
        for (const auto& arm : arms) {
            auto s = metric_series(arm, chart.column);
            if (has_data(s.y)) series.push_back(std::move(s));
        }
        if (series.empty()) continue;
        const fs::path path = out_dir / (std::string(chart.column) + ".svg");
        write_line_chart(path, chart.title, "generation", chart.y_label, series, shaded);
        written.push_back(path);
    }

    // Per-arm strata stacks: curated batch strata when STAR ran, else the
    // classifier output strata.
    for (const auto& arm : arms) {
        const bool star = arm.table.column("star_strata_0_mean") >= 0;
        const std::string prefix = star ? "star_strata_" : "strata_";
        std::vector<std::vector<double>> layers;
        std::vector<std::string> names;
        for (int c = 0;; ++c) {
            auto v = col_values(arm.table, prefix + std::to_string(c) + "_mean");
            if (!has_data(v)) break;
            layers.push_back(std::move(v));
            names.push_back("cell " + std::to_string(c));
        }
        if (layers.empty()) continue;
        const fs::path path = out_dir / ("strata_" + arm.name + ".svg");
        write_stack_chart(path,
                          (star ? "Curated batch strata: " : "Classifier strata: ") + arm.name,
                          "generation", names, col_values(arm.table, "gen"), layers,
                          collapse_ranges(arm.table));
        written.push_back(path);
    }
    return written;
}

}  // namespace mids
