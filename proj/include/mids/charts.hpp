/**
 * Self-contained SVG chart emission from a run directory's aggregate CSVs:
 * per-metric line charts with 95% CI bands (one series per arm), stacked
 * strata charts per arm, and collapse-region shading.
 */
#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace mids {

struct ChartSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> lo;  // CI band, empty to skip
    std::vector<double> hi;
};

void write_line_chart(const std::filesystem::path& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<ChartSeries>& series,
                      const std::vector<std::pair<double, double>>& shaded = {});

void write_stack_chart(const std::filesystem::path& path, const std::string& title,
                       const std::string& x_label, const std::vector<std::string>& layer_names,
                       const std::vector<double>& x,
                       const std::vector<std::vector<double>>& layers,
                       const std::vector<std::pair<double, double>>& shaded = {});

/// Render every chart for a finished run directory (requires the per-arm
/// aggregate.csv files). Returns the paths written.
std::vector<std::filesystem::path> emit_charts(const std::filesystem::path& run_dir);

}  // namespace mids
