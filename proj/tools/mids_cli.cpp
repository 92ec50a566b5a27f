/**
 * Command-line entry point.
 *
 *   mids run <config.json>      execute an experiment
 *   mids validate <config.json> parse and validate a config
 *   mids presets list           show the built-in presets
 *   mids charts <run-dir>       render SVG charts from a finished run
 *
 * Exit codes: 0 success, 1 configuration error, 2 runtime failure.
 */
#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mids/charts.hpp"
#include "mids/experiment.hpp"

namespace {

int cmd_run(const std::string& config_path, const std::string& out_override, bool checkpoints,
            bool charts) {
    mids::ExperimentConfig config = mids::parse_config(config_path);
    if (!out_override.empty()) config.output_dir = out_override;
    if (checkpoints) config.checkpoints = true;
    auto result = mids::run_experiment(config);
    std::cout << "run dir: " << result.dir.string() << "\n";
    if (charts) {
        auto files = mids::emit_charts(result.dir);
        std::cout << "charts: " << files.size() << " svg files\n";
    }
    if (result.failed_seeds > 0) {
        std::cerr << "error: " << result.failed_seeds
                  << " seed chain(s) failed; see manifest.json\n";
        return 2;
    }
    return 0;
}

int cmd_validate(const std::string& config_path) {
    auto config = mids::parse_config(config_path);
    std::cout << "ok: '" << config.name << "' with " << config.arms.size() << " arm(s) x "
              << config.seeds.size() << " seed(s)\n";
    for (const auto& arm : config.arms)
        std::cout << "  arm " << arm.name << ": " << mids::to_string(arm.engine.setting.kind)
                  << ", " << arm.engine.setting.generations << " generations, star="
                  << mids::to_string(arm.engine.setting.star) << "\n";
    return 0;
}

int cmd_presets() {
    for (const auto& [name, patch] : mids::preset_registry()) {
        auto config = mids::config_from_json({{"preset", name}});
        std::printf("%-28s %-18s %zu arm(s)\n", name.c_str(),
                    mids::to_string(config.arms.front().engine.setting.kind).c_str(),
                    config.arms.size());
    }
    return 0;
}

int cmd_charts(const std::string& run_dir) {
    auto files = mids::emit_charts(run_dir);
    for (const auto& f : files) std::cout << f.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Generational simulation of model-induced distribution shifts"};
    app.require_subcommand(1);

    std::string config_path, out_override, run_dir;
    bool checkpoints = false, charts = false;

    auto* run = app.add_subcommand("run", "Execute an experiment config");
    run->add_option("config", config_path, "JSON config or preset reference")->required();
    run->add_option("--out", out_override, "Override the output directory");
    run->add_flag("--checkpoints", checkpoints, "Write per-generation model snapshots");
    run->add_flag("--charts", charts, "Emit SVG charts after the run");

    auto* validate = app.add_subcommand("validate", "Parse and validate a config");
    validate->add_option("config", config_path, "JSON config path")->required();

    auto* presets = app.add_subcommand("presets", "Built-in experiment presets");
    presets->add_subcommand("list", "List presets");

    auto* charts_cmd = app.add_subcommand("charts", "Render charts for a finished run");
    charts_cmd->add_option("run_dir", run_dir, "Run directory with aggregate CSVs")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, out_override, checkpoints, charts);
        if (validate->parsed()) return cmd_validate(config_path);
        if (presets->parsed()) return cmd_presets();
        if (charts_cmd->parsed()) return cmd_charts(run_dir);
    } catch (const mids::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
