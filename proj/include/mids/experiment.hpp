/**
 * Experiment harness: JSON config ingestion with a preset layer, multi-seed
 * chain orchestration with a bounded worker pool, JSONL metric logs, and
 * CSV aggregation with 95% confidence intervals.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mids/engine.hpp"

namespace mids {

inline constexpr const char* kCodeVersion = "0.1.0";

/// Configuration problems (bad file, schema violation, contradictory knobs).
/// The CLI maps these to exit code 1; other failures exit 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ArmConfig {
    std::string name;
    BlobsConfig dataset;
    OracleConfig oracles;
    EngineConfig engine;
};

struct ExperimentConfig {
    std::string name;
    std::vector<ArmConfig> arms;
    std::vector<std::uint64_t> seeds;
    std::string output_dir = "runs";
    bool checkpoints = false;
    int eval_size = 5000;
    nlohmann::json resolved;  // fully resolved config JSON (for the manifest/hash)

    void validate() const;
};

/// Built-in presets, name -> config patch over the base defaults.
const std::map<std::string, nlohmann::json>& preset_registry();

nlohmann::json base_config_json();

/// Resolve defaults <- preset <- user JSON, expand arms/sweeps, validate.
/// Throws ConfigError naming the offending key path.
ExperimentConfig config_from_json(const nlohmann::json& user);
ExperimentConfig parse_config(const std::string& path);

struct RunResult {
    std::filesystem::path dir;
    int failed_seeds = 0;
};

/// Execute every (arm, seed) chain with a bounded worker pool (size from
/// MIDS_WORKERS when set), write one JSONL per seed and one aggregate CSV
/// per arm, plus a manifest. Chain failures are recorded per seed without
/// aborting siblings.
RunResult run_experiment(const ExperimentConfig& config);

/// 64-bit FNV-1a of the canonical config dump, hex-encoded.
std::string config_hash(const nlohmann::json& resolved);

// Aggregation helpers shared with the chart writer and tests.
struct AggregateTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;  // NaN for missing values

    int column(const std::string& name) const;  // -1 when absent
};

AggregateTable aggregate_records(const std::vector<std::vector<GenerationRecord>>& per_seed);
void write_csv(const AggregateTable& table, const std::filesystem::path& path);
AggregateTable read_csv(const std::filesystem::path& path);

}  // namespace mids
