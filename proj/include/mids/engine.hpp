/**
 * Generational chain orchestration for the three settings:
 *
 *   SeqClass          - classifiers chained through their predecessors' labels
 *   SeqGenNonSeqClass - generators chained, classifiers labeled by the oracle
 *   SeqGenSeqClass    - generators and classifiers both chained
 *
 * including synthetic/non-synthetic mixing, disparity-amplification quota
 * sampling of the non-synthetic pool, and cla-/gen-STAR batch curation.
 */
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mids/dataset.hpp"
#include "mids/metrics.hpp"
#include "mids/models.hpp"
#include "mids/star.hpp"

namespace mids {

enum class SettingKind { SeqClass, SeqGenNonSeqClass, SeqGenSeqClass };
enum class StarMode { None, Cla, Gen, Both };

std::string to_string(SettingKind kind);
std::string to_string(StarMode mode);
SettingKind setting_kind_from_string(const std::string& s);
StarMode star_mode_from_string(const std::string& s);

struct SettingSpec {
    SettingKind kind = SettingKind::SeqClass;
    int generations = 40;
    double synthetic_fraction = 1.0;
    bool disparity_amplification = false;
    StarMode star = StarMode::None;
    int n_train = 2000;

    void validate() const;
};

struct EngineConfig {
    SettingSpec setting;
    TrainConfig classifier;
    TrainConfig generator;
    double budget_fraction = 0.25;
    FairnessIdeal ideal;  // empty target resolves to uniform at run start
    int probe_size = 1000;
    int relative_size = 5000;
    double holdout_fraction = 0.2;  // strata-probe share of the D split
    std::string checkpoint_dir;     // when set, per-generation model snapshots
    std::optional<std::uint64_t> eval_seed;  // defaults to a stream derived from the master
};

/// Chain state for one generation; the generator slot stays empty in
/// SeqClass where the reference generator is reused throughout.
struct GenerationState {
    int index = 0;
    Classifier classifier;
    std::optional<Generator> generator;
};

/// Sample n non-synthetic items whose strata follow the previous
/// classifier's prediction frequencies on the probe set (true groups).
QuotaSampleResult disparity_sample(const LabeledDataset& pool, const LabeledDataset& probe,
                                   const Classifier& prev_classifier, long n, Rng& rng);

/// Concatenate synthetic and non-synthetic parts sized round(fraction * n)
/// and n - round(fraction * n), then shuffle with the run's data stream.
LabeledDataset mix_training_data(const LabeledDataset& synthetic,
                                 const LabeledDataset& nonsynthetic,
                                 double fraction, Rng& rng);

std::vector<GenerationRecord> run_seq_class(const EngineConfig& config, const Oracles& oracles,
                                            const LabeledDataset& data,
                                            const LabeledDataset& eval_set,
                                            std::uint64_t master_seed);

std::vector<GenerationRecord> run_seq_gen(const EngineConfig& config, const Oracles& oracles,
                                          const LabeledDataset& data,
                                          const LabeledDataset& eval_set,
                                          std::uint64_t master_seed);

/// Dispatch on config.setting.kind.
std::vector<GenerationRecord> run_chain(const EngineConfig& config, const Oracles& oracles,
                                        const LabeledDataset& data,
                                        const LabeledDataset& eval_set,
                                        std::uint64_t master_seed);

}  // namespace mids
