/**
 * Group fairness and utility metrics, strata/KL tracking, generator balance
 * probes, and the actual-vs-relative evaluation of a generation.
 *
 * Multi-group metrics reduce by the maximum pairwise disparity. Groups with
 * no measurable rate are excluded and counted; when fewer than two groups
 * remain a metric reports an undefined status instead of 0.
 */
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mids/dataset.hpp"
#include "mids/models.hpp"
#include "mids/star.hpp"

namespace mids {

struct MetricValue {
    double value = 0.0;
    bool defined = true;
    int excluded_groups = 0;
};

/// Max over group pairs of |P(pred=1 | a) - P(pred=1 | b)|. Predictions
/// must be binary; group ids lie in [0, n_groups).
MetricValue demographic_parity_diff(std::span<const int> predictions,
                                    std::span<const int> groups, int n_groups);

/// Max over group pairs of max(|TPR gap|, |FPR gap|); a group's TPR (FPR)
/// is excluded when it has no positive (negative) labeled samples.
MetricValue equalized_odds_diff(std::span<const int> predictions, std::span<const int> labels,
                                std::span<const int> groups, int n_groups);

double accuracy(std::span<const int> predictions, std::span<const int> labels);

/// Max over group pairs of the per-group accuracy difference.
MetricValue group_accuracy_gap(std::span<const int> predictions, std::span<const int> labels,
                               std::span<const int> groups, int n_groups);

/// Positive-prediction rate per group; NaN marks a group with no samples.
std::vector<double> selection_rates(std::span<const int> predictions,
                                    std::span<const int> groups, int n_groups);

/// KL(p || q) with epsilon smoothing (1e-9 added to every cell of both
/// sides, then renormalized) so empty cells stay finite.
double kl_divergence(const StrataDistribution& p, const StrataDistribution& q);

struct FairnessReport {
    double accuracy = 0.0;
    MetricValue accuracy_gap;
    MetricValue dp_diff;
    MetricValue eodds_diff;
    std::vector<double> selection_rates;
};

/// All classifier metrics in one pass over joint group ids.
FairnessReport fairness_report(std::span<const int> predictions, std::span<const int> labels,
                               std::span<const int> joint_groups, int n_groups);

struct StarStats {
    double resample_frac = 0.0;
    StrataDistribution achieved;
    std::vector<double> deficit;  // mean per-cell unmet quota across batches
};

struct GenerationRecord {
    int gen = 0;
    FairnessReport actual;
    std::optional<FairnessReport> relative;  // absent at generation 0
    StrataDistribution classifier_strata;
    std::optional<StrataDistribution> generator_strata;
    std::optional<std::vector<double>> class_balance;                // probe label marginal
    std::optional<std::vector<std::vector<double>>> group_balance;   // probe marginal per attribute
    std::optional<std::vector<double>> probe_variance;               // per-dim probe feature variance
    double kl_classifier = 0.0;
    std::optional<double> kl_generator;
    std::optional<StarStats> star;
    bool collapsed = false;  // actual accuracy within 2 points of the majority rate
};

nlohmann::json record_to_json(const GenerationRecord& record);
GenerationRecord record_from_json(const nlohmann::json& j);
/// Structural schema check for one JSONL record; throws on a missing or
/// mistyped field, including relative-at-generation-0 violations.
void validate_record_json(const nlohmann::json& j);

struct EvalContext {
    const LabeledDataset* eval_set = nullptr;
    const Oracles* oracles = nullptr;
    FairnessIdeal ideal;
    int probe_size = 1000;
    int relative_size = 5000;
};

/**
 * Build the per-generation record: actual metrics against the evaluation
 * set's true labels/groups, relative metrics against predecessor labels on
 * fresh draws (from the given generator when present, else from the
 * reference g0), classifier strata from eval predictions with annotated
 * groups, and a probe of the generator's class/group balance.
 */
GenerationRecord evaluate_generation(const Classifier& current, const Generator* generator,
                                     const Classifier* predecessor, const EvalContext& ctx,
                                     int gen, Rng& rng);

}  // namespace mids
