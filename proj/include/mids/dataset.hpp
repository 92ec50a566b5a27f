/**
 * Labeled datasets with sensitive-group annotations, strata distributions
 * over (label x group) cells, synthetic blob construction, and quota
 * (stratified) sampling.
 */
#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mids/rng.hpp"

namespace mids {

struct DatasetSchema {
    int dim = 2;
    int n_labels = 2;
    std::vector<int> group_cards = {2};  // cardinality per sensitive attribute

    int n_attrs() const { return static_cast<int>(group_cards.size()); }
    int group_cells() const;          // product of group cardinalities
    int n_cells() const;              // n_labels * group_cells()

    bool operator==(const DatasetSchema&) const = default;
    void validate() const;            // throws invalid_argument naming the field
};

struct Sample {
    std::vector<double> features;
    int label = 0;
    std::vector<int> groups;
};

/// Column-major storage behind a row-sample interface. Samples are
/// append-only; every add is validated against the schema.
class LabeledDataset {
public:
    LabeledDataset() = default;
    explicit LabeledDataset(DatasetSchema schema);

    const DatasetSchema& schema() const { return schema_; }
    std::size_t size() const { return labels_.size(); }
    bool empty() const { return labels_.empty(); }
    void reserve(std::size_t n);

    void add(std::span<const double> features, int label, std::span<const int> groups);
    void add(const Sample& s) { add(s.features, s.label, s.groups); }

    std::span<const double> features(std::size_t i) const;
    int label(std::size_t i) const { return labels_[i]; }
    std::span<const int> groups(std::size_t i) const;
    Sample sample(std::size_t i) const;

    const std::vector<double>& feature_data() const { return features_; }  // n x dim row-major
    const std::vector<int>& labels() const { return labels_; }
    const std::vector<int>& group_data() const { return groups_; }         // n x n_attrs row-major

    /// Flattened (label, groups) cell index of sample i.
    int cell_of(std::size_t i) const;

private:
    DatasetSchema schema_;
    std::vector<double> features_;
    std::vector<int> labels_;
    std::vector<int> groups_;
};

/// Categorical distribution over the Cartesian product of label values and
/// sensitive-group cells, row-major over (label, group_1, ..., group_m).
struct StrataDistribution {
    std::vector<double> probs;

    int n_cells() const { return static_cast<int>(probs.size()); }
    void validate() const;  // entries >= 0, sum within 1e-12 of 1
    static StrataDistribution uniform(int n_cells);
};

/// Row-major flat index of a (label, groups) cell. Bijective over the schema.
int cell_index(int label, std::span<const int> groups, const DatasetSchema& schema);

/// Inverse of cell_index.
std::pair<int, std::vector<int>> cell_unindex(int cell, const DatasetSchema& schema);

/// Empirical strata of a (labels, groups) sequence; groups is row-major
/// n x n_attrs. Throws on empty input or out-of-range entries.
StrataDistribution compute_strata(std::span<const int> labels,
                                  std::span<const int> groups,
                                  const DatasetSchema& schema);

StrataDistribution compute_strata(const LabeledDataset& data);

/// Flatten each sample's group vector into a single joint group id in
/// [0, schema.group_cells()).
std::vector<int> joint_group_ids(const LabeledDataset& data);
std::vector<int> joint_group_ids(std::span<const int> groups, const DatasetSchema& schema);

/**
 * Config for the synthetic blob dataset: one isotropic Gaussian per
 * (label, group) cell, group conditionals skewed per label, then labels
 * flipped at a uniform noise rate.
 */
struct BlobsConfig {
    DatasetSchema schema;
    std::vector<double> class_prior;             // empty -> balanced
    // P(attribute value 0 | label) per label, applied to every attribute;
    // the remaining mass is split uniformly over the other values.
    std::vector<double> skew = {0.7, 0.3};
    std::vector<std::vector<double>> cell_means; // empty -> default geometry
    double cov_scale = 0.3;                      // per-cell isotropic stddev
    double label_noise = 0.05;
    long n = 20000;

    void validate() const;
    /// Pre-noise cell probabilities: prior(label) * per-attribute skew.
    std::vector<double> cell_probs() const;
    /// Default geometry: labels spread +/-2 on axis 0, attribute k encoded
    /// as a +/-1 shift on axis min(1+k, dim-1).
    std::vector<double> default_mean(int cell) const;
    std::vector<double> mean_of(int cell) const;
};

LabeledDataset make_colored_blobs(const BlobsConfig& config, Rng& rng);

/// Independently flip each label with the given probability to a uniformly
/// random *other* label. Features and groups are untouched.
LabeledDataset flip_labels(const LabeledDataset& data, double rate, Rng& rng);

struct QuotaSampleResult {
    LabeledDataset data;
    std::vector<long> quotas;     // integer quotas per cell (largest remainder)
    std::vector<long> deficit;    // quota minus quota-filled count, per cell
    long backfilled = 0;          // samples drawn outside their cell quota
    bool with_replacement = false;  // set when the source pool was exhausted
};

/**
 * Stratified sample of n items from source toward the target strata.
 * Cells are filled up to their integer quota by uniform draws without
 * replacement; deficits are backfilled uniformly from the leftover pool,
 * falling back to with-replacement draws (flagged) if the pool runs dry.
 */
QuotaSampleResult quota_sample(const LabeledDataset& source,
                               const StrataDistribution& target,
                               long n, Rng& rng);

/// Uniform sample of n items without replacement (with-replacement fallback
/// when n exceeds the source size).
LabeledDataset uniform_sample(const LabeledDataset& source, long n, Rng& rng);

// JSON Lines interchange: first line is a schema header
// {"d": int, "n_labels": int, "groups": [int...]}, then one object per
// sample: {"x": [f64...], "y": int, "s": [int...]}.
void write_jsonl(const LabeledDataset& data, std::ostream& out);
void write_jsonl(const LabeledDataset& data, const std::string& path);
LabeledDataset read_jsonl(std::istream& in);
LabeledDataset read_jsonl_file(const std::string& path);

}  // namespace mids
