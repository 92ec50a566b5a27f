/**
 * Desk-scale model backends: multinomial logistic regression trained by
 * minibatch SGD, diagonal-covariance Gaussian mixtures fitted by EM, and
 * the oracle bundle (reference generator plus label / group annotators).
 */
#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mids/dataset.hpp"
#include "mids/rng.hpp"

namespace mids {

struct TrainConfig {
    // classifier
    int epochs = 30;
    int batch_size = 64;
    double learning_rate = 0.1;
    double l2 = 1e-4;
    // generator
    int components = 4;
    int em_max_iters = 200;
    double em_tol = 1e-7;
    double variance_floor = 1e-6;

    void validate() const;
};

/// Linear softmax classifier. Weight matrix is n_labels x (dim + 1),
/// last column is the bias.
class Classifier {
public:
    struct Meta {
        int epochs = 0;
        double learning_rate = 0.0;
        double final_loss = 0.0;
        std::vector<double> epoch_losses;
    };

    Classifier() = default;
    Classifier(int n_labels, int dim);  // zero weights
    static Classifier from_weights(int n_labels, int dim, std::vector<double> weights);

    int n_labels() const { return n_labels_; }
    int dim() const { return dim_; }
    const std::vector<double>& weights() const { return weights_; }  // row-major
    std::span<const double> row(int label) const;
    double& at(int label, int col);  // col dim is the bias

    Meta& meta() { return meta_; }
    const Meta& meta() const { return meta_; }

private:
    int n_labels_ = 0;
    int dim_ = 0;
    std::vector<double> weights_;
    Meta meta_;
};

struct Prediction {
    std::vector<int> labels;
    std::vector<double> probs;  // n x n_labels row-major, each row sums to 1
};

/// Argmax of softmax scores with ties broken toward the lower label index.
Prediction classify(const Classifier& model, std::span<const double> features);
std::vector<int> classify_labels(const Classifier& model, std::span<const double> features);

/// Minibatch SGD on cross-entropy with L2 on the non-bias weights.
/// Deterministic given the rng; per-epoch full-set loss is recorded in the
/// metadata and a NaN loss aborts with diagnostics.
Classifier train_classifier(std::span<const double> features, std::span<const int> labels,
                            int dim, int n_labels, const TrainConfig& config, Rng& rng);
Classifier train_classifier(const LabeledDataset& data, const TrainConfig& config, Rng& rng);

/// SGD over externally curated batches: batch_fn(step, rng) returns the
/// (features, labels) minibatch for that step.
using BatchFn = std::function<std::pair<std::vector<double>, std::vector<int>>(int, Rng&)>;
Classifier train_classifier_stream(const BatchFn& batch_fn, int n_steps, int dim, int n_labels,
                                   const TrainConfig& config, Rng& rng);

/// Mixture of diagonal Gaussians.
class Generator {
public:
    struct Meta {
        int em_iters = 0;
        double log_likelihood = 0.0;       // total over the fit data
        std::vector<double> ll_curve;
    };

    Generator() = default;
    Generator(std::vector<double> weights, std::vector<double> means,
              std::vector<double> variances, int dim);

    int dim() const { return dim_; }
    int components() const { return static_cast<int>(weights_.size()); }
    std::span<const double> weights() const { return weights_; }
    std::span<const double> mean(int k) const;
    std::span<const double> variance(int k) const;
    const std::vector<double>& mean_data() const { return means_; }
    const std::vector<double>& variance_data() const { return variances_; }

    Meta& meta() { return meta_; }
    const Meta& meta() const { return meta_; }

private:
    int dim_ = 0;
    std::vector<double> weights_;
    std::vector<double> means_;      // K x dim
    std::vector<double> variances_;  // K x dim, diagonal
    Meta meta_;
};

/// EM fit with k-means++-style seeding from the data (single restart).
/// Log-likelihood is non-decreasing across iterations; covariance entries
/// are clamped at the variance floor.
Generator fit_generator(std::span<const double> features, int dim,
                        const TrainConfig& config, Rng& rng);

/// n draws, row-major n x dim: component by weight, then Gaussian per dim.
std::vector<double> sample_generator(const Generator& model, long n, Rng& rng);

struct OracleConfig {
    TrainConfig label;
    TrainConfig group;
    TrainConfig generator;
};

/// Reference bundle trained from the original dataset: g0 approximates the
/// input distribution, a_l annotates labels, a_s[k] annotates sensitive
/// attribute k.
struct Oracles {
    Generator g0;
    Classifier a_l;
    std::vector<Classifier> a_s;

    /// Row-major n x n_attrs group annotations for a feature block.
    std::vector<int> annotate_groups(std::span<const double> features) const;
};

Oracles build_oracles(const LabeledDataset& data, const OracleConfig& config, Rng& rng);

// JSON serialization; round-trips are bit-faithful for all finite values.
std::string classifier_to_json(const Classifier& model);
Classifier classifier_from_json(const std::string& text);
std::string generator_to_json(const Generator& model);
Generator generator_from_json(const std::string& text);

}  // namespace mids
