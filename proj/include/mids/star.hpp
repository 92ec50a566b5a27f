/**
 * Stratified batch curation: fill per-cell quotas toward a fairness ideal
 * from a pool of b + r annotated samples, backfilling any deficit from the
 * pool remainder. Used classifier-side (cla-STAR) and generator-side
 * (gen-STAR).
 */
#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mids/dataset.hpp"
#include "mids/models.hpp"
#include "mids/rng.hpp"

namespace mids {

struct FairnessIdeal {
    StrataDistribution target;

    static FairnessIdeal uniform(int n_cells) {
        return {StrataDistribution::uniform(n_cells)};
    }
};

struct ReparationBudget {
    long extra = 0;  // additional pool samples per batch

    static ReparationBudget from_fraction(double fraction, int batch_size);
};

struct CuratedBatch {
    LabeledDataset batch;          // exactly b samples
    StrataDistribution achieved;
    long resample_count = 0;       // b minus the quota-filled count
    std::vector<long> deficit;     // per-cell unmet quota
    long fresh_draws = 0;          // pool samples drawn beyond the initial b + r
};

/// Integer quotas by the largest-remainder method: quotas sum to exactly n
/// and each is within 1 of n * p_c; remainder ties break toward the lower
/// cell index.
std::vector<long> quota_from_distribution(const StrataDistribution& target, long n);

/// Feature source for curation: returns up to n row-major feature rows.
/// Returning fewer rows signals a finite pool running dry.
using PoolSampler = std::function<std::vector<double>(std::size_t n, Rng&)>;

PoolSampler generator_pool(const Generator& model);
PoolSampler dataset_pool(const LabeledDataset& data);
/// Per-draw Bernoulli mixture: probability `fraction` from a, else from b.
PoolSampler mixture_pool(PoolSampler a, PoolSampler b, double fraction);

/**
 * One curation pass: draw b + r pool samples, annotate them with the
 * labeler and the per-attribute group annotators, fill each cell to its
 * quota in pool order, then backfill the deficit uniformly from the unused
 * remainder. Throws if the pool cannot supply b samples.
 */
CuratedBatch curate_batch(const PoolSampler& pool, int b, const ReparationBudget& budget,
                          const FairnessIdeal& ideal, const Classifier& labeler,
                          std::span<const Classifier> group_annotators,
                          const DatasetSchema& schema, Rng& rng);

double resample_fraction(const CuratedBatch& batch);

}  // namespace mids
