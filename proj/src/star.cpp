#include "mids/star.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mids {

ReparationBudget ReparationBudget::from_fraction(double fraction, int batch_size) {
    if (fraction < 0.0) throw std::invalid_argument("ReparationBudget: fraction must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("ReparationBudget: batch_size must be >= 1");
    return {static_cast<long>(std::floor(fraction * batch_size))};
}

std::vector<long> quota_from_distribution(const StrataDistribution& target, long n) {
    if (n < 1) throw std::invalid_argument("quota_from_distribution: n must be >= 1");
    target.validate();
    const int cells = target.n_cells();
    std::vector<long> quotas(cells);
    std::vector<double> remainders(cells);
    long assigned = 0;
    for (int c = 0; c < cells; ++c) {
        const double exact = target.probs[c] * static_cast<double>(n);
        quotas[c] = static_cast<long>(std::floor(exact));
        remainders[c] = exact - static_cast<double>(quotas[c]);
        assigned += quotas[c];
    }
    std::vector<int> order(cells);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return remainders[a] > remainders[b];  // ties keep the lower cell index
    });
    for (long i = 0; i < n - assigned; ++i) ++quotas[order[i % cells]];
    return quotas;
}

PoolSampler generator_pool(const Generator& model) {
    return [&model](std::size_t n, Rng& rng) {
        return sample_generator(model, static_cast<long>(n), rng);
    };
}

PoolSampler dataset_pool(const LabeledDataset& data) {
    if (data.empty()) throw std::invalid_argument("dataset_pool: empty dataset");
    return [&data](std::size_t n, Rng& rng) {
        const int d = data.schema().dim;
        std::vector<double> out(n * d);
        for (std::size_t i = 0; i < n; ++i) {
            auto row = data.features(rng.index(data.size()));
            std::copy(row.begin(), row.end(), out.begin() + i * d);
        }
        return out;
    };
}

PoolSampler mixture_pool(PoolSampler a, PoolSampler b, double fraction) {
    if (!(fraction >= 0.0 && fraction <= 1.0))
        throw std::invalid_argument("mixture_pool: fraction must be in [0, 1]");
    return [a = std::move(a), b = std::move(b), fraction](std::size_t n, Rng& rng) {
        std::size_t from_a = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (rng.bernoulli(fraction)) ++from_a;
        std::vector<double> xa = from_a > 0 ? a(from_a, rng) : std::vector<double>{};
        std::vector<double> xb = n - from_a > 0 ? b(n - from_a, rng) : std::vector<double>{};
        if (n == 0 || (xa.empty() && xb.empty())) return std::vector<double>{};
        const std::size_t d = (xa.size() + xb.size()) / n;
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        std::vector<double> out(n * d);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t src = order[i];
            const double* row = src < from_a ? xa.data() + src * d : xb.data() + (src - from_a) * d;
            std::copy_n(row, d, out.begin() + i * d);
        }
        return out;
    };
}

CuratedBatch curate_batch(const PoolSampler& pool, int b, const ReparationBudget& budget,
                          const FairnessIdeal& ideal, const Classifier& labeler,
                          std::span<const Classifier> group_annotators,
                          const DatasetSchema& schema, Rng& rng) {
    if (b < 1) throw std::invalid_argument("curate_batch: b must be >= 1");
    if (budget.extra < 0) throw std::invalid_argument("curate_batch: negative budget");
    ideal.target.validate();
    if (ideal.target.n_cells() != schema.n_cells())
        throw std::invalid_argument("curate_batch: ideal cell count does not match schema");
    if (group_annotators.size() != schema.group_cards.size())
        throw std::invalid_argument("curate_batch: one annotator per sensitive attribute required");

    const int d = schema.dim;
    const std::size_t want = static_cast<std::size_t>(b) + budget.extra;
    std::vector<double> X = pool(want, rng);
    long fresh_draws = 0;
    if (X.size() < static_cast<std::size_t>(b) * d) {
        // Short pool: one more request for the missing rows before giving up.
        const std::size_t missing = want - X.size() / d;
        std::vector<double> more = pool(missing, rng);
        fresh_draws += static_cast<long>(more.size() / d);
        X.insert(X.end(), more.begin(), more.end());
        if (X.size() < static_cast<std::size_t>(b) * d)
            throw std::runtime_error("curate_batch: pool yielded fewer than b samples (" +
                                     std::to_string(X.size() / d) + " < " + std::to_string(b) + ")");
    }
    const std::size_t pool_n = X.size() / d;

    // Annotate the pool.
    std::vector<int> labels = classify_labels(labeler, X);
    const std::size_t m = group_annotators.size();
    std::vector<int> groups(pool_n * m);
    for (std::size_t k = 0; k < m; ++k) {
        auto g = classify_labels(group_annotators[k], X);
        for (std::size_t i = 0; i < pool_n; ++i) groups[i * m + k] = g[i];
    }

    // Fill each cell to its quota in pool order.
    const auto quotas = quota_from_distribution(ideal.target, b);
    std::vector<long> filled(schema.n_cells(), 0);
    std::vector<std::size_t> selected;
    std::vector<std::size_t> remainder;
    selected.reserve(b);
    for (std::size_t i = 0; i < pool_n; ++i) {
        const int cell = cell_index(labels[i], {groups.data() + i * m, m}, schema);
        if (filled[cell] < quotas[cell]) {
            ++filled[cell];
            selected.push_back(i);
        } else {
            remainder.push_back(i);
        }
    }

    CuratedBatch out;
    out.deficit.resize(schema.n_cells());
    for (int c = 0; c < schema.n_cells(); ++c) out.deficit[c] = quotas[c] - filled[c];
    out.resample_count = b - static_cast<long>(selected.size());
    out.fresh_draws = fresh_draws;

    rng.shuffle(remainder);
    for (long i = 0; i < out.resample_count; ++i) {
        selected.push_back(remainder.back());
        remainder.pop_back();
    }

    out.batch = LabeledDataset(schema);
    out.batch.reserve(b);
    for (std::size_t i : selected)
        out.batch.add({X.data() + i * d, static_cast<std::size_t>(d)}, labels[i],
                      {groups.data() + i * m, m});
    out.achieved = compute_strata(out.batch);
    return out;
}

double resample_fraction(const CuratedBatch& batch) {
    if (batch.batch.empty()) throw std::invalid_argument("resample_fraction: empty batch");
    return static_cast<double>(batch.resample_count) / static_cast<double>(batch.batch.size());
}

}  // namespace mids
