#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "mids/star.hpp"

using namespace mids;

namespace {

const DatasetSchema kSchema{2, 2, {2}};

// Hard threshold classifiers: label = [x0 > 0], group = [x1 < 0].
Classifier axis0_labeler() {
    return Classifier::from_weights(2, 2, {-50.0, 0.0, 0.0, 50.0, 0.0, 0.0});
}
Classifier axis1_annotator() {
    return Classifier::from_weights(2, 2, {0.0, 50.0, 0.0, 0.0, -50.0, 0.0});
}

// Generator with one tight component per requested cell; cell (l, g) sits at
// (+/-2, +/-1) so the threshold classifiers annotate it exactly.
Generator cell_generator(const std::vector<int>& cells) {
    std::vector<double> weights(cells.size(), 1.0 / cells.size());
    std::vector<double> means, vars;
    for (int c : cells) {
        auto [label, groups] = cell_unindex(c, kSchema);
        means.push_back(label == 0 ? -2.0 : 2.0);
        means.push_back(groups[0] == 0 ? 1.0 : -1.0);
        vars.insert(vars.end(), {0.01, 0.01});
    }
    return Generator(weights, means, vars, 2);
}

CuratedBatch curate(const Generator& g, int b, long r, std::uint64_t seed,
                    const FairnessIdeal& ideal = FairnessIdeal::uniform(4)) {
    const auto labeler = axis0_labeler();
    const std::vector<Classifier> annotators{axis1_annotator()};
    Rng rng(seed);
    return curate_batch(generator_pool(g), b, ReparationBudget{r}, ideal, labeler, annotators,
                        kSchema, rng);
}

}  // namespace

TEST_CASE("quota_from_distribution uses largest remainders") {
    CHECK(quota_from_distribution(StrataDistribution::uniform(4), 8) ==
          std::vector<long>{2, 2, 2, 2});
    CHECK(quota_from_distribution(StrataDistribution{{0.5, 0.5}}, 7) ==
          std::vector<long>{4, 3});  // remainder tie breaks toward cell 0
    CHECK(quota_from_distribution(StrataDistribution{{0.35, 0.15, 0.15, 0.35}}, 1000) ==
          std::vector<long>{350, 150, 150, 350});
}

TEST_CASE("quotas sum to n and stay within 1 of the exact shares") {
    Rng rng(30);
    for (int trial = 0; trial < 200; ++trial) {
        const int cells = 2 + static_cast<int>(rng.index(9));
        std::vector<double> p(cells);
        double sum = 0.0;
        for (double& v : p) sum += (v = rng.uniform() + 1e-3);
        for (double& v : p) v /= sum;
        p[cells - 1] = 1.0 - std::accumulate(p.begin(), p.end() - 1, 0.0);
        const long n = 1 + static_cast<long>(rng.index(500));
        auto quotas = quota_from_distribution(StrataDistribution{p}, n);
        CHECK(std::accumulate(quotas.begin(), quotas.end(), 0L) == n);
        for (int c = 0; c < cells; ++c)
            CHECK(std::abs(static_cast<double>(quotas[c]) - n * p[c]) < 1.0);
    }
}

TEST_CASE("reparation budget rounds down from the batch fraction") {
    CHECK(ReparationBudget::from_fraction(0.25, 256).extra == 64);
    CHECK(ReparationBudget::from_fraction(0.33, 100).extra == 33);
    CHECK(ReparationBudget::from_fraction(0.0, 128).extra == 0);
    CHECK(ReparationBudget::from_fraction(0.1, 7).extra == 0);
}

TEST_CASE("curate_batch") {
    SUBCASE("abundant uniform pool achieves the ideal exactly") {
        auto batch = curate(cell_generator({0, 1, 2, 3}), 256, 64, 31);
        CHECK(batch.batch.size() == 256);
        CHECK(batch.resample_count == 0);
        CHECK(resample_fraction(batch) == 0.0);
        for (double p : batch.achieved.probs) CHECK(p == doctest::Approx(0.25));
        CHECK(batch.deficit == std::vector<long>{0, 0, 0, 0});
    }
    SUBCASE("missing cell yields the arithmetic resample fraction") {
        auto batch = curate(cell_generator({0, 1, 2}), 100, 25, 32);
        CHECK(batch.batch.size() == 100);
        CHECK(batch.resample_count == 25);
        CHECK(batch.deficit == std::vector<long>{0, 0, 0, 25});
        CHECK(resample_fraction(batch) == doctest::Approx(0.25));
    }
    SUBCASE("fully degenerate pool fills only one quota") {
        auto batch = curate(cell_generator({2}), 100, 25, 33);
        CHECK(batch.batch.size() == 100);
        CHECK(batch.resample_count == 75);
        CHECK(resample_fraction(batch) == doctest::Approx(0.75));
        CHECK(batch.achieved.probs[2] == doctest::Approx(1.0));
    }
    SUBCASE("batch size is exactly b regardless of pool composition") {
        Rng rng(34);
        for (int trial = 0; trial < 30; ++trial) {
            std::vector<int> cells;
            for (int c = 0; c < 4; ++c)
                if (rng.bernoulli(0.6)) cells.push_back(c);
            if (cells.empty()) cells.push_back(static_cast<int>(rng.index(4)));
            const int b = 16 + static_cast<int>(rng.index(200));
            const long r = static_cast<long>(rng.index(64));
            auto batch = curate(cell_generator(cells), b, r, 100 + trial);
            CHECK(batch.batch.size() == static_cast<std::size_t>(b));
            CHECK(batch.resample_count >= 0);
            CHECK(batch.resample_count <= b);
        }
    }
    SUBCASE("no sample is selected twice") {
        auto batch = curate(cell_generator({0, 2}), 128, 32, 35);
        std::set<std::pair<double, double>> seen;
        for (std::size_t i = 0; i < batch.batch.size(); ++i) {
            auto f = batch.batch.features(i);
            CHECK(seen.insert({f[0], f[1]}).second);
        }
    }
    SUBCASE("larger budgets never increase the resample count") {
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            auto g = cell_generator({0, 1, 3});
            long prev = std::numeric_limits<long>::max();
            for (long r : {0L, 16L, 32L, 64L}) {
                auto batch = curate(g, 64, r, 200 + seed);
                CHECK(batch.resample_count <= prev);
                prev = batch.resample_count;
            }
        }
    }
    SUBCASE("short pool aborts with diagnostics") {
        PoolSampler empty_pool = [](std::size_t, Rng&) { return std::vector<double>{}; };
        const auto labeler = axis0_labeler();
        const std::vector<Classifier> annotators{axis1_annotator()};
        Rng rng(36);
        CHECK_THROWS_AS(curate_batch(empty_pool, 32, ReparationBudget{8},
                                     FairnessIdeal::uniform(4), labeler, annotators, kSchema, rng),
                        std::runtime_error);
    }
    SUBCASE("resample count equals b minus the fillable quota mass") {
        // pool cells counted against min(quota, available)
        auto batch = curate(cell_generator({1}), 60, 0, 37);
        // quota (15,15,15,15); only cell 1 available
        CHECK(batch.resample_count == 45);
        CHECK(batch.deficit == std::vector<long>{15, 0, 15, 15});
    }
}

TEST_CASE("mixture pool draws from both sources") {
    auto g = cell_generator({0});
    LabeledDataset data(kSchema);
    // dataset pool sits at cell 3's location
    for (int i = 0; i < 50; ++i)
        data.add(std::vector<double>{2.0, -1.0}, 1, std::vector<int>{1});
    auto pool = mixture_pool(generator_pool(g), dataset_pool(data), 0.5);
    Rng rng(38);
    auto X = pool(400, rng);
    REQUIRE(X.size() == 800);
    long from_g = 0;
    for (std::size_t i = 0; i < 400; ++i)
        if (X[i * 2] < 0.0) ++from_g;
    CHECK(from_g > 150);
    CHECK(from_g < 250);
}
