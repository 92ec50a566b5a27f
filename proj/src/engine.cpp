#include "mids/engine.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace mids {

namespace fs = std::filesystem;

std::string to_string(SettingKind kind) {
    switch (kind) {
        case SettingKind::SeqClass: return "SeqClass";
        case SettingKind::SeqGenNonSeqClass: return "SeqGenNonSeqClass";
        case SettingKind::SeqGenSeqClass: return "SeqGenSeqClass";
    }
    return "?";
}

std::string to_string(StarMode mode) {
    switch (mode) {
        case StarMode::None: return "none";
        case StarMode::Cla: return "cla";
        case StarMode::Gen: return "gen";
        case StarMode::Both: return "both";
    }
    return "?";
}

SettingKind setting_kind_from_string(const std::string& s) {
    if (s == "SeqClass") return SettingKind::SeqClass;
    if (s == "SeqGenNonSeqClass") return SettingKind::SeqGenNonSeqClass;
    if (s == "SeqGenSeqClass") return SettingKind::SeqGenSeqClass;
    throw std::invalid_argument("setting.kind: unknown value '" + s + "'");
}

StarMode star_mode_from_string(const std::string& s) {
    if (s == "none") return StarMode::None;
    if (s == "cla") return StarMode::Cla;
    if (s == "gen") return StarMode::Gen;
    if (s == "both") return StarMode::Both;
    throw std::invalid_argument("setting.star: unknown value '" + s + "'");
}

void SettingSpec::validate() const {
    if (generations < 1) throw std::invalid_argument("setting.generations: must be >= 1");
    if (!(synthetic_fraction >= 0.0 && synthetic_fraction <= 1.0))
        throw std::invalid_argument("setting.synthetic_fraction: must be in [0, 1]");
    if (n_train < 1) throw std::invalid_argument("setting.n_train: must be >= 1");
    if ((star == StarMode::Gen || star == StarMode::Both) && kind == SettingKind::SeqClass)
        throw std::invalid_argument(
            "setting.star: mode '" + to_string(star) +
            "' requires a generator-bearing setting.kind (got SeqClass)");
    if (disparity_amplification && synthetic_fraction >= 1.0)
        throw std::invalid_argument(
            "setting.disparity_amplification: requires setting.synthetic_fraction < 1 "
            "(no non-synthetic channel exists)");
}

QuotaSampleResult disparity_sample(const LabeledDataset& pool, const LabeledDataset& probe,
                                   const Classifier& prev_classifier, long n, Rng& rng) {
    if (probe.empty()) throw std::invalid_argument("disparity_sample: empty probe set");
    auto preds = classify_labels(prev_classifier, probe.feature_data());
    auto strata = compute_strata(preds, probe.group_data(), probe.schema());
    return quota_sample(pool, strata, n, rng);
}

LabeledDataset mix_training_data(const LabeledDataset& synthetic,
                                 const LabeledDataset& nonsynthetic,
                                 double fraction, Rng& rng) {
    if (!(fraction >= 0.0 && fraction <= 1.0))
        throw std::invalid_argument("mix_training_data: fraction must be in [0, 1]");
    if (!synthetic.empty() && !nonsynthetic.empty() &&
        !(synthetic.schema() == nonsynthetic.schema()))
        throw std::invalid_argument("mix_training_data: schema mismatch");
    const long n = static_cast<long>(synthetic.size() + nonsynthetic.size());
    if (n == 0) throw std::invalid_argument("mix_training_data: both sources empty");
    const long expected_syn = std::lround(fraction * static_cast<double>(n));
    if (static_cast<long>(synthetic.size()) != expected_syn)
        throw std::invalid_argument(
            "mix_training_data: synthetic size " + std::to_string(synthetic.size()) +
            " does not match round(fraction*n) = " + std::to_string(expected_syn));

    const auto& schema = synthetic.empty() ? nonsynthetic.schema() : synthetic.schema();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    LabeledDataset out(schema);
    out.reserve(n);
    const std::size_t ns = synthetic.size();
    for (std::size_t idx : order) {
        const LabeledDataset& src = idx < ns ? synthetic : nonsynthetic;
        const std::size_t i = idx < ns ? idx : idx - ns;
        out.add(src.features(i), src.label(i), src.groups(i));
    }
    return out;
}

namespace {

struct Streams {
    Rng data;
    Rng train;
    Rng star;
    Rng eval;
};

Streams make_streams(const EngineConfig& config, std::uint64_t master) {
    return Streams{derive_stream(master, "data"), derive_stream(master, "train"),
                   derive_stream(master, "star"),
                   Rng(config.eval_seed ? mix_seed(*config.eval_seed)
                                        : derive_seed(master, "eval"))};
}

// One-time human-data split: a quota pool and a strata-probe holdout.
std::pair<LabeledDataset, LabeledDataset> split_pool_probe(const LabeledDataset& data,
                                                           double holdout_fraction, Rng& rng) {
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
        throw std::invalid_argument("holdout_fraction: must be in (0, 1)");
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    const std::size_t n_probe = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(holdout_fraction * data.size())));
    LabeledDataset probe(data.schema()), pool(data.schema());
    probe.reserve(n_probe);
    pool.reserve(data.size() - n_probe);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        auto& dst = i < n_probe ? probe : pool;
        dst.add(data.features(idx[i]), data.label(idx[i]), data.groups(idx[i]));
    }
    return {std::move(pool), std::move(probe)};
}

struct StarAccum {
    double resample_sum = 0.0;
    std::vector<double> strata_sum;
    std::vector<double> deficit_sum;
    long batches = 0;

    void add(const CuratedBatch& cb) {
        if (strata_sum.empty()) {
            strata_sum.assign(cb.achieved.probs.size(), 0.0);
            deficit_sum.assign(cb.deficit.size(), 0.0);
        }
        resample_sum += resample_fraction(cb);
        for (std::size_t c = 0; c < strata_sum.size(); ++c) strata_sum[c] += cb.achieved.probs[c];
        for (std::size_t c = 0; c < deficit_sum.size(); ++c)
            deficit_sum[c] += static_cast<double>(cb.deficit[c]);
        ++batches;
    }

    StarStats finalize() const {
        StarStats stats;
        stats.resample_frac = resample_sum / batches;
        stats.achieved.probs = strata_sum;
        for (double& p : stats.achieved.probs) p /= static_cast<double>(batches);
        stats.deficit = deficit_sum;
        for (double& d : stats.deficit) d /= static_cast<double>(batches);
        return stats;
    }
};

struct ChainContext {
    const EngineConfig& config;
    const Oracles& oracles;
    const LabeledDataset& data;
    const LabeledDataset& eval_set;
    FairnessIdeal ideal;
    LabeledDataset pool;   // non-synthetic quota pool
    LabeledDataset probe;  // strata-probe holdout
    Streams streams;
};

ChainContext make_context(const EngineConfig& config, const Oracles& oracles,
                          const LabeledDataset& data, const LabeledDataset& eval_set,
                          std::uint64_t master) {
    config.setting.validate();
    config.classifier.validate();
    config.generator.validate();
    if (data.empty()) throw std::invalid_argument("run_chain: empty dataset");
    if (eval_set.empty()) throw std::invalid_argument("run_chain: empty eval set");
    FairnessIdeal ideal = config.ideal;
    if (ideal.target.probs.empty()) ideal = FairnessIdeal::uniform(data.schema().n_cells());

    ChainContext ctx{config, oracles, data, eval_set, std::move(ideal),
                     LabeledDataset{}, LabeledDataset{}, make_streams(config, master)};
    auto [pool, probe] = split_pool_probe(data, config.holdout_fraction, ctx.streams.data);
    ctx.pool = std::move(pool);
    ctx.probe = std::move(probe);
    return ctx;
}

// Non-synthetic slice for this generation: uniform at generation 0 or when
// disparity amplification is off, quota-driven by the previous classifier
// otherwise.
LabeledDataset draw_nonsynthetic(ChainContext& ctx, const Classifier* prev, long n) {
    if (n <= 0) return LabeledDataset(ctx.data.schema());
    if (prev != nullptr && ctx.config.setting.disparity_amplification)
        return disparity_sample(ctx.pool, ctx.probe, *prev, n, ctx.streams.data).data;
    return uniform_sample(ctx.pool, n, ctx.streams.data);
}

// Synthetic slice: features from the generator, labels from the teacher,
// groups from the sensitive-attribute annotators.
LabeledDataset draw_synthetic(ChainContext& ctx, const Generator& source,
                              const Classifier& teacher, long n) {
    LabeledDataset out(ctx.data.schema());
    if (n <= 0) return out;
    auto X = sample_generator(source, n, ctx.streams.data);
    auto labels = classify_labels(teacher, X);
    auto groups = ctx.oracles.annotate_groups(X);
    const int d = ctx.data.schema().dim;
    const std::size_t m = ctx.data.schema().group_cards.size();
    out.reserve(n);
    for (long i = 0; i < n; ++i)
        out.add({X.data() + static_cast<std::size_t>(i) * d, static_cast<std::size_t>(d)},
                labels[i], {groups.data() + static_cast<std::size_t>(i) * m, m});
    return out;
}

PoolSampler make_pool(ChainContext& ctx, const Generator& source, const LabeledDataset& h) {
    const double f = ctx.config.setting.synthetic_fraction;
    if (f >= 1.0 || h.empty()) return generator_pool(source);
    if (f <= 0.0) return dataset_pool(h);
    return mixture_pool(generator_pool(source), dataset_pool(h), f);
}

int star_steps(const EngineConfig& config) {
    const int per_epoch =
        (config.setting.n_train + config.classifier.batch_size - 1) / config.classifier.batch_size;
    return std::max(1, config.classifier.epochs * per_epoch);
}

Classifier train_classifier_star(ChainContext& ctx, const PoolSampler& pool,
                                 const Classifier& teacher, StarAccum& accum) {
    const auto& cfg = ctx.config.classifier;
    const auto budget = ReparationBudget::from_fraction(ctx.config.budget_fraction, cfg.batch_size);
    BatchFn fn = [&](int, Rng& rng) {
        auto cb = curate_batch(pool, cfg.batch_size, budget, ctx.ideal, teacher,
                               ctx.oracles.a_s, ctx.data.schema(), rng);
        accum.add(cb);
        return std::make_pair(cb.batch.feature_data(), cb.batch.labels());
    };
    return train_classifier_stream(fn, star_steps(ctx.config), ctx.data.schema().dim,
                                   ctx.data.schema().n_labels, cfg, ctx.streams.star);
}

// Generator-side curation: concatenate curated batches until n_train
// features are collected (labels and groups steer selection only).
std::vector<double> curate_generator_features(ChainContext& ctx, const PoolSampler& pool,
                                              const Classifier& teacher, StarAccum& accum) {
    const int b = ctx.config.classifier.batch_size;
    const auto budget = ReparationBudget::from_fraction(ctx.config.budget_fraction, b);
    const long n = ctx.config.setting.n_train;
    const int d = ctx.data.schema().dim;
    std::vector<double> feats;
    feats.reserve(static_cast<std::size_t>(n) * d);
    while (static_cast<long>(feats.size()) < n * d) {
        auto cb = curate_batch(pool, b, budget, ctx.ideal, teacher, ctx.oracles.a_s,
                               ctx.data.schema(), ctx.streams.star);
        accum.add(cb);
        const auto& block = cb.batch.feature_data();
        feats.insert(feats.end(), block.begin(), block.end());
    }
    feats.resize(static_cast<std::size_t>(n) * d);
    return feats;
}

void checkpoint(const ChainContext& ctx, int gen, const Classifier& c, const Generator* g) {
    if (ctx.config.checkpoint_dir.empty()) return;
    const fs::path dir = fs::path(ctx.config.checkpoint_dir) / ("gen_" + std::to_string(gen));
    fs::create_directories(dir);
    std::ofstream((dir / "classifier.json").string()) << classifier_to_json(c) << '\n';
    if (g != nullptr)
        std::ofstream((dir / "generator.json").string()) << generator_to_json(*g) << '\n';
}

GenerationRecord make_record(ChainContext& ctx, int gen, const Classifier& current,
                             const Generator* generator, const Classifier* predecessor,
                             std::optional<StarStats> star) {
    EvalContext ectx;
    ectx.eval_set = &ctx.eval_set;
    ectx.oracles = &ctx.oracles;
    ectx.ideal = ctx.ideal;
    ectx.probe_size = ctx.config.probe_size;
    ectx.relative_size = ctx.config.relative_size;
    auto record = evaluate_generation(current, generator, predecessor, ectx, gen, ctx.streams.eval);
    record.star = std::move(star);
    return record;
}

}  // namespace

std::vector<GenerationRecord> run_seq_class(const EngineConfig& config, const Oracles& oracles,
                                            const LabeledDataset& data,
                                            const LabeledDataset& eval_set,
                                            std::uint64_t master_seed) {
    if (config.setting.kind != SettingKind::SeqClass)
        throw std::invalid_argument("run_seq_class: setting.kind must be SeqClass");
    auto ctx = make_context(config, oracles, data, eval_set, master_seed);
    const auto& setting = config.setting;
    const bool cla_star = setting.star == StarMode::Cla || setting.star == StarMode::Both;

    std::vector<GenerationRecord> records;
    records.reserve(setting.generations);
    GenerationState state;

    for (int i = 0; i < setting.generations; ++i) {
        const Classifier* prev = i == 0 ? nullptr : &state.classifier;
        const Classifier& teacher = i == 0 ? oracles.a_l : state.classifier;
        const long n_syn = std::lround(setting.synthetic_fraction * setting.n_train);
        const long n_non = setting.n_train - n_syn;

        LabeledDataset h = draw_nonsynthetic(ctx, prev, n_non);
        std::optional<StarStats> stats;
        Classifier next;
        if (cla_star) {
            StarAccum accum;
            auto pool = make_pool(ctx, oracles.g0, h);
            next = train_classifier_star(ctx, pool, teacher, accum);
            stats = accum.finalize();
        } else {
            LabeledDataset synthetic = draw_synthetic(ctx, oracles.g0, teacher, n_syn);
            LabeledDataset train_set =
                mix_training_data(synthetic, h, setting.synthetic_fraction, ctx.streams.data);
            next = train_classifier(train_set, config.classifier, ctx.streams.train);
        }

        auto record = make_record(ctx, i, next, nullptr, prev, std::move(stats));
        checkpoint(ctx, i, next, nullptr);
        records.push_back(std::move(record));
        state = GenerationState{i, std::move(next), std::nullopt};
    }
    return records;
}

std::vector<GenerationRecord> run_seq_gen(const EngineConfig& config, const Oracles& oracles,
                                          const LabeledDataset& data,
                                          const LabeledDataset& eval_set,
                                          std::uint64_t master_seed) {
    if (config.setting.kind == SettingKind::SeqClass)
        throw std::invalid_argument("run_seq_gen: setting.kind must be a SeqGen variant");
    auto ctx = make_context(config, oracles, data, eval_set, master_seed);
    const auto& setting = config.setting;
    const bool sequential = setting.kind == SettingKind::SeqGenSeqClass;
    const bool cla_star = setting.star == StarMode::Cla || setting.star == StarMode::Both;
    const bool gen_star = setting.star == StarMode::Gen || setting.star == StarMode::Both;

    std::vector<GenerationRecord> records;
    records.reserve(setting.generations);
    GenerationState state;
    state.generator = oracles.g0;  // predecessor of generation 0

    for (int i = 0; i < setting.generations; ++i) {
        const Classifier* prev = i == 0 ? nullptr : &state.classifier;
        const Classifier& teacher = (sequential && i > 0) ? state.classifier : oracles.a_l;
        const Generator& g_prev = *state.generator;
        const long n_syn = std::lround(setting.synthetic_fraction * setting.n_train);
        const long n_non = setting.n_train - n_syn;

        // Refit the generator on its predecessor's samples (the human-data
        // slice feeds the generator, not the classifier).
        LabeledDataset h = draw_nonsynthetic(ctx, prev, n_non);
        StarAccum accum;
        std::vector<double> gen_feats;
        if (gen_star) {
            auto pool = make_pool(ctx, g_prev, h);
            gen_feats = curate_generator_features(ctx, pool, teacher, accum);
        } else {
            if (n_syn > 0) gen_feats = sample_generator(g_prev, n_syn, ctx.streams.data);
            const auto& hf = h.feature_data();
            gen_feats.insert(gen_feats.end(), hf.begin(), hf.end());
        }
        Generator g_next =
            fit_generator(gen_feats, data.schema().dim, config.generator, ctx.streams.train);

        // Downstream classifier trains entirely from the new generator.
        Classifier next;
        if (cla_star) {
            auto pool = generator_pool(g_next);
            next = train_classifier_star(ctx, pool, teacher, accum);
        } else {
            LabeledDataset synthetic = draw_synthetic(ctx, g_next, teacher, setting.n_train);
            next = train_classifier(synthetic, config.classifier, ctx.streams.train);
        }

        std::optional<StarStats> stats;
        if (accum.batches > 0) stats = accum.finalize();
        auto record = make_record(ctx, i, next, &g_next, prev, std::move(stats));
        checkpoint(ctx, i, next, &g_next);
        records.push_back(std::move(record));
        state = GenerationState{i, std::move(next), std::move(g_next)};
    }
    return records;
}

std::vector<GenerationRecord> run_chain(const EngineConfig& config, const Oracles& oracles,
                                        const LabeledDataset& data,
                                        const LabeledDataset& eval_set,
                                        std::uint64_t master_seed) {
    return config.setting.kind == SettingKind::SeqClass
               ? run_seq_class(config, oracles, data, eval_set, master_seed)
               : run_seq_gen(config, oracles, data, eval_set, master_seed);
}

}  // namespace mids
