#include "mids/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <thread>

namespace mids {

namespace fs = std::filesystem;
using nlohmann::json;

void ExperimentConfig::validate() const {
    if (name.empty()) throw ConfigError("name: must be non-empty");
    if (arms.empty()) throw ConfigError("arms: at least one arm is required");
    if (seeds.empty()) throw ConfigError("seeds: must be non-empty");
    for (std::size_t i = 0; i < seeds.size(); ++i)
        for (std::size_t j = i + 1; j < seeds.size(); ++j)
            if (seeds[i] == seeds[j])
                throw ConfigError("seeds: duplicate seed " + std::to_string(seeds[i]));
    for (std::size_t i = 0; i < arms.size(); ++i) {
        if (arms[i].name.empty()) throw ConfigError("arms: arm names must be non-empty");
        for (std::size_t j = i + 1; j < arms.size(); ++j)
            if (arms[i].name == arms[j].name)
                throw ConfigError("arms: duplicate arm name '" + arms[i].name + "'");
    }
    if (eval_size < 1) throw ConfigError("eval_size: must be >= 1");
}

json base_config_json() {
    return json{
        {"name", "experiment"},
        {"seeds", {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}},
        {"output_dir", "runs"},
        {"checkpoints", false},
        {"eval_size", 5000},
        {"dataset",
         {{"dim", 2},
          {"n_labels", 2},
          {"group_cards", {2}},
          {"class_prior", json::array()},
          {"skew", {0.7, 0.3}},
          {"cov_scale", 0.3},
          {"label_noise", 0.05},
          {"n", 20000}}},
        {"oracles",
         {{"label", {{"epochs", 12}, {"batch_size", 128}, {"learning_rate", 0.2}, {"l2", 1e-4}}},
          {"group", {{"epochs", 12}, {"batch_size", 128}, {"learning_rate", 0.2}, {"l2", 1e-4}}},
          {"generator",
           {{"components", 4}, {"em_max_iters", 200}, {"em_tol", 1e-7}, {"variance_floor", 1e-6}}}}},
        {"setting",
         {{"kind", "SeqClass"},
          {"generations", 40},
          {"synthetic_fraction", 1.0},
          {"disparity_amplification", false},
          {"star", "none"},
          {"n_train", 2000}}},
        {"classifier",
         {{"epochs", 10}, {"batch_size", 128}, {"learning_rate", 0.2}, {"l2", 1e-4}}},
        {"generator",
         {{"components", 4}, {"em_max_iters", 60}, {"em_tol", 1e-7}, {"variance_floor", 1e-6}}},
        {"star", {{"budget_fraction", 0.25}, {"ideal", "uniform"}}},
        {"metrics",
         {{"probe_size", 1000}, {"relative_size", 5000}, {"holdout_fraction", 0.2}}}};
}

const std::map<std::string, json>& preset_registry() {
    static const std::map<std::string, json> registry = {
        // Performative-prediction chain on the default skewed blobs; the
        // coarse single-component reference generator and the short noisy
        // SGD recipe let labeling drift compound across generations.
        {"seqclass-skew70",
         json{{"name", "seqclass-skew70"},
              {"oracles", {{"generator", {{"components", 1}}}}},
              {"setting",
               {{"kind", "SeqClass"}, {"generations", 40}, {"synthetic_fraction", 1.0},
                {"star", "none"}, {"n_train", 256}}},
              {"classifier",
               {{"epochs", 2}, {"batch_size", 32}, {"learning_rate", 1.0}, {"l2", 0.0}}}}},
        {"seqclass-skew70-star",
         json{{"name", "seqclass-skew70-star"},
              {"preset_base", "seqclass-skew70"},
              {"arms",
               {{{"name", "none"}, {"overrides", json::object()}},
                {{"name", "cla-star"},
                 {"overrides", {{"setting", {{"star", "cla"}}}}}}}}}},
        {"seqclass-50-50",
         json{{"name", "seqclass-50-50"},
              {"preset_base", "seqclass-skew70"},
              {"setting", {{"synthetic_fraction", 0.5}, {"n_train", 512}}},
              {"arms",
               {{{"name", "mixed"}, {"overrides", json::object()}},
                {{"name", "mixed-da"},
                 {"overrides", {{"setting", {{"disparity_amplification", true}}}}}},
                {{"name", "mixed-da-clastar"},
                 {"overrides",
                  {{"setting", {{"disparity_amplification", true}, {"star", "cla"}}}}}}}}}},
        // Model-collapse chains: small refit samples and capped EM budgets
        // drive the generator lineage; classifiers train solidly.
        {"seqgen-star",
         json{{"name", "seqgen-star"},
              {"setting",
               {{"kind", "SeqGenSeqClass"}, {"generations", 40}, {"synthetic_fraction", 1.0},
                {"star", "none"}, {"n_train", 400}}},
              {"classifier",
               {{"epochs", 6}, {"batch_size", 64}, {"learning_rate", 0.3}, {"l2", 1e-4}}},
              {"generator", {{"components", 4}, {"em_max_iters", 25}}},
              {"arms",
               {{{"name", "none"}, {"overrides", json::object()}},
                {{"name", "cla-star"}, {"overrides", {{"setting", {{"star", "cla"}}}}}},
                {{"name", "gen-star"}, {"overrides", {{"setting", {{"star", "gen"}}}}}}}}}},
        {"seqgen-seq-vs-nonseq",
         json{{"name", "seqgen-seq-vs-nonseq"},
              {"preset_base", "seqgen-star"},
              {"dataset", {{"class_prior", {0.6, 0.4}}}},
              {"arms",
               {{{"name", "seq"}, {"overrides", json::object()}},
                {{"name", "nonseq"},
                 {"overrides", {{"setting", {{"kind", "SeqGenNonSeqClass"}}}}}}}}}},
        {"synthetic-fraction-ablation",
         json{{"name", "synthetic-fraction-ablation"},
              {"preset_base", "seqgen-star"},
              {"sweep",
               {{"path", "setting.synthetic_fraction"}, {"values", {0.0, 0.25, 0.5, 1.0}}}}}},
        {"balance-ablation",
         json{{"name", "balance-ablation"},
              {"preset_base", "seqgen-star"},
              {"arms",
               {{{"name", "balanced"}, {"overrides", {{"dataset", {{"skew", {0.5, 0.5}}}}}}},
                {{"name", "class-imbalance"},
                 {"overrides", {{"dataset", {{"class_prior", {0.65, 0.35}}}}}}},
                {{"name", "group-imbalance"},
                 {"overrides", {{"dataset", {{"skew", {0.8, 0.4}}}}}}}}}}},
        {"budget-sweep",
         json{{"name", "budget-sweep"},
              {"preset_base", "seqclass-skew70"},
              {"setting", {{"star", "cla"}}},
              {"sweep",
               {{"path", "star.budget_fraction"}, {"values", {0.0, 0.125, 0.25, 0.5}}}}}},
        // Harder-task analogue: imbalanced classes and the larger curation
        // budget that its batches need.
        {"svhn-analogue",
         json{{"name", "svhn-analogue"},
              {"preset_base", "seqgen-star"},
              {"dataset", {{"class_prior", {0.607, 0.393}}}},
              {"star", {{"budget_fraction", 0.33}}},
              {"arms",
               {{{"name", "none"}, {"overrides", json::object()}},
                {{"name", "cla-star"}, {"overrides", {{"setting", {{"star", "cla"}}}}}},
                {{"name", "gen-star"}, {"overrides", {{"setting", {{"star", "gen"}}}}}}}}}},
    };
    return registry;
}

namespace {

json deep_merge(json base, const json& patch) {
    if (!base.is_object() || !patch.is_object()) return patch;
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        if (base.contains(it.key()))
            base[it.key()] = deep_merge(base[it.key()], it.value());
        else
            base[it.key()] = it.value();
    }
    return base;
}

void set_path(json& root, const std::string& path, const json& value) {
    json* node = &root;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = path.find('.', start);
        const std::string key = path.substr(start, dot - start);
        if (key.empty()) throw ConfigError("sweep.path: empty key segment in '" + path + "'");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

std::string leaf_key(const std::string& path) {
    const std::size_t dot = path.rfind('.');
    return dot == std::string::npos ? path : path.substr(dot + 1);
}

std::string format_value(const json& v) {
    if (v.is_number()) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%g", v.get<double>());
        return buf;
    }
    return v.is_string() ? v.get<std::string>() : v.dump();
}

// Resolve a preset patch, following one level of preset_base chaining.
json resolve_preset(const std::string& name) {
    const auto& registry = preset_registry();
    auto it = registry.find(name);
    if (it == registry.end()) {
        std::string available;
        for (const auto& [key, _] : registry) available += (available.empty() ? "" : ", ") + key;
        throw ConfigError("preset: unknown preset '" + name + "'; available: " + available);
    }
    json patch = it->second;
    if (patch.contains("preset_base")) {
        json base = resolve_preset(patch["preset_base"].get<std::string>());
        base.erase("arms");
        base.erase("sweep");
        base.erase("name");
        patch.erase("preset_base");
        patch = deep_merge(base, patch);
    }
    return patch;
}

template <class Fn>
auto in_block(const std::string& path, Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

TrainConfig parse_train(const json& j, const std::string& path) {
    return in_block(path, [&] {
        TrainConfig cfg;
        cfg.epochs = j.value("epochs", cfg.epochs);
        cfg.batch_size = j.value("batch_size", cfg.batch_size);
        cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
        cfg.l2 = j.value("l2", cfg.l2);
        cfg.components = j.value("components", cfg.components);
        cfg.em_max_iters = j.value("em_max_iters", cfg.em_max_iters);
        cfg.em_tol = j.value("em_tol", cfg.em_tol);
        cfg.variance_floor = j.value("variance_floor", cfg.variance_floor);
        cfg.validate();
        return cfg;
    });
}

BlobsConfig parse_dataset(const json& j) {
    return in_block("dataset", [&] {
        BlobsConfig cfg;
        cfg.schema.dim = j.value("dim", cfg.schema.dim);
        cfg.schema.n_labels = j.value("n_labels", cfg.schema.n_labels);
        cfg.schema.group_cards = j.value("group_cards", cfg.schema.group_cards);
        cfg.class_prior = j.value("class_prior", cfg.class_prior);
        cfg.skew = j.value("skew", cfg.skew);
        if (j.contains("cell_means"))
            cfg.cell_means = j["cell_means"].get<std::vector<std::vector<double>>>();
        cfg.cov_scale = j.value("cov_scale", cfg.cov_scale);
        cfg.label_noise = j.value("label_noise", cfg.label_noise);
        cfg.n = j.value("n", cfg.n);
        cfg.validate();
        return cfg;
    });
}

ArmConfig parse_arm(const std::string& name, const json& j) {
    ArmConfig arm;
    arm.name = name;
    arm.dataset = parse_dataset(j.at("dataset"));
    arm.oracles.label = parse_train(j["oracles"].at("label"), "oracles.label");
    arm.oracles.group = parse_train(j["oracles"].at("group"), "oracles.group");
    arm.oracles.generator = parse_train(j["oracles"].at("generator"), "oracles.generator");

    auto& engine = arm.engine;
    in_block("setting", [&] {
        const json& s = j.at("setting");
        engine.setting.kind = setting_kind_from_string(s.at("kind").get<std::string>());
        engine.setting.generations = s.value("generations", engine.setting.generations);
        engine.setting.synthetic_fraction =
            s.value("synthetic_fraction", engine.setting.synthetic_fraction);
        engine.setting.disparity_amplification =
            s.value("disparity_amplification", engine.setting.disparity_amplification);
        engine.setting.star = star_mode_from_string(s.value("star", "none"));
        engine.setting.n_train = s.value("n_train", engine.setting.n_train);
        engine.setting.validate();
        return 0;
    });
    engine.classifier = parse_train(j.at("classifier"), "classifier");
    engine.generator = parse_train(j.at("generator"), "generator");
    in_block("star", [&] {
        const json& s = j.at("star");
        engine.budget_fraction = s.value("budget_fraction", engine.budget_fraction);
        if (engine.budget_fraction < 0.0)
            throw ConfigError("star.budget_fraction: must be >= 0");
        const json& ideal = s.at("ideal");
        if (ideal.is_string()) {
            if (ideal.get<std::string>() != "uniform")
                throw ConfigError("star.ideal: expected \"uniform\" or an array of cell probabilities");
            engine.ideal = FairnessIdeal::uniform(arm.dataset.schema.n_cells());
        } else {
            engine.ideal.target.probs = ideal.get<std::vector<double>>();
            if (engine.ideal.target.n_cells() != arm.dataset.schema.n_cells())
                throw ConfigError("star.ideal: needs exactly " +
                                  std::to_string(arm.dataset.schema.n_cells()) +
                                  " cell probabilities");
            engine.ideal.target.validate();
        }
        return 0;
    });
    in_block("metrics", [&] {
        const json& m = j.at("metrics");
        engine.probe_size = m.value("probe_size", engine.probe_size);
        engine.relative_size = m.value("relative_size", engine.relative_size);
        engine.holdout_fraction = m.value("holdout_fraction", engine.holdout_fraction);
        if (engine.probe_size < 1) throw ConfigError("metrics.probe_size: must be >= 1");
        if (engine.relative_size < 1) throw ConfigError("metrics.relative_size: must be >= 1");
        return 0;
    });
    return arm;
}

}  // namespace

ExperimentConfig config_from_json(const json& user) {
    if (!user.is_object()) throw ConfigError("config: top level must be a JSON object");
    json merged = base_config_json();
    json user_copy = user;
    if (user_copy.contains("preset")) {
        merged = deep_merge(merged, resolve_preset(user_copy["preset"].get<std::string>()));
        user_copy.erase("preset");
    }
    merged = deep_merge(merged, user_copy);
    merged.erase("preset_base");

    ExperimentConfig config;
    config.resolved = merged;
    config.name = merged.value("name", "experiment");
    in_block("seeds", [&] {
        config.seeds = merged.at("seeds").get<std::vector<std::uint64_t>>();
        return 0;
    });
    config.output_dir = merged.value("output_dir", config.output_dir);
    config.checkpoints = merged.value("checkpoints", false);
    config.eval_size = merged.value("eval_size", config.eval_size);

    json arms_spec = merged.value("arms", json::array());
    json sweep = merged.contains("sweep") ? merged["sweep"] : json();
    json root = merged;
    root.erase("arms");
    root.erase("sweep");

    std::vector<std::pair<std::string, json>> arm_jsons;
    if (!sweep.is_null() && !arms_spec.empty())
        throw ConfigError("arms/sweep: provide at most one of them");
    if (!sweep.is_null()) {
        in_block("sweep", [&] {
            const std::string path = sweep.at("path").get<std::string>();
            for (const auto& value : sweep.at("values")) {
                json arm = root;
                set_path(arm, path, value);
                arm_jsons.emplace_back(leaf_key(path) + "_" + format_value(value), arm);
            }
            return 0;
        });
    } else if (!arms_spec.empty()) {
        for (const auto& entry : arms_spec) {
            const std::string name = in_block("arms", [&] { return entry.at("name").get<std::string>(); });
            json overrides = entry.value("overrides", json::object());
            arm_jsons.emplace_back(name, deep_merge(root, overrides));
        }
    } else {
        arm_jsons.emplace_back("default", root);
    }

    for (const auto& [name, arm_json] : arm_jsons)
        config.arms.push_back(parse_arm(name, arm_json));
    config.validate();
    return config;
}

ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open file '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError("config: malformed JSON in '" + path + "': " + e.what());
    }
    return config_from_json(j);
}

std::string config_hash(const json& resolved) {
    const std::string dump = resolved.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

int AggregateTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
        if (columns[i] == name) return static_cast<int>(i);
    return -1;
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using Extractor = std::function<double(const GenerationRecord&)>;  // NaN = missing

double metric_or_nan(const MetricValue& m) { return m.defined ? m.value : kNaN; }

std::vector<std::pair<std::string, Extractor>> build_extractors(const GenerationRecord& sample) {
    std::vector<std::pair<std::string, Extractor>> cols;
    cols.emplace_back("accuracy", [](const auto& r) { return r.actual.accuracy; });
    cols.emplace_back("accuracy_gap",
                      [](const auto& r) { return metric_or_nan(r.actual.accuracy_gap); });
    cols.emplace_back("dp_diff", [](const auto& r) { return metric_or_nan(r.actual.dp_diff); });
    cols.emplace_back("eodds_diff",
                      [](const auto& r) { return metric_or_nan(r.actual.eodds_diff); });
    cols.emplace_back("rel_accuracy",
                      [](const auto& r) { return r.relative ? r.relative->accuracy : kNaN; });
    cols.emplace_back("rel_dp_diff", [](const auto& r) {
        return r.relative ? metric_or_nan(r.relative->dp_diff) : kNaN;
    });
    cols.emplace_back("rel_eodds_diff", [](const auto& r) {
        return r.relative ? metric_or_nan(r.relative->eodds_diff) : kNaN;
    });
    cols.emplace_back("kl_classifier", [](const auto& r) { return r.kl_classifier; });
    cols.emplace_back("kl_generator",
                      [](const auto& r) { return r.kl_generator ? *r.kl_generator : kNaN; });
    for (std::size_t c = 0; c < sample.classifier_strata.probs.size(); ++c)
        cols.emplace_back("strata_" + std::to_string(c), [c](const auto& r) {
            return c < r.classifier_strata.probs.size() ? r.classifier_strata.probs[c] : kNaN;
        });
    if (sample.generator_strata)
        for (std::size_t c = 0; c < sample.generator_strata->probs.size(); ++c)
            cols.emplace_back("gen_strata_" + std::to_string(c), [c](const auto& r) {
                return r.generator_strata && c < r.generator_strata->probs.size()
                           ? r.generator_strata->probs[c]
                           : kNaN;
            });
    if (sample.class_balance)
        for (std::size_t l = 0; l < sample.class_balance->size(); ++l)
            cols.emplace_back("class_balance_" + std::to_string(l), [l](const auto& r) {
                return r.class_balance && l < r.class_balance->size() ? (*r.class_balance)[l]
                                                                      : kNaN;
            });
    if (sample.group_balance)
        for (std::size_t k = 0; k < sample.group_balance->size(); ++k)
            for (std::size_t v = 0; v < (*sample.group_balance)[k].size(); ++v)
                cols.emplace_back(
                    "group_balance_" + std::to_string(k) + "_" + std::to_string(v),
                    [k, v](const auto& r) {
                        return r.group_balance && k < r.group_balance->size() &&
                                       v < (*r.group_balance)[k].size()
                                   ? (*r.group_balance)[k][v]
                                   : kNaN;
                    });
    if (sample.probe_variance)
        cols.emplace_back("probe_variance", [](const auto& r) {
            if (!r.probe_variance || r.probe_variance->empty()) return kNaN;
            double sum = 0.0;
            for (double v : *r.probe_variance) sum += v;
            return sum / static_cast<double>(r.probe_variance->size());
        });
    for (std::size_t g = 0; g < sample.actual.selection_rates.size(); ++g)
        cols.emplace_back("selection_rate_" + std::to_string(g), [g](const auto& r) {
            return g < r.actual.selection_rates.size() ? r.actual.selection_rates[g] : kNaN;
        });
    if (sample.star) {
        cols.emplace_back("star_resample_frac",
                          [](const auto& r) { return r.star ? r.star->resample_frac : kNaN; });
        for (std::size_t c = 0; c < sample.star->achieved.probs.size(); ++c)
            cols.emplace_back("star_strata_" + std::to_string(c), [c](const auto& r) {
                return r.star && c < r.star->achieved.probs.size() ? r.star->achieved.probs[c]
                                                                   : kNaN;
            });
        for (std::size_t c = 0; c < sample.star->deficit.size(); ++c)
            cols.emplace_back("star_deficit_" + std::to_string(c), [c](const auto& r) {
                return r.star && c < r.star->deficit.size() ? r.star->deficit[c] : kNaN;
            });
    }
    return cols;
}

}  // namespace

AggregateTable aggregate_records(const std::vector<std::vector<GenerationRecord>>& per_seed) {
    AggregateTable table;
    if (per_seed.empty() || per_seed.front().empty())
        throw std::invalid_argument("aggregate_records: no records");
    const std::size_t gens = per_seed.front().size();
    for (const auto& records : per_seed)
        if (records.size() != gens)
            throw std::invalid_argument("aggregate_records: ragged record streams");

    auto cols = build_extractors(per_seed.front().front());
    table.columns = {"gen", "seeds"};
    for (const auto& [name, _] : cols) {
        table.columns.push_back(name + "_mean");
        table.columns.push_back(name + "_ci95");
        table.columns.push_back(name + "_n");
    }
    table.columns.push_back("collapse_rate");

    for (std::size_t g = 0; g < gens; ++g) {
        std::vector<double> row;
        row.push_back(static_cast<double>(g));
        row.push_back(static_cast<double>(per_seed.size()));
        for (const auto& [_, extract] : cols) {
            double sum = 0.0, sum2 = 0.0;
            int n = 0;
            for (const auto& records : per_seed) {
                const double v = extract(records[g]);
                if (std::isnan(v)) continue;
                sum += v;
                sum2 += v * v;
                ++n;
            }
            if (n == 0) {
                row.insert(row.end(), {kNaN, kNaN, 0.0});
                continue;
            }
            const double mean = sum / n;
            double ci = 0.0;
            if (n > 1) {
                const double var = std::max(0.0, (sum2 - n * mean * mean) / (n - 1));
                ci = 1.96 * std::sqrt(var / n);
            }
            row.insert(row.end(), {mean, ci, static_cast<double>(n)});
        }
        double collapsed = 0.0;
        for (const auto& records : per_seed) collapsed += records[g].collapsed ? 1.0 : 0.0;
        row.push_back(collapsed / static_cast<double>(per_seed.size()));
        table.rows.push_back(std::move(row));
    }
    return table;
}

void write_csv(const AggregateTable& table, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_csv: cannot open " + path.string());
    for (std::size_t i = 0; i < table.columns.size(); ++i)
        out << (i ? "," : "") << table.columns[i];
    out << '\n';
    char buf[40];
    for (const auto& row : table.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            if (!std::isnan(row[i])) {
                std::snprintf(buf, sizeof(buf), "%.10g", row[i]);
                out << buf;
            }
        }
        out << '\n';
    }
}

AggregateTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_csv: cannot open " + path.string());
    AggregateTable table;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("read_csv: empty file " + path.string());
    std::stringstream header(line);
    std::string field;
    while (std::getline(header, field, ',')) table.columns.push_back(field);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        while (std::getline(ss, field, ','))
            row.push_back(field.empty() ? kNaN : std::strtod(field.c_str(), nullptr));
        while (row.size() < table.columns.size()) row.push_back(kNaN);
        table.rows.push_back(std::move(row));
    }
    return table;
}

namespace {

struct SeedOutcome {
    std::vector<GenerationRecord> records;
    std::string error;  // empty on success
};

void write_seed_jsonl(const fs::path& path, const std::vector<GenerationRecord>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("run_experiment: cannot open " + path.string());
    for (const auto& record : records) {
        json j = record_to_json(record);
        validate_record_json(j);
        out << j.dump() << '\n';
    }
}

int worker_count(std::size_t tasks) {
    if (const char* env = std::getenv("MIDS_WORKERS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<int>(std::min<long>(v, static_cast<long>(tasks)));
    }
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    return static_cast<int>(std::min<std::size_t>(hw, tasks));
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& config) {
    config.validate();
    const auto started = std::chrono::steady_clock::now();
    const std::string hash = config_hash(config.resolved);
    const fs::path run_dir = fs::path(config.output_dir) / config.name;
    fs::create_directories(run_dir);
    for (const auto& arm : config.arms) fs::create_directories(run_dir / arm.name);

    const std::size_t n_arms = config.arms.size();
    const std::size_t n_seeds = config.seeds.size();
    std::vector<std::vector<SeedOutcome>> outcomes(n_arms, std::vector<SeedOutcome>(n_seeds));

    struct Task {
        std::size_t arm, seed;
    };
    std::vector<Task> tasks;
    for (std::size_t a = 0; a < n_arms; ++a)
        for (std::size_t s = 0; s < n_seeds; ++s) tasks.push_back({a, s});

    std::atomic<std::size_t> cursor{0};
    const int workers = worker_count(tasks.size());
    auto work = [&] {
        while (true) {
            const std::size_t t = cursor.fetch_add(1);
            if (t >= tasks.size()) return;
            const auto [a, s] = tasks[t];
            const ArmConfig& arm = config.arms[a];
            const std::uint64_t seed = config.seeds[s];
            SeedOutcome& slot = outcomes[a][s];
            try {
                Rng blob_rng = derive_stream(seed, "blobs");
                LabeledDataset data = make_colored_blobs(arm.dataset, blob_rng);
                BlobsConfig eval_cfg = arm.dataset;
                eval_cfg.n = config.eval_size;
                Rng eval_rng = derive_stream(seed, "evalset");
                LabeledDataset eval_set = make_colored_blobs(eval_cfg, eval_rng);
                Rng oracle_rng = derive_stream(seed, "oracles");
                Oracles oracles = build_oracles(data, arm.oracles, oracle_rng);

                EngineConfig engine = arm.engine;
                if (config.checkpoints)
                    engine.checkpoint_dir =
                        (run_dir / arm.name / ("run_" + hash + "_seed_" + std::to_string(seed)))
                            .string();
                slot.records = run_chain(engine, oracles, data, eval_set, seed);
                write_seed_jsonl(run_dir / arm.name / ("seed_" + std::to_string(seed) + ".jsonl"),
                                 slot.records);
            } catch (const std::exception& e) {
                slot.error = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();

    int failed = 0;
    json seed_status = json::array();
    for (std::size_t a = 0; a < n_arms; ++a) {
        std::vector<std::vector<GenerationRecord>> ok;
        for (std::size_t s = 0; s < n_seeds; ++s) {
            const auto& slot = outcomes[a][s];
            json entry = {{"arm", config.arms[a].name}, {"seed", config.seeds[s]}};
            if (slot.error.empty()) {
                entry["status"] = "ok";
                ok.push_back(slot.records);
            } else {
                entry["status"] = "error: " + slot.error;
                ++failed;
            }
            seed_status.push_back(std::move(entry));
        }
        if (!ok.empty())
            write_csv(aggregate_records(ok), run_dir / config.arms[a].name / "aggregate.csv");
    }

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    json manifest = {{"name", config.name},
                     {"config_hash", hash},
                     {"code_version", kCodeVersion},
                     {"wall_time_s", wall},
                     {"workers", workers},
                     {"seeds", seed_status},
                     {"config", config.resolved}};
    json arm_names = json::array();
    for (const auto& arm : config.arms) arm_names.push_back(arm.name);
    manifest["arms"] = arm_names;
    std::ofstream((run_dir / "manifest.json").string()) << manifest.dump(2) << '\n';

    return {run_dir, failed};
}

}  // namespace mids
