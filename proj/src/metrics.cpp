#include "mids/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mids {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_group_ids(std::span<const int> groups, int n_groups) {
    if (n_groups < 1) throw std::invalid_argument("metrics: n_groups must be >= 1");
    for (int g : groups)
        if (g < 0 || g >= n_groups)
            throw std::invalid_argument("metrics: group id out of range");
}

void check_binary(std::span<const int> values, const char* what) {
    for (int v : values)
        if (v != 0 && v != 1)
            throw std::invalid_argument(std::string("metrics: ") + what + " must be binary");
}

// Max |a - b| over all defined (non-NaN) pairs; undefined if fewer than two.
MetricValue max_pairwise_gap(std::span<const double> rates, int present_groups) {
    MetricValue out;
    out.excluded_groups = 0;
    std::vector<double> defined;
    for (double r : rates)
        if (!std::isnan(r)) defined.push_back(r);
    out.excluded_groups = present_groups - static_cast<int>(defined.size());
    if (defined.size() < 2) {
        out.defined = false;
        return out;
    }
    auto [lo, hi] = std::minmax_element(defined.begin(), defined.end());
    out.value = *hi - *lo;
    return out;
}

}  // namespace

MetricValue demographic_parity_diff(std::span<const int> predictions,
                                    std::span<const int> groups, int n_groups) {
    if (predictions.empty() || predictions.size() != groups.size())
        throw std::invalid_argument("demographic_parity_diff: size mismatch or empty input");
    check_binary(predictions, "predictions");
    check_group_ids(groups, n_groups);
    auto rates = selection_rates(predictions, groups, n_groups);
    return max_pairwise_gap(rates, n_groups);
}

MetricValue equalized_odds_diff(std::span<const int> predictions, std::span<const int> labels,
                                std::span<const int> groups, int n_groups) {
    const std::size_t n = predictions.size();
    if (n == 0 || labels.size() != n || groups.size() != n)
        throw std::invalid_argument("equalized_odds_diff: size mismatch or empty input");
    check_binary(predictions, "predictions");
    check_binary(labels, "labels");
    check_group_ids(groups, n_groups);

    std::vector<long> tp(n_groups, 0), fn(n_groups, 0), fp(n_groups, 0), tn(n_groups, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const int g = groups[i];
        if (labels[i] == 1)
            (predictions[i] == 1 ? tp[g] : fn[g])++;
        else
            (predictions[i] == 1 ? fp[g] : tn[g])++;
    }
    std::vector<double> tpr(n_groups, kNaN), fpr(n_groups, kNaN);
    int present = 0;
    for (int g = 0; g < n_groups; ++g) {
        const long pos = tp[g] + fn[g];
        const long neg = fp[g] + tn[g];
        if (pos + neg > 0) ++present;
        if (pos > 0) tpr[g] = static_cast<double>(tp[g]) / static_cast<double>(pos);
        if (neg > 0) fpr[g] = static_cast<double>(fp[g]) / static_cast<double>(neg);
    }

    // Pairwise over groups; a pair contributes whichever of its TPR / FPR
    // gaps is measurable.
    MetricValue out;
    bool any = false;
    double best = 0.0;
    for (int a = 0; a < n_groups; ++a)
        for (int b = a + 1; b < n_groups; ++b) {
            double gap = -1.0;
            if (!std::isnan(tpr[a]) && !std::isnan(tpr[b]))
                gap = std::max(gap, std::abs(tpr[a] - tpr[b]));
            if (!std::isnan(fpr[a]) && !std::isnan(fpr[b]))
                gap = std::max(gap, std::abs(fpr[a] - fpr[b]));
            if (gap >= 0.0) {
                any = true;
                best = std::max(best, gap);
            }
        }
    int measurable = 0;
    for (int g = 0; g < n_groups; ++g)
        if (!std::isnan(tpr[g]) || !std::isnan(fpr[g])) ++measurable;
    out.excluded_groups = n_groups - measurable;
    if (!any) {
        out.defined = false;
        return out;
    }
    out.value = best;
    return out;
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.empty() || predictions.size() != labels.size())
        throw std::invalid_argument("accuracy: size mismatch or empty input");
    long correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

MetricValue group_accuracy_gap(std::span<const int> predictions, std::span<const int> labels,
                               std::span<const int> groups, int n_groups) {
    const std::size_t n = predictions.size();
    if (n == 0 || labels.size() != n || groups.size() != n)
        throw std::invalid_argument("group_accuracy_gap: size mismatch or empty input");
    check_group_ids(groups, n_groups);
    std::vector<long> correct(n_groups, 0), total(n_groups, 0);
    for (std::size_t i = 0; i < n; ++i) {
        ++total[groups[i]];
        if (predictions[i] == labels[i]) ++correct[groups[i]];
    }
    std::vector<double> acc(n_groups, kNaN);
    for (int g = 0; g < n_groups; ++g)
        if (total[g] > 0) acc[g] = static_cast<double>(correct[g]) / static_cast<double>(total[g]);
    return max_pairwise_gap(acc, n_groups);
}

std::vector<double> selection_rates(std::span<const int> predictions,
                                    std::span<const int> groups, int n_groups) {
    std::vector<long> selected(n_groups, 0), total(n_groups, 0);
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        ++total[groups[i]];
        if (predictions[i] == 1) ++selected[groups[i]];
    }
    std::vector<double> rates(n_groups, kNaN);
    for (int g = 0; g < n_groups; ++g)
        if (total[g] > 0) rates[g] = static_cast<double>(selected[g]) / static_cast<double>(total[g]);
    return rates;
}

double kl_divergence(const StrataDistribution& p, const StrataDistribution& q) {
    if (p.n_cells() != q.n_cells())
        throw std::invalid_argument("kl_divergence: cell count mismatch");
    p.validate();
    q.validate();
    constexpr double eps = 1e-9;
    const int cells = p.n_cells();
    const double norm = 1.0 + eps * cells;
    double kl = 0.0;
    for (int c = 0; c < cells; ++c) {
        const double pc = (p.probs[c] + eps) / norm;
        const double qc = (q.probs[c] + eps) / norm;
        kl += pc * std::log(pc / qc);
    }
    return std::max(kl, 0.0);
}

FairnessReport fairness_report(std::span<const int> predictions, std::span<const int> labels,
                               std::span<const int> joint_groups, int n_groups) {
    FairnessReport report;
    report.accuracy = accuracy(predictions, labels);
    report.accuracy_gap = group_accuracy_gap(predictions, labels, joint_groups, n_groups);
    const bool binary = std::all_of(predictions.begin(), predictions.end(),
                                    [](int v) { return v == 0 || v == 1; }) &&
                        std::all_of(labels.begin(), labels.end(),
                                    [](int v) { return v == 0 || v == 1; });
    if (binary) {
        report.dp_diff = demographic_parity_diff(predictions, joint_groups, n_groups);
        report.eodds_diff = equalized_odds_diff(predictions, labels, joint_groups, n_groups);
        report.selection_rates = selection_rates(predictions, joint_groups, n_groups);
    } else {
        report.dp_diff.defined = false;
        report.eodds_diff.defined = false;
        report.selection_rates.assign(n_groups, kNaN);
    }
    return report;
}

namespace {

json metric_to_json(const MetricValue& m) {
    json j;
    j["value"] = m.defined ? json(m.value) : json(nullptr);
    j["excluded_groups"] = m.excluded_groups;
    return j;
}

MetricValue metric_from_json(const json& j) {
    MetricValue m;
    m.defined = !j.at("value").is_null();
    m.value = m.defined ? j.at("value").get<double>() : 0.0;
    m.excluded_groups = j.value("excluded_groups", 0);
    return m;
}

json report_to_json(const FairnessReport& r) {
    json rates = json::array();
    for (double v : r.selection_rates) rates.push_back(std::isnan(v) ? json(nullptr) : json(v));
    return {{"accuracy", r.accuracy},
            {"accuracy_gap", metric_to_json(r.accuracy_gap)},
            {"dp_diff", metric_to_json(r.dp_diff)},
            {"eodds_diff", metric_to_json(r.eodds_diff)},
            {"selection_rates", rates}};
}

FairnessReport report_from_json(const json& j) {
    FairnessReport r;
    r.accuracy = j.at("accuracy").get<double>();
    r.accuracy_gap = metric_from_json(j.at("accuracy_gap"));
    r.dp_diff = metric_from_json(j.at("dp_diff"));
    r.eodds_diff = metric_from_json(j.at("eodds_diff"));
    for (const auto& v : j.at("selection_rates"))
        r.selection_rates.push_back(v.is_null() ? kNaN : v.get<double>());
    return r;
}

}  // namespace

json record_to_json(const GenerationRecord& record) {
    json j;
    j["gen"] = record.gen;
    j["actual"] = report_to_json(record.actual);
    j["relative"] = record.relative ? report_to_json(*record.relative) : json(nullptr);
    j["classifier_strata"] = record.classifier_strata.probs;
    j["generator_strata"] =
        record.generator_strata ? json(record.generator_strata->probs) : json(nullptr);
    j["class_balance"] = record.class_balance ? json(*record.class_balance) : json(nullptr);
    j["group_balance"] = record.group_balance ? json(*record.group_balance) : json(nullptr);
    j["probe_variance"] = record.probe_variance ? json(*record.probe_variance) : json(nullptr);
    j["kl_classifier"] = record.kl_classifier;
    j["kl_generator"] = record.kl_generator ? json(*record.kl_generator) : json(nullptr);
    if (record.star) {
        j["star"] = {{"resample_frac", record.star->resample_frac},
                     {"achieved_strata", record.star->achieved.probs},
                     {"deficit", record.star->deficit}};
    } else {
        j["star"] = nullptr;
    }
    j["collapsed"] = record.collapsed;
    return j;
}

GenerationRecord record_from_json(const json& j) {
    validate_record_json(j);
    GenerationRecord r;
    r.gen = j.at("gen").get<int>();
    r.actual = report_from_json(j.at("actual"));
    if (!j.at("relative").is_null()) r.relative = report_from_json(j.at("relative"));
    r.classifier_strata.probs = j.at("classifier_strata").get<std::vector<double>>();
    if (!j.at("generator_strata").is_null())
        r.generator_strata = StrataDistribution{j.at("generator_strata").get<std::vector<double>>()};
    if (!j.at("class_balance").is_null())
        r.class_balance = j.at("class_balance").get<std::vector<double>>();
    if (!j.at("group_balance").is_null())
        r.group_balance = j.at("group_balance").get<std::vector<std::vector<double>>>();
    if (!j.at("probe_variance").is_null())
        r.probe_variance = j.at("probe_variance").get<std::vector<double>>();
    r.kl_classifier = j.at("kl_classifier").get<double>();
    if (!j.at("kl_generator").is_null()) r.kl_generator = j.at("kl_generator").get<double>();
    if (!j.at("star").is_null()) {
        StarStats s;
        s.resample_frac = j["star"].at("resample_frac").get<double>();
        s.achieved.probs = j["star"].at("achieved_strata").get<std::vector<double>>();
        s.deficit = j["star"].at("deficit").get<std::vector<double>>();
        r.star = std::move(s);
    }
    r.collapsed = j.at("collapsed").get<bool>();
    return r;
}

void validate_record_json(const json& j) {
    auto need = [&](const char* key) {
        if (!j.contains(key))
            throw std::runtime_error(std::string("record: missing field '") + key + "'");
    };
    for (const char* key : {"gen", "actual", "relative", "classifier_strata", "generator_strata",
                            "class_balance", "group_balance", "probe_variance", "kl_classifier",
                            "kl_generator", "star", "collapsed"})
        need(key);
    if (!j["gen"].is_number_integer()) throw std::runtime_error("record: 'gen' must be an integer");
    const int gen = j["gen"].get<int>();
    auto check_report = [](const json& r, const std::string& name) {
        for (const char* key : {"accuracy", "accuracy_gap", "dp_diff", "eodds_diff", "selection_rates"})
            if (!r.contains(key))
                throw std::runtime_error("record: missing field '" + name + "." + key + "'");
        if (!r["accuracy"].is_number())
            throw std::runtime_error("record: '" + name + ".accuracy' must be a number");
    };
    check_report(j["actual"], "actual");
    if (gen == 0 && !j["relative"].is_null())
        throw std::runtime_error("record: relative metrics must be absent at generation 0");
    if (gen > 0 && j["relative"].is_null())
        throw std::runtime_error("record: relative metrics missing after generation 0");
    if (!j["relative"].is_null()) check_report(j["relative"], "relative");
    if (!j["classifier_strata"].is_array() || j["classifier_strata"].empty())
        throw std::runtime_error("record: 'classifier_strata' must be a non-empty array");
    if (!j["kl_classifier"].is_number())
        throw std::runtime_error("record: 'kl_classifier' must be a number");
    if (!j["collapsed"].is_boolean())
        throw std::runtime_error("record: 'collapsed' must be a boolean");
    const bool has_gen = !j["generator_strata"].is_null();
    for (const char* key : {"class_balance", "group_balance", "probe_variance", "kl_generator"})
        if (j[key].is_null() == has_gen)
            throw std::runtime_error(std::string("record: '") + key +
                                     "' must be present exactly when generator_strata is");
}

GenerationRecord evaluate_generation(const Classifier& current, const Generator* generator,
                                     const Classifier* predecessor, const EvalContext& ctx,
                                     int gen, Rng& rng) {
    if (ctx.eval_set == nullptr || ctx.oracles == nullptr)
        throw std::invalid_argument("evaluate_generation: eval_set and oracles are required");
    const LabeledDataset& eval = *ctx.eval_set;
    if (eval.empty()) throw std::invalid_argument("evaluate_generation: empty eval set");
    const auto& schema = eval.schema();
    const int n_groups = schema.group_cells();

    GenerationRecord record;
    record.gen = gen;

    // Actual metrics against the evaluation set's true labels and groups.
    auto preds = classify_labels(current, eval.feature_data());
    record.actual = fairness_report(preds, eval.labels(), joint_group_ids(eval), n_groups);

    // Classifier output strata: predictions with annotated groups.
    auto eval_groups = ctx.oracles->annotate_groups(eval.feature_data());
    record.classifier_strata = compute_strata(preds, eval_groups, schema);
    record.kl_classifier = kl_divergence(record.classifier_strata, ctx.ideal.target);

    // Relative metrics: predecessor labels on fresh draws.
    if (predecessor != nullptr) {
        const Generator& source = generator != nullptr ? *generator : ctx.oracles->g0;
        auto X = sample_generator(source, ctx.relative_size, rng);
        auto ref = classify_labels(*predecessor, X);
        auto cur = classify_labels(current, X);
        auto grp = joint_group_ids(ctx.oracles->annotate_groups(X), schema);
        record.relative = fairness_report(cur, ref, grp, n_groups);
    }

    // Generator balance probe.
    if (generator != nullptr) {
        auto X = sample_generator(*generator, ctx.probe_size, rng);
        auto labels = classify_labels(ctx.oracles->a_l, X);
        auto groups = ctx.oracles->annotate_groups(X);
        record.generator_strata = compute_strata(labels, groups, schema);
        record.kl_generator = kl_divergence(*record.generator_strata, ctx.ideal.target);

        std::vector<double> class_balance(schema.n_labels, 0.0);
        for (int y : labels) class_balance[y] += 1.0 / labels.size();
        record.class_balance = std::move(class_balance);

        const std::size_t m = schema.group_cards.size();
        std::vector<std::vector<double>> group_balance;
        for (std::size_t k = 0; k < m; ++k) {
            std::vector<double> bal(schema.group_cards[k], 0.0);
            for (std::size_t i = 0; i < X.size() / schema.dim; ++i)
                bal[groups[i * m + k]] += 1.0 / (X.size() / schema.dim);
            group_balance.push_back(std::move(bal));
        }
        record.group_balance = std::move(group_balance);

        // Pooled per-dimension feature variance of the probe (collapse tracking).
        const std::size_t pn = X.size() / schema.dim;
        std::vector<double> mean(schema.dim, 0.0), var(schema.dim, 0.0);
        for (std::size_t i = 0; i < pn; ++i)
            for (int d = 0; d < schema.dim; ++d) mean[d] += X[i * schema.dim + d];
        for (int d = 0; d < schema.dim; ++d) mean[d] /= static_cast<double>(pn);
        for (std::size_t i = 0; i < pn; ++i)
            for (int d = 0; d < schema.dim; ++d) {
                const double diff = X[i * schema.dim + d] - mean[d];
                var[d] += diff * diff;
            }
        for (int d = 0; d < schema.dim; ++d) var[d] /= static_cast<double>(pn);
        record.probe_variance = std::move(var);
    }

    // Collapse proxy: accuracy indistinguishable from the majority-class rate.
    std::vector<long> counts(schema.n_labels, 0);
    for (int y : eval.labels()) ++counts[y];
    const double majority =
        static_cast<double>(*std::max_element(counts.begin(), counts.end())) /
        static_cast<double>(eval.size());
    record.collapsed = std::abs(record.actual.accuracy - majority) <= 0.02;
    return record;
}

}  // namespace mids
