#include "mids/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "mids/star.hpp"

namespace mids {

using nlohmann::json;

int DatasetSchema::group_cells() const {
    int p = 1;
    for (int c : group_cards) p *= c;
    return p;
}

int DatasetSchema::n_cells() const { return n_labels * group_cells(); }

void DatasetSchema::validate() const {
    if (dim < 1) throw std::invalid_argument("DatasetSchema: dim must be >= 1");
    if (n_labels < 1) throw std::invalid_argument("DatasetSchema: n_labels must be >= 1");
    if (group_cards.empty())
        throw std::invalid_argument("DatasetSchema: group_cards must be non-empty");
    for (int c : group_cards)
        if (c < 1) throw std::invalid_argument("DatasetSchema: group_cards entries must be >= 1");
    if (n_cells() <= 0 || n_cells() > 1'000'000)
        throw std::invalid_argument("DatasetSchema: cell count out of range");
}

LabeledDataset::LabeledDataset(DatasetSchema schema) : schema_(std::move(schema)) {
    schema_.validate();
}

void LabeledDataset::reserve(std::size_t n) {
    features_.reserve(n * schema_.dim);
    labels_.reserve(n);
    groups_.reserve(n * schema_.group_cards.size());
}

void LabeledDataset::add(std::span<const double> features, int label,
                         std::span<const int> groups) {
    if (static_cast<int>(features.size()) != schema_.dim)
        throw std::invalid_argument("LabeledDataset::add: feature dimension mismatch");
    for (double v : features)
        if (!std::isfinite(v))
            throw std::invalid_argument("LabeledDataset::add: non-finite feature");
    if (label < 0 || label >= schema_.n_labels)
        throw std::invalid_argument("LabeledDataset::add: label out of range");
    if (groups.size() != schema_.group_cards.size())
        throw std::invalid_argument("LabeledDataset::add: group arity mismatch");
    for (std::size_t k = 0; k < groups.size(); ++k)
        if (groups[k] < 0 || groups[k] >= schema_.group_cards[k])
            throw std::invalid_argument("LabeledDataset::add: group value out of range");
    features_.insert(features_.end(), features.begin(), features.end());
    labels_.push_back(label);
    groups_.insert(groups_.end(), groups.begin(), groups.end());
}

std::span<const double> LabeledDataset::features(std::size_t i) const {
    return {features_.data() + i * schema_.dim, static_cast<std::size_t>(schema_.dim)};
}

std::span<const int> LabeledDataset::groups(std::size_t i) const {
    const std::size_t m = schema_.group_cards.size();
    return {groups_.data() + i * m, m};
}

Sample LabeledDataset::sample(std::size_t i) const {
    auto f = features(i);
    auto g = groups(i);
    return Sample{{f.begin(), f.end()}, labels_[i], {g.begin(), g.end()}};
}

int LabeledDataset::cell_of(std::size_t i) const {
    return cell_index(labels_[i], groups(i), schema_);
}

void StrataDistribution::validate() const {
    if (probs.empty()) throw std::invalid_argument("StrataDistribution: empty");
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) throw std::invalid_argument("StrataDistribution: negative entry");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12)
        throw std::invalid_argument("StrataDistribution: probabilities do not sum to 1");
}

StrataDistribution StrataDistribution::uniform(int n_cells) {
    if (n_cells < 1) throw std::invalid_argument("StrataDistribution::uniform: n_cells < 1");
    return {std::vector<double>(n_cells, 1.0 / n_cells)};
}

int cell_index(int label, std::span<const int> groups, const DatasetSchema& schema) {
    if (label < 0 || label >= schema.n_labels)
        throw std::invalid_argument("cell_index: label out of range");
    if (groups.size() != schema.group_cards.size())
        throw std::invalid_argument("cell_index: group arity mismatch");
    int idx = label;
    for (std::size_t k = 0; k < groups.size(); ++k) {
        if (groups[k] < 0 || groups[k] >= schema.group_cards[k])
            throw std::invalid_argument("cell_index: group value out of range");
        idx = idx * schema.group_cards[k] + groups[k];
    }
    return idx;
}

std::pair<int, std::vector<int>> cell_unindex(int cell, const DatasetSchema& schema) {
    if (cell < 0 || cell >= schema.n_cells())
        throw std::invalid_argument("cell_unindex: cell out of range");
    std::vector<int> groups(schema.group_cards.size());
    int rest = cell;
    for (int k = static_cast<int>(groups.size()) - 1; k >= 0; --k) {
        groups[k] = rest % schema.group_cards[k];
        rest /= schema.group_cards[k];
    }
    return {rest, std::move(groups)};
}

StrataDistribution compute_strata(std::span<const int> labels,
                                  std::span<const int> groups,
                                  const DatasetSchema& schema) {
    const std::size_t n = labels.size();
    const std::size_t m = schema.group_cards.size();
    if (n == 0) throw std::invalid_argument("compute_strata: empty input");
    if (groups.size() != n * m)
        throw std::invalid_argument("compute_strata: labels/groups length mismatch");
    std::vector<double> probs(schema.n_cells(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        int cell = cell_index(labels[i], groups.subspan(i * m, m), schema);
        probs[cell] += 1.0;
    }
    for (double& p : probs) p /= static_cast<double>(n);
    return {std::move(probs)};
}

StrataDistribution compute_strata(const LabeledDataset& data) {
    return compute_strata(data.labels(), data.group_data(), data.schema());
}

std::vector<int> joint_group_ids(std::span<const int> groups, const DatasetSchema& schema) {
    const std::size_t m = schema.group_cards.size();
    const std::size_t n = groups.size() / m;
    std::vector<int> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
        int id = 0;
        for (std::size_t k = 0; k < m; ++k) id = id * schema.group_cards[k] + groups[i * m + k];
        ids[i] = id;
    }
    return ids;
}

std::vector<int> joint_group_ids(const LabeledDataset& data) {
    return joint_group_ids(data.group_data(), data.schema());
}

void BlobsConfig::validate() const {
    schema.validate();
    if (!(cov_scale > 0.0)) throw std::invalid_argument("BlobsConfig: cov_scale must be > 0");
    if (!(label_noise >= 0.0 && label_noise < 1.0))
        throw std::invalid_argument("BlobsConfig: label_noise must be in [0, 1)");
    if (n < schema.n_cells())
        throw std::invalid_argument("BlobsConfig: n must be at least the cell count");
    if (!class_prior.empty()) {
        if (static_cast<int>(class_prior.size()) != schema.n_labels)
            throw std::invalid_argument("BlobsConfig: class_prior size must equal n_labels");
        double s = std::accumulate(class_prior.begin(), class_prior.end(), 0.0);
        if (std::abs(s - 1.0) > 1e-9)
            throw std::invalid_argument("BlobsConfig: class_prior must sum to 1");
        for (double p : class_prior)
            if (!(p >= 0.0)) throw std::invalid_argument("BlobsConfig: class_prior entry < 0");
    }
    if (static_cast<int>(skew.size()) != schema.n_labels)
        throw std::invalid_argument("BlobsConfig: skew needs one entry per label");
    for (double s : skew)
        if (!(s >= 0.0 && s <= 1.0))
            throw std::invalid_argument("BlobsConfig: skew entries must be in [0, 1]");
    if (!cell_means.empty()) {
        if (static_cast<int>(cell_means.size()) != schema.n_cells())
            throw std::invalid_argument("BlobsConfig: cell_means needs one mean per cell");
        for (const auto& m : cell_means)
            if (static_cast<int>(m.size()) != schema.dim)
                throw std::invalid_argument("BlobsConfig: cell_means entry has wrong dimension");
    }
}

std::vector<double> BlobsConfig::cell_probs() const {
    std::vector<double> prior = class_prior;
    if (prior.empty()) prior.assign(schema.n_labels, 1.0 / schema.n_labels);
    std::vector<double> probs(schema.n_cells());
    for (int cell = 0; cell < schema.n_cells(); ++cell) {
        auto [label, groups] = cell_unindex(cell, schema);
        double p = prior[label];
        for (std::size_t k = 0; k < groups.size(); ++k) {
            const int card = schema.group_cards[k];
            const double p0 = skew[label];
            p *= (groups[k] == 0) ? p0 : (card > 1 ? (1.0 - p0) / (card - 1) : 1.0);
        }
        probs[cell] = p;
    }
    return probs;
}

std::vector<double> BlobsConfig::default_mean(int cell) const {
    auto [label, groups] = cell_unindex(cell, schema);
    std::vector<double> mean(schema.dim, 0.0);
    if (schema.n_labels > 1)
        mean[0] = -2.0 + 4.0 * label / (schema.n_labels - 1);
    for (std::size_t k = 0; k < groups.size(); ++k) {
        const int card = schema.group_cards[k];
        if (card < 2) continue;
        const int axis = std::min<int>(1 + static_cast<int>(k), schema.dim - 1);
        mean[axis] += 1.0 - 2.0 * groups[k] / (card - 1);
    }
    return mean;
}

std::vector<double> BlobsConfig::mean_of(int cell) const {
    return cell_means.empty() ? default_mean(cell) : cell_means[cell];
}

LabeledDataset make_colored_blobs(const BlobsConfig& config, Rng& rng) {
    config.validate();
    const auto& schema = config.schema;

    std::vector<double> prior = config.class_prior;
    if (prior.empty()) prior.assign(schema.n_labels, 1.0 / schema.n_labels);

    // Cache cell means up front.
    std::vector<std::vector<double>> means(schema.n_cells());
    for (int c = 0; c < schema.n_cells(); ++c) means[c] = config.mean_of(c);

    LabeledDataset out(schema);
    out.reserve(config.n);
    std::vector<double> x(schema.dim);
    std::vector<int> groups(schema.group_cards.size());
    for (long i = 0; i < config.n; ++i) {
        const int label = static_cast<int>(rng.categorical(prior));
        for (std::size_t k = 0; k < groups.size(); ++k) {
            const int card = schema.group_cards[k];
            if (card == 1) {
                groups[k] = 0;
            } else if (rng.bernoulli(config.skew[label])) {
                groups[k] = 0;
            } else {
                groups[k] = 1 + static_cast<int>(rng.index(card - 1));
            }
        }
        const auto& mu = means[cell_index(label, groups, schema)];
        for (int d = 0; d < schema.dim; ++d) x[d] = rng.normal(mu[d], config.cov_scale);
        out.add(x, label, groups);
    }
    return config.label_noise > 0.0 ? flip_labels(out, config.label_noise, rng) : out;
}

LabeledDataset flip_labels(const LabeledDataset& data, double rate, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0))
        throw std::invalid_argument("flip_labels: rate must be in [0, 1)");
    const int n_labels = data.schema().n_labels;
    LabeledDataset out(data.schema());
    out.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        int label = data.label(i);
        if (n_labels > 1 && rng.bernoulli(rate)) {
            int other = static_cast<int>(rng.index(n_labels - 1));
            label = other < label ? other : other + 1;
        }
        out.add(data.features(i), label, data.groups(i));
    }
    return out;
}

QuotaSampleResult quota_sample(const LabeledDataset& source,
                               const StrataDistribution& target,
                               long n, Rng& rng) {
    if (source.empty()) throw std::invalid_argument("quota_sample: empty source");
    if (n < 1) throw std::invalid_argument("quota_sample: n must be >= 1");
    target.validate();
    const int n_cells = source.schema().n_cells();
    if (target.n_cells() != n_cells)
        throw std::invalid_argument("quota_sample: target cell count does not match schema");

    QuotaSampleResult result;
    result.quotas = quota_from_distribution(target, n);
    result.deficit.assign(n_cells, 0);

    // Bucket source indices by cell, then shuffle each bucket so that
    // within-cell selection is uniform without replacement.
    std::vector<std::vector<std::size_t>> by_cell(n_cells);
    for (std::size_t i = 0; i < source.size(); ++i)
        by_cell[source.cell_of(i)].push_back(i);

    std::vector<std::size_t> chosen;
    std::vector<std::size_t> leftover;
    chosen.reserve(n);
    for (int c = 0; c < n_cells; ++c) {
        auto& bucket = by_cell[c];
        rng.shuffle(bucket);
        const long take = std::min<long>(result.quotas[c], static_cast<long>(bucket.size()));
        chosen.insert(chosen.end(), bucket.begin(), bucket.begin() + take);
        leftover.insert(leftover.end(), bucket.begin() + take, bucket.end());
        result.deficit[c] = result.quotas[c] - take;
    }

    long need = n - static_cast<long>(chosen.size());
    result.backfilled = need;
    rng.shuffle(leftover);
    while (need > 0 && !leftover.empty()) {
        chosen.push_back(leftover.back());
        leftover.pop_back();
        --need;
    }
    if (need > 0) {
        result.with_replacement = true;
        while (need-- > 0) chosen.push_back(rng.index(source.size()));
    }

    result.data = LabeledDataset(source.schema());
    result.data.reserve(chosen.size());
    for (std::size_t i : chosen)
        result.data.add(source.features(i), source.label(i), source.groups(i));
    return result;
}

LabeledDataset uniform_sample(const LabeledDataset& source, long n, Rng& rng) {
    if (source.empty()) throw std::invalid_argument("uniform_sample: empty source");
    if (n < 0) throw std::invalid_argument("uniform_sample: n must be >= 0");
    LabeledDataset out(source.schema());
    out.reserve(n);
    if (static_cast<std::size_t>(n) <= source.size()) {
        std::vector<std::size_t> idx(source.size());
        std::iota(idx.begin(), idx.end(), 0);
        rng.shuffle(idx);
        for (long i = 0; i < n; ++i)
            out.add(source.features(idx[i]), source.label(idx[i]), source.groups(idx[i]));
    } else {
        for (long i = 0; i < n; ++i) {
            std::size_t j = rng.index(source.size());
            out.add(source.features(j), source.label(j), source.groups(j));
        }
    }
    return out;
}

void write_jsonl(const LabeledDataset& data, std::ostream& out) {
    const auto& schema = data.schema();
    json header = {{"d", schema.dim}, {"n_labels", schema.n_labels}, {"groups", schema.group_cards}};
    out << header.dump() << '\n';
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto f = data.features(i);
        auto g = data.groups(i);
        json row = {{"x", std::vector<double>(f.begin(), f.end())},
                    {"y", data.label(i)},
                    {"s", std::vector<int>(g.begin(), g.end())}};
        out << row.dump() << '\n';
    }
}

void write_jsonl(const LabeledDataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_jsonl: cannot open " + path);
    write_jsonl(data, out);
}

LabeledDataset read_jsonl(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("read_jsonl: empty stream");
    json header = json::parse(line);
    DatasetSchema schema;
    schema.dim = header.at("d").get<int>();
    schema.n_labels = header.at("n_labels").get<int>();
    schema.group_cards = header.at("groups").get<std::vector<int>>();
    LabeledDataset data(schema);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json row = json::parse(line);
        data.add(row.at("x").get<std::vector<double>>(), row.at("y").get<int>(),
                 row.at("s").get<std::vector<int>>());
    }
    return data;
}

LabeledDataset read_jsonl_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_jsonl_file: cannot open " + path);
    return read_jsonl(in);
}

}  // namespace mids
