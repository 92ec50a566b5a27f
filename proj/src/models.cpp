#include "mids/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace mids {

using nlohmann::json;

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    if (l2 < 0.0) throw std::invalid_argument("TrainConfig: l2 must be >= 0");
    if (components < 1) throw std::invalid_argument("TrainConfig: components must be >= 1");
    if (em_max_iters < 1) throw std::invalid_argument("TrainConfig: em_max_iters must be >= 1");
    if (!(em_tol > 0.0)) throw std::invalid_argument("TrainConfig: em_tol must be > 0");
    if (!(variance_floor > 0.0))
        throw std::invalid_argument("TrainConfig: variance_floor must be > 0");
}

Classifier::Classifier(int n_labels, int dim)
    : n_labels_(n_labels), dim_(dim), weights_(static_cast<std::size_t>(n_labels) * (dim + 1), 0.0) {
    if (n_labels < 1 || dim < 1)
        throw std::invalid_argument("Classifier: n_labels and dim must be >= 1");
}

Classifier Classifier::from_weights(int n_labels, int dim, std::vector<double> weights) {
    Classifier c(n_labels, dim);
    if (weights.size() != c.weights_.size())
        throw std::invalid_argument("Classifier::from_weights: size mismatch");
    for (double w : weights)
        if (!std::isfinite(w))
            throw std::invalid_argument("Classifier::from_weights: non-finite weight");
    c.weights_ = std::move(weights);
    return c;
}

std::span<const double> Classifier::row(int label) const {
    return {weights_.data() + static_cast<std::size_t>(label) * (dim_ + 1),
            static_cast<std::size_t>(dim_ + 1)};
}

double& Classifier::at(int label, int col) {
    return weights_[static_cast<std::size_t>(label) * (dim_ + 1) + col];
}

namespace {

// Softmax probabilities for one sample into out[0..n_labels).
void softmax_row(const Classifier& model, const double* x, double* out) {
    const int L = model.n_labels();
    const int d = model.dim();
    double maxv = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < L; ++c) {
        auto w = model.row(c);
        double z = w[d];
        for (int j = 0; j < d; ++j) z += w[j] * x[j];
        out[c] = z;
        maxv = std::max(maxv, z);
    }
    double sum = 0.0;
    for (int c = 0; c < L; ++c) {
        out[c] = std::exp(out[c] - maxv);
        sum += out[c];
    }
    for (int c = 0; c < L; ++c) out[c] /= sum;
}

double full_loss(const Classifier& model, std::span<const double> X, std::span<const int> y,
                 double l2) {
    const int d = model.dim();
    const int L = model.n_labels();
    const std::size_t n = y.size();
    std::vector<double> p(L);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        softmax_row(model, X.data() + i * d, p.data());
        loss -= std::log(std::max(p[y[i]], 1e-300));
    }
    loss /= static_cast<double>(n);
    if (l2 > 0.0) {
        double reg = 0.0;
        for (int c = 0; c < L; ++c) {
            auto w = model.row(c);
            for (int j = 0; j < d; ++j) reg += w[j] * w[j];  // bias excluded
        }
        loss += 0.5 * l2 * reg;
    }
    return loss;
}

// One SGD step on a minibatch; returns the batch cross-entropy (pre-step).
double sgd_step(Classifier& model, const double* X, const int* y, int b, double lr, double l2) {
    const int d = model.dim();
    const int L = model.n_labels();
    std::vector<double> grad(static_cast<std::size_t>(L) * (d + 1), 0.0);
    std::vector<double> p(L);
    double loss = 0.0;
    for (int i = 0; i < b; ++i) {
        const double* x = X + static_cast<std::size_t>(i) * d;
        softmax_row(model, x, p.data());
        loss -= std::log(std::max(p[y[i]], 1e-300));
        for (int c = 0; c < L; ++c) {
            const double coef = p[c] - (y[i] == c ? 1.0 : 0.0);
            double* g = grad.data() + static_cast<std::size_t>(c) * (d + 1);
            for (int j = 0; j < d; ++j) g[j] += coef * x[j];
            g[d] += coef;
        }
    }
    const double inv_b = 1.0 / b;
    for (int c = 0; c < L; ++c) {
        const double* g = grad.data() + static_cast<std::size_t>(c) * (d + 1);
        for (int j = 0; j <= d; ++j) {
            double step = g[j] * inv_b;
            if (l2 > 0.0 && j < d) step += l2 * model.row(c)[j];
            model.at(c, j) -= lr * step;
        }
    }
    return loss * inv_b;
}

[[noreturn]] void abort_nan(const char* where, int step, double loss) {
    std::ostringstream msg;
    msg << where << ": non-finite loss " << loss << " at step " << step
        << "; lower the learning rate or check the inputs";
    throw std::runtime_error(msg.str());
}

}  // namespace

Classifier train_classifier(std::span<const double> features, std::span<const int> labels,
                            int dim, int n_labels, const TrainConfig& config, Rng& rng) {
    config.validate();
    const std::size_t n = labels.size();
    if (n == 0) throw std::invalid_argument("train_classifier: empty input");
    if (features.size() != n * static_cast<std::size_t>(dim))
        throw std::invalid_argument("train_classifier: features/labels size mismatch");
    for (double v : features)
        if (!std::isfinite(v)) throw std::invalid_argument("train_classifier: non-finite feature");
    for (int y : labels)
        if (y < 0 || y >= n_labels)
            throw std::invalid_argument("train_classifier: label out of range");

    Classifier model(n_labels, dim);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> bx(static_cast<std::size_t>(config.batch_size) * dim);
    std::vector<int> by(config.batch_size);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const int b = static_cast<int>(std::min<std::size_t>(config.batch_size, n - start));
            for (int i = 0; i < b; ++i) {
                const std::size_t src = order[start + i];
                std::copy_n(features.data() + src * dim, dim, bx.data() + static_cast<std::size_t>(i) * dim);
                by[i] = labels[src];
            }
            double loss = sgd_step(model, bx.data(), by.data(), b, config.learning_rate, config.l2);
            if (!std::isfinite(loss)) abort_nan("train_classifier", epoch, loss);
        }
        model.meta().epoch_losses.push_back(full_loss(model, features, labels, config.l2));
    }
    model.meta().epochs = config.epochs;
    model.meta().learning_rate = config.learning_rate;
    model.meta().final_loss = model.meta().epoch_losses.back();
    return model;
}

Classifier train_classifier(const LabeledDataset& data, const TrainConfig& config, Rng& rng) {
    return train_classifier(data.feature_data(), data.labels(), data.schema().dim,
                            data.schema().n_labels, config, rng);
}

Classifier train_classifier_stream(const BatchFn& batch_fn, int n_steps, int dim, int n_labels,
                                   const TrainConfig& config, Rng& rng) {
    config.validate();
    if (n_steps < 1) throw std::invalid_argument("train_classifier_stream: n_steps must be >= 1");
    Classifier model(n_labels, dim);
    double loss_sum = 0.0;
    for (int step = 0; step < n_steps; ++step) {
        auto [bx, by] = batch_fn(step, rng);
        if (by.empty() || bx.size() != by.size() * static_cast<std::size_t>(dim))
            throw std::invalid_argument("train_classifier_stream: bad batch shape");
        double loss = sgd_step(model, bx.data(), by.data(), static_cast<int>(by.size()),
                               config.learning_rate, config.l2);
        if (!std::isfinite(loss)) abort_nan("train_classifier_stream", step, loss);
        loss_sum += loss;
    }
    model.meta().epochs = config.epochs;
    model.meta().learning_rate = config.learning_rate;
    model.meta().final_loss = loss_sum / n_steps;
    return model;
}

Prediction classify(const Classifier& model, std::span<const double> features) {
    const int d = model.dim();
    if (d == 0) throw std::invalid_argument("classify: model is empty");
    if (features.size() % d != 0)
        throw std::invalid_argument("classify: feature dimension mismatch");
    const std::size_t n = features.size() / d;
    const int L = model.n_labels();
    Prediction pred;
    pred.labels.resize(n);
    pred.probs.resize(n * L);
    for (std::size_t i = 0; i < n; ++i) {
        double* p = pred.probs.data() + i * L;
        softmax_row(model, features.data() + i * d, p);
        int best = 0;
        for (int c = 1; c < L; ++c)
            if (p[c] > p[best]) best = c;  // ties keep the lower index
        pred.labels[i] = best;
    }
    return pred;
}

std::vector<int> classify_labels(const Classifier& model, std::span<const double> features) {
    return classify(model, features).labels;
}

Generator::Generator(std::vector<double> weights, std::vector<double> means,
                     std::vector<double> variances, int dim)
    : dim_(dim), weights_(std::move(weights)), means_(std::move(means)),
      variances_(std::move(variances)) {
    const std::size_t K = weights_.size();
    if (dim < 1 || K == 0 || means_.size() != K * dim || variances_.size() != K * dim)
        throw std::invalid_argument("Generator: inconsistent shapes");
    double sum = 0.0;
    for (double w : weights_) {
        if (!(w >= 0.0)) throw std::invalid_argument("Generator: negative component weight");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12)
        throw std::invalid_argument("Generator: component weights must sum to 1");
    for (double v : variances_)
        if (!(v > 0.0)) throw std::invalid_argument("Generator: variances must be positive");
}

std::span<const double> Generator::mean(int k) const {
    return {means_.data() + static_cast<std::size_t>(k) * dim_, static_cast<std::size_t>(dim_)};
}

std::span<const double> Generator::variance(int k) const {
    return {variances_.data() + static_cast<std::size_t>(k) * dim_, static_cast<std::size_t>(dim_)};
}

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

// Log density of x under diagonal component k.
double component_logpdf(const double* x, const double* mu, const double* var, int d) {
    double acc = 0.0;
    for (int j = 0; j < d; ++j) {
        const double diff = x[j] - mu[j];
        acc += diff * diff / var[j] + std::log(var[j]);
    }
    return -0.5 * (acc + d * kLog2Pi);
}

// k-means++-style seeding: first center uniform, later centers drawn with
// probability proportional to squared distance from the nearest center.
std::vector<std::size_t> kmeanspp_seeds(std::span<const double> X, std::size_t n, int d, int K,
                                        Rng& rng) {
    std::vector<std::size_t> seeds;
    seeds.reserve(K);
    seeds.push_back(rng.index(n));
    std::vector<double> d2(n, 0.0);
    for (int k = 1; k < K; ++k) {
        const double* c = X.data() + seeds.back() * d;
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double dist = 0.0;
            for (int j = 0; j < d; ++j) {
                const double diff = X[i * d + j] - c[j];
                dist += diff * diff;
            }
            d2[i] = (k == 1) ? dist : std::min(d2[i], dist);
            total += d2[i];
        }
        seeds.push_back(total > 0.0 ? rng.categorical(d2) : rng.index(n));
    }
    return seeds;
}

}  // namespace

Generator fit_generator(std::span<const double> features, int dim,
                        const TrainConfig& config, Rng& rng) {
    config.validate();
    if (dim < 1) throw std::invalid_argument("fit_generator: dim must be >= 1");
    if (features.size() % dim != 0)
        throw std::invalid_argument("fit_generator: feature buffer not a multiple of dim");
    const std::size_t n = features.size() / dim;
    const int K = config.components;
    if (n < static_cast<std::size_t>(K))
        throw std::invalid_argument("fit_generator: need at least K samples");
    for (double v : features)
        if (!std::isfinite(v)) throw std::invalid_argument("fit_generator: non-finite feature");

    // Global per-dimension variance for the initial covariances.
    std::vector<double> gmean(dim, 0.0), gvar(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (int j = 0; j < dim; ++j) gmean[j] += features[i * dim + j];
    for (int j = 0; j < dim; ++j) gmean[j] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (int j = 0; j < dim; ++j) {
            const double diff = features[i * dim + j] - gmean[j];
            gvar[j] += diff * diff;
        }
    for (int j = 0; j < dim; ++j)
        gvar[j] = std::max(gvar[j] / static_cast<double>(n), config.variance_floor);

    std::vector<double> weights(K, 1.0 / K);
    std::vector<double> means(static_cast<std::size_t>(K) * dim);
    std::vector<double> vars(static_cast<std::size_t>(K) * dim);
    auto seeds = kmeanspp_seeds(features, n, dim, K, rng);
    for (int k = 0; k < K; ++k)
        for (int j = 0; j < dim; ++j) {
            means[static_cast<std::size_t>(k) * dim + j] = features[seeds[k] * dim + j];
            vars[static_cast<std::size_t>(k) * dim + j] = gvar[j];
        }

    std::vector<double> resp(static_cast<std::size_t>(n) * K);
    std::vector<double> logw(K);
    Generator::Meta meta;
    double prev_ll = -std::numeric_limits<double>::infinity();

    for (int iter = 0; iter < config.em_max_iters; ++iter) {
        // E step
        for (int k = 0; k < K; ++k)
            logw[k] = weights[k] > 0.0 ? std::log(weights[k])
                                       : -std::numeric_limits<double>::infinity();
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double* r = resp.data() + i * K;
            double maxv = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < K; ++k) {
                r[k] = logw[k] + component_logpdf(features.data() + i * dim,
                                                  means.data() + static_cast<std::size_t>(k) * dim,
                                                  vars.data() + static_cast<std::size_t>(k) * dim, dim);
                maxv = std::max(maxv, r[k]);
            }
            double sum = 0.0;
            for (int k = 0; k < K; ++k) {
                r[k] = std::exp(r[k] - maxv);
                sum += r[k];
            }
            for (int k = 0; k < K; ++k) r[k] /= sum;
            ll += maxv + std::log(sum);
        }
        if (!std::isfinite(ll))
            throw std::runtime_error("fit_generator: non-finite log-likelihood during EM");
        meta.ll_curve.push_back(ll);
        meta.em_iters = iter + 1;
        meta.log_likelihood = ll;
        const bool converged = iter > 0 && ll - prev_ll < config.em_tol * std::max(1.0, std::abs(ll));
        prev_ll = ll;

        // M step
        for (int k = 0; k < K; ++k) {
            double mass = 0.0;
            for (std::size_t i = 0; i < n; ++i) mass += resp[i * K + k];
            weights[k] = mass / static_cast<double>(n);
            double* mu = means.data() + static_cast<std::size_t>(k) * dim;
            double* var = vars.data() + static_cast<std::size_t>(k) * dim;
            if (mass < 1e-12) {
                // Dead component: keep its mean, pin variance at the floor.
                for (int j = 0; j < dim; ++j) var[j] = config.variance_floor;
                continue;
            }
            for (int j = 0; j < dim; ++j) mu[j] = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double r = resp[i * K + k];
                for (int j = 0; j < dim; ++j) mu[j] += r * features[i * dim + j];
            }
            for (int j = 0; j < dim; ++j) mu[j] /= mass;
            for (int j = 0; j < dim; ++j) var[j] = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double r = resp[i * K + k];
                for (int j = 0; j < dim; ++j) {
                    const double diff = features[i * dim + j] - mu[j];
                    var[j] += r * diff * diff;
                }
            }
            for (int j = 0; j < dim; ++j)
                var[j] = std::max(var[j] / mass, config.variance_floor);
        }
        // Guard against drift in the weight simplex.
        double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
        for (double& w : weights) w /= wsum;

        if (converged) break;
    }

    Generator model(std::move(weights), std::move(means), std::move(vars), dim);
    model.meta() = std::move(meta);
    return model;
}

std::vector<double> sample_generator(const Generator& model, long n, Rng& rng) {
    if (n < 1) throw std::invalid_argument("sample_generator: n must be >= 1");
    const int d = model.dim();
    std::vector<double> out(static_cast<std::size_t>(n) * d);
    for (long i = 0; i < n; ++i) {
        const int k = static_cast<int>(rng.categorical(model.weights()));
        auto mu = model.mean(k);
        auto var = model.variance(k);
        for (int j = 0; j < d; ++j)
            out[static_cast<std::size_t>(i) * d + j] = rng.normal(mu[j], std::sqrt(var[j]));
    }
    return out;
}

std::vector<int> Oracles::annotate_groups(std::span<const double> features) const {
    if (a_s.empty()) throw std::invalid_argument("Oracles::annotate_groups: no annotators");
    const int d = a_s.front().dim();
    const std::size_t n = features.size() / d;
    const std::size_t m = a_s.size();
    std::vector<int> groups(n * m);
    for (std::size_t k = 0; k < m; ++k) {
        auto labels = classify_labels(a_s[k], features);
        for (std::size_t i = 0; i < n; ++i) groups[i * m + k] = labels[i];
    }
    return groups;
}

Oracles build_oracles(const LabeledDataset& data, const OracleConfig& config, Rng& rng) {
    if (data.empty()) throw std::invalid_argument("build_oracles: empty dataset");
    const auto& schema = data.schema();
    Oracles oracles;
    oracles.g0 = fit_generator(data.feature_data(), schema.dim, config.generator, rng);
    oracles.a_l = train_classifier(data, config.label, rng);
    const std::size_t m = schema.group_cards.size();
    std::vector<int> attr(data.size());
    for (std::size_t k = 0; k < m; ++k) {
        for (std::size_t i = 0; i < data.size(); ++i) attr[i] = data.group_data()[i * m + k];
        oracles.a_s.push_back(train_classifier(data.feature_data(), attr, schema.dim,
                                               schema.group_cards[k], config.group, rng));
    }
    return oracles;
}

std::string classifier_to_json(const Classifier& model) {
    json j = {{"type", "classifier"},
              {"n_labels", model.n_labels()},
              {"dim", model.dim()},
              {"weights", model.weights()},
              {"meta",
               {{"epochs", model.meta().epochs},
                {"learning_rate", model.meta().learning_rate},
                {"final_loss", model.meta().final_loss}}}};
    return j.dump();
}

Classifier classifier_from_json(const std::string& text) {
    json j = json::parse(text);
    if (j.value("type", "") != "classifier")
        throw std::runtime_error("classifier_from_json: wrong type tag");
    auto model = Classifier::from_weights(j.at("n_labels").get<int>(), j.at("dim").get<int>(),
                                          j.at("weights").get<std::vector<double>>());
    if (j.contains("meta")) {
        model.meta().epochs = j["meta"].value("epochs", 0);
        model.meta().learning_rate = j["meta"].value("learning_rate", 0.0);
        model.meta().final_loss = j["meta"].value("final_loss", 0.0);
    }
    return model;
}

std::string generator_to_json(const Generator& model) {
    json j = {{"type", "generator"},
              {"dim", model.dim()},
              {"weights", std::vector<double>(model.weights().begin(), model.weights().end())},
              {"means", model.mean_data()},
              {"variances", model.variance_data()},
              {"meta",
               {{"em_iters", model.meta().em_iters},
                {"log_likelihood", model.meta().log_likelihood}}}};
    return j.dump();
}

Generator generator_from_json(const std::string& text) {
    json j = json::parse(text);
    if (j.value("type", "") != "generator")
        throw std::runtime_error("generator_from_json: wrong type tag");
    Generator model(j.at("weights").get<std::vector<double>>(),
                    j.at("means").get<std::vector<double>>(),
                    j.at("variances").get<std::vector<double>>(), j.at("dim").get<int>());
    if (j.contains("meta")) {
        model.meta().em_iters = j["meta"].value("em_iters", 0);
        model.meta().log_likelihood = j["meta"].value("log_likelihood", 0.0);
    }
    return model;
}

}  // namespace mids
