#include "baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "binio.hpp"
#include "error.hpp"
#include "rng.hpp"
#include "text.hpp"

namespace cb {

std::string_view to_string(BaselineKind k) {
    switch (k) {
        case BaselineKind::LR: return "LR";
        case BaselineKind::NB: return "NB";
        case BaselineKind::SVM: return "SVM";
        case BaselineKind::RF: return "RF";
    }
    return "?";
}

BaselineKind parse_baseline_kind(std::string_view name) {
    const std::string n = to_lower(trim(name));
    if (n == "lr") return BaselineKind::LR;
    if (n == "nb") return BaselineKind::NB;
    if (n == "svm") return BaselineKind::SVM;
    if (n == "rf") return BaselineKind::RF;
    throw UsageError("unknown baseline kind '" + std::string(name) + "' (expected lr, nb, svm or rf)");
}

BaselineHyper parse_hyper(const std::map<std::string, std::string>& kv) {
    BaselineHyper h;
    for (const auto& [key, value] : kv) {
        try {
            if (key == "l2") h.l2 = std::stod(value);
            else if (key == "epochs") h.epochs = std::stoi(value);
            else if (key == "tolerance") h.tolerance = std::stod(value);
            else if (key == "nb_alpha") h.nb_alpha = std::stod(value);
            else if (key == "trees") h.trees = std::stoi(value);
            else if (key == "max_depth") h.max_depth = std::stoi(value);
            else if (key == "hash_dim") h.hash_dim = std::stoi(value);
            else if (key == "min_samples_split") h.min_samples_split = std::stoi(value);
            else throw UsageError("unknown baseline hyperparameter '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw UsageError("hyperparameter '" + key + "' is not a number: " + value);
        }
    }
    if (h.epochs < 1 || h.trees < 1 || h.max_depth < 1 || h.hash_dim < 1 || h.nb_alpha <= 0 || h.l2 < 0)
        throw UsageError("baseline hyperparameters out of range");
    return h;
}

namespace {

using Matrix = std::vector<std::vector<double>>;

double dot(const std::vector<double>& w, const SparseVec& x) {
    double s = w.back();  // bias
    for (const auto& [i, v] : x.entries) s += w[i] * v;
    return s;
}

void check_dims(std::span<const SparseVec> X, std::size_t dim) {
    for (const auto& x : X)
        for (const auto& e : x.entries)
            if (e.first >= dim)
                throw UsageError("feature index " + std::to_string(e.first) + " exceeds model dimension " +
                                 std::to_string(dim));
}

void softmax_inplace(std::vector<double>& z) {
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0;
    for (auto& v : z) sum += (v = std::exp(v - mx));
    for (auto& v : z) v /= sum;
}

// Loss and gradient of the mean multinomial logistic loss plus (l2/2)||W||^2 (bias excluded).
double logistic_loss_grad(const Matrix& W, std::span<const SparseVec> X, std::span<const int> y, double l2,
                          Matrix* grad) {
    const std::size_t C = W.size();
    const std::size_t D = W[0].size() - 1;
    const double n = static_cast<double>(X.size());
    double loss = 0;
    if (grad) {
        grad->assign(C, std::vector<double>(D + 1, 0.0));
    }
    std::vector<double> z(C);
    for (std::size_t s = 0; s < X.size(); ++s) {
        for (std::size_t c = 0; c < C; ++c) z[c] = dot(W[c], X[s]);
        const double mx = *std::max_element(z.begin(), z.end());
        double sum = 0;
        for (auto v : z) sum += std::exp(v - mx);
        loss += -(z[y[s]] - mx - std::log(sum));
        if (grad) {
            for (std::size_t c = 0; c < C; ++c) {
                const double p = std::exp(z[c] - mx) / sum;
                const double r = (p - (static_cast<int>(c) == y[s] ? 1.0 : 0.0)) / n;
                auto& g = (*grad)[c];
                for (const auto& [i, v] : X[s].entries) g[i] += r * v;
                g[D] += r;
            }
        }
    }
    loss /= n;
    double reg = 0;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < D; ++i) {
            reg += W[c][i] * W[c][i];
            if (grad) (*grad)[c][i] += l2 * W[c][i];
        }
    return loss + 0.5 * l2 * reg;
}

void train_lr(BaselineModel& m, std::span<const SparseVec> X, std::span<const int> y, const BaselineHyper& h) {
    const std::size_t C = m.classes();
    m.weights.assign(C, std::vector<double>(m.dim + 1, 0.0));
    Matrix grad;
    double loss = logistic_loss_grad(m.weights, X, y, h.l2, &grad);
    m.loss_trace = {loss};
    double step = 1.0;
    Matrix trial = m.weights;
    for (int it = 0; it < h.epochs; ++it) {
        double gnorm2 = 0;
        for (const auto& g : grad)
            for (double v : g) gnorm2 += v * v;
        if (gnorm2 == 0) break;
        // Armijo backtracking keeps every accepted step a strict descent step.
        double new_loss = loss;
        bool accepted = false;
        for (int bt = 0; bt < 60; ++bt) {
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i <= m.dim; ++i) trial[c][i] = m.weights[c][i] - step * grad[c][i];
            new_loss = logistic_loss_grad(trial, X, y, h.l2, nullptr);
            if (new_loss <= loss - 0.5 * step * gnorm2) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
        std::swap(m.weights, trial);
        const double prev = loss;
        loss = logistic_loss_grad(m.weights, X, y, h.l2, &grad);
        m.loss_trace.push_back(loss);
        step *= 2.0;
        if (std::abs(prev - loss) <= h.tolerance * std::max(1.0, std::abs(prev))) break;
    }
}

void train_nb(BaselineModel& m, std::span<const SparseVec> X, std::span<const int> y, const BaselineHyper& h) {
    const std::size_t C = m.classes();
    std::vector<double> class_count(C, 0.0);
    Matrix feature_count(C, std::vector<double>(m.dim, 0.0));
    for (std::size_t s = 0; s < X.size(); ++s) {
        class_count[y[s]] += 1;
        for (const auto& [i, v] : X[s].entries) feature_count[y[s]][i] += v;
    }
    m.log_prior.resize(C);
    m.log_likelihood.assign(C, std::vector<double>(m.dim, 0.0));
    const double n = static_cast<double>(X.size());
    for (std::size_t c = 0; c < C; ++c) {
        // Classes absent from training keep a finite (very low) prior.
        m.log_prior[c] = std::log((class_count[c] + 1e-12) / n);
        const double total = std::accumulate(feature_count[c].begin(), feature_count[c].end(), 0.0);
        const double denom = total + h.nb_alpha * static_cast<double>(m.dim);
        for (std::size_t i = 0; i < m.dim; ++i)
            m.log_likelihood[c][i] = std::log((feature_count[c][i] + h.nb_alpha) / denom);
    }
}

// Pegasos-style stochastic subgradient descent, one binary problem per class.
// The weight vector is stored as scale * v so each step touches only the
// sample's non-zeros.
void train_svm(BaselineModel& m, std::span<const SparseVec> X, std::span<const int> y, const BaselineHyper& h,
               std::uint64_t seed) {
    const std::size_t C = m.classes();
    const double lambda = h.l2 > 0 ? h.l2 : 1e-8;
    m.weights.assign(C, std::vector<double>(m.dim + 1, 0.0));
    std::vector<std::size_t> order(X.size());
    for (std::size_t c = 0; c < C; ++c) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(seed, "svm", c));
        std::vector<double> v(m.dim + 1, 0.0);
        double scale = 1.0;
        double t = 0;
        for (int epoch = 0; epoch < h.epochs; ++epoch) {
            rng.shuffle(order);
            for (std::size_t s : order) {
                t += 1;
                const double eta = 1.0 / (lambda * t);
                const double target = y[s] == static_cast<int>(c) ? 1.0 : -1.0;
                double margin = v[m.dim];
                for (const auto& [i, val] : X[s].entries) margin += v[i] * val;
                margin *= scale * target;
                scale *= (1.0 - eta * lambda);
                if (scale < 1e-9) {
                    // The first step shrinks by exactly zero.
                    if (scale == 0.0) {
                        std::fill(v.begin(), v.end(), 0.0);
                        scale = 1.0;
                    } else {
                        for (auto& w : v) w *= scale;
                        scale = 1.0;
                    }
                }
                if (margin < 1.0) {
                    const double step = eta * target / scale;
                    for (const auto& [i, val] : X[s].entries) v[i] += step * val;
                    v[m.dim] += step;
                }
            }
        }
        for (std::size_t i = 0; i <= m.dim; ++i) m.weights[c][i] = v[i] * scale;
    }
}

std::vector<std::pair<std::uint32_t, double>> hash_features(const SparseVec& x, int hash_dim) {
    std::vector<std::pair<std::uint32_t, double>> out;
    out.reserve(x.entries.size());
    for (const auto& [i, v] : x.entries)
        out.emplace_back(static_cast<std::uint32_t>(splitmix64(i) % static_cast<std::uint64_t>(hash_dim)), v);
    std::sort(out.begin(), out.end());
    std::vector<std::pair<std::uint32_t, double>> merged;
    for (const auto& e : out) {
        if (!merged.empty() && merged.back().first == e.first) merged.back().second += e.second;
        else merged.push_back(e);
    }
    return merged;
}

double hashed_value(const std::vector<std::pair<std::uint32_t, double>>& row, std::uint32_t f) {
    auto it = std::lower_bound(row.begin(), row.end(), std::make_pair(f, -std::numeric_limits<double>::infinity()));
    return it != row.end() && it->first == f ? it->second : 0.0;
}

double gini(const std::vector<double>& counts, double total) {
    if (total <= 0) return 0;
    double s = 1.0;
    for (double c : counts) s -= (c / total) * (c / total);
    return s;
}

struct TreeBuilder {
    const std::vector<std::vector<std::pair<std::uint32_t, double>>>& rows;
    std::span<const int> y;
    std::size_t classes;
    const BaselineHyper& hyper;
    Rng rng;
    DecisionTree tree;

    std::int32_t build(std::vector<std::size_t>& samples, int depth) {
        const auto node_id = static_cast<std::int32_t>(tree.nodes.size());
        tree.nodes.emplace_back();
        std::vector<double> counts(classes, 0.0);
        for (auto s : samples) counts[y[s]] += 1;
        const double n = static_cast<double>(samples.size());
        const double parent_gini = gini(counts, n);

        auto make_leaf = [&] {
            auto& node = tree.nodes[node_id];
            node.distribution = counts;
            for (auto& c : node.distribution) c /= n;
            return node_id;
        };
        if (depth >= hyper.max_depth || parent_gini == 0.0 ||
            samples.size() < static_cast<std::size_t>(std::max(2, hyper.min_samples_split)))
            return make_leaf();

        // Candidates come from buckets that are non-zero somewhere in the node;
        // as in common implementations, constant candidates do not count toward mtry.
        const auto mtry = static_cast<std::size_t>(std::max(1.0, std::floor(std::sqrt(hyper.hash_dim))));
        std::vector<std::uint32_t> active;
        for (auto s : samples)
            for (const auto& e : rows[s]) active.push_back(e.first);
        std::sort(active.begin(), active.end());
        active.erase(std::unique(active.begin(), active.end()), active.end());
        rng.shuffle(active);
        double best_gain = 1e-12;
        std::int32_t best_feature = -1;
        double best_threshold = 0;
        std::vector<std::pair<double, int>> vals(samples.size());
        std::size_t tried = 0;
        for (std::size_t k = 0; k < active.size() && tried < mtry; ++k) {
            const auto f = active[k];
            for (std::size_t j = 0; j < samples.size(); ++j)
                vals[j] = {hashed_value(rows[samples[j]], f), y[samples[j]]};
            std::sort(vals.begin(), vals.end());
            if (vals.front().first == vals.back().first) continue;
            ++tried;
            std::vector<double> left(classes, 0.0);
            for (std::size_t j = 0; j + 1 < vals.size(); ++j) {
                left[vals[j].second] += 1;
                if (vals[j].first == vals[j + 1].first) continue;
                const double nl = static_cast<double>(j + 1);
                const double nr = n - nl;
                std::vector<double> right(classes);
                for (std::size_t c = 0; c < classes; ++c) right[c] = counts[c] - left[c];
                const double gain = parent_gini - (nl / n) * gini(left, nl) - (nr / n) * gini(right, nr);
                if (gain > best_gain) {
                    best_gain = gain;
                    best_feature = static_cast<std::int32_t>(f);
                    best_threshold = 0.5 * (vals[j].first + vals[j + 1].first);
                }
            }
        }
        if (best_feature < 0) return make_leaf();

        std::vector<std::size_t> left_s, right_s;
        for (auto s : samples)
            (hashed_value(rows[s], static_cast<std::uint32_t>(best_feature)) <= best_threshold ? left_s : right_s)
                .push_back(s);
        samples.clear();
        samples.shrink_to_fit();
        const auto l = build(left_s, depth + 1);
        const auto r = build(right_s, depth + 1);
        auto& node = tree.nodes[node_id];
        node.feature = best_feature;
        node.threshold = best_threshold;
        node.left = l;
        node.right = r;
        return node_id;
    }
};

void train_rf(BaselineModel& m, std::span<const SparseVec> X, std::span<const int> y, const BaselineHyper& h,
              std::uint64_t seed) {
    m.hash_dim = h.hash_dim;
    std::vector<std::vector<std::pair<std::uint32_t, double>>> rows;
    rows.reserve(X.size());
    for (const auto& x : X) rows.push_back(hash_features(x, h.hash_dim));
    m.trees.clear();
    for (int t = 0; t < h.trees; ++t) {
        Rng rng(derive_seed(seed, "rf-tree", static_cast<std::uint64_t>(t)));
        std::vector<std::size_t> bootstrap(X.size());
        for (auto& b : bootstrap) b = static_cast<std::size_t>(rng.below(X.size()));
        TreeBuilder builder{rows, y, m.classes(), h, Rng(rng.next()), {}};
        builder.build(bootstrap, 0);
        m.trees.push_back(std::move(builder.tree));
    }
}

}  // namespace

double logistic_loss(const std::vector<std::vector<double>>& weights, std::span<const SparseVec> X,
                     std::span<const int> y, double l2) {
    return logistic_loss_grad(weights, X, y, l2, nullptr);
}

std::vector<double> BaselineModel::scores(const SparseVec& x) const {
    const std::size_t C = classes();
    std::vector<double> s(C, 0.0);
    switch (kind) {
        case BaselineKind::LR:
            for (std::size_t c = 0; c < C; ++c) s[c] = dot(weights[c], x);
            softmax_inplace(s);
            break;
        case BaselineKind::SVM:
            for (std::size_t c = 0; c < C; ++c) s[c] = dot(weights[c], x);
            break;
        case BaselineKind::NB:
            for (std::size_t c = 0; c < C; ++c) {
                s[c] = log_prior[c];
                for (const auto& [i, v] : x.entries) s[c] += v * log_likelihood[c][i];
            }
            break;
        case BaselineKind::RF: {
            const auto row = hash_features(x, hash_dim);
            for (const auto& tree : trees) {
                std::int32_t n = 0;
                while (tree.nodes[n].feature >= 0) {
                    const auto& node = tree.nodes[n];
                    n = hashed_value(row, static_cast<std::uint32_t>(node.feature)) <= node.threshold ? node.left
                                                                                                   : node.right;
                }
                for (std::size_t c = 0; c < C; ++c) s[c] += tree.nodes[n].distribution[c];
            }
            for (auto& v : s) v /= static_cast<double>(trees.size());
            break;
        }
    }
    return s;
}

BaselineModel train_baseline(BaselineKind kind, std::span<const SparseVec> X, std::span<const int> y,
                             const std::vector<std::string>& label_space, std::size_t dim,
                             const BaselineHyper& hyper, std::uint64_t seed) {
    if (X.size() != y.size()) throw UsageError("feature and label counts differ");
    if (label_space.size() < 2) throw UsageError("label space needs at least two classes");
    std::set<int> present;
    for (int label : y) {
        if (label < 0 || static_cast<std::size_t>(label) >= label_space.size())
            throw UsageError("label out of range: " + std::to_string(label));
        present.insert(label);
    }
    if (present.size() < 2) throw DataError("training labels contain a single class");
    check_dims(X, dim);

    BaselineModel m;
    m.kind = kind;
    m.label_space = label_space;
    m.dim = dim;
    switch (kind) {
        case BaselineKind::LR: train_lr(m, X, y, hyper); break;
        case BaselineKind::NB: train_nb(m, X, y, hyper); break;
        case BaselineKind::SVM: train_svm(m, X, y, hyper, seed); break;
        case BaselineKind::RF: train_rf(m, X, y, hyper, seed); break;
    }
    return m;
}

std::vector<int> predict_baseline(const BaselineModel& model, std::span<const SparseVec> X) {
    check_dims(X, model.dim);
    std::vector<int> out;
    out.reserve(X.size());
    for (const auto& x : X) {
        const auto s = model.scores(x);
        // max_element returns the first maximum, i.e. label-space order on ties.
        out.push_back(static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin()));
    }
    return out;
}

namespace {
constexpr std::uint32_t kBaselineFormatVersion = 1;
}

void save_baseline(const std::filesystem::path& path, const BaselineModel& m, const FeatureIndex& index) {
    BinaryWriter w(path);
    w.magic("CBBL1");
    w.put<std::uint32_t>(kBaselineFormatVersion);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(index.kind()));
    w.put<std::int32_t>(index.n_min());
    w.put<std::int32_t>(index.n_max());
    w.put_strings(index.features());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(m.kind));
    w.put_strings(m.label_space);
    w.put<std::uint64_t>(m.dim);
    w.put<std::uint64_t>(m.weights.size());
    for (const auto& row : m.weights) w.put_vector(row);
    w.put_vector(m.log_prior);
    w.put<std::uint64_t>(m.log_likelihood.size());
    for (const auto& row : m.log_likelihood) w.put_vector(row);
    w.put<std::int32_t>(m.hash_dim);
    w.put<std::uint64_t>(m.trees.size());
    for (const auto& tree : m.trees) {
        w.put<std::uint64_t>(tree.nodes.size());
        for (const auto& n : tree.nodes) {
            w.put(n.feature);
            w.put(n.threshold);
            w.put(n.left);
            w.put(n.right);
            w.put_vector(n.distribution);
        }
    }
    w.finish();
}

std::pair<BaselineModel, FeatureIndex> load_baseline(const std::filesystem::path& path) {
    BinaryReader r(path);
    r.expect_magic("CBBL1");
    const auto version = r.get<std::uint32_t>();
    if (version != kBaselineFormatVersion)
        throw DataError(path.string() + ": unsupported CBBL1 version " + std::to_string(version));
    const auto fkind = static_cast<FeatureKind>(r.get<std::uint8_t>());
    const auto n_min = r.get<std::int32_t>();
    const auto n_max = r.get<std::int32_t>();
    FeatureIndex index = FeatureIndex::restore(fkind, n_min, n_max, r.get_strings());
    BaselineModel m;
    m.kind = static_cast<BaselineKind>(r.get<std::uint8_t>());
    m.label_space = r.get_strings();
    m.dim = r.get<std::uint64_t>();
    m.weights.resize(r.get<std::uint64_t>());
    for (auto& row : m.weights) row = r.get_vector<double>();
    m.log_prior = r.get_vector<double>();
    m.log_likelihood.resize(r.get<std::uint64_t>());
    for (auto& row : m.log_likelihood) row = r.get_vector<double>();
    m.hash_dim = r.get<std::int32_t>();
    m.trees.resize(r.get<std::uint64_t>());
    for (auto& tree : m.trees) {
        tree.nodes.resize(r.get<std::uint64_t>());
        for (auto& n : tree.nodes) {
            n.feature = r.get<std::int32_t>();
            n.threshold = r.get<double>();
            n.left = r.get<std::int32_t>();
            n.right = r.get<std::int32_t>();
            n.distribution = r.get_vector<double>();
        }
    }
    return {std::move(m), std::move(index)};
}

}  // namespace cb
