#include "embedspace.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "error.hpp"
#include "rng.hpp"

namespace cb {

EmbeddingMatrix init_random(const Vocabulary& vocab, std::size_t dim, std::uint64_t seed) {
    if (dim < 1) throw UsageError("embedding dimension must be >= 1");
    EmbeddingMatrix E{vocab, dim, std::vector<double>(vocab.size() * dim, 0.0)};
    Rng rng(derive_seed(seed, "embedding-random"));
    for (std::size_t i = 0; i < vocab.size(); ++i) {
        if (i == static_cast<std::size_t>(Vocabulary::kPad)) continue;
        for (auto& v : E.row(i)) v = rng.uniform(-0.05, 0.05);
    }
    return E;
}

namespace {

bool parse_double(std::string_view s, double& out) {
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end;
}

std::vector<std::string_view> fields_of(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

}  // namespace

PretrainedLoad load_pretrained(const std::filesystem::path& path, const Vocabulary& vocab, std::size_t dim,
                               std::uint64_t seed) {
    PretrainedLoad out{init_random(vocab, dim, seed), 0.0};
    std::ifstream in(path);
    if (!in) throw DataError("cannot open pretrained vectors: " + path.string());
    std::vector<bool> found(vocab.size(), false);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto f = fields_of(line);
        if (f.empty()) continue;
        if (line_no == 1 && f.size() == 2 && dim != 1) {
            // word2vec-style "count dim" header
            double a, b;
            if (parse_double(f[0], a) && parse_double(f[1], b)) continue;
        }
        if (f.size() != dim + 1)
            throw DataError(path.string() + ": line " + std::to_string(line_no) + " has a vector of length " +
                            std::to_string(f.size() - 1) + ", expected " + std::to_string(dim));
        std::vector<double> values(dim);
        for (std::size_t k = 0; k < dim; ++k)
            if (!parse_double(f[k + 1], values[k]) || !std::isfinite(values[k]))
                throw DataError(path.string() + ": line " + std::to_string(line_no) + ": bad number '" +
                                std::string(f[k + 1]) + "'");
        const std::string word(f[0]);
        if (!vocab.contains(word)) continue;
        const auto idx = static_cast<std::size_t>(vocab.index_of(word));
        if (idx == static_cast<std::size_t>(Vocabulary::kPad) || idx == static_cast<std::size_t>(Vocabulary::kOov))
            continue;
        if (found[idx]) continue;  // first occurrence wins
        found[idx] = true;
        std::copy(values.begin(), values.end(), out.matrix.row(idx).begin());
    }
    const std::size_t words = vocab.size() - 2;
    const auto hits = static_cast<std::size_t>(std::count(found.begin(), found.end(), true));
    out.coverage = words == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(words);
    return out;
}

std::vector<Neighbor> nearest_neighbors(const EmbeddingMatrix& E, std::string_view query, std::size_t k) {
    if (!E.vocabulary.contains(query) || query == Vocabulary::kPadWord || query == Vocabulary::kOovWord)
        throw UsageError("unknown query word '" + std::string(query) + "'");
    const auto q = static_cast<std::size_t>(E.vocabulary.index_of(query));
    auto norm = [&](std::size_t i) {
        double s = 0;
        for (double v : E.row(i)) s += v * v;
        return std::sqrt(s);
    };
    const double qn = norm(q);
    std::vector<Neighbor> all;
    all.reserve(E.size());
    for (std::size_t i = 2; i < E.size(); ++i) {
        if (i == q) continue;
        const double n = norm(i);
        double dot = 0;
        const auto a = E.row(q), b = E.row(i);
        for (std::size_t j = 0; j < E.dim; ++j) dot += a[j] * b[j];
        const double sim = (qn > 0 && n > 0) ? dot / (qn * n) : 0.0;
        all.push_back({E.vocabulary.word(i), i, sim});
    }
    const auto take = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(),
                      [](const Neighbor& a, const Neighbor& b) {
                          return a.similarity != b.similarity ? a.similarity > b.similarity : a.index < b.index;
                      });
    all.resize(take);
    return all;
}

namespace {

// Conditional probabilities P(j|i) with a per-point Gaussian bandwidth found by
// binary search so that the entropy matches log(perplexity).
std::vector<double> conditional_affinities(const std::vector<double>& d2, std::size_t n, double perplexity) {
    std::vector<double> P(n * n, 0.0);
    const double target = std::log(perplexity);
    for (std::size_t i = 0; i < n; ++i) {
        double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
        double min_d = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) min_d = std::min(min_d, d2[i * n + j]);
        std::vector<double> row(n, 0.0);
        for (int it = 0; it < 200; ++it) {
            double sum = 0, dsum = 0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) {
                    row[j] = 0;
                    continue;
                }
                // Shift by the nearest distance for numerical range; cancels on normalization.
                row[j] = std::exp(-beta * (d2[i * n + j] - min_d));
                sum += row[j];
                dsum += row[j] * (d2[i * n + j] - min_d);
            }
            const double H = std::log(sum) + beta * dsum / sum;
            const double diff = H - target;
            for (auto& v : row) v /= sum;
            if (std::abs(diff) < 1e-5) break;
            if (diff > 0) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        std::copy(row.begin(), row.end(), P.begin() + static_cast<std::ptrdiff_t>(i * n));
    }
    return P;
}

}  // namespace

Projection2D tsne_project(std::span<const double> points, std::size_t dim, std::vector<std::string> words,
                          const TsneOptions& opt, std::uint64_t seed) {
    if (dim == 0 || points.size() % dim != 0) throw UsageError("tsne: point array is not N x dim");
    const std::size_t n = points.size() / dim;
    if (words.size() != n) throw UsageError("tsne: one word per point required");
    if (!(opt.perplexity > 0) || static_cast<double>(n) <= 3.0 * opt.perplexity)
        throw UsageError("tsne: perplexity " + std::to_string(opt.perplexity) + " is too large for " +
                         std::to_string(n) + " points (need N > 3 * perplexity)");

    std::vector<double> d2(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < dim; ++k) {
                const double diff = points[i * dim + k] - points[j * dim + k];
                s += diff * diff;
            }
            d2[i * n + j] = d2[j * n + i] = s;
        }
    const auto cond = conditional_affinities(d2, n, opt.perplexity);
    std::vector<double> P(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            P[i * n + j] = std::max((cond[i * n + j] + cond[j * n + i]) / (2.0 * static_cast<double>(n)), 1e-12);

    Rng rng(derive_seed(seed, "tsne"));
    std::vector<double> Y(n * 2), update(n * 2, 0.0), gains(n * 2, 1.0), grad(n * 2);
    for (auto& v : Y) v = 1e-4 * rng.normal();

    Projection2D out;
    out.words = std::move(words);
    out.kl_trace.reserve(static_cast<std::size_t>(opt.iterations));
    std::vector<double> num(n * n);
    for (int it = 0; it < opt.iterations; ++it) {
        const double exag = it < opt.exaggeration_iterations ? opt.exaggeration : 1.0;
        const double momentum = it < opt.exaggeration_iterations ? opt.initial_momentum : opt.final_momentum;
        double z = 0;
        for (std::size_t i = 0; i < n; ++i) {
            num[i * n + i] = 0;
            for (std::size_t j = i + 1; j < n; ++j) {
                const double dx = Y[2 * i] - Y[2 * j], dy = Y[2 * i + 1] - Y[2 * j + 1];
                const double q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = num[j * n + i] = q;
                z += 2.0 * q;
            }
        }
        double kl = 0;
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double q = std::max(num[i * n + j] / z, 1e-12);
                const double p = P[i * n + j];
                kl += p * std::log(p / q);
                const double mult = 4.0 * (exag * p - q) * num[i * n + j];
                grad[2 * i] += mult * (Y[2 * i] - Y[2 * j]);
                grad[2 * i + 1] += mult * (Y[2 * i + 1] - Y[2 * j + 1]);
            }
        }
        out.kl_trace.push_back(kl);
        for (std::size_t k = 0; k < n * 2; ++k) {
            const bool same_sign = (grad[k] > 0) == (update[k] > 0);
            gains[k] = same_sign ? std::max(gains[k] * 0.8, 0.01) : gains[k] + 0.2;
            update[k] = momentum * update[k] - opt.learning_rate * gains[k] * grad[k];
            Y[k] += update[k];
        }
        double mx = 0, my = 0;
        for (std::size_t i = 0; i < n; ++i) {
            mx += Y[2 * i];
            my += Y[2 * i + 1];
        }
        mx /= static_cast<double>(n);
        my /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            Y[2 * i] -= mx;
            Y[2 * i + 1] -= my;
        }
    }
    out.coords.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.coords[i] = {Y[2 * i], Y[2 * i + 1]};
    return out;
}

Projection2D tsne_top_words(const EmbeddingMatrix& E, std::size_t top_n, const TsneOptions& options,
                            std::uint64_t seed) {
    const std::size_t available = E.size() > 2 ? E.size() - 2 : 0;
    const std::size_t n = std::min(top_n, available);
    std::vector<double> pts;
    std::vector<std::string> words;
    pts.reserve(n * E.dim);
    for (std::size_t i = 2; i < 2 + n; ++i) {
        const auto r = E.row(i);
        pts.insert(pts.end(), r.begin(), r.end());
        words.push_back(E.vocabulary.word(i));
    }
    return tsne_project(pts, E.dim, std::move(words), options, seed);
}

std::string format_projection(const Projection2D& projection) {
    std::string out = "word\tx\ty\n";
    char buf[64];
    for (std::size_t i = 0; i < projection.words.size(); ++i) {
        std::snprintf(buf, sizeof buf, "\t%.6f\t%.6f\n", projection.coords[i][0], projection.coords[i][1]);
        out += projection.words[i];
        out += buf;
    }
    return out;
}

}  // namespace cb
