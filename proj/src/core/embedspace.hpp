#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "corpus.hpp"

namespace cb {

/// V x d row-major word vectors aligned with a vocabulary.
struct EmbeddingMatrix {
    Vocabulary vocabulary;
    std::size_t dim = 0;
    std::vector<double> rows;

    std::size_t size() const { return vocabulary.size(); }
    std::span<const double> row(std::size_t i) const { return {rows.data() + i * dim, dim}; }
    std::span<double> row(std::size_t i) { return {rows.data() + i * dim, dim}; }
};

/// Uniform entries in [-0.05, 0.05]; the PAD row is zero.
EmbeddingMatrix init_random(const Vocabulary& vocab, std::size_t dim, std::uint64_t seed);

struct PretrainedLoad {
    EmbeddingMatrix matrix;
    double coverage = 0.0;  // fraction of non-sentinel vocabulary words found in the file
};

/// Text vectors ("word v1 ... vd" per line, GloVe/SSWE layout). Words missing
/// from the file keep seeded random rows.
PretrainedLoad load_pretrained(const std::filesystem::path& path, const Vocabulary& vocab, std::size_t dim,
                               std::uint64_t seed);

struct Neighbor {
    std::string word;
    std::size_t index = 0;
    double similarity = 0.0;
};

/// Top-k rows by cosine similarity to `query`, excluding the query itself,
/// PAD and OOV. Ties go to the lower index.
std::vector<Neighbor> nearest_neighbors(const EmbeddingMatrix& E, std::string_view query, std::size_t k);

struct TsneOptions {
    double perplexity = 30.0;
    int iterations = 1000;
    double learning_rate = 200.0;
    double exaggeration = 12.0;
    int exaggeration_iterations = 250;
    double initial_momentum = 0.5;
    double final_momentum = 0.8;
};

struct Projection2D {
    std::vector<std::string> words;
    std::vector<std::array<double, 2>> coords;
    std::vector<double> kl_trace;  // KL(P || Q) with the unexaggerated P, one entry per iteration
};

/// Exact O(N^2) t-SNE of the given points (N x d, row-major).
Projection2D tsne_project(std::span<const double> points, std::size_t dim, std::vector<std::string> words,
                          const TsneOptions& options, std::uint64_t seed);

/// Projection of the `top_n` most frequent words (vocabulary order after the sentinels).
Projection2D tsne_top_words(const EmbeddingMatrix& E, std::size_t top_n, const TsneOptions& options,
                            std::uint64_t seed);

/// TSV with columns word, x, y.
std::string format_projection(const Projection2D& projection);

}  // namespace cb
