#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "corpus.hpp"

namespace cb {

/// Sparse count vector; entries sorted by feature index, no zero counts.
struct SparseVec {
    std::vector<std::pair<std::uint32_t, double>> entries;

    double total() const {
        double s = 0;
        for (const auto& e : entries) s += e.second;
        return s;
    }
};

enum class FeatureKind { CharNgram, WordUnigram };

/// All contiguous substrings of length n_min..n_max (spaces included), with counts.
std::map<std::string, std::size_t> char_ngrams(std::string_view text, int n_min, int n_max);

/// Feature string -> dense index. Built from training posts and then frozen.
class FeatureIndex {
public:
    FeatureIndex() = default;
    FeatureIndex(FeatureKind kind, int n_min = 2, int n_max = 4);

    /// Rebuild a frozen index from its ordered feature list.
    static FeatureIndex restore(FeatureKind kind, int n_min, int n_max, std::vector<std::string> features);

    FeatureKind kind() const { return kind_; }
    int n_min() const { return n_min_; }
    int n_max() const { return n_max_; }
    std::size_t size() const { return index_.size(); }
    bool frozen() const { return frozen_; }

    /// Adds every feature of the posts. Throws once frozen.
    void fit(std::span<const Post> posts);
    void freeze() { frozen_ = true; }

    /// Index or -1 for unseen features.
    std::int64_t find(const std::string& feature) const;

    /// Raw (feature, count) pairs for one post, before index lookup.
    std::map<std::string, std::size_t> extract(const Post& post) const;

    const std::vector<std::string>& features() const { return names_; }

private:
    FeatureKind kind_ = FeatureKind::WordUnigram;
    int n_min_ = 2;
    int n_max_ = 4;
    bool frozen_ = false;
    std::unordered_map<std::string, std::uint32_t> index_;
    std::vector<std::string> names_;
};

/// Counts of known features per post; unseen features are dropped.
std::vector<SparseVec> vectorize(std::span<const Post> posts, const FeatureIndex& index);

}  // namespace cb
