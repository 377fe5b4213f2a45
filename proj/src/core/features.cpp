#include "features.hpp"

#include <algorithm>

#include "error.hpp"

namespace cb {

std::map<std::string, std::size_t> char_ngrams(std::string_view text, int n_min, int n_max) {
    if (n_min < 1 || n_min > n_max) throw UsageError("n-gram range requires 1 <= n_min <= n_max");
    std::map<std::string, std::size_t> out;
    for (int n = n_min; n <= n_max; ++n) {
        const auto len = static_cast<std::size_t>(n);
        if (text.size() < len) break;
        for (std::size_t i = 0; i + len <= text.size(); ++i) ++out[std::string(text.substr(i, len))];
    }
    return out;
}

FeatureIndex::FeatureIndex(FeatureKind kind, int n_min, int n_max) : kind_(kind), n_min_(n_min), n_max_(n_max) {
    if (kind == FeatureKind::CharNgram && (n_min < 1 || n_min > n_max))
        throw UsageError("n-gram range requires 1 <= n_min <= n_max");
}

FeatureIndex FeatureIndex::restore(FeatureKind kind, int n_min, int n_max, std::vector<std::string> features) {
    FeatureIndex idx(kind, n_min, n_max);
    for (auto& f : features) {
        if (!idx.index_.emplace(f, static_cast<std::uint32_t>(idx.names_.size())).second)
            throw DataError("duplicate feature '" + f + "' in stored index");
        idx.names_.push_back(std::move(f));
    }
    idx.frozen_ = true;
    return idx;
}

std::map<std::string, std::size_t> FeatureIndex::extract(const Post& post) const {
    if (kind_ == FeatureKind::CharNgram) return char_ngrams(join(post.tokens, " "), n_min_, n_max_);
    std::map<std::string, std::size_t> out;
    for (const auto& t : post.tokens) ++out[t];
    return out;
}

void FeatureIndex::fit(std::span<const Post> posts) {
    if (frozen_) throw UsageError("feature index is frozen");
    for (const auto& post : posts) {
        for (auto& [feature, count] : extract(post)) {
            if (index_.emplace(feature, static_cast<std::uint32_t>(names_.size())).second) names_.push_back(feature);
        }
    }
}

std::int64_t FeatureIndex::find(const std::string& feature) const {
    auto it = index_.find(feature);
    return it == index_.end() ? -1 : static_cast<std::int64_t>(it->second);
}

std::vector<SparseVec> vectorize(std::span<const Post> posts, const FeatureIndex& index) {
    std::vector<SparseVec> out;
    out.reserve(posts.size());
    for (const auto& post : posts) {
        SparseVec v;
        for (const auto& [feature, count] : index.extract(post)) {
            const auto idx = index.find(feature);
            if (idx >= 0) v.entries.emplace_back(static_cast<std::uint32_t>(idx), static_cast<double>(count));
        }
        std::sort(v.entries.begin(), v.entries.end());
        out.push_back(std::move(v));
    }
    return out;
}

}  // namespace cb
