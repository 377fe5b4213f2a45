#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "text.hpp"

namespace cb {

enum class Platform { Formspring, Twitter, Wikipedia };

std::string_view to_string(Platform p);
Platform parse_platform(std::string_view name);

/// Class names for a platform in canonical order; the negative class `none` is last.
std::vector<std::string> platform_labels(Platform p);

struct Post {
    std::string id;
    Platform platform = Platform::Formspring;
    std::vector<std::string> tokens;
    int label = 0;
    std::optional<bool> anonymous;  // absent only for Twitter
};

/// Immutable set of preprocessed posts with derived length/vocabulary statistics.
class LabeledCorpus {
public:
    LabeledCorpus() = default;
    LabeledCorpus(Platform platform, std::vector<std::string> label_space, std::vector<Post> posts,
                  std::size_t vocabulary_size_with_stopwords = 0, std::size_t dropped_empty = 0);

    Platform platform() const { return platform_; }
    const std::vector<Post>& posts() const { return posts_; }
    const std::vector<std::string>& label_space() const { return label_space_; }
    std::size_t size() const { return posts_.size(); }
    bool empty() const { return posts_.empty(); }

    std::size_t length_at_95() const { return length_at_95_; }
    std::size_t max_length() const { return max_length_; }
    std::size_t vocabulary_size() const { return vocabulary_size_; }
    /// Distinct words counted before stopword removal (0 when unknown).
    std::size_t vocabulary_size_with_stopwords() const { return vocabulary_size_with_stopwords_; }
    std::size_t dropped_empty() const { return dropped_empty_; }

    int label_index(std::string_view name) const;
    std::vector<int> labels() const;

private:
    Platform platform_ = Platform::Formspring;
    std::vector<std::string> label_space_;
    std::vector<Post> posts_;
    std::size_t length_at_95_ = 0;
    std::size_t max_length_ = 0;
    std::size_t vocabulary_size_ = 0;
    std::size_t vocabulary_size_with_stopwords_ = 0;
    std::size_t dropped_empty_ = 0;
};

/// Read a canonical corpus file (id, platform, label, anonymous, raw_text; tab separated).
LabeledCorpus load_dataset(Platform platform, const std::filesystem::path& path,
                           const WordSet& stopwords = default_stopwords());
LabeledCorpus parse_dataset(Platform platform, std::string_view content, const WordSet& stopwords);

/// Platform named by the first data row of a canonical file.
Platform sniff_platform(const std::filesystem::path& path);

/// Nearest-rank percentile: the ceil(p/100 * N)-th smallest value (1-indexed).
std::size_t nearest_rank_percentile(std::vector<std::size_t> values, double p);
std::size_t compute_length_percentile(const LabeledCorpus& corpus, double p);

LabeledCorpus truncate(const LabeledCorpus& corpus, std::size_t limit);

/// Word <-> index map. Index 0 is PAD and index 1 is OOV.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kOov = 1;
    static constexpr std::string_view kPadWord = "<pad>";
    static constexpr std::string_view kOovWord = "<oov>";

    Vocabulary();
    /// `words` excludes the sentinels; they are prepended.
    explicit Vocabulary(const std::vector<std::string>& words);

    std::size_t size() const { return index_to_word_.size(); }
    int index_of(std::string_view word) const;  // OOV when unknown
    bool contains(std::string_view word) const;
    const std::string& word(std::size_t index) const { return index_to_word_.at(index); }
    const std::vector<std::string>& words() const { return index_to_word_; }

    bool operator==(const Vocabulary& other) const { return index_to_word_ == other.index_to_word_; }

private:
    std::vector<std::string> index_to_word_;
    std::unordered_map<std::string, int> word_to_index_;
};

/// Words with frequency >= min_count, ordered by descending frequency then alphabetically.
Vocabulary build_vocabulary(const LabeledCorpus& corpus, std::size_t min_count = 1);
Vocabulary build_vocabulary(std::span<const Post> posts, std::size_t min_count = 1);

struct FoldSplit {
    int k = 0;
    std::uint64_t seed = 0;
    std::vector<int> fold_of;  // aligned with corpus posts

    std::vector<std::size_t> test_indices(int fold) const;
    std::vector<std::size_t> train_indices(int fold) const;
};

/// Seeded per-class shuffle followed by round-robin assignment.
FoldSplit stratified_folds(std::span<const int> labels, std::span<const std::string> label_space, int k,
                           std::uint64_t seed);
FoldSplit stratified_folds(const LabeledCorpus& corpus, int k, std::uint64_t seed);

/// Posts whose label is in `target_classes` appear `rate` times in total; the
/// result is shuffled with `seed`.
std::vector<Post> oversample(std::span<const Post> training_posts, const std::set<int>& target_classes, int rate,
                             std::uint64_t seed);

/// Non-`none` classes of a label space.
std::set<int> bullying_classes(const std::vector<std::string>& label_space);

// -- Ingestion of raw platform exports into the canonical format --

struct CanonicalRecord {
    std::string id;
    Platform platform = Platform::Formspring;
    std::string label;
    std::optional<bool> anonymous;
    std::string text;
};

/// Formspring export with columns ques, ans, ans1..ans3 (annotator Yes/No
/// votes) and asker (empty means anonymous). Bully iff >= 2 Yes votes.
std::vector<CanonicalRecord> ingest_formspring(const std::filesystem::path& path);
/// Twitter CSV with a text column (text/tweet) and a label column (label/annotation/class).
std::vector<CanonicalRecord> ingest_twitter(const std::filesystem::path& path);
/// Wikipedia comments TSV (rev_id, comment, logged_in, optional attack fraction).
/// When `annotations` is given, the attack fraction is the mean of its per-worker
/// `attack` column for each rev_id. Attack iff fraction > 0.5.
std::vector<CanonicalRecord> ingest_wikipedia(const std::filesystem::path& path,
                                              const std::optional<std::filesystem::path>& annotations);

void write_canonical(const std::vector<CanonicalRecord>& records, const std::filesystem::path& out);
std::string format_canonical(const std::vector<CanonicalRecord>& records);

}  // namespace cb
