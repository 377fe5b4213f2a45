#include "corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_set>

#include "error.hpp"
#include "rng.hpp"

namespace cb {

std::string_view to_string(Platform p) {
    switch (p) {
        case Platform::Formspring: return "formspring";
        case Platform::Twitter: return "twitter";
        case Platform::Wikipedia: return "wikipedia";
    }
    return "?";
}

Platform parse_platform(std::string_view name) {
    const std::string n = to_lower(trim(name));
    if (n == "formspring" || n == "f") return Platform::Formspring;
    if (n == "twitter" || n == "t") return Platform::Twitter;
    if (n == "wikipedia" || n == "wiki" || n == "w") return Platform::Wikipedia;
    throw UsageError("unknown platform '" + std::string(name) + "' (expected formspring, twitter or wikipedia)");
}

std::vector<std::string> platform_labels(Platform p) {
    if (p == Platform::Twitter) return {"racism", "sexism", "none"};
    if (p == Platform::Wikipedia) return {"attack", "none"};
    return {"bully", "none"};
}

LabeledCorpus::LabeledCorpus(Platform platform, std::vector<std::string> label_space, std::vector<Post> posts,
                             std::size_t vocabulary_size_with_stopwords, std::size_t dropped_empty)
    : platform_(platform),
      label_space_(std::move(label_space)),
      posts_(std::move(posts)),
      vocabulary_size_with_stopwords_(vocabulary_size_with_stopwords),
      dropped_empty_(dropped_empty) {
    std::vector<std::size_t> lengths;
    lengths.reserve(posts_.size());
    std::unordered_set<std::string_view> distinct;
    for (const auto& post : posts_) {
        if (post.label < 0 || static_cast<std::size_t>(post.label) >= label_space_.size())
            throw DataError("post '" + post.id + "' has a label outside the label space");
        lengths.push_back(post.tokens.size());
        for (const auto& t : post.tokens) distinct.insert(t);
    }
    vocabulary_size_ = distinct.size();
    if (!lengths.empty()) {
        max_length_ = *std::max_element(lengths.begin(), lengths.end());
        length_at_95_ = nearest_rank_percentile(std::move(lengths), 95.0);
    }
}

int LabeledCorpus::label_index(std::string_view name) const {
    for (std::size_t i = 0; i < label_space_.size(); ++i)
        if (label_space_[i] == name) return static_cast<int>(i);
    return -1;
}

std::vector<int> LabeledCorpus::labels() const {
    std::vector<int> out;
    out.reserve(posts_.size());
    for (const auto& p : posts_) out.push_back(p.label);
    return out;
}

LabeledCorpus load_dataset(Platform platform, const std::filesystem::path& path, const WordSet& stopwords) {
    return parse_dataset(platform, read_file(path), stopwords);
}

LabeledCorpus parse_dataset(Platform platform, std::string_view content, const WordSet& stopwords) {
    const auto label_space = platform_labels(platform);
    std::vector<Post> posts;
    std::unordered_set<std::string> raw_vocab;
    std::size_t dropped = 0;
    std::size_t row = 0;
    for (auto& line : split(content, '\n')) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (row == 1 && line.starts_with("id\tplatform")) continue;
        auto fields = split(line, '\t');
        if (fields.size() != 5)
            throw DataError("malformed row " + std::to_string(row) + ": expected 5 tab-separated fields, got " +
                            std::to_string(fields.size()));
        if (parse_platform(fields[1]) != platform)
            throw DataError("row " + std::to_string(row) + ": platform '" + fields[1] + "' does not match '" +
                            std::string(to_string(platform)) + "'");
        Post post;
        post.id = fields[0];
        post.platform = platform;
        const std::string label = to_lower(trim(fields[2]));
        auto it = std::find(label_space.begin(), label_space.end(), label);
        if (it == label_space.end())
            throw DataError("row " + std::to_string(row) + ": unknown label '" + fields[2] + "' (accepted: " +
                            join(label_space, ", ") + ")");
        post.label = static_cast<int>(it - label_space.begin());
        const std::string anon = trim(fields[3]);
        if (anon == "1") {
            post.anonymous = true;
        } else if (anon == "0") {
            post.anonymous = false;
        } else if (anon != "-") {
            throw DataError("malformed row " + std::to_string(row) + ": anonymous must be 0, 1 or -");
        }
        if (post.anonymous.has_value() == (platform == Platform::Twitter))
            throw DataError("row " + std::to_string(row) + (platform == Platform::Twitter
                                                                ? ": twitter posts carry no anonymity flag"
                                                                : ": anonymity flag is required for this platform"));
        for (auto& w : preprocess(fields[4], {})) raw_vocab.insert(std::move(w));
        post.tokens = preprocess(fields[4], stopwords);
        if (post.tokens.empty()) {
            ++dropped;
            continue;
        }
        posts.push_back(std::move(post));
    }
    return LabeledCorpus(platform, label_space, std::move(posts), raw_vocab.size(), dropped);
}

Platform sniff_platform(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path.string());
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line.starts_with("id\tplatform")) continue;
        auto fields = split(line, '\t');
        if (fields.size() < 2) break;
        return parse_platform(fields[1]);
    }
    throw DataError("cannot determine platform of empty corpus file: " + path.string());
}

std::size_t nearest_rank_percentile(std::vector<std::size_t> values, double p) {
    if (values.empty()) throw UsageError("percentile of an empty corpus is undefined");
    if (!(p > 0.0 && p <= 100.0)) throw UsageError("percentile must lie in (0, 100]");
    std::sort(values.begin(), values.end());
    // Guard against p/100*N landing a hair above an integer in floating point.
    const double exact = p / 100.0 * static_cast<double>(values.size());
    auto rank = static_cast<std::size_t>(std::ceil(exact - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
}

std::size_t compute_length_percentile(const LabeledCorpus& corpus, double p) {
    std::vector<std::size_t> lengths;
    lengths.reserve(corpus.size());
    for (const auto& post : corpus.posts()) lengths.push_back(post.tokens.size());
    return nearest_rank_percentile(std::move(lengths), p);
}

LabeledCorpus truncate(const LabeledCorpus& corpus, std::size_t limit) {
    if (limit < 1) throw UsageError("truncation limit must be >= 1");
    std::vector<Post> posts = corpus.posts();
    for (auto& post : posts)
        if (post.tokens.size() > limit) post.tokens.resize(limit);
    return LabeledCorpus(corpus.platform(), corpus.label_space(), std::move(posts),
                         corpus.vocabulary_size_with_stopwords(), corpus.dropped_empty());
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
    index_to_word_.reserve(words.size() + 2);
    index_to_word_.emplace_back(kPadWord);
    index_to_word_.emplace_back(kOovWord);
    word_to_index_.emplace(kPadWord, kPad);
    word_to_index_.emplace(kOovWord, kOov);
    for (const auto& w : words) {
        if (!word_to_index_.emplace(w, static_cast<int>(index_to_word_.size())).second)
            throw DataError("duplicate vocabulary word '" + w + "'");
        index_to_word_.push_back(w);
    }
}

int Vocabulary::index_of(std::string_view word) const {
    auto it = word_to_index_.find(std::string(word));
    return it == word_to_index_.end() ? kOov : it->second;
}

bool Vocabulary::contains(std::string_view word) const { return word_to_index_.contains(std::string(word)); }

Vocabulary build_vocabulary(const LabeledCorpus& corpus, std::size_t min_count) {
    return build_vocabulary(std::span<const Post>(corpus.posts()), min_count);
}

Vocabulary build_vocabulary(std::span<const Post> posts, std::size_t min_count) {
    std::unordered_map<std::string, std::size_t> freq;
    for (const auto& post : posts)
        for (const auto& t : post.tokens) ++freq[t];
    std::vector<std::pair<std::string, std::size_t>> entries;
    for (auto& [w, c] : freq)
        if (c >= min_count && w != Vocabulary::kPadWord && w != Vocabulary::kOovWord) entries.emplace_back(w, c);
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    std::vector<std::string> words;
    words.reserve(entries.size());
    for (auto& e : entries) words.push_back(std::move(e.first));
    return Vocabulary(words);
}

std::vector<std::size_t> FoldSplit::test_indices(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
        if (fold_of[i] == fold) out.push_back(i);
    return out;
}

std::vector<std::size_t> FoldSplit::train_indices(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
        if (fold_of[i] != fold) out.push_back(i);
    return out;
}

FoldSplit stratified_folds(std::span<const int> labels, std::span<const std::string> label_space, int k,
                           std::uint64_t seed) {
    if (k < 2) throw UsageError("fold count must be >= 2");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    for (const auto& [cls, members] : by_class) {
        if (members.size() < static_cast<std::size_t>(k)) {
            const std::string name = cls >= 0 && static_cast<std::size_t>(cls) < label_space.size()
                                         ? label_space[cls]
                                         : std::to_string(cls);
            throw DataError("class '" + name + "' has " + std::to_string(members.size()) +
                            " posts, fewer than the " + std::to_string(k) + " folds");
        }
    }
    FoldSplit split;
    split.k = k;
    split.seed = seed;
    split.fold_of.assign(labels.size(), -1);
    // Each class continues the round-robin where the previous class stopped so
    // total fold sizes also stay within one of each other per class boundary.
    int next = 0;
    for (auto& [cls, members] : by_class) {
        Rng rng(derive_seed(seed, "stratify", static_cast<std::uint64_t>(cls)));
        rng.shuffle(members);
        for (std::size_t idx : members) {
            split.fold_of[idx] = next;
            next = (next + 1) % k;
        }
    }
    return split;
}

FoldSplit stratified_folds(const LabeledCorpus& corpus, int k, std::uint64_t seed) {
    const auto labels = corpus.labels();
    return stratified_folds(labels, corpus.label_space(), k, seed);
}

std::vector<Post> oversample(std::span<const Post> training_posts, const std::set<int>& target_classes, int rate,
                             std::uint64_t seed) {
    if (rate < 1) throw UsageError("oversampling rate must be >= 1");
    std::vector<Post> out;
    out.reserve(training_posts.size());
    for (const auto& post : training_posts) {
        const int copies = target_classes.contains(post.label) ? rate : 1;
        for (int c = 0; c < copies; ++c) out.push_back(post);
    }
    Rng rng(derive_seed(seed, "oversample"));
    rng.shuffle(out);
    return out;
}

std::set<int> bullying_classes(const std::vector<std::string>& label_space) {
    std::set<int> out;
    for (std::size_t i = 0; i < label_space.size(); ++i)
        if (label_space[i] != "none") out.insert(static_cast<int>(i));
    return out;
}

// ---------------------------------------------------------------------------
// Ingestion

namespace {

std::string clean_field(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (c == '\t' || c == '\n' || c == '\r') {
            out.push_back(' ');
        } else {
            out.push_back(c);
        }
    }
    static const std::pair<std::string_view, std::string_view> kReplacements[] = {
        {"NEWLINE_TOKEN", " "}, {"TAB_TOKEN", " "}, {"<br>", " "},  {"&#039;", "'"},
        {"&quot;", "\""},       {"&lt;", "<"},      {"&gt;", ">"}, {"&amp;", "&"},
    };
    for (const auto& [from, to] : kReplacements) {
        std::size_t pos = 0;
        while ((pos = out.find(from, pos)) != std::string::npos) {
            out.replace(pos, from.size(), to);
            pos += to.size();
        }
    }
    return out;
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(std::initializer_list<std::string_view> names) const {
        for (auto name : names)
            for (std::size_t i = 0; i < header.size(); ++i)
                if (to_lower(trim(header[i])) == name) return static_cast<int>(i);
        return -1;
    }

    int require(std::initializer_list<std::string_view> names, const std::filesystem::path& path) const {
        int c = column(names);
        if (c < 0) throw DataError(path.string() + ": missing required column '" + std::string(*names.begin()) + "'");
        return c;
    }
};

Table read_table(const std::filesystem::path& path) {
    const std::string content = read_file(path);
    const auto first_nl = content.find('\n');
    const std::string_view first_line = std::string_view(content).substr(0, first_nl);
    const bool tsv = first_line.find('\t') != std::string_view::npos;
    auto rows = parse_delimited(content, tsv ? '\t' : ',', !tsv);
    Table t;
    if (rows.empty()) return t;
    t.header = std::move(rows.front());
    rows.erase(rows.begin());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != t.header.size())
            throw DataError(path.string() + ": malformed row " + std::to_string(i + 2) + ": expected " +
                            std::to_string(t.header.size()) + " fields, got " + std::to_string(rows[i].size()));
    }
    t.rows = std::move(rows);
    return t;
}

bool truthy(std::string_view v) {
    const std::string s = to_lower(trim(v));
    return s == "yes" || s == "true" || s == "1" || s == "y";
}

}  // namespace

std::vector<CanonicalRecord> ingest_formspring(const std::filesystem::path& path) {
    const Table t = read_table(path);
    if (t.header.empty()) return {};
    const int ques = t.require({"ques", "question"}, path);
    const int ans = t.require({"ans", "answer"}, path);
    const int asker = t.require({"asker"}, path);
    const int votes[3] = {t.require({"ans1"}, path), t.require({"ans2"}, path), t.require({"ans3"}, path)};
    const int id = t.column({"id", "userid"});
    std::vector<CanonicalRecord> out;
    out.reserve(t.rows.size());
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& r = t.rows[i];
        int yes = 0;
        for (int v : votes) yes += truthy(r[v]) ? 1 : 0;
        CanonicalRecord rec;
        rec.id = "f" + std::to_string(i + 1) + (id >= 0 ? "_" + trim(r[id]) : "");
        rec.platform = Platform::Formspring;
        rec.label = yes >= 2 ? "bully" : "none";
        const std::string a = to_lower(trim(r[asker]));
        rec.anonymous = a.empty() || a == "anonymous" || a == "null" || a == "none";
        // Question tokens first, then answer tokens.
        rec.text = clean_field(r[ques]) + " " + clean_field(r[ans]);
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<CanonicalRecord> ingest_twitter(const std::filesystem::path& path) {
    const Table t = read_table(path);
    if (t.header.empty()) return {};
    const int text = t.require({"text", "tweet"}, path);
    const int label = t.require({"label", "annotation", "class"}, path);
    const int id = t.column({"id", "tweet_id"});
    const auto accepted = platform_labels(Platform::Twitter);
    std::vector<CanonicalRecord> out;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& r = t.rows[i];
        std::string l = to_lower(trim(r[label]));
        if (l == "neither") l = "none";
        if (std::find(accepted.begin(), accepted.end(), l) == accepted.end())
            throw DataError(path.string() + ": row " + std::to_string(i + 2) + ": unknown label '" + r[label] +
                            "' (accepted: racism, sexism, none)");
        CanonicalRecord rec;
        rec.id = id >= 0 ? trim(r[id]) : "t" + std::to_string(i + 1);
        rec.platform = Platform::Twitter;
        rec.label = l;
        rec.text = clean_field(r[text]);
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<CanonicalRecord> ingest_wikipedia(const std::filesystem::path& path,
                                              const std::optional<std::filesystem::path>& annotations) {
    const Table t = read_table(path);
    if (t.header.empty()) return {};
    const int rev = t.require({"rev_id", "id"}, path);
    const int comment = t.require({"comment", "text"}, path);
    const int logged_in = t.require({"logged_in"}, path);

    std::unordered_map<std::string, std::pair<double, int>> votes;
    int attack_col = -1;
    if (annotations) {
        const Table a = read_table(*annotations);
        const int arev = a.require({"rev_id", "id"}, *annotations);
        const int aatt = a.require({"attack"}, *annotations);
        for (std::size_t i = 0; i < a.rows.size(); ++i) {
            const auto& r = a.rows[i];
            auto& v = votes[trim(r[arev])];
            try {
                v.first += std::stod(r[aatt]);
            } catch (const std::exception&) {
                throw DataError(annotations->string() + ": malformed row " + std::to_string(i + 2) +
                                ": attack vote is not a number");
            }
            v.second += 1;
        }
    } else {
        attack_col = t.require({"attack"}, path);
    }

    std::vector<CanonicalRecord> out;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& r = t.rows[i];
        double fraction = 0.0;
        const std::string key = trim(r[rev]);
        if (annotations) {
            auto it = votes.find(key);
            if (it == votes.end()) continue;  // comment without annotations
            fraction = it->second.first / it->second.second;
        } else {
            try {
                fraction = std::stod(r[attack_col]);
            } catch (const std::exception&) {
                throw DataError(path.string() + ": malformed row " + std::to_string(i + 2) +
                                ": attack fraction is not a number");
            }
        }
        CanonicalRecord rec;
        rec.id = key;
        rec.platform = Platform::Wikipedia;
        rec.label = fraction > 0.5 ? "attack" : "none";
        rec.anonymous = !truthy(r[logged_in]);
        rec.text = clean_field(r[comment]);
        out.push_back(std::move(rec));
    }
    return out;
}

std::string format_canonical(const std::vector<CanonicalRecord>& records) {
    std::string out = "id\tplatform\tlabel\tanonymous\ttext\n";
    for (const auto& r : records) {
        out += clean_field(r.id);
        out += '\t';
        out += to_string(r.platform);
        out += '\t';
        out += r.label;
        out += '\t';
        out += r.anonymous ? (*r.anonymous ? "1" : "0") : "-";
        out += '\t';
        out += clean_field(r.text);
        out += '\n';
    }
    return out;
}

void write_canonical(const std::vector<CanonicalRecord>& records, const std::filesystem::path& out) {
    std::ofstream f(out, std::ios::binary);
    if (!f) throw DataError("cannot write file: " + out.string());
    f << format_canonical(records);
}

}  // namespace cb
