#include "lexstats.hpp"

#include <cstdio>

#include "error.hpp"

namespace cb {

WordSet load_lexicon(const std::filesystem::path& path) {
    WordSet words = read_word_list(path);
    if (words.empty()) throw DataError("lexicon file contains no words: " + path.string());
    return words;
}

StatsTable conditional_stats(const LabeledCorpus& corpus, const WordSet& lexicon) {
    const int none = corpus.label_index("none");
    std::size_t n = 0, b = 0, s = 0, a = 0, bs = 0, ba = 0, sa = 0, bas = 0;
    bool any_anonymity = false;
    for (const auto& post : corpus.posts()) {
        ++n;
        const bool bully = post.label != none;
        bool swear = false;
        for (const auto& t : post.tokens)
            if (lexicon.contains(t)) {
                swear = true;
                break;
            }
        const bool anon = post.anonymous.value_or(false);
        any_anonymity = any_anonymity || post.anonymous.has_value();
        b += bully;
        s += swear;
        a += anon;
        bs += bully && swear;
        ba += bully && anon;
        sa += swear && anon;
        bas += bully && anon && swear;
    }
    auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
        if (den == 0) return std::nullopt;
        return static_cast<double>(num) / static_cast<double>(den);
    };
    StatsTable t;
    t.p_b = ratio(b, n);
    t.p_s = ratio(s, n);
    t.p_b_given_s = ratio(bs, s);
    t.p_s_given_b = ratio(bs, b);
    if (any_anonymity) {
        t.p_a = ratio(a, n);
        t.p_b_given_a = ratio(ba, a);
        t.p_a_given_b = ratio(ba, b);
        t.p_s_given_a = ratio(sa, a);
        t.p_b_given_a_and_s = ratio(bas, sa);
    }
    return t;
}

std::string format_stats_row(std::string_view dataset, const StatsTable& stats, int decimals) {
    std::string row(dataset);
    char buf[32];
    for (const auto& v : stats.columns()) {
        row += '\t';
        if (v) {
            std::snprintf(buf, sizeof buf, "%.*f", decimals, *v);
            row += buf;
        } else {
            row += '-';
        }
    }
    return row;
}

}  // namespace cb
