#include <doctest.h>

#include "features.hpp"
#include "helpers.hpp"

using namespace cb;
using testutil::post;

TEST_CASE("character n-grams") {
    CHECK(char_ngrams("ab", 2, 2) == std::map<std::string, std::size_t>{{"ab", 1}});
    CHECK(char_ngrams("aaa", 2, 3) == std::map<std::string, std::size_t>{{"aa", 2}, {"aaa", 1}});
    CHECK(char_ngrams("", 1, 4).empty());
    CHECK(char_ngrams("a b", 2, 2) == std::map<std::string, std::size_t>{{"a ", 1}, {" b", 1}});
    // total count = sum over n of max(0, len - n + 1)
    Rng rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        std::string s;
        const std::size_t len = rng.below(12);
        for (std::size_t i = 0; i < len; ++i) s += static_cast<char>('a' + rng.below(3));
        const int lo = 1 + static_cast<int>(rng.below(3));
        const int hi = lo + static_cast<int>(rng.below(3));
        std::size_t total = 0;
        for (const auto& [g, c] : char_ngrams(s, lo, hi)) total += c;
        std::size_t expect = 0;
        for (int n = lo; n <= hi; ++n) expect += len + 1 > static_cast<std::size_t>(n) ? len - n + 1 : 0;
        CHECK(total == expect);
    }
}

TEST_CASE("feature index and vectorize") {
    const std::vector<Post> train{post({"moron", "moron"}, 0), post({"hello", "there"}, 1)};
    FeatureIndex words(FeatureKind::WordUnigram);
    words.fit(train);
    words.freeze();
    CHECK(words.size() == 3);
    const auto X = vectorize(train, words);
    REQUIRE(X[0].entries.size() == 1);
    CHECK(X[0].entries[0].first == words.find("moron"));
    CHECK(X[0].entries[0].second == 2.0);
    CHECK(X[1].entries.size() == 2);

    const std::vector<Post> unseen{post({"zebra", "yak"}, 1)};
    const std::size_t before = words.size();
    CHECK(vectorize(unseen, words)[0].entries.empty());
    CHECK(words.size() == before);
    CHECK_THROWS(words.fit(unseen));

    FeatureIndex chars(FeatureKind::CharNgram, 2, 3);
    chars.fit(train);
    chars.freeze();
    for (const auto& v : vectorize(train, chars)) {
        CHECK_FALSE(v.entries.empty());
        for (std::size_t i = 0; i < v.entries.size(); ++i) {
            CHECK(v.entries[i].second > 0);
            CHECK(v.entries[i].first < chars.size());
            if (i) CHECK(v.entries[i - 1].first < v.entries[i].first);
        }
    }
    // n-grams run over tokens joined by single spaces
    CHECK(chars.find("o t") >= 0);
    CHECK(chars.find("hello") == -1);
}
