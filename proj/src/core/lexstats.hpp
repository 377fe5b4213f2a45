#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "corpus.hpp"

namespace cb {

/// Empirical swearing / anonymity / bullying probabilities. Entries are empty
/// when their conditioning event never occurs (or the corpus has no anonymity flags).
struct StatsTable {
    std::optional<double> p_b, p_s, p_a;
    std::optional<double> p_b_given_s, p_s_given_b;
    std::optional<double> p_b_given_a, p_a_given_b;
    std::optional<double> p_s_given_a, p_b_given_a_and_s;

    /// Column order of the published table.
    std::array<std::optional<double>, 9> columns() const {
        return {p_b, p_s, p_a, p_b_given_s, p_s_given_b, p_b_given_a, p_a_given_b, p_s_given_a, p_b_given_a_and_s};
    }
    static std::array<std::string_view, 9> column_names() {
        return {"P(B)", "P(S)", "P(A)", "P(B|S)", "P(S|B)", "P(B|A)", "P(A|B)", "P(S|A)", "P(B|(A&S))"};
    }
};

/// Lowercased, deduplicated words; errors when the file holds no words.
WordSet load_lexicon(const std::filesystem::path& path);

StatsTable conditional_stats(const LabeledCorpus& corpus, const WordSet& lexicon);

/// One tab-separated row: dataset name then the nine columns, "-" for undefined.
std::string format_stats_row(std::string_view dataset, const StatsTable& stats, int decimals = 2);

}  // namespace cb
