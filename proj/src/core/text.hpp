#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace cb {

using WordSet = std::unordered_set<std::string>;

/// Lowercase, turn ASCII punctuation into spaces, split on whitespace and
/// drop stopwords. Token order is preserved.
std::vector<std::string> preprocess(std::string_view text, const WordSet& stopwords);

/// One lowercase word per line; blank lines and `#` comments ignored.
/// An empty result is allowed here; callers decide whether that is an error.
WordSet read_word_list(const std::filesystem::path& path);
WordSet parse_word_list(std::string_view content);

/// The bundled lists shipped under data/.
const WordSet& default_stopwords();
const WordSet& default_swear_lexicon();

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

std::string read_file(const std::filesystem::path& path);

/// Rows of a delimited file. With `quoted` the RFC 4180 rules apply (fields
/// may contain the separator and newlines inside double quotes); otherwise
/// every line is split on the separator verbatim.
std::vector<std::vector<std::string>> parse_delimited(std::string_view content, char sep, bool quoted);

}  // namespace cb
