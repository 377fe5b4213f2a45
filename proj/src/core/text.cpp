#include "text.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "error.hpp"

namespace cb {

namespace embedded {
extern const char* const kStopwords;
extern const char* const kSwearwords;
}  // namespace embedded

std::vector<std::string> preprocess(std::string_view text, const WordSet& stopwords) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            if (!stopwords.contains(cur)) out.push_back(cur);
            cur.clear();
        }
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (c < 0x80 && (std::isspace(c) || std::ispunct(c))) {
            flush();
        } else {
            cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
        }
    }
    flush();
    return out;
}

WordSet parse_word_list(std::string_view content) {
    WordSet words;
    for (const auto& line : split(content, '\n')) {
        std::string_view v = line;
        if (auto hash = v.find('#'); hash != std::string_view::npos) v = v.substr(0, hash);
        std::string w = to_lower(trim(v));
        if (!w.empty()) words.insert(std::move(w));
    }
    return words;
}

WordSet read_word_list(const std::filesystem::path& path) { return parse_word_list(read_file(path)); }

const WordSet& default_stopwords() {
    static const WordSet words = parse_word_list(embedded::kStopwords);
    return words;
}

const WordSet& default_swear_lexicon() {
    static const WordSet words = parse_word_list(embedded::kSwearwords);
    return words;
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (;;) {
        const auto pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            parts.emplace_back(s.substr(start));
            break;
        }
        parts.emplace_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return parts;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> parse_delimited(std::string_view content, char sep, bool quoted) {
    std::vector<std::vector<std::string>> rows;
    if (!quoted) {
        for (auto& line : split(content, '\n')) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            rows.push_back(split(line, sep));
        }
        return rows;
    }

    std::vector<std::string> row;
    std::string field;
    bool in_quotes = false;
    bool row_has_data = false;
    for (std::size_t i = 0; i < content.size(); ++i) {
        const char c = content[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < content.size() && content[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        if (c == '"') {
            in_quotes = true;
            row_has_data = true;
        } else if (c == sep) {
            row.push_back(std::move(field));
            field.clear();
            row_has_data = true;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < content.size() && content[i + 1] == '\n') ++i;
            if (row_has_data || !field.empty()) {
                row.push_back(std::move(field));
                rows.push_back(std::move(row));
            }
            field.clear();
            row.clear();
            row_has_data = false;
        } else {
            field.push_back(c);
            row_has_data = true;
        }
    }
    if (row_has_data || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace cb
