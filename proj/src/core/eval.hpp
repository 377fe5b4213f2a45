#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "corpus.hpp"

namespace cb {

/// C x C counts, row = truth, column = prediction.
using Confusion = std::vector<std::vector<std::size_t>>;

Confusion confusion(std::span<const int> truth, std::span<const int> pred, std::size_t classes);
Confusion confusion(std::span<const std::string> truth, std::span<const std::string> pred,
                    const std::vector<std::string>& label_space);

/// 2PR/(P+R), or 0 when P+R = 0.
double f1_score(double precision, double recall);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
    bool degenerate = false;  // a zero denominator was replaced by 0
};

struct Metrics {
    std::vector<std::string> label_space;
    std::vector<ClassMetrics> per_class;
    double accuracy = 0.0;
    int positive = 0;

    const ClassMetrics& positive_class() const { return per_class.at(static_cast<std::size_t>(positive)); }
    const ClassMetrics& of(std::string_view label) const;
};

/// One-vs-rest precision/recall/F1 for every class; `positive` names the headline class.
Metrics metrics_from_confusion(const Confusion& C, const std::vector<std::string>& label_space, int positive);

/// Per-class arithmetic mean of each metric; supports are summed.
Metrics mean_metrics(const std::vector<Metrics>& folds);

struct FoldReport {
    std::vector<Metrics> folds;
    Metrics mean;
    Metrics pooled;  // metrics of the summed confusion matrix
    std::string fingerprint;
    std::uint64_t seed = 0;
};

using Predictor = std::function<std::vector<int>(std::span<const Post>)>;
/// Trains on the (already oversampled) training posts of one fold.
using Trainer = std::function<Predictor(std::span<const Post> train, int fold, std::uint64_t seed)>;

struct OversampleSpec {
    int rate = 1;
    std::set<int> classes;
};

/// Stratified k-fold; each training fold is oversampled per spec, each test
/// fold is left untouched. Up to `jobs` folds run concurrently; results are
/// assembled in fold order.
FoldReport cross_validate(const LabeledCorpus& corpus, const Trainer& trainer, int k, const OversampleSpec& oversample,
                          std::uint64_t seed, int jobs = 1, const std::string& fingerprint = {});

// -- Tables ------------------------------------------------------------------

/// A row-keyed table of optional numbers, rendered with two decimals.
struct ResultTable {
    std::string title;
    std::vector<std::string> key_columns;    // e.g. Dataset, Label
    std::vector<std::string> value_columns;  // e.g. P/Random, ...
    struct Row {
        std::vector<std::string> keys;
        std::vector<std::optional<double>> values;
    };
    std::vector<Row> rows;

    /// Sets a cell, creating the row (by keys) and column on first use.
    void set(const std::vector<std::string>& keys, const std::string& column, std::optional<double> value);
    std::optional<double> get(const std::vector<std::string>& keys, const std::string& column) const;
};

/// Tab-separated; first line is a `# title` comment, then a header row.
std::string render_tsv(const ResultTable& table);
/// Space-aligned columns for terminals.
std::string render_aligned(const ResultTable& table);
/// Inverse of render_tsv. Key columns are the leading non-numeric header names.
ResultTable parse_tsv(std::string_view text, std::size_t key_columns);

}  // namespace cb
