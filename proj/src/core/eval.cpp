#include "eval.hpp"

#include <algorithm>
#include <cstdio>
#include <future>
#include <map>

#include "error.hpp"
#include "rng.hpp"
#include "text.hpp"

namespace cb {

Confusion confusion(std::span<const int> truth, std::span<const int> pred, std::size_t classes) {
    if (truth.size() != pred.size()) throw UsageError("confusion: truth and prediction lengths differ");
    Confusion C(classes, std::vector<std::size_t>(classes, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || static_cast<std::size_t>(truth[i]) >= classes || pred[i] < 0 ||
            static_cast<std::size_t>(pred[i]) >= classes)
            throw UsageError("confusion: unknown label at position " + std::to_string(i));
        ++C[truth[i]][pred[i]];
    }
    return C;
}

Confusion confusion(std::span<const std::string> truth, std::span<const std::string> pred,
                    const std::vector<std::string>& label_space) {
    auto index = [&](const std::string& l) {
        auto it = std::find(label_space.begin(), label_space.end(), l);
        if (it == label_space.end()) throw UsageError("confusion: unknown label '" + l + "'");
        return static_cast<int>(it - label_space.begin());
    };
    std::vector<int> t, p;
    for (const auto& l : truth) t.push_back(index(l));
    for (const auto& l : pred) p.push_back(index(l));
    return confusion(t, p, label_space.size());
}

double f1_score(double precision, double recall) {
    return precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

const ClassMetrics& Metrics::of(std::string_view label) const {
    for (std::size_t i = 0; i < label_space.size(); ++i)
        if (label_space[i] == label) return per_class[i];
    throw UsageError("no metrics for label '" + std::string(label) + "'");
}

Metrics metrics_from_confusion(const Confusion& C, const std::vector<std::string>& label_space, int positive) {
    const std::size_t n = C.size();
    if (label_space.size() != n) throw UsageError("metrics: label space does not match the confusion matrix");
    Metrics m;
    m.label_space = label_space;
    m.positive = positive;
    m.per_class.resize(n);
    std::size_t total = 0, diag = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (C[i].size() != n) throw UsageError("metrics: confusion matrix is not square");
        for (std::size_t j = 0; j < n; ++j) total += C[i][j];
        diag += C[i][i];
    }
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t predicted = 0, actual = 0;
        for (std::size_t k = 0; k < n; ++k) {
            predicted += C[k][c];
            actual += C[c][k];
        }
        auto& cm = m.per_class[c];
        const double tp = static_cast<double>(C[c][c]);
        cm.support = actual;
        if (predicted > 0) cm.precision = tp / static_cast<double>(predicted);
        else cm.degenerate = true;
        if (actual > 0) cm.recall = tp / static_cast<double>(actual);
        else cm.degenerate = true;
        if (cm.precision + cm.recall == 0) cm.degenerate = true;
        cm.f1 = f1_score(cm.precision, cm.recall);
    }
    m.accuracy = total ? static_cast<double>(diag) / static_cast<double>(total) : 0.0;
    return m;
}

Metrics mean_metrics(const std::vector<Metrics>& folds) {
    if (folds.empty()) return {};
    Metrics m = folds.front();
    const double k = static_cast<double>(folds.size());
    for (auto& c : m.per_class) c = ClassMetrics{};
    m.accuracy = 0;
    for (const auto& f : folds) {
        m.accuracy += f.accuracy / k;
        for (std::size_t c = 0; c < m.per_class.size(); ++c) {
            m.per_class[c].precision += f.per_class[c].precision / k;
            m.per_class[c].recall += f.per_class[c].recall / k;
            m.per_class[c].f1 += f.per_class[c].f1 / k;
            m.per_class[c].support += f.per_class[c].support;
            m.per_class[c].degenerate = m.per_class[c].degenerate || f.per_class[c].degenerate;
        }
    }
    return m;
}

FoldReport cross_validate(const LabeledCorpus& corpus, const Trainer& trainer, int k, const OversampleSpec& oversample,
                          std::uint64_t seed, int jobs, const std::string& fingerprint) {
    const FoldSplit split = stratified_folds(corpus, k, derive_seed(seed, "folds"));
    const auto& posts = corpus.posts();
    const std::size_t C = corpus.label_space().size();
    int positive = 0;
    for (std::size_t i = 0; i < C; ++i)
        if (corpus.label_space()[i] != "none") {
            positive = static_cast<int>(i);
            break;
        }

    auto run_fold = [&](int fold) -> Confusion {
        std::vector<Post> train, test;
        for (auto i : split.train_indices(fold)) train.push_back(posts[i]);
        for (auto i : split.test_indices(fold)) test.push_back(posts[i]);
        const std::uint64_t fold_seed = derive_seed(seed, "fold", static_cast<std::uint64_t>(fold));
        if (oversample.rate > 1) train = cb::oversample(train, oversample.classes, oversample.rate, fold_seed);
        try {
            const Predictor predictor = trainer(train, fold, fold_seed);
            const auto pred = predictor(test);
            std::vector<int> truth;
            for (const auto& p : test) truth.push_back(p.label);
            return confusion(truth, pred, C);
        } catch (const Error& e) {
            throw_error(e.kind(), "fold " + std::to_string(fold + 1) + ": " + e.what());
        }
    };

    std::vector<Confusion> results(static_cast<std::size_t>(k));
    jobs = std::max(1, jobs);
    for (int start = 0; start < k; start += jobs) {
        const int end = std::min(k, start + jobs);
        if (end - start == 1) {
            results[static_cast<std::size_t>(start)] = run_fold(start);
            continue;
        }
        std::vector<std::future<Confusion>> pending;
        for (int f = start; f < end; ++f) pending.push_back(std::async(std::launch::async, run_fold, f));
        for (int f = start; f < end; ++f) results[static_cast<std::size_t>(f)] = pending[static_cast<std::size_t>(f - start)].get();
    }

    FoldReport report;
    report.seed = seed;
    report.fingerprint = fingerprint;
    Confusion pooled(C, std::vector<std::size_t>(C, 0));
    for (const auto& conf : results) {
        report.folds.push_back(metrics_from_confusion(conf, corpus.label_space(), positive));
        for (std::size_t i = 0; i < C; ++i)
            for (std::size_t j = 0; j < C; ++j) pooled[i][j] += conf[i][j];
    }
    report.mean = mean_metrics(report.folds);
    report.pooled = metrics_from_confusion(pooled, corpus.label_space(), positive);
    return report;
}

void ResultTable::set(const std::vector<std::string>& keys, const std::string& column, std::optional<double> value) {
    auto col = std::find(value_columns.begin(), value_columns.end(), column);
    std::size_t ci = static_cast<std::size_t>(col - value_columns.begin());
    if (col == value_columns.end()) {
        value_columns.push_back(column);
        for (auto& r : rows) r.values.emplace_back();
    }
    auto row = std::find_if(rows.begin(), rows.end(), [&](const Row& r) { return r.keys == keys; });
    if (row == rows.end()) {
        rows.push_back({keys, std::vector<std::optional<double>>(value_columns.size())});
        row = rows.end() - 1;
    }
    row->values[ci] = value;
}

std::optional<double> ResultTable::get(const std::vector<std::string>& keys, const std::string& column) const {
    auto col = std::find(value_columns.begin(), value_columns.end(), column);
    auto row = std::find_if(rows.begin(), rows.end(), [&](const Row& r) { return r.keys == keys; });
    if (col == value_columns.end() || row == rows.end()) return std::nullopt;
    return row->values[static_cast<std::size_t>(col - value_columns.begin())];
}

namespace {
std::string cell(const std::optional<double>& v) {
    if (!v) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", *v);
    return buf;
}
}  // namespace

std::string render_tsv(const ResultTable& t) {
    std::string out = "# " + t.title + "\n";
    std::vector<std::string> header = t.key_columns;
    header.insert(header.end(), t.value_columns.begin(), t.value_columns.end());
    out += join(header, "\t") + "\n";
    for (const auto& r : t.rows) {
        std::vector<std::string> fields = r.keys;
        for (const auto& v : r.values) fields.push_back(cell(v));
        out += join(fields, "\t") + "\n";
    }
    return out;
}

std::string render_aligned(const ResultTable& t) {
    std::vector<std::vector<std::string>> grid;
    std::vector<std::string> header = t.key_columns;
    header.insert(header.end(), t.value_columns.begin(), t.value_columns.end());
    grid.push_back(header);
    for (const auto& r : t.rows) {
        std::vector<std::string> fields = r.keys;
        for (const auto& v : r.values) fields.push_back(cell(v));
        grid.push_back(fields);
    }
    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& row : grid)
        for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
    std::string out = t.title + "\n";
    for (const auto& row : grid) {
        std::string line;
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) line += "  ";
            const std::size_t pad = width[i] - row[i].size();
            if (i < t.key_columns.size()) line += row[i] + std::string(pad, ' ');
            else line += std::string(pad, ' ') + row[i];
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out += line + "\n";
    }
    return out;
}

ResultTable parse_tsv(std::string_view text, std::size_t key_columns) {
    ResultTable t;
    bool header_done = false;
    for (auto& line : split(text, '\n')) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line.starts_with("# ")) {
            t.title = line.substr(2);
            continue;
        }
        auto fields = split(line, '\t');
        if (fields.size() < key_columns) throw DataError("table row has fewer fields than key columns");
        if (!header_done) {
            t.key_columns.assign(fields.begin(), fields.begin() + static_cast<std::ptrdiff_t>(key_columns));
            t.value_columns.assign(fields.begin() + static_cast<std::ptrdiff_t>(key_columns), fields.end());
            header_done = true;
            continue;
        }
        ResultTable::Row row;
        row.keys.assign(fields.begin(), fields.begin() + static_cast<std::ptrdiff_t>(key_columns));
        for (std::size_t i = key_columns; i < fields.size(); ++i) {
            if (fields[i] == "-") {
                row.values.emplace_back();
            } else {
                try {
                    row.values.emplace_back(std::stod(fields[i]));
                } catch (const std::exception&) {
                    throw DataError("table cell '" + fields[i] + "' is not a number");
                }
            }
        }
        if (row.values.size() != t.value_columns.size()) throw DataError("table row width does not match header");
        t.rows.push_back(std::move(row));
    }
    return t;
}

}  // namespace cb
