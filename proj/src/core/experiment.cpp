#include "experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>

#include <json.hpp>

#include "embedspace.hpp"
#include "error.hpp"
#include "lexstats.hpp"
#include "rng.hpp"
#include "text.hpp"

namespace cb {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::mutex progress_mutex;
std::function<void(std::string_view)> progress_sink;

void progress(const std::string& line) {
    std::lock_guard lock(progress_mutex);
    if (progress_sink) progress_sink(line);
}

// -- value parsing -------------------------------------------------------------

template <typename T>
T parse_number(std::string_view value, const std::string& what) {
    T out{};
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc{} || ptr != end || value.empty()) throw UsageError(what + ": '" + std::string(value) + "' is not a valid number");
    return out;
}

bool parse_bool(std::string_view value, const std::string& what) {
    const std::string v = to_lower(value);
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no") return false;
    throw UsageError(what + ": '" + std::string(value) + "' is not a boolean");
}

std::vector<std::string> parse_list(std::string_view value) {
    std::vector<std::string> out;
    for (const auto& part : split(value, ',')) {
        std::string t = trim(part);
        if (!t.empty()) out.push_back(std::move(t));
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

template <typename T, typename F>
std::string format_list(const std::vector<T>& items, F&& fmt) {
    std::vector<std::string> parts;
    for (const auto& i : items) parts.push_back(std::string(fmt(i)));
    return join(parts, ", ");
}

std::string_view feature_name(FeatureKind k) { return k == FeatureKind::CharNgram ? "char" : "word"; }

FeatureKind parse_feature_kind(std::string_view name) {
    const std::string n = to_lower(name);
    if (n == "char" || n == "char_ngram" || n == "ngram") return FeatureKind::CharNgram;
    if (n == "word" || n == "word_unigram" || n == "unigram") return FeatureKind::WordUnigram;
    throw UsageError("unknown feature kind '" + std::string(name) + "' (expected char or word)");
}

struct KeySpec {
    std::string name;
    std::function<void(ExperimentConfig&, std::string_view, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

#define CB_STRING(key) \
    {#key, [](ExperimentConfig& c, std::string_view v, const std::string&) { c.key = std::string(v); }, \
     [](const ExperimentConfig& c) { return c.key; }}
#define CB_NUMBER(key, type) \
    {#key, [](ExperimentConfig& c, std::string_view v, const std::string& w) { c.key = parse_number<type>(v, w); }, \
     [](const ExperimentConfig& c) { return std::to_string(c.key); }}
#define CB_REAL(key) \
    {#key, [](ExperimentConfig& c, std::string_view v, const std::string& w) { c.key = parse_number<double>(v, w); }, \
     [](const ExperimentConfig& c) { return format_double(c.key); }}

const std::vector<KeySpec>& key_specs() {
    static const std::vector<KeySpec> specs = {
        {"corpus", [](ExperimentConfig& c, std::string_view v, const std::string&) { c.corpus = parse_list(v); },
         [](const ExperimentConfig& c) { return join(c.corpus, ", "); }},
        CB_STRING(stopwords),
        CB_STRING(lexicon),
        CB_NUMBER(subsample, std::size_t),
        CB_NUMBER(min_count, std::size_t),
        CB_NUMBER(folds, int),
        CB_NUMBER(seed, std::uint64_t),
        {"architecture",
         [](ExperimentConfig& c, std::string_view v, const std::string&) {
             c.architecture.clear();
             for (const auto& a : parse_list(v)) c.architecture.push_back(parse_architecture(a));
         },
         [](const ExperimentConfig& c) { return format_list(c.architecture, [](Architecture a) { return to_string(a); }); }},
        {"embed_init",
         [](ExperimentConfig& c, std::string_view v, const std::string&) {
             c.embed_init.clear();
             for (const auto& a : parse_list(v)) c.embed_init.push_back(parse_embed_init(a));
         },
         [](const ExperimentConfig& c) { return format_list(c.embed_init, [](EmbedInit e) { return to_string(e); }); }},
        CB_STRING(glove_path),
        CB_STRING(sswe_path),
        CB_NUMBER(embed_dim, std::size_t),
        CB_NUMBER(hidden, std::size_t),
        CB_REAL(dropout_pre),
        CB_REAL(dropout_post),
        CB_NUMBER(epochs, int),
        CB_NUMBER(batch, std::size_t),
        CB_REAL(lr),
        {"freeze_embeddings",
         [](ExperimentConfig& c, std::string_view v, const std::string& w) { c.freeze_embeddings = parse_bool(v, w); },
         [](const ExperimentConfig& c) { return std::string(c.freeze_embeddings ? "true" : "false"); }},
        CB_NUMBER(cnn_filters, std::size_t),
        {"cnn_windows",
         [](ExperimentConfig& c, std::string_view v, const std::string& w) {
             c.cnn_windows.clear();
             for (const auto& a : parse_list(v)) c.cnn_windows.push_back(parse_number<std::size_t>(a, w));
         },
         [](const ExperimentConfig& c) { return format_list(c.cnn_windows, [](std::size_t n) { return std::to_string(n); }); }},
        CB_NUMBER(oversample_rate, int),
        {"oversample",
         [](ExperimentConfig& c, std::string_view v, const std::string& w) {
             const std::string m = to_lower(trim(v));
             if (m != "on" && m != "off" && m != "both") throw UsageError(w + ": oversample must be on, off or both");
             c.oversample = m;
         },
         [](const ExperimentConfig& c) { return c.oversample; }},
        {"baseline_models",
         [](ExperimentConfig& c, std::string_view v, const std::string&) {
             c.baseline_models.clear();
             for (const auto& a : parse_list(v)) c.baseline_models.push_back(parse_baseline_kind(a));
         },
         [](const ExperimentConfig& c) { return format_list(c.baseline_models, [](BaselineKind k) { return to_string(k); }); }},
        {"features",
         [](ExperimentConfig& c, std::string_view v, const std::string&) {
             c.features.clear();
             for (const auto& a : parse_list(v)) c.features.push_back(parse_feature_kind(a));
         },
         [](const ExperimentConfig& c) { return format_list(c.features, feature_name); }},
        CB_NUMBER(ngram_min, int),
        CB_NUMBER(ngram_max, int),
        {"baseline_epochs",
         [](ExperimentConfig& c, std::string_view v, const std::string& w) { c.hyper.epochs = parse_number<int>(v, w); },
         [](const ExperimentConfig& c) { return std::to_string(c.hyper.epochs); }},
        {"l2", [](ExperimentConfig& c, std::string_view v, const std::string& w) { c.hyper.l2 = parse_number<double>(v, w); },
         [](const ExperimentConfig& c) { return format_double(c.hyper.l2); }},
        {"nb_alpha",
         [](ExperimentConfig& c, std::string_view v, const std::string& w) { c.hyper.nb_alpha = parse_number<double>(v, w); },
         [](const ExperimentConfig& c) { return format_double(c.hyper.nb_alpha); }},
        {"rf_trees",
         [](ExperimentConfig& c, std::string_view v, const std::string& w) { c.hyper.trees = parse_number<int>(v, w); },
         [](const ExperimentConfig& c) { return std::to_string(c.hyper.trees); }},
        {"rf_depth",
         [](ExperimentConfig& c, std::string_view v, const std::string& w) { c.hyper.max_depth = parse_number<int>(v, w); },
         [](const ExperimentConfig& c) { return std::to_string(c.hyper.max_depth); }},
        {"rf_hash_dim",
         [](ExperimentConfig& c, std::string_view v, const std::string& w) { c.hyper.hash_dim = parse_number<int>(v, w); },
         [](const ExperimentConfig& c) { return std::to_string(c.hyper.hash_dim); }},
        {"transfer_flavors",
         [](ExperimentConfig& c, std::string_view v, const std::string&) {
             c.transfer_flavors.clear();
             for (const auto& a : parse_list(v)) c.transfer_flavors.push_back(parse_transfer_flavor(a));
         },
         [](const ExperimentConfig& c) { return format_list(c.transfer_flavors, [](TransferFlavor f) { return to_string(f); }); }},
        CB_STRING(model),
        {"neighbors_words",
         [](ExperimentConfig& c, std::string_view v, const std::string&) { c.neighbors_words = parse_list(v); },
         [](const ExperimentConfig& c) { return join(c.neighbors_words, ", "); }},
        CB_NUMBER(neighbors_k, std::size_t),
        CB_NUMBER(tsne_top, std::size_t),
        CB_REAL(tsne_perplexity),
        CB_NUMBER(tsne_iterations, int),
        CB_REAL(tsne_lr),
        CB_STRING(ingest_platform),
        CB_STRING(ingest_input),
        CB_STRING(ingest_annotations),
        CB_STRING(output_dir),
        CB_NUMBER(jobs, int),
    };
    return specs;
}

#undef CB_STRING
#undef CB_NUMBER
#undef CB_REAL

}  // namespace

void set_progress_sink(std::function<void(std::string_view)> sink) {
    std::lock_guard lock(progress_mutex);
    progress_sink = std::move(sink);
}

// -- config ----------------------------------------------------------------------

void ExperimentConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw UsageError(msg);
    };
    require(folds >= 2, "folds must be at least 2");
    require(dropout_pre >= 0 && dropout_pre < 1, "dropout_pre must be in [0, 1)");
    require(dropout_post >= 0 && dropout_post < 1, "dropout_post must be in [0, 1)");
    require(embed_dim > 0 && hidden > 0, "embed_dim and hidden must be positive");
    require(epochs > 0, "epochs must be positive");
    require(batch > 0, "batch must be positive");
    require(lr > 0, "lr must be positive");
    require(oversample_rate >= 1, "oversample_rate must be at least 1");
    require(cnn_filters > 0 && !cnn_windows.empty(), "cnn_filters and cnn_windows must be non-empty");
    for (auto w : cnn_windows) require(w > 0, "cnn_windows entries must be positive");
    require(min_count >= 1, "min_count must be at least 1");
    require(!architecture.empty() && !embed_init.empty(), "architecture and embed_init need at least one entry");
    require(!baseline_models.empty() && !features.empty(), "baseline_models and features need at least one entry");
    require(ngram_min >= 1 && ngram_max >= ngram_min, "need 1 <= ngram_min <= ngram_max");
    require(hyper.l2 >= 0 && hyper.epochs > 0 && hyper.nb_alpha > 0, "invalid baseline hyperparameters");
    require(hyper.trees > 0 && hyper.max_depth > 0 && hyper.hash_dim > 0, "invalid random forest settings");
    require(tsne_perplexity > 0 && tsne_iterations > 0 && tsne_lr > 0, "invalid t-SNE settings");
    require(tsne_top >= 2, "tsne_top must be at least 2");
    require(neighbors_k > 0, "neighbors_k must be positive");
    require(jobs >= 1, "jobs must be at least 1");
    require(!output_dir.empty(), "output_dir must be set");
}

ModelConfig ExperimentConfig::model_config(Architecture arch, EmbedInit init) const {
    ModelConfig m;
    m.architecture = arch;
    m.embed_init = init;
    m.embed_dim = embed_dim;
    m.hidden = hidden;
    m.dropout_pre = dropout_pre;
    m.dropout_post = dropout_post;
    m.epochs = epochs;
    m.batch = batch;
    m.lr = lr;
    m.seed = seed;
    m.freeze_embeddings = freeze_embeddings;
    m.cnn_windows = cnn_windows;
    m.cnn_filters = cnn_filters;
    return m;
}

std::vector<bool> ExperimentConfig::oversample_variants() const {
    if (oversample == "on") return {true};
    if (oversample == "off") return {false};
    return {false, true};
}

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& k : key_specs()) out.push_back(k.name);
    return out;
}

void set_config_value(ExperimentConfig& config, std::string_view key, std::string_view value,
                      const std::string& where) {
    const std::string k = trim(key);
    const std::string prefix = where.empty() ? k : where + ": " + k;
    for (const auto& spec : key_specs())
        if (spec.name == k) {
            spec.set(config, trim(value), prefix);
            return;
        }
    throw UsageError((where.empty() ? std::string() : where + ": ") + "unknown key '" + k + "'");
}

void apply_override(ExperimentConfig& config, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw UsageError("override '" + std::string(assignment) + "' is not key=value");
    set_config_value(config, assignment.substr(0, eq), assignment.substr(eq + 1), "--set");
}

ExperimentConfig parse_config_text(std::string_view text, const std::string& source) {
    ExperimentConfig config;
    std::map<std::string, std::size_t> line_of;
    std::size_t line_no = 0;
    for (const auto& raw : split(text, '\n')) {
        ++line_no;
        std::string line = raw;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = source + ":" + std::to_string(line_no);
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError(where + ": expected 'key = value'");
        set_config_value(config, line.substr(0, eq), line.substr(eq + 1), where);
        line_of[trim(line.substr(0, eq))] = line_no;
    }
    try {
        config.validate();
    } catch (const UsageError& e) {
        // Range messages start with the offending key; point at its line.
        const std::string msg = e.what();
        const auto it = line_of.find(msg.substr(0, msg.find(' ')));
        throw UsageError(source + (it != line_of.end() ? ":" + std::to_string(it->second) : std::string()) + ": " + msg);
    }
    return config;
}

ExperimentConfig parse_config(const fs::path& path) {
    if (!fs::exists(path)) throw DataError("config file not found: " + path.string());
    const std::string content = read_file(path);
    if (path.extension() == ".json") {
        json manifest;
        try {
            manifest = json::parse(content);
        } catch (const json::exception& e) {
            throw DataError(path.string() + ": not a valid manifest: " + e.what());
        }
        if (!manifest.contains("config") || !manifest["config"].is_string())
            throw DataError(path.string() + ": manifest has no config entry");
        return parse_config_text(manifest["config"].get<std::string>(), path.string());
    }
    return parse_config_text(content, path.string());
}

std::string format_config(const ExperimentConfig& config) {
    std::string out;
    for (const auto& spec : key_specs()) out += spec.name + " = " + spec.get(config) + "\n";
    return out;
}

fs::path resolve_data_path(const std::string& path) {
    const fs::path p(path);
    if (p.is_absolute() || fs::exists(p)) return p;
    if (const char* root = std::getenv("CB_DATA_DIR"); root && *root) return fs::path(root) / p;
    return p;
}

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error(Error::Kind::Internal, "SHA-256 computation failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

std::string dataset_code(Platform p, bool oversampled) {
    std::string code(1, to_string(p).front());
    code[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(code[0])));
    return oversampled ? code + "+" : code;
}

LabeledCorpus subsample_corpus(const LabeledCorpus& corpus, std::size_t n, std::uint64_t seed) {
    if (n == 0 || n >= corpus.size()) return corpus;
    // Per-class quotas proportional to class size; remainders go to the
    // classes with the largest fractional parts.
    const std::size_t C = corpus.label_space().size();
    std::vector<std::vector<std::size_t>> by_class(C);
    for (std::size_t i = 0; i < corpus.size(); ++i) by_class[corpus.posts()[i].label].push_back(i);
    std::vector<std::size_t> quota(C);
    std::vector<std::pair<double, std::size_t>> rest;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < C; ++c) {
        const double exact = static_cast<double>(by_class[c].size()) * static_cast<double>(n) / static_cast<double>(corpus.size());
        quota[c] = static_cast<std::size_t>(exact);
        assigned += quota[c];
        rest.push_back({exact - static_cast<double>(quota[c]), c});
    }
    std::stable_sort(rest.begin(), rest.end(), [](auto& a, auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < n && i < rest.size(); ++i, ++assigned) ++quota[rest[i].second];
    Rng rng(seed);
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < C; ++c) {
        rng.shuffle(by_class[c]);
        keep.insert(keep.end(), by_class[c].begin(), by_class[c].begin() + static_cast<std::ptrdiff_t>(quota[c]));
    }
    std::sort(keep.begin(), keep.end());
    std::vector<Post> posts;
    for (auto i : keep) posts.push_back(corpus.posts()[i]);
    return LabeledCorpus(corpus.platform(), corpus.label_space(), std::move(posts));
}

// -- runners ---------------------------------------------------------------------

namespace {

struct Dataset {
    fs::path path;
    LabeledCorpus corpus;
};

class Run {
public:
    Run(std::string command, const ExperimentConfig& config, bool dry_run)
        : command_(std::move(command)), config_(config), dry_run_(dry_run), out_dir_(config.output_dir) {}

    const ExperimentConfig& config() const { return config_; }
    bool dry_run() const { return dry_run_; }
    const fs::path& out_dir() const { return out_dir_; }

    fs::path input(const std::string& path, const std::string& what) {
        const fs::path p = resolve_data_path(path);
        if (!fs::exists(p)) throw DataError(what + " not found: " + p.string());
        if (std::find(inputs_.begin(), inputs_.end(), p) == inputs_.end()) inputs_.push_back(p);
        return p;
    }

    const WordSet& stopwords() {
        if (!stopwords_) {
            stopwords_ = config_.stopwords.empty() ? default_stopwords()
                                                   : read_word_list(input(config_.stopwords, "stopword list"));
        }
        return *stopwords_;
    }

    std::vector<Dataset> datasets() {
        if (config_.corpus.empty()) throw UsageError("no corpus given (set 'corpus')");
        std::vector<fs::path> paths;
        for (const auto& c : config_.corpus) paths.push_back(input(c, "corpus file"));
        std::vector<Dataset> out;
        if (dry_run_) return out;
        for (const auto& p : paths) {
            const Platform platform = sniff_platform(p);
            LabeledCorpus corpus = load_dataset(platform, p, stopwords());
            corpus = subsample_corpus(corpus, config_.subsample,
                                      derive_seed(config_.seed, "subsample", static_cast<std::uint64_t>(platform)));
            progress("loaded " + p.string() + " (" + std::to_string(corpus.size()) + " posts)");
            out.push_back({p, std::move(corpus)});
        }
        return out;
    }

    void plan(const std::string& line) { plan_.push_back(line); }

    void write(const std::string& name, const std::string& content) {
        fs::create_directories(out_dir_);
        const fs::path p = out_dir_ / name;
        std::ofstream f(p, std::ios::binary);
        if (!f) throw DataError("cannot write " + p.string());
        f << content;
        if (!f) throw DataError("failed writing " + p.string());
        outputs_.push_back(p);
    }

    void track_output(const fs::path& p) { outputs_.push_back(p); }

    json& metrics() { return metrics_; }

    RunResult finish(std::string text) {
        RunResult r;
        if (dry_run_) {
            r.text = "command: " + command_ + "\noutput_dir: " + out_dir_.string() + "\n";
            for (const auto& p : inputs_) r.text += "input: " + p.string() + "\n";
            for (const auto& l : plan_) r.text += "job: " + l + "\n";
            r.text += "\n" + format_config(config_);
            return r;
        }
        write("resolved.cfg", format_config(config_));
        json manifest;
        manifest["command"] = command_;
        manifest["seed"] = config_.seed;
        manifest["config"] = format_config(config_);
        manifest["inputs"] = json::array();
        for (const auto& p : inputs_) manifest["inputs"].push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
        manifest["outputs"] = json::array();
        for (const auto& p : outputs_)
            manifest["outputs"].push_back({{"path", p.filename().string()}, {"sha256", sha256_file(p)}});
        manifest["metrics"] = metrics_;
        write("manifest.json", manifest.dump(2) + "\n");
        r.text = std::move(text);
        r.outputs = outputs_;
        return r;
    }

private:
    std::string command_;
    ExperimentConfig config_;
    bool dry_run_;
    fs::path out_dir_;
    std::optional<WordSet> stopwords_;
    std::vector<fs::path> inputs_;
    std::vector<fs::path> outputs_;
    std::vector<std::string> plan_;
    json metrics_ = json::array();
};

int positive_class(const std::vector<std::string>& labels) {
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] != "none") return static_cast<int>(i);
    return 0;
}

std::string init_title(EmbedInit e) {
    switch (e) {
        case EmbedInit::Random: return "Random";
        case EmbedInit::Glove: return "Glove";
        case EmbedInit::Sswe: return "SSWE";
    }
    return "?";
}

std::string platform_title(Platform p) {
    std::string s(to_string(p));
    s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

RunResult run_ingest(Run& run) {
    const auto& c = run.config();
    if (c.ingest_platform.empty() || c.ingest_input.empty())
        throw UsageError("ingest needs ingest_platform and ingest_input");
    const Platform platform = parse_platform(c.ingest_platform);
    const fs::path in = run.input(c.ingest_input, "raw export");
    std::optional<fs::path> annotations;
    if (!c.ingest_annotations.empty()) annotations = run.input(c.ingest_annotations, "annotation file");
    const std::string name = std::string(to_string(platform)) + ".tsv";
    run.plan("ingest " + in.string() + " -> " + (run.out_dir() / name).string());
    if (run.dry_run()) return run.finish({});
    std::vector<CanonicalRecord> records;
    switch (platform) {
        case Platform::Formspring: records = ingest_formspring(in); break;
        case Platform::Twitter: records = ingest_twitter(in); break;
        case Platform::Wikipedia: records = ingest_wikipedia(in, annotations); break;
    }
    run.write(name, format_canonical(records));
    std::map<std::string, std::size_t> counts;
    for (const auto& r : records) ++counts[r.label];
    json m{{"platform", to_string(platform)}, {"records", records.size()}};
    std::string text = "wrote " + std::to_string(records.size()) + " records to " + (run.out_dir() / name).string() + "\n";
    for (const auto& [label, n] : counts) {
        m["labels"][label] = n;
        text += "  " + label + "\t" + std::to_string(n) + "\n";
    }
    run.metrics().push_back(m);
    return run.finish(text);
}

RunResult run_stats(Run& run) {
    const auto& c = run.config();
    const WordSet lexicon = c.lexicon.empty() ? default_swear_lexicon() : load_lexicon(run.input(c.lexicon, "lexicon"));
    const auto data = run.datasets();
    for (const auto& p : c.corpus) run.plan("stats " + p);
    if (run.dry_run()) return run.finish({});
    ResultTable table;
    table.title = "Swear word use and anonymity";
    table.key_columns = {"Dataset"};
    std::string text = "Dataset";
    for (auto name : StatsTable::column_names()) text += "\t" + std::string(name);
    text += "\n";
    for (const auto& d : data) {
        const StatsTable s = conditional_stats(d.corpus, lexicon);
        const std::string name = platform_title(d.corpus.platform());
        text += format_stats_row(name, s) + "\n";
        json m{{"dataset", name}};
        const auto cols = s.columns();
        const auto names = StatsTable::column_names();
        for (std::size_t i = 0; i < cols.size(); ++i) {
            table.set({name}, std::string(names[i]), cols[i]);
            m[std::string(names[i])] = cols[i] ? json(*cols[i]) : json(nullptr);
        }
        run.metrics().push_back(m);
    }
    run.write("table2.tsv", render_tsv(table));
    return run.finish(text);
}

Trainer baseline_trainer(const ExperimentConfig& c, BaselineKind kind, FeatureKind features,
                         const std::vector<std::string>& labels) {
    return [&c, kind, features, labels](std::span<const Post> train, int, std::uint64_t seed) -> Predictor {
        auto index = std::make_shared<FeatureIndex>(features, c.ngram_min, c.ngram_max);
        index->fit(train);
        index->freeze();
        const auto X = vectorize(train, *index);
        std::vector<int> y;
        for (const auto& p : train) y.push_back(p.label);
        auto model =
            std::make_shared<BaselineModel>(train_baseline(kind, X, y, labels, index->size(), c.hyper, seed));
        return [index, model](std::span<const Post> test) { return predict_baseline(*model, vectorize(test, *index)); };
    };
}

RunResult run_baseline(Run& run) {
    const auto& c = run.config();
    const auto data = run.datasets();
    for (const auto& p : c.corpus)
        for (auto f : c.features)
            for (auto k : c.baseline_models)
                run.plan("baseline " + p + " " + std::string(feature_name(f)) + " " + std::string(to_string(k)) + " (" +
                         std::to_string(c.folds) + " folds)");
    if (run.dry_run()) return run.finish({});
    ResultTable table;
    table.title = "Traditional models, F1 per bullying class";
    table.key_columns = {"Dataset", "Label"};
    for (const auto& d : data) {
        const auto& labels = d.corpus.label_space();
        const std::string name = platform_title(d.corpus.platform());
        for (auto f : c.features)
            for (auto k : c.baseline_models) {
                const std::string column = std::string(feature_name(f)) + "/" + std::string(to_string(k));
                const auto report = cross_validate(d.corpus, baseline_trainer(c, k, f, labels), c.folds, {}, c.seed,
                                                   c.jobs, column);
                progress("baseline " + name + " " + column + " done");
                for (int cls : bullying_classes(labels)) {
                    const auto& m = report.mean.per_class[static_cast<std::size_t>(cls)];
                    table.set({name, labels[cls]}, column, m.f1);
                    run.metrics().push_back({{"dataset", name}, {"label", labels[cls]}, {"features", feature_name(f)},
                                             {"model", to_string(k)}, {"precision", m.precision}, {"recall", m.recall},
                                             {"f1", m.f1}, {"accuracy", report.mean.accuracy}});
                }
            }
    }
    run.write("table3.tsv", render_tsv(table));
    return run.finish(render_aligned(table));
}

/// Pretrained vectors over the whole-corpus vocabulary, or nothing for random init.
std::optional<EmbeddingMatrix> pretrained_for(Run& run, EmbedInit init, const LabeledCorpus& corpus) {
    const auto& c = run.config();
    if (init == EmbedInit::Random) return std::nullopt;
    const std::string& path = init == EmbedInit::Glove ? c.glove_path : c.sswe_path;
    if (path.empty())
        throw UsageError(std::string(to_string(init)) + " initialisation needs " +
                         (init == EmbedInit::Glove ? "glove_path" : "sswe_path"));
    const fs::path p = run.input(path, std::string(to_string(init)) + " vectors");
    if (run.dry_run()) return std::nullopt;
    auto loaded = load_pretrained(p, build_vocabulary(corpus, c.min_count), c.embed_dim,
                                  derive_seed(c.seed, "pretrained"));
    progress(std::string(to_string(init)) + " coverage " + format_double(loaded.coverage));
    return std::move(loaded.matrix);
}

EmbeddingMatrix initial_embedding(const std::optional<EmbeddingMatrix>& pretrained, const Vocabulary& vocab,
                                  std::size_t dim, std::uint64_t seed) {
    if (pretrained) return align_vocab(*pretrained, vocab, seed).matrix;
    return init_random(vocab, dim, seed);
}

Trainer dnn_trainer(const ModelConfig& mc, const std::vector<std::string>& labels, std::size_t min_count,
                    std::shared_ptr<const std::optional<EmbeddingMatrix>> pretrained, std::string tag) {
    return [=](std::span<const Post> train, int fold, std::uint64_t seed) -> Predictor {
        ModelConfig m = mc;
        m.seed = seed;
        const Vocabulary vocab = build_vocabulary(train, min_count);
        auto model = std::make_shared<TrainedModel>(
            train_model(build_model(m, vocab, initial_embedding(*pretrained, vocab, m.embed_dim, seed), labels), train));
        progress(tag + " fold " + std::to_string(fold + 1) + " trained");
        return [model](std::span<const Post> test) { return predict(*model, test).labels; };
    };
}

std::string model_file_name(const std::string& dataset, Architecture a, EmbedInit e) {
    std::string d = dataset;
    std::replace(d.begin(), d.end(), '+', 'p');
    return d + "_" + std::string(to_string(a)) + "_" + std::string(to_string(e)) + ".cbnn1";
}

RunResult run_train(Run& run) {
    const auto& c = run.config();
    auto data = run.datasets();
    for (const auto& p : c.corpus)
        for (bool over : c.oversample_variants())
            for (auto a : c.architecture)
                for (auto e : c.embed_init)
                    run.plan("train " + p + (over ? " oversampled " : " ") + std::string(to_string(a)) + " " +
                             std::string(to_string(e)));
    if (run.dry_run()) {
        for (auto e : c.embed_init)
            if (e != EmbedInit::Random) run.input(e == EmbedInit::Glove ? c.glove_path : c.sswe_path, "vectors");
        return run.finish({});
    }
    std::string text;
    for (auto& d : data) {
        const LabeledCorpus corpus = truncate(d.corpus, d.corpus.length_at_95());
        const auto& labels = corpus.label_space();
        const Vocabulary vocab = build_vocabulary(corpus, c.min_count);
        for (auto e : c.embed_init) {
            const auto pretrained = pretrained_for(run, e, corpus);
            for (bool over : c.oversample_variants()) {
                const std::string code = dataset_code(corpus.platform(), over);
                const std::uint64_t seed = derive_seed(c.seed, "train-" + code);
                std::vector<Post> posts = corpus.posts();
                if (over) posts = oversample(posts, bullying_classes(labels), c.oversample_rate, seed);
                for (auto a : c.architecture) {
                    ModelConfig m = c.model_config(a, e);
                    m.max_len = corpus.length_at_95();
                    m.classes = labels.size();
                    m.seed = seed;
                    TrainedModel model =
                        train_model(build_model(m, vocab, initial_embedding(pretrained, vocab, m.embed_dim, seed), labels), posts);
                    const std::string file = model_file_name(code, a, e);
                    fs::create_directories(run.out_dir());
                    save_model(run.out_dir() / file, model);
                    run.track_output(run.out_dir() / file);
                    progress("trained " + file);
                    text += file + "\tfinal loss " + format_double(model.loss_trace().back()) + "\n";
                    run.metrics().push_back({{"dataset", code}, {"model", to_string(a)}, {"init", to_string(e)},
                                             {"file", file}, {"loss_trace", model.loss_trace()}});
                }
            }
        }
    }
    return run.finish(text);
}

RunResult run_evaluate(Run& run) {
    const auto& c = run.config();
    auto data = run.datasets();
    for (const auto& p : c.corpus)
        for (bool over : c.oversample_variants())
            for (auto a : c.architecture)
                for (auto e : c.embed_init)
                    run.plan("evaluate " + p + (over ? " oversampled " : " ") + std::string(to_string(a)) + " " +
                             std::string(to_string(e)) + " (" + std::to_string(c.folds) + " folds)");
    if (run.dry_run()) {
        for (auto e : c.embed_init)
            if (e != EmbedInit::Random) run.input(e == EmbedInit::Glove ? c.glove_path : c.sswe_path, "vectors");
        return run.finish({});
    }
    ResultTable all;
    all.title = "Cross-validated deep models";
    all.key_columns = {"Dataset", "Label", "Model", "Init"};
    ResultTable t4;
    t4.title = "Effect of oversampling, BLSTM with attention";
    t4.key_columns = {"Dataset", "Label"};
    ResultTable t5;
    t5.title = "Deep model comparison, " + init_title(c.embed_init.front()) + " initialisation";
    t5.key_columns = {"Dataset", "Label"};
    for (auto& d : data) {
        const LabeledCorpus corpus = truncate(d.corpus, d.corpus.length_at_95());
        const auto& labels = corpus.label_space();
        for (auto e : c.embed_init) {
            auto pretrained = std::make_shared<const std::optional<EmbeddingMatrix>>(pretrained_for(run, e, corpus));
            for (bool over : c.oversample_variants()) {
                const std::string code = dataset_code(corpus.platform(), over);
                OversampleSpec spec;
                if (over) spec = {c.oversample_rate, bullying_classes(labels)};
                for (auto a : c.architecture) {
                    ModelConfig m = c.model_config(a, e);
                    m.max_len = corpus.length_at_95();
                    m.classes = labels.size();
                    const std::string tag = code + " " + std::string(to_string(a)) + " " + std::string(to_string(e));
                    const auto report = cross_validate(corpus, dnn_trainer(m, labels, c.min_count, pretrained, tag),
                                                       c.folds, spec, c.seed, c.jobs, tag);
                    for (int cls : bullying_classes(labels)) {
                        const auto& pm = report.mean.per_class[static_cast<std::size_t>(cls)];
                        const std::vector<std::string> key{code, labels[cls], std::string(model_code(a)), init_title(e)};
                        all.set(key, "P", pm.precision);
                        all.set(key, "R", pm.recall);
                        all.set(key, "F1", pm.f1);
                        all.set(key, "Accuracy", report.mean.accuracy);
                        if (a == Architecture::BLSTM_ATTN)
                            for (auto [metric, v] : {std::pair{"P", pm.precision}, {"R", pm.recall}, {"F1", pm.f1}})
                                t4.set({code, labels[cls]}, std::string(metric) + "/" + init_title(e), v);
                        if (e == c.embed_init.front())
                            for (auto [metric, v] : {std::pair{"P", pm.precision}, {"R", pm.recall}, {"F1", pm.f1}})
                                t5.set({code, labels[cls]}, std::string(metric) + "/" + std::string(model_code(a)), v);
                        run.metrics().push_back({{"dataset", code}, {"label", labels[cls]}, {"model", to_string(a)},
                                                 {"init", to_string(e)}, {"precision", pm.precision},
                                                 {"recall", pm.recall}, {"f1", pm.f1},
                                                 {"accuracy", report.mean.accuracy},
                                                 {"pooled_f1", report.pooled.per_class[cls].f1}});
                    }
                }
            }
        }
    }
    run.write("evaluate.tsv", render_tsv(all));
    if (!t4.rows.empty()) run.write("table4.tsv", render_tsv(t4));
    if (c.architecture.size() > 1) run.write("table5.tsv", render_tsv(t5));
    return run.finish(render_aligned(all));
}

RunResult run_transfer(Run& run) {
    const auto& c = run.config();
    auto data = run.datasets();
    if (c.corpus.size() < 2) throw UsageError("transfer needs at least two corpora");
    const Architecture arch = c.architecture.front();
    const EmbedInit init = c.embed_init.front();
    for (const auto& s : c.corpus)
        for (const auto& t : c.corpus)
            if (s != t)
                for (auto f : c.transfer_flavors)
                    run.plan("transfer " + std::string(to_string(f)) + " " + s + " -> " + t + " " +
                             std::string(to_string(arch)));
    if (run.dry_run()) return run.finish({});

    std::vector<LabeledCorpus> corpora;
    for (auto& d : data) {
        LabeledCorpus mapped = map_labels(d.corpus);
        corpora.push_back(truncate(mapped, mapped.length_at_95()));
    }
    for (std::size_t i = 0; i < corpora.size(); ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (corpora[i].platform() == corpora[j].platform())
                throw UsageError("transfer corpora must come from different platforms");

    const auto& labels = transfer_label_space();
    const std::set<int> bully = bullying_classes(labels);
    const int positive = positive_class(labels);

    // Source models: trained once on the whole oversampled source corpus.
    std::vector<std::shared_ptr<const TrainedModel>> sources;
    for (const auto& corpus : corpora) {
        const std::string code = dataset_code(corpus.platform(), true);
        const std::uint64_t seed = derive_seed(c.seed, "transfer-source-" + code);
        ModelConfig m = c.model_config(arch, init);
        m.max_len = corpus.length_at_95();
        m.classes = labels.size();
        m.seed = seed;
        const Vocabulary vocab = build_vocabulary(corpus, c.min_count);
        const auto pretrained = pretrained_for(run, init, corpus);
        const auto posts = oversample(corpus.posts(), bully, c.oversample_rate, seed);
        sources.push_back(std::make_shared<const TrainedModel>(
            train_model(build_model(m, vocab, initial_embedding(pretrained, vocab, m.embed_dim, seed), labels), posts)));
        progress("transfer source " + code + " trained");
    }

    ResultTable table;
    table.title = "Transfer learning";
    table.key_columns = {"Metric", "Test"};
    for (std::size_t s = 0; s < corpora.size(); ++s)
        for (std::size_t t = 0; t < corpora.size(); ++t) {
            if (s == t) continue;
            const auto& target = corpora[t];
            const std::string src_code = dataset_code(corpora[s].platform(), true);
            const std::string tgt_code = dataset_code(target.platform());
            for (auto flavor : c.transfer_flavors) {
                const TransferPlan plan = TransferPlan::make(flavor, corpora[s].platform(), target.platform());
                const auto source = sources[s];
                ModelConfig m = c.model_config(arch, init);
                m.max_len = target.length_at_95();
                m.classes = labels.size();
                const std::size_t min_count = c.min_count;
                Trainer trainer = [=](std::span<const Post> train, int, std::uint64_t seed) -> Predictor {
                    if (flavor == TransferFlavor::TL1)
                        return [=](std::span<const Post> test) { return tl1_predict(*source, test, labels, plan); };
                    ModelConfig fold_config = m;
                    fold_config.seed = seed;
                    auto model = std::make_shared<TrainedModel>(
                        flavor == TransferFlavor::TL2 ? tl2_train(*source, train, labels, fold_config, min_count)
                                                      : tl3_train(*source, train, labels, fold_config, min_count));
                    return [model](std::span<const Post> test) { return predict(*model, test).labels; };
                };
                const OversampleSpec spec =
                    flavor == TransferFlavor::TL1 ? OversampleSpec{} : OversampleSpec{c.oversample_rate, bully};
                const std::string column = src_code + "/" + std::string(to_string(flavor));
                const auto report = cross_validate(target, trainer, c.folds, spec,
                                                   derive_seed(c.seed, "transfer-" + column + "-" + tgt_code), c.jobs,
                                                   column);
                const auto& pm = report.mean.per_class[static_cast<std::size_t>(positive)];
                table.set({"Precision", tgt_code}, column, pm.precision);
                table.set({"Recall", tgt_code}, column, pm.recall);
                table.set({"F1", tgt_code}, column, pm.f1);
                progress("transfer " + column + " -> " + tgt_code + " done");
                run.metrics().push_back({{"flavor", to_string(flavor)}, {"source", src_code}, {"target", tgt_code},
                                         {"precision", pm.precision}, {"recall", pm.recall}, {"f1", pm.f1},
                                         {"accuracy", report.mean.accuracy}});
            }
        }
    run.write("table8.tsv", render_tsv(table));
    return run.finish(render_aligned(table));
}

TrainedModel load_analysis_model(Run& run) {
    if (run.config().model.empty()) throw UsageError("no model given (set 'model')");
    const fs::path p = run.input(run.config().model, "model file");
    return load_model(p);
}

RunResult run_neighbors(Run& run) {
    const auto& c = run.config();
    if (c.model.empty()) throw UsageError("no model given (set 'model')");
    run.input(c.model, "model file");
    if (c.neighbors_words.empty()) throw UsageError("no query words (set 'neighbors_words')");
    for (const auto& w : c.neighbors_words) run.plan("neighbors " + w + " k=" + std::to_string(c.neighbors_k));
    if (run.dry_run()) return run.finish({});
    const TrainedModel model = load_analysis_model(run);
    const EmbeddingMatrix E = learned_embedding(model);
    std::string out = "query\trank\tword\tsimilarity\n";
    std::string text;
    for (const auto& q : c.neighbors_words) {
        const auto ns = nearest_neighbors(E, to_lower(q), c.neighbors_k);
        text += q + ":";
        json m{{"query", q}, {"neighbors", json::array()}};
        for (std::size_t r = 0; r < ns.size(); ++r) {
            out += q + "\t" + std::to_string(r + 1) + "\t" + ns[r].word + "\t" + format_double(ns[r].similarity) + "\n";
            text += " " + ns[r].word;
            m["neighbors"].push_back({{"word", ns[r].word}, {"similarity", ns[r].similarity}});
        }
        text += "\n";
        run.metrics().push_back(m);
    }
    run.write("neighbors.tsv", out);
    return run.finish(text);
}

RunResult run_tsne(Run& run) {
    const auto& c = run.config();
    if (c.model.empty()) throw UsageError("no model given (set 'model')");
    run.input(c.model, "model file");
    run.plan("tsne top " + std::to_string(c.tsne_top) + " words, perplexity " + format_double(c.tsne_perplexity));
    if (run.dry_run()) return run.finish({});
    const TrainedModel model = load_analysis_model(run);
    const EmbeddingMatrix E = learned_embedding(model);
    TsneOptions options;
    options.perplexity = c.tsne_perplexity;
    options.iterations = c.tsne_iterations;
    options.learning_rate = c.tsne_lr;
    const std::size_t top = std::min(c.tsne_top, E.size() - 2);
    const Projection2D proj = tsne_top_words(E, top, options, derive_seed(c.seed, "tsne"));
    run.write("tsne.tsv", format_projection(proj));
    const double kl = proj.kl_trace.empty() ? 0.0 : proj.kl_trace.back();
    run.metrics().push_back({{"words", proj.words.size()}, {"final_kl", kl}});
    return run.finish("projected " + std::to_string(proj.words.size()) + " words, final KL " + format_double(kl) +
                      "\n");
}

std::size_t infer_key_columns(std::string_view tsv) {
    std::vector<std::string> lines;
    for (auto& l : split(tsv, '\n'))
        if (!l.empty() && !l.starts_with("# ")) lines.push_back(l);
    if (lines.size() < 2) return 1;
    const auto header = split(lines[0], '\t');
    const auto first = split(lines[1], '\t');
    std::size_t k = 0;
    while (k < first.size() && k < header.size()) {
        const std::string& v = first[k];
        double d;
        const bool numeric = v == "-" || (std::from_chars(v.data(), v.data() + v.size(), d).ptr == v.data() + v.size() && !v.empty());
        if (numeric) break;
        ++k;
    }
    return std::max<std::size_t>(k, 1);
}

RunResult run_report(Run& run) {
    const fs::path dir = run.out_dir();
    if (!fs::is_directory(dir)) throw DataError("output directory not found: " + dir.string());
    std::vector<fs::path> tables;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.path().extension() == ".tsv" && entry.path().filename().string().starts_with("table"))
            tables.push_back(entry.path());
    std::sort(tables.begin(), tables.end());
    for (const auto& t : tables) run.plan("render " + t.string());
    if (run.dry_run()) return run.finish({});
    if (tables.empty()) throw DataError("no tables found in " + dir.string());
    // The report only reads; it leaves no manifest behind.
    std::string text;
    for (const auto& t : tables) {
        const std::string content = read_file(t);
        text += "[" + t.filename().string() + "]\n" + render_aligned(parse_tsv(content, infer_key_columns(content))) + "\n";
    }
    return {text, {}};
}

}  // namespace

const std::vector<std::string>& experiment_commands() {
    static const std::vector<std::string> commands{"ingest", "stats",     "baseline",  "train", "evaluate",
                                                   "transfer", "neighbors", "tsne", "report"};
    return commands;
}

RunResult run_experiment(std::string_view command, const ExperimentConfig& config, bool dry_run) {
    config.validate();
    Run run(std::string(command), config, dry_run);
    if (command == "ingest") return run_ingest(run);
    if (command == "stats") return run_stats(run);
    if (command == "baseline") return run_baseline(run);
    if (command == "train") return run_train(run);
    if (command == "evaluate") return run_evaluate(run);
    if (command == "transfer") return run_transfer(run);
    if (command == "neighbors") return run_neighbors(run);
    if (command == "tsne") return run_tsne(run);
    if (command == "report") return run_report(run);
    throw UsageError("unknown command '" + std::string(command) + "'");
}

}  // namespace cb
