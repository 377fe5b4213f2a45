#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "baselines.hpp"
#include "corpus.hpp"
#include "eval.hpp"
#include "features.hpp"
#include "nnmodels.hpp"
#include "transfer.hpp"

namespace cb {

/// Every setting an experiment can use. Relative paths resolve against
/// CB_DATA_DIR when that variable is set.
struct ExperimentConfig {
    // data
    std::vector<std::string> corpus;
    std::string stopwords;  // empty: bundled list
    std::string lexicon;    // empty: bundled list
    std::size_t subsample = 0;
    std::size_t min_count = 1;
    int folds = 5;
    std::uint64_t seed = 1;

    // deep models
    std::vector<Architecture> architecture{Architecture::BLSTM_ATTN};
    std::vector<EmbedInit> embed_init{EmbedInit::Random};
    std::string glove_path;
    std::string sswe_path;
    std::size_t embed_dim = 50;
    std::size_t hidden = 50;
    double dropout_pre = 0.25;
    double dropout_post = 0.5;
    int epochs = 10;
    std::size_t batch = 128;
    double lr = 1e-3;
    bool freeze_embeddings = false;
    std::size_t cnn_filters = 100;
    std::vector<std::size_t> cnn_windows{3, 4, 5};
    int oversample_rate = 3;
    std::string oversample = "both";  // on | off | both

    // baselines
    std::vector<BaselineKind> baseline_models{BaselineKind::LR, BaselineKind::SVM, BaselineKind::RF,
                                              BaselineKind::NB};
    std::vector<FeatureKind> features{FeatureKind::CharNgram, FeatureKind::WordUnigram};
    int ngram_min = 2;
    int ngram_max = 4;
    BaselineHyper hyper;

    // transfer
    std::vector<TransferFlavor> transfer_flavors{TransferFlavor::TL1, TransferFlavor::TL2, TransferFlavor::TL3};

    // embedding analysis
    std::string model;
    std::vector<std::string> neighbors_words{"fat", "slave"};
    std::size_t neighbors_k = 10;
    std::size_t tsne_top = 1000;
    double tsne_perplexity = 30.0;
    int tsne_iterations = 1000;
    double tsne_lr = 200.0;

    // ingestion
    std::string ingest_platform;
    std::string ingest_input;
    std::string ingest_annotations;

    // run
    std::string output_dir = "runs/default";
    int jobs = 1;

    /// Range and consistency checks; throws UsageError.
    void validate() const;
    /// Model settings for one architecture/initialisation pair.
    ModelConfig model_config(Architecture arch, EmbedInit init) const;
    /// Oversampling variants requested ({false}, {true} or {false, true}).
    std::vector<bool> oversample_variants() const;
};

/// Apply one `key = value` assignment; `where` prefixes error messages.
void set_config_value(ExperimentConfig& config, std::string_view key, std::string_view value,
                      const std::string& where = {});
/// Apply a `key=value` override as given on the command line.
void apply_override(ExperimentConfig& config, std::string_view assignment);
ExperimentConfig parse_config_text(std::string_view text, const std::string& source = "config");
/// Reads a `key = value` file, or the config recorded in a run manifest (.json).
ExperimentConfig parse_config(const std::filesystem::path& path);
/// Every key with its resolved value, one per line, in a form parse_config_text accepts.
std::string format_config(const ExperimentConfig& config);
std::vector<std::string> config_keys();

/// Path as written, or under CB_DATA_DIR when relative and that directory is set.
std::filesystem::path resolve_data_path(const std::string& path);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Short dataset name: F, T or W, with "+" when oversampled.
std::string dataset_code(Platform p, bool oversampled = false);

/// Stratified random subset of at most n posts (n = 0 keeps everything).
LabeledCorpus subsample_corpus(const LabeledCorpus& corpus, std::size_t n, std::uint64_t seed);

struct RunResult {
    std::string text;                               // what the command prints
    std::vector<std::filesystem::path> outputs;     // files written
};

/// Runs a subcommand: ingest, stats, baseline, train, evaluate, transfer,
/// neighbors, tsne or report. With `dry_run` only the resolved plan is returned.
RunResult run_experiment(std::string_view command, const ExperimentConfig& config, bool dry_run = false);
const std::vector<std::string>& experiment_commands();

/// Receives one line per completed unit of work (fold, model, table). Not
/// called when unset. Must be thread-safe.
void set_progress_sink(std::function<void(std::string_view)> sink);

}  // namespace cb
