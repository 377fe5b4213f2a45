#include "cyberbully/cyberbully.h"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "embedspace.hpp"
#include "error.hpp"
#include "experiment.hpp"
#include "lexstats.hpp"
#include "nnmodels.hpp"

struct cb_config {
    cb::ExperimentConfig value;
};
struct cb_corpus {
    cb::LabeledCorpus value;
};
struct cb_model {
    cb::TrainedModel value;
    cb::EmbeddingMatrix embedding;
};

namespace {

thread_local std::string last_error;

cb_status fail(cb_status status, const char* what) {
    last_error = what;
    return status;
}

template <typename F>
cb_status guarded(F&& body) {
    last_error.clear();
    try {
        body();
        return CB_OK;
    } catch (const cb::Error& e) {
        switch (e.kind()) {
            case cb::Error::Kind::Usage: return fail(CB_ERR_USAGE, e.what());
            case cb::Error::Kind::Data: return fail(CB_ERR_DATA, e.what());
            case cb::Error::Kind::Numeric: return fail(CB_ERR_NUMERIC, e.what());
            case cb::Error::Kind::Internal: return fail(CB_ERR_INTERNAL, e.what());
        }
        return fail(CB_ERR_INTERNAL, e.what());
    } catch (const std::bad_alloc&) {
        return fail(CB_ERR_INTERNAL, "out of memory");
    } catch (const std::filesystem::filesystem_error& e) {
        return fail(CB_ERR_DATA, e.what());
    } catch (const std::exception& e) {
        return fail(CB_ERR_INTERNAL, e.what());
    }
}

char* copy_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void require(const void* p, const char* name) {
    if (!p) throw cb::UsageError(std::string(name) + " must not be NULL");
}

}  // namespace

extern "C" {

const char* cb_version(void) { return "1.0.0"; }

const char* cb_last_error(void) { return last_error.c_str(); }

void cb_string_free(char* s) { std::free(s); }

void cb_set_progress(cb_progress_fn fn, void* user) {
    if (!fn) {
        cb::set_progress_sink(nullptr);
        return;
    }
    cb::set_progress_sink([fn, user](std::string_view line) {
        const std::string s(line);
        fn(s.c_str(), user);
    });
}

cb_status cb_config_new(cb_config** out) {
    return guarded([&] {
        require(out, "out");
        *out = new cb_config{};
    });
}

cb_status cb_config_load(const char* path, cb_config** out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        *out = new cb_config{cb::parse_config(path)};
    });
}

cb_status cb_config_parse(const char* text, cb_config** out) {
    return guarded([&] {
        require(text, "text");
        require(out, "out");
        *out = new cb_config{cb::parse_config_text(text)};
    });
}

cb_status cb_config_set(cb_config* config, const char* key, const char* value) {
    return guarded([&] {
        require(config, "config");
        require(key, "key");
        require(value, "value");
        cb::set_config_value(config->value, key, value);
    });
}

cb_status cb_config_apply(cb_config* config, const char* assignment) {
    return guarded([&] {
        require(config, "config");
        require(assignment, "assignment");
        cb::apply_override(config->value, assignment);
    });
}

cb_status cb_config_format(const cb_config* config, char** out) {
    return guarded([&] {
        require(config, "config");
        require(out, "out");
        *out = copy_string(cb::format_config(config->value));
    });
}

void cb_config_free(cb_config* config) { delete config; }

cb_status cb_run(const char* command, const cb_config* config, int dry_run, char** out_text) {
    return guarded([&] {
        require(command, "command");
        require(config, "config");
        const cb::RunResult r = cb::run_experiment(command, config->value, dry_run != 0);
        if (out_text) *out_text = copy_string(r.text);
    });
}

const char* cb_commands(void) {
    static const std::string list = [] {
        std::string s;
        for (const auto& c : cb::experiment_commands()) s += (s.empty() ? "" : " ") + c;
        return s;
    }();
    return list.c_str();
}

cb_status cb_corpus_load(const char* path, cb_corpus** out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        if (!std::filesystem::exists(path)) throw cb::DataError(std::string("corpus file not found: ") + path);
        *out = new cb_corpus{cb::load_dataset(cb::sniff_platform(path), path)};
    });
}

size_t cb_corpus_size(const cb_corpus* corpus) { return corpus ? corpus->value.size() : 0; }

size_t cb_corpus_length_at_95(const cb_corpus* corpus) { return corpus ? corpus->value.length_at_95() : 0; }

size_t cb_corpus_vocabulary_size(const cb_corpus* corpus) { return corpus ? corpus->value.vocabulary_size() : 0; }

cb_status cb_corpus_stats(const cb_corpus* corpus, const char* lexicon_path, char** out) {
    return guarded([&] {
        require(corpus, "corpus");
        require(out, "out");
        const cb::WordSet lexicon = lexicon_path ? cb::load_lexicon(lexicon_path) : cb::default_swear_lexicon();
        std::string name(cb::to_string(corpus->value.platform()));
        name[0] = static_cast<char>(name[0] - 'a' + 'A');
        *out = copy_string(cb::format_stats_row(name, cb::conditional_stats(corpus->value, lexicon)));
    });
}

void cb_corpus_free(cb_corpus* corpus) { delete corpus; }

cb_status cb_model_load(const char* path, cb_model** out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        auto* m = new cb_model{cb::load_model(path), {}};
        m->embedding = cb::learned_embedding(m->value);
        *out = m;
    });
}

cb_status cb_model_predict(const cb_model* model, const char* text, char** label, double* probability) {
    return guarded([&] {
        require(model, "model");
        require(text, "text");
        require(label, "label");
        cb::Post post;
        post.tokens = cb::preprocess(text, cb::default_stopwords());
        const cb::Prediction p = cb::predict(model->value, std::span<const cb::Post>(&post, 1));
        const int c = p.labels.front();
        *label = copy_string(model->value.label_space().at(static_cast<std::size_t>(c)));
        if (probability) *probability = p.probabilities.front().at(static_cast<std::size_t>(c));
    });
}

cb_status cb_model_neighbors(const cb_model* model, const char* word, size_t k, char** out) {
    return guarded([&] {
        require(model, "model");
        require(word, "word");
        require(out, "out");
        std::string text;
        std::size_t rank = 0;
        for (const auto& n : cb::nearest_neighbors(model->embedding, cb::to_lower(word), k)) {
            char sim[32];
            std::snprintf(sim, sizeof sim, "%.4f", n.similarity);
            text += std::to_string(++rank) + "\t" + n.word + "\t" + sim + "\n";
        }
        *out = copy_string(text);
    });
}

void cb_model_free(cb_model* model) { delete model; }

}  // extern "C"
