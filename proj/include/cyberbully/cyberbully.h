/* C interface to the cyberbullying detection library.
 *
 * Every function returning cb_status leaves a message for the calling thread
 * in cb_last_error() when it fails. Strings handed out through char** outputs
 * belong to the caller and are released with cb_string_free.
 */
#ifndef CYBERBULLY_H
#define CYBERBULLY_H

#include <stddef.h>

#if defined(_WIN32)
#  if defined(CB_BUILDING_LIBRARY)
#    define CB_API __declspec(dllexport)
#  else
#    define CB_API __declspec(dllimport)
#  endif
#else
#  define CB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cb_status {
    CB_OK = 0,
    CB_ERR_USAGE = 1,    /* bad arguments, unknown keys or commands */
    CB_ERR_DATA = 2,     /* missing or malformed input files */
    CB_ERR_NUMERIC = 3,  /* non-finite values during training */
    CB_ERR_INTERNAL = 4
} cb_status;

typedef struct cb_config cb_config;
typedef struct cb_corpus cb_corpus;
typedef struct cb_model cb_model;

typedef void (*cb_progress_fn)(const char* line, void* user);

CB_API const char* cb_version(void);
/* Message of the last failure on this thread; empty when none. */
CB_API const char* cb_last_error(void);
CB_API void cb_string_free(char* s);
/* Route progress lines (one per fold, model or table) to fn; NULL disables. */
CB_API void cb_set_progress(cb_progress_fn fn, void* user);

/* Experiment configuration: `key = value` lines, '#' comments. */
CB_API cb_status cb_config_new(cb_config** out);
CB_API cb_status cb_config_load(const char* path, cb_config** out);
CB_API cb_status cb_config_parse(const char* text, cb_config** out);
CB_API cb_status cb_config_set(cb_config* config, const char* key, const char* value);
/* "key=value" as given on a command line. */
CB_API cb_status cb_config_apply(cb_config* config, const char* assignment);
CB_API cb_status cb_config_format(const cb_config* config, char** out);
CB_API void cb_config_free(cb_config* config);

/* Runs ingest, stats, baseline, train, evaluate, transfer, neighbors, tsne or
 * report. out_text receives what the command reports (may be NULL). */
CB_API cb_status cb_run(const char* command, const cb_config* config, int dry_run, char** out_text);
/* Space-separated list of the commands cb_run accepts. */
CB_API const char* cb_commands(void);

/* Canonical corpus files (id, platform, label, anonymous, text). */
CB_API cb_status cb_corpus_load(const char* path, cb_corpus** out);
CB_API size_t cb_corpus_size(const cb_corpus* corpus);
CB_API size_t cb_corpus_length_at_95(const cb_corpus* corpus);
CB_API size_t cb_corpus_vocabulary_size(const cb_corpus* corpus);
/* Tab-separated swear/anonymity statistics row; lexicon NULL uses the bundled list. */
CB_API cb_status cb_corpus_stats(const cb_corpus* corpus, const char* lexicon_path, char** out);
CB_API void cb_corpus_free(cb_corpus* corpus);

/* Trained deep model files. */
CB_API cb_status cb_model_load(const char* path, cb_model** out);
/* Class label for raw text and its probability. */
CB_API cb_status cb_model_predict(const cb_model* model, const char* text, char** label, double* probability);
/* "rank\tword\tsimilarity" lines for the k nearest words. */
CB_API cb_status cb_model_neighbors(const cb_model* model, const char* word, size_t k, char** out);
CB_API void cb_model_free(cb_model* model);

#ifdef __cplusplus
}
#endif

#endif
