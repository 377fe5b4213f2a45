// Command-line front end; everything goes through the C API.
#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cyberbully/cyberbully.h"

namespace {

int exit_code(cb_status s) {
    switch (s) {
        case CB_OK: return 0;
        case CB_ERR_USAGE: return 1;
        case CB_ERR_DATA: return 2;
        default: return 3;
    }
}

struct Options {
    std::string config;
    std::vector<std::string> sets;
    bool dry_run = false;
    bool quiet = false;
    int jobs = 0;
    std::string output;
    std::vector<std::string> corpus;
    std::string lexicon;
    std::string model;
    std::vector<std::string> words;
    int k = 0;
    std::string architecture;
    std::string embed_init;
    std::string platform;
    std::string input;
    std::string annotations;
};

void add_common(CLI::App* cmd, Options& o) {
    cmd->add_option("--config,-c", o.config, "experiment config file (key = value) or run manifest");
    cmd->add_option("--set,-s", o.sets, "override a config key, key=value (repeatable)");
    cmd->add_flag("--dry-run", o.dry_run, "print the resolved plan without running it");
    cmd->add_option("--jobs,-j", o.jobs, "concurrent fold jobs")->check(CLI::PositiveNumber);
    cmd->add_option("--output,-o", o.output, "output directory");
    cmd->add_flag("--quiet,-q", o.quiet, "no progress lines on stderr");
}

int report(cb_status s) {
    if (s != CB_OK) std::cerr << "error: " << cb_last_error() << "\n";
    return exit_code(s);
}

void print_progress(const char* line, void*) { std::fprintf(stderr, "  %s\n", line); }

int run(const std::string& command, const Options& o) {
    cb_config* config = nullptr;
    cb_status s = o.config.empty() ? cb_config_new(&config) : cb_config_load(o.config.c_str(), &config);
    if (s != CB_OK) return report(s);

    std::vector<std::pair<std::string, std::string>> settings;
    auto joined = [](const std::vector<std::string>& v) {
        std::string out;
        for (const auto& x : v) out += (out.empty() ? "" : ",") + x;
        return out;
    };
    if (!o.corpus.empty()) settings.emplace_back("corpus", joined(o.corpus));
    if (!o.lexicon.empty()) settings.emplace_back("lexicon", o.lexicon);
    if (!o.model.empty()) settings.emplace_back("model", o.model);
    if (!o.words.empty()) settings.emplace_back("neighbors_words", joined(o.words));
    if (o.k > 0) settings.emplace_back("neighbors_k", std::to_string(o.k));
    if (!o.architecture.empty()) settings.emplace_back("architecture", o.architecture);
    if (!o.embed_init.empty()) settings.emplace_back("embed_init", o.embed_init);
    if (!o.platform.empty()) settings.emplace_back("ingest_platform", o.platform);
    if (!o.input.empty()) settings.emplace_back("ingest_input", o.input);
    if (!o.annotations.empty()) settings.emplace_back("ingest_annotations", o.annotations);
    if (!o.output.empty()) settings.emplace_back("output_dir", o.output);
    if (o.jobs > 0) settings.emplace_back("jobs", std::to_string(o.jobs));
    for (const auto& [key, value] : settings)
        if ((s = cb_config_set(config, key.c_str(), value.c_str())) != CB_OK) break;
    for (const auto& a : o.sets) {
        if (s != CB_OK) break;
        s = cb_config_apply(config, a.c_str());
    }
    if (s != CB_OK) {
        cb_config_free(config);
        return report(s);
    }

    if (!o.quiet) cb_set_progress(print_progress, nullptr);
    char* text = nullptr;
    s = cb_run(command.c_str(), config, o.dry_run ? 1 : 0, &text);
    cb_set_progress(nullptr, nullptr);
    if (text) {
        std::cout << text;
        cb_string_free(text);
    }
    cb_config_free(config);
    return report(s);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cyberbullying detection experiments"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(cb_version()));

    Options o;
    std::map<std::string, std::string> help{
        {"ingest", "convert a raw platform export to the canonical corpus format"},
        {"stats", "swear word and anonymity statistics"},
        {"baseline", "cross-validated traditional models"},
        {"train", "train deep models on whole corpora and save them"},
        {"evaluate", "cross-validated deep models"},
        {"transfer", "transfer learning across corpora"},
        {"neighbors", "nearest words in a model's learned embedding"},
        {"tsne", "2-D projection of a model's most frequent words"},
        {"report", "render every table in an output directory"},
    };
    std::vector<std::pair<std::string, CLI::App*>> commands;
    for (const std::string name : {"ingest", "stats", "baseline", "train", "evaluate", "transfer", "neighbors", "tsne",
                                   "report"}) {
        CLI::App* cmd = app.add_subcommand(name, help[name]);
        add_common(cmd, o);
        commands.emplace_back(name, cmd);
        if (name == "ingest") {
            cmd->add_option("--platform", o.platform, "formspring, twitter or wikipedia");
            cmd->add_option("--input", o.input, "raw export file");
            cmd->add_option("--annotations", o.annotations, "per-worker annotation file (wikipedia)");
        }
        if (name == "stats" || name == "baseline" || name == "train" || name == "evaluate" || name == "transfer")
            cmd->add_option("--corpus", o.corpus, "canonical corpus file (repeatable)");
        if (name == "stats") cmd->add_option("--lexicon", o.lexicon, "swear word list");
        if (name == "train" || name == "evaluate" || name == "transfer") {
            cmd->add_option("--architecture", o.architecture, "CNN, LSTM, BLSTM, BLSTM_ATTN (comma list)");
            cmd->add_option("--embed-init", o.embed_init, "random, glove, sswe (comma list)");
        }
        if (name == "neighbors" || name == "tsne") cmd->add_option("--model", o.model, "trained model file");
        if (name == "neighbors") {
            cmd->add_option("--word", o.words, "query word (repeatable)");
            cmd->add_option("--k", o.k, "neighbors per word")->check(CLI::PositiveNumber);
        }
    }

    if (argc > 1 && argv[1][0] != '-') {
        bool known = false;
        for (const auto& [name, cmd] : commands) known = known || name == argv[1];
        if (!known) {
            std::cerr << "error: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
            return 1;
        }
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }
    for (const auto& [name, cmd] : commands)
        if (cmd->parsed()) return run(name, o);
    std::cerr << app.help();
    return 1;
}
