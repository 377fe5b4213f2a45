#include <doctest.h>

#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "error.hpp"
#include "experiment.hpp"
#include "helpers.hpp"

using namespace cb;

namespace {

std::string canonical_corpus(std::size_t n) {
    const auto c = testutil::separable_corpus(n, 5, 3);
    std::string out = "id\tplatform\tlabel\tanonymous\ttext\n";
    for (const auto& p : c.posts()) {
        out += p.id + "\tformspring\t" + c.label_space()[static_cast<std::size_t>(p.label)] + "\t" +
               (p.id.back() % 2 ? "1" : "0") + "\t";
        for (std::size_t i = 0; i < p.tokens.size(); ++i) out += (i ? " " : "") + p.tokens[i];
        out += "\n";
    }
    return out;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("empty config gives the defaults") {
    const ExperimentConfig c = parse_config_text("");
    CHECK(c.embed_dim == 50);
    CHECK(c.hidden == 50);
    CHECK(c.dropout_pre == 0.25);
    CHECK(c.dropout_post == 0.5);
    CHECK(c.epochs == 10);
    CHECK(c.batch == 128);
    CHECK(c.lr == 1e-3);
    CHECK(c.folds == 5);
    CHECK(c.oversample_rate == 3);
    CHECK(c.architecture == std::vector<Architecture>{Architecture::BLSTM_ATTN});
    const ModelConfig m = c.model_config(Architecture::CNN, EmbedInit::Glove);
    CHECK(m.architecture == Architecture::CNN);
    CHECK(m.embed_init == EmbedInit::Glove);
    CHECK(m.embed_dim == 50);
}

TEST_CASE("config parsing") {
    const ExperimentConfig c = parse_config_text("# comment\nembed_dim = 100\n\narchitecture = cnn, lstm\noversample=off\n");
    CHECK(c.embed_dim == 100);
    CHECK(c.architecture == std::vector<Architecture>{Architecture::CNN, Architecture::LSTM});
    CHECK(c.oversample_variants() == std::vector<bool>{false});
    CHECK(parse_config_text("").oversample_variants() == std::vector<bool>{false, true});

    std::string what;
    try {
        parse_config_text("epochs = 2\ndropout_pre = 1.5\n", "bad.cfg");
    } catch (const UsageError& e) {
        what = e.what();
    }
    CHECK(what.find("bad.cfg:2:") == 0);
    CHECK(what.find("dropout_pre") != std::string::npos);

    CHECK_THROWS_AS(parse_config_text("no_such_key = 1\n"), UsageError);
    CHECK_THROWS_AS(parse_config_text("embed_dim = many\n"), UsageError);
    CHECK_THROWS_AS(parse_config_text("just words\n"), UsageError);

    ExperimentConfig o;
    apply_override(o, "epochs=3");
    CHECK(o.epochs == 3);
    CHECK_THROWS_AS(apply_override(o, "epochs"), UsageError);

    // formatting is a fixed point of parsing
    const std::string text = format_config(c);
    CHECK(format_config(parse_config_text(text)) == text);
    for (const auto& k : config_keys()) CHECK(text.find(k + " = ") != std::string::npos);
}

TEST_CASE("checksums and dataset codes") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(dataset_code(Platform::Formspring) == "F");
    CHECK(dataset_code(Platform::Twitter, true) == "T+");
    CHECK(dataset_code(Platform::Wikipedia, true) == "W+");
}

TEST_CASE("stratified subsample") {
    const auto c = testutil::separable_corpus(200, 5, 1);
    const auto s = subsample_corpus(c, 50, 3);
    CHECK(s.size() == 50);
    std::size_t bully = 0;
    for (const auto& p : s.posts()) bully += p.label == 0;
    CHECK(bully == 10);
    CHECK(subsample_corpus(c, 0, 3).size() == 200);
}

TEST_CASE("runs write tables and a re-parseable manifest") {
    testutil::TempDir dir;
    const auto corpus = dir.write("formspring.tsv", canonical_corpus(100));
    ExperimentConfig c;
    c.corpus = {corpus.string()};
    c.output_dir = (dir.path() / "out").string();
    c.baseline_models = {BaselineKind::LR, BaselineKind::NB};
    c.features = {FeatureKind::WordUnigram};

    const RunResult dry = run_experiment("baseline", c, true);
    CHECK(dry.outputs.empty());
    CHECK_FALSE(std::filesystem::exists(dir.path() / "out"));

    const RunResult r = run_experiment("baseline", c);
    CHECK(std::filesystem::exists(dir.path() / "out" / "table3.tsv"));
    const auto manifest_path = dir.path() / "out" / "manifest.json";
    const auto manifest = nlohmann::json::parse(slurp(manifest_path));
    CHECK(manifest["command"] == "baseline");
    CHECK(manifest["inputs"][0]["sha256"] == sha256_file(corpus));
    CHECK(format_config(parse_config(manifest_path)) == format_config(c));

    const ResultTable t = parse_tsv(slurp(dir.path() / "out" / "table3.tsv"), 2);
    const auto f1 = t.get({"Formspring", "bully"}, "word/LR");
    REQUIRE(f1.has_value());
    CHECK(*f1 > 0.8);

    CHECK_THROWS_AS(run_experiment("fly", c), UsageError);
    c.corpus = {(dir.path() / "missing.tsv").string()};
    CHECK_THROWS_AS(run_experiment("stats", c), DataError);
}
