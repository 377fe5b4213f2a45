#include <doctest.h>

#include <cmath>

#include "error.hpp"
#include "helpers.hpp"
#include "nnmodels.hpp"

using namespace cb;

namespace {

ModelConfig small_config(Architecture arch) {
    ModelConfig c;
    c.architecture = arch;
    c.embed_dim = 8;
    c.hidden = 8;
    c.cnn_filters = 6;
    c.max_len = 8;
    c.epochs = 30;
    c.batch = 4;
    c.lr = 1e-2;
    c.seed = 3;
    return c;
}

TrainedModel fresh(const ModelConfig& c, const LabeledCorpus& corpus) {
    const Vocabulary vocab = build_vocabulary(corpus);
    return build_model(c, vocab, init_random(vocab, c.embed_dim, c.seed), corpus.label_space());
}

const Architecture kAll[] = {Architecture::CNN, Architecture::LSTM, Architecture::BLSTM, Architecture::BLSTM_ATTN};

}  // namespace

TEST_CASE("forward shapes") {
    const auto corpus = testutil::separable_corpus(20, 4, 1);
    for (Architecture a : kAll) {
        ModelConfig c = small_config(a);
        c.max_len = 62;
        const TrainedModel m = fresh(c, corpus);
        const auto ids = encode(std::span(corpus.posts()).first(4), m.vocabulary(), c.input_length());
        CHECK(ids.steps == c.input_length());
        ad::Tape tape;
        Rng rng(1);
        const ad::Tensor logits = m.forward(tape, ids, ad::Mode::Eval, rng);
        CHECK(logits.shape() == ad::Shape{4, 2});
    }
}

TEST_CASE("encode pads and maps unknown words") {
    const Vocabulary vocab(std::vector<std::string>{"a", "b"});
    const std::vector<std::vector<std::string>> lists{{"a", "zzz"}, {"b", "a", "b", "a"}};
    const auto ids = encode(lists, vocab, 3);
    CHECK(ids.batch == 2);
    CHECK(ids.steps == 3);
    CHECK(ids.ids == std::vector<int>{2, 1, 0, 3, 2, 3});
    CHECK(ids.mask() == std::vector<double>{1, 1, 0, 1, 1, 1});
}

TEST_CASE("configuration validation") {
    ModelConfig c = small_config(Architecture::LSTM);
    c.dropout_pre = 1.0;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = small_config(Architecture::LSTM);
    c.embed_dim = 0;
    CHECK_THROWS_AS(c.validate(), UsageError);
    CHECK(parse_architecture("blstm_attn") == Architecture::BLSTM_ATTN);
    CHECK(parse_embed_init("SSWE") == EmbedInit::Sswe);
    CHECK_THROWS_AS(parse_architecture("gru"), UsageError);
    CHECK(model_code(Architecture::CNN) == "M1");
    CHECK(model_code(Architecture::BLSTM_ATTN) == "M4");
}

TEST_CASE("every architecture overfits a tiny separable set") {
    const auto corpus = testutil::separable_corpus(20, 2, 5);
    for (Architecture a : kAll) {
        CAPTURE(to_string(a));
        const TrainedModel m = train_model(fresh(small_config(a), corpus), corpus.posts());
        const auto& trace = m.loss_trace();
        REQUIRE(trace.size() == 30);
        for (std::size_t e = 1; e < 5; ++e) CHECK(trace[e] < trace[e - 1]);
        const Prediction p = predict(m, corpus.posts());
        std::size_t right = 0;
        for (std::size_t i = 0; i < corpus.size(); ++i) right += p.labels[i] == corpus.posts()[i].label;
        CHECK(right == corpus.size());
    }
}

TEST_CASE("training is deterministic and probabilities are normalized") {
    const auto corpus = testutil::separable_corpus(24, 3, 9);
    for (Architecture a : kAll) {
        ModelConfig c = small_config(a);
        c.epochs = 3;
        const TrainedModel m1 = train_model(fresh(c, corpus), corpus.posts());
        const TrainedModel m2 = train_model(fresh(c, corpus), corpus.posts());
        CHECK(m1.checksum() == m2.checksum());
        CHECK(m1.loss_trace() == m2.loss_trace());

        std::vector<Post> odd{testutil::post({"qqq", "rrr", "sss"}, 0), testutil::post({"nice"}, 1)};
        const Prediction p = predict(m1, odd);
        for (const auto& row : p.probabilities) {
            REQUIRE(row.size() == 2);
            CHECK(std::abs(row[0] + row[1] - 1.0) < 1e-9);
            CHECK(std::isfinite(row[0]));
        }
    }
}

TEST_CASE("frozen embeddings stay fixed") {
    const auto corpus = testutil::separable_corpus(16, 2, 4);
    ModelConfig c = small_config(Architecture::LSTM);
    c.epochs = 2;
    c.freeze_embeddings = true;
    TrainedModel m = fresh(c, corpus);
    const auto before = m.embedding().values();
    const TrainedModel t = train_model(std::move(m), corpus.posts());
    CHECK(t.embedding().values() == before);
}

TEST_CASE("model files round-trip") {
    const auto corpus = testutil::separable_corpus(16, 2, 6);
    testutil::TempDir dir;
    for (Architecture a : kAll) {
        ModelConfig c = small_config(a);
        c.epochs = 2;
        const TrainedModel m = train_model(fresh(c, corpus), corpus.posts());
        const auto path = dir.path() / "m.cbnn1";
        save_model(path, m);
        const TrainedModel back = load_model(path);
        CHECK(back.checksum() == m.checksum());
        CHECK(back.vocabulary() == m.vocabulary());
        CHECK(back.label_space() == m.label_space());
        CHECK(predict(back, corpus.posts()).probabilities == predict(m, corpus.posts()).probabilities);
        const auto learned = learned_embedding(back);
        CHECK(learned.dim == c.embed_dim);
        CHECK(learned.rows == back.embedding().values());
    }
    CHECK_THROWS_AS(load_model(dir.write("junk.cbnn1", "CBNN0 not a model")), DataError);
    CHECK_THROWS_AS(load_model(dir.path() / "missing.cbnn1"), DataError);
}
