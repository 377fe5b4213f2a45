#include "nnmodels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "binio.hpp"
#include "error.hpp"
#include "text.hpp"

namespace cb {

std::string_view to_string(Architecture a) {
    switch (a) {
        case Architecture::CNN: return "cnn";
        case Architecture::LSTM: return "lstm";
        case Architecture::BLSTM: return "blstm";
        case Architecture::BLSTM_ATTN: return "blstm_attn";
    }
    return "?";
}

std::string_view model_code(Architecture a) {
    switch (a) {
        case Architecture::CNN: return "M1";
        case Architecture::LSTM: return "M2";
        case Architecture::BLSTM: return "M3";
        case Architecture::BLSTM_ATTN: return "M4";
    }
    return "?";
}

std::string_view to_string(EmbedInit e) {
    switch (e) {
        case EmbedInit::Random: return "random";
        case EmbedInit::Glove: return "glove";
        case EmbedInit::Sswe: return "sswe";
    }
    return "?";
}

Architecture parse_architecture(std::string_view name) {
    const std::string n = to_lower(trim(name));
    if (n == "cnn" || n == "m1") return Architecture::CNN;
    if (n == "lstm" || n == "m2") return Architecture::LSTM;
    if (n == "blstm" || n == "m3") return Architecture::BLSTM;
    if (n == "blstm_attn" || n == "blstm-attn" || n == "m4") return Architecture::BLSTM_ATTN;
    throw UsageError("unknown architecture '" + std::string(name) + "' (expected cnn, lstm, blstm or blstm_attn)");
}

EmbedInit parse_embed_init(std::string_view name) {
    const std::string n = to_lower(trim(name));
    if (n == "random") return EmbedInit::Random;
    if (n == "glove") return EmbedInit::Glove;
    if (n == "sswe") return EmbedInit::Sswe;
    throw UsageError("unknown embedding init '" + std::string(name) + "' (expected random, glove or sswe)");
}

void ModelConfig::validate() const {
    if (!(dropout_pre >= 0 && dropout_pre < 1)) throw UsageError("dropout_pre must lie in [0, 1)");
    if (!(dropout_post >= 0 && dropout_post < 1)) throw UsageError("dropout_post must lie in [0, 1)");
    if (classes < 2) throw UsageError("a model needs at least 2 classes");
    if (embed_dim < 1 || hidden < 1) throw UsageError("embed_dim and hidden must be >= 1");
    if (max_len < 1) throw UsageError("max_len must be >= 1");
    if (epochs < 0 || batch < 1 || !(lr > 0)) throw UsageError("epochs, batch and lr must be positive");
    if (architecture == Architecture::CNN && (cnn_windows.empty() || cnn_filters < 1))
        throw UsageError("CNN needs at least one window and one filter");
    for (auto w : cnn_windows)
        if (w < 1) throw UsageError("CNN windows must be >= 1");
}

std::size_t ModelConfig::input_length() const {
    if (architecture != Architecture::CNN) return max_len;
    return std::max(max_len, *std::max_element(cnn_windows.begin(), cnn_windows.end()));
}

ad::IdBatch encode(std::span<const std::vector<std::string>> token_lists, const Vocabulary& vocab,
                   std::size_t max_len) {
    ad::IdBatch batch{token_lists.size(), max_len, std::vector<int>(token_lists.size() * max_len, Vocabulary::kPad)};
    for (std::size_t b = 0; b < token_lists.size(); ++b) {
        const auto& tokens = token_lists[b];
        if (tokens.empty()) {
            batch.ids[b * max_len] = Vocabulary::kOov;
            continue;
        }
        const std::size_t n = std::min(tokens.size(), max_len);
        for (std::size_t t = 0; t < n; ++t) batch.ids[b * max_len + t] = vocab.index_of(tokens[t]);
    }
    return batch;
}

ad::IdBatch encode(std::span<const Post> posts, const Vocabulary& vocab, std::size_t max_len) {
    std::vector<std::vector<std::string>> tokens;
    tokens.reserve(posts.size());
    for (const auto& p : posts) tokens.push_back(p.tokens);
    return encode(tokens, vocab, max_len);
}

namespace {

ad::LstmParams make_lstm(std::size_t in, std::size_t H, Rng& rng) {
    ad::LstmParams p;
    p.Wx = ad::glorot_uniform({in, 4 * H}, in, 4 * H, rng);
    p.Wh = ad::orthogonal(H, 4 * H, rng);
    p.b = ad::Tensor::zeros({4 * H});
    for (std::size_t j = H; j < 2 * H; ++j) p.b[j] = 1.0;
    return p;
}

}  // namespace

TrainedModel build_model(const ModelConfig& config, const Vocabulary& vocab, const EmbeddingMatrix& initial,
                         std::vector<std::string> label_space) {
    config.validate();
    if (initial.size() != vocab.size() || initial.dim != config.embed_dim)
        throw UsageError("embedding matrix is " + std::to_string(initial.size()) + "x" +
                         std::to_string(initial.dim) + " but the vocabulary has " + std::to_string(vocab.size()) +
                         " words and embed_dim is " + std::to_string(config.embed_dim));
    if (label_space.size() != config.classes)
        throw UsageError("label space size does not match config.classes");
    TrainedModel m;
    m.config_ = config;
    m.vocabulary_ = vocab;
    m.label_space_ = std::move(label_space);
    m.embedding_ = ad::Tensor({vocab.size(), config.embed_dim}, initial.rows);
    std::fill_n(m.embedding_.data(), config.embed_dim, 0.0);  // PAD row

    Rng rng(derive_seed(config.seed, "init"));
    const std::size_t d = config.embed_dim, H = config.hidden, C = config.classes;
    std::size_t features = 0;
    switch (config.architecture) {
        case Architecture::CNN:
            for (auto w : config.cnn_windows) {
                const std::size_t F = config.cnn_filters;
                m.conv_filters_.push_back(ad::glorot_uniform({w, d, F}, w * d, w * F, rng));
                m.conv_bias_.push_back(ad::Tensor::zeros({F}));
                features += F;
            }
            break;
        case Architecture::LSTM:
            m.forward_lstm_ = make_lstm(d, H, rng);
            features = H;
            break;
        case Architecture::BLSTM:
        case Architecture::BLSTM_ATTN:
            m.forward_lstm_ = make_lstm(d, H, rng);
            m.backward_lstm_ = make_lstm(d, H, rng);
            features = 2 * H;
            if (config.architecture == Architecture::BLSTM_ATTN) {
                m.attention_.W = ad::glorot_uniform({features, features}, features, features, rng);
                m.attention_.b = ad::Tensor::zeros({features});
                m.attention_.u = ad::glorot_uniform({features}, features, 1, rng);
            }
            break;
    }
    m.out_W_ = ad::glorot_uniform({features, C}, features, C, rng);
    m.out_b_ = ad::Tensor::zeros({C});
    return m;
}

std::vector<NamedTensor> TrainedModel::parameters() const {
    std::vector<NamedTensor> out{{"embedding", embedding_}};
    for (std::size_t i = 0; i < conv_filters_.size(); ++i) {
        out.push_back({"conv" + std::to_string(i) + ".filters", conv_filters_[i]});
        out.push_back({"conv" + std::to_string(i) + ".bias", conv_bias_[i]});
    }
    if (forward_lstm_.Wx.defined()) {
        out.push_back({"lstm_fwd.Wx", forward_lstm_.Wx});
        out.push_back({"lstm_fwd.Wh", forward_lstm_.Wh});
        out.push_back({"lstm_fwd.b", forward_lstm_.b});
    }
    if (backward_lstm_.Wx.defined()) {
        out.push_back({"lstm_bwd.Wx", backward_lstm_.Wx});
        out.push_back({"lstm_bwd.Wh", backward_lstm_.Wh});
        out.push_back({"lstm_bwd.b", backward_lstm_.b});
    }
    if (attention_.W.defined()) {
        out.push_back({"attention.W", attention_.W});
        out.push_back({"attention.b", attention_.b});
        out.push_back({"attention.u", attention_.u});
    }
    out.push_back({"output.W", out_W_});
    out.push_back({"output.b", out_b_});
    return out;
}

ad::Tensor TrainedModel::forward(ad::Tape& tape, const ad::IdBatch& ids, ad::Mode mode, Rng& rng) const {
    const ad::Tensor emb = ad::embedding_lookup(tape, ids, embedding_);
    const ad::Tensor x = ad::dropout(tape, emb, config_.dropout_pre, mode, rng);
    ad::Tensor features;
    switch (config_.architecture) {
        case Architecture::CNN: {
            std::vector<ad::Tensor> pooled;
            for (std::size_t i = 0; i < conv_filters_.size(); ++i)
                pooled.push_back(ad::conv1d_maxpool(tape, x, conv_filters_[i], conv_bias_[i]));
            features = pooled.size() == 1 ? pooled[0] : ad::concat(tape, pooled);
            break;
        }
        case Architecture::LSTM: {
            const auto mask = ids.mask();
            features = ad::run_sequence(tape, x, mask, forward_lstm_, nullptr, ad::Direction::Forward).final;
            break;
        }
        case Architecture::BLSTM: {
            const auto mask = ids.mask();
            features = ad::run_sequence(tape, x, mask, forward_lstm_, &backward_lstm_, ad::Direction::Both).final;
            break;
        }
        case Architecture::BLSTM_ATTN: {
            const auto mask = ids.mask();
            const auto seq = ad::run_sequence(tape, x, mask, forward_lstm_, &backward_lstm_, ad::Direction::Both);
            features = ad::attention_pool(tape, seq.outputs, mask, attention_).context;
            break;
        }
    }
    const ad::Tensor dropped = ad::dropout(tape, features, config_.dropout_post, mode, rng);
    return ad::dense(tape, dropped, out_W_, out_b_);
}

std::uint64_t TrainedModel::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : parameters()) {
        for (double v : p.tensor.values()) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            for (int k = 0; k < 8; ++k) {
                h ^= (bits >> (8 * k)) & 0xff;
                h *= 0x100000001b3ULL;
            }
        }
    }
    return h;
}

TrainedModel train_model(TrainedModel model, std::span<const Post> train_posts) {
    const ModelConfig& cfg = model.config_;
    const std::size_t L = cfg.input_length();
    for (const auto& p : train_posts)
        if (p.label < 0 || static_cast<std::size_t>(p.label) >= cfg.classes)
            throw UsageError("training post '" + p.id + "' has a label outside the model's label space");

    auto params = model.parameters();
    std::vector<ad::AdamState> adam;
    adam.reserve(params.size());
    for (const auto& p : params) {
        adam.emplace_back(p.tensor.size());
        adam.back().lr = cfg.lr;
    }
    const ad::IdBatch all = encode(train_posts, model.vocabulary_, L);
    std::vector<std::size_t> order(train_posts.size());
    model.loss_trace_.clear();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(cfg.seed, "epoch-shuffle", static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        Rng dropout_rng(derive_seed(cfg.seed, "dropout", static_cast<std::uint64_t>(epoch)));
        double loss_sum = 0;
        std::size_t seen = 0;
        for (std::size_t start = 0, batch_no = 0; start < order.size(); start += cfg.batch, ++batch_no) {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            ad::IdBatch ids{end - start, L, std::vector<int>((end - start) * L)};
            std::vector<int> labels;
            labels.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) {
                std::copy_n(all.ids.begin() + static_cast<std::ptrdiff_t>(order[i] * L), L,
                            ids.ids.begin() + static_cast<std::ptrdiff_t>((i - start) * L));
                labels.push_back(train_posts[order[i]].label);
            }
            ad::Tape tape;
            try {
                const ad::Tensor logits = model.forward(tape, ids, ad::Mode::Train, dropout_rng);
                auto out = ad::softmax_xent(tape, logits, labels);
                tape.backward(out.loss);
                loss_sum += out.loss[0] * static_cast<double>(labels.size());
                seen += labels.size();
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch + 1) + ", batch " +
                                   std::to_string(batch_no + 1) + "); training aborted");
            }
            // The PAD row is never updated.
            std::fill_n(model.embedding_.grad_data(), cfg.embed_dim, 0.0);
            for (std::size_t k = 0; k < params.size(); ++k) {
                if (k == 0 && cfg.freeze_embeddings) {
                    params[k].tensor.zero_grad();
                    continue;
                }
                ad::adam_update(params[k].tensor, adam[k]);
                params[k].tensor.zero_grad();
            }
        }
        const double mean = seen ? loss_sum / static_cast<double>(seen) : 0.0;
        if (!std::isfinite(mean))
            throw NumericError("non-finite mean loss in epoch " + std::to_string(epoch + 1) + "; training aborted");
        model.loss_trace_.push_back(mean);
    }
    return model;
}

Prediction predict(const TrainedModel& model, std::span<const Post> posts) {
    Prediction out;
    out.labels.reserve(posts.size());
    out.probabilities.reserve(posts.size());
    const std::size_t L = model.config().input_length();
    const std::size_t C = model.label_space().size();
    Rng unused(0);
    const std::size_t chunk = std::max<std::size_t>(model.config().batch, 1);
    for (std::size_t start = 0; start < posts.size(); start += chunk) {
        const auto part = posts.subspan(start, std::min(chunk, posts.size() - start));
        const auto ids = encode(part, model.vocabulary(), L);
        ad::Tape tape;
        const ad::Tensor probs = ad::softmax(model.forward(tape, ids, ad::Mode::Eval, unused));
        for (std::size_t b = 0; b < part.size(); ++b) {
            std::vector<double> p(probs.data() + b * C, probs.data() + (b + 1) * C);
            out.labels.push_back(static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()));
            out.probabilities.push_back(std::move(p));
        }
    }
    // Gradients written during eval passes are discarded.
    for (const auto& p : model.parameters()) p.tensor.zero_grad();
    return out;
}

EmbeddingMatrix learned_embedding(const TrainedModel& model) {
    return {model.vocabulary(), model.config().embed_dim, model.embedding().values()};
}

namespace {
constexpr std::uint32_t kModelFormatVersion = 1;
}

void save_model(const std::filesystem::path& path, const TrainedModel& m) {
    BinaryWriter w(path);
    w.magic("CBNN1");
    w.put<std::uint32_t>(kModelFormatVersion);
    const auto& c = m.config_;
    w.put<std::uint8_t>(static_cast<std::uint8_t>(c.architecture));
    w.put<std::uint64_t>(c.embed_dim);
    w.put<std::uint64_t>(c.hidden);
    w.put(c.dropout_pre);
    w.put(c.dropout_post);
    w.put<std::uint64_t>(c.classes);
    w.put<std::uint64_t>(c.max_len);
    w.put<std::int32_t>(c.epochs);
    w.put<std::uint64_t>(c.batch);
    w.put(c.lr);
    w.put<std::uint64_t>(c.seed);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(c.embed_init));
    w.put<std::uint8_t>(c.freeze_embeddings ? 1 : 0);
    std::vector<std::uint64_t> windows(c.cnn_windows.begin(), c.cnn_windows.end());
    w.put_vector(windows);
    w.put<std::uint64_t>(c.cnn_filters);
    w.put_strings(std::vector<std::string>(m.vocabulary_.words().begin() + 2, m.vocabulary_.words().end()));
    w.put_strings(m.label_space_);
    w.put_vector(m.loss_trace_);
    const auto params = m.parameters();
    w.put<std::uint64_t>(params.size());
    for (const auto& p : params) {
        w.put_string(p.name);
        std::vector<std::uint64_t> shape(p.tensor.shape().begin(), p.tensor.shape().end());
        w.put_vector(shape);
        w.put_vector(p.tensor.values());
    }
    w.finish();
}

TrainedModel load_model(const std::filesystem::path& path) {
    BinaryReader r(path);
    r.expect_magic("CBNN1");
    const auto version = r.get<std::uint32_t>();
    if (version != kModelFormatVersion)
        throw DataError(path.string() + ": unsupported CBNN1 version " + std::to_string(version));
    ModelConfig c;
    c.architecture = static_cast<Architecture>(r.get<std::uint8_t>());
    c.embed_dim = r.get<std::uint64_t>();
    c.hidden = r.get<std::uint64_t>();
    c.dropout_pre = r.get<double>();
    c.dropout_post = r.get<double>();
    c.classes = r.get<std::uint64_t>();
    c.max_len = r.get<std::uint64_t>();
    c.epochs = r.get<std::int32_t>();
    c.batch = r.get<std::uint64_t>();
    c.lr = r.get<double>();
    c.seed = r.get<std::uint64_t>();
    c.embed_init = static_cast<EmbedInit>(r.get<std::uint8_t>());
    c.freeze_embeddings = r.get<std::uint8_t>() != 0;
    const auto windows = r.get_vector<std::uint64_t>();
    c.cnn_windows.assign(windows.begin(), windows.end());
    c.cnn_filters = r.get<std::uint64_t>();
    const Vocabulary vocab(r.get_strings());
    auto labels = r.get_strings();
    auto trace = r.get_vector<double>();

    // Rebuild the layer layout, then overwrite every tensor with the stored values.
    TrainedModel m = build_model(c, vocab, EmbeddingMatrix{vocab, c.embed_dim, std::vector<double>(vocab.size() * c.embed_dim)},
                                 std::move(labels));
    m.loss_trace_ = std::move(trace);
    auto params = m.parameters();
    const auto count = r.get<std::uint64_t>();
    if (count != params.size()) throw DataError(path.string() + ": tensor count does not match the architecture");
    for (auto& p : params) {
        const auto name = r.get_string();
        const auto shape = r.get_vector<std::uint64_t>();
        auto values = r.get_vector<double>();
        if (name != p.name || std::vector<std::size_t>(shape.begin(), shape.end()) != p.tensor.shape() ||
            values.size() != p.tensor.size())
            throw DataError(path.string() + ": tensor '" + name + "' does not match the architecture");
        p.tensor.values() = std::move(values);
    }
    return m;
}

}  // namespace cb
