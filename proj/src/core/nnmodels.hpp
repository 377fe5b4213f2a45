#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "autodiff.hpp"
#include "corpus.hpp"
#include "embedspace.hpp"

namespace cb {

enum class Architecture { CNN, LSTM, BLSTM, BLSTM_ATTN };
enum class EmbedInit { Random, Glove, Sswe };

std::string_view to_string(Architecture a);
std::string_view to_string(EmbedInit e);
Architecture parse_architecture(std::string_view name);
EmbedInit parse_embed_init(std::string_view name);
/// Short model names M1..M4.
std::string_view model_code(Architecture a);

struct ModelConfig {
    Architecture architecture = Architecture::BLSTM_ATTN;
    std::size_t embed_dim = 50;
    std::size_t hidden = 50;
    double dropout_pre = 0.25;
    double dropout_post = 0.5;
    std::size_t classes = 2;
    std::size_t max_len = 0;  // set from the corpus's length_at_95
    int epochs = 10;
    std::size_t batch = 128;
    double lr = 1e-3;
    std::uint64_t seed = 1;
    EmbedInit embed_init = EmbedInit::Random;
    bool freeze_embeddings = false;
    std::vector<std::size_t> cnn_windows{3, 4, 5};
    std::size_t cnn_filters = 100;

    void validate() const;
    /// Sequence length fed to the network (CNN needs at least the widest window).
    std::size_t input_length() const;
};

struct NamedTensor {
    std::string name;
    ad::Tensor tensor;
};

/// Network parameters plus the vocabulary and label space they were built for.
class TrainedModel {
public:
    TrainedModel() = default;

    const ModelConfig& config() const { return config_; }
    const Vocabulary& vocabulary() const { return vocabulary_; }
    const std::vector<std::string>& label_space() const { return label_space_; }
    const std::vector<double>& loss_trace() const { return loss_trace_; }

    ad::Tensor& embedding() { return embedding_; }
    const ad::Tensor& embedding() const { return embedding_; }

    /// All trainable tensors in a fixed order; the embedding is first.
    std::vector<NamedTensor> parameters() const;

    /// Logits [B, classes] for an encoded batch.
    ad::Tensor forward(ad::Tape& tape, const ad::IdBatch& ids, ad::Mode mode, Rng& rng) const;

    /// FNV-1a over every parameter value; used to assert that evaluation writes nothing.
    std::uint64_t checksum() const;

private:
    friend TrainedModel build_model(const ModelConfig&, const Vocabulary&, const EmbeddingMatrix&,
                                    std::vector<std::string>);
    friend TrainedModel train_model(TrainedModel, std::span<const Post>);
    friend void save_model(const std::filesystem::path&, const TrainedModel&);
    friend TrainedModel load_model(const std::filesystem::path&);

    ModelConfig config_;
    Vocabulary vocabulary_;
    std::vector<std::string> label_space_;
    std::vector<double> loss_trace_;

    ad::Tensor embedding_;
    std::vector<ad::Tensor> conv_filters_;
    std::vector<ad::Tensor> conv_bias_;
    ad::LstmParams forward_lstm_;
    ad::LstmParams backward_lstm_;
    ad::AttentionParams attention_;
    ad::Tensor out_W_;
    ad::Tensor out_b_;
};

/// Right-padded (PAD = 0) and truncated id matrix; unknown words map to OOV
/// and a post with no tokens becomes a single OOV token.
ad::IdBatch encode(std::span<const Post> posts, const Vocabulary& vocab, std::size_t max_len);
ad::IdBatch encode(std::span<const std::vector<std::string>> token_lists, const Vocabulary& vocab,
                   std::size_t max_len);

/// Initial network for a config. Glorot-uniform input weights, orthogonal
/// recurrent weights, zero biases except a forget-gate bias of 1.
TrainedModel build_model(const ModelConfig& config, const Vocabulary& vocab, const EmbeddingMatrix& initial,
                         std::vector<std::string> label_space);

/// Mini-batch Adam over seeded shuffles; records the mean loss per epoch.
TrainedModel train_model(TrainedModel model, std::span<const Post> train_posts);

struct Prediction {
    std::vector<int> labels;
    std::vector<std::vector<double>> probabilities;
};

/// Eval-mode forward pass; deterministic.
Prediction predict(const TrainedModel& model, std::span<const Post> posts);

/// The model's current embedding table as an EmbeddingMatrix.
EmbeddingMatrix learned_embedding(const TrainedModel& model);

/// Versioned "CBNN1" file: config, vocabulary, label space, loss trace, tensors.
void save_model(const std::filesystem::path& path, const TrainedModel& model);
TrainedModel load_model(const std::filesystem::path& path);

}  // namespace cb
