#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "embedspace.hpp"
#include "eval.hpp"
#include "nnmodels.hpp"

namespace cb {

enum class TransferFlavor { TL1, TL2, TL3 };

std::string_view to_string(TransferFlavor f);
TransferFlavor parse_transfer_flavor(std::string_view name);

/// Every transfer runs on the binary {bully, none} space.
const std::vector<std::string>& transfer_label_space();
/// racism/sexism/bully -> bully, none -> none. Unknown names are a DataError.
std::string map_transfer_label(std::string_view label);
/// The corpus relabelled onto transfer_label_space().
LabeledCorpus map_labels(const LabeledCorpus& corpus);

struct TransferPlan {
    TransferFlavor flavor = TransferFlavor::TL2;
    Platform source = Platform::Wikipedia;
    Platform target = Platform::Formspring;
    std::map<std::string, std::string> label_mapping;  // source class -> target class

    /// Plan with the default collapse mapping; source == target is a UsageError.
    static TransferPlan make(TransferFlavor flavor, Platform source, Platform target);
};

struct AlignedEmbedding {
    EmbeddingMatrix matrix;
    double overlap = 0.0;     // shared words / target words, sentinels excluded
    std::size_t shared = 0;
};

/// Target-vocabulary matrix: shared words copy the source row, the rest are
/// seeded random rows, PAD is zero.
AlignedEmbedding align_vocab(const EmbeddingMatrix& source, const Vocabulary& target_vocab, std::uint64_t seed);

/// Source model applied unchanged to target posts; predictions are mapped
/// through the plan onto the target label space.
Metrics tl1_evaluate(const TrainedModel& source, const LabeledCorpus& target, const TransferPlan& plan);
/// Same, for a subset of target posts (one test fold).
std::vector<int> tl1_predict(const TrainedModel& source, std::span<const Post> posts,
                             const std::vector<std::string>& target_labels, const TransferPlan& plan);

/// New model on the target posts whose embedding starts from the source's
/// learned embedding aligned to the target vocabulary.
TrainedModel tl2_train(const TrainedModel& source, std::span<const Post> train,
                       const std::vector<std::string>& label_space, ModelConfig config, std::size_t min_count = 1);

/// As tl2_train, and every non-embedding layer starts from the source
/// weights. The output layer is copied only when class counts agree.
TrainedModel tl3_train(const TrainedModel& source, std::span<const Post> train,
                       const std::vector<std::string>& label_space, ModelConfig config, std::size_t min_count = 1);

/// tl3 initialisation without training (exposed for tests).
TrainedModel tl3_initial(const TrainedModel& source, std::span<const Post> train,
                         const std::vector<std::string>& label_space, ModelConfig config, std::size_t min_count = 1);

}  // namespace cb
