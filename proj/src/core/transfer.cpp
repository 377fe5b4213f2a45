#include "transfer.hpp"

#include <algorithm>

#include "error.hpp"
#include "rng.hpp"

namespace cb {

std::string_view to_string(TransferFlavor f) {
    switch (f) {
        case TransferFlavor::TL1: return "TL1";
        case TransferFlavor::TL2: return "TL2";
        case TransferFlavor::TL3: return "TL3";
    }
    return "?";
}

TransferFlavor parse_transfer_flavor(std::string_view name) {
    const std::string n = to_lower(name);
    if (n == "tl1") return TransferFlavor::TL1;
    if (n == "tl2") return TransferFlavor::TL2;
    if (n == "tl3") return TransferFlavor::TL3;
    throw UsageError("unknown transfer flavor '" + std::string(name) + "' (expected TL1, TL2 or TL3)");
}

const std::vector<std::string>& transfer_label_space() {
    static const std::vector<std::string> labels{"bully", "none"};
    return labels;
}

std::string map_transfer_label(std::string_view label) {
    if (label == "racism" || label == "sexism" || label == "attack" || label == "bully") return "bully";
    if (label == "none") return "none";
    throw DataError("label '" + std::string(label) + "' has no transfer mapping");
}

LabeledCorpus map_labels(const LabeledCorpus& corpus) {
    const auto& space = transfer_label_space();
    std::vector<int> remap;
    for (const auto& l : corpus.label_space()) {
        const std::string m = map_transfer_label(l);
        remap.push_back(static_cast<int>(std::find(space.begin(), space.end(), m) - space.begin()));
    }
    std::vector<Post> posts = corpus.posts();
    for (auto& p : posts) p.label = remap.at(static_cast<std::size_t>(p.label));
    return LabeledCorpus(corpus.platform(), space, std::move(posts), corpus.vocabulary_size_with_stopwords(),
                         corpus.dropped_empty());
}

TransferPlan TransferPlan::make(TransferFlavor flavor, Platform source, Platform target) {
    if (source == target) throw UsageError("transfer source and target must differ");
    TransferPlan plan;
    plan.flavor = flavor;
    plan.source = source;
    plan.target = target;
    for (const auto& l : platform_labels(source)) plan.label_mapping[l] = map_transfer_label(l);
    for (const auto& l : transfer_label_space()) plan.label_mapping[l] = l;
    return plan;
}

AlignedEmbedding align_vocab(const EmbeddingMatrix& source, const Vocabulary& target_vocab, std::uint64_t seed) {
    AlignedEmbedding out;
    out.matrix = init_random(target_vocab, source.dim, derive_seed(seed, "align"));
    for (std::size_t i = 2; i < target_vocab.size(); ++i) {
        const std::string& w = target_vocab.word(i);
        if (!source.vocabulary.contains(w)) continue;
        const auto src = source.row(static_cast<std::size_t>(source.vocabulary.index_of(w)));
        std::copy(src.begin(), src.end(), out.matrix.row(i).begin());
        ++out.shared;
    }
    const std::size_t words = target_vocab.size() - 2;
    out.overlap = words ? static_cast<double>(out.shared) / static_cast<double>(words) : 0.0;
    return out;
}

std::vector<int> tl1_predict(const TrainedModel& source, std::span<const Post> posts,
                             const std::vector<std::string>& target_labels, const TransferPlan& plan) {
    std::vector<int> class_map;
    for (const auto& l : source.label_space()) {
        auto it = plan.label_mapping.find(l);
        if (it == plan.label_mapping.end())
            throw DataError("source class '" + l + "' is not mapped onto the target label space");
        auto t = std::find(target_labels.begin(), target_labels.end(), it->second);
        if (t == target_labels.end())
            throw DataError("source class '" + l + "' maps to '" + it->second + "', absent from the target labels");
        class_map.push_back(static_cast<int>(t - target_labels.begin()));
    }
    const Prediction p = predict(source, posts);
    std::vector<int> out;
    out.reserve(p.labels.size());
    for (int c : p.labels) out.push_back(class_map.at(static_cast<std::size_t>(c)));
    return out;
}

Metrics tl1_evaluate(const TrainedModel& source, const LabeledCorpus& target, const TransferPlan& plan) {
    const auto pred = tl1_predict(source, target.posts(), target.label_space(), plan);
    const auto truth = target.labels();
    int positive = 0;
    for (std::size_t i = 0; i < target.label_space().size(); ++i)
        if (target.label_space()[i] != "none") {
            positive = static_cast<int>(i);
            break;
        }
    return metrics_from_confusion(confusion(truth, pred, target.label_space().size()), target.label_space(),
                                  positive);
}

namespace {

TrainedModel transferred_initial(const TrainedModel& source, std::span<const Post> train,
                                 const std::vector<std::string>& label_space, ModelConfig& config,
                                 std::size_t min_count) {
    if (config.embed_dim != source.config().embed_dim)
        throw UsageError("transfer: embedding dimension " + std::to_string(config.embed_dim) +
                         " does not match the source model's " + std::to_string(source.config().embed_dim));
    config.classes = label_space.size();
    const Vocabulary vocab = build_vocabulary(train, min_count);
    const AlignedEmbedding aligned = align_vocab(learned_embedding(source), vocab, config.seed);
    return build_model(config, vocab, aligned.matrix, label_space);
}

}  // namespace

TrainedModel tl2_train(const TrainedModel& source, std::span<const Post> train,
                       const std::vector<std::string>& label_space, ModelConfig config, std::size_t min_count) {
    return train_model(transferred_initial(source, train, label_space, config, min_count), train);
}

TrainedModel tl3_initial(const TrainedModel& source, std::span<const Post> train,
                         const std::vector<std::string>& label_space, ModelConfig config, std::size_t min_count) {
    if (config.architecture != source.config().architecture)
        throw UsageError("transfer: architecture " + std::string(to_string(config.architecture)) +
                         " does not match the source model's " +
                         std::string(to_string(source.config().architecture)));
    TrainedModel model = transferred_initial(source, train, label_space, config, min_count);
    const bool same_classes = source.label_space().size() == label_space.size();
    const auto from = source.parameters();
    for (auto& [name, tensor] : model.parameters()) {
        if (name == "embedding") continue;
        if (!same_classes && name.starts_with("output.")) continue;
        auto it = std::find_if(from.begin(), from.end(), [&](const NamedTensor& t) { return t.name == name; });
        if (it == from.end() || it->tensor.shape() != tensor.shape())
            throw UsageError("transfer: source layer '" + name + "' is missing or has a different shape");
        tensor.values() = it->tensor.values();
    }
    return model;
}

TrainedModel tl3_train(const TrainedModel& source, std::span<const Post> train,
                       const std::vector<std::string>& label_space, ModelConfig config, std::size_t min_count) {
    return train_model(tl3_initial(source, train, label_space, std::move(config), min_count), train);
}

}  // namespace cb
