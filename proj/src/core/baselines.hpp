#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "features.hpp"

namespace cb {

enum class BaselineKind { LR, NB, SVM, RF };

std::string_view to_string(BaselineKind k);
BaselineKind parse_baseline_kind(std::string_view name);

/// Hyperparameters for all four trainers. Keys accepted by `parse_hyper`
/// are the member names.
struct BaselineHyper {
    double l2 = 1e-4;
    int epochs = 100;        // LR gradient steps / SVM passes
    double tolerance = 1e-6; // LR stops when the relative loss change falls below this
    double nb_alpha = 1.0;
    int trees = 100;
    int max_depth = 20;
    int hash_dim = 4096;
    int min_samples_split = 2;
};

BaselineHyper parse_hyper(const std::map<std::string, std::string>& kv);

/// Decision tree node; leaves carry a class distribution.
struct TreeNode {
    std::int32_t feature = -1;
    double threshold = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::vector<double> distribution;
};

struct DecisionTree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root
};

class BaselineModel {
public:
    BaselineKind kind = BaselineKind::LR;
    std::vector<std::string> label_space;
    std::size_t dim = 0;  // feature index size at training time

    // LR / SVM: one row of dim+1 weights per class, bias last.
    std::vector<std::vector<double>> weights;
    // NB
    std::vector<double> log_prior;
    std::vector<std::vector<double>> log_likelihood;
    // RF
    int hash_dim = 4096;
    std::vector<DecisionTree> trees;

    // Training diagnostics (not serialized): LR loss after every accepted step.
    std::vector<double> loss_trace;

    std::size_t classes() const { return label_space.size(); }
    /// Per-class scores; argmax is the prediction.
    std::vector<double> scores(const SparseVec& x) const;
};

/// Mean L2-regularized multinomial logistic loss; exposed for the monotonicity check.
double logistic_loss(const std::vector<std::vector<double>>& weights, std::span<const SparseVec> X,
                     std::span<const int> y, double l2);

BaselineModel train_baseline(BaselineKind kind, std::span<const SparseVec> X, std::span<const int> y,
                             const std::vector<std::string>& label_space, std::size_t dim,
                             const BaselineHyper& hyper, std::uint64_t seed);

std::vector<int> predict_baseline(const BaselineModel& model, std::span<const SparseVec> X);

/// Versioned "CBBL1" file holding the feature index and the model.
void save_baseline(const std::filesystem::path& path, const BaselineModel& model, const FeatureIndex& index);
std::pair<BaselineModel, FeatureIndex> load_baseline(const std::filesystem::path& path);

}  // namespace cb
