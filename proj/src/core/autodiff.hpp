#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "rng.hpp"

namespace cb::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);

/// Shared handle to a value array and a gradient array of the same shape.
/// Copies alias the same storage; use `clone()` for a deep copy.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }

    std::vector<double>& values() { return node_->value; }
    const std::vector<double>& values() const { return node_->value; }
    // Gradients are writable through const handles: backward closures hold
    // const copies of the handles and accumulate into shared storage. The
    // zero-filled buffer is allocated on first access.
    std::vector<double>& grad() const {
        if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
        return node_->grad;
    }

    double* data() { return node_->value.data(); }
    const double* data() const { return node_->value.data(); }
    double* grad_data() const { return grad().data(); }

    double& operator[](std::size_t i) { return node_->value[i]; }
    double operator[](std::size_t i) const { return node_->value[i]; }

    void zero_grad() const;
    Tensor clone() const;
    bool same(const Tensor& other) const { return node_ == other.node_; }

    /// Throws NumericError naming `where` if any value is NaN or infinite.
    void ensure_finite(std::string_view where) const;
    void ensure_finite_grad(std::string_view where) const;

private:
    struct Node {
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;
    };
    std::shared_ptr<Node> node_;
};

/// Records backward closures during a forward pass and replays them in reverse.
class Tape {
public:
    void record(std::function<void()> backward) { ops_.push_back(std::move(backward)); }
    void track(const Tensor& t) { tracked_.push_back(t); }

    /// Seeds d(loss)/d(loss) = 1 for a single-element loss and runs every
    /// recorded closure in reverse. Gradients of tracked tensors are then
    /// checked for NaN/Inf.
    void backward(Tensor& loss);
    /// Same, with the output gradient already seeded by the caller.
    void backward_seeded();

    void clear() {
        ops_.clear();
        tracked_.clear();
    }
    std::size_t size() const { return ops_.size(); }

private:
    std::vector<std::function<void()>> ops_;
    std::vector<Tensor> tracked_;
};

/// Integer ids of shape [B, T] (row-major) with PAD = 0.
struct IdBatch {
    std::size_t batch = 0;
    std::size_t steps = 0;
    std::vector<int> ids;

    int at(std::size_t b, std::size_t t) const { return ids[b * steps + t]; }
    /// 1.0 where the id is not PAD.
    std::vector<double> mask() const;
};

// -- Operations ------------------------------------------------------------
// Every operation computes its forward value immediately and records the
// backward closure on the tape. Gradients accumulate (+=) into inputs.

/// y = x W + b with x [B,I], W [I,O], b [O].
Tensor dense(Tape& tape, const Tensor& x, const Tensor& W, const Tensor& b);

/// Row gather from E [V,d] -> [B,T,d]; backward scatter-adds into E.
Tensor embedding_lookup(Tape& tape, const IdBatch& ids, const Tensor& E);

/// Valid 1-D convolution over time with filters [w,d,F], ReLU, then global max-pool -> [B,F].
Tensor conv1d_maxpool(Tape& tape, const Tensor& x, const Tensor& filters, const Tensor& bias);

/// Gate order in the packed weights is input, forget, cell, output.
struct LstmParams {
    Tensor Wx;  // [d, 4H]
    Tensor Wh;  // [H, 4H]
    Tensor b;   // [4H]

    std::size_t hidden() const { return Wh.dim(0); }
    std::size_t input() const { return Wx.dim(0); }
};

struct LstmState {
    Tensor h;
    Tensor c;
};

LstmState lstm_step(Tape& tape, const Tensor& x_t, const Tensor& h_prev, const Tensor& c_prev,
                    const LstmParams& p);

enum class Direction { Forward, Backward, Both };

struct SequenceOutput {
    Tensor outputs;  // [B, T, H] or [B, T, 2H]; zero at PAD positions
    Tensor final;    // [B, H] or [B, 2H]; forward part = state at the last non-PAD step
};

/// Unrolled LSTM. PAD steps (mask 0) carry the state through unchanged and
/// emit zeros. The backward direction writes its output for step t at position t.
SequenceOutput run_sequence(Tape& tape, const Tensor& x, std::span<const double> mask, const LstmParams& forward,
                            const LstmParams* backward, Direction direction);

struct AttentionParams {
    Tensor W;  // [H, A]
    Tensor b;  // [A]
    Tensor u;  // [A]
};

struct AttentionOutput {
    Tensor context;  // [B, H]
    Tensor weights;  // [B, T]
};

/// e_t = tanh(h_t W + b) . u, weights = softmax(e) over non-PAD steps, context = sum_t w_t h_t.
AttentionOutput attention_pool(Tape& tape, const Tensor& hseq, std::span<const double> mask,
                               const AttentionParams& p);

enum class Mode { Train, Eval };

/// Inverted dropout in train mode; identity (same tensor) in eval mode or when rate is 0.
Tensor dropout(Tape& tape, const Tensor& x, double rate, Mode mode, Rng& rng);

struct LossOutput {
    Tensor loss;   // [1]
    Tensor probs;  // [B, C], not differentiable
};

/// Mean categorical cross-entropy of row-wise softmax(logits).
LossOutput softmax_xent(Tape& tape, const Tensor& logits, std::span<const int> labels);

/// Row-wise softmax without gradient tracking.
Tensor softmax(const Tensor& logits);

/// Concatenate 2-D tensors [B, Fi] along the feature axis.
Tensor concat(Tape& tape, const std::vector<Tensor>& parts);

/// Column t of a [B, T, d] tensor -> [B, d].
Tensor slice_step(Tape& tape, const Tensor& x, std::size_t t);

/// Per-row blend m * next + (1 - m) * prev with m in {0, 1}.
Tensor mask_blend(Tape& tape, const Tensor& next, const Tensor& prev, std::span<const double> row_mask);

/// [B, H] per step -> [B, T, H].
Tensor stack_steps(Tape& tape, const std::vector<Tensor>& steps);

// -- Optimization ------------------------------------------------------------

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t t = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam step using param.grad().
void adam_update(Tensor& param, AdamState& state);

// -- Verification ------------------------------------------------------------

/// A differentiable computation of one output tensor from a list of inputs.
using DifferentiableFn = std::function<Tensor(Tape&, std::vector<Tensor>&)>;

/// Max relative error between the analytic gradient and central differences
/// of the scalar objective sum_k r_k y_k (r fixed random weights), over every
/// entry of every input. Relative error is |a - n| / max(|a|, |n|, 1e-2).
double grad_check(const DifferentiableFn& fn, std::vector<Tensor> inputs, double step = 1e-3,
                  std::uint64_t seed = 7);

// -- Initializers ------------------------------------------------------------

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);
/// Orthogonal [rows, cols] matrix via Gram-Schmidt on Gaussian draws.
Tensor orthogonal(std::size_t rows, std::size_t cols, Rng& rng);
Tensor uniform(Shape shape, double lo, double hi, Rng& rng);

}  // namespace cb::ad
