#include "autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_set>

#include "error.hpp"

namespace cb::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::RowVectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::RowVectorXd>;

MatMap mat(double* p, std::size_t r, std::size_t c) {
    return MatMap(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
ConstMatMap mat(const double* p, std::size_t r, std::size_t c) {
    return ConstMatMap(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
VecMap vec(double* p, std::size_t n) { return VecMap(p, static_cast<Eigen::Index>(n)); }
ConstVecMap vec(const double* p, std::size_t n) { return ConstVecMap(p, static_cast<Eigen::Index>(n)); }

// Row-by-row accumulation fixes the summation order. Eigen's vectorised
// reductions peel by address, so results would depend on buffer alignment.
template <class M>
void add_column_sums(double* dst, const M& m) {
    auto d = VecMap(dst, m.cols());
    for (Eigen::Index r = 0; r < m.rows(); ++r) d += m.row(r);
}

double dot_seq(const double* a, const double* b, std::size_t n) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

[[noreturn]] void shape_error(std::string_view op, const std::string& detail) {
    throw UsageError(std::string(op) + ": shape mismatch: " + detail);
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

void expect_rank(std::string_view op, const Tensor& t, std::size_t rank, std::string_view name) {
    if (!t.defined() || t.rank() != rank)
        shape_error(op, std::string(name) + " must have rank " + std::to_string(rank) +
                            (t.defined() ? ", got " + shape_str(t.shape()) : ""));
}

using RowArr = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Vectorised through Eigen's exp; tanh(x) = 2 sigmoid(2x) - 1.
template <class A>
auto sigmoid(const A& x) {
    return 1.0 / (1.0 + (-x).exp());
}
template <class A>
auto tanh_fast(const A& x) {
    return 2.0 / (1.0 + (-2.0 * x).exp()) - 1.0;
}

// Replaces gate pre-activations z [B, 4H] (i, f, g, o) by their activations.
void activate_gates(Eigen::Ref<RowMat> z, Eigen::Index H) {
    z.leftCols(2 * H).array() = sigmoid(z.leftCols(2 * H).array());
    z.middleCols(2 * H, H).array() = tanh_fast(z.middleCols(2 * H, H).array());
    z.rightCols(H).array() = sigmoid(z.rightCols(H).array());
}

// Cell update from activated gates: c = f c_prev + i g, tc = tanh(c), h = o tc.
void cell_forward(const Eigen::Ref<const RowMat>& z, const Eigen::Ref<const RowMat>& c_prev, Eigen::Ref<RowMat> c,
                  Eigen::Ref<RowMat> tc, Eigen::Ref<RowMat> h) {
    const Eigen::Index H = c.cols();
    c.array() = z.middleCols(H, H).array() * c_prev.array() + z.leftCols(H).array() * z.middleCols(2 * H, H).array();
    tc.array() = tanh_fast(c.array());
    h.array() = z.rightCols(H).array() * tc.array();
}

// Gradient of the cell. dh and dc are the gradients reaching h and c; writes
// the pre-activation gradient dz and adds the c_prev gradient to dc_prev.
void cell_backward(const Eigen::Ref<const RowMat>& z, const Eigen::Ref<const RowMat>& c_prev,
                   const Eigen::Ref<const RowMat>& tc, const Eigen::Ref<const RowMat>& dh,
                   const Eigen::Ref<const RowMat>& dc, Eigen::Ref<RowMat> dz, Eigen::Ref<RowMat> dc_prev) {
    const Eigen::Index H = tc.cols();
    const auto i = z.leftCols(H).array(), f = z.middleCols(H, H).array(), g = z.middleCols(2 * H, H).array(),
               o = z.rightCols(H).array();
    const RowArr dct = dc.array() + dh.array() * o * (1.0 - tc.array().square());
    dz.leftCols(H).array() = dct * g * i * (1.0 - i);
    dz.middleCols(H, H).array() = dct * c_prev.array() * f * (1.0 - f);
    dz.middleCols(2 * H, H).array() = dct * i * (1.0 - g.square());
    dz.rightCols(H).array() = dh.array() * tc.array() * o * (1.0 - o);
    dc_prev.array() += dct * f;
}

}  // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

Tensor::Tensor(Shape shape) : node_(std::make_shared<Node>()) {
    const auto n = numel(shape);
    node_->shape = std::move(shape);
    node_->value.assign(n, 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : Tensor(std::move(shape)) {
    if (values.size() != node_->value.size())
        throw UsageError("tensor of shape " + shape_str(node_->shape) + " given " + std::to_string(values.size()) +
                         " values");
    node_->value = std::move(values);
}

void Tensor::zero_grad() const { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

Tensor Tensor::clone() const {
    Tensor t(node_->shape, node_->value);
    t.node_->grad = node_->grad;
    return t;
}

void Tensor::ensure_finite(std::string_view where) const {
    for (double v : node_->value)
        if (!std::isfinite(v)) throw NumericError("non-finite value produced by " + std::string(where));
}

void Tensor::ensure_finite_grad(std::string_view where) const {
    for (double v : node_->grad)
        if (!std::isfinite(v)) throw NumericError("non-finite gradient in " + std::string(where));
}

void Tape::backward(Tensor& loss) {
    if (loss.size() != 1) throw UsageError("backward: loss must have exactly one element");
    loss.grad()[0] = 1.0;
    backward_seeded();
}

void Tape::backward_seeded() {
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    // Weights are tracked once per use; scan each distinct gradient once.
    std::unordered_set<const double*> seen;
    for (const auto& t : tracked_)
        if (seen.insert(t.grad_data()).second) t.ensure_finite_grad("backward pass");
}

std::vector<double> IdBatch::mask() const {
    std::vector<double> m(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) m[i] = ids[i] != 0 ? 1.0 : 0.0;
    return m;
}

Tensor dense(Tape& tape, const Tensor& x, const Tensor& W, const Tensor& b) {
    expect_rank("dense", x, 2, "x");
    expect_rank("dense", W, 2, "W");
    expect_rank("dense", b, 1, "b");
    const std::size_t B = x.dim(0), I = x.dim(1), O = W.dim(1);
    if (W.dim(0) != I || b.dim(0) != O)
        shape_error("dense", "x " + shape_str(x.shape()) + ", W " + shape_str(W.shape()) + ", b " + shape_str(b.shape()));
    Tensor y({B, O});
    auto Y = mat(y.data(), B, O);
    Y.noalias() = mat(x.data(), B, I) * mat(W.data(), I, O);
    Y.rowwise() += vec(b.data(), O);
    y.ensure_finite("dense");
    tape.track(x);
    tape.track(W);
    tape.track(b);
    tape.record([x, W, b, y, B, I, O]() mutable {
        auto dY = mat(y.grad_data(), B, O);
        mat(x.grad_data(), B, I).noalias() += dY * mat(W.data(), I, O).transpose();
        mat(W.grad_data(), I, O).noalias() += mat(x.data(), B, I).transpose() * dY;
        add_column_sums(b.grad_data(), dY);
    });
    return y;
}

Tensor embedding_lookup(Tape& tape, const IdBatch& ids, const Tensor& E) {
    expect_rank("embedding_lookup", E, 2, "E");
    const std::size_t V = E.dim(0), d = E.dim(1);
    if (ids.ids.size() != ids.batch * ids.steps) throw UsageError("embedding_lookup: id batch size mismatch");
    for (int id : ids.ids)
        if (id < 0 || static_cast<std::size_t>(id) >= V)
            throw UsageError("embedding_lookup: id " + std::to_string(id) + " out of range for vocabulary of " +
                             std::to_string(V));
    Tensor y({ids.batch, ids.steps, d});
    for (std::size_t i = 0; i < ids.ids.size(); ++i)
        std::copy_n(E.data() + static_cast<std::size_t>(ids.ids[i]) * d, d, y.data() + i * d);
    tape.track(E);
    tape.record([ids, E, y, d]() mutable {
        for (std::size_t i = 0; i < ids.ids.size(); ++i) {
            double* dst = E.grad_data() + static_cast<std::size_t>(ids.ids[i]) * d;
            const double* src = y.grad_data() + i * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
    return y;
}

Tensor conv1d_maxpool(Tape& tape, const Tensor& x, const Tensor& filters, const Tensor& bias) {
    expect_rank("conv1d_maxpool", x, 3, "x");
    expect_rank("conv1d_maxpool", filters, 3, "filters");
    expect_rank("conv1d_maxpool", bias, 1, "bias");
    const std::size_t B = x.dim(0), T = x.dim(1), d = x.dim(2);
    const std::size_t w = filters.dim(0), F = filters.dim(2);
    if (filters.dim(1) != d || bias.dim(0) != F)
        shape_error("conv1d_maxpool", "x " + shape_str(x.shape()) + ", filters " + shape_str(filters.shape()) +
                                          ", bias " + shape_str(bias.shape()));
    if (T < w)
        throw UsageError("conv1d_maxpool: sequence length " + std::to_string(T) + " is shorter than window " +
                         std::to_string(w));
    const std::size_t P = T - w + 1;
    const std::size_t K = w * d;
    Tensor y({B, F});
    auto argmax = std::make_shared<std::vector<std::size_t>>(B * F, 0);
    const auto Wm = mat(filters.data(), K, F);
    RowMat Z(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(F));
    for (std::size_t b = 0; b < B; ++b) {
        // Window p covers x[b, p..p+w-1, :], which is contiguous: rows of
        // length K with stride d.
        Eigen::Map<const RowMat, 0, Eigen::OuterStride<>> Xw(x.data() + b * T * d, static_cast<Eigen::Index>(P),
                                                             static_cast<Eigen::Index>(K),
                                                             Eigen::OuterStride<>(static_cast<Eigen::Index>(d)));
        Z.noalias() = Xw * Wm;
        Z.rowwise() += vec(bias.data(), F);
        for (std::size_t f = 0; f < F; ++f) {
            std::size_t best = 0;
            for (std::size_t p = 1; p < P; ++p)
                if (Z(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(f)) >
                    Z(static_cast<Eigen::Index>(best), static_cast<Eigen::Index>(f)))
                    best = p;
            (*argmax)[b * F + f] = best;
            y[b * F + f] = std::max(0.0, Z(static_cast<Eigen::Index>(best), static_cast<Eigen::Index>(f)));
        }
    }
    y.ensure_finite("conv1d_maxpool");
    tape.track(x);
    tape.track(filters);
    tape.track(bias);
    tape.record([x, filters, bias, y, argmax, B, T, d, F, K]() mutable {
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t f = 0; f < F; ++f) {
                const double g = y.grad()[b * F + f];
                if (g == 0.0 || y[b * F + f] <= 0.0) continue;  // ReLU blocks the gradient
                const std::size_t p = (*argmax)[b * F + f];
                const double* xw = x.data() + (b * T + p) * d;
                double* dxw = x.grad_data() + (b * T + p) * d;
                for (std::size_t k = 0; k < K; ++k) {
                    filters.grad()[k * F + f] += g * xw[k];
                    dxw[k] += g * filters[k * F + f];
                }
                bias.grad()[f] += g;
            }
        }
    });
    return y;
}

LstmState lstm_step(Tape& tape, const Tensor& x_t, const Tensor& h_prev, const Tensor& c_prev,
                    const LstmParams& p) {
    expect_rank("lstm_step", x_t, 2, "x_t");
    expect_rank("lstm_step", h_prev, 2, "h_prev");
    expect_rank("lstm_step", c_prev, 2, "c_prev");
    const std::size_t B = x_t.dim(0), d = x_t.dim(1), H = p.hidden(), G = 4 * H;
    if (p.Wx.dim(0) != d || p.Wx.dim(1) != G || p.Wh.dim(1) != G || p.b.dim(0) != G || h_prev.dim(0) != B ||
        h_prev.dim(1) != H || c_prev.dim(0) != B || c_prev.dim(1) != H)
        shape_error("lstm_step", "x_t " + shape_str(x_t.shape()) + ", h_prev " + shape_str(h_prev.shape()) +
                                     ", Wx " + shape_str(p.Wx.shape()) + ", Wh " + shape_str(p.Wh.shape()));
    // Post-activation gates [B, 4H]: i, f, g, o.
    auto gates = std::make_shared<RowMat>(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(G));
    gates->noalias() = mat(x_t.data(), B, d) * mat(p.Wx.data(), d, G);
    gates->noalias() += mat(h_prev.data(), B, H) * mat(p.Wh.data(), H, G);
    gates->rowwise() += vec(p.b.data(), G);
    activate_gates(*gates, static_cast<Eigen::Index>(H));
    Tensor h({B, H}), c({B, H});
    auto tc = std::make_shared<RowMat>(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(H));
    cell_forward(*gates, mat(c_prev.data(), B, H), mat(c.data(), B, H), *tc, mat(h.data(), B, H));
    h.ensure_finite("lstm_step");
    c.ensure_finite("lstm_step");
    tape.track(x_t);
    tape.track(h_prev);
    tape.track(c_prev);
    Tensor Wx = p.Wx, Wh = p.Wh, bias = p.b;
    tape.track(Wx);
    tape.track(Wh);
    tape.track(bias);
    tape.record([x_t, h_prev, c_prev, Wx, Wh, bias, h, c, gates, tc, B, d, H, G]() mutable {
        RowMat dz(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(G));
        cell_backward(*gates, mat(c_prev.data(), B, H), *tc, mat(h.grad_data(), B, H), mat(c.grad_data(), B, H), dz,
                      mat(c_prev.grad_data(), B, H));
        mat(x_t.grad_data(), B, d).noalias() += dz * mat(Wx.data(), d, G).transpose();
        mat(Wx.grad_data(), d, G).noalias() += mat(x_t.data(), B, d).transpose() * dz;
        mat(h_prev.grad_data(), B, H).noalias() += dz * mat(Wh.data(), H, G).transpose();
        mat(Wh.grad_data(), H, G).noalias() += mat(h_prev.data(), B, H).transpose() * dz;
        add_column_sums(bias.grad_data(), dz);
    });
    return {h, c};
}

Tensor slice_step(Tape& tape, const Tensor& x, std::size_t t) {
    expect_rank("slice_step", x, 3, "x");
    const std::size_t B = x.dim(0), T = x.dim(1), d = x.dim(2);
    if (t >= T) throw UsageError("slice_step: step out of range");
    Tensor y({B, d});
    for (std::size_t b = 0; b < B; ++b) std::copy_n(x.data() + (b * T + t) * d, d, y.data() + b * d);
    tape.record([x, y, B, T, d, t]() mutable {
        for (std::size_t b = 0; b < B; ++b) {
            double* dst = x.grad_data() + (b * T + t) * d;
            const double* src = y.grad_data() + b * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
    return y;
}

Tensor mask_blend(Tape& tape, const Tensor& next, const Tensor& prev, std::span<const double> row_mask) {
    expect_rank("mask_blend", next, 2, "next");
    if (next.shape() != prev.shape() || row_mask.size() != next.dim(0))
        shape_error("mask_blend", "next " + shape_str(next.shape()) + ", prev " + shape_str(prev.shape()));
    const std::size_t B = next.dim(0), H = next.dim(1);
    std::vector<double> m(row_mask.begin(), row_mask.end());
    Tensor y({B, H});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < H; ++j)
            y[b * H + j] = m[b] * next[b * H + j] + (1.0 - m[b]) * prev[b * H + j];
    tape.record([next, prev, y, m, B, H]() mutable {
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < H; ++j) {
                const double g = y.grad()[b * H + j];
                next.grad()[b * H + j] += m[b] * g;
                prev.grad()[b * H + j] += (1.0 - m[b]) * g;
            }
    });
    return y;
}

Tensor stack_steps(Tape& tape, const std::vector<Tensor>& steps) {
    if (steps.empty()) throw UsageError("stack_steps: no steps");
    const std::size_t B = steps[0].dim(0), H = steps[0].dim(1), T = steps.size();
    for (const auto& s : steps)
        if (s.rank() != 2 || s.dim(0) != B || s.dim(1) != H) shape_error("stack_steps", "inconsistent step shapes");
    Tensor y({B, T, H});
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t b = 0; b < B; ++b) std::copy_n(steps[t].data() + b * H, H, y.data() + (b * T + t) * H);
    tape.record([steps, y, B, T, H]() mutable {
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t b = 0; b < B; ++b) {
                double* dst = steps[t].grad_data() + b * H;
                const double* src = y.grad_data() + (b * T + t) * H;
                for (std::size_t j = 0; j < H; ++j) dst[j] += src[j];
            }
    });
    return y;
}

Tensor concat(Tape& tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw UsageError("concat: no inputs");
    const std::size_t B = parts[0].dim(0);
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != B) shape_error("concat", "inputs must be [B, Fi] with equal B");
        total += p.dim(1);
    }
    Tensor y({B, total});
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t F = p.dim(1);
        for (std::size_t b = 0; b < B; ++b) std::copy_n(p.data() + b * F, F, y.data() + b * total + off);
        off += F;
    }
    tape.record([parts, y, B, total]() mutable {
        std::size_t off = 0;
        for (auto& p : parts) {
            const std::size_t F = p.dim(1);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t j = 0; j < F; ++j) p.grad()[b * F + j] += y.grad()[b * total + off + j];
            off += F;
        }
    });
    return y;
}

namespace {

// One direction of an unrolled LSTM as a single tape entry. Only rows whose
// mask is non-zero at a step are computed; a masked row carries its state
// unchanged and emits zeros, so skipping it is exact. Active (step, row)
// pairs are stored compactly in step order, which makes the input projection
// and the weight gradients one GEMM each.
std::pair<Tensor, Tensor> lstm_sequence(Tape& tape, const Tensor& x, std::span<const double> mask,
                                        const LstmParams& p, bool reverse) {
    const std::size_t B = x.dim(0), T = x.dim(1), d = x.dim(2), H = p.hidden(), G = 4 * H;
    if (p.Wx.rank() != 2 || p.Wh.rank() != 2 || p.b.rank() != 1 || p.Wx.dim(0) != d || p.Wx.dim(1) != G ||
        p.Wh.dim(1) != G || p.b.dim(0) != G)
        shape_error("run_sequence", "x " + shape_str(x.shape()) + ", Wx " + shape_str(p.Wx.shape()) + ", Wh " +
                                        shape_str(p.Wh.shape()));
    const auto iB = static_cast<Eigen::Index>(B), iH = static_cast<Eigen::Index>(H), iG = static_cast<Eigen::Index>(G);

    // rows[offset[k] .. offset[k+1]) are the active batch rows of the k-th step processed.
    auto rows = std::make_shared<std::vector<std::size_t>>();
    auto offset = std::make_shared<std::vector<std::size_t>>(1, 0);
    auto weight = std::make_shared<std::vector<double>>();
    for (std::size_t k = 0; k < T; ++k) {
        const std::size_t t = reverse ? T - 1 - k : k;
        for (std::size_t b = 0; b < B; ++b)
            if (mask[b * T + t] != 0.0) {
                rows->push_back(b);
                weight->push_back(mask[b * T + t]);
            }
        offset->push_back(rows->size());
    }
    const std::size_t R = rows->size();
    const auto iR = static_cast<Eigen::Index>(R);
    auto step_of = [=](std::size_t k) { return reverse ? T - 1 - k : k; };

    // Per active pair: inputs, activated gates, previous state and tanh(c).
    auto xs = std::make_shared<RowMat>(iR, static_cast<Eigen::Index>(d));
    auto gates = std::make_shared<RowMat>(iR, iG);
    auto h_prev = std::make_shared<RowMat>(iR, iH);
    auto c_prev = std::make_shared<RowMat>(iR, iH);
    auto tcs = std::make_shared<RowMat>(iR, iH);
    for (std::size_t k = 0; k < T; ++k)
        for (std::size_t r = (*offset)[k]; r < (*offset)[k + 1]; ++r)
            xs->row(static_cast<Eigen::Index>(r)) =
                vec(x.data() + ((*rows)[r] * T + step_of(k)) * d, d);
    gates->noalias() = *xs * mat(p.Wx.data(), d, G);
    gates->rowwise() += vec(p.b.data(), G);

    Tensor outs({B, T, H}), last({B, H});
    auto h = mat(last.data(), B, H);
    RowMat c = RowMat::Zero(iB, iH), c_new(iB, iH), h_new(iB, iH);
    const auto Wh = mat(p.Wh.data(), H, G);
    for (std::size_t k = 0; k < T; ++k) {
        const std::size_t t = step_of(k), o = (*offset)[k], n = (*offset)[k + 1] - o;
        if (n == 0) continue;
        const auto io = static_cast<Eigen::Index>(o), in = static_cast<Eigen::Index>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto b = static_cast<Eigen::Index>((*rows)[o + i]), r = static_cast<Eigen::Index>(o + i);
            h_prev->row(r) = h.row(b);
            c_prev->row(r) = c.row(b);
        }
        auto z = gates->middleRows(io, in);
        z.noalias() += h_prev->middleRows(io, in) * Wh;
        activate_gates(z, iH);
        cell_forward(z, c_prev->middleRows(io, in), c_new.topRows(in), tcs->middleRows(io, in), h_new.topRows(in));
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t b = (*rows)[o + i];
            const double mb = (*weight)[o + i];
            const auto ib = static_cast<Eigen::Index>(b), ii = static_cast<Eigen::Index>(i);
            h.row(ib) = mb * h_new.row(ii) + (1.0 - mb) * h.row(ib);
            c.row(ib) = mb * c_new.row(ii) + (1.0 - mb) * c.row(ib);
            vec(outs.data() + (b * T + t) * H, H) = mb * h_new.row(ii);
        }
    }
    outs.ensure_finite("run_sequence");
    last.ensure_finite("run_sequence");

    Tensor xin = x, Wx = p.Wx, Whp = p.Wh, bias = p.b;
    tape.track(xin);
    tape.track(Wx);
    tape.track(Whp);
    tape.track(bias);
    tape.record([=]() mutable {
        RowMat dzs(iR, iG);
        RowMat dh = mat(last.grad_data(), B, H), dc = RowMat::Zero(iB, iH);
        RowMat dh_new(iB, iH), dc_new(iB, iH), dh_prev(iB, iH), dc_prev(iB, iH);
        const auto Wh = mat(Whp.data(), H, G);
        for (std::size_t k = T; k-- > 0;) {
            const std::size_t t = step_of(k), o = (*offset)[k], n = (*offset)[k + 1] - o;
            if (n == 0) continue;
            const auto io = static_cast<Eigen::Index>(o), in = static_cast<Eigen::Index>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t b = (*rows)[o + i];
                const double mb = (*weight)[o + i];
                const auto ib = static_cast<Eigen::Index>(b), ii = static_cast<Eigen::Index>(i);
                dh_new.row(ii) = mb * (dh.row(ib) + vec(outs.grad_data() + (b * T + t) * H, H));
                dc_new.row(ii) = mb * dc.row(ib);
                dh.row(ib) *= 1.0 - mb;
                dc.row(ib) *= 1.0 - mb;
            }
            auto dz = dzs.middleRows(io, in);
            auto dcp = dc_prev.topRows(in);
            dcp.setZero();
            cell_backward(gates->middleRows(io, in), c_prev->middleRows(io, in), tcs->middleRows(io, in),
                          dh_new.topRows(in), dc_new.topRows(in), dz, dcp);
            auto dhp = dh_prev.topRows(in);
            dhp.noalias() = dz * Wh.transpose();
            for (std::size_t i = 0; i < n; ++i) {
                const auto ib = static_cast<Eigen::Index>((*rows)[o + i]), ii = static_cast<Eigen::Index>(i);
                dh.row(ib) += dhp.row(ii);
                dc.row(ib) += dcp.row(ii);
            }
        }
        mat(Whp.grad_data(), H, G).noalias() += h_prev->transpose() * dzs;
        mat(Wx.grad_data(), d, G).noalias() += xs->transpose() * dzs;
        add_column_sums(bias.grad_data(), dzs);
        const RowMat dxs = dzs * mat(Wx.data(), d, G).transpose();
        for (std::size_t k = 0; k < T; ++k)
            for (std::size_t r = (*offset)[k]; r < (*offset)[k + 1]; ++r)
                vec(xin.grad_data() + ((*rows)[r] * T + step_of(k)) * d, d) += dxs.row(static_cast<Eigen::Index>(r));
    });
    return {outs, last};
}

}  // namespace

SequenceOutput run_sequence(Tape& tape, const Tensor& x, std::span<const double> mask, const LstmParams& forward,
                            const LstmParams* backward, Direction direction) {
    expect_rank("run_sequence", x, 3, "x");
    const std::size_t B = x.dim(0), T = x.dim(1);
    if (mask.size() != B * T) shape_error("run_sequence", "mask must have B*T entries");
    if (direction != Direction::Forward && backward == nullptr)
        throw UsageError("run_sequence: backward-direction parameters required");

    if (direction == Direction::Forward) {
        auto [outs, last] = lstm_sequence(tape, x, mask, forward, false);
        return {outs, last};
    }
    if (direction == Direction::Backward) {
        auto [outs, last] = lstm_sequence(tape, x, mask, *backward, true);
        return {outs, last};
    }
    auto [fo, fl] = lstm_sequence(tape, x, mask, forward, false);
    auto [bo, bl] = lstm_sequence(tape, x, mask, *backward, true);
    // Concatenate per step along the feature axis.
    const std::size_t Hf = forward.hidden(), Hb = backward->hidden(), W = Hf + Hb;
    Tensor outs({B, T, W});
    for (std::size_t r = 0; r < B * T; ++r) {
        std::copy_n(fo.data() + r * Hf, Hf, outs.data() + r * W);
        std::copy_n(bo.data() + r * Hb, Hb, outs.data() + r * W + Hf);
    }
    tape.record([fo, bo, outs, B, T, Hf, Hb, W]() mutable {
        for (std::size_t r = 0; r < B * T; ++r) {
            for (std::size_t j = 0; j < Hf; ++j) fo.grad()[r * Hf + j] += outs.grad()[r * W + j];
            for (std::size_t j = 0; j < Hb; ++j) bo.grad()[r * Hb + j] += outs.grad()[r * W + Hf + j];
        }
    });
    return {outs, concat(tape, {fl, bl})};
}

AttentionOutput attention_pool(Tape& tape, const Tensor& hseq, std::span<const double> mask,
                               const AttentionParams& p) {
    expect_rank("attention_pool", hseq, 3, "hseq");
    const std::size_t B = hseq.dim(0), T = hseq.dim(1), H = hseq.dim(2);
    const std::size_t A = p.W.dim(1);
    if (p.W.dim(0) != H || p.b.dim(0) != A || p.u.dim(0) != A || mask.size() != B * T)
        shape_error("attention_pool", "hseq " + shape_str(hseq.shape()) + ", W " + shape_str(p.W.shape()));
    std::vector<double> m(mask.begin(), mask.end());
    for (std::size_t b = 0; b < B; ++b) {
        bool any = false;
        for (std::size_t t = 0; t < T; ++t) any = any || m[b * T + t] != 0.0;
        if (!any) throw UsageError("attention_pool: every position of row " + std::to_string(b) + " is PAD");
    }
    // Scores use only non-PAD positions, stored compactly: s = tanh(h W + b), e = s u.
    auto pos = std::make_shared<std::vector<std::size_t>>();
    for (std::size_t i = 0; i < B * T; ++i)
        if (m[i] != 0.0) pos->push_back(i);
    const auto R = static_cast<Eigen::Index>(pos->size()), iA = static_cast<Eigen::Index>(A);
    auto hc = std::make_shared<RowMat>(R, static_cast<Eigen::Index>(H));
    for (Eigen::Index r = 0; r < R; ++r) hc->row(r) = vec(hseq.data() + (*pos)[static_cast<std::size_t>(r)] * H, H);
    auto S = std::make_shared<RowMat>(R, iA);
    S->noalias() = *hc * mat(p.W.data(), H, A);
    S->rowwise() += vec(p.b.data(), A);
    S->array() = tanh_fast(S->array());
    const Eigen::VectorXd e = *S * vec(p.u.data(), A).transpose();
    Tensor context({B, H}), weights({B, T});
    for (std::size_t r0 = 0; r0 < pos->size();) {
        // Positions of one batch row are contiguous in pos.
        const std::size_t b = (*pos)[r0] / T;
        std::size_t r1 = r0;
        double mx = -std::numeric_limits<double>::infinity();
        for (; r1 < pos->size() && (*pos)[r1] / T == b; ++r1) mx = std::max(mx, e[static_cast<Eigen::Index>(r1)]);
        double sum = 0;
        for (std::size_t r = r0; r < r1; ++r) sum += (weights[(*pos)[r]] = std::exp(e[static_cast<Eigen::Index>(r)] - mx));
        auto ctx = vec(context.data() + b * H, H);
        for (std::size_t r = r0; r < r1; ++r) {
            const double a = weights[(*pos)[r]] /= sum;
            ctx += a * hc->row(static_cast<Eigen::Index>(r));
        }
        r0 = r1;
    }
    context.ensure_finite("attention_pool");
    tape.track(hseq);
    Tensor W = p.W, bias = p.b, u = p.u;
    tape.track(W);
    tape.track(bias);
    tape.track(u);
    tape.record([hseq, W, bias, u, context, weights, S, hc, pos, T, H, A, R]() mutable {
        // de_r = a_r (g_r - sum_r' a_r' g_r') with g_r = dctx . h_r + d(weight_r).
        Eigen::VectorXd de(R);
        for (std::size_t r0 = 0; r0 < pos->size();) {
            const std::size_t b = (*pos)[r0] / T;
            const auto dctx = vec(context.grad_data() + b * H, H);
            std::size_t r1 = r0;
            double weighted = 0;
            for (; r1 < pos->size() && (*pos)[r1] / T == b; ++r1) {
                const std::size_t i = (*pos)[r1];
                const double g =
                    weights.grad()[i] + dot_seq(context.grad_data() + b * H, hc->row(static_cast<Eigen::Index>(r1)).data(), H);
                de[static_cast<Eigen::Index>(r1)] = g;
                weighted += weights[i] * g;
                vec(hseq.grad_data() + i * H, H) += weights[i] * dctx;
            }
            for (std::size_t r = r0; r < r1; ++r)
                de[static_cast<Eigen::Index>(r)] = weights[(*pos)[r]] * (de[static_cast<Eigen::Index>(r)] - weighted);
            r0 = r1;
        }
        vec(u.grad_data(), A) += (S->transpose() * de).transpose();
        RowMat dA = (de * vec(u.data(), A)).array() * (1.0 - S->array().square());
        mat(W.grad_data(), H, A).noalias() += hc->transpose() * dA;
        add_column_sums(bias.grad_data(), dA);
        const RowMat dhc = dA * mat(W.data(), H, A).transpose();
        for (Eigen::Index r = 0; r < R; ++r)
            vec(hseq.grad_data() + (*pos)[static_cast<std::size_t>(r)] * H, H) += dhc.row(r);
    });
    return {context, weights};
}

Tensor dropout(Tape& tape, const Tensor& x, double rate, Mode mode, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw UsageError("dropout rate must lie in [0, 1)");
    if (mode == Mode::Eval || rate == 0.0) return x;
    const double scale = 1.0 / (1.0 - rate);
    auto keep = std::make_shared<std::vector<double>>(x.size());
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        (*keep)[i] = rng.uniform() >= rate ? scale : 0.0;
        y[i] = x[i] * (*keep)[i];
    }
    tape.record([x, y, keep]() mutable {
        for (std::size_t i = 0; i < x.size(); ++i) x.grad()[i] += y.grad()[i] * (*keep)[i];
    });
    return y;
}

Tensor softmax(const Tensor& logits) {
    expect_rank("softmax", logits, 2, "logits");
    const std::size_t B = logits.dim(0), C = logits.dim(1);
    Tensor p({B, C});
    for (std::size_t b = 0; b < B; ++b) {
        const double* z = logits.data() + b * C;
        const double mx = *std::max_element(z, z + C);
        double sum = 0;
        for (std::size_t c = 0; c < C; ++c) sum += (p[b * C + c] = std::exp(z[c] - mx));
        for (std::size_t c = 0; c < C; ++c) p[b * C + c] /= sum;
    }
    return p;
}

LossOutput softmax_xent(Tape& tape, const Tensor& logits, std::span<const int> labels) {
    expect_rank("softmax_xent", logits, 2, "logits");
    const std::size_t B = logits.dim(0), C = logits.dim(1);
    if (labels.size() != B) shape_error("softmax_xent", "one label per row required");
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= C)
            throw UsageError("softmax_xent: label " + std::to_string(l) + " out of range for " + std::to_string(C) +
                             " classes");
    Tensor probs = softmax(logits);
    Tensor loss({1});
    double total = 0;
    for (std::size_t b = 0; b < B; ++b) {
        const double* z = logits.data() + b * C;
        const double mx = *std::max_element(z, z + C);
        double sum = 0;
        for (std::size_t c = 0; c < C; ++c) sum += std::exp(z[c] - mx);
        total += -(z[labels[b]] - mx - std::log(sum));
    }
    loss[0] = total / static_cast<double>(B);
    loss.ensure_finite("softmax_xent");
    std::vector<int> lab(labels.begin(), labels.end());
    tape.track(logits);
    tape.record([logits, probs, loss, lab, B, C]() mutable {
        const double g = loss.grad()[0] / static_cast<double>(B);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                logits.grad()[b * C + c] +=
                    g * (probs[b * C + c] - (static_cast<int>(c) == lab[b] ? 1.0 : 0.0));
    });
    return {loss, probs};
}

void adam_update(Tensor& param, AdamState& s) {
    if (s.m.size() != param.size()) {
        s.m.assign(param.size(), 0.0);
        s.v.assign(param.size(), 0.0);
    }
    s.t += 1;
    const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
    auto& p = param.values();
    const auto& g = param.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
        s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g[i];
        s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g[i] * g[i];
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        p[i] -= s.lr * mhat / (std::sqrt(vhat) + s.epsilon);
    }
}

double grad_check(const DifferentiableFn& fn, std::vector<Tensor> inputs, double step, std::uint64_t seed) {
    // Analytic pass.
    for (auto& t : inputs) t.zero_grad();
    Tape tape;
    Tensor out = fn(tape, inputs);
    Rng rng(seed);
    std::vector<double> r(out.size());
    for (auto& v : r) v = rng.uniform(-1.0, 1.0);
    out.grad() = r;
    tape.backward_seeded();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (const auto& t : inputs) analytic.push_back(t.grad());

    auto objective = [&]() {
        Tape scratch;
        const Tensor y = fn(scratch, inputs);
        double s = 0;
        for (std::size_t k = 0; k < y.size(); ++k) s += r[k] * y[k];
        return s;
    };

    double worst = 0;
    for (std::size_t a = 0; a < inputs.size(); ++a) {
        auto& vals = inputs[a].values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double saved = vals[i];
            vals[i] = saved + step;
            const double up = objective();
            vals[i] = saved - step;
            const double down = objective();
            vals[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double an = analytic[a][i];
            const double denom = std::max({std::abs(an), std::abs(numeric), 1e-2});
            worst = std::max(worst, std::abs(an - numeric) / denom);
        }
    }
    return worst;
}

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return uniform(std::move(shape), -limit, limit, rng);
}

Tensor uniform(Shape shape, double lo, double hi, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

Tensor orthogonal(std::size_t rows, std::size_t cols, Rng& rng) {
    // Orthonormalize the shorter dimension's vectors.
    const bool by_rows = rows <= cols;
    const std::size_t n = by_rows ? rows : cols;
    const std::size_t len = by_rows ? cols : rows;
    std::vector<std::vector<double>> q(n, std::vector<double>(len));
    for (std::size_t i = 0; i < n; ++i) {
        for (;;) {
            for (auto& v : q[i]) v = rng.normal();
            for (std::size_t j = 0; j < i; ++j) {
                double d = 0;
                for (std::size_t k = 0; k < len; ++k) d += q[i][k] * q[j][k];
                for (std::size_t k = 0; k < len; ++k) q[i][k] -= d * q[j][k];
            }
            double norm = 0;
            for (double v : q[i]) norm += v * v;
            norm = std::sqrt(norm);
            if (norm > 1e-8) {
                for (auto& v : q[i]) v /= norm;
                break;
            }
        }
    }
    Tensor t({rows, cols});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < len; ++k) {
            if (by_rows) t[i * cols + k] = q[i][k];
            else t[k * cols + i] = q[i][k];
        }
    return t;
}

}  // namespace cb::ad
