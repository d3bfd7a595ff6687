// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle to a graph node. Operations on tensors that
// require gradients record their inputs and a backward closure; Graph::trace
// orders the recorded nodes topologically and Graph::backward runs the
// closures in reverse order. Tensors that do not require gradients never
// record anything, so evaluation-only code pays no bookkeeping cost.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

namespace petlab {

class Rng;

using Shape = std::vector<std::size_t>;
using TokenId = std::int32_t;

enum class OpKind {
    leaf,
    matmul,
    transpose,
    add,
    scale,
    relu,
    softmax,
    layer_norm,
    embedding,
    concat_rows,
    cross_entropy,
    dropout,
};

std::string_view op_name(OpKind op);

namespace detail {
struct Node;
}

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }

    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;
    // 2-D accessors; a rank-1 tensor is treated as a single row.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> values() const;
    // Direct writes bypass the graph. Used for initialization, optimizer
    // updates and finite-difference probing.
    std::span<double> mutable_values();
    double item() const;
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const;
    void set_requires_grad(bool on);
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    OpKind op() const;
    std::size_t input_count() const;

    // Seeds d(self)/d(self) = 1 and propagates. Self must hold one element.
    void backward() const;

    // New leaf holding a copy of the values, no gradient.
    Tensor detach() const;
    // New leaf holding a copy of the values with the same requires_grad flag.
    Tensor clone() const;

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

    std::shared_ptr<detail::Node> node_;

    friend class Graph;
    friend struct TensorAccess;
};

// Topologically ordered view over the nodes that influence a root tensor and
// require gradients. Inputs always precede the records that consume them.
class Graph {
public:
    struct Record {
        std::size_t id = 0;
        OpKind op = OpKind::leaf;
        std::vector<std::size_t> inputs;
        Tensor output;
    };

    static Graph trace(const Tensor& root);

    const std::vector<Record>& records() const { return records_; }

    // Reverse topological sweep. Interior gradients are reset first, so a
    // repeated call accumulates into leaves exactly once more.
    void backward() const;

private:
    std::vector<Record> records_;
    Tensor root_;
};

// Disables graph recording on the current thread while alive. Kernels still
// compute values; results never require gradients.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

    static bool grad_enabled();

private:
    bool previous_;
};

// ---------------------------------------------------------------------------
// Differentiable kernels. All operate on rank-2 tensors (rows x cols).
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// Same-shape addition, or `b` with a single row broadcast over a's rows.
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);

enum class AttentionMask { none, causal };

// Row-wise softmax. With a causal mask, entry (i, j) is excluded when j > i.
Tensor softmax_rows(const Tensor& a, AttentionMask mask = AttentionMask::none);

// Per-row normalization to zero mean / unit variance, then gain * x + bias
// with gain and bias of shape 1 x cols.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-10);

// Gathers table rows. Result is ids.size() x table.cols().
Tensor embedding(const Tensor& table, std::span<const TokenId> ids);

Tensor concat_rows(std::span<const Tensor> parts);

// Summed negative log-likelihood over rows; a negative target skips its row.
// Returns a 1 x 1 tensor.
Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets);

// Inverted dropout with keep-probability 1 - p. Callers apply it only while
// training.
Tensor dropout(const Tensor& x, double p, Rng& rng);

// ---------------------------------------------------------------------------
// Scalar helpers on plain vectors.
// ---------------------------------------------------------------------------

// Max-subtracted softmax. Throws DomainError on empty or non-finite input.
std::vector<double> softmax(std::span<const double> v);
std::vector<double> log_softmax(std::span<const double> v);
// -log softmax(logits)[target]. Throws IndexError for an out-of-range target.
double cross_entropy(std::span<const double> logits, std::size_t target);

}  // namespace petlab
