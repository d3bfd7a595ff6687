// SPDX-License-Identifier: Apache-2.0

#include "petlab/tensor.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <unordered_map>

#include "petlab/errors.h"
#include "petlab/rng.h"

namespace petlab {

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    OpKind op = OpKind::leaf;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;
};

}  // namespace detail

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

struct TensorAccess {
    static const NodePtr& node(const Tensor& t) { return t.node_; }
    static Tensor wrap(NodePtr n) { return Tensor(std::move(n)); }
};

namespace {

thread_local bool g_grad_enabled = true;

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

void validate_shape(const Shape& shape) {
    if (shape.empty() || shape.size() > 2) {
        throw ShapeError("tensor rank must be 1 or 2");
    }
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive");
    }
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

const Node& node_of(const Tensor& t) {
    const auto& n = TensorAccess::node(t);
    if (!n) throw ShapeError("use of an undefined tensor");
    return *n;
}

std::size_t rows_of(const Node& n) { return n.shape.size() == 1 ? 1 : n.shape[0]; }
std::size_t cols_of(const Node& n) { return n.shape.back(); }

std::vector<double>& grad_buffer(Node& n) {
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
}

// Creates the output node. Inputs and the backward closure are attached only
// when some input participates in differentiation; otherwise it is a leaf.
NodePtr make_node(Shape shape, OpKind op, std::initializer_list<NodePtr> inputs) {
    auto out = std::make_shared<Node>();
    out->value.assign(shape_size(shape), 0.0);
    out->shape = std::move(shape);
    bool any = false;
    for (const auto& in : inputs) any = any || in->requires_grad;
    if (any && g_grad_enabled) {
        out->op = op;
        out->requires_grad = true;
        out->inputs.assign(inputs.begin(), inputs.end());
    }
    return out;
}

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[k x n] += a[m x k]^T * b[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

std::vector<double> transposed(const double* a, std::size_t r, std::size_t c) {
    std::vector<double> t(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) t[j * r + i] = a[i * c + j];
    return t;
}

void check_finite(std::span<const double> v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) throw DomainError(std::string(what) + ": non-finite input");
    }
}

}  // namespace

std::string_view op_name(OpKind op) {
    switch (op) {
        case OpKind::leaf: return "leaf";
        case OpKind::matmul: return "matmul";
        case OpKind::transpose: return "transpose";
        case OpKind::add: return "add";
        case OpKind::scale: return "scale";
        case OpKind::relu: return "relu";
        case OpKind::softmax: return "softmax";
        case OpKind::layer_norm: return "layer_norm";
        case OpKind::embedding: return "embedding";
        case OpKind::concat_rows: return "concat_rows";
        case OpKind::cross_entropy: return "cross_entropy";
        case OpKind::dropout: return "dropout";
    }
    return "unknown";
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool NoGradGuard::grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    validate_shape(shape);
    auto n = std::make_shared<Node>();
    n->value.assign(shape_size(shape), 0.0);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
    validate_shape(shape);
    if (shape_size(shape) != values.size()) {
        throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_values({1, 1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_of(*this).shape; }
std::size_t Tensor::size() const { return node_of(*this).value.size(); }
std::size_t Tensor::rows() const { return rows_of(node_of(*this)); }
std::size_t Tensor::cols() const { return cols_of(node_of(*this)); }
std::span<const double> Tensor::values() const { return node_of(*this).value; }

std::span<double> Tensor::mutable_values() {
    if (!node_) throw ShapeError("use of an undefined tensor");
    return node_->value;
}

double Tensor::item() const {
    const auto& n = node_of(*this);
    if (n.value.size() != 1) throw ShapeError("item() on a tensor with " + std::to_string(n.value.size()) + " elements");
    return n.value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    const auto& n = node_of(*this);
    if (r >= rows_of(n) || c >= cols_of(n)) throw IndexError("tensor index out of range");
    return n.value[r * cols_of(n) + c];
}

bool Tensor::requires_grad() const { return node_of(*this).requires_grad; }

void Tensor::set_requires_grad(bool on) {
    if (!node_) throw ShapeError("use of an undefined tensor");
    if (node_->op != OpKind::leaf) throw ShapeError("requires_grad can only be set on leaf tensors");
    node_->requires_grad = on;
    if (!on) node_->grad.clear();
}

bool Tensor::has_grad() const { return !node_of(*this).grad.empty(); }
std::span<const double> Tensor::grad() const { return node_of(*this).grad; }

std::span<double> Tensor::mutable_grad() {
    if (!node_) throw ShapeError("use of an undefined tensor");
    return grad_buffer(*node_);
}

void Tensor::zero_grad() {
    if (node_) node_->grad.clear();
}

OpKind Tensor::op() const { return node_of(*this).op; }
std::size_t Tensor::input_count() const { return node_of(*this).inputs.size(); }

void Tensor::backward() const {
    if (size() != 1) throw ShapeError("backward() requires a single-element tensor");
    Graph::trace(*this).backward();
}

Tensor Tensor::detach() const { return from_values(shape(), std::vector<double>(values().begin(), values().end())); }

Tensor Tensor::clone() const {
    return from_values(shape(), std::vector<double>(values().begin(), values().end()), requires_grad());
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

Graph Graph::trace(const Tensor& root) {
    Graph g;
    g.root_ = root;
    const auto& root_node = TensorAccess::node(root);
    if (!root_node || !root_node->requires_grad) return g;

    std::unordered_map<const Node*, std::size_t> ids;
    // Iterative post-order DFS; frame = (node, next input index).
    std::vector<std::pair<Node*, std::size_t>> stack;
    std::unordered_map<const Node*, bool> entered;
    stack.emplace_back(root_node.get(), 0);
    entered[root_node.get()] = true;
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && !entered[child]) {
                entered[child] = true;
                stack.emplace_back(child, 0);
            }
            continue;
        }
        Record rec;
        rec.id = g.records_.size();
        rec.op = node->op;
        for (const auto& in : node->inputs) {
            if (in->requires_grad) rec.inputs.push_back(ids.at(in.get()));
        }
        ids[node] = rec.id;
        g.records_.push_back(std::move(rec));
        stack.pop_back();
    }
    // Attach tensor handles (second pass keeps the DFS loop free of refcounts).
    std::vector<NodePtr> by_id(g.records_.size());
    std::vector<const Node*> pending{root_node.get()};
    std::unordered_map<const Node*, bool> seen{{root_node.get(), true}};
    by_id[ids.at(root_node.get())] = root_node;
    while (!pending.empty()) {
        const Node* n = pending.back();
        pending.pop_back();
        for (const auto& in : n->inputs) {
            if (!in->requires_grad || seen[in.get()]) continue;
            seen[in.get()] = true;
            by_id[ids.at(in.get())] = in;
            pending.push_back(in.get());
        }
    }
    for (std::size_t i = 0; i < by_id.size(); ++i) g.records_[i].output = TensorAccess::wrap(by_id[i]);
    return g;
}

void Graph::backward() const {
    if (records_.empty()) return;
    for (const auto& rec : records_) {
        Node& n = *TensorAccess::node(rec.output);
        if (n.op != OpKind::leaf) n.grad.assign(n.value.size(), 0.0);
    }
    Node& root = *TensorAccess::node(records_.back().output);
    auto& rg = grad_buffer(root);
    for (double& v : rg) v += 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        Node& n = *TensorAccess::node(it->output);
        if (n.backward) n.backward(n);
    }
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto& an = TensorAccess::node(a);
    const auto& bn = TensorAccess::node(b);
    node_of(a);
    node_of(b);
    const std::size_t m = rows_of(*an), k = cols_of(*an), n = cols_of(*bn);
    if (rows_of(*bn) != k) {
        throw ShapeError("matmul shape mismatch: " + shape_str(an->shape) + " x " + shape_str(bn->shape));
    }
    auto out = make_node({m, n}, OpKind::matmul, {an, bn});
    gemm_nn(an->value.data(), bn->value.data(), out->value.data(), m, k, n);
    if (out->requires_grad) {
        out->backward = [m, k, n](Node& self) {
            Node& A = *self.inputs[0];
            Node& B = *self.inputs[1];
            if (A.requires_grad) {
                auto bt = transposed(B.value.data(), k, n);
                gemm_nn(self.grad.data(), bt.data(), grad_buffer(A).data(), m, n, k);
            }
            if (B.requires_grad) gemm_tn(A.value.data(), self.grad.data(), grad_buffer(B).data(), m, k, n);
        };
    }
    return TensorAccess::wrap(std::move(out));
}

Tensor transpose(const Tensor& a) {
    const auto& an = TensorAccess::node(a);
    node_of(a);
    const std::size_t r = rows_of(*an), c = cols_of(*an);
    auto out = make_node({c, r}, OpKind::transpose, {an});
    out->value = transposed(an->value.data(), r, c);
    if (out->requires_grad) {
        out->backward = [r, c](Node& self) {
            auto& ga = grad_buffer(*self.inputs[0]);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[j * r + i];
        };
    }
    return TensorAccess::wrap(std::move(out));
}

Tensor add(const Tensor& a, const Tensor& b) {
    const auto& an = TensorAccess::node(a);
    const auto& bn = TensorAccess::node(b);
    node_of(a);
    node_of(b);
    const std::size_t r = rows_of(*an), c = cols_of(*an);
    const bool broadcast = rows_of(*bn) == 1 && r != 1;
    if (cols_of(*bn) != c || (!broadcast && rows_of(*bn) != r)) {
        throw ShapeError("add shape mismatch: " + shape_str(an->shape) + " + " + shape_str(bn->shape));
    }
    auto out = make_node(an->shape, OpKind::add, {an, bn});
    for (std::size_t i = 0; i < r; ++i) {
        const double* brow = bn->value.data() + (broadcast ? 0 : i * c);
        for (std::size_t j = 0; j < c; ++j) out->value[i * c + j] = an->value[i * c + j] + brow[j];
    }
    if (out->requires_grad) {
        out->backward = [r, c, broadcast](Node& self) {
            Node& A = *self.inputs[0];
            Node& B = *self.inputs[1];
            if (A.requires_grad) {
                auto& ga = grad_buffer(A);
                for (std::size_t i = 0; i < r * c; ++i) ga[i] += self.grad[i];
            }
            if (B.requires_grad) {
                auto& gb = grad_buffer(B);
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) gb[(broadcast ? 0 : i * c) + j] += self.grad[i * c + j];
            }
        };
    }
    return TensorAccess::wrap(std::move(out));
}

Tensor scale(const Tensor& a, double factor) {
    const auto& an = TensorAccess::node(a);
    node_of(a);
    auto out = make_node(an->shape, OpKind::scale, {an});
    for (std::size_t i = 0; i < an->value.size(); ++i) out->value[i] = an->value[i] * factor;
    if (out->requires_grad) {
        out->backward = [factor](Node& self) {
            auto& ga = grad_buffer(*self.inputs[0]);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * self.grad[i];
        };
    }
    return TensorAccess::wrap(std::move(out));
}

Tensor relu(const Tensor& a) {
    const auto& an = TensorAccess::node(a);
    node_of(a);
    auto out = make_node(an->shape, OpKind::relu, {an});
    for (std::size_t i = 0; i < an->value.size(); ++i) out->value[i] = an->value[i] > 0.0 ? an->value[i] : 0.0;
    if (out->requires_grad) {
        out->backward = [](Node& self) {
            Node& A = *self.inputs[0];
            auto& ga = grad_buffer(A);
            for (std::size_t i = 0; i < ga.size(); ++i) {
                if (A.value[i] > 0.0) ga[i] += self.grad[i];
            }
        };
    }
    return TensorAccess::wrap(std::move(out));
}

Tensor softmax_rows(const Tensor& a, AttentionMask mask) {
    const auto& an = TensorAccess::node(a);
    node_of(a);
    const std::size_t r = rows_of(*an), c = cols_of(*an);
    auto out = make_node(an->shape, OpKind::softmax, {an});
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t valid = mask == AttentionMask::causal ? std::min(c, i + 1) : c;
        const double* x = an->value.data() + i * c;
        double* y = out->value.data() + i * c;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < valid; ++j) mx = std::max(mx, x[j]);
        double total = 0.0;
        for (std::size_t j = 0; j < valid; ++j) {
            y[j] = std::exp(x[j] - mx);
            total += y[j];
        }
        const double inv = 1.0 / total;
        for (std::size_t j = 0; j < valid; ++j) y[j] *= inv;
    }
    if (out->requires_grad) {
        out->backward = [r, c](Node& self) {
            auto& ga = grad_buffer(*self.inputs[0]);
            for (std::size_t i = 0; i < r; ++i) {
                const double* y = self.value.data() + i * c;
                const double* g = self.grad.data() + i * c;
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += y[j] * g[j];
                for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += y[j] * (g[j] - dot);
            }
        };
    }
    return TensorAccess::wrap(std::move(out));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const auto& xn = TensorAccess::node(x);
    const auto& gn = TensorAccess::node(gain);
    const auto& bn = TensorAccess::node(bias);
    node_of(x);
    node_of(gain);
    node_of(bias);
    const std::size_t r = rows_of(*xn), c = cols_of(*xn);
    if (gn->value.size() != c || bn->value.size() != c) throw ShapeError("layer_norm gain/bias width mismatch");
    auto out = make_node(xn->shape, OpKind::layer_norm, {xn, gn, bn});
    std::vector<double> xhat(r * c);
    std::vector<double> rstd(r);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = xn->value.data() + i * c;
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += row[j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(c);
        rstd[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            const double h = (row[j] - mean) * rstd[i];
            xhat[i * c + j] = h;
            out->value[i * c + j] = gn->value[j] * h + bn->value[j];
        }
    }
    if (out->requires_grad) {
        out->backward = [r, c, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
            Node& X = *self.inputs[0];
            Node& G = *self.inputs[1];
            Node& B = *self.inputs[2];
            if (G.requires_grad) {
                auto& gg = grad_buffer(G);
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) gg[j] += self.grad[i * c + j] * xhat[i * c + j];
            }
            if (B.requires_grad) {
                auto& gb = grad_buffer(B);
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) gb[j] += self.grad[i * c + j];
            }
            if (X.requires_grad) {
                auto& gx = grad_buffer(X);
                std::vector<double> dh(c);
                for (std::size_t i = 0; i < r; ++i) {
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        dh[j] = self.grad[i * c + j] * G.value[j];
                        mean_dh += dh[j];
                        mean_dh_h += dh[j] * xhat[i * c + j];
                    }
                    mean_dh /= static_cast<double>(c);
                    mean_dh_h /= static_cast<double>(c);
                    for (std::size_t j = 0; j < c; ++j) {
                        gx[i * c + j] += rstd[i] * (dh[j] - mean_dh - xhat[i * c + j] * mean_dh_h);
                    }
                }
            }
        };
    }
    return TensorAccess::wrap(std::move(out));
}

Tensor embedding(const Tensor& table, std::span<const TokenId> ids) {
    const auto& tn = TensorAccess::node(table);
    node_of(table);
    if (ids.empty()) throw ShapeError("embedding lookup with no ids");
    const std::size_t v = rows_of(*tn), c = cols_of(*tn);
    for (TokenId id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= v) {
            throw IndexError("embedding id " + std::to_string(id) + " outside table of " + std::to_string(v) + " rows");
        }
    }
    auto out = make_node({ids.size(), c}, OpKind::embedding, {tn});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::copy_n(tn->value.data() + static_cast<std::size_t>(ids[i]) * c, c, out->value.data() + i * c);
    }
    if (out->requires_grad) {
        out->backward = [c, idv = std::vector<TokenId>(ids.begin(), ids.end())](Node& self) {
            auto& gt = grad_buffer(*self.inputs[0]);
            for (std::size_t i = 0; i < idv.size(); ++i) {
                double* dst = gt.data() + static_cast<std::size_t>(idv[i]) * c;
                for (std::size_t j = 0; j < c; ++j) dst[j] += self.grad[i * c + j];
            }
        };
    }
    return TensorAccess::wrap(std::move(out));
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat_rows with no parts");
    const std::size_t c = parts.front().cols();
    std::size_t r = 0;
    bool any = false;
    for (const auto& p : parts) {
        if (p.cols() != c) throw ShapeError("concat_rows column mismatch");
        r += p.rows();
        any = any || p.requires_grad();
    }
    any = any && g_grad_enabled;
    auto out = std::make_shared<Node>();
    out->shape = {r, c};
    out->op = any ? OpKind::concat_rows : OpKind::leaf;
    out->value.reserve(r * c);
    for (const auto& p : parts) {
        const auto& pn = TensorAccess::node(p);
        out->value.insert(out->value.end(), pn->value.begin(), pn->value.end());
    }
    if (any) {
        out->requires_grad = true;
        for (const auto& p : parts) out->inputs.push_back(TensorAccess::node(p));
        out->backward = [](Node& self) {
            std::size_t offset = 0;
            for (auto& in : self.inputs) {
                const std::size_t n = in->value.size();
                if (in->requires_grad) {
                    auto& g = grad_buffer(*in);
                    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
                }
                offset += n;
            }
        };
    }
    return TensorAccess::wrap(std::move(out));
}

Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets) {
    const auto& ln = TensorAccess::node(logits);
    node_of(logits);
    const std::size_t r = rows_of(*ln), c = cols_of(*ln);
    if (targets.size() != r) throw ShapeError("cross_entropy: one target per logits row required");
    auto out = make_node({1, 1}, OpKind::cross_entropy, {ln});
    std::vector<double> probs(r * c, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
        if (targets[i] < 0) continue;
        if (static_cast<std::size_t>(targets[i]) >= c) throw IndexError("cross_entropy target out of range");
        const double* x = ln->value.data() + i * c;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            probs[i * c + j] = std::exp(x[j] - mx);
            z += probs[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
        total += -(x[targets[i]] - mx - std::log(z));
    }
    out->value[0] = total;
    if (out->requires_grad) {
        out->backward = [r, c, probs = std::move(probs),
                         tv = std::vector<TokenId>(targets.begin(), targets.end())](Node& self) {
            auto& gl = grad_buffer(*self.inputs[0]);
            const double g = self.grad[0];
            for (std::size_t i = 0; i < r; ++i) {
                if (tv[i] < 0) continue;
                for (std::size_t j = 0; j < c; ++j) gl[i * c + j] += g * probs[i * c + j];
                gl[i * c + static_cast<std::size_t>(tv[i])] -= g;
            }
        };
    }
    return TensorAccess::wrap(std::move(out));
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw DomainError("dropout probability must be in [0, 1)");
    if (p == 0.0) return x;
    const auto& xn = TensorAccess::node(x);
    node_of(x);
    auto out = make_node(xn->shape, OpKind::dropout, {xn});
    const double keep = 1.0 / (1.0 - p);
    std::vector<double> mask(xn->value.size());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = rng.uniform() < p ? 0.0 : keep;
        out->value[i] = xn->value[i] * mask[i];
    }
    if (out->requires_grad) {
        out->backward = [mask = std::move(mask)](Node& self) {
            auto& gx = grad_buffer(*self.inputs[0]);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * mask[i];
        };
    }
    return TensorAccess::wrap(std::move(out));
}

// ---------------------------------------------------------------------------
// Scalar helpers
// ---------------------------------------------------------------------------

std::vector<double> softmax(std::span<const double> v) {
    if (v.empty()) throw DomainError("softmax of an empty vector");
    check_finite(v, "softmax");
    const double mx = *std::max_element(v.begin(), v.end());
    std::vector<double> out(v.size());
    double total = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        total += out[i];
    }
    for (double& x : out) x /= total;
    return out;
}

std::vector<double> log_softmax(std::span<const double> v) {
    if (v.empty()) throw DomainError("log_softmax of an empty vector");
    check_finite(v, "log_softmax");
    const double mx = *std::max_element(v.begin(), v.end());
    double total = 0.0;
    for (double x : v) total += std::exp(x - mx);
    const double lz = mx + std::log(total);
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - lz;
    return out;
}

double cross_entropy(std::span<const double> logits, std::size_t target) {
    if (target >= logits.size()) throw IndexError("cross_entropy target out of range");
    return -log_softmax(logits)[target];
}

}  // namespace petlab
