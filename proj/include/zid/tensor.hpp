#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "zid/common.hpp"

ZID_NAMESPACE_BEGIN

struct Node {
    Shape shape;
    std::vector<Real> data;
    std::vector<Real> grad;
    bool requires_grad = false;
    bool released = false;
    std::uint64_t grad_epoch = 0;
    std::string_view op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
};

namespace detail {

inline std::atomic<std::uint64_t>& last_backward_epoch() {
    static std::atomic<std::uint64_t> epoch{0};
    return epoch;
}

inline thread_local bool grad_enabled = true;

}  // namespace detail

/// Dense row-major array of reals with optional tape participation.
///
/// A Tensor is a shared handle: copies alias the same storage. Data is
/// treated as immutable once an operation has consumed it; only leaf
/// tensors (parameters, inputs) are mutated in place, by optimizers.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, Real fill = Real(0)) : node_(std::make_shared<Node>()) {
        validate(shape);
        node_->data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
        node_->shape = std::move(shape);
    }

    Tensor(Shape shape, std::vector<Real> values) : node_(std::make_shared<Node>()) {
        validate(shape);
        if (static_cast<std::int64_t>(values.size()) != shape_numel(shape))
            throw ShapeError("tensor data has " + std::to_string(values.size()) + " values but shape " +
                             shape_str(shape) + " needs " + std::to_string(shape_numel(shape)));
        node_->shape = std::move(shape);
        node_->data = std::move(values);
    }

    static Tensor scalar(Real v) { return Tensor(Shape{1}, std::vector<Real>{v}); }

    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    bool defined() const { return node_ != nullptr; }

    const Shape& shape() const { return node_->shape; }
    std::int64_t rank() const { return static_cast<std::int64_t>(node_->shape.size()); }
    std::int64_t dim(std::int64_t i) const {
        if (i < 0) i += rank();
        if (i < 0 || i >= rank()) throw ShapeError("axis " + std::to_string(i) + " out of range for rank " + std::to_string(rank()));
        return node_->shape[static_cast<std::size_t>(i)];
    }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

    std::span<const Real> data() const { return node_->data; }
    /// In-place access. Only valid on leaves that are not part of a live graph.
    std::span<Real> mutable_data() { return node_->data; }

    Real item() const {
        if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }
    Real operator[](std::int64_t i) const { return node_->data[static_cast<std::size_t>(i)]; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on = true) {
        node_->requires_grad = on;
        return *this;
    }

    /// True when this tensor took part in the most recent backward pass.
    bool has_grad() const {
        return node_->grad_epoch != 0 && node_->grad_epoch == detail::last_backward_epoch().load() &&
               !node_->grad.empty();
    }
    std::span<const Real> grad() const {
        if (!has_grad()) throw GraphError("tensor has no gradient from the most recent backward pass");
        return node_->grad;
    }

    std::string_view op() const { return node_->op; }

    /// Copy of the values with no graph history.
    Tensor detach() const { return Tensor(node_->shape, node_->data); }

    Node& node() const { return *node_; }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

private:
    static void validate(const Shape& s) {
        for (std::size_t i = 0; i < s.size(); ++i)
            if (s[i] <= 0) throw ShapeError("dimension " + std::to_string(i) + " must be positive in " + shape_str(s));
    }

    std::shared_ptr<Node> node_;
};

/// Disables graph construction for the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled; }

// ---------------------------------------------------------------------------
// Instrumentation: op tape, owner scopes, NaN watch, MAC counting.

struct TapeEntry {
    std::string op;
    std::string owner;
};

/// Records every operation executed on this thread while alive.
class OpTape {
public:
    OpTape();
    ~OpTape();
    OpTape(const OpTape&) = delete;
    OpTape& operator=(const OpTape&) = delete;

    const std::vector<TapeEntry>& entries() const { return entries_; }
    std::size_t count_owned_by(std::string_view owner) const {
        return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(),
                                                      [&](const TapeEntry& e) { return e.owner == owner; }));
    }
    void push(TapeEntry e) { entries_.push_back(std::move(e)); }

private:
    OpTape* prev_;
    std::vector<TapeEntry> entries_;
};

namespace detail {
inline thread_local OpTape* active_tape = nullptr;
inline thread_local std::string_view active_owner = "";
inline thread_local bool nan_watch = false;
inline thread_local std::optional<std::string> first_nan_op;
inline thread_local std::uint64_t* mac_counter = nullptr;
}  // namespace detail

inline OpTape::OpTape() : prev_(detail::active_tape) { detail::active_tape = this; }
inline OpTape::~OpTape() { detail::active_tape = prev_; }

/// Tags operations executed while alive with a module owner name.
class OwnerScope {
public:
    explicit OwnerScope(std::string_view owner) : prev_(detail::active_owner) { detail::active_owner = owner; }
    ~OwnerScope() { detail::active_owner = prev_; }
    OwnerScope(const OwnerScope&) = delete;
    OwnerScope& operator=(const OwnerScope&) = delete;

private:
    std::string_view prev_;
};

/// Remembers the first operation whose output contains a non-finite value.
class NanWatch {
public:
    NanWatch() : prev_(detail::nan_watch) {
        detail::nan_watch = true;
        detail::first_nan_op.reset();
    }
    ~NanWatch() { detail::nan_watch = prev_; }
    NanWatch(const NanWatch&) = delete;
    NanWatch& operator=(const NanWatch&) = delete;

    std::optional<std::string> first_offender() const { return detail::first_nan_op; }

private:
    bool prev_;
};

/// Counts multiply-accumulates of conv/matmul/linear ops while alive.
class MacCounter {
public:
    MacCounter() : prev_(detail::mac_counter) { detail::mac_counter = &count_; }
    ~MacCounter() { detail::mac_counter = prev_; }
    MacCounter(const MacCounter&) = delete;
    MacCounter& operator=(const MacCounter&) = delete;
    std::uint64_t count() const { return count_; }

private:
    std::uint64_t* prev_;
    std::uint64_t count_ = 0;
};

namespace detail {

inline void count_macs(std::uint64_t n) {
    if (mac_counter) *mac_counter += n;
}

inline bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
    for (auto* t : ts)
        if (t && t->defined() && t->requires_grad()) return true;
    return false;
}

/// Wraps freshly computed values into a tensor and, when gradients are
/// enabled and some input requires them, attaches the backward closure.
inline Tensor make_result(std::string_view op, Shape shape, std::vector<Real> values,
                          std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
    Tensor out(std::move(shape), std::move(values));
    Node& n = out.node();
    n.op = op;
    if (active_tape) active_tape->push({std::string(op), std::string(active_owner)});
    if (nan_watch && !first_nan_op) {
        for (Real v : n.data)
            if (!std::isfinite(v)) {
                first_nan_op = std::string(active_owner.empty() ? "" : std::string(active_owner) + ":") + std::string(op);
                break;
            }
    }
    if (grad_enabled && backward) {
        bool needs = false;
        for (auto& t : inputs) {
            if (!t.defined()) continue;
            if (t.node().released) throw GraphError(std::string(op) + ": input belongs to a graph already consumed by backward");
            needs = needs || t.requires_grad();
        }
        if (needs) {
            n.requires_grad = true;
            n.parents.reserve(inputs.size());
            for (auto& t : inputs)
                if (t.defined()) n.parents.push_back(t.node_ptr());
            n.backward = std::move(backward);
        }
    }
    return out;
}

/// Gradient buffer of a parent if it participates in the current backward.
inline Real* grad_of(Node& parent) {
    return parent.requires_grad && !parent.grad.empty() ? parent.grad.data() : nullptr;
}

}  // namespace detail

/// Reverse-mode pass from a scalar loss. Gradients of every participating
/// tensor are zeroed first; the graph is released afterwards.
inline void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw GraphError("backward() requires a scalar loss, got shape " + (loss.defined() ? shape_str(loss.shape()) : "undefined"));
    Node* root = &loss.node();
    if (root->released || !root->requires_grad || !root->backward)
        throw GraphError("backward() called on a tensor outside the recorded graph");

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    const std::uint64_t epoch = detail::last_backward_epoch().fetch_add(1) + 1;
    for (Node* n : order) {
        n->grad.assign(n->data.size(), Real(0));
        n->grad_epoch = epoch;
    }
    root->grad[0] = Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward) (*it)->backward(**it);

    for (Node* n : order) {
        if (!n->backward) continue;
        n->backward = nullptr;
        n->parents.clear();
        n->released = true;
        n->grad.clear();
        n->grad.shrink_to_fit();
        n->grad_epoch = 0;
    }
}

ZID_NAMESPACE_END
