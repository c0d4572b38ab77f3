#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "gssplat/core.hpp"

namespace gssplat {

// Row-major shape, up to 4 dims.
using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline uint64_t next_node_id() {
    static std::atomic<uint64_t> counter{1};
    return counter.fetch_add(1);
}

// Graph recording is suppressed inside a NoGradGuard scope (inference mode).
inline bool& grad_recording_flag() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool saved;
    NoGradGuard() : saved(grad_recording_flag()) { grad_recording_flag() = false; }
    ~NoGradGuard() { grad_recording_flag() = saved; }
};

template <typename S>
struct NodeT {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;
    std::vector<std::shared_ptr<NodeT<S>>> parents;
    std::function<void(NodeT<S>&)> backward;
    uint64_t id = 0;
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), S(0));
    }
};

template <typename S>
class TensorT {
public:
    using Node = NodeT<S>;

    TensorT() = default;
    explicit TensorT(std::shared_ptr<Node> n) : n_(std::move(n)) {}

    static TensorT constant(Shape shape, std::vector<S> data) {
        auto n = std::make_shared<Node>();
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw ContractViolation("tensor: data length does not match shape");
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->id = next_node_id();
        n->requires_grad = false;
        return TensorT(std::move(n));
    }

    static TensorT zeros(Shape shape) {
        int64_t n = shape_numel(shape);
        return constant(std::move(shape), std::vector<S>(n, S(0)));
    }

    static TensorT scalar(S v) { return constant({1}, {v}); }

    // Leaf with gradient storage (network weight / directly fitted value).
    static TensorT param(Shape shape, std::vector<S> data) {
        TensorT t = constant(std::move(shape), std::move(data));
        t.n_->requires_grad = true;
        t.n_->ensure_grad();
        return t;
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int dim(int i) const { return n_->shape[i]; }
    int ndim() const { return static_cast<int>(n_->shape.size()); }
    int64_t size() const { return static_cast<int64_t>(n_->value.size()); }
    std::vector<S>& data() { return n_->value; }
    const std::vector<S>& data() const { return n_->value; }
    std::vector<S>& grad() {
        n_->ensure_grad();
        return n_->grad;
    }
    bool requires_grad() const { return n_->requires_grad; }
    uint64_t id() const { return n_->id; }
    std::shared_ptr<Node> node() const { return n_; }

    S item() const {
        if (size() != 1) throw ContractViolation("tensor: item() on non-scalar");
        return n_->value[0];
    }

private:
    static int64_t shape_numel_of(const Shape& s) { return shape_numel(s); }
    std::shared_ptr<Node> n_;
};

// Builds an op node. Parent links and the closure are dropped when no parent
// needs gradients or recording is off, so inference does not grow a graph.
template <typename S>
TensorT<S> make_op(Shape shape, std::vector<S> value, std::vector<TensorT<S>> parents,
                   std::function<void(NodeT<S>&)> backward) {
    auto n = std::make_shared<NodeT<S>>();
    if (shape_numel(shape) != static_cast<int64_t>(value.size()))
        throw ContractViolation("make_op: value length does not match shape");
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->id = next_node_id();
    bool needs = false;
    if (grad_recording_flag())
        for (const auto& p : parents)
            if (p.defined() && p.requires_grad()) needs = true;
    if (needs) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backward = std::move(backward);
    }
    return TensorT<S>(std::move(n));
}

// Reverse pass from a scalar loss. Node ids are creation-ordered, which is a
// topological order of the DAG.
template <typename S>
void backward(const TensorT<S>& loss) {
    if (loss.size() != 1) throw ContractViolation("backward: loss must be scalar");
    auto root = loss.node();
    if (!root->requires_grad) return;

    std::vector<std::shared_ptr<NodeT<S>>> nodes;
    std::unordered_set<const NodeT<S>*> seen;
    std::vector<std::shared_ptr<NodeT<S>>> stack{root};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto cur = stack.back();
        stack.pop_back();
        nodes.push_back(cur);
        for (const auto& p : cur->parents)
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p);
    }
    std::sort(nodes.begin(), nodes.end(),
              [](const auto& a, const auto& b) { return a->id > b->id; });

    root->ensure_grad();
    root->grad[0] += S(1);
    for (auto& n : nodes) {
        if (n->backward) {
            n->ensure_grad();
            for (auto& p : n->parents) p->ensure_grad();
            n->backward(*n);
        }
    }
}

// Named parameter registry shared by the optimizer and checkpoints.
template <typename S>
struct ParamStore {
    std::vector<std::pair<std::string, TensorT<S>>> items;

    TensorT<S> add(const std::string& name, TensorT<S> t) {
        if (find(name)) throw ContractViolation("duplicate parameter name: " + name);
        items.emplace_back(name, t);
        return t;
    }

    TensorT<S>* find(const std::string& name) {
        for (auto& [k, v] : items)
            if (k == name) return &v;
        return nullptr;
    }

    void zero_grad() {
        for (auto& [k, v] : items) {
            auto& g = v.grad();
            std::fill(g.begin(), g.end(), S(0));
        }
    }

    int64_t total_size() const {
        int64_t n = 0;
        for (const auto& [k, v] : items) n += v.size();
        return n;
    }
};

using Tensor = TensorT<float>;

}  // namespace gssplat
