#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace lyv5 {

template <std::floating_point T>
class Graph;

template <std::floating_point T>
struct Node {
    Tensor<T> value;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;
    const char* op = "leaf";
    bool requires_grad = false;
};

// Handle to a value recorded in a Graph.
template <std::floating_point T>
class Var {
public:
    Var() = default;
    Var(Graph<T>* graph, std::shared_ptr<Node<T>> node) : graph_(graph), node_(std::move(node)) {}

    bool valid() const noexcept { return static_cast<bool>(node_); }
    const Tensor<T>& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t rank() const { return node_->value.rank(); }
    std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
    std::size_t numel() const { return node_->value.numel(); }
    std::span<const T> data() const { return node_->value.data(); }
    T item() const { return node_->value.item(); }
    bool requires_grad() const { return node_->requires_grad; }
    std::span<const T> grad() const { return node_->value.grad(); }
    const char* op() const { return node_->op; }

    Graph<T>& graph() const { return *graph_; }
    Graph<T>* graph_ptr() const noexcept { return graph_; }
    const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

private:
    Graph<T>* graph_ = nullptr;
    std::shared_ptr<Node<T>> node_;
};

// Gradient buffer of input `i` of a recorded node, or an empty span when that
// input does not need a gradient.
template <std::floating_point T>
std::span<T> input_grad(Node<T>& self, std::size_t i)
{
    auto& in = *self.inputs[i];
    if (!in.requires_grad) return {};
    return in.value.grad_mut();
}

// Explicit recording context for one forward pass. There is no global tape;
// each model invocation owns its graph. Nodes are appended in creation order,
// which is a valid topological order by construction.
template <std::floating_point T>
class Graph {
public:
    explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool grad_enabled() const noexcept { return grad_enabled_; }
    std::size_t recorded() const noexcept { return tape_.size(); }

    // Non-differentiable input.
    Var<T> constant(Tensor<T> t)
    {
        auto node = std::make_shared<Node<T>>();
        node->value = std::move(t);
        node->op = "constant";
        return Var<T>(this, std::move(node));
    }

    // Differentiable leaf. Shares data and gradient buffers with `t`, so
    // gradients of model parameters accumulate straight into the parameter.
    Var<T> leaf(Tensor<T>& t)
    {
        if (!grad_enabled_) return constant(t);
        t.set_requires_grad(true);
        auto node = std::make_shared<Node<T>>();
        node->value = t;
        node->requires_grad = true;
        node->op = "leaf";
        return Var<T>(this, std::move(node));
    }

    template <class Backward>
    Var<T> record(const char* op, Tensor<T> out, const std::vector<Var<T>>& inputs, Backward&& backward)
    {
        bool needs = false;
        for (const auto& in : inputs) {
            if (in.graph_ptr() != this)
                throw Error(std::string(op) + ": input recorded in a different graph");
            needs = needs || in.requires_grad();
        }
        auto node = std::make_shared<Node<T>>();
        node->value = std::move(out);
        node->op = op;
        if (grad_enabled_ && needs) {
            node->requires_grad = true;
            node->inputs.reserve(inputs.size());
            for (const auto& in : inputs) node->inputs.push_back(in.node());
            node->backward = std::forward<Backward>(backward);
            tape_.push_back(node);
        }
        return Var<T>(this, std::move(node));
    }

    void backward(const Var<T>& loss)
    {
        if (loss.graph_ptr() != this) throw Error("backward: loss belongs to a different graph");
        if (loss.numel() != 1)
            throw ShapeError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
        if (!loss.requires_grad()) return;
        auto& seed = *loss.node();
        seed.value.grad_mut()[0] += T(1);
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
            Node<T>& node = **it;
            if (!node.value.has_grad()) continue;
            node.backward(node);
            if (!retain_grads_) node.value.drop_grad();
        }
    }

    // Keep gradients of intermediate nodes after backward (tests, debugging).
    void retain_grads(bool on) noexcept { retain_grads_ = on; }

    void clear() noexcept { tape_.clear(); }

private:
    bool grad_enabled_;
    bool retain_grads_ = false;
    std::vector<std::shared_ptr<Node<T>>> tape_;
};

template <std::floating_point T>
Graph<T>& common_graph(std::initializer_list<const Var<T>*> vars)
{
    Graph<T>* g = nullptr;
    for (const auto* v : vars) {
        if (!v->valid()) throw Error("operation on an empty Var");
        if (!g) g = v->graph_ptr();
        else if (g != v->graph_ptr()) throw Error("operands recorded in different graphs");
    }
    return *g;
}

} // namespace lyv5
