#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gradbench/tensor.hpp"

namespace gradbench {

/// Shared handle to a value with a gradient slot.
///
/// Copies of a Variable refer to the same storage, so a parameter held by a
/// network and by an optimizer is one object. `requires_grad` controls whether
/// backward propagates into it; `trainable` is the freeze flag consulted by
/// the optimizer and has no effect on forward or backward.
class Variable {
public:
    Variable() = default;

    static Variable parameter(Tensor value, std::string name);
    static Variable constant(Tensor value);
    // Intermediate result of a recorded operation.
    static Variable intermediate(Tensor value, bool requires_grad);

    bool defined() const { return node_ != nullptr; }
    explicit operator bool() const { return defined(); }

    const Tensor& value() const { return node_->value; }
    Tensor& value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }

    // Gradient buffer, allocated as zeros on first access. Mutable through a
    // const handle: constness applies to the handle, not the shared node.
    Tensor& grad() const;
    bool has_grad() const { return !node_->grad.empty(); }

    // Adds `delta` (same shape as value) into the gradient.
    void accumulate_grad(const Tensor& delta) const;

    void zero_grad() const;

    bool requires_grad() const { return node_->requires_grad; }
    bool trainable() const { return node_->trainable; }
    void set_trainable(bool on) { node_->trainable = on; }
    const std::string& name() const { return node_->name; }

    bool same_as(const Variable& other) const { return node_ == other.node_; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool trainable = false;
        std::string name;
    };
    std::shared_ptr<Node> node_;
};

/// Tape of recorded forward operations for one forward/backward sequence.
///
/// Operations append themselves in execution order, which is a topological
/// order by construction. backward() walks the tape in reverse, calling each
/// node's gradient function once.
class Graph {
public:
    using BackwardFn = std::function<void(const Tensor& grad_output)>;

    // A non-recording graph (inference) returns constants from every operation.
    explicit Graph(bool recording = true) : recording_(recording) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool recording() const { return recording_; }

    // Wraps `value` as the output of an operation over `inputs`. The node is
    // only recorded when some input requires a gradient.
    Variable record(Tensor value, const std::vector<Variable>& inputs, BackwardFn backward);

    // Seeds d(loss)/d(loss) = 1 and propagates to every reachable Variable.
    void backward(const Variable& loss);

    // Decision tracing: relu masks and pooling argmaxes are folded into a
    // hash so callers can detect when a perturbation crosses a kink.
    void enable_decision_trace() { tracing_ = true; }
    bool tracing_decisions() const { return tracing_; }
    void mix_decision(std::uint64_t word);
    std::uint64_t decision_hash() const { return decision_hash_; }

    std::size_t size() const { return nodes_.size(); }
    // Number of gradient functions invoked by the last backward().
    std::size_t last_backward_visits() const { return visits_; }

    void clear() { nodes_.clear(); }

private:
    struct Node {
        Variable output;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
    bool recording_;
    bool tracing_ = false;
    std::uint64_t decision_hash_ = 0xcbf29ce484222325ULL;
    std::size_t visits_ = 0;
};

}  // namespace gradbench
