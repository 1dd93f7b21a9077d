#include "gradbench/autodiff.hpp"

#include "gradbench/errors.hpp"

namespace gradbench {

Variable Variable::parameter(Tensor value, std::string name) {
    Variable v;
    v.node_ = std::make_shared<Node>();
    v.node_->grad = Tensor::like(value);
    v.node_->value = std::move(value);
    v.node_->requires_grad = true;
    v.node_->trainable = true;
    v.node_->name = std::move(name);
    return v;
}

Variable Variable::constant(Tensor value) {
    Variable v;
    v.node_ = std::make_shared<Node>();
    v.node_->value = std::move(value);
    return v;
}

Variable Variable::intermediate(Tensor value, bool requires_grad) {
    Variable v;
    v.node_ = std::make_shared<Node>();
    v.node_->value = std::move(value);
    v.node_->requires_grad = requires_grad;
    return v;
}

Tensor& Variable::grad() const {
    if (node_->grad.empty()) node_->grad = Tensor::like(node_->value);
    return node_->grad;
}

void Variable::accumulate_grad(const Tensor& delta) const {
    Tensor& g = grad();
    if (delta.shape() != g.shape()) {
        throw ShapeError("gradient shape " + shape_string(delta.shape()) + " does not match value shape " +
                         shape_string(g.shape()));
    }
    double* dst = g.raw();
    const double* src = delta.raw();
    for (std::size_t i = 0, n = g.size(); i < n; ++i) dst[i] += src[i];
}

void Variable::zero_grad() const {
    if (node_->grad.empty()) {
        node_->grad = Tensor::like(node_->value);
    } else {
        node_->grad.fill(0.0);
    }
}

Variable Graph::record(Tensor value, const std::vector<Variable>& inputs, BackwardFn backward) {
    bool needs_grad = false;
    if (recording_) {
        for (const Variable& in : inputs) {
            if (in.defined() && in.requires_grad()) {
                needs_grad = true;
                break;
            }
        }
    }
    Variable out = Variable::intermediate(std::move(value), needs_grad);
    if (needs_grad) nodes_.push_back(Node{out, std::move(backward)});
    return out;
}

void Graph::mix_decision(std::uint64_t word) {
    decision_hash_ ^= word + 0x9e3779b97f4a7c15ULL + (decision_hash_ << 6) + (decision_hash_ >> 2);
}

void Graph::backward(const Variable& loss) {
    if (!loss.defined() || loss.value().size() != 1) {
        throw ShapeError("backward requires a scalar loss, got " +
                         (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
    }
    visits_ = 0;
    if (!loss.requires_grad()) return;
    Variable root = loss;
    root.grad().fill(0.0);
    root.grad()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        ++visits_;
        // Nodes not upstream of the loss never receive a gradient.
        if (!it->output.has_grad()) continue;
        it->backward(it->output.grad());
    }
}

}  // namespace gradbench
