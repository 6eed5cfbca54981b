#ifndef WSED_GRAPH_HPP
#define WSED_GRAPH_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "wsed/tensor.hpp"

namespace wsed {

using NodeId = std::int32_t;

enum class Mode { kTrain, kInfer };

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order by construction: an op may only consume ids that already
/// exist. backward() seeds the loss gradient and replays the tape once in
/// reverse.
class Graph {
public:
    struct Node {
        const char* op;
        std::vector<NodeId> inputs;
        Tensor value;
        Tensor grad; // empty until the first accumulation
        bool requires_grad = false;
        std::function<void(Graph&)> backward;
    };

    /// Leaf that never receives gradient (inputs, fixed targets).
    NodeId constant(Tensor value) { return add_node("constant", {}, std::move(value), nullptr, false); }

    /// Leaf whose gradient is wanted (trainable parameter).
    NodeId parameter(Tensor value) { return add_node("parameter", {}, std::move(value), nullptr, true); }

    NodeId add_node(const char* op, std::vector<NodeId> inputs, Tensor value,
                    std::function<void(Graph&)> backward, bool requires_grad) {
        Node n;
        n.op = op;
        n.inputs = std::move(inputs);
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    const Tensor& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }

    /// Gradient accumulator; allocated as zeros on first access.
    Tensor& grad(NodeId id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
        return n.grad;
    }

    bool has_grad(NodeId id) const { return !nodes_[static_cast<std::size_t>(id)].grad.empty(); }
    bool requires_grad(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

    /// True if any input requires gradient (so the new node must too).
    bool any_requires(const std::vector<NodeId>& ids) const {
        for (NodeId id : ids) {
            if (requires_grad(id)) return true;
        }
        return false;
    }

    /// Reverse pass from a scalar loss node. Visits each node exactly once in
    /// reverse topological order; nodes whose output never received gradient
    /// are skipped.
    void backward(NodeId loss) {
        Node& ln = nodes_[static_cast<std::size_t>(loss)];
        if (ln.value.size() != 1)
            throw ContractError("backward requires a scalar loss node, got shape " + ln.value.shape_str());
        grad(loss).vec().setOnes();
        for (std::int64_t i = loss; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.backward && !n.grad.empty()) n.backward(*this);
        }
    }

    std::size_t node_count() const { return nodes_.size(); }
    const Node& node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }

    /// Id the next add_node call will return; lets op implementations capture
    /// their own output id inside the backward closure.
    NodeId next_id() const { return static_cast<NodeId>(nodes_.size()); }

private:
    std::vector<Node> nodes_;
};

} // namespace wsed

#endif
