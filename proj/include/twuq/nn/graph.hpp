#pragma once

#include "twuq/nn/tensor.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

namespace twuq::nn {

struct NodeId {
    std::size_t index = 0;
};

enum class Mode { Train, Eval };

// Tape for reverse-mode differentiation at tensor granularity. Every op
// appends a node holding its forward value and a closure that pushes the
// node's gradient into its parents. Parameter nodes borrow their value from
// the caller, which must outlive the graph.
template <class T>
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, NodeId self)>;

    NodeId constant(Tensor<T> value);
    // slot identifies the parameter to the caller (see parameter_nodes()).
    NodeId parameter(const Tensor<T>& value, std::size_t slot);
    NodeId push(Tensor<T> value, bool requires_grad, BackwardFn backward);

    const Tensor<T>& value(NodeId id) const;
    bool requires_grad(NodeId id) const { return nodes_[id.index].requires_grad; }
    // Gradient buffer, allocated as zeros on first access.
    Tensor<T>& grad(NodeId id);
    bool has_grad(NodeId id) const { return nodes_[id.index].grad.has_value(); }

    // Seeds d(loss)/d(loss) = 1 for a single-element node and runs the tape
    // in reverse.
    void backward(NodeId loss);

    const std::vector<std::pair<NodeId, std::size_t>>& parameter_nodes() const noexcept { return params_; }
    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        std::optional<Tensor<T>> owned;
        const Tensor<T>* borrowed = nullptr;
        std::optional<Tensor<T>> grad;
        BackwardFn backward;
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
    std::vector<std::pair<NodeId, std::size_t>> params_;
};

// Layer ops. Shapes follow the C x N x H x W activation layout.

// Stride-1 "same" convolution, kernel Co x Ci x k x k (k odd), bias [Co].
template <class T>
NodeId conv2d(Graph<T>& g, NodeId x, NodeId w, NodeId b);

// Transposed convolution, kernel 2, stride 2; weights Ci x Co x 2 x 2.
template <class T>
NodeId transposed_conv2d(Graph<T>& g, NodeId x, NodeId w, NodeId b);

// 2 x 2 max pooling, stride 2. Ties resolve to the first maximum in
// row-major window order.
template <class T>
NodeId maxpool2d(Graph<T>& g, NodeId x);

template <class T>
NodeId relu(Graph<T>& g, NodeId x);

// Channel (depth) concatenation: [a; b].
template <class T>
NodeId concat(Graph<T>& g, NodeId a, NodeId b);

// Inverted dropout: in Train mode zeroes each entry with probability rate
// and scales survivors by 1 / (1 - rate). Identity in Eval mode.
template <class T>
NodeId dropout(Graph<T>& g, NodeId x, double rate, Mode mode, std::mt19937_64* rng);

// Mean of (pred - target)^2 over entries with mask != 0. Returns a
// one-element node. Throws ArgumentError for an empty mask.
template <class T>
NodeId masked_mse(Graph<T>& g, NodeId pred, const Tensor<T>& target, const Tensor<T>& mask);

}  // namespace twuq::nn
