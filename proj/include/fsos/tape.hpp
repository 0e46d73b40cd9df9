#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fsos/tensor.hpp"

namespace fsos {

enum class Primitive : std::uint8_t {
    leaf,
    affine,            // x[n,d] (or [d]) · W[d,m] + b[m]
    relu,
    sigmoid,
    softmax_xent,      // mean cross-entropy of logits[n,C] against integer labels[n]
    bce,               // mean binary cross-entropy of logits against targets in [0,1]
    squared_distance,  // pairwise: a[m,D], b[n,D] -> [m,n]; two vectors -> [1]
    mean_rows,         // [n,d] -> [d]
    conv3x3_pool,      // x[N,C,H,W] (or [C,H,W]), W[O,C,3,3], b[O] -> conv, ReLU, 2x2 max-pool
    dot,               // pairwise: a[m,D], b[n,D] -> a·bᵀ [m,n]; two vectors -> [1]
    scale_shift,       // x * scale[C] + shift[C] along the channel axis
    add,               // elementwise, second operand may be a scalar
    neg,
    sum,
    slice_rows,
    concat_rows,
    reshape,
};

std::string_view primitive_name(Primitive kind);

class Tape;

// Handle to a value recorded on a Tape.
struct Var {
    const Tape* tape = nullptr;
    std::uint32_t id = 0;
};

// Single-use record of primitive applications for reverse-mode differentiation.
//
// Nodes are appended in execution order, so every input precedes its
// consumers. Values are copied into the tape; parameters registered with
// `param` receive their gradient in Tensor::accumulate_grad when `backward`
// runs. A tape may be differentiated once.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(const Tensor& value);
    Var constant(Shape shape, std::vector<double> values);
    // Gradient flows back into `tensor` iff tensor.requires_grad().
    Var param(Tensor& tensor);

    // Generic dispatch over the tensor-only primitives.
    Var apply(Primitive kind, std::span<const Var> inputs);

    Var affine(Var x, Var weight, Var bias);
    Var relu(Var x);
    Var sigmoid(Var x);
    Var softmax_xent(Var logits, Var labels);
    Var bce(Var logits, Var targets);
    Var squared_distance(Var a, Var b);
    Var mean_rows(Var x);
    Var conv3x3_pool(Var x, Var weight, Var bias);
    Var dot(Var a, Var b);
    Var scale_shift(Var x, Var scale, Var shift);
    Var add(Var a, Var b);
    Var neg(Var x);
    Var sum(Var x);
    Var slice_rows(Var x, std::size_t begin, std::size_t count);
    Var concat_rows(std::span<const Var> parts);
    Var reshape(Var x, Shape shape);

    const Shape& shape(Var v) const;
    std::span<const double> values(Var v) const;
    Tensor tensor(Var v) const;
    double item(Var v) const;

    // Populates gradients of every parameter reachable from `loss`.
    void backward(Var loss);

    std::size_t size() const noexcept { return nodes_.size(); }
    bool consumed() const noexcept { return consumed_; }

private:
    struct Node {
        Primitive kind = Primitive::leaf;
        Shape shape;
        std::vector<double> value;
        std::vector<std::uint32_t> inputs;
        bool needs_grad = false;
        Tensor* param = nullptr;
        std::vector<double> saved;        // op-specific activations
        std::vector<std::size_t> indices;  // op-specific integer data
    };

    const Node& node(Var v) const;
    Var push(Node node);
    void check_owned(Var v, std::string_view op) const;
    void backprop(const Node& n, const std::vector<double>& gout, std::vector<std::vector<double>>& grads) const;

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

}  // namespace fsos
