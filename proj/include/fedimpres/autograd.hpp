#pragma once

// Tape-based reverse-mode differentiation over Tensors.
//
// A Tape is a Wengert list: every op appends one node holding its value and
// a closure that pushes the node's output gradient into its parents. Nodes
// are appended in evaluation order, so walking the list backwards is a valid
// topological order. Everything is first-order; expressions that need a
// gradient inside the objective (the classifier-head gradient) are written
// out in closed form with ordinary ops.

#include "fedimpres/tensor.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace fedimpres::ad {

class Tape;

class Var {
public:
    Var() = default;
    const Tensor& value() const;
    const Tensor& grad() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t id() const noexcept { return id_; }
    Tape* tape() const noexcept { return tape_; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    // Receives the node's own value and its accumulated output gradient.
    using BackwardFn = std::function<void(Tape&, const Tensor& out, const Tensor& out_grad)>;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    // Appends a derived node. The closure is dropped when no parent needs a gradient.
    Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward);

    // Seeds d(root)/d(root) = 1 and propagates. Root must hold one element.
    void backward(Var root);

    const Tensor& value(Var v) const { return nodes_.at(v.id_).value; }
    // Zero tensor when nothing flowed into v.
    const Tensor& grad(Var v) const;
    bool requires_grad(Var v) const { return nodes_.at(v.id_).requires_grad; }

    // Gradient buffer of v, zero-initialised on first use; empty span when v
    // does not require a gradient.
    std::span<double> grad_buffer(Var v);

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
    mutable Tensor zero_;
};

enum class Reduction { sum, mean };

// x: [B x ...] flattened to [B x I]; weight: [O x I]; bias: [O] -> [B x O]
Var linear(Var x, Var weight, Var bias);
Var relu(Var x);
// x: [B x C x H x W]; weight: [O x C x k x k]; bias: [O]
Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad);
Var reshape(Var x, Shape shape);
// Row-wise softmax of [B x K].
Var softmax(Var logits);
// Softmax cross-entropy of [B x K] logits against integer labels.
Var cross_entropy(Var logits, std::span<const int> labels, Reduction reduction);

Var add(Var a, Var b);
Var scale(Var a, double factor);
// a - c for a constant c of the same shape.
Var sub_const(Var a, const Tensor& c);
// [B x F] -> [B x (F + 1)] with a trailing column of ones.
Var append_ones(Var x);
// u: [B x K], s: [B x M] -> [B x K x M], out[b] = u[b] (outer) s[b].
Var batched_outer(Var u, Var s);
// Sum over the leading dimension: [B x ...] -> [...]
Var sum_rows(Var x);
Var sum_squares(Var x);
// sum(a * c) for a constant c of the same shape.
Var dot_const(Var a, const Tensor& c);

Tensor one_hot(std::span<const int> labels, std::size_t n_classes);

// Per-sample gradient of softmax cross-entropy w.r.t. the final affine layer,
// (softmax(z_b) - onehot(y_b)) (outer) [h_b, 1], as a differentiable
// expression: [B x K x (F + 1)]. The last column is the bias gradient.
Var per_sample_head_grads(Var features, Var logits, std::span<const int> labels);
// Batch mean of per_sample_head_grads: [K x (F + 1)].
Var head_grad(Var features, Var logits, std::span<const int> labels);

} // namespace fedimpres::ad
