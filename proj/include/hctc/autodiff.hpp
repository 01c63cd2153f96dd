#pragma once

// Minimal tape-based reverse-mode differentiation over dense row-major matrices.
// A Tape records every operation; backward() walks it once in reverse.

#include "hctc/types.hpp"

#include <functional>
#include <span>
#include <vector>

namespace hctc {
class AttentionMask;
}

namespace hctc::ad {

class Tape;

class Var {
public:
    Var() = default;
    const Matrix& value() const;
    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* t, int id) : tape_(t), id_(id) {}
    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    // Backward functions receive the tape, the gradient of their own output and
    // their own output value.
    using Backward = std::function<void(Tape&, const Matrix& grad, const Matrix& value)>;

    Var variable(Matrix value);  // leaf that accumulates a gradient
    Var constant(Matrix value);  // leaf without gradient

    // Records an op output. The backward function is kept only when an input needs a gradient.
    Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
    Var record(Matrix value, std::span<const Var> inputs, Backward backward);

    const Matrix& value(Var v) const { return nodes_[v.id()].value; }
    bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }

    // Gradient accumulated for v; a zero matrix of the right shape if none reached it.
    Matrix grad(Var v) const;
    // Accumulation target used by backward functions.
    Matrix& grad_ref(Var v);

    // Seeds d(loss)/d(loss) = 1 for a 1x1 loss and propagates.
    void backward(Var loss);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool needs_grad = false;
        Backward backward;
    };
    std::vector<Node> nodes_;
};

// Elementwise and linear algebra.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
Var add_constant(Var a, const Matrix& c);
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);          // a * b^T
Var add_row(Var a, Var row);           // broadcast a 1 x n row over every row of a
Var linear(Var x, Var weight, Var bias);  // x * W + b
Var relu(Var a);
Var silu(Var a);
Var sum(Var a);
Var row_block(Var a, int start, int rows);
Var col_block(Var a, int start, int cols);
Var hconcat(std::span<const Var> parts);
Var vconcat(std::span<const Var> parts);

// Row-wise layer normalization with learned gain and bias (1 x n each).
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

// Row softmax over visible entries only; masked entries are exactly zero.
Var masked_softmax(Var scores, const AttentionMask& mask);
Var log_softmax(Var logits);

// Depthwise 1-D convolution over time with an odd kernel (k x channels).
// out[t] = bias + sum_j kernel[j] * x[t + j - k/2] over input rows s with
// max(0, t - k/2) <= s <= right_limit[t]; rows outside are treated as zero.
Var depthwise_conv(Var x, Var kernel, Var bias, std::span<const int> right_limit);

// Replaces the listed rows of x with `row` (1 x n).
Var replace_rows(Var x, std::span<const int> rows, Var row);

}  // namespace hctc::ad
