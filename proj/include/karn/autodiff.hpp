// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode tape over dense matrices. Every value is an Eigen matrix;
// recurrent models put the batch along the columns, so one node per op and
// time step keeps the tape short. Backward closures accumulate into parent
// gradients in reverse recording order.

#pragma once

#include "karn/spline.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

namespace karn::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

class Var {
 public:
  Var() = default;

  Tape* tape() const { return tape_; }
  std::size_t index() const { return index_; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is collected.
  Var variable(Matrix value, std::string label = {});
  /// Leaf without gradient.
  Var constant(Matrix value);
  /// Interior node. `needs_grad` is inherited from the parents.
  Var record(Matrix value, std::initializer_list<Var> parents, Backward backward,
             std::string label = {});
  Var record(Matrix value, const std::vector<Var>& parents, Backward backward, std::string label = {});

  const Matrix& value(Var v) const { return nodes_[v.index()].value; }
  const Matrix& value(std::size_t i) const { return nodes_[i].value; }
  bool needs_grad(Var v) const { return nodes_[v.index()].needs_grad; }
  bool needs_grad(std::size_t i) const { return nodes_[i].needs_grad; }
  const std::string& label(std::size_t i) const { return nodes_[i].label; }

  /// Gradient of the last backward root with respect to v (zeros if v did not
  /// influence it).
  Matrix grad(Var v) const;
  const Matrix& grad_of(std::size_t i) const { return nodes_[i].grad; }

  template <typename Derived>
  void accumulate(std::size_t i, const Eigen::MatrixBase<Derived>& contribution) {
    Node& node = nodes_[i];
    if (!node.needs_grad) return;
    if (node.grad.size() == 0)
      node.grad = contribution;
    else
      node.grad += contribution;
  }

  /// Seeds d(root)/d(root) = 1 and runs every backward closure. Throws
  /// NumericalError naming the first node whose incoming gradient is not finite.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Backward backward;
    std::string label;
  };

  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }

// Registered operations. Shapes follow ordinary matrix algebra; `add_bias`
// broadcasts a column vector across columns.

Var matmul(Var a, Var b);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double factor);
Var add_bias(Var a, Var bias);
Var one_minus(Var a);
Var silu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var sum(Var a);
Var sum_squares(Var a);
/// Contiguous block of rows [first, first + count).
Var rows(Var a, Eigen::Index first, Eigen::Index count);
/// Stacks operands with equal column counts on top of each other.
Var vstack(const std::vector<Var>& parts);

/// Mean squared error against a constant target of the same shape.
Var mse_loss(Var prediction, const Matrix& target);
/// Mean absolute error; d|e|/de at e == 0 is taken as 0.
Var mae_loss(Var prediction, const Matrix& target);

/// Per-edge spline branch of a KARN layer.
///   x:             d_in x B
///   coeffs:        d_h x (d_in * K), edge (k, j) owns columns [j*K, (j+1)*K)
///   spline_weight: d_h x d_in
/// out(k, b) = sum_j spline_weight(k, j) * sum_i coeffs(k, j*K + i) * B_i(x(j, b))
Var spline_edges(Var x, Var coeffs, Var spline_weight, const KnotGridd& grid);

}  // namespace karn::ad
