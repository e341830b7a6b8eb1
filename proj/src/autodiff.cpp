// SPDX-License-Identifier: Apache-2.0
#include "karn/autodiff.hpp"

#include "karn/activations.hpp"
#include "karn/errors.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace karn::ad {

namespace {

void require_same_tape(Var a, Var b) {
  if (a.tape() == nullptr || a.tape() != b.tape())
    throw std::invalid_argument("operands recorded on different tapes");
}

void require_shape(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  if (!ok)
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
}

}  // namespace

Var Tape::variable(Matrix value, std::string label) {
  nodes_.push_back(Node{std::move(value), Matrix(), true, nullptr, std::move(label)});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr, "constant"});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backward backward,
                 std::string label) {
  return record(std::move(value), std::vector<Var>(parents), std::move(backward), std::move(label));
}

Var Tape::record(Matrix value, const std::vector<Var>& parents, Backward backward,
                 std::string label) {
  bool needs = false;
  for (Var p : parents) {
    if (p.tape() != this) throw std::invalid_argument("parent recorded on a different tape");
    needs = needs || nodes_[p.index()].needs_grad;
  }
  nodes_.push_back(
      Node{std::move(value), Matrix(), needs, needs ? std::move(backward) : nullptr, std::move(label)});
  return Var(this, nodes_.size() - 1);
}

Matrix Tape::grad(Var v) const {
  const Node& node = nodes_[v.index()];
  if (node.grad.size() == 0) return Matrix::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw std::invalid_argument("backward root from a different tape");
  const Node& r = nodes_[root.index()];
  if (r.value.size() != 1) throw std::invalid_argument("backward root must be a scalar");
  if (!std::isfinite(r.value(0, 0)))
    throw NumericalError("loss is not finite (" + r.label + ")");
  for (Node& node : nodes_) node.grad.resize(0, 0);
  if (!r.needs_grad) return;
  nodes_[root.index()].grad = Matrix::Ones(1, 1);

  for (std::size_t i = root.index() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || node.grad.size() == 0) continue;
    if (!node.grad.allFinite())
      throw NumericalError("non-finite gradient flowing into '" + node.label + "'");
    node.backward(*this, i);
  }
  for (const Node& node : nodes_) {
    if (node.needs_grad && !node.backward && node.grad.size() != 0 && !node.grad.allFinite())
      throw NumericalError("non-finite gradient for '" + node.label + "'");
  }
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.cols() == b.rows(), "matmul", a.value(), b.value());
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape()->record(
      a.value() * b.value(), {a, b},
      [ia, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.grad_of(self);
        if (t.needs_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
        if (t.needs_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
      },
      "matmul");
}

Var operator+(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add", a.value(), b.value());
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape()->record(
      a.value() + b.value(), {a, b},
      [ia, ib](Tape& t, std::size_t self) {
        t.accumulate(ia, t.grad_of(self));
        t.accumulate(ib, t.grad_of(self));
      },
      "add");
}

Var operator-(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub", a.value(), b.value());
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape()->record(
      a.value() - b.value(), {a, b},
      [ia, ib](Tape& t, std::size_t self) {
        t.accumulate(ia, t.grad_of(self));
        t.accumulate(ib, -t.grad_of(self));
      },
      "sub");
}

Var hadamard(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard", a.value(), b.value());
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape()->record(
      a.value().cwiseProduct(b.value()), {a, b},
      [ia, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.grad_of(self);
        t.accumulate(ia, g.cwiseProduct(t.value(ib)));
        t.accumulate(ib, g.cwiseProduct(t.value(ia)));
      },
      "hadamard");
}

Var scale(Var a, double factor) {
  const std::size_t ia = a.index();
  return a.tape()->record(
      a.value() * factor, {a},
      [ia, factor](Tape& t, std::size_t self) { t.accumulate(ia, t.grad_of(self) * factor); },
      "scale");
}

Var add_bias(Var a, Var bias) {
  require_same_tape(a, bias);
  require_shape(bias.cols() == 1 && bias.rows() == a.rows(), "add_bias", a.value(), bias.value());
  const std::size_t ia = a.index(), ib = bias.index();
  Matrix out = a.value();
  out.colwise() += bias.value().col(0);
  return a.tape()->record(
      std::move(out), {a, bias},
      [ia, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.grad_of(self);
        t.accumulate(ia, g);
        t.accumulate(ib, g.rowwise().sum());
      },
      "add_bias");
}

Var one_minus(Var a) {
  const std::size_t ia = a.index();
  return a.tape()->record(
      (1.0 - a.value().array()).matrix(), {a},
      [ia](Tape& t, std::size_t self) { t.accumulate(ia, -t.grad_of(self)); }, "one_minus");
}

Var silu(Var a) {
  const std::size_t ia = a.index();
  return a.tape()->record(
      a.value().unaryExpr([](double x) { return karn::silu(x); }), {a},
      [ia](Tape& t, std::size_t self) {
        t.accumulate(ia, t.grad_of(self).cwiseProduct(t.value(ia).unaryExpr(
                             [](double x) { return karn::silu_derivative(x); })));
      },
      "silu");
}

Var tanh(Var a) {
  const std::size_t ia = a.index();
  Matrix out = a.value().array().tanh().matrix();
  return a.tape()->record(
      std::move(out), {a},
      [ia](Tape& t, std::size_t self) {
        const Matrix& y = t.value(self);
        t.accumulate(ia, t.grad_of(self).cwiseProduct((1.0 - y.array().square()).matrix()));
      },
      "tanh");
}

Var sigmoid(Var a) {
  const std::size_t ia = a.index();
  return a.tape()->record(
      a.value().unaryExpr([](double x) { return karn::sigmoid(x); }), {a},
      [ia](Tape& t, std::size_t self) {
        const Matrix& y = t.value(self);
        t.accumulate(ia, t.grad_of(self).cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
      },
      "sigmoid");
}

Var sum(Var a) {
  const std::size_t ia = a.index();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->record(
      std::move(out), {a},
      [ia](Tape& t, std::size_t self) {
        const Matrix& x = t.value(ia);
        t.accumulate(ia, Matrix::Constant(x.rows(), x.cols(), t.grad_of(self)(0, 0)));
      },
      "sum");
}

Var sum_squares(Var a) {
  const std::size_t ia = a.index();
  Matrix out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  return a.tape()->record(
      std::move(out), {a},
      [ia](Tape& t, std::size_t self) {
        t.accumulate(ia, 2.0 * t.grad_of(self)(0, 0) * t.value(ia));
      },
      "sum_squares");
}

Var rows(Var a, Eigen::Index first, Eigen::Index count) {
  if (first < 0 || count < 0 || first + count > a.rows())
    throw std::invalid_argument("rows: block out of range");
  const std::size_t ia = a.index();
  const Eigen::Index total = a.rows();
  return a.tape()->record(
      a.value().middleRows(first, count), {a},
      [ia, first, count, total](Tape& t, std::size_t self) {
        Matrix g = Matrix::Zero(total, t.value(ia).cols());
        g.middleRows(first, count) = t.grad_of(self);
        t.accumulate(ia, g);
      },
      "rows");
}

Var vstack(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("vstack: no operands");
  Tape* tape = parts.front().tape();
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index total = 0;
  std::vector<std::size_t> indices;
  std::vector<Eigen::Index> offsets;
  for (Var p : parts) {
    if (p.tape() != tape) throw std::invalid_argument("vstack: operands on different tapes");
    if (p.cols() != cols) throw std::invalid_argument("vstack: column counts differ");
    indices.push_back(p.index());
    offsets.push_back(total);
    total += p.rows();
  }
  Matrix out(total, cols);
  for (std::size_t i = 0; i < parts.size(); ++i)
    out.middleRows(offsets[i], parts[i].rows()) = parts[i].value();

  return tape->record(
      std::move(out), parts,
      [indices, offsets](Tape& t, std::size_t self) {
        const Matrix& g = t.grad_of(self);
        for (std::size_t i = 0; i < indices.size(); ++i)
          t.accumulate(indices[i], g.middleRows(offsets[i], t.value(indices[i]).rows()));
      },
      "vstack");
}

Var mse_loss(Var prediction, const Matrix& target) {
  require_shape(prediction.rows() == target.rows() && prediction.cols() == target.cols(),
                "mse_loss", prediction.value(), target);
  if (target.size() == 0) throw std::invalid_argument("mse_loss: empty input");
  const std::size_t ip = prediction.index();
  const double n = static_cast<double>(target.size());
  Matrix diff = prediction.value() - target;
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() / n;
  return prediction.tape()->record(
      std::move(out), {prediction},
      [ip, diff = std::move(diff), n](Tape& t, std::size_t self) {
        t.accumulate(ip, (2.0 * t.grad_of(self)(0, 0) / n) * diff);
      },
      "mse_loss");
}

Var mae_loss(Var prediction, const Matrix& target) {
  require_shape(prediction.rows() == target.rows() && prediction.cols() == target.cols(),
                "mae_loss", prediction.value(), target);
  if (target.size() == 0) throw std::invalid_argument("mae_loss: empty input");
  const std::size_t ip = prediction.index();
  const double n = static_cast<double>(target.size());
  Matrix diff = prediction.value() - target;
  Matrix out(1, 1);
  out(0, 0) = diff.cwiseAbs().sum() / n;
  Matrix sign = diff.unaryExpr([](double e) { return e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0); });
  return prediction.tape()->record(
      std::move(out), {prediction},
      [ip, sign = std::move(sign), n](Tape& t, std::size_t self) {
        t.accumulate(ip, (t.grad_of(self)(0, 0) / n) * sign);
      },
      "mae_loss");
}

Var spline_edges(Var x, Var coeffs, Var spline_weight, const KnotGridd& grid) {
  require_same_tape(x, coeffs);
  require_same_tape(x, spline_weight);
  const Matrix& xv = x.value();
  const Matrix& c = coeffs.value();
  const Matrix& w = spline_weight.value();
  const Eigen::Index d_in = xv.rows();
  const Eigen::Index batch = xv.cols();
  const Eigen::Index d_h = c.rows();
  const int k = grid.basis_count();
  if (c.cols() != d_in * k)
    throw std::invalid_argument("spline_edges: coefficient block is " + std::to_string(c.cols()) +
                                " columns, expected " + std::to_string(d_in * k));
  if (w.rows() != d_h || w.cols() != d_in)
    throw std::invalid_argument("spline_edges: spline weight shape mismatch");

  std::vector<LocalBasis<double>> local(static_cast<std::size_t>(d_in * batch));
  Matrix out = Matrix::Zero(d_h, batch);
  Eigen::VectorXd phi(d_h);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index j = 0; j < d_in; ++j) {
      const LocalBasis<double>& lb = local[static_cast<std::size_t>(b * d_in + j)] =
          eval_basis_local(grid, xv(j, b));
      const Eigen::Index base = j * k + lb.first;
      phi = c.col(base) * lb.values[0];
      for (int r = 1; r < lb.count; ++r) phi += c.col(base + r) * lb.values[r];
      out.col(b) += w.col(j).cwiseProduct(phi);
    }
  }

  const std::size_t ix = x.index(), ic = coeffs.index(), iw = spline_weight.index();
  return x.tape()->record(
      std::move(out), {x, coeffs, spline_weight},
      [ix, ic, iw, local = std::move(local), d_in, batch, d_h, k](Tape& t, std::size_t self) {
        const Matrix& g = t.grad_of(self);
        const Matrix& cv = t.value(ic);
        const Matrix& wv = t.value(iw);
        const bool want_x = t.needs_grad(ix);
        const bool want_c = t.needs_grad(ic);
        const bool want_w = t.needs_grad(iw);
        Matrix dx = want_x ? Matrix::Zero(d_in, batch) : Matrix();
        Matrix dc = want_c ? Matrix::Zero(d_h, d_in * k) : Matrix();
        Matrix dw = want_w ? Matrix::Zero(d_h, d_in) : Matrix();
        Eigen::VectorXd gw(d_h), acc(d_h);
        for (Eigen::Index b = 0; b < batch; ++b) {
          for (Eigen::Index j = 0; j < d_in; ++j) {
            const LocalBasis<double>& lb = local[static_cast<std::size_t>(b * d_in + j)];
            const Eigen::Index base = j * k + lb.first;
            gw = g.col(b).cwiseProduct(wv.col(j));
            if (want_c)
              for (int r = 0; r < lb.count; ++r) dc.col(base + r) += gw * lb.values[r];
            if (want_w) {
              acc = cv.col(base) * lb.values[0];
              for (int r = 1; r < lb.count; ++r) acc += cv.col(base + r) * lb.values[r];
              dw.col(j) += g.col(b).cwiseProduct(acc);
            }
            if (want_x) {
              acc = cv.col(base) * lb.derivatives[0];
              for (int r = 1; r < lb.count; ++r) acc += cv.col(base + r) * lb.derivatives[r];
              dx(j, b) += gw.dot(acc);
            }
          }
        }
        if (want_x) t.accumulate(ix, dx);
        if (want_c) t.accumulate(ic, dc);
        if (want_w) t.accumulate(iw, dw);
      },
      "spline_edges");
}

}  // namespace karn::ad
