// SPDX-License-Identifier: Apache-2.0
//
// Uniform B-spline bases on an extended knot grid.
//
// A grid with G intervals on [lo, hi] and degree p carries G + 2p + 1 knots:
// the G + 1 core points plus p uniformly spaced knots beyond each end. That
// yields G + p basis functions which sum to one everywhere on [lo, hi].
// Inputs outside the core range are clamped before evaluation, so the
// derivative with respect to x is zero there.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace karn {

template <typename Scalar>
using SplineBasisRow = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct KnotGrid {
  int degree = 0;
  int interior_count = 0;
  Scalar range_lo = Scalar(-1);
  Scalar range_hi = Scalar(1);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> knots;

  int basis_count() const { return interior_count + degree; }
  Scalar spacing() const { return (range_hi - range_lo) / Scalar(interior_count); }
  Scalar clamp(Scalar x) const { return std::clamp(x, range_lo, range_hi); }
  bool operator==(const KnotGrid& other) const {
    return degree == other.degree && interior_count == other.interior_count &&
           range_lo == other.range_lo && range_hi == other.range_hi &&
           knots == other.knots;
  }
};

using KnotGridd = KnotGrid<double>;

template <typename Scalar>
KnotGrid<Scalar> make_grid(int degree, int interior_count, Scalar range_lo = Scalar(-1),
                           Scalar range_hi = Scalar(1)) {
  if (degree < 1 || degree > 3)
    throw std::invalid_argument("spline degree must be 1, 2 or 3, got " + std::to_string(degree));
  if (interior_count < 1)
    throw std::invalid_argument("grid interval count must be positive, got " +
                                std::to_string(interior_count));
  if (!(range_lo < range_hi)) throw std::invalid_argument("grid range must satisfy lo < hi");

  KnotGrid<Scalar> grid;
  grid.degree = degree;
  grid.interior_count = interior_count;
  grid.range_lo = range_lo;
  grid.range_hi = range_hi;
  const int n = interior_count + 2 * degree + 1;
  grid.knots.resize(n);
  const Scalar width = range_hi - range_lo;
  for (int i = 0; i < n; ++i)
    grid.knots[i] = range_lo + width * Scalar(i - degree) / Scalar(interior_count);
  grid.knots[degree] = range_lo;
  grid.knots[degree + interior_count] = range_hi;
  return grid;
}

namespace detail {

// Degree-0 indicator row over knot intervals. `closed` names one interval
// treated as [t_m, t_m+1] so the right end of the core range is covered.
template <typename Scalar>
std::vector<Scalar> indicator_row(std::span<const Scalar> knots, Scalar x, int closed) {
  const int intervals = static_cast<int>(knots.size()) - 1;
  std::vector<Scalar> row(intervals, Scalar(0));
  for (int i = 0; i < intervals; ++i) {
    const bool inside = knots[i] <= x && (x < knots[i + 1] || (i == closed && x == knots[i + 1]));
    if (inside) {
      row[i] = Scalar(1);
      break;
    }
  }
  return row;
}

// One Cox–de Boor raising step: degree d-1 row (length m) -> degree d row (length m-1).
template <typename Scalar>
std::vector<Scalar> raise_degree(std::span<const Scalar> knots, const std::vector<Scalar>& lower,
                                 int d, Scalar x) {
  const int m = static_cast<int>(lower.size()) - 1;
  std::vector<Scalar> row(m, Scalar(0));
  for (int i = 0; i < m; ++i) {
    Scalar value(0);
    const Scalar left_den = knots[i + d] - knots[i];
    if (left_den != Scalar(0)) value += (x - knots[i]) / left_den * lower[i];
    const Scalar right_den = knots[i + d + 1] - knots[i + 1];
    if (right_den != Scalar(0)) value += (knots[i + d + 1] - x) / right_den * lower[i + 1];
    row[i] = value;
  }
  return row;
}

}  // namespace detail

/// All degree-`degree` B-spline values on an arbitrary non-decreasing knot
/// vector, by the Cox–de Boor recursion. Returns knots.size() - degree - 1
/// entries. Zero-denominator terms contribute 0.
template <typename Scalar>
SplineBasisRow<Scalar> cox_de_boor(std::span<const Scalar> knots, int degree, Scalar x,
                                   int closed_interval = -1) {
  if (degree < 0 || static_cast<int>(knots.size()) < degree + 2)
    throw std::invalid_argument("knot vector too short for requested degree");
  std::vector<Scalar> row = detail::indicator_row(knots, x, closed_interval);
  for (int d = 1; d <= degree; ++d) row = detail::raise_degree(knots, row, d, x);
  return Eigen::Map<const SplineBasisRow<Scalar>>(row.data(), static_cast<Eigen::Index>(row.size()));
}

template <typename Scalar>
struct BasisWithDerivative {
  SplineBasisRow<Scalar> values;
  SplineBasisRow<Scalar> derivatives;
};

/// Basis values and d/dx at x. Outside the core range x is clamped and the
/// derivative is zero.
template <typename Scalar>
BasisWithDerivative<Scalar> eval_basis_with_derivative(const KnotGrid<Scalar>& grid, Scalar x) {
  using std::isnan;
  if (isnan(x)) throw std::invalid_argument("spline input is NaN");
  const bool outside = x < grid.range_lo || x > grid.range_hi;
  const Scalar xc = grid.clamp(x);
  const int p = grid.degree;
  std::span<const Scalar> knots(grid.knots.data(), static_cast<std::size_t>(grid.knots.size()));

  std::vector<Scalar> row = detail::indicator_row(knots, xc, p + grid.interior_count - 1);
  for (int d = 1; d < p; ++d) row = detail::raise_degree(knots, row, d, xc);
  const std::vector<Scalar> lower = row;  // degree p-1, length G + p + 1
  row = detail::raise_degree(knots, row, p, xc);

  const int count = grid.basis_count();
  BasisWithDerivative<Scalar> out;
  out.values = Eigen::Map<const SplineBasisRow<Scalar>>(row.data(), count);
  out.derivatives = SplineBasisRow<Scalar>::Zero(count);
  if (!outside) {
    for (int i = 0; i < count; ++i) {
      Scalar dv(0);
      const Scalar left_den = knots[i + p] - knots[i];
      if (left_den != Scalar(0)) dv += Scalar(p) * lower[i] / left_den;
      const Scalar right_den = knots[i + p + 1] - knots[i + 1];
      if (right_den != Scalar(0)) dv -= Scalar(p) * lower[i + 1] / right_den;
      out.derivatives[i] = dv;
    }
  }
  return out;
}

template <typename Scalar>
SplineBasisRow<Scalar> eval_basis(const KnotGrid<Scalar>& grid, Scalar x) {
  using std::isnan;
  if (isnan(x)) throw std::invalid_argument("spline input is NaN");
  const Scalar xc = grid.clamp(x);
  std::span<const Scalar> knots(grid.knots.data(), static_cast<std::size_t>(grid.knots.size()));
  return cox_de_boor(knots, grid.degree, xc, grid.degree + grid.interior_count - 1);
}

/// Nonzero window of the basis at one input: entries `first .. first+count-1`
/// of the full row. Same recursion restricted to the knot span holding x,
/// used on hot paths.
template <typename Scalar>
struct LocalBasis {
  int first = 0;
  int count = 0;
  std::array<Scalar, 4> values{};
  std::array<Scalar, 4> derivatives{};
};

template <typename Scalar>
LocalBasis<Scalar> eval_basis_local(const KnotGrid<Scalar>& grid, Scalar x) {
  using std::floor;
  using std::isnan;
  if (isnan(x)) throw std::invalid_argument("spline input is NaN");
  const int p = grid.degree;
  const int g = grid.interior_count;
  const bool outside = x < grid.range_lo || x > grid.range_hi;
  const Scalar xc = grid.clamp(x);
  const auto& t = grid.knots;

  int m = static_cast<int>(floor((xc - grid.range_lo) / grid.spacing()));
  m = std::clamp(m, 0, g - 1);
  while (m > 0 && xc < t[p + m]) --m;
  while (m < g - 1 && xc >= t[p + m + 1]) ++m;
  const int span = p + m;

  std::array<Scalar, 4> n{};
  std::array<Scalar, 4> lower{};
  std::array<Scalar, 4> left{};
  std::array<Scalar, 4> right{};
  n[0] = Scalar(1);
  for (int j = 1; j <= p; ++j) {
    if (j == p) lower = n;
    left[j] = xc - t[span + 1 - j];
    right[j] = t[span + j] - xc;
    Scalar saved(0);
    for (int r = 0; r < j; ++r) {
      const Scalar temp = n[r] / (right[r + 1] + left[j - r]);
      n[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    n[j] = saved;
  }

  LocalBasis<Scalar> out;
  out.first = m;
  out.count = p + 1;
  out.values = n;
  if (!outside) {
    // lower holds degree p-1 values for basis indices m+1 .. m+p.
    const Scalar h = grid.spacing();
    for (int r = 0; r <= p; ++r) {
      const Scalar a = r >= 1 ? lower[r - 1] : Scalar(0);
      const Scalar b = r < p ? lower[r] : Scalar(0);
      out.derivatives[r] = (a - b) / h;
    }
  }
  return out;
}

/// Basis rows for many inputs as columns of a (basis_count x N) matrix.
template <typename Scalar, typename Derived>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> basis_matrix(
    const KnotGrid<Scalar>& grid, const Eigen::DenseBase<Derived>& xs) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(grid.basis_count(), xs.size());
  for (Eigen::Index n = 0; n < xs.size(); ++n) out.col(n) = eval_basis(grid, Scalar(xs(n)));
  return out;
}

template <typename Scalar, typename Derived>
Scalar eval_spline(const KnotGrid<Scalar>& grid, const Eigen::MatrixBase<Derived>& coeffs, Scalar x) {
  if (coeffs.size() != grid.basis_count())
    throw std::invalid_argument("spline coefficient count " + std::to_string(coeffs.size()) +
                                " does not match basis count " +
                                std::to_string(grid.basis_count()));
  return eval_basis(grid, x).dot(coeffs.derived().template cast<Scalar>());
}

template <typename Scalar, typename Derived>
Scalar eval_spline_derivative(const KnotGrid<Scalar>& grid, const Eigen::MatrixBase<Derived>& coeffs,
                              Scalar x) {
  if (coeffs.size() != grid.basis_count())
    throw std::invalid_argument("spline coefficient count does not match basis count");
  return eval_basis_with_derivative(grid, x).derivatives.dot(coeffs.derived().template cast<Scalar>());
}

template <typename Scalar>
struct GridExtension {
  KnotGrid<Scalar> grid;
  // One column per refitted spline.
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> coeffs;
  bool rank_deficient = false;
  Eigen::Index rank = 0;
  Scalar max_residual = Scalar(0);
};

/// Refits each column of `old_coeffs` onto a finer grid of the same degree and
/// range by least squares over `sample_points`.
template <typename Scalar, typename CoeffDerived, typename SampleDerived>
GridExtension<Scalar> extend_grid_many(const KnotGrid<Scalar>& old_grid,
                                       const Eigen::MatrixBase<CoeffDerived>& old_coeffs,
                                       int new_interior_count,
                                       const Eigen::DenseBase<SampleDerived>& sample_points) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (new_interior_count <= old_grid.interior_count)
    throw std::invalid_argument("new grid interval count " + std::to_string(new_interior_count) +
                                " must exceed current " + std::to_string(old_grid.interior_count));
  if (old_coeffs.rows() != old_grid.basis_count())
    throw std::invalid_argument("coefficient rows do not match coarse basis count");
  if (sample_points.size() == 0) throw std::invalid_argument("grid extension needs sample points");

  GridExtension<Scalar> out;
  out.grid = make_grid(old_grid.degree, new_interior_count, old_grid.range_lo, old_grid.range_hi);
  const int fine_count = out.grid.basis_count();

  std::vector<Scalar> sorted(sample_points.size());
  for (Eigen::Index n = 0; n < sample_points.size(); ++n) {
    const Scalar x = sample_points(n);
    if (!(x >= old_grid.range_lo && x <= old_grid.range_hi))
      throw std::invalid_argument("sample point outside the core grid range");
    sorted[static_cast<std::size_t>(n)] = x;
  }
  std::sort(sorted.begin(), sorted.end());
  const auto distinct = std::unique(sorted.begin(), sorted.end()) - sorted.begin();
  if (distinct < fine_count)
    throw std::invalid_argument("underdetermined grid extension: " + std::to_string(distinct) +
                                " distinct sample points for " + std::to_string(fine_count) +
                                " fine basis functions");

  const Matrix fine = basis_matrix(out.grid, sample_points).transpose();      // N x K2
  const Matrix coarse = basis_matrix(old_grid, sample_points).transpose();    // N x K1
  const Matrix target = coarse * old_coeffs.derived().template cast<Scalar>();  // N x m

  Eigen::CompleteOrthogonalDecomposition<Matrix> solver(fine);
  out.rank = solver.rank();
  out.rank_deficient = out.rank < fine_count;
  out.coeffs = solver.solve(target);
  out.max_residual = (fine * out.coeffs - target).cwiseAbs().maxCoeff();
  return out;
}

/// Single-spline grid extension. Returns the finer grid and its coefficients.
template <typename Scalar, typename SampleDerived>
GridExtension<Scalar> extend_grid(const KnotGrid<Scalar>& old_grid,
                                  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& old_coeffs,
                                  int new_interior_count,
                                  const Eigen::DenseBase<SampleDerived>& sample_points) {
  if (old_coeffs.size() != old_grid.basis_count())
    throw std::invalid_argument("coefficient count does not match coarse basis count");
  return extend_grid_many(old_grid, old_coeffs, new_interior_count, sample_points);
}

/// Uniform probes over the core range, used when captured inputs cannot
/// determine the finer grid.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> uniform_probes(const KnotGrid<Scalar>& grid, int count = 512) {
  return Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::LinSpaced(count, grid.range_lo, grid.range_hi);
}

}  // namespace karn
