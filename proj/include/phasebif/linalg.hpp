#pragma once

// Dense linear algebra used by the Newton corrector, determinant-sign event
// tracking and null-vector extraction. Row-major storage, partial pivoting.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace phasebif {

using Vector = std::vector<double>;

class LinalgError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularMatrixError : public LinalgError {
 public:
  SingularMatrixError() : LinalgError("cannot solve at singular point") {}
};

class ConvergenceError : public LinalgError {
 public:
  ConvergenceError(const std::string& what, Vector last_iterate, double residual)
      : LinalgError(what), last_iterate_(std::move(last_iterate)), residual_(residual) {}

  const Vector& last_iterate() const { return last_iterate_; }
  double residual() const { return residual_; }

 private:
  Vector last_iterate_;
  double residual_;
};

class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static DenseMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.front().size() : 0;
    DenseMatrix m(r, c);
    for (std::size_t i = 0; i < r; ++i) {
      if (rows[i].size() != c) throw std::invalid_argument("ragged row list");
      std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    }
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  std::span<const double> entries() const { return data_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  /// Largest absolute row sum (the infinity norm).
  double max_row_norm() const {
    double m = 0.0;
    for (std::size_t i = 0; i < rows_; ++i) {
      double s = 0.0;
      for (double v : row(i)) s += std::abs(v);
      m = std::max(m, s);
    }
    return m;
  }

  Vector multiply(std::span<const double> x) const {
    if (x.size() != cols_) throw std::invalid_argument("matrix-vector size mismatch");
    Vector y(rows_, 0.0);
    for (std::size_t i = 0; i < rows_; ++i) {
      const double* a = data_.data() + i * cols_;
      double s = 0.0;
      for (std::size_t j = 0; j < cols_; ++j) s += a[j] * x[j];
      y[i] = s;
    }
    return y;
  }

  DenseMatrix multiply(const DenseMatrix& b) const {
    if (cols_ != b.rows_) throw std::invalid_argument("matrix-matrix size mismatch");
    DenseMatrix c(rows_, b.cols_);
    for (std::size_t i = 0; i < rows_; ++i) {
      for (std::size_t k = 0; k < cols_; ++k) {
        const double a = (*this)(i, k);
        if (a == 0.0) continue;
        auto crow = c.row(i);
        auto brow = b.row(k);
        for (std::size_t j = 0; j < b.cols_; ++j) crow[j] += a * brow[j];
      }
    }
    return c;
  }

  void add_to_diagonal(double shift) {
    const std::size_t n = std::min(rows_, cols_);
    for (std::size_t i = 0; i < n; ++i) (*this)(i, i) += shift;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

/// PA = LU with unit-diagonal L stored below the diagonal of `factors`.
struct LuFactorization {
  DenseMatrix factors;
  std::vector<std::size_t> pivot_permutation;  // row i of PA is row pivot_permutation[i] of A
  int permutation_sign = 1;
  bool singular = false;
  double pivot_threshold = 0.0;

  std::size_t size() const { return factors.rows(); }

  DenseMatrix lower() const {
    const std::size_t n = size();
    DenseMatrix l = DenseMatrix::identity(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < i; ++j) l(i, j) = factors(i, j);
    return l;
  }

  DenseMatrix upper() const {
    const std::size_t n = size();
    DenseMatrix u(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) u(i, j) = factors(i, j);
    return u;
  }

  DenseMatrix permutation() const {
    const std::size_t n = size();
    DenseMatrix p(n, n);
    for (std::size_t i = 0; i < n; ++i) p(i, pivot_permutation[i]) = 1.0;
    return p;
  }
};

inline constexpr double kDefaultSingularThreshold = 1e-12;

/// Partial-pivoting LU. A pivot below `relative_threshold * max_row_norm(A)`
/// marks the factorization singular; elimination still completes so the
/// pivot signs remain available.
inline LuFactorization lu_factor(DenseMatrix a, double relative_threshold = kDefaultSingularThreshold) {
  if (!a.square()) throw std::invalid_argument("lu_factor: matrix must be square");
  if (!a.all_finite()) throw std::invalid_argument("lu_factor: matrix has non-finite entries");

  const std::size_t n = a.rows();
  LuFactorization f;
  f.pivot_threshold = relative_threshold * a.max_row_norm();
  f.pivot_permutation.resize(n);
  std::iota(f.pivot_permutation.begin(), f.pivot_permutation.end(), std::size_t{0});

  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    double best = std::abs(a(k, k));
    for (std::size_t i = k + 1; i < n; ++i) {
      const double v = std::abs(a(i, k));
      if (v > best) {
        best = v;
        p = i;
      }
    }
    if (p != k) {
      std::swap_ranges(a.row(k).begin(), a.row(k).end(), a.row(p).begin());
      std::swap(f.pivot_permutation[k], f.pivot_permutation[p]);
      f.permutation_sign = -f.permutation_sign;
    }
    const double pivot = a(k, k);
    if (!(std::abs(pivot) > f.pivot_threshold)) f.singular = true;
    if (pivot == 0.0) continue;

    const auto pivot_row = a.row(k);
    for (std::size_t i = k + 1; i < n; ++i) {
      auto r = a.row(i);
      const double m = r[k] / pivot;
      r[k] = m;
      if (m == 0.0) continue;
      for (std::size_t j = k + 1; j < n; ++j) r[j] -= m * pivot_row[j];
    }
  }
  f.factors = std::move(a);
  return f;
}

namespace detail {

inline Vector lu_substitute(const LuFactorization& f, std::span<const double> b) {
  const std::size_t n = f.size();
  Vector x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = b[f.pivot_permutation[i]];
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = f.factors.row(i);
    double s = x[i];
    for (std::size_t j = 0; j < i; ++j) s -= r[j] * x[j];
    x[i] = s;
  }
  for (std::size_t i = n; i-- > 0;) {
    const auto r = f.factors.row(i);
    double s = x[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= r[j] * x[j];
    x[i] = s / r[i];
  }
  return x;
}

}  // namespace detail

inline Vector lu_solve(const LuFactorization& f, std::span<const double> b) {
  if (f.singular) throw SingularMatrixError();
  if (b.size() != f.size()) throw std::invalid_argument("lu_solve: right-hand side has wrong length");
  return detail::lu_substitute(f, b);
}

inline int det_sign(const LuFactorization& f) {
  if (f.singular) return 0;
  int s = f.permutation_sign;
  for (std::size_t i = 0; i < f.size(); ++i)
    if (f.factors(i, i) < 0.0) s = -s;
  return s;
}

/// log|det A|; -inf when a pivot is exactly zero.
inline double log_abs_det(const LuFactorization& f) {
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) s += std::log(std::abs(f.factors(i, i)));
  return s;
}

// Small vector helpers shared across the library.

inline double max_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

/// Scales to unit 2-norm and flips so the first entry that is not negligible
/// (above 1e-8 of the largest magnitude) is positive.
inline void normalize_with_sign(Vector& v) {
  const double n = norm2(v);
  if (n == 0.0) return;
  for (double& x : v) x /= n;
  const double cutoff = 1e-8 * max_norm(v);
  for (double x : v) {
    if (std::abs(x) > cutoff) {
      if (x < 0.0)
        for (double& y : v) y = -y;
      break;
    }
  }
}

struct NullVectorResult {
  double eigen_estimate = 0.0;
  Vector vector;
  int iterations = 0;
  double residual = 0.0;
};

/// Inverse iteration on (A - shift I). Returns the eigenvalue of A nearest
/// `shift` with its unit eigenvector; throws ConvergenceError when the
/// eigen-residual does not drop below `tol` within `max_iters` sweeps.
inline NullVectorResult null_vector(const DenseMatrix& a, double shift, double tol, int max_iters) {
  if (!a.square()) throw std::invalid_argument("null_vector: matrix must be square");
  const std::size_t n = a.rows();

  DenseMatrix shifted = a;
  shifted.add_to_diagonal(-shift);
  // Only exactly-zero pivots block the solve here; a tiny pivot is what makes
  // inverse iteration converge.
  LuFactorization f = lu_factor(shifted, 0.0);
  if (f.singular) {
    shifted.add_to_diagonal(-1e-14 * a.max_abs());
    f = lu_factor(shifted, 0.0);
    if (f.singular) throw LinalgError("null_vector: shifted matrix is singular after regularization");
  }

  std::mt19937_64 rng(0x5eed5eedULL);
  std::uniform_real_distribution<double> dist(0.5, 1.5);
  Vector x(n);
  for (double& v : x) v = dist(rng);
  const double x_norm = norm2(x);
  for (double& v : x) v /= x_norm;

  NullVectorResult out;
  double residual = 0.0;
  for (int it = 1; it <= max_iters; ++it) {
    Vector y = detail::lu_substitute(f, x);
    const double ny = norm2(y);
    if (!(ny > 0.0) || !std::isfinite(ny)) throw ConvergenceError("null_vector: iteration broke down", x, residual);
    for (std::size_t i = 0; i < n; ++i) x[i] = y[i] / ny;

    const Vector ax = a.multiply(x);
    const double lambda = dot(x, ax);
    residual = 0.0;
    for (std::size_t i = 0; i < n; ++i) residual += (ax[i] - lambda * x[i]) * (ax[i] - lambda * x[i]);
    residual = std::sqrt(residual);
    if (residual <= tol) {
      normalize_with_sign(x);
      out.eigen_estimate = lambda;
      out.vector = std::move(x);
      out.iterations = it;
      out.residual = residual;
      return out;
    }
  }
  throw ConvergenceError("null_vector: inverse iteration did not converge", x, residual);
}

}  // namespace phasebif
