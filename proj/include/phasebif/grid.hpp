#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "phasebif/linalg.hpp"

namespace phasebif {

/// Nodal values of phi on the grid.
using StateVector = std::vector<double>;

/// How the ghost nodes phi_{-1}, phi_{N+1} are filled. `mirror` is the
/// second-order Neumann closure; `copy_edge` (phi_{N+1} = phi_N on the right)
/// is first order and only exists as a fault-injection hook.
enum class GhostClosure { mirror, copy_edge };

inline std::string to_string(GhostClosure c) { return c == GhostClosure::mirror ? "mirror" : "copy_edge"; }

/// Uniform grid on [-1, 1] with n_cells + 1 nodes x_i = -1 + i h, h = 2 / n_cells.
class GridSpec {
 public:
  explicit GridSpec(int n_cells, GhostClosure closure = GhostClosure::mirror)
      : n_cells_(n_cells), closure_(closure) {
    if (n_cells < 4 || n_cells % 2 != 0)
      throw std::invalid_argument("GridSpec: n_cells must be even and at least 4");
  }

  int n_cells() const { return n_cells_; }
  std::size_t size() const { return static_cast<std::size_t>(n_cells_) + 1; }
  GhostClosure closure() const { return closure_; }

  double h() const { return 2.0 / n_cells_; }
  /// 1 / h^2 = N^2 / 4, exact for any N of interest.
  double inv_h2() const { return static_cast<double>(n_cells_) * n_cells_ / 4.0; }

  // (2i - N) / N keeps x_{N-i} = -x_i bit for bit and hits +-1 exactly.
  double node(std::size_t i) const {
    return static_cast<double>(2 * static_cast<long>(i) - n_cells_) / n_cells_;
  }

  std::vector<double> nodes() const {
    std::vector<double> x(size());
    for (std::size_t i = 0; i < size(); ++i) x[i] = node(i);
    return x;
  }

  Vector trapezoid_weights() const {
    Vector w(size(), h());
    w.front() = w.back() = 0.5 * h();
    return w;
  }

  /// Trapezoidal mean over |Omega| = 2.
  double mean(std::span<const double> v) const {
    const Vector w = trapezoid_weights();
    return 0.5 * dot(w, v);
  }

  bool operator==(const GridSpec&) const = default;

 private:
  int n_cells_;
  GhostClosure closure_;
};

/// (phi_{i+1} + phi_{i-1} - 2 phi_i) / h^2 with ghost values from the closure.
inline Vector second_difference(std::span<const double> phi, const GridSpec& grid) {
  const std::size_t n = grid.size();
  if (phi.size() != n) throw std::invalid_argument("state length does not match grid");
  const double s = grid.inv_h2();
  const std::size_t last = n - 1;
  Vector out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double left = i == 0 ? phi[1] : phi[i - 1];
    double right;
    if (i < last) {
      right = phi[i + 1];
    } else {
      right = grid.closure() == GhostClosure::mirror ? phi[last - 1] : phi[last];
    }
    out[i] = (right + left - 2.0 * phi[i]) * s;
  }
  return out;
}

/// Matrix of `second_difference` (boundary rows fold the ghost onto the
/// single interior neighbour).
inline DenseMatrix second_difference_matrix(const GridSpec& grid) {
  const std::size_t n = grid.size();
  const std::size_t last = n - 1;
  const double s = grid.inv_h2();
  DenseMatrix d(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    d(i, i) = -2.0 * s;
    if (i == 0) {
      d(i, 1) += 2.0 * s;
    } else if (i == last) {
      d(i, last - 1) += s;
      if (grid.closure() == GhostClosure::mirror)
        d(i, last - 1) += s;
      else
        d(i, last) += s;
    } else {
      d(i, i - 1) = s;
      d(i, i + 1) = s;
    }
  }
  return d;
}

inline StateVector constant_state(const GridSpec& grid, double value) { return StateVector(grid.size(), value); }

}  // namespace phasebif
