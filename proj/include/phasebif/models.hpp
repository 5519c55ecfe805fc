#pragma once

// Finite-difference discretizations of the three steady-state phase-field
// equations as parametric systems F(phi, p) = 0, with exact Jacobians and
// parameter derivatives.
//
//   Allen-Cahn      F = -D2 phi + (phi^3 - phi) / eps^2
//   Cahn-Hilliard   F = -D2 phi + (phi^3 - phi) / eps^2 - mu0
//   ACOK            F = eps D2 phi - W'(phi) / eps - gamma (-Delta)^{-1}(phi - mean phi),
//                   W(phi) = 18 (phi^2 - phi)^2
//
// D2 is the three-point second difference with ghost-node Neumann closure.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <memory>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "phasebif/grid.hpp"
#include "phasebif/linalg.hpp"

namespace phasebif {

enum class ModelKind { allen_cahn, cahn_hilliard, ohta_kawasaki };
enum class ParameterKind { epsilon, mu0, gamma };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::allen_cahn: return "ac";
    case ModelKind::cahn_hilliard: return "ch";
    case ModelKind::ohta_kawasaki: return "acok";
  }
  return "?";
}

inline std::string to_string(ParameterKind k) {
  switch (k) {
    case ParameterKind::epsilon: return "epsilon";
    case ParameterKind::mu0: return "mu0";
    case ParameterKind::gamma: return "gamma";
  }
  return "?";
}

struct ModelParams {
  double epsilon = 0.1;
  double mu0 = 0.0;
  double gamma = 0.0;

  double get(ParameterKind k) const {
    switch (k) {
      case ParameterKind::epsilon: return epsilon;
      case ParameterKind::mu0: return mu0;
      case ParameterKind::gamma: return gamma;
    }
    return 0.0;
  }

  ModelParams with(ParameterKind k, double value) const {
    ModelParams p = *this;
    switch (k) {
      case ParameterKind::epsilon: p.epsilon = value; break;
      case ParameterKind::mu0: p.mu0 = value; break;
      case ParameterKind::gamma: p.gamma = value; break;
    }
    return p;
  }

  void validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw std::invalid_argument("epsilon must be positive");
    if (!std::isfinite(mu0)) throw std::invalid_argument("mu0 must be finite");
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw std::invalid_argument("gamma must be non-negative");
  }
};

/// A constant steady state; `rank` orders the states of one model ascending.
struct TrivialState {
  double value = 0.0;
  bool bifurcating = false;
  int rank = 0;
};

// ---------------------------------------------------------------------------
// Trivial-state algebra
// ---------------------------------------------------------------------------

/// Threshold 2 / (3 sqrt 3) on |mu0 eps^2| for three real trivial states.
inline constexpr double kCubicWindow = 2.0 / (3.0 * std::numbers::sqrt3);

struct CubicRoots {
  std::vector<double> roots;          // ascending, distinct
  std::optional<std::size_t> middle;  // set only in the three-root regime
};

namespace detail {

inline double polish_cubic_root(double x, double q) {
  for (int it = 0; it < 8; ++it) {
    const double f = x * x * x - x - q;
    const double df = 3.0 * x * x - 1.0;
    if (df == 0.0) break;
    const double step = f / df;
    x -= step;
    if (std::abs(step) <= 1e-16 * std::max(1.0, std::abs(x))) break;
  }
  return x;
}

}  // namespace detail

/// Real roots of phi^3 - phi = q.
inline CubicRoots cubic_trivial_roots(double q) {
  CubicRoots out;
  if (q == 0.0) {
    out.roots = {-1.0, 0.0, 1.0};
    out.middle = 1;
    return out;
  }
  const double two_over_sqrt3 = 2.0 / std::numbers::sqrt3;
  const double arg = 1.5 * std::numbers::sqrt3 * q;  // (3 sqrt3 / 2) q, |arg| < 1 inside the window
  const double boundary_gap = std::abs(std::abs(q) - kCubicWindow);

  if (boundary_gap <= 1e-14 * kCubicWindow) {
    // Double root at -sign(q)/sqrt3, simple root at 2 sign(q)/sqrt3.
    const double s = q > 0.0 ? 1.0 : -1.0;
    out.roots = {-s / std::numbers::sqrt3, 2.0 * s / std::numbers::sqrt3};
    std::sort(out.roots.begin(), out.roots.end());
    return out;
  }
  if (std::abs(q) < kCubicWindow) {
    const double theta = std::acos(std::clamp(arg, -1.0, 1.0)) / 3.0;
    for (int k = 0; k < 3; ++k) {
      const double x = two_over_sqrt3 * std::cos(theta - 2.0 * std::numbers::pi * k / 3.0);
      out.roots.push_back(detail::polish_cubic_root(x, q));
    }
    std::sort(out.roots.begin(), out.roots.end());
    out.middle = 1;
    return out;
  }
  const double s = q > 0.0 ? 1.0 : -1.0;
  const double x = s * two_over_sqrt3 * std::cosh(std::acosh(std::abs(arg)) / 3.0);
  out.roots = {detail::polish_cubic_root(x, q)};
  return out;
}

/// Trivial roots of the Cahn-Hilliard model: phi0^3 - phi0 = mu0 eps^2.
inline CubicRoots ch_trivial_roots(const ModelParams& params) {
  return cubic_trivial_roots(params.mu0 * params.epsilon * params.epsilon);
}

/// Constant steady states of each model, flagged where branches bifurcate.
inline std::vector<TrivialState> trivial_states(ModelKind kind, const ModelParams& params) {
  switch (kind) {
    case ModelKind::allen_cahn:
      return {{-1.0, false, 0}, {0.0, true, 1}, {1.0, false, 2}};
    case ModelKind::ohta_kawasaki:
      return {{0.0, false, 0}, {0.5, true, 1}, {1.0, false, 2}};
    case ModelKind::cahn_hilliard: {
      const CubicRoots r = ch_trivial_roots(params);
      std::vector<TrivialState> out;
      for (std::size_t i = 0; i < r.roots.size(); ++i)
        out.push_back({r.roots[i], r.middle && *r.middle == i, static_cast<int>(i)});
      return out;
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// Nonlocal operator
// ---------------------------------------------------------------------------

/// Discrete u = (-Delta)^{-1}(phi - mean phi) with Neumann data and zero mean,
/// assembled from the 1-D Green's function G(x, y) = |x - y| / 2 and
/// trapezoidal quadrature:
///   u_i = mean(phi) H_i - sum_j w_j G_ij phi_j + (1/|Omega|) sum_j (sum_k w_k G_kj) w_j phi_j
/// with H_i = sum_j w_j G_ij - (1/|Omega|) sum_{k,j} w_k w_j G_kj.
struct GreenOperator {
  DenseMatrix matrix;
  Vector h_profile;
  Vector quadrature_weights;

  /// Applied to phi - mean(phi); equal to matrix * phi since the matrix
  /// annihilates constants, but with far less rounding on the constant part.
  Vector apply(std::span<const double> phi) const {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < phi.size(); ++i) {
      num += quadrature_weights[i] * phi[i];
      den += quadrature_weights[i];
    }
    const double mean = num / den;
    Vector centered(phi.begin(), phi.end());
    for (double& v : centered) v -= mean;
    return matrix.multiply(centered);
  }
};

inline GreenOperator green_operator(const GridSpec& grid) {
  const std::size_t n = grid.size();
  const double h = grid.h();
  const Vector w = grid.trapezoid_weights();
  constexpr double domain_length = 2.0;

  // G depends only on |i - j|, which keeps the matrix exactly reflection symmetric.
  auto g = [h](std::size_t i, std::size_t j) {
    const double d = i > j ? static_cast<double>(i - j) : static_cast<double>(j - i);
    return 0.5 * d * h;
  };

  Vector gw(n, 0.0);  // sum_j w_j G_ij
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += w[j] * g(i, j);
    gw[i] = s;
  }
  const double double_integral = dot(w, gw);

  GreenOperator op;
  op.quadrature_weights = w;
  op.h_profile.resize(n);
  for (std::size_t i = 0; i < n; ++i) op.h_profile[i] = gw[i] - double_integral / domain_length;

  op.matrix = DenseMatrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = op.matrix.row(i);
    for (std::size_t j = 0; j < n; ++j)
      row[j] = w[j] / domain_length * op.h_profile[i] - w[j] * g(i, j) + gw[j] * w[j] / domain_length;
    // Row sums vanish analytically; remove the rounding so constants map to 0.
    double sum = 0.0;
    for (double v : row) sum += v;
    row[i] -= sum;
  }
  return op;
}

/// Solves Delta u = f (u'' = f) with ghost-node Neumann closure and zero
/// trapezoidal mean. `f` must have zero trapezoidal mean.
inline Vector poisson_neumann_solve(std::span<const double> f, const GridSpec& grid) {
  const std::size_t n = grid.size();
  if (f.size() != n) throw std::invalid_argument("poisson_neumann_solve: length mismatch");
  const double scale = std::max(1.0, max_norm(f));
  if (std::abs(grid.mean(f)) > 1e-10 * scale)
    throw std::domain_error("Neumann problem unsolvable: right-hand side has nonzero mean");

  // Bordered system [D2 1; w^T 0][u; lambda] = [f; 0].
  const DenseMatrix d2 = second_difference_matrix(grid);
  const Vector w = grid.trapezoid_weights();
  DenseMatrix a(n + 1, n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) a(i, j) = d2(i, j);
    a(i, n) = 1.0;
    a(n, i) = w[i];
  }
  Vector rhs(f.begin(), f.end());
  rhs.push_back(0.0);
  Vector sol = lu_solve(lu_factor(std::move(a)), rhs);
  sol.pop_back();
  return sol;
}

// ---------------------------------------------------------------------------
// Residuals and Jacobians
// ---------------------------------------------------------------------------

namespace detail {

inline void check_state(std::span<const double> phi, const GridSpec& grid) {
  if (phi.size() != grid.size()) throw std::invalid_argument("state length does not match grid");
}

inline double acok_wprime(double p) { return 36.0 * (2.0 * p - 1.0) * p * (p - 1.0); }
inline double acok_wsecond(double p) { return 36.0 * (6.0 * p * p - 6.0 * p + 1.0); }

}  // namespace detail

inline Vector ac_residual(std::span<const double> phi, const ModelParams& params, const GridSpec& grid) {
  detail::check_state(phi, grid);
  Vector r = second_difference(phi, grid);
  const double inv_eps2 = 1.0 / (params.epsilon * params.epsilon);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = -r[i] + inv_eps2 * (phi[i] * phi[i] * phi[i] - phi[i]);
  return r;
}

inline DenseMatrix ac_jacobian(std::span<const double> phi, const ModelParams& params, const GridSpec& grid) {
  detail::check_state(phi, grid);
  DenseMatrix j = second_difference_matrix(grid);
  const double inv_eps2 = 1.0 / (params.epsilon * params.epsilon);
  for (std::size_t r = 0; r < j.rows(); ++r) {
    for (double& v : j.row(r)) v = -v;
    j(r, r) += inv_eps2 * (3.0 * phi[r] * phi[r] - 1.0);
  }
  return j;
}

inline Vector ch_residual(std::span<const double> phi, const ModelParams& params, const GridSpec& grid) {
  Vector r = ac_residual(phi, params, grid);
  for (double& v : r) v -= params.mu0;
  return r;
}

inline Vector acok_residual(std::span<const double> phi, const ModelParams& params, const GridSpec& grid,
                            const GreenOperator& gop) {
  detail::check_state(phi, grid);
  Vector r = second_difference(phi, grid);
  const Vector u = gop.apply(phi);
  const double eps = params.epsilon;
  for (std::size_t i = 0; i < r.size(); ++i)
    r[i] = eps * r[i] - detail::acok_wprime(phi[i]) / eps - params.gamma * u[i];
  return r;
}

inline DenseMatrix acok_jacobian(std::span<const double> phi, const ModelParams& params, const GridSpec& grid,
                                 const GreenOperator& gop) {
  detail::check_state(phi, grid);
  const DenseMatrix d2 = second_difference_matrix(grid);
  const std::size_t n = grid.size();
  const double eps = params.epsilon;
  DenseMatrix j(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    auto out = j.row(r);
    const auto lap = d2.row(r);
    const auto green = gop.matrix.row(r);
    for (std::size_t c = 0; c < n; ++c) out[c] = eps * lap[c] - params.gamma * green[c];
    out[r] -= detail::acok_wsecond(phi[r]) / eps;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Model objects
// ---------------------------------------------------------------------------

/// Everything the continuation engine needs from one equation.
template <class M>
concept ParametricModel = requires(const M& m, const StateVector& s, double p) {
  { m.kind() } -> std::same_as<ModelKind>;
  { m.parameter() } -> std::same_as<ParameterKind>;
  { m.grid() } -> std::same_as<const GridSpec&>;
  { m.params() } -> std::same_as<const ModelParams&>;
  { m.residual(s, p) } -> std::same_as<Vector>;
  { m.jacobian(s, p) } -> std::same_as<DenseMatrix>;
  { m.param_derivative(s, p) } -> std::same_as<Vector>;
  { m.trivial_states(p) } -> std::same_as<std::vector<TrivialState>>;
};

namespace detail {

inline void check_parameter(ParameterKind k, double value) {
  if (k == ParameterKind::epsilon && !(value > 0.0))
    throw std::invalid_argument("epsilon continuation requires strictly positive values");
}

}  // namespace detail

class AllenCahnModel {
 public:
  AllenCahnModel(GridSpec grid, ModelParams params) : grid_(grid), params_(params) { params_.validate(); }

  ModelKind kind() const { return ModelKind::allen_cahn; }
  ParameterKind parameter() const { return ParameterKind::epsilon; }
  const GridSpec& grid() const { return grid_; }
  const ModelParams& params() const { return params_; }

  ModelParams at(double p) const {
    detail::check_parameter(parameter(), p);
    return params_.with(parameter(), p);
  }

  Vector residual(const StateVector& s, double p) const { return ac_residual(s, at(p), grid_); }
  DenseMatrix jacobian(const StateVector& s, double p) const { return ac_jacobian(s, at(p), grid_); }

  /// dF/d eps = -2 / eps^3 (phi^3 - phi).
  Vector param_derivative(const StateVector& s, double p) const {
    detail::check_parameter(parameter(), p);
    Vector d(s.size());
    const double c = -2.0 / (p * p * p);
    for (std::size_t i = 0; i < s.size(); ++i) d[i] = c * (s[i] * s[i] * s[i] - s[i]);
    return d;
  }

  std::vector<TrivialState> trivial_states(double p) const { return phasebif::trivial_states(kind(), at(p)); }

 private:
  GridSpec grid_;
  ModelParams params_;
};

class CahnHilliardModel {
 public:
  CahnHilliardModel(GridSpec grid, ModelParams params, ParameterKind active = ParameterKind::epsilon)
      : grid_(grid), params_(params), active_(active) {
    params_.validate();
    if (active != ParameterKind::epsilon && active != ParameterKind::mu0)
      throw std::invalid_argument("Cahn-Hilliard continues in epsilon or mu0");
  }

  ModelKind kind() const { return ModelKind::cahn_hilliard; }
  ParameterKind parameter() const { return active_; }
  const GridSpec& grid() const { return grid_; }
  const ModelParams& params() const { return params_; }

  ModelParams at(double p) const {
    detail::check_parameter(parameter(), p);
    return params_.with(parameter(), p);
  }

  Vector residual(const StateVector& s, double p) const { return ch_residual(s, at(p), grid_); }
  DenseMatrix jacobian(const StateVector& s, double p) const { return ac_jacobian(s, at(p), grid_); }

  Vector param_derivative(const StateVector& s, double p) const {
    detail::check_parameter(parameter(), p);
    if (active_ == ParameterKind::mu0) return Vector(s.size(), -1.0);
    Vector d(s.size());
    const double c = -2.0 / (p * p * p);
    for (std::size_t i = 0; i < s.size(); ++i) d[i] = c * (s[i] * s[i] * s[i] - s[i]);
    return d;
  }

  std::vector<TrivialState> trivial_states(double p) const { return phasebif::trivial_states(kind(), at(p)); }

 private:
  GridSpec grid_;
  ModelParams params_;
  ParameterKind active_;
};

class OhtaKawasakiModel {
 public:
  OhtaKawasakiModel(GridSpec grid, ModelParams params)
      : grid_(grid), params_(params), green_(std::make_shared<const GreenOperator>(green_operator(grid))) {
    params_.validate();
  }

  ModelKind kind() const { return ModelKind::ohta_kawasaki; }
  ParameterKind parameter() const { return ParameterKind::gamma; }
  const GridSpec& grid() const { return grid_; }
  const ModelParams& params() const { return params_; }
  const GreenOperator& green() const { return *green_; }

  ModelParams at(double p) const { return params_.with(parameter(), p); }

  Vector residual(const StateVector& s, double p) const { return acok_residual(s, at(p), grid_, *green_); }
  DenseMatrix jacobian(const StateVector& s, double p) const { return acok_jacobian(s, at(p), grid_, *green_); }

  /// dF/d gamma = -(-Delta)^{-1}(phi - mean phi).
  Vector param_derivative(const StateVector& s, double /*p*/) const {
    Vector d = green_->apply(s);
    for (double& v : d) v = -v;
    return d;
  }

  std::vector<TrivialState> trivial_states(double p) const { return phasebif::trivial_states(kind(), at(p)); }

 private:
  GridSpec grid_;
  ModelParams params_;
  std::shared_ptr<const GreenOperator> green_;
};

static_assert(ParametricModel<AllenCahnModel>);
static_assert(ParametricModel<CahnHilliardModel>);
static_assert(ParametricModel<OhtaKawasakiModel>);

}  // namespace phasebif
