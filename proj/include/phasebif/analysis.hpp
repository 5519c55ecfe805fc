#pragma once

// Closed-form bifurcation values, sampled eigenmodes and the implicit-step
// stability threshold. This is the analytic layer the numerical engine is
// checked against.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "phasebif/grid.hpp"
#include "phasebif/linalg.hpp"
#include "phasebif/models.hpp"

namespace phasebif {

/// sine: sin((pi/2 + n pi) x), n >= 0;  cosine: cos(n pi x), n >= 1.
enum class ModeFamily { sine, cosine, unknown };

inline std::string to_string(ModeFamily f) {
  switch (f) {
    case ModeFamily::sine: return "sine";
    case ModeFamily::cosine: return "cosine";
    case ModeFamily::unknown: return "unknown";
  }
  return "?";
}

enum class Validity { exact, leading_order_in_mu0 };

struct AnalyticBifurcation {
  ModelKind model_kind = ModelKind::allen_cahn;
  ModeFamily mode_family = ModeFamily::sine;
  int mode_index = 0;
  double param_value = 0.0;
  Validity validity_note = Validity::exact;
};

/// Wavenumber of a Neumann-compatible mode.
inline double mode_wavenumber(int n, ModeFamily family) {
  if (family == ModeFamily::sine) {
    if (n < 0) throw std::invalid_argument("sine modes start at n = 0");
    return std::numbers::pi / 2.0 + n * std::numbers::pi;
  }
  if (family == ModeFamily::cosine) {
    if (n < 1) throw std::invalid_argument("cosine modes start at n = 1; the constant mode never bifurcates");
    return n * std::numbers::pi;
  }
  throw std::invalid_argument("mode family must be sine or cosine");
}

/// Number of half-wavelengths across [-1, 1]: 2n+1 for sine, 2n for cosine.
inline int mode_order(int n, ModeFamily family) { return family == ModeFamily::sine ? 2 * n + 1 : 2 * n; }

inline AnalyticBifurcation ac_bifurcation(int n, ModeFamily family) {
  return {ModelKind::allen_cahn, family, n, 1.0 / mode_wavenumber(n, family), Validity::exact};
}

class AnalysisError : public std::runtime_error {
 public:
  AnalysisError(const std::string& what, double last_iterate)
      : std::runtime_error(what), last_iterate_(last_iterate) {}
  double last_iterate() const { return last_iterate_; }

 private:
  double last_iterate_;
};

/// Solves k_n^2 - 1/eps^2 + 3 phi0(mu0, eps)^2 / eps^2 = 0 for eps, where
/// phi0 is the exact middle root of phi^3 - phi = mu0 eps^2.
inline AnalyticBifurcation ch_bifurcation(int n, ModeFamily family, double mu0, double epsilon_guess) {
  const double k = mode_wavenumber(n, family);
  if (std::abs(mu0) * epsilon_guess * epsilon_guess >= kCubicWindow)
    throw std::invalid_argument("ch_bifurcation: outside the three-root regime");

  auto middle = [mu0](double eps) {
    const CubicRoots r = cubic_trivial_roots(mu0 * eps * eps);
    if (!r.middle) throw AnalysisError("ch_bifurcation: left the three-root regime", eps);
    return r.roots[*r.middle];
  };

  double eps = 1.0 / k;
  for (int it = 0; it < 60; ++it) {
    const double phi0 = middle(eps);
    const double e2 = eps * eps;
    const double value = k * k - 1.0 / e2 + 3.0 * phi0 * phi0 / e2;
    const double dphi = 2.0 * mu0 * eps / (3.0 * phi0 * phi0 - 1.0);
    const double slope = 2.0 / (e2 * eps) + 6.0 * phi0 * dphi / e2 - 6.0 * phi0 * phi0 / (e2 * eps);
    if (value == 0.0) break;
    const double step = value / slope;
    eps -= step;
    if (!(eps > 0.0)) throw AnalysisError("ch_bifurcation: Newton left eps > 0", eps);
    if (std::abs(step) <= 1e-15 * eps) break;
    if (it == 59) throw AnalysisError("ch_bifurcation: Newton did not converge", eps);
  }
  return {ModelKind::cahn_hilliard, family, n, eps, Validity::exact};
}

/// gamma = -eps k^4 + (18 / eps) k^2. May be negative for large k.
inline AnalyticBifurcation acok_bifurcation(int n, ModeFamily family, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("acok_bifurcation: epsilon must be positive");
  const double k2 = std::pow(mode_wavenumber(n, family), 2);
  return {ModelKind::ohta_kawasaki, family, n, -epsilon * k2 * k2 + 18.0 / epsilon * k2, Validity::exact};
}

/// Largest gamma the closed form can reach, attained at k^2 = 9 / eps^2.
inline double acok_gamma_ceiling(double epsilon) { return 81.0 / (epsilon * epsilon * epsilon); }

/// Unit 2-norm samples of the mode, first non-negligible entry positive.
inline Vector eigenmode(int n, ModeFamily family, const GridSpec& grid) {
  const double k = mode_wavenumber(n, family);
  Vector v(grid.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = grid.node(i);
    v[i] = family == ModeFamily::sine ? std::sin(k * x) : std::cos(k * x);
  }
  normalize_with_sign(v);
  return v;
}

/// Largest time step for which the implicit Allen-Cahn step stays uniquely
/// solvable around phi = 0.
inline double implicit_step_threshold(double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  return epsilon * epsilon;
}

/// Linearized implicit-step operator at phi^n = 0:  I/dt - D2 - I/eps^2.
inline DenseMatrix implicit_step_operator(double epsilon, double dt, const GridSpec& grid) {
  DenseMatrix a = second_difference_matrix(grid);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (double& v : a.row(r)) v = -v;
  a.add_to_diagonal(1.0 / dt - 1.0 / (epsilon * epsilon));
  return a;
}

/// Number of negative eigenvalues of a Neumann tridiagonal operator whose
/// boundary rows fold the ghost neighbour (mirror closure). Scaling those rows
/// by 1/2 gives a symmetric matrix congruent to a similar one, so the Sturm
/// count of the symmetric form is the inertia of the original.
inline int negative_eigenvalue_count(const DenseMatrix& tridiagonal) {
  const std::size_t n = tridiagonal.rows();
  if (n < 2 || !tridiagonal.square()) throw std::invalid_argument("expected a square tridiagonal matrix");
  auto weight = [n](std::size_t i) { return (i == 0 || i == n - 1) ? 0.5 : 1.0; };
  int negatives = 0;
  double d = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double diag = weight(i) * tridiagonal(i, i);
    if (i == 0) {
      d = diag;
    } else {
      const double off = weight(i) * tridiagonal(i, i - 1);
      d = diag - off * off / d;
    }
    if (d == 0.0) d = -1e-300;
    if (d < 0.0) ++negatives;
  }
  return negatives;
}

/// Analytic bifurcation values of the bifurcating trivial branch lying in
/// [lo, hi], sorted by parameter descending. Modes are enumerated up to
/// `max_index` in each family.
inline std::vector<AnalyticBifurcation> analytic_bifurcations_in_range(ModelKind kind, const ModelParams& params,
                                                                        double lo, double hi, int max_index = 200) {
  std::vector<AnalyticBifurcation> out;
  for (ModeFamily family : {ModeFamily::sine, ModeFamily::cosine}) {
    for (int n = family == ModeFamily::sine ? 0 : 1; n <= max_index; ++n) {
      AnalyticBifurcation b;
      switch (kind) {
        case ModelKind::allen_cahn: b = ac_bifurcation(n, family); break;
        case ModelKind::cahn_hilliard:
          if (std::abs(params.mu0) * std::pow(1.0 / mode_wavenumber(n, family), 2) >= kCubicWindow) continue;
          b = ch_bifurcation(n, family, params.mu0, 1.0 / mode_wavenumber(n, family));
          break;
        case ModelKind::ohta_kawasaki: b = acok_bifurcation(n, family, params.epsilon); break;
      }
      if (b.param_value >= lo && b.param_value <= hi) out.push_back(b);
    }
  }
  std::sort(out.begin(), out.end(),
            [](const AnalyticBifurcation& a, const AnalyticBifurcation& b) { return a.param_value > b.param_value; });
  return out;
}

}  // namespace phasebif
