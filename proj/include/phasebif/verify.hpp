#pragma once

// Invariant checks shared by the `verify` command and the test suites:
// finite-difference Jacobians, the Green/Poisson cross-check, symmetries,
// and detected-versus-analytic bifurcation gaps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "phasebif/analysis.hpp"
#include "phasebif/continuation.hpp"
#include "phasebif/grid.hpp"
#include "phasebif/linalg.hpp"
#include "phasebif/models.hpp"

namespace phasebif {

inline constexpr std::uint64_t kVerifySeed = 20240917ULL;

/// Random state in the model's natural range: [-1, 1] for AC/CH, [0, 1] for ACOK.
/// Entries are multiples of 2^-30, so -phi and 1 - phi are exact.
inline StateVector random_state(ModelKind kind, std::size_t n, std::mt19937_64& rng) {
  const double lo = kind == ModelKind::ohta_kawasaki ? 0.0 : -1.0;
  std::uniform_real_distribution<double> dist(lo, 1.0);
  StateVector x(n);
  for (double& v : x) v = std::ldexp(std::round(std::ldexp(dist(rng), 30)), -30);
  return x;
}

inline Vector random_unit_vector(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vector v(n);
  for (double& x : v) x = dist(rng);
  const double nv = norm2(v);
  for (double& x : v) x /= nv;
  return v;
}

/// max over samples of |(F(x+dv) - F(x-dv)) / 2d - J v|_2 / |J v|_2.
template <ParametricModel M>
double jacobian_fd_error(const M& model, double p, int samples, std::uint64_t seed = kVerifySeed,
                         double delta = 1e-5) {
  std::mt19937_64 rng(seed);
  const std::size_t n = model.grid().size();
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    const StateVector x = random_state(model.kind(), n, rng);
    const Vector v = random_unit_vector(n, rng);
    StateVector xp = x, xm = x;
    for (std::size_t i = 0; i < n; ++i) {
      xp[i] += delta * v[i];
      xm[i] -= delta * v[i];
    }
    const Vector fp = model.residual(xp, p);
    const Vector fm = model.residual(xm, p);
    const Vector jv = model.jacobian(x, p).multiply(v);
    Vector diff(n);
    for (std::size_t i = 0; i < n; ++i) diff[i] = (fp[i] - fm[i]) / (2.0 * delta) - jv[i];
    worst = std::max(worst, norm2(diff) / norm2(jv));
  }
  return worst;
}

/// Same check for dF/dp with a central difference of relative size `rel_delta`.
template <ParametricModel M>
double param_derivative_fd_error(const M& model, double p, int samples, std::uint64_t seed = kVerifySeed,
                                 double rel_delta = 1e-6) {
  std::mt19937_64 rng(seed + 1);
  const std::size_t n = model.grid().size();
  const double delta = rel_delta * std::max(1.0, std::abs(p));
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    const StateVector x = random_state(model.kind(), n, rng);
    const Vector fp = model.residual(x, p + delta);
    const Vector fm = model.residual(x, p - delta);
    const Vector d = model.param_derivative(x, p);
    Vector diff(n);
    for (std::size_t i = 0; i < n; ++i) diff[i] = (fp[i] - fm[i]) / (2.0 * delta) - d[i];
    const double scale = norm2(d);
    worst = std::max(worst, scale > 0.0 ? norm2(diff) / scale : norm2(diff));
  }
  return worst;
}

/// Smooth probe used for the Green/Poisson comparison.
inline StateVector green_probe(const GridSpec& grid) {
  StateVector phi(grid.size());
  for (std::size_t i = 0; i < phi.size(); ++i) {
    const double x = grid.node(i);
    phi[i] = std::cos(std::numbers::pi * x) + 0.5 * std::sin(std::numbers::pi * x / 2.0) + 0.3 * x * x * x;
  }
  return phi;
}

/// |G phi - u|_inf with u solving Delta u = mean(phi) - phi by finite differences.
inline double green_oracle_gap(const GridSpec& grid, std::span<const double> phi) {
  const GreenOperator g = green_operator(grid);
  const Vector a = g.apply(phi);
  const double mean = grid.mean(phi);
  Vector f(phi.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = mean - phi[i];
  const Vector b = poisson_neumann_solve(f, grid);
  return max_abs_diff(a, b);
}

inline double green_oracle_gap(const GridSpec& grid) { return green_oracle_gap(grid, green_probe(grid)); }

/// |G phi - u|_inf against the closed-form zero-mean solution for green_probe.
inline double green_continuum_gap(const GridSpec& grid) {
  constexpr double pi = std::numbers::pi;
  const Vector a = green_operator(grid).apply(green_probe(grid));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = grid.node(i);
    const double u = std::cos(pi * x) / (pi * pi) + 2.0 * std::sin(pi * x / 2.0) / (pi * pi) -
                     0.015 * std::pow(x, 5) + 0.075 * x;
    worst = std::max(worst, std::abs(a[i] - u));
  }
  return worst;
}

inline double green_constant_error(const GridSpec& grid) {
  const GreenOperator g = green_operator(grid);
  double worst = 0.0;
  for (double c : {1.0, 0.5, -1.0, 0.25}) worst = std::max(worst, max_norm(g.apply(constant_state(grid, c))));
  return worst;
}

/// |F(-phi) + F(phi)|_inf over random states (AC/CH with mu0 = 0).
template <ParametricModel M>
double odd_symmetry_error(const M& model, double p, int samples, std::uint64_t seed = kVerifySeed) {
  std::mt19937_64 rng(seed + 2);
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    StateVector x = random_state(model.kind(), model.grid().size(), rng);
    const Vector f = model.residual(x, p);
    for (double& v : x) v = -v;
    const Vector g = model.residual(x, p);
    for (std::size_t i = 0; i < f.size(); ++i) worst = std::max(worst, std::abs(f[i] + g[i]));
  }
  return worst;
}

/// |F(1 - phi) + F(phi)|_inf over random states (ACOK).
template <ParametricModel M>
double half_symmetry_error(const M& model, double p, int samples, std::uint64_t seed = kVerifySeed) {
  std::mt19937_64 rng(seed + 3);
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    StateVector x = random_state(model.kind(), model.grid().size(), rng);
    const Vector f = model.residual(x, p);
    for (double& v : x) v = 1.0 - v;
    const Vector g = model.residual(x, p);
    for (std::size_t i = 0; i < f.size(); ++i) worst = std::max(worst, std::abs(f[i] + g[i]));
  }
  return worst;
}

/// |reverse(F(phi)) - F(reverse(phi))|_inf over random states.
template <ParametricModel M>
double reflection_symmetry_error(const M& model, double p, int samples, std::uint64_t seed = kVerifySeed) {
  std::mt19937_64 rng(seed + 4);
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    StateVector x = random_state(model.kind(), model.grid().size(), rng);
    Vector f = model.residual(x, p);
    std::reverse(x.begin(), x.end());
    const Vector g = model.residual(x, p);
    std::reverse(f.begin(), f.end());
    worst = std::max(worst, max_abs_diff(f, g));
  }
  return worst;
}

template <ParametricModel M>
double trivial_residual_error(const M& model, std::span<const double> params) {
  double worst = 0.0;
  for (double p : params) {
    auto states = trivial_set(model, p);
    if (!states) continue;
    for (const TrivialState& t : *states)
      worst = std::max(worst, max_norm(model.residual(constant_state(model.grid(), t.value), p)));
  }
  return worst;
}

/// One analytic bifurcation paired with its detection (either may be missing).
struct ModeGap {
  ModeFamily family = ModeFamily::unknown;
  int index = -1;
  int order = -1;  // half-wavelengths across the domain
  double analytic = std::numeric_limits<double>::quiet_NaN();
  double detected = std::numeric_limits<double>::quiet_NaN();
  double relative_gap = std::numeric_limits<double>::quiet_NaN();
  double correlation = std::numeric_limits<double>::quiet_NaN();

  bool matched() const { return std::isfinite(analytic) && std::isfinite(detected); }
};

/// Pairs detections with analytic values of the same mode. Detections of
/// unknown family, or without an analytic value in range, are kept unpaired;
/// for ACOK only positive analytic values are listed.
inline std::vector<ModeGap> pair_with_analytic(ModelKind kind, const ModelParams& params,
                                               const std::vector<BifurcationPoint>& detected, double lo,
                                               double hi) {
  std::vector<AnalyticBifurcation> analytic = analytic_bifurcations_in_range(kind, params, lo, hi);
  if (kind == ModelKind::ohta_kawasaki)
    std::erase_if(analytic, [](const AnalyticBifurcation& a) { return !(a.param_value > 0.0); });

  std::vector<ModeGap> out;
  std::vector<bool> used(detected.size(), false);
  for (const AnalyticBifurcation& a : analytic) {
    ModeGap g;
    g.family = a.mode_family;
    g.index = a.mode_index;
    g.order = mode_order(a.mode_index, a.mode_family);
    g.analytic = a.param_value;
    for (std::size_t k = 0; k < detected.size(); ++k) {
      if (used[k] || detected[k].mode_family != a.mode_family || detected[k].mode_index != a.mode_index) continue;
      used[k] = true;
      g.detected = detected[k].param;
      g.relative_gap = std::abs(g.detected - g.analytic) / std::abs(g.analytic);
      g.correlation = detected[k].mode_correlation;
      break;
    }
    out.push_back(g);
  }
  for (std::size_t k = 0; k < detected.size(); ++k) {
    if (used[k]) continue;
    ModeGap g;
    g.family = detected[k].mode_family;
    g.index = detected[k].mode_index;
    if (g.family != ModeFamily::unknown) {
      g.order = mode_order(g.index, g.family);
      switch (kind) {
        case ModelKind::allen_cahn: g.analytic = ac_bifurcation(g.index, g.family).param_value; break;
        case ModelKind::ohta_kawasaki:
          g.analytic = acok_bifurcation(g.index, g.family, params.epsilon).param_value;
          break;
        case ModelKind::cahn_hilliard: {
          const double guess = 1.0 / mode_wavenumber(g.index, g.family);
          if (std::abs(params.mu0) * guess * guess < kCubicWindow)
            g.analytic = ch_bifurcation(g.index, g.family, params.mu0, guess).param_value;
          break;
        }
      }
      if (std::isfinite(g.analytic)) g.relative_gap = std::abs(detected[k].param - g.analytic) / std::abs(g.analytic);
    }
    g.detected = detected[k].param;
    g.correlation = detected[k].mode_correlation;
    out.push_back(g);
  }
  std::sort(out.begin(), out.end(), [](const ModeGap& a, const ModeGap& b) {
    const double pa = std::isfinite(a.detected) ? a.detected : a.analytic;
    const double pb = std::isfinite(b.detected) ? b.detected : b.analytic;
    return pa > pb;
  });
  return out;
}

/// Scans the bifurcating trivial branch of the model over the settings range
/// and pairs the detections with the closed-form values.
template <ParametricModel M>
std::vector<ModeGap> bifurcation_gaps(const M& model, const ContinuationSettings& settings,
                                      std::vector<BifurcationPoint>* detections = nullptr) {
  auto states = trivial_set(model, settings.param_min);
  if (!states) throw std::invalid_argument("bifurcation_gaps: trivial states undefined at range start");
  int rank = -1;
  for (const TrivialState& t : *states)
    if (t.bifurcating) rank = t.rank;
  const std::vector<BifurcationPoint> found = detect_bifurcations_on_trivial(
      model, settings, trivial_state_by_rank(model, rank), settings.param_min, settings.param_max);
  if (detections) *detections = found;
  return pair_with_analytic(model.kind(), model.params(), found, settings.param_min, settings.param_max);
}

struct CheckResult {
  std::string name;
  double measured = 0.0;
  double tolerance = 0.0;
  bool at_least = false;  // pass when measured >= tolerance instead of <=
  bool passed = false;
  std::string detail;
};

inline CheckResult make_check(std::string name, double measured, double tolerance, bool at_least = false,
                              std::string detail = {}) {
  CheckResult c{std::move(name), measured, tolerance, at_least, false, std::move(detail)};
  c.passed = std::isfinite(measured) && (at_least ? measured >= tolerance : measured <= tolerance);
  return c;
}

struct VerifyReport {
  std::vector<CheckResult> checks;
  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
  }
};

/// Modes with at least this many grid cells per half-wavelength count as
/// resolved for the gap and convergence checks.
inline constexpr int kResolvedCellsPerHalfWave = 25;

namespace detail {

template <ParametricModel M>
void add_gap_checks(const M& model, const ContinuationSettings& settings, double gap_tol, VerifyReport& report) {
  const int max_order = model.grid().n_cells() / kResolvedCellsPerHalfWave;
  const std::vector<ModeGap> gaps = bifurcation_gaps(model, settings);
  double worst_gap = 0.0;
  double worst_corr = 1.0;
  int missing = 0, checked = 0;
  for (const ModeGap& g : gaps) {
    if (std::isfinite(g.correlation)) worst_corr = std::min(worst_corr, g.correlation);
    if (g.family == ModeFamily::unknown) {
      worst_corr = std::min(worst_corr, std::isfinite(g.correlation) ? g.correlation : 0.0);
      continue;
    }
    if (g.order > max_order) continue;
    if (!g.matched()) {
      ++missing;
      continue;
    }
    ++checked;
    worst_gap = std::max(worst_gap, g.relative_gap);
  }
  report.checks.push_back(make_check("bifurcation_gap", missing ? std::numeric_limits<double>::infinity() : worst_gap,
                                     gap_tol, false,
                                     std::to_string(checked) + " resolved modes (order <= " +
                                         std::to_string(max_order) + "), " + std::to_string(missing) + " missing"));
  report.checks.push_back(make_check("null_mode_correlation", worst_corr, 0.99, true,
                                     std::to_string(gaps.size()) + " detections"));
}

template <class Build>
void add_convergence_check(const Build& build, const GridSpec& grid, const ContinuationSettings& settings,
                           VerifyReport& report) {
  const int n = grid.n_cells();
  const bool halve = (n / 2) % 2 == 0 && n / 2 >= 4 * kResolvedCellsPerHalfWave;
  const GridSpec coarse(halve ? n / 2 : n, grid.closure());
  const GridSpec fine(halve ? n : 2 * n, grid.closure());
  const auto coarse_gaps = bifurcation_gaps(build(coarse), settings);
  const auto fine_gaps = bifurcation_gaps(build(fine), settings);
  const int max_order = coarse.n_cells() / kResolvedCellsPerHalfWave;
  double worst = std::numeric_limits<double>::infinity();
  int compared = 0;
  for (const ModeGap& c : coarse_gaps) {
    if (!c.matched() || c.order > max_order) continue;
    for (const ModeGap& f : fine_gaps) {
      if (!f.matched() || f.family != c.family || f.index != c.index) continue;
      if (f.relative_gap > 0.0) worst = std::min(worst, c.relative_gap / f.relative_gap);
      ++compared;
    }
  }
  if (compared == 0) worst = std::numeric_limits<double>::quiet_NaN();
  report.checks.push_back(make_check("convergence_ratio", worst, 3.5, true,
                                     "N=" + std::to_string(coarse.n_cells()) + " vs N=" +
                                         std::to_string(fine.n_cells()) + ", " + std::to_string(compared) +
                                         " modes"));
}

}  // namespace detail

/// Runs the invariant suite for one model configuration.
template <ParametricModel M, class Build>
VerifyReport verify_model(const M& model, const ContinuationSettings& settings, const Build& build) {
  VerifyReport report;
  const double lo = settings.param_min, hi = settings.param_max;
  const double mid = 0.5 * (lo + hi);
  // Jacobian checks at an interior parameter; ACOK uses a representative gamma.
  const double probe = model.kind() == ModelKind::ohta_kawasaki ? std::max(mid, 1.0) : mid;

  report.checks.push_back(make_check("jacobian_fd", jacobian_fd_error(model, probe, 20), 1e-6));
  report.checks.push_back(make_check("param_derivative_fd", param_derivative_fd_error(model, probe, 20), 1e-6));
  const std::vector<double> params{lo > 0.0 ? lo : 0.0, mid, hi};
  report.checks.push_back(make_check("trivial_residuals", trivial_residual_error(model, params), 1e-12));
  report.checks.push_back(make_check("reflection_symmetry", reflection_symmetry_error(model, probe, 20), 1e-12));

  const GridSpec& grid = model.grid();
  switch (model.kind()) {
    case ModelKind::allen_cahn:
      report.checks.push_back(make_check("odd_symmetry", odd_symmetry_error(model, probe, 20), 1e-12));
      break;
    case ModelKind::cahn_hilliard:
      if (model.params().mu0 == 0.0)
        report.checks.push_back(make_check("odd_symmetry", odd_symmetry_error(model, probe, 20), 1e-12));
      break;
    case ModelKind::ohta_kawasaki: {
      report.checks.push_back(make_check("half_symmetry", half_symmetry_error(model, probe, 20), 1e-12));
      report.checks.push_back(make_check("green_constant_annihilation", green_constant_error(grid), 1e-13));
      const double h = grid.h();
      const double gap = green_oracle_gap(grid);
      report.checks.push_back(make_check("green_oracle_gap_over_h2", gap / (h * h), 1.0));
      // The Poisson oracle agrees with the quadrature to rounding, so the
      // convergence order is measured against the closed-form solution.
      const double cont = green_continuum_gap(grid);
      const double cont_fine = green_continuum_gap(GridSpec(2 * grid.n_cells(), grid.closure()));
      report.checks.push_back(make_check("green_continuum_order", std::log2(cont / cont_fine), 1.8, true));
      break;
    }
  }

  const double gap_tol = model.kind() == ModelKind::ohta_kawasaki ? 5e-3 : 1e-3;
  detail::add_gap_checks(model, settings, gap_tol, report);
  if (model.kind() != ModelKind::ohta_kawasaki) detail::add_convergence_check(build, grid, settings, report);
  return report;
}

}  // namespace phasebif
