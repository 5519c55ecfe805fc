#pragma once

// Predictor-corrector branch tracking, determinant-sign bifurcation detection
// on trivial branches, and branch switching along the null mode.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "phasebif/analysis.hpp"
#include "phasebif/grid.hpp"
#include "phasebif/linalg.hpp"
#include "phasebif/models.hpp"

namespace phasebif {

struct ContinuationSettings {
  double initial_step = 1e-3;
  double min_step = 1e-8;
  double max_step = 1e-2;
  double newton_tol = 1e-10;
  int max_newton_iters = 30;
  int max_branch_points = 20000;
  double param_min = 0.05;
  double param_max = 0.7;
  bool use_pseudo_arclength = false;
  double dedupe_tol = 1e-4;

  /// Branch-switch seed amplitude along the max-norm-scaled null mode;
  /// 0 selects 0.05 (|base|_inf + 1).
  double seed_amplitude = 0.0;
  /// States this close (max-norm) to a trivial state count as trivial.
  double trivial_tol = 1e-2;
  /// Weight of the state part in the arclength metric,
  /// ds^2 = param_scale^2 |dx|^2 / n + dp^2; 0 selects param_max - param_min.
  double param_scale = 0.0;
  /// Upper bound on worker threads for branch tracing; 0 means hardware concurrency.
  int max_threads = 1;

  void validate() const {
    if (!(min_step > 0.0 && min_step <= initial_step && initial_step <= max_step))
      throw std::invalid_argument("settings: need 0 < min_step <= initial_step <= max_step");
    if (!(newton_tol > 0.0)) throw std::invalid_argument("settings: newton_tol must be positive");
    if (max_newton_iters < 1) throw std::invalid_argument("settings: max_newton_iters must be at least 1");
    if (max_branch_points < 2) throw std::invalid_argument("settings: max_branch_points must be at least 2");
    if (!(param_min < param_max)) throw std::invalid_argument("settings: param_min must be below param_max");
    if (!(dedupe_tol > 0.0)) throw std::invalid_argument("settings: dedupe_tol must be positive");
    if (seed_amplitude < 0.0) throw std::invalid_argument("settings: seed_amplitude must be non-negative");
    if (!(trivial_tol > 0.0)) throw std::invalid_argument("settings: trivial_tol must be positive");
    if (param_scale < 0.0) throw std::invalid_argument("settings: param_scale must be non-negative");
  }

  double metric_scale() const { return param_scale > 0.0 ? param_scale : param_max - param_min; }
};

struct BranchPoint {
  double param = 0.0;
  StateVector state;
  double residual_norm = 0.0;
  int det_sign = 0;
  int newton_iters_used = 0;
};

enum class NewtonStatus { converged, singular, no_convergence, diverged };

inline std::string to_string(NewtonStatus s) {
  switch (s) {
    case NewtonStatus::converged: return "converged";
    case NewtonStatus::singular: return "singular";
    case NewtonStatus::no_convergence: return "no_convergence";
    case NewtonStatus::diverged: return "diverged";
  }
  return "?";
}

struct NewtonOutcome {
  NewtonStatus status = NewtonStatus::no_convergence;
  BranchPoint point;  // last iterate when not converged
  std::optional<LuFactorization> jacobian_lu;

  bool ok() const { return status == NewtonStatus::converged; }
};

enum class BranchOrigin { trivial, switched };

struct Branch {
  int id = -1;
  BranchOrigin origin = BranchOrigin::trivial;
  int trivial_rank = -1;    // trivial branches
  int bifurcation_id = -1;  // switched branches
  int sign = 0;             // +1 / -1 offshoot
  std::vector<BranchPoint> points;
  std::string stop_reason;
};

enum class DetectionSource { detected, analytic };

struct BifurcationPoint {
  int id = -1;
  int trivial_rank = -1;
  double param = 0.0;
  double bracket_width = 0.0;
  StateVector base_state;
  Vector null_mode;
  double eigen_estimate = 0.0;
  ModeFamily mode_family = ModeFamily::unknown;
  int mode_index = -1;
  double mode_correlation = 0.0;
  DetectionSource source = DetectionSource::detected;
};

struct SwitchFailure {
  int bifurcation_id = -1;
  int sign = 0;
  std::string reason;
};

struct Diagram {
  ModelKind model_kind = ModelKind::allen_cahn;
  ParameterKind parameter = ParameterKind::epsilon;
  ContinuationSettings settings;
  std::vector<Branch> branches;
  std::vector<BifurcationPoint> bifurcations;
  std::vector<SwitchFailure> switch_failures;
};

/// Secant/tangent direction in (state, parameter) space.
struct Tangent {
  Vector dx;
  double dp = 0.0;
};

namespace detail {

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Model evaluations reject out-of-domain parameters by throwing; the
/// continuation loops treat that as a failed step.
template <class F>
auto guarded(F&& f) -> std::optional<decltype(f())> {
  try {
    return f();
  } catch (const std::invalid_argument&) {
    return std::nullopt;
  }
}

}  // namespace detail

/// Trivial states of the model at `p` if the full set of three exists.
template <ParametricModel M>
std::optional<std::vector<TrivialState>> trivial_set(const M& model, double p) {
  auto states = detail::guarded([&] { return model.trivial_states(p); });
  if (!states || states->size() != 3) return std::nullopt;
  return states;
}

template <ParametricModel M>
double distance_to_trivial(const M& model, std::span<const double> x, double p) {
  double best = std::numeric_limits<double>::infinity();
  const auto states = detail::guarded([&] { return model.trivial_states(p); });
  if (!states) return best;
  for (const TrivialState& t : *states) {
    double d = 0.0;
    for (double v : x) d = std::max(d, std::abs(v - t.value));
    best = std::min(best, d);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Newton corrector and Euler predictor
// ---------------------------------------------------------------------------

template <ParametricModel M>
NewtonOutcome newton_correct(const M& model, double param, StateVector guess, const ContinuationSettings& settings) {
  NewtonOutcome out;
  out.point.param = param;
  StateVector x = std::move(guess);
  double previous = std::numeric_limits<double>::infinity();
  int growth = 0;

  for (int it = 0;; ++it) {
    if (!detail::all_finite(x)) {
      out.status = NewtonStatus::diverged;
      break;
    }
    const Vector r = model.residual(x, param);
    const double rn = max_norm(r);
    out.point.state = x;
    out.point.residual_norm = rn;
    out.point.newton_iters_used = it;
    if (!std::isfinite(rn)) {
      out.status = NewtonStatus::diverged;
      break;
    }
    if (rn <= settings.newton_tol) {
      LuFactorization lu = lu_factor(model.jacobian(x, param));
      out.point.det_sign = det_sign(lu);
      out.jacobian_lu = std::move(lu);
      out.status = NewtonStatus::converged;
      break;
    }
    growth = rn > previous ? growth + 1 : 0;
    if (growth >= 3) {
      out.status = NewtonStatus::diverged;
      break;
    }
    previous = rn;
    if (it >= settings.max_newton_iters) {
      out.status = NewtonStatus::no_convergence;
      break;
    }
    const LuFactorization lu = lu_factor(model.jacobian(x, param));
    if (lu.singular) {
      out.status = NewtonStatus::singular;
      break;
    }
    const Vector dx = lu_solve(lu, r);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= dx[i];
  }
  return out;
}

/// Solves J dx = -dF/dp * step at the point; nullopt when J is singular.
template <ParametricModel M>
std::optional<StateVector> euler_predict(const M& model, const BranchPoint& point, double step,
                                         const LuFactorization* jacobian_lu = nullptr) {
  const Vector fp = model.param_derivative(point.state, point.param);
  if (max_norm(fp) == 0.0) return point.state;
  std::optional<LuFactorization> own;
  if (!jacobian_lu) {
    own = lu_factor(model.jacobian(point.state, point.param));
    jacobian_lu = &*own;
  }
  if (jacobian_lu->singular) return std::nullopt;
  Vector rhs(fp.size());
  for (std::size_t i = 0; i < fp.size(); ++i) rhs[i] = -fp[i] * step;
  const Vector dx = lu_solve(*jacobian_lu, rhs);
  StateVector out = point.state;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += dx[i];
  return out;
}

/// Newton on [F(x, p); row . (x - x0, p - p0) - target] = 0 with a linear
/// bordering row (arclength or amplitude constraint).
struct BorderedOutcome {
  bool converged = false;
  StateVector state;
  double param = 0.0;
  double residual_norm = 0.0;
  int iterations = 0;
};

template <ParametricModel M>
BorderedOutcome bordered_correct(const M& model, StateVector x, double p, const Vector& row_x, double row_p,
                                 const StateVector& x0, double p0, double target,
                                 const ContinuationSettings& settings) {
  BorderedOutcome out;
  const std::size_t n = x.size();
  double previous = std::numeric_limits<double>::infinity();
  int growth = 0;
  for (int it = 0; it <= settings.max_newton_iters; ++it) {
    if (!detail::all_finite(x) || !std::isfinite(p)) return out;
    auto r = detail::guarded([&] { return model.residual(x, p); });
    if (!r) return out;
    double c = row_p * (p - p0) - target;
    for (std::size_t i = 0; i < n; ++i) c += row_x[i] * (x[i] - x0[i]);
    const double rn = max_norm(*r);
    if (!std::isfinite(rn)) return out;
    if (rn <= settings.newton_tol && std::abs(c) <= 1e-9 * (1.0 + std::abs(target)) && it > 0) {
      out.converged = true;
      out.state = std::move(x);
      out.param = p;
      out.residual_norm = rn;
      out.iterations = it;
      return out;
    }
    growth = rn > previous ? growth + 1 : 0;
    if (growth >= 3) return out;
    previous = rn;

    const DenseMatrix j = model.jacobian(x, p);
    const Vector fp = model.param_derivative(x, p);
    DenseMatrix a(n + 1, n + 1);
    for (std::size_t i = 0; i < n; ++i) {
      const auto src = j.row(i);
      auto dst = a.row(i);
      std::copy(src.begin(), src.end(), dst.begin());
      dst[n] = fp[i];
      a(n, i) = row_x[i];
    }
    a(n, n) = row_p;
    const LuFactorization lu = lu_factor(std::move(a));
    if (lu.singular) return out;
    Vector rhs(r->begin(), r->end());
    rhs.push_back(c);
    const Vector d = lu_solve(lu, rhs);
    for (std::size_t i = 0; i < n; ++i) x[i] -= d[i];
    p -= d[n];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Branch tracing
// ---------------------------------------------------------------------------

namespace detail {

inline bool jumped(std::span<const double> corrected, std::span<const double> predicted,
                   std::span<const double> previous) {
  return max_abs_diff(corrected, predicted) > 0.2 * (1.0 + max_norm(previous));
}

template <ParametricModel M>
Branch trace_natural(const M& model, const ContinuationSettings& s, const BranchPoint& start, int direction,
                     double collapse_tol) {
  Branch b;
  b.points.push_back(start);
  BranchPoint cur = start;
  std::optional<LuFactorization> cur_lu;
  double step = s.initial_step;
  int easy = 0;
  const double bound = direction > 0 ? s.param_max : s.param_min;
  if (cur.param == bound) {
    b.stop_reason = "param_bound";
    return b;
  }

  while (true) {
    if (static_cast<int>(b.points.size()) >= s.max_branch_points) {
      b.stop_reason = "point_cap";
      return b;
    }
    double target = cur.param + direction * step;
    const bool at_bound = direction > 0 ? target >= bound : target <= bound;
    if (at_bound) target = bound;
    if (!trivial_set(model, target)) {
      b.stop_reason = "window_exit";
      return b;
    }

    auto predicted = guarded([&] {
      return euler_predict(model, cur, target - cur.param, cur_lu ? &*cur_lu : nullptr);
    });
    StateVector guess = predicted && *predicted ? **predicted : cur.state;
    auto res = guarded([&] { return newton_correct(model, target, guess, s); });

    bool accept = res && res->ok();
    if (accept && collapse_tol > 0.0 && distance_to_trivial(model, res->point.state, target) <= collapse_tol)
      accept = false;
    if (accept && jumped(res->point.state, guess, cur.state)) accept = false;

    if (!accept) {
      step *= 0.5;
      easy = 0;
      if (step < s.min_step) {
        b.stop_reason = "min_step";
        return b;
      }
      continue;
    }
    cur = res->point;
    cur_lu = std::move(res->jacobian_lu);
    b.points.push_back(cur);
    if (at_bound) {
      b.stop_reason = "param_bound";
      return b;
    }
    if (cur.newton_iters_used <= 3) {
      if (++easy >= 2) {
        step = std::min(step * 1.5, s.max_step);
        easy = 0;
      }
    } else {
      easy = 0;
    }
  }
}

template <ParametricModel M>
Branch trace_arclength(const M& model, const ContinuationSettings& s, const BranchPoint& start, Tangent tangent,
                       double collapse_tol) {
  Branch b;
  b.points.push_back(start);
  BranchPoint cur = start;
  const std::size_t n = start.state.size();
  const double scale = s.metric_scale();
  const double weight = scale * scale / static_cast<double>(n);
  double ds = s.initial_step;
  int easy = 0;

  auto normalize = [weight](Tangent& t) {
    const double norm = std::sqrt(weight * dot(t.dx, t.dx) + t.dp * t.dp);
    if (!(norm > 0.0)) throw std::invalid_argument("trace_branch: zero tangent");
    for (double& v : t.dx) v /= norm;
    t.dp /= norm;
  };
  if (tangent.dx.empty()) tangent.dx.assign(n, 0.0);
  normalize(tangent);

  while (true) {
    if (static_cast<int>(b.points.size()) >= s.max_branch_points) {
      b.stop_reason = "point_cap";
      return b;
    }
    StateVector guess = cur.state;
    for (std::size_t i = 0; i < n; ++i) guess[i] += ds * tangent.dx[i];
    const double p_guess = cur.param + ds * tangent.dp;

    Vector row_x(n);
    for (std::size_t i = 0; i < n; ++i) row_x[i] = weight * tangent.dx[i];
    BorderedOutcome res = bordered_correct(model, guess, p_guess, row_x, tangent.dp, cur.state, cur.param, ds, s);

    bool accept = res.converged;
    if (accept && jumped(res.state, guess, cur.state)) accept = false;
    const bool outside = accept && (res.param < s.param_min || res.param > s.param_max);
    if (accept && !outside && collapse_tol > 0.0 && !trivial_set(model, res.param)) {
      b.stop_reason = "window_exit";
      return b;
    }
    if (!accept) {
      ds *= 0.5;
      easy = 0;
      if (ds < s.min_step) {
        b.stop_reason = "min_step";
        return b;
      }
      continue;
    }

    if (outside) {
      const double bound = res.param < s.param_min ? s.param_min : s.param_max;
      const double t = (bound - cur.param) / (res.param - cur.param);
      StateVector at = cur.state;
      for (std::size_t i = 0; i < n; ++i) at[i] += t * (res.state[i] - cur.state[i]);
      auto fin = guarded([&] { return newton_correct(model, bound, at, s); });
      if (fin && fin->ok()) b.points.push_back(fin->point);
      b.stop_reason = "param_bound";
      return b;
    }

    BranchPoint next;
    next.param = res.param;
    next.state = std::move(res.state);
    next.residual_norm = res.residual_norm;
    next.newton_iters_used = res.iterations;
    next.det_sign = det_sign(lu_factor(model.jacobian(next.state, next.param)));

    tangent.dp = next.param - cur.param;
    tangent.dx.resize(n);
    for (std::size_t i = 0; i < n; ++i) tangent.dx[i] = next.state[i] - cur.state[i];
    normalize(tangent);

    cur = std::move(next);
    b.points.push_back(cur);
    if (collapse_tol > 0.0 && distance_to_trivial(model, cur.state, cur.param) <= collapse_tol) {
      b.stop_reason = "returned_to_trivial";
      return b;
    }
    if (cur.newton_iters_used <= 3) {
      if (++easy >= 2) {
        ds = std::min(ds * 1.5, s.max_step);
        easy = 0;
      }
    } else {
      easy = 0;
    }
  }
}

}  // namespace detail

/// Traces from `start` in the direction of increasing (+1) or decreasing (-1)
/// parameter. In arclength mode `tangent` (if given) sets the initial
/// direction instead. A branch that starts away from every trivial state is
/// not allowed to collapse back onto one.
template <ParametricModel M>
Branch trace_branch(const M& model, const ContinuationSettings& settings, const BranchPoint& start, int direction,
                    std::optional<Tangent> tangent = std::nullopt) {
  settings.validate();
  if (direction != 1 && direction != -1) throw std::invalid_argument("trace_branch: direction must be +1 or -1");
  if (start.residual_norm > settings.newton_tol || !detail::all_finite(start.state))
    throw std::invalid_argument("trace_branch: start point is not an accepted solution");
  const double dist = distance_to_trivial(model, start.state, start.param);
  const double collapse_tol = dist > settings.trivial_tol ? settings.trivial_tol : (dist > 0.0 ? 0.5 * dist : 0.0);

  if (!settings.use_pseudo_arclength) return detail::trace_natural(model, settings, start, direction, collapse_tol);
  Tangent t = tangent ? *tangent : Tangent{Vector(start.state.size(), 0.0), static_cast<double>(direction)};
  return detail::trace_arclength(model, settings, start, std::move(t), collapse_tol);
}

// ---------------------------------------------------------------------------
// Detection on trivial branches
// ---------------------------------------------------------------------------

/// Value of the trivial state at a parameter; nullopt outside its domain.
using TrivialStateFn = std::function<std::optional<double>(double)>;

template <ParametricModel M>
TrivialStateFn trivial_state_by_rank(const M& model, int rank) {
  return [&model, rank](double p) -> std::optional<double> {
    auto states = trivial_set(model, p);
    if (!states) return std::nullopt;
    return (*states)[static_cast<std::size_t>(rank)].value;
  };
}

struct ModeMatch {
  ModeFamily family = ModeFamily::unknown;
  int index = -1;
  double correlation = 0.0;
};

/// Best |cosine similarity| against the sampled analytic modes, k <= 25 in
/// each family; below 0.9 the family is unknown.
inline ModeMatch classify_mode(std::span<const double> v, const GridSpec& grid, int max_index = 25) {
  ModeMatch best;
  for (ModeFamily family : {ModeFamily::sine, ModeFamily::cosine}) {
    for (int k = family == ModeFamily::sine ? 0 : 1; k <= max_index; ++k) {
      const double c = std::abs(cosine_similarity(v, eigenmode(k, family, grid)));
      if (c > best.correlation) best = {family, k, c};
    }
  }
  if (best.correlation < 0.9) {
    best.family = ModeFamily::unknown;
    best.index = -1;
  }
  return best;
}

struct TrivialScan {
  std::vector<BranchPoint> points;
  std::vector<BifurcationPoint> bifurcations;
  std::string stop_reason;
};

namespace detail {

struct SignSample {
  double param = 0.0;
  int sign = 0;
  double log_det = 0.0;
  bool valid = false;
};

template <ParametricModel M>
SignSample sample_trivial(const M& model, const TrivialStateFn& fn, double p) {
  SignSample s;
  s.param = p;
  const auto v = fn(p);
  if (!v) return s;
  const LuFactorization lu = lu_factor(model.jacobian(constant_state(model.grid(), *v), p));
  s.sign = det_sign(lu);
  s.log_det = log_abs_det(lu);
  s.valid = true;
  return s;
}

template <ParametricModel M>
BifurcationPoint resolve_flip(const M& model, const TrivialStateFn& fn, SignSample a, SignSample b,
                              double width_tol) {
  // Keep the bracket [a, b] with a.sign != b.sign; a zero sign is the event itself.
  while (b.param - a.param > width_tol && a.sign != 0 && b.sign != 0) {
    const double mid = 0.5 * (a.param + b.param);
    if (mid <= a.param || mid >= b.param) break;
    SignSample m = sample_trivial(model, fn, mid);
    if (!m.valid) break;
    if (m.sign == 0) {
      a = b = m;
      break;
    }
    (m.sign == a.sign ? a : b) = m;
  }
  BifurcationPoint bp;
  bp.param = a.sign == 0 ? a.param : (b.sign == 0 ? b.param : 0.5 * (a.param + b.param));
  bp.bracket_width = b.param - a.param;
  bp.base_state = constant_state(model.grid(), *fn(bp.param));
  const DenseMatrix j = model.jacobian(bp.base_state, bp.param);
  try {
    const NullVectorResult nv = null_vector(j, 0.0, 1e-9 * j.max_row_norm(), 500);
    bp.null_mode = nv.vector;
    bp.eigen_estimate = nv.eigen_estimate;
    const ModeMatch m = classify_mode(bp.null_mode, model.grid());
    bp.mode_family = m.family;
    bp.mode_index = m.index;
    bp.mode_correlation = m.correlation;
  } catch (const LinalgError&) {
    bp.mode_family = ModeFamily::unknown;
  }
  return bp;
}

/// Sign flips and suspected double crossings (log|det| dips without a flip)
/// over samples; refines dips on a 10x finer grid up to `depth` times.
template <ParametricModel M>
void collect_events(const M& model, const TrivialStateFn& fn, const std::vector<SignSample>& samples,
                    double width_tol, int depth, std::vector<BifurcationPoint>& out) {
  // Sign flips between consecutive non-zero samples.
  std::optional<std::size_t> last;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    if (!samples[k].valid) continue;
    if (samples[k].sign == 0) {
      out.push_back(resolve_flip(model, fn, samples[k], samples[k], width_tol));
      last.reset();
      continue;
    }
    if (last && samples[*last].sign != samples[k].sign)
      out.push_back(resolve_flip(model, fn, samples[*last], samples[k], width_tol));
    last = k;
  }
  if (depth == 0) return;
  for (std::size_t k = 1; k + 1 < samples.size(); ++k) {
    const SignSample &l = samples[k - 1], &c = samples[k], &r = samples[k + 1];
    if (!(l.valid && c.valid && r.valid)) continue;
    if (l.sign == 0 || l.sign != c.sign || c.sign != r.sign) continue;
    if (!(c.log_det < l.log_det && c.log_det < r.log_det)) continue;
    std::vector<SignSample> fine;
    constexpr int kSub = 20;
    for (int i = 0; i <= kSub; ++i) {
      const double p = i == kSub ? r.param : l.param + (r.param - l.param) * i / kSub;
      fine.push_back(i == 0 ? l : (i == kSub ? r : sample_trivial(model, fn, p)));
    }
    collect_events(model, fn, fine, width_tol, depth - 1, out);
  }
}

}  // namespace detail

/// Scans [lo, hi] at settings.initial_step, recording the trivial branch and
/// bisecting every determinant-sign flip.
template <ParametricModel M>
TrivialScan scan_trivial_branch(const M& model, const ContinuationSettings& settings, const TrivialStateFn& fn,
                                double lo, double hi) {
  if (!(lo < hi)) throw std::invalid_argument("scan_trivial_branch: empty parameter range");
  TrivialScan scan;
  const double width = hi - lo;
  const auto steps = static_cast<long>(std::ceil(width / settings.initial_step - 1e-9));
  std::vector<detail::SignSample> samples;
  scan.stop_reason = "scan_complete";
  for (long k = 0; k <= steps; ++k) {
    const double p = k == steps ? hi : lo + width * static_cast<double>(k) / static_cast<double>(steps);
    detail::SignSample s = detail::sample_trivial(model, fn, p);
    if (!s.valid) {
      scan.stop_reason = "window_exit";
      break;
    }
    samples.push_back(s);
    BranchPoint bp;
    bp.param = p;
    bp.state = constant_state(model.grid(), *fn(p));
    bp.residual_norm = max_norm(model.residual(bp.state, p));
    bp.det_sign = s.sign;
    scan.points.push_back(std::move(bp));
  }
  detail::collect_events(model, fn, samples, 1e-10 * width, 3, scan.bifurcations);
  std::sort(scan.bifurcations.begin(), scan.bifurcations.end(),
            [](const BifurcationPoint& a, const BifurcationPoint& b) { return a.param < b.param; });
  return scan;
}

template <ParametricModel M>
std::vector<BifurcationPoint> detect_bifurcations_on_trivial(const M& model, const ContinuationSettings& settings,
                                                             const TrivialStateFn& fn, double lo, double hi) {
  return scan_trivial_branch(model, settings, fn, lo, hi).bifurcations;
}

// ---------------------------------------------------------------------------
// Branch switching
// ---------------------------------------------------------------------------

struct SwitchResult {
  std::optional<Branch> branch;
  std::string failure;
};

/// Seeds the offshoot of sign `sign` by solving F = 0 together with the
/// amplitude condition v.(x - base) / v.v = sign * s, v the null mode scaled
/// to unit max-norm, then traces away from the bifurcation. The amplitude is
/// halved while the seed lands outside the range or on the trivial state.
template <ParametricModel M>
SwitchResult branch_switch_one(const M& model, const ContinuationSettings& settings, const BifurcationPoint& bif,
                               int sign) {
  SwitchResult out;
  if (bif.null_mode.empty()) {
    out.failure = "no null mode";
    return out;
  }
  const std::size_t n = bif.base_state.size();
  Vector v = bif.null_mode;
  const double vmax = max_norm(v);
  for (double& e : v) e /= vmax;
  const double vv = dot(v, v);
  Vector row(n);
  for (std::size_t i = 0; i < n; ++i) row[i] = v[i] / vv;

  double s = settings.seed_amplitude > 0.0 ? settings.seed_amplitude : 0.05 * (max_norm(bif.base_state) + 1.0);
  for (int attempt = 0; attempt < 8; ++attempt, s *= 0.5) {
    StateVector x = bif.base_state;
    for (std::size_t i = 0; i < n; ++i) x[i] += sign * s * v[i];
    BorderedOutcome seed =
        bordered_correct(model, std::move(x), bif.param, row, 0.0, bif.base_state, bif.param, sign * s, settings);
    if (!seed.converged) {
      out.failure = "seed correction failed";
      continue;
    }
    if (seed.param < settings.param_min || seed.param > settings.param_max) {
      out.failure = "seed outside parameter range";
      continue;
    }
    if (distance_to_trivial(model, seed.state, seed.param) <= settings.dedupe_tol) {
      out.failure = "seed collapsed to trivial";
      continue;
    }
    auto start = detail::guarded([&] { return newton_correct(model, seed.param, seed.state, settings); });
    if (!start || !start->ok()) {
      out.failure = "seed correction failed";
      continue;
    }
    const BranchPoint& p0 = start->point;
    const int direction = p0.param >= bif.param ? 1 : -1;
    Tangent t;
    t.dx.resize(n);
    for (std::size_t i = 0; i < n; ++i) t.dx[i] = p0.state[i] - bif.base_state[i];
    t.dp = p0.param - bif.param;
    Branch b = trace_branch(model, settings, p0, direction, t);
    b.origin = BranchOrigin::switched;
    b.bifurcation_id = bif.id;
    b.sign = sign;
    out.branch = std::move(b);
    out.failure.clear();
    return out;
  }
  return out;
}

template <ParametricModel M>
std::vector<Branch> branch_switch(const M& model, const ContinuationSettings& settings, const BifurcationPoint& bif) {
  std::vector<Branch> out;
  for (int sign : {1, -1}) {
    SwitchResult r = branch_switch_one(model, settings, bif, sign);
    if (r.branch) out.push_back(std::move(*r.branch));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Slicing and whole diagrams
// ---------------------------------------------------------------------------

/// Newton-corrected states where the branch crosses `param`, one per
/// straddling segment.
template <ParametricModel M>
std::vector<BranchPoint> branch_crossings(const M& model, const ContinuationSettings& settings, const Branch& b,
                                          double param) {
  std::vector<BranchPoint> out;
  for (std::size_t k = 0; k + 1 < b.points.size(); ++k) {
    const BranchPoint& a = b.points[k];
    const BranchPoint& c = b.points[k + 1];
    if ((a.param - param) * (c.param - param) > 0.0 || a.param == c.param) continue;
    if (c.param == param && k + 2 < b.points.size()) continue;  // counted by the next segment
    const double t = (param - a.param) / (c.param - a.param);
    StateVector guess = a.state;
    for (std::size_t i = 0; i < guess.size(); ++i) guess[i] += t * (c.state[i] - a.state[i]);
    auto res = detail::guarded([&] { return newton_correct(model, param, guess, settings); });
    if (res && res->ok()) out.push_back(res->point);
  }
  return out;
}

struct Solution {
  int branch_id = -1;
  BranchOrigin origin = BranchOrigin::switched;
  double param = 0.0;
  double residual_norm = 0.0;
  StateVector state;
};

/// Distinct nontrivial steady states at `param` read off the diagram.
template <ParametricModel M>
std::vector<Solution> solutions_at(const Diagram& diagram, double param, const M& model,
                                   const ContinuationSettings& settings) {
  if (param < diagram.settings.param_min || param > diagram.settings.param_max)
    throw std::invalid_argument("solutions_at: parameter outside the diagram range");
  std::vector<Solution> out;
  for (const Branch& b : diagram.branches) {
    if (b.origin == BranchOrigin::trivial) continue;
    for (BranchPoint& p : branch_crossings(model, settings, b, param)) {
      if (distance_to_trivial(model, p.state, param) <= settings.trivial_tol) continue;
      const bool seen = std::any_of(out.begin(), out.end(), [&](const Solution& s) {
        return max_abs_diff(s.state, p.state) <= settings.dedupe_tol;
      });
      if (seen) continue;
      out.push_back({b.id, b.origin, param, p.residual_norm, std::move(p.state)});
    }
  }
  return out;
}

namespace detail {

inline std::pair<double, double> param_extent(const Branch& b) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const BranchPoint& p : b.points) {
    lo = std::min(lo, p.param);
    hi = std::max(hi, p.param);
  }
  return {lo, hi};
}

inline std::vector<StateVector> interpolated_states(const Branch& b, double param) {
  std::vector<StateVector> out;
  for (std::size_t k = 0; k + 1 < b.points.size(); ++k) {
    const BranchPoint& a = b.points[k];
    const BranchPoint& c = b.points[k + 1];
    if ((a.param - param) * (c.param - param) > 0.0 || a.param == c.param) continue;
    const double t = (param - a.param) / (c.param - a.param);
    StateVector x = a.state;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += t * (c.state[i] - a.state[i]);
    out.push_back(std::move(x));
  }
  return out;
}

}  // namespace detail

/// Two branches coincide when, at 5 shared parameters, some corrected state of
/// one lies within dedupe_tol of some corrected state of the other.
template <ParametricModel M>
bool branches_coincide(const M& model, const ContinuationSettings& settings, const Branch& a, const Branch& b) {
  const auto [alo, ahi] = detail::param_extent(a);
  const auto [blo, bhi] = detail::param_extent(b);
  const double lo = std::max(alo, blo), hi = std::min(ahi, bhi);
  if (!(hi > lo)) return false;
  std::vector<double> params;
  for (int j = 0; j < 5; ++j) params.push_back(lo + (j + 0.5) / 5.0 * (hi - lo));

  // Cheap screen on raw interpolants before any Newton work.
  for (double q : params) {
    const auto xa = detail::interpolated_states(a, q);
    const auto xb = detail::interpolated_states(b, q);
    bool near = false;
    for (const auto& u : xa)
      for (const auto& w : xb) near = near || max_abs_diff(u, w) <= 0.05 * (1.0 + max_norm(u));
    if (!near) return false;
  }
  for (double q : params) {
    const auto ca = branch_crossings(model, settings, a, q);
    const auto cb = branch_crossings(model, settings, b, q);
    bool match = false;
    for (const auto& u : ca)
      for (const auto& w : cb) match = match || max_abs_diff(u.state, w.state) <= settings.dedupe_tol;
    if (!match) return false;
  }
  return true;
}

namespace detail {

inline int resolve_thread_count(int requested, std::size_t jobs) {
  int t = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  t = std::max(1, t);
  return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(t), std::max<std::size_t>(jobs, 1)));
}

}  // namespace detail

/// Scans every trivial branch, switches at each detected bifurcation, traces
/// and dedupes the offshoots. Ids: trivial branches by rank, then offshoots in
/// bifurcation order with + before -.
template <ParametricModel M>
Diagram compute_diagram(const M& model, const ContinuationSettings& settings) {
  settings.validate();
  if (model.parameter() == ParameterKind::epsilon && !(settings.param_min > 0.0))
    throw std::invalid_argument("epsilon continuation requires a strictly positive range");

  Diagram d;
  d.model_kind = model.kind();
  d.parameter = model.parameter();
  d.settings = settings;

  auto reference = trivial_set(model, settings.param_min);
  if (!reference) reference = trivial_set(model, settings.param_max);
  if (!reference) throw std::invalid_argument("compute_diagram: trivial states are not all defined on this range");

  for (const TrivialState& t : *reference) {
    const TrivialStateFn fn = trivial_state_by_rank(model, t.rank);
    TrivialScan scan = scan_trivial_branch(model, settings, fn, settings.param_min, settings.param_max);
    Branch b;
    b.origin = BranchOrigin::trivial;
    b.trivial_rank = t.rank;
    b.points = std::move(scan.points);
    b.stop_reason = scan.stop_reason;
    d.branches.push_back(std::move(b));
    for (BifurcationPoint& bp : scan.bifurcations) {
      bp.trivial_rank = t.rank;
      d.bifurcations.push_back(std::move(bp));
    }
  }
  for (std::size_t i = 0; i < d.bifurcations.size(); ++i) d.bifurcations[i].id = static_cast<int>(i);

  struct Job {
    std::size_t bif;
    int sign;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < d.bifurcations.size(); ++i)
    for (int sign : {1, -1}) jobs.push_back({i, sign});
  std::vector<SwitchResult> results(jobs.size());

  const int threads = detail::resolve_thread_count(settings.max_threads, jobs.size());
  auto work = [&](std::size_t first) {
    for (std::size_t j = first; j < jobs.size(); j += static_cast<std::size_t>(threads))
      results[j] = branch_switch_one(model, settings, d.bifurcations[jobs[j].bif], jobs[j].sign);
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work, static_cast<std::size_t>(t));
    for (auto& th : pool) th.join();
  }

  std::vector<Branch> offshoots;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    if (results[j].branch) {
      offshoots.push_back(std::move(*results[j].branch));
    } else {
      d.switch_failures.push_back({d.bifurcations[jobs[j].bif].id, jobs[j].sign, results[j].failure});
    }
  }
  for (Branch& b : offshoots) {
    const bool duplicate = std::any_of(d.branches.begin(), d.branches.end(), [&](const Branch& kept) {
      return kept.origin == BranchOrigin::switched && branches_coincide(model, settings, kept, b);
    });
    if (!duplicate) d.branches.push_back(std::move(b));
  }
  for (std::size_t i = 0; i < d.branches.size(); ++i) d.branches[i].id = static_cast<int>(i);
  return d;
}

}  // namespace phasebif
