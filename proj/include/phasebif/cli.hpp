#pragma once

// Command implementations behind the `phasebif` executable. Argument parsing
// lives in tools/; everything here works on a resolved RunConfig and writes
// to caller-supplied streams, so the commands are testable in-process.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "phasebif/analysis.hpp"
#include "phasebif/continuation.hpp"
#include "phasebif/models.hpp"
#include "phasebif/verify.hpp"

namespace phasebif::cli {

using json = nlohmann::ordered_json;

enum ExitCode : int { kSuccess = 0, kUsageError = 1, kNumericalFailure = 2, kVerificationFailure = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Command { points, trace, solutions, verify };
enum class OutputFormat { csv, json };

inline std::string to_string(Command c) {
  switch (c) {
    case Command::points: return "points";
    case Command::trace: return "trace";
    case Command::solutions: return "solutions";
    case Command::verify: return "verify";
  }
  return "?";
}

/// Flags as given on the command line; unset values take model defaults.
struct CliOptions {
  std::string model = "ac";
  int n_cells = 200;
  std::optional<double> epsilon, mu0, gamma;
  std::optional<std::string> eps_range, gamma_range;
  std::optional<double> step, newton_tol, seed_amplitude, dedupe_tol, phi0;
  bool arclength = false;
  std::string format;  // empty: csv, or json for verify
  std::string out;
  std::string ghost_closure = "mirror";
  std::optional<std::string> threads_env;
};

struct RunConfig {
  Command command = Command::trace;
  ModelKind model = ModelKind::allen_cahn;
  int n_cells = 200;
  GhostClosure closure = GhostClosure::mirror;
  ModelParams params;
  ParameterKind parameter = ParameterKind::epsilon;
  std::optional<double> at_param;
  std::optional<double> phi0;
  ContinuationSettings settings;
  OutputFormat format = OutputFormat::csv;
  std::string out;
};

inline std::pair<double, double> parse_range(const std::string& text, const std::string& flag) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw UsageError(flag + " expects a:b");
  try {
    std::size_t used_a = 0, used_b = 0;
    const std::string a = text.substr(0, colon), b = text.substr(colon + 1);
    const double lo = std::stod(a, &used_a);
    const double hi = std::stod(b, &used_b);
    if (used_a != a.size() || used_b != b.size()) throw std::invalid_argument("trailing text");
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) throw UsageError(flag + " needs finite a < b");
    return {lo, hi};
  } catch (const std::logic_error&) {
    throw UsageError(flag + " expects two numbers a:b, got '" + text + "'");
  }
}

inline ModelKind parse_model(const std::string& s) {
  if (s == "ac") return ModelKind::allen_cahn;
  if (s == "ch") return ModelKind::cahn_hilliard;
  if (s == "acok") return ModelKind::ohta_kawasaki;
  throw UsageError("--model must be ac, ch or acok");
}

/// Applies defaults and cross-flag rules. Throws UsageError on bad input.
inline RunConfig resolve_config(Command command, const CliOptions& o) {
  RunConfig c;
  c.command = command;
  c.model = parse_model(o.model);
  if (o.n_cells < 4 || o.n_cells > 4096 || o.n_cells % 2 != 0)
    throw UsageError("--n-cells must be even and in [4, 4096]");
  c.n_cells = o.n_cells;
  if (o.ghost_closure == "mirror") {
    c.closure = GhostClosure::mirror;
  } else if (o.ghost_closure == "copy") {
    c.closure = GhostClosure::copy_edge;
  } else {
    throw UsageError("--ghost-closure must be mirror or copy");
  }

  const bool acok = c.model == ModelKind::ohta_kawasaki;
  if (o.mu0 && c.model != ModelKind::cahn_hilliard) throw UsageError("--mu0 applies to --model ch only");
  if (o.eps_range && acok) throw UsageError("--eps-range applies to ac and ch; use --gamma-range for acok");
  if (o.gamma_range && !acok) throw UsageError("--gamma-range applies to --model acok only");
  if (o.phi0 && command != Command::points) throw UsageError("--phi0 applies to the points command only");

  ContinuationSettings& s = c.settings;
  if (acok) {
    c.parameter = ParameterKind::gamma;
    c.params.epsilon = o.epsilon.value_or(0.3);
    if (!(c.params.epsilon > 0.0)) throw UsageError("--epsilon must be positive");
    s.param_min = 0.0;
    s.param_max = acok_gamma_ceiling(c.params.epsilon);
    s.initial_step = 5.0;
    s.max_step = 10.0;
    s.min_step = 1e-6;
    if (o.gamma_range) std::tie(s.param_min, s.param_max) = parse_range(*o.gamma_range, "--gamma-range");
    if (s.param_min < 0.0) throw UsageError("--gamma-range must lie in gamma >= 0");
    if (o.gamma) {
      if (command != Command::solutions) throw UsageError("--gamma is the slice location of the solutions command");
      c.at_param = *o.gamma;
    }
  } else {
    c.parameter = ParameterKind::epsilon;
    c.params.mu0 = o.mu0.value_or(0.0);
    s.param_min = 0.05;
    s.param_max = 0.7;
    s.initial_step = 1e-3;
    s.max_step = 1e-2;
    s.min_step = 1e-8;
    if (o.eps_range) std::tie(s.param_min, s.param_max) = parse_range(*o.eps_range, "--eps-range");
    if (!(s.param_min > 0.0)) throw UsageError("--eps-range must lie in epsilon > 0");
    if (o.gamma) throw UsageError("--gamma applies to --model acok only");
    if (o.epsilon) {
      if (command != Command::solutions)
        throw UsageError("epsilon is the continuation parameter here; use --eps-range");
      c.at_param = *o.epsilon;
    }
    c.params.epsilon = c.at_param.value_or(s.param_min);
  }
  if (command == Command::solutions) {
    if (!c.at_param) throw UsageError(acok ? "solutions needs --gamma" : "solutions needs --epsilon");
    if (*c.at_param < s.param_min || *c.at_param > s.param_max)
      throw UsageError("slice parameter lies outside the continuation range");
  }
  if (c.model == ModelKind::cahn_hilliard &&
      std::abs(c.params.mu0) * s.param_max * s.param_max >= kCubicWindow)
    throw UsageError("|mu0| eps^2 must stay below 2/(3 sqrt 3) over the range");

  if (o.step) {
    if (!(*o.step > 0.0)) throw UsageError("--step must be positive");
    s.initial_step = *o.step;
    s.max_step = std::max(s.max_step, *o.step);
    s.min_step = std::min(s.min_step, *o.step);
  }
  if (o.newton_tol) {
    if (!(*o.newton_tol > 0.0)) throw UsageError("--newton-tol must be positive");
    s.newton_tol = *o.newton_tol;
  }
  if (o.seed_amplitude) {
    if (!(*o.seed_amplitude > 0.0)) throw UsageError("--seed-amplitude must be positive");
    s.seed_amplitude = *o.seed_amplitude;
  }
  if (o.dedupe_tol) {
    if (!(*o.dedupe_tol > 0.0)) throw UsageError("--dedupe-tol must be positive");
    s.dedupe_tol = *o.dedupe_tol;
  }
  s.use_pseudo_arclength = o.arclength;
  s.max_threads = 0;
  if (o.threads_env && !o.threads_env->empty()) {
    try {
      std::size_t used = 0;
      const int t = std::stoi(*o.threads_env, &used);
      if (used != o.threads_env->size() || t < 1) throw std::invalid_argument("bad");
      s.max_threads = t;
    } catch (const std::logic_error&) {
      throw UsageError("PHASE_BIFURCATE_THREADS must be a positive integer");
    }
  }
  c.phi0 = o.phi0;

  if (o.format.empty()) {
    c.format = command == Command::verify ? OutputFormat::json : OutputFormat::csv;
  } else if (o.format == "csv") {
    c.format = OutputFormat::csv;
  } else if (o.format == "json") {
    c.format = OutputFormat::json;
  } else {
    throw UsageError("--format must be csv or json");
  }
  c.out = o.out;
  try {
    s.validate();
    c.params.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Formatting
// ---------------------------------------------------------------------------

/// 17 significant digits, enough to round-trip a double.
inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json config_json(const RunConfig& c) {
  const ContinuationSettings& s = c.settings;
  json j;
  j["command"] = to_string(c.command);
  j["model"] = to_string(c.model);
  j["n_cells"] = c.n_cells;
  j["ghost_closure"] = to_string(c.closure);
  j["parameter"] = to_string(c.parameter);
  j["params"] = {{"epsilon", c.params.epsilon}, {"mu0", c.params.mu0}, {"gamma", c.params.gamma}};
  j["at_param"] = c.at_param ? json(*c.at_param) : json(nullptr);
  j["phi0"] = c.phi0 ? json(*c.phi0) : json(nullptr);
  j["settings"] = {{"initial_step", s.initial_step},
                   {"min_step", s.min_step},
                   {"max_step", s.max_step},
                   {"newton_tol", s.newton_tol},
                   {"max_newton_iters", s.max_newton_iters},
                   {"max_branch_points", s.max_branch_points},
                   {"param_min", s.param_min},
                   {"param_max", s.param_max},
                   {"use_pseudo_arclength", s.use_pseudo_arclength},
                   {"dedupe_tol", s.dedupe_tol},
                   {"seed_amplitude", s.seed_amplitude},
                   {"trivial_tol", s.trivial_tol},
                   {"param_scale", s.metric_scale()},
                   {"max_threads", s.max_threads}};
  j["format"] = c.format == OutputFormat::csv ? "csv" : "json";
  j["out"] = c.out;
  return j;
}

inline std::string origin_label(const Branch& b) {
  if (b.origin == BranchOrigin::trivial) return "trivial" + std::to_string(b.trivial_rank);
  return "bif" + std::to_string(b.bifurcation_id) + (b.sign > 0 ? "+" : "-");
}

inline void write_diagram_csv(const Diagram& d, std::ostream& os) {
  os << "branch_id,param,phi_at_minus1,sup_norm,det_sign\n";
  for (const Branch& b : d.branches)
    for (const BranchPoint& p : b.points)
      os << b.id << ',' << fmt(p.param) << ',' << fmt(p.state.front()) << ',' << fmt(max_norm(p.state)) << ','
         << p.det_sign << '\n';
}

inline json bifurcation_json(const BifurcationPoint& b) {
  return {{"id", b.id},
          {"trivial_rank", b.trivial_rank},
          {"param", b.param},
          {"bracket_width", b.bracket_width},
          {"base_value", b.base_state.empty() ? 0.0 : b.base_state.front()},
          {"mode_family", to_string(b.mode_family)},
          {"mode_index", b.mode_index >= 0 ? json(b.mode_index) : json(nullptr)},
          {"mode_correlation", b.mode_correlation},
          {"eigen_estimate", b.eigen_estimate},
          {"source", b.source == DetectionSource::detected ? "detected" : "analytic"}};
}

inline json diagram_json(const Diagram& d, const RunConfig& c) {
  json j;
  j["config"] = config_json(c);
  j["bifurcations"] = json::array();
  for (const BifurcationPoint& b : d.bifurcations) j["bifurcations"].push_back(bifurcation_json(b));
  j["branches"] = json::array();
  for (const Branch& b : d.branches) {
    json jb;
    jb["id"] = b.id;
    jb["origin"] = origin_label(b);
    jb["trivial_rank"] = b.trivial_rank >= 0 ? json(b.trivial_rank) : json(nullptr);
    jb["bifurcation_id"] = b.bifurcation_id >= 0 ? json(b.bifurcation_id) : json(nullptr);
    jb["sign"] = b.sign;
    jb["stop_reason"] = b.stop_reason;
    jb["points"] = json::array();
    for (const BranchPoint& p : b.points)
      jb["points"].push_back({{"param", p.param},
                              {"phi_at_minus1", p.state.front()},
                              {"sup_norm", max_norm(p.state)},
                              {"det_sign", p.det_sign},
                              {"residual_norm", p.residual_norm}});
    j["branches"].push_back(std::move(jb));
  }
  j["switch_failures"] = json::array();
  for (const SwitchFailure& f : d.switch_failures)
    j["switch_failures"].push_back({{"bifurcation_id", f.bifurcation_id}, {"sign", f.sign}, {"reason", f.reason}});
  return j;
}

// ---------------------------------------------------------------------------
// Model dispatch
// ---------------------------------------------------------------------------

template <class F>
decltype(auto) with_model(const RunConfig& c, F&& f) {
  const GridSpec grid(c.n_cells, c.closure);
  switch (c.model) {
    case ModelKind::allen_cahn: return f(AllenCahnModel(grid, c.params));
    case ModelKind::cahn_hilliard: return f(CahnHilliardModel(grid, c.params, ParameterKind::epsilon));
    case ModelKind::ohta_kawasaki: return f(OhtaKawasakiModel(grid, c.params));
  }
  throw UsageError("unknown model");
}

/// Writes `text` to the configured path or to `out`.
inline void emit(const RunConfig& c, const std::string& text, std::ostream& out) {
  if (c.out.empty()) {
    out << text;
    return;
  }
  std::ofstream f(c.out, std::ios::binary);
  if (!f) throw std::ios_base::failure("cannot open output file '" + c.out + "'");
  f << text;
  if (!f.flush()) throw std::ios_base::failure("failed writing output file '" + c.out + "'");
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct PointRow {
  std::string family;
  int n = -1;
  double analytic = std::numeric_limits<double>::quiet_NaN();
  double detected = std::numeric_limits<double>::quiet_NaN();
  double relative_gap = std::numeric_limits<double>::quiet_NaN();
};

inline std::vector<PointRow> compute_points(const RunConfig& c, std::string& note) {
  return with_model(c, [&](const auto& model) {
    const ContinuationSettings& s = c.settings;
    auto states = trivial_set(model, s.param_min);
    if (!states) throw UsageError("trivial states are undefined at the start of the range");
    int rank = -1;
    bool bifurcating = false;
    for (const TrivialState& t : *states) {
      if (c.phi0 ? std::abs(t.value - *c.phi0) <= 1e-9 : t.bifurcating) {
        rank = t.rank;
        bifurcating = t.bifurcating;
      }
    }
    if (rank < 0) throw UsageError("--phi0 does not name a trivial state of this model");

    const auto detected =
        detect_bifurcations_on_trivial(model, s, trivial_state_by_rank(model, rank), s.param_min, s.param_max);
    std::vector<PointRow> rows;
    std::vector<ModeGap> gaps;
    if (bifurcating) {
      gaps = pair_with_analytic(model.kind(), model.params(), detected, s.param_min, s.param_max);
    } else {
      for (const BifurcationPoint& b : detected) {
        ModeGap g;
        g.family = b.mode_family;
        g.index = b.mode_index;
        g.detected = b.param;
        gaps.push_back(g);
      }
    }
    for (const ModeGap& g : gaps)
      rows.push_back({to_string(g.family), g.index, g.analytic, g.detected, g.relative_gap});
    if (rows.empty()) note = "no bifurcations on this branch";
    return rows;
  });
}

inline int cmd_points(const RunConfig& c, std::ostream& out, std::ostream& log) {
  std::string note;
  const std::vector<PointRow> rows = compute_points(c, note);
  std::ostringstream text;
  if (c.format == OutputFormat::csv) {
    text << "family,n,analytic_value,detected_value,relative_gap\n";
    for (const PointRow& r : rows) {
      text << r.family << ',' << (r.n >= 0 ? std::to_string(r.n) : "") << ','
           << (std::isfinite(r.analytic) ? fmt(r.analytic) : "") << ','
           << (std::isfinite(r.detected) ? fmt(r.detected) : "") << ','
           << (std::isfinite(r.relative_gap) ? fmt(r.relative_gap) : "") << '\n';
    }
  } else {
    json j;
    j["config"] = config_json(c);
    j["note"] = note;
    j["points"] = json::array();
    for (const PointRow& r : rows)
      j["points"].push_back({{"family", r.family},
                             {"n", r.n >= 0 ? json(r.n) : json(nullptr)},
                             {"analytic_value", nullable(r.analytic)},
                             {"detected_value", nullable(r.detected)},
                             {"relative_gap", nullable(r.relative_gap)}});
    text << j.dump(2) << '\n';
  }
  emit(c, text.str(), out);
  if (!note.empty()) log << note << '\n';
  log << rows.size() << " bifurcation points\n";
  return kSuccess;
}

inline Diagram compute_config_diagram(const RunConfig& c) {
  return with_model(c, [&](const auto& model) { return compute_diagram(model, c.settings); });
}

inline int cmd_trace(const RunConfig& c, std::ostream& out, std::ostream& log) {
  const Diagram d = compute_config_diagram(c);
  std::ostringstream text;
  if (c.format == OutputFormat::csv) {
    write_diagram_csv(d, text);
  } else {
    text << diagram_json(d, c).dump(2) << '\n';
  }
  emit(c, text.str(), out);

  log << d.branches.size() << " branches, " << d.bifurcations.size() << " bifurcation points\n";
  std::map<std::string, int> reasons;
  for (const Branch& b : d.branches) ++reasons[b.stop_reason];
  for (const auto& [reason, count] : reasons) log << "  stop " << reason << ": " << count << '\n';
  for (const SwitchFailure& f : d.switch_failures)
    log << "  switch failed at bifurcation " << f.bifurcation_id << (f.sign > 0 ? "+" : "-") << ": " << f.reason
        << '\n';
  return kSuccess;
}

inline std::vector<Solution> compute_config_solutions(const RunConfig& c, const Diagram& d) {
  return with_model(c, [&](const auto& model) { return solutions_at(d, *c.at_param, model, c.settings); });
}

inline int cmd_solutions(const RunConfig& c, std::ostream& out, std::ostream& log) {
  const Diagram d = compute_config_diagram(c);
  const std::vector<Solution> sols = compute_config_solutions(c, d);
  auto origin_of = [&d](int id) {
    for (const Branch& b : d.branches)
      if (b.id == id) return origin_label(b);
    return std::string("?");
  };

  std::ostringstream text;
  if (c.format == OutputFormat::csv) {
    text << "solution_id,branch_id,origin,param,residual_norm";
    for (int i = 0; i <= c.n_cells; ++i) text << ",phi_" << i;
    text << '\n';
    for (std::size_t k = 0; k < sols.size(); ++k) {
      const Solution& s = sols[k];
      text << k << ',' << s.branch_id << ',' << origin_of(s.branch_id) << ',' << fmt(s.param) << ','
           << fmt(s.residual_norm);
      for (double v : s.state) text << ',' << fmt(v);
      text << '\n';
    }
  } else {
    json j;
    j["config"] = config_json(c);
    j["param"] = *c.at_param;
    j["count"] = sols.size();
    j["solutions"] = json::array();
    for (std::size_t k = 0; k < sols.size(); ++k)
      j["solutions"].push_back({{"solution_id", k},
                                {"branch_id", sols[k].branch_id},
                                {"origin", origin_of(sols[k].branch_id)},
                                {"param", sols[k].param},
                                {"residual_norm", sols[k].residual_norm},
                                {"state", sols[k].state}});
    text << j.dump(2) << '\n';
  }
  emit(c, text.str(), out);
  log << sols.size() << " solutions at " << to_string(c.parameter) << " = " << fmt(*c.at_param) << '\n';
  return kSuccess;
}

inline VerifyReport compute_verify_report(const RunConfig& c) {
  return with_model(c, [&](const auto& model) {
    using Model = std::decay_t<decltype(model)>;
    auto build = [&c](const GridSpec& g) {
      if constexpr (std::is_same_v<Model, CahnHilliardModel>) {
        return Model(g, c.params, ParameterKind::epsilon);
      } else {
        return Model(g, c.params);
      }
    };
    return verify_model(model, c.settings, build);
  });
}

inline int cmd_verify(const RunConfig& c, std::ostream& out, std::ostream& log) {
  const VerifyReport r = compute_verify_report(c);
  std::ostringstream text;
  if (c.format == OutputFormat::json) {
    json j;
    j["config"] = config_json(c);
    j["passed"] = r.passed();
    j["checks"] = json::array();
    for (const CheckResult& k : r.checks)
      j["checks"].push_back({{"name", k.name},
                             {"measured", nullable(k.measured)},
                             {"tolerance", k.tolerance},
                             {"comparison", k.at_least ? ">=" : "<="},
                             {"passed", k.passed},
                             {"detail", k.detail}});
    text << j.dump(2) << '\n';
  } else {
    text << "name,measured,comparison,tolerance,passed\n";
    for (const CheckResult& k : r.checks)
      text << k.name << ',' << fmt(k.measured) << ',' << (k.at_least ? ">=" : "<=") << ',' << fmt(k.tolerance)
           << ',' << (k.passed ? "true" : "false") << '\n';
  }
  emit(c, text.str(), out);
  for (const CheckResult& k : r.checks)
    if (!k.passed) log << "FAILED " << k.name << ": " << fmt(k.measured) << " vs " << fmt(k.tolerance) << '\n';
  log << (r.passed() ? "all checks passed" : "verification failed") << '\n';
  return r.passed() ? kSuccess : kVerificationFailure;
}

/// Runs a command and maps failures onto the exit-code contract.
inline int run(Command command, const CliOptions& options, std::ostream& out, std::ostream& log) {
  RunConfig c;
  try {
    c = resolve_config(command, options);
  } catch (const UsageError& e) {
    log << "error: " << e.what() << '\n';
    return kUsageError;
  }
  try {
    switch (command) {
      case Command::points: return cmd_points(c, out, log);
      case Command::trace: return cmd_trace(c, out, log);
      case Command::solutions: return cmd_solutions(c, out, log);
      case Command::verify: return cmd_verify(c, out, log);
    }
  } catch (const UsageError& e) {
    log << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::ios_base::failure& e) {
    log << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    log << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  }
  return kUsageError;
}

}  // namespace phasebif::cli
