#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "phasebif/cli.hpp"

using namespace phasebif;
using namespace phasebif::cli;

namespace {

struct CmdResult {
  int code = -1;
  std::string out, log;
};

CmdResult run_cmd(Command c, const CliOptions& o) {
  std::ostringstream out, log;
  CmdResult r;
  r.code = run(c, o, out, log);
  r.out = out.str();
  r.log = log.str();
  return r;
}

CliOptions ac(std::string range = "0.2:0.7") {
  CliOptions o;
  o.model = "ac";
  o.n_cells = 100;
  o.eps_range = std::move(range);
  return o;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

}  // namespace

// ---------------------------------------------------------------- config

TEST(Config, AllenCahnDefaults) {
  const RunConfig c = resolve_config(Command::trace, CliOptions{});
  EXPECT_EQ(c.model, ModelKind::allen_cahn);
  EXPECT_EQ(c.n_cells, 200);
  EXPECT_EQ(c.parameter, ParameterKind::epsilon);
  EXPECT_EQ(c.settings.param_min, 0.05);
  EXPECT_EQ(c.settings.param_max, 0.7);
  EXPECT_EQ(c.format, OutputFormat::csv);
  EXPECT_FALSE(c.settings.use_pseudo_arclength);
}

TEST(Config, AcokDefaults) {
  CliOptions o;
  o.model = "acok";
  const RunConfig c = resolve_config(Command::trace, o);
  EXPECT_EQ(c.parameter, ParameterKind::gamma);
  EXPECT_EQ(c.params.epsilon, 0.3);
  EXPECT_EQ(c.settings.param_min, 0.0);
  EXPECT_NEAR(c.settings.param_max, 3000.0, 1e-9);
  o.gamma_range = "0:2000";
  EXPECT_EQ(resolve_config(Command::trace, o).settings.param_max, 2000.0);
}

TEST(Config, VerifyDefaultsToJson) {
  EXPECT_EQ(resolve_config(Command::verify, CliOptions{}).format, OutputFormat::json);
  CliOptions o;
  o.format = "csv";
  EXPECT_EQ(resolve_config(Command::verify, o).format, OutputFormat::csv);
}

TEST(Config, GridBounds) {
  for (int n : {2, 7, 4098}) {
    CliOptions o;
    o.n_cells = n;
    EXPECT_THROW(resolve_config(Command::trace, o), UsageError) << n;
  }
  CliOptions o;
  o.n_cells = 4;
  EXPECT_NO_THROW(resolve_config(Command::trace, o));
}

TEST(Config, CrossModelFlagsRejected) {
  CliOptions o;
  o.mu0 = 0.1;
  EXPECT_THROW(resolve_config(Command::trace, o), UsageError);
  o = {};
  o.gamma_range = "0:10";
  EXPECT_THROW(resolve_config(Command::trace, o), UsageError);
  o = {};
  o.model = "acok";
  o.eps_range = "0.1:0.2";
  EXPECT_THROW(resolve_config(Command::trace, o), UsageError);
  o = {};
  o.phi0 = 1.0;
  EXPECT_THROW(resolve_config(Command::trace, o), UsageError);
  EXPECT_NO_THROW(resolve_config(Command::points, o));
}

TEST(Config, SliceLocation) {
  CliOptions o;
  EXPECT_THROW(resolve_config(Command::solutions, o), UsageError);
  o.epsilon = 0.1;
  EXPECT_EQ(*resolve_config(Command::solutions, o).at_param, 0.1);
  EXPECT_THROW(resolve_config(Command::trace, o), UsageError);
  o.epsilon = 0.9;
  EXPECT_THROW(resolve_config(Command::solutions, o), UsageError);
  o = {};
  o.model = "acok";
  o.gamma = 1000.0;
  EXPECT_EQ(*resolve_config(Command::solutions, o).at_param, 1000.0);
  o.gamma = -1.0;
  EXPECT_THROW(resolve_config(Command::solutions, o), UsageError);
}

TEST(Config, RangeParsing) {
  EXPECT_EQ(parse_range("0.05:0.7", "--eps-range"), std::make_pair(0.05, 0.7));
  EXPECT_EQ(parse_range("0:2000", "--gamma-range"), std::make_pair(0.0, 2000.0));
  for (const char* bad : {"0.7", "0.7:0.05", "a:b", "0.1:0.2x", ":", "0.1:inf"})
    EXPECT_THROW(parse_range(bad, "--eps-range"), UsageError) << bad;
  CliOptions o;
  o.eps_range = "0:0.5";
  EXPECT_THROW(resolve_config(Command::trace, o), UsageError);
}

TEST(Config, CahnHilliardWindow) {
  CliOptions o;
  o.model = "ch";
  o.mu0 = 0.05;
  EXPECT_NO_THROW(resolve_config(Command::trace, o));
  o.mu0 = 1.0;  // 1.0 * 0.49 > 0.385
  EXPECT_THROW(resolve_config(Command::trace, o), UsageError);
}

TEST(Config, StepAndTolerances) {
  CliOptions o;
  o.step = 0.05;
  const RunConfig c = resolve_config(Command::trace, o);
  EXPECT_EQ(c.settings.initial_step, 0.05);
  EXPECT_GE(c.settings.max_step, 0.05);
  o = {};
  o.step = -1.0;
  EXPECT_THROW(resolve_config(Command::trace, o), UsageError);
  o = {};
  o.newton_tol = 0.0;
  EXPECT_THROW(resolve_config(Command::trace, o), UsageError);
  o = {};
  o.dedupe_tol = 1e-6;
  o.seed_amplitude = 0.01;
  o.arclength = true;
  const RunConfig d = resolve_config(Command::trace, o);
  EXPECT_EQ(d.settings.dedupe_tol, 1e-6);
  EXPECT_EQ(d.settings.seed_amplitude, 0.01);
  EXPECT_TRUE(d.settings.use_pseudo_arclength);
}

TEST(Config, ThreadEnvironment) {
  CliOptions o;
  EXPECT_EQ(resolve_config(Command::trace, o).settings.max_threads, 0);
  o.threads_env = "3";
  EXPECT_EQ(resolve_config(Command::trace, o).settings.max_threads, 3);
  for (const char* bad : {"0", "-2", "two", "3x"}) {
    o.threads_env = bad;
    EXPECT_THROW(resolve_config(Command::trace, o), UsageError) << bad;
  }
}

TEST(Config, UnknownValues) {
  CliOptions o;
  o.model = "cahn";
  EXPECT_THROW(resolve_config(Command::trace, o), UsageError);
  o = {};
  o.format = "xml";
  EXPECT_THROW(resolve_config(Command::trace, o), UsageError);
  o = {};
  o.ghost_closure = "periodic";
  EXPECT_THROW(resolve_config(Command::trace, o), UsageError);
}

// ---------------------------------------------------------------- formatting

TEST(Format, SeventeenDigitsRoundTrip) {
  for (double v : {0.1, 2.0 / 3.0, 1e-300, -123456.789e10, 0.6366197723675814}) EXPECT_EQ(std::stod(fmt(v)), v);
  EXPECT_EQ(fmt(0.5), "0.5");
}

// ---------------------------------------------------------------- commands

TEST(Commands, UsageErrorExitCode) {
  CliOptions o;
  o.n_cells = 3;
  const CmdResult r = run_cmd(Command::trace, o);
  EXPECT_EQ(r.code, kUsageError);
  EXPECT_NE(r.log.find("error"), std::string::npos);
  EXPECT_TRUE(r.out.empty());
}

TEST(Commands, PointsIncludesFirstSineMode) {
  CliOptions o = ac();
  o.n_cells = 200;
  const CmdResult r = run_cmd(Command::points, o);
  ASSERT_EQ(r.code, kSuccess) << r.log;
  const auto ls = lines(r.out);
  ASSERT_FALSE(ls.empty());
  EXPECT_EQ(ls[0], "family,n,analytic_value,detected_value,relative_gap");
  bool found = false;
  for (const auto& l : ls) {
    if (l.rfind("sine,0,", 0) != 0) continue;
    found = true;
    std::istringstream is(l);
    std::string f, n, a, d, g;
    std::getline(is, f, ',');
    std::getline(is, n, ',');
    std::getline(is, a, ',');
    std::getline(is, d, ',');
    std::getline(is, g, ',');
    EXPECT_NEAR(std::stod(a), 0.636620, 1e-6);
    EXPECT_NEAR(std::stod(d), 0.6366, 1e-4);
    EXPECT_LE(std::stod(g), 1e-3);
  }
  EXPECT_TRUE(found);
}

TEST(Commands, PointsOnStableBranchIsEmpty) {
  CliOptions o = ac();
  o.phi0 = 1.0;
  const CmdResult r = run_cmd(Command::points, o);
  ASSERT_EQ(r.code, kSuccess);
  EXPECT_EQ(lines(r.out).size(), 1u);
  EXPECT_NE(r.log.find("no bifurcations on this branch"), std::string::npos);
  o.format = "json";
  const CmdResult j = run_cmd(Command::points, o);
  const json doc = json::parse(j.out);
  EXPECT_TRUE(doc["points"].empty());
  EXPECT_EQ(doc["note"], "no bifurcations on this branch");
}

TEST(Commands, PointsRejectsUnknownTrivialState) {
  CliOptions o = ac();
  o.phi0 = 0.3;
  EXPECT_EQ(run_cmd(Command::points, o).code, kUsageError);
}

TEST(Commands, TraceCsvLayout) {
  const CmdResult r = run_cmd(Command::trace, ac());
  ASSERT_EQ(r.code, kSuccess) << r.log;
  const auto ls = lines(r.out);
  ASSERT_GT(ls.size(), 10u);
  EXPECT_EQ(ls[0], "branch_id,param,phi_at_minus1,sup_norm,det_sign");
  for (std::size_t k = 1; k < ls.size(); ++k) {
    int commas = 0;
    for (char ch : ls[k]) commas += ch == ',';
    ASSERT_EQ(commas, 4) << ls[k];
  }
  EXPECT_NE(r.log.find("branches"), std::string::npos);
  EXPECT_NE(r.log.find("stop param_bound"), std::string::npos);
}

TEST(Commands, TraceJsonEmbedsConfig) {
  CliOptions o = ac();
  o.format = "json";
  const CmdResult r = run_cmd(Command::trace, o);
  ASSERT_EQ(r.code, kSuccess);
  const json doc = json::parse(r.out);
  EXPECT_EQ(doc["config"]["model"], "ac");
  EXPECT_EQ(doc["config"]["n_cells"], 100);
  EXPECT_EQ(doc["config"]["settings"]["param_min"], 0.2);
  // Three analytic values above 0.2: 2/pi, 1/pi, 2/(3 pi).
  EXPECT_EQ(doc["bifurcations"].size(), 3u);
  EXPECT_EQ(doc["branches"].size(), 3u + 6u);
}

TEST(Commands, ChAtZeroMuIsByteIdenticalToAc) {
  CliOptions a = ac();
  CliOptions c = ac();
  c.model = "ch";
  c.mu0 = 0.0;
  const CmdResult ra = run_cmd(Command::trace, a);
  const CmdResult rc = run_cmd(Command::trace, c);
  ASSERT_EQ(ra.code, kSuccess);
  ASSERT_EQ(rc.code, kSuccess);
  EXPECT_EQ(ra.out, rc.out);
}

TEST(Commands, SolutionsCount) {
  CliOptions o = ac("0.05:0.7");
  o.n_cells = 200;
  o.epsilon = 0.1;
  const CmdResult r = run_cmd(Command::solutions, o);
  ASSERT_EQ(r.code, kSuccess) << r.log;
  const auto ls = lines(r.out);
  EXPECT_EQ(ls.size(), 13u);
  EXPECT_EQ(ls[0].rfind("solution_id,branch_id,origin,param,residual_norm,phi_0,", 0), 0u);
  EXPECT_NE(r.log.find("12 solutions"), std::string::npos);

  o.epsilon = 0.7;
  const CmdResult none = run_cmd(Command::solutions, o);
  ASSERT_EQ(none.code, kSuccess);
  EXPECT_EQ(lines(none.out).size(), 1u);
}

TEST(Commands, OutFileWrittenAndUnwritablePathFails) {
  const auto path = std::filesystem::temp_directory_path() / "phasebif_cli_test.csv";
  CliOptions o = ac();
  o.out = path.string();
  const CmdResult r = run_cmd(Command::points, o);
  ASSERT_EQ(r.code, kSuccess);
  EXPECT_TRUE(r.out.empty());
  std::ifstream f(path);
  std::string header;
  std::getline(f, header);
  EXPECT_EQ(header, "family,n,analytic_value,detected_value,relative_gap");
  std::filesystem::remove(path);

  o.out = "/nonexistent-dir/x/y.csv";
  const CmdResult bad = run_cmd(Command::points, o);
  EXPECT_EQ(bad.code, kUsageError);
  EXPECT_NE(bad.log.find("cannot open"), std::string::npos);
}

TEST(Commands, VerifyDefaultAcPasses) {
  CliOptions o;
  const CmdResult r = run_cmd(Command::verify, o);
  EXPECT_EQ(r.code, kSuccess) << r.log << r.out;
  const json doc = json::parse(r.out);
  EXPECT_TRUE(doc["passed"].get<bool>());
  bool correlation = false;
  for (const auto& c : doc["checks"]) {
    if (c["name"] == "null_mode_correlation") {
      correlation = true;
      EXPECT_GE(c["measured"].get<double>(), 0.99);
    }
  }
  EXPECT_TRUE(correlation);
}

TEST(Commands, VerifyCatchesBrokenGhostClosure) {
  CliOptions o;
  o.ghost_closure = "copy";
  const CmdResult r = run_cmd(Command::verify, o);
  EXPECT_EQ(r.code, kVerificationFailure);
  const json doc = json::parse(r.out);
  bool jac = false, gap = false;
  for (const auto& c : doc["checks"]) {
    if (c["name"] == "jacobian_fd") jac = c["passed"].get<bool>();
    if (c["name"] == "bifurcation_gap" && !c["passed"].get<bool>()) {
      gap = true;
      EXPECT_GT(c["measured"].get<double>(), 1e-3);
    }
  }
  EXPECT_TRUE(jac);
  EXPECT_TRUE(gap);
}
