// phasebif: bifurcation diagrams and multiple steady states of 1-D
// phase-field equations.

#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "phasebif/cli.hpp"

namespace {

void add_common(CLI::App* app, phasebif::cli::CliOptions& o) {
  app->add_option("--model", o.model, "Model: ac, ch or acok")->check(CLI::IsMember({"ac", "ch", "acok"}));
  app->add_option("--n-cells,--n", o.n_cells, "Number of grid cells (even, 4..4096)");
  app->add_option("--epsilon", o.epsilon, "Interface width (acok), or slice location for ac/ch solutions");
  app->add_option("--mu0", o.mu0, "Cahn-Hilliard chemical potential");
  app->add_option("--gamma", o.gamma, "Slice location for acok solutions");
  app->add_option("--eps-range", o.eps_range, "Epsilon continuation range a:b (ac, ch)");
  app->add_option("--gamma-range", o.gamma_range, "Gamma continuation range a:b (acok)");
  app->add_option("--step", o.step, "Initial continuation step");
  app->add_option("--newton-tol", o.newton_tol, "Newton residual tolerance (max-norm)");
  app->add_flag("--arclength", o.arclength, "Use pseudo-arclength continuation");
  app->add_option("--format", o.format, "Output format: csv or json")->check(CLI::IsMember({"csv", "json"}));
  app->add_option("--out", o.out, "Output file (default: stdout)");
  app->add_option("--seed-amplitude", o.seed_amplitude, "Branch-switch seed amplitude");
  app->add_option("--dedupe-tol", o.dedupe_tol, "Max-norm distance under which states coincide");
  app->add_option("--ghost-closure", o.ghost_closure, "Boundary ghost closure: mirror or copy (test hook)")
      ->check(CLI::IsMember({"mirror", "copy"}));
}

}  // namespace

int main(int argc, char** argv) {
  using namespace phasebif::cli;
  CLI::App app{"Bifurcation diagrams and steady states of 1-D phase-field equations"};
  app.require_subcommand(1);

  CliOptions options;
  if (const char* env = std::getenv("PHASE_BIFURCATE_THREADS")) options.threads_env = std::string(env);

  CLI::App* points = app.add_subcommand("points", "List analytic and detected bifurcation points");
  CLI::App* trace = app.add_subcommand("trace", "Compute the bifurcation diagram");
  CLI::App* solutions = app.add_subcommand("solutions", "Enumerate nontrivial steady states at one parameter");
  CLI::App* verify = app.add_subcommand("verify", "Run the invariant and oracle checks");
  for (CLI::App* sub : {points, trace, solutions, verify}) add_common(sub, options);
  points->add_option("--phi0", options.phi0, "Trivial branch to scan (default: the bifurcating one)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kSuccess : kUsageError;
  }

  Command command = Command::trace;
  if (points->parsed()) command = Command::points;
  if (solutions->parsed()) command = Command::solutions;
  if (verify->parsed()) command = Command::verify;
  return run(command, options, std::cout, std::cerr);
}
