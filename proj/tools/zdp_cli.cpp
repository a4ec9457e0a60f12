// zdp: train, simulate and evaluate zero dynamics policies for the hopper.

#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

namespace {

void add_common(CLI::App* cmd, zdp::cli::CommonOptions& o) {
  cmd->add_option("--config", o.config, "JSON run configuration");
  cmd->add_option("--seed", o.seed, "override the configured seed");
  cmd->add_option("--jobs", o.jobs, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
}

}  // namespace

int main(int argc, char** argv) {
  using namespace zdp::cli;
  CLI::App app{"Zero dynamics policy training and evaluation for a 3D hopper"};
  app.require_subcommand(1);

  TrainOptions train;
  auto* t = app.add_subcommand("train", "pretrain on the Raibert heuristic, then train for invariance");
  add_common(t, train.common);
  t->add_option("--out", train.out, "output weights file")->required();
  t->add_option("--log", train.log, "training log CSV");
  t->add_option("--save-pretrained", train.save_pretrained, "also write the pretrained weights");
  t->add_flag("--no-pretrain", train.no_pretrain, "start from the random initialization");
  t->add_flag("--timing", train.timing, "record wall time in the log (not reproducible)");

  SimulateOptions sim;
  auto* s = app.add_subcommand("simulate", "closed-loop rollout on the full hybrid model");
  add_common(s, sim.common);
  s->add_option("--weights", sim.weights, "policy weights");
  s->add_flag("--raibert", sim.raibert, "use the Raibert heuristic instead of a network");
  s->add_option("--x0", sim.x0, "initial px,py,vx,vy")->delimiter(',')->expected(4);
  s->add_option("--hops", sim.hops, "number of hops");
  s->add_option("--disturb", sim.disturb, "velocity impulse hop:vx:vy (repeatable)");
  s->add_option("--log", sim.log, "hop log CSV")->required();

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "run the evaluation suites and check thresholds");
  add_common(e, ev.common);
  e->add_option("--weights", ev.weights, "policy weights");
  e->add_flag("--raibert", ev.raibert, "evaluate the Raibert heuristic");
  e->add_option("--suite", ev.suite,
                "comma list of all, residual, agreement, decay, disturbance, square, optimality");
  e->add_option("--out", ev.out, "report directory")->required();

  WaypointOptions wp;
  auto* w = app.add_subcommand("waypoints", "track a waypoint sequence");
  add_common(w, wp.common);
  w->add_option("--weights", wp.weights, "policy weights");
  w->add_flag("--raibert", wp.raibert, "use the Raibert heuristic instead of a network");
  w->add_option("--waypoints", wp.waypoints, "CSV px,py,vx_ref,vy_ref,hops")->required();
  w->add_option("--log", wp.log, "hop log CSV")->required();
  w->add_option("--track", wp.track, "absolute position track CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kOk : kUsageError;
  }

  if (*t) return cmd_train(train);
  if (*s) return cmd_simulate(sim);
  if (*e) return cmd_eval(ev);
  return cmd_waypoints(wp);
}
