#include "commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "zdp/config.hpp"
#include "zdp/errors.hpp"
#include "zdp/eval.hpp"
#include "zdp/experiments.hpp"
#include "zdp/hoplog.hpp"
#include "zdp/model.hpp"
#include "zdp/policy.hpp"
#include "zdp/training.hpp"

namespace zdp::cli {
namespace {

namespace fs = std::filesystem;
using io::format_number;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::kConfig ? kUsageError : kRuntimeFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
}

config::RunConfig load(const CommonOptions& o) {
  config::RunConfig c;
  if (!o.config.empty()) {
    if (!fs::exists(o.config)) throw UsageError("config file not found: " + o.config);
    c = config::load_config(o.config);
  }
  if (o.seed) c.seed = *o.seed;
  if (o.jobs) c.jobs = *o.jobs;
  return c;
}

std::ofstream open_out(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw UsageError("cannot write " + path);
  return out;
}

eval::LeanPolicy make_policy(const std::string& weights, bool raibert,
                             const config::RunConfig& c) {
  if (raibert) {
    if (!weights.empty()) throw UsageError("--weights and --raibert are exclusive");
    return eval::raibert_policy(c.raibert, c.hopper, c.box);
  }
  if (weights.empty()) throw UsageError("either --weights or --raibert is required");
  if (!fs::exists(weights)) throw UsageError("weights file not found: " + weights);
  policy::PolicyFile f = policy::load_weights(weights, hopper::kZDim, hopper::kInputDim);
  return eval::network_policy(std::move(f.params), std::move(f.box));
}

eval::RolloutConfig rollout_config(const config::RunConfig& c) {
  eval::RolloutConfig r;
  r.hopper = c.hopper;
  r.flight = c.flight;
  r.cost = c.cost();
  return r;
}

eval::Disturbance parse_disturbance(const std::string& s) {
  std::stringstream ss(s);
  std::string a, b, d;
  if (!std::getline(ss, a, ':') || !std::getline(ss, b, ':') || !std::getline(ss, d) ||
      !ss.eof()) {
    throw UsageError("--disturb expects hop:vx:vy, got " + s);
  }
  try {
    eval::Disturbance out;
    out.hop = std::stoi(a);
    out.dv = hopper::Vec2(std::stod(b), std::stod(d));
    if (out.hop < 0) throw std::invalid_argument("hop");
    return out;
  } catch (const std::logic_error&) {
    throw UsageError("--disturb expects hop:vx:vy, got " + s);
  }
}

struct Check {
  std::string name;
  double value;
  double threshold;
  bool pass;
};

std::string verdict(bool pass) { return pass ? "PASS" : "FAIL"; }

}  // namespace

// ------------------------------------------------------------ train

int cmd_train(const TrainOptions& o) {
  return guarded([&] {
    if (o.common.config.empty()) throw UsageError("--config is required");
    const config::RunConfig c = load(o.common);
    const model::HopperModel model = c.make_model();

    policy::PolicyParams params =
        policy::PolicyParams::he_uniform(hopper::kZDim, c.hidden, hopper::kInputDim, c.seed);
    if (!o.no_pretrain) {
      policy::PretrainOptions p = c.pretrain;
      p.seed = c.seed + 1;
      params = policy::pretrain(params, c.raibert, c.hopper, c.box, {c.z_lower, c.z_upper}, p);
      std::cerr << "pretrained on the Raibert heuristic (" << p.steps << " steps)\n";
      if (!o.save_pretrained.empty()) {
        policy::save_weights(o.save_pretrained, params, model.output_box());
      }
    }

    std::ofstream log;
    if (!o.log.empty()) {
      log = open_out(o.log);
      training::write_train_log_header(log);
    }
    if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
    training::TrainConfig tc = c.train();
    if (tc.checkpoint_every > 0) fs::create_directories(tc.checkpoint_dir);

    const auto on_record = [&](const training::TrainRecord& r) {
      if (log.is_open()) training::write_train_log_row(log, r, o.timing);
      if (r.step % 50 == 0 || r.step + 1 == tc.num_steps) {
        std::cerr << "step " << r.step << " loss " << format_number(r.loss) << " skipped "
                  << r.skipped << '\n';
      }
    };
    const training::TrainResult result = training::train(tc, params, model, on_record);
    policy::save_weights(o.out, result.params, model.output_box());
    if (!result.records.empty()) {
      std::cerr << "loss " << format_number(result.records.front().loss) << " -> "
                << format_number(result.records.back().loss) << '\n';
    }
    return kOk;
  });
}

// ------------------------------------------------------------ simulate

int cmd_simulate(const SimulateOptions& o) {
  return guarded([&] {
    const config::RunConfig c = load(o.common);
    const eval::LeanPolicy policy = make_policy(o.weights, o.raibert, c);
    hopper::Vec4 z0 = hopper::Vec4::Zero();
    if (!o.x0.empty()) {
      if (o.x0.size() != 4) throw UsageError("--x0 expects px,py,vx,vy");
      z0 = hopper::Vec4(o.x0[0], o.x0[1], o.x0[2], o.x0[3]);
    }
    std::vector<eval::Disturbance> disturbances;
    for (const auto& d : o.disturb) disturbances.push_back(parse_disturbance(d));
    const int hops = o.hops.value_or(c.eval.hops);
    if (hops < 1) throw UsageError("--hops must be positive");

    std::ofstream out = open_out(o.log);
    const auto logs = eval::rollout(policy, eval::pre_impact_state(z0, c.hopper), hops,
                                    rollout_config(c), disturbances);
    io::write_hoplog(out, logs);
    return kOk;
  });
}

// ------------------------------------------------------------ eval

int cmd_eval(const EvalOptions& o) {
  return guarded([&] {
    const config::RunConfig c = load(o.common);
    const eval::LeanPolicy policy = make_policy(o.weights, o.raibert, c);
    const eval::LeanPolicy baseline = eval::raibert_policy(c.raibert, c.hopper, c.box);
    const model::HopperModel model = c.make_model();
    const eval::RolloutConfig rc = rollout_config(c);
    const training::SolveConfig solve = c.solve();

    std::set<std::string> suites;
    {
      std::stringstream ss(o.suite);
      std::string s;
      while (std::getline(ss, s, ',')) suites.insert(s);
    }
    const std::set<std::string> known = {"all",   "residual",    "agreement", "decay",
                                         "disturbance", "square", "optimality"};
    for (const auto& s : suites)
      if (!known.count(s)) throw UsageError("unknown suite " + s);
    auto want = [&](const char* s) { return suites.count("all") || suites.count(s); };

    fs::create_directories(o.out);
    const fs::path dir(o.out);
    std::ostringstream report;
    std::vector<Check> checks;
    report << "policy: " << (o.raibert ? std::string("raibert") : o.weights) << '\n';

    if (want("residual")) {
      std::mt19937_64 rng(c.eval.holdout_seed);
      const auto samples =
          training::sample_batch(c.z_lower, c.z_upper, c.eval.holdout_samples, rng);
      const auto trained = eval::invariance_residual(eval::as_manifold_map(policy), samples, model, solve);
      const auto base = eval::invariance_residual(eval::as_manifold_map(baseline), samples, model, solve);
      const double ratio = base.mean > 0.0 ? trained.mean / base.mean : 0.0;
      report << "[residual] samples " << trained.samples << " skipped " << trained.skipped
             << "\n  policy  mean " << format_number(trained.mean) << " median "
             << format_number(trained.median) << " q90 " << format_number(trained.q90) << " q99 "
             << format_number(trained.q99) << " max " << format_number(trained.max)
             << "\n  raibert mean " << format_number(base.mean) << " max "
             << format_number(base.max) << "\n  ratio " << format_number(ratio) << '\n';
      checks.push_back({"residual_ratio", ratio, c.eval.max_residual_ratio,
                        ratio <= c.eval.max_residual_ratio});
    }

    if (want("agreement")) {
      const auto a = eval::lqr_agreement(eval::as_manifold_map(policy), model,
                                         c.eval.agreement_radius, c.eval.agreement_grid);
      const auto b = eval::lqr_agreement(eval::as_manifold_map(baseline), model,
                                         c.eval.agreement_radius, c.eval.agreement_grid);
      report << "[agreement] radius " << format_number(c.eval.agreement_radius) << " points "
             << a.points.size() << "\n  policy  max " << format_number(a.max_deviation)
             << " at origin " << format_number(a.at_origin) << "\n  raibert max "
             << format_number(b.max_deviation) << '\n';
      checks.push_back({"agreement_max", a.max_deviation, c.eval.max_agreement,
                        a.max_deviation < c.eval.max_agreement});
      checks.push_back({"agreement_beats_raibert", a.max_deviation, b.max_deviation,
                        a.max_deviation < b.max_deviation});
      std::ofstream csv = open_out((dir / "agreement.csv").string());
      std::vector<std::vector<double>> rows;
      for (std::size_t i = 0; i < a.points.size(); ++i) {
        const auto& p = a.points[i];
        rows.push_back({p.z(0), p.z(1), p.z(2), p.z(3), p.policy(0), p.policy(1), p.lqr(0),
                        p.lqr(1), b.points[i].policy(0), b.points[i].policy(1)});
      }
      io::write_table(csv, {"z1", "z2", "z3", "z4", "psi1", "psi2", "lqr1", "lqr2", "raibert1", "raibert2"},
                      rows);
    }

    if (want("decay")) {
      const auto starts =
          experiments::ball_samples(c.eval.starts, c.eval.start_radius, c.seed + 3);
      const auto d = experiments::decay_campaign(policy, rc, starts, c.eval.hops, c.jobs);
      report << "[decay] starts " << starts.size() << " hops " << c.eval.hops
             << "\n  max lambda_e " << format_number(d.max_lambda_e) << " max lambda_z "
             << format_number(d.max_lambda_z) << " bounds hold " << (d.bounds_hold ? "yes" : "no")
             << "\n  tracking contraction max alpha " << format_number(d.max_alpha) << '\n';
      const double worst = std::max(d.max_lambda_e, d.max_lambda_z);
      checks.push_back({"decay_lambda", worst, c.eval.max_decay_lambda,
                        worst < c.eval.max_decay_lambda && d.bounds_hold});
      std::ofstream csv = open_out((dir / "decay.csv").string());
      std::vector<std::vector<double>> rows;
      for (std::size_t i = 0; i < starts.size(); ++i) {
        rows.push_back({static_cast<double>(i), starts[i](0), starts[i](1), starts[i](2),
                        starts[i](3), d.e_fits[i].lambda, d.e_fits[i].M, d.z_fits[i].lambda,
                        d.z_fits[i].M, d.contraction[i].alpha, d.contraction[i].beta});
      }
      io::write_table(csv, {"start", "z1", "z2", "z3", "z4", "lambda_e", "M_e", "lambda_z", "M_z",
                            "alpha", "beta"},
                      rows);
    }

    if (want("disturbance")) {
      const int impulse_hop = 10;
      const auto r = experiments::disturbance_experiment(
          policy, rc, hopper::Vec2(c.eval.disturbance, 0.0), impulse_hop,
          impulse_hop + 2 * c.eval.max_recovery_hops, c.eval.recovery_tolerance);
      report << "[disturbance] impulse " << format_number(c.eval.disturbance) << " m/s at hop "
             << impulse_hop << " peak |z| " << format_number(r.peak) << " recovery hops "
             << r.recovery_hops << '\n';
      checks.push_back({"recovery_hops", static_cast<double>(r.recovery_hops),
                        static_cast<double>(c.eval.max_recovery_hops),
                        r.recovery_hops >= 0 && r.recovery_hops <= c.eval.max_recovery_hops});
      std::ofstream csv = open_out((dir / "disturbance_log.csv").string());
      io::write_hoplog(csv, r.logs);
    }

    if (want("square")) {
      const auto w = eval::waypoint_track(
          policy, experiments::square_waypoints(c.eval.square_side, c.eval.square_hops),
          eval::pre_impact_state(hopper::Vec4::Zero(), c.hopper), rc);
      double worst = 0.0;
      report << "[square] side " << format_number(c.eval.square_side) << '\n';
      std::vector<std::vector<double>> rows;
      for (const auto& l : w.legs) {
        worst = std::max(worst, l.corner_error);
        report << "  leg " << l.leg << " corner error " << format_number(l.corner_error)
               << " velocity error mean " << format_number(l.velocity_error_mean) << " 2sigma "
               << format_number(l.velocity_error_2sigma) << '\n';
        rows.push_back({static_cast<double>(l.leg), l.corner_error, l.velocity_error_mean,
                        l.velocity_error_2sigma});
      }
      checks.push_back({"corner_error", worst, c.eval.max_corner_error,
                        worst < c.eval.max_corner_error});
      std::ofstream legs = open_out((dir / "square_legs.csv").string());
      io::write_table(legs, {"leg", "corner_error", "vel_err_mean", "vel_err_2sigma"}, rows);
      std::ofstream log = open_out((dir / "square_log.csv").string());
      io::write_hoplog(log, w.logs);
      std::ofstream track = open_out((dir / "square_track.csv").string());
      std::vector<std::vector<double>> trows;
      for (const auto& t : w.track) {
        trows.push_back({static_cast<double>(t.hop), static_cast<double>(t.leg), t.p(0), t.p(1),
                         t.pdot(0), t.pdot(1), t.p_ref(0), t.p_ref(1)});
      }
      io::write_table(track, {"hop", "leg", "px", "py", "vx", "vy", "px_ref", "py_ref"}, trows);
    }

    if (want("optimality")) {
      const auto starts =
          experiments::ball_samples(c.eval.starts, c.eval.start_radius, c.seed + 3);
      // Start on the manifold: these are the states a policy rollout visits,
      // and the only region where training constrains psi.
      const auto psi = eval::as_manifold_map(policy);
      std::vector<Eigen::VectorXd> x0s;
      for (const auto& z : starts) x0s.push_back(model.lift(model.embedding() * psi(z), z).x);
      training::SolveConfig tight = solve;
      tight.ilqr.max_iter = 50;
      const auto ratios =
          eval::optimality_ratios(psi, model, x0s, tight);
      double worst = 0.0, mean = 0.0;
      for (double r : ratios) {
        worst = std::max(worst, r);
        mean += r / static_cast<double>(ratios.size());
      }
      report << "[optimality] cost ratio mean " << format_number(mean) << " max "
             << format_number(worst) << '\n';
      checks.push_back({"cost_ratio", worst, c.eval.max_cost_ratio, worst <= c.eval.max_cost_ratio});
    }

    bool all = true;
    report << "[checks]\n";
    std::vector<std::vector<double>> rows;
    for (const auto& ch : checks) {
      all = all && ch.pass;
      report << "  " << ch.name << ' ' << format_number(ch.value) << " vs "
             << format_number(ch.threshold) << ' ' << verdict(ch.pass) << '\n';
    }
    report << "overall " << verdict(all) << '\n';
    std::ofstream txt = open_out((dir / "report.txt").string());
    txt << report.str();
    std::ofstream summary = open_out((dir / "summary.csv").string());
    summary << "check,value,threshold,pass\n";
    for (const auto& ch : checks) {
      summary << ch.name << ',' << format_number(ch.value) << ',' << format_number(ch.threshold)
              << ',' << (ch.pass ? 1 : 0) << '\n';
    }
    std::cout << report.str();
    return all ? kOk : kRuntimeFailure;
  });
}

// ------------------------------------------------------------ waypoints

int cmd_waypoints(const WaypointOptions& o) {
  return guarded([&] {
    const config::RunConfig c = load(o.common);
    const eval::LeanPolicy policy = make_policy(o.weights, o.raibert, c);
    std::ifstream in(o.waypoints);
    if (!in) throw UsageError("cannot open waypoint file " + o.waypoints);
    std::vector<eval::Waypoint> waypoints;
    try {
      waypoints = eval::read_waypoints(in);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    const auto w = eval::waypoint_track(
        policy, waypoints, eval::pre_impact_state(hopper::Vec4::Zero(), c.hopper),
        rollout_config(c));
    std::ofstream out = open_out(o.log);
    io::write_hoplog(out, w.logs);
    if (!o.track.empty()) {
      std::ofstream track = open_out(o.track);
      std::vector<std::vector<double>> rows;
      for (const auto& t : w.track) {
        rows.push_back({static_cast<double>(t.hop), static_cast<double>(t.leg), t.p(0), t.p(1),
                        t.pdot(0), t.pdot(1), t.p_ref(0), t.p_ref(1)});
      }
      io::write_table(track, {"hop", "leg", "px", "py", "vx", "vy", "px_ref", "py_ref"}, rows);
    }
    for (const auto& l : w.legs) {
      std::cout << "leg " << l.leg << " corner error " << format_number(l.corner_error)
                << " velocity error mean " << format_number(l.velocity_error_mean)
                << " 2sigma " << format_number(l.velocity_error_2sigma) << '\n';
    }
    return kOk;
  });
}

}  // namespace zdp::cli
