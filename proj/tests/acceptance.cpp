// End-to-end acceptance run: one PASS/FAIL line per headline property, with
// the CSV artifacts of the hopper experiments written to --out.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>

#include "testutil.hpp"
#include "zdp/config.hpp"
#include "zdp/eval.hpp"
#include "zdp/experiments.hpp"
#include "zdp/hoplog.hpp"
#include "zdp/hopper.hpp"
#include "zdp/model.hpp"
#include "zdp/policy.hpp"
#include "zdp/trajopt.hpp"
#include "zdp/training.hpp"
#include "zdp/zerodyn.hpp"

namespace fs = std::filesystem;
using namespace zdp;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    detail << (detail.tellp() > 0 ? "; " : "") << what << (ok ? "" : " [x]");
  }
};

std::string num(double x) {
  std::ostringstream s;
  s.precision(3);
  s << x;
  return s.str();
}

int failures = 0;

void run(const std::string& name, double max_seconds, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.require(false, std::string("threw ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (max_seconds > 0) o.require(secs < max_seconds, "runtime " + num(secs) + " s < " + num(max_seconds) + " s");
  else o.detail << "; runtime " << num(secs) << " s";
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail.str() << std::endl;
}

std::string hoplog_text(const std::vector<io::HopLog>& logs) {
  std::ostringstream s;
  io::write_hoplog(s, logs);
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

eval::RolloutConfig rollout_config(const config::RunConfig& c) {
  eval::RolloutConfig r;
  r.hopper = c.hopper;
  r.flight = c.flight;
  r.cost = c.cost();
  return r;
}

struct TrainedPolicy {
  policy::PolicyParams pretrained;
  policy::PolicyParams trained;
  std::string log;
};

// Same pipeline as `zdp train`: seeded init, Raibert regression, invariance
// training.
TrainedPolicy train_pipeline(const config::RunConfig& c) {
  const model::HopperModel model = c.make_model();
  TrainedPolicy t;
  policy::PolicyParams p = policy::PolicyParams::he_uniform(hopper::kZDim, c.hidden, hopper::kInputDim, c.seed);
  policy::PretrainOptions po = c.pretrain;
  po.seed = c.seed + 1;
  t.pretrained = policy::pretrain(p, c.raibert, c.hopper, c.box, {c.z_lower, c.z_upper}, po);
  std::ostringstream log;
  training::write_train_log_header(log);
  t.trained = training::train(c.train(), t.pretrained, model,
                              [&](const training::TrainRecord& r) {
                                training::write_train_log_row(log, r, false);
                              }).params;
  t.log = log.str();
  return t;
}

std::string weights_text(const policy::PolicyParams& p, const policy::OutputBox& box, const fs::path& scratch) {
  policy::save_weights(scratch, p, box);
  return read_file(scratch);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance run"};
  std::string out_dir = "acceptance_run";
  int jobs = 1;
  app.add_option("--out", out_dir, "artifact directory");
  app.add_option("--jobs", jobs, "worker threads for training and evaluation");
  CLI11_PARSE(app, argc, argv);
  const fs::path out(out_dir);
  fs::create_directories(out);

  config::RunConfig cfg;
  cfg.jobs = jobs;
  write_file(out / "config.json", config::dump_config(cfg));
  const model::HopperModel hopper_model = cfg.make_model();

  // ------------------------------------------------------------ 1
  run("LQR oracle", 1.0, [](Outcome& o) {
    const MatrixXd one = MatrixXd::Ones(1, 1);
    const double P = trajopt::lqr_solve(one, one, one, one).P(0, 0);
    o.require(std::abs(P - (1 + std::sqrt(5.0)) / 2) < 1e-9, "scalar P err " + num(std::abs(P - (1 + std::sqrt(5.0)) / 2)));

    std::mt19937_64 rng(1001);
    double worst_x = 0, worst_k = 0;
    for (int t = 0; t < 20; ++t) {
      MatrixXd A = testutil::gaussian(4, 4, rng);
      A *= 1.1 / trajopt::spectral_radius(A);
      const MatrixXd B = testutil::gaussian(4, 2, rng);
      trajopt::QuadCost cost = trajopt::QuadCost::make(testutil::random_spd(4, 0.5, 2, rng),
                                                       testutil::random_spd(2, 0.5, 2, rng));
      const trajopt::LqrResult lqr = trajopt::lqr_solve(A, B, cost.Q, cost.R);
      cost.Qf = lqr.P;
      const VectorXd x0 = testutil::uniform(4, -1, 1, rng);
      const int T = 15;
      const auto sol = trajopt::ilqr_solve(x0, std::vector<VectorXd>(T, VectorXd::Zero(2)),
                                           trajopt::linear_dynamics(A, B), cost,
                                           trajopt::InputBounds::unbounded(2));
      VectorXd x = x0;
      for (int s = 0; s < T; ++s) {
        worst_x = std::max(worst_x, (sol.states[s] - x).cwiseAbs().maxCoeff());
        worst_k = std::max(worst_k, (sol.gains_K[s] - lqr.K).cwiseAbs().maxCoeff());
        x = A * x - B * (lqr.K * x);
      }
    }
    o.require(worst_x < 1e-8, "iLQR vs LQR trajectory err " + num(worst_x));
    o.require(worst_k < 1e-8, "gain err " + num(worst_k));
  });

  // ------------------------------------------------------------ 2
  run("Boxed QP oracle", 10.0, [](Outcome& o) {
    std::mt19937_64 rng(1002);
    double worst = -1;
    for (int t = 0; t < 100; ++t) {
      const MatrixXd H = testutil::random_spd(2, 0.1, 5, rng);
      const VectorXd g = testutil::uniform(2, -6, 6, rng);
      const VectorXd lo = testutil::uniform(2, -2, -0.1, rng), hi = testutil::uniform(2, 0.1, 2, rng);
      auto f = [&](const VectorXd& v) { return 0.5 * v.dot(H * v) + g.dot(v); };
      const VectorXd v = trajopt::boxed_qp(H, g, lo, hi).argmin;
      if (!((v.array() >= lo.array()).all() && (v.array() <= hi.array()).all())) worst = 1e300;
      double best = std::numeric_limits<double>::infinity();
      for (int i = 0; i <= 400; ++i)
        for (int j = 0; j <= 400; ++j)
          best = std::min(best, f(Eigen::Vector2d(lo(0) + (hi(0) - lo(0)) * i / 400.0,
                                                  lo(1) + (hi(1) - lo(1)) * j / 400.0)));
      worst = std::max(worst, f(v) - best);
    }
    o.require(worst < 1e-4, "max objective gap vs grid " + num(worst) + " over 100 problems");
  });

  // ------------------------------------------------------------ 3
  run("Gradient suite", 120.0, [](Outcome& o) {
    std::mt19937_64 rng(1003);
    const policy::OutputBox box = policy::OutputBox::from(hopper::InputBox{});

    double worst_policy = 0;
    for (int t = 0; t < 100; ++t) {
      policy::PolicyParams p = policy::PolicyParams::he_uniform(4, 16, 2, 2000 + t);
      const VectorXd z = testutil::uniform(4, -1, 1, rng), u = testutil::uniform(2, -1, 1, rng);
      const VectorXd g = policy::policy_backward(p, box, z, u).params.flatten();
      const VectorXd flat = p.flatten();
      const Eigen::Index k = std::uniform_int_distribution<Eigen::Index>(0, flat.size() - 1)(rng);
      auto f = [&](double d) {
        VectorXd fl = flat;
        fl(k) += d;
        p.assign_flat(fl);
        const double r = u.dot(policy::policy_forward(p, box, z));
        p.assign_flat(flat);
        return r;
      };
      const double fd = (f(1e-6) - f(-1e-6)) / 2e-6;
      worst_policy = std::max(worst_policy, std::abs(fd - g(k)) / std::max(std::abs(fd), 1e-4));
    }
    o.require(worst_policy < 1e-5, "policy_backward rel err " + num(worst_policy));

    const hopper::HopperParams hp;
    double worst_map = 0;
    for (int t = 0; t < 100; ++t) {
      VectorXd xv(10);
      xv << testutil::uniform(2, -0.2, 0.2, rng), testutil::uniform(2, -1, 1, rng),
          testutil::uniform(4, -1, 1, rng), testutil::uniform(2, -0.2, 0.2, rng);
      auto f = [&](const VectorXd& a) {
        const auto s = hopper::closed_form_return_map(a.head<4>(), a.segment<4>(4), a.tail<2>(), hp);
        VectorXd r(8);
        r << s.eta_next, s.z_next;
        return r;
      };
      const auto s = hopper::closed_form_return_map(xv.head<4>(), xv.segment<4>(4), xv.tail<2>(), hp);
      MatrixXd J(8, 10);
      J << s.d_state, s.d_input;
      worst_map = std::max(worst_map, testutil::rel_error(J, testutil::fd_jacobian(f, xv, 1e-6), 1e-2));
    }
    o.require(worst_map < 1e-5, "return-map Jacobian rel err " + num(worst_map));

    const auto fx = model::LinearFixture::make_default();
    policy::PolicyParams p = model::linear_policy(model::lqr_manifold_gain(fx) + 0.3 * testutil::gaussian(1, 2, rng), 8);
    p.W1 += 0.1 * testutil::gaussian(8, 2, rng);
    p.W2 += 0.1 * testutil::gaussian(8, 8, rng).cwiseAbs();
    p.W3 += 0.1 * testutil::gaussian(1, 8, rng);
    // Zero biases would put the anchor psi(0) exactly on the ReLU kinks.
    p.b1 += 0.05 * testutil::gaussian(8, 1, rng);
    std::mt19937_64 brng(1004);
    const auto batch = training::sample_batch(VectorXd::Constant(2, -1), VectorXd::Constant(2, 1), 12, brng);
    const training::SolveConfig sc;
    const VectorXd grad = training::loss_gradient(p, batch, fx, sc).grad.flatten();
    const VectorXd flat = p.flatten();
    int probed = 0;
    double worst_loss = 0;
    for (int t = 0; t < 500 && probed < 20; ++t) {
      const Eigen::Index k = std::uniform_int_distribution<Eigen::Index>(0, flat.size() - 1)(rng);
      auto L = [&](double d) {
        VectorXd fl = flat;
        fl(k) += d;
        policy::PolicyParams q = p;
        q.assign_flat(fl);
        return training::invariance_loss(q, batch, fx, sc).loss;
      };
      const double fd = (L(1e-6) - L(-1e-6)) / 2e-6;
      if (std::abs(fd) < 1e-6 && std::abs(grad(k)) < 1e-6) continue;
      worst_loss = std::max(worst_loss, std::abs(fd - grad(k)) / std::max(std::abs(fd), 1e-6));
      ++probed;
    }
    o.require(probed == 20, std::to_string(probed) + " loss parameters probed");
    o.require(worst_loss < 1e-3, "loss gradient rel err " + num(worst_loss));
  });

  // ------------------------------------------------------------ 4
  run("Diffeomorphism suite", 10.0, [](Outcome& o) {
    std::mt19937_64 rng(1005);
    double worst = 0;
    int samples = 0;
    for (int sys = 0; sys < 100; ++sys) {
      const int n = 3 + sys % 4, m = 1 + sys % (n - 1);
      const MatrixXd B = testutil::gaussian(n, m, rng);
      const MatrixXd D0 = testutil::random_spd(n, 0.5, 3, rng);
      const MatrixXd C = 0.5 * testutil::gaussian(n, n, rng);
      const auto d = zerodyn::Decomposition::make(B, [D0, C](const VectorXd& q) {
        const MatrixXd S = C * q.array().sin().matrix().asDiagonal();
        return MatrixXd(D0 + S * S.transpose());
      });
      for (int s = 0; s < 100; ++s, ++samples) {
        const zerodyn::MechanicalState x{testutil::uniform(n, -2, 2, rng), testutil::uniform(n, -2, 2, rng)};
        worst = std::max(worst, (zerodyn::phi_inverse(zerodyn::phi(x, d), d).stacked() - x.stacked()).cwiseAbs().maxCoeff());
        const zerodyn::EtaZ ez{testutil::uniform(2 * m, -2, 2, rng), testutil::uniform(2 * (n - m), -2, 2, rng)};
        const zerodyn::EtaZ back = zerodyn::phi(zerodyn::phi_inverse(ez, d), d);
        worst = std::max({worst, (back.eta - ez.eta).cwiseAbs().maxCoeff(), (back.z - ez.z).cwiseAbs().maxCoeff()});
      }
    }
    o.require(worst < 1e-10, "max round-trip err " + num(worst) + " over " + std::to_string(samples) +
                                 " samples on 100 random SPD systems");
  });

  // ------------------------------------------------------------ 5
  TrainedPolicy trained;
  bool have_policy = false;
  run("Invariance learning", 0.0, [&](Outcome& o) {
    const auto fx = model::LinearFixture::make_default();
    std::mt19937_64 rng(1006);
    policy::PolicyParams p0 = model::linear_policy(model::lqr_manifold_gain(fx), 8);
    p0.W3 += 0.1 * testutil::gaussian(1, 8, rng);
    p0.W2.topLeftCorner(4, 4) += 0.1 * testutil::gaussian(4, 4, rng).cwiseAbs();
    training::TrainConfig tc;
    tc.batch_size = 16;
    tc.num_steps = 500;
    tc.optimizer = {policy::OptimizerKind::kSgd, 0.5};
    tc.z_lower = VectorXd::Constant(2, -1);
    tc.z_upper = VectorXd::Constant(2, 1);
    tc.seed = 4;
    const auto fr = training::train(tc, p0, fx);
    std::mt19937_64 hrng(1007);
    const double fixture_loss = training::invariance_loss(
        fr.params, training::sample_batch(tc.z_lower, tc.z_upper, 100, hrng), fx, tc.solve).loss;
    o.require(fixture_loss < 1e-8, "fixture held-out loss " + num(fixture_loss) + " after 500 steps");

    trained = train_pipeline(cfg);
    have_policy = true;
    write_file(out / "train_log.csv", trained.log);
    policy::save_weights(out / "pretrained.json", trained.pretrained, hopper_model.output_box());
    policy::save_weights(out / "trained.json", trained.trained, hopper_model.output_box());

    std::mt19937_64 srng(cfg.eval.holdout_seed);
    const auto holdout = training::sample_batch(cfg.z_lower, cfg.z_upper, cfg.eval.holdout_samples, srng);
    const auto solve = cfg.solve();
    auto residual = [&](const policy::PolicyParams& q) {
      return eval::invariance_residual(eval::as_manifold_map(eval::network_policy(q, hopper_model.output_box())),
                                       holdout, hopper_model, solve);
    };
    const auto before = residual(trained.pretrained), after = residual(trained.trained);
    const auto heuristic = eval::invariance_residual(
        eval::as_manifold_map(eval::raibert_policy(cfg.raibert, cfg.hopper, cfg.box)), holdout, hopper_model, solve);
    const double ratio = after.mean / before.mean;
    o.require(ratio <= 0.1, "hopper held-out residual " + num(before.mean) + " -> " + num(after.mean) +
                                " (ratio " + num(ratio) + ", " + std::to_string(cfg.num_steps) + " steps, batch " +
                                std::to_string(cfg.batch_size) + ")");
    o.require(heuristic.mean > after.mean, "Raibert heuristic residual " + num(heuristic.mean));
  });

  const eval::RolloutConfig rc = rollout_config(cfg);
  const eval::LeanPolicy psi = have_policy ? eval::network_policy(trained.trained, hopper_model.output_box())
                                           : eval::LeanPolicy{};
  const eval::LeanPolicy raibert = eval::raibert_policy(cfg.raibert, cfg.hopper, cfg.box);
  auto need_policy = [&](Outcome& o) {
    if (!have_policy) o.require(false, "no trained policy");
    return have_policy;
  };

  // ------------------------------------------------------------ 6
  run("Composite stability", 120.0, [&](Outcome& o) {
    if (!need_policy(o)) return;
    const auto starts = experiments::ball_samples(cfg.eval.starts, cfg.eval.start_radius, cfg.seed + 3);
    const auto d = experiments::decay_campaign(psi, rc, starts, cfg.eval.hops, cfg.jobs);
    o.require(d.max_lambda_e < cfg.eval.max_decay_lambda, "max lambda_e " + num(d.max_lambda_e));
    o.require(d.max_lambda_z < cfg.eval.max_decay_lambda, "max lambda_z " + num(d.max_lambda_z));
    o.require(d.bounds_hold, std::string("hard bounds ") + (d.bounds_hold ? "hold" : "violated"));
    o.detail << "; " << starts.size() << " starts, " << cfg.eval.hops << " hops";
    std::ofstream csv(out / "decay.csv");
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < starts.size(); ++i)
      rows.push_back({double(i), starts[i](0), starts[i](1), starts[i](2), starts[i](3), d.e_fits[i].lambda,
                      d.e_fits[i].M, d.z_fits[i].lambda, d.z_fits[i].M, d.contraction[i].alpha, d.contraction[i].beta});
    io::write_table(csv, {"start", "z1", "z2", "z3", "z4", "lambda_e", "M_e", "lambda_z", "M_z", "alpha", "beta"}, rows);

    const auto offset = eval::rollout(psi, eval::pre_impact_state(hopper::Vec4(0.5, 0, 0, 0), cfg.hopper), 30, rc);
    write_file(out / "offset_log.csv", hoplog_text(offset));
    bool monotone = true;
    for (std::size_t k = 4; k < offset.size(); ++k)
      monotone = monotone && offset[k].z.norm() < offset[k - 1].z.norm();
    o.require(monotone, "0.5 m offset: |z| decreasing after hop 3, final " + num(offset.back().z.norm()));
  });

  // ------------------------------------------------------------ 7
  run("LQR agreement", 60.0, [&](Outcome& o) {
    if (!need_policy(o)) return;
    const auto a = eval::lqr_agreement(eval::as_manifold_map(psi), hopper_model, cfg.eval.agreement_radius,
                                       cfg.eval.agreement_grid);
    const auto b = eval::lqr_agreement(eval::as_manifold_map(raibert), hopper_model, cfg.eval.agreement_radius,
                                       cfg.eval.agreement_grid);
    o.require(a.max_deviation < cfg.eval.max_agreement, "policy max deviation " + num(a.max_deviation) + " rad on " +
                                                            std::to_string(a.points.size()) + " grid points");
    o.require(b.max_deviation > a.max_deviation, "Raibert max deviation " + num(b.max_deviation));
    o.require(a.at_origin < 0.02, "psi(0) " + num(a.at_origin));
    std::ofstream csv(out / "agreement.csv");
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < a.points.size(); ++i) {
      const auto& p = a.points[i];
      rows.push_back({p.z(0), p.z(1), p.z(2), p.z(3), p.policy(0), p.policy(1), p.lqr(0), p.lqr(1),
                      b.points[i].policy(0), b.points[i].policy(1)});
    }
    io::write_table(csv, {"z1", "z2", "z3", "z4", "psi1", "psi2", "lqr1", "lqr2", "raibert1", "raibert2"}, rows);
  });

  // ------------------------------------------------------------ 8
  run("Disturbance rejection", 30.0, [&](Outcome& o) {
    if (!need_policy(o)) return;
    const int hop = 10;
    const auto r = experiments::disturbance_experiment(psi, rc, hopper::Vec2(cfg.eval.disturbance, 0), hop,
                                                       hop + 2 * cfg.eval.max_recovery_hops,
                                                       cfg.eval.recovery_tolerance);
    write_file(out / "disturbance_log.csv", hoplog_text(r.logs));
    o.require(r.recovery_hops >= 0 && r.recovery_hops <= cfg.eval.max_recovery_hops,
              num(cfg.eval.disturbance) + " m/s impulse, peak |z| " + num(r.peak) + ", back under " +
                  num(cfg.eval.recovery_tolerance) + " m after " + std::to_string(r.recovery_hops) + " hops");
  });

  // ------------------------------------------------------------ 9
  run("Square tracking", 60.0, [&](Outcome& o) {
    if (!need_policy(o)) return;
    const auto w = eval::waypoint_track(psi, experiments::square_waypoints(cfg.eval.square_side, cfg.eval.square_hops),
                                        eval::pre_impact_state(hopper::Vec4::Zero(), cfg.hopper), rc);
    write_file(out / "square_log.csv", hoplog_text(w.logs));
    std::ofstream track(out / "square_track.csv");
    std::vector<std::vector<double>> rows;
    for (const auto& t : w.track)
      rows.push_back({double(t.hop), double(t.leg), t.p(0), t.p(1), t.pdot(0), t.pdot(1), t.p_ref(0), t.p_ref(1)});
    io::write_table(track, {"hop", "leg", "px", "py", "vx", "vy", "px_ref", "py_ref"}, rows);
    std::ofstream legs(out / "square_legs.csv");
    rows.clear();
    double worst = 0;
    std::ostringstream vel;
    for (const auto& l : w.legs) {
      worst = std::max(worst, l.corner_error);
      rows.push_back({double(l.leg), l.corner_error, l.velocity_error_mean, l.velocity_error_2sigma});
      vel << (l.leg ? " " : "") << num(l.velocity_error_mean) << "+-" << num(l.velocity_error_2sigma);
    }
    io::write_table(legs, {"leg", "corner_error", "vel_err_mean", "vel_err_2sigma"}, rows);
    o.require(worst < cfg.eval.max_corner_error, "max corner error " + num(worst) + " m");
    o.detail << "; velocity error mean+-2sigma per leg " << vel.str() << " m/s";
  });

  // ------------------------------------------------------------ 10
  run("Determinism", 0.0, [&](Outcome& o) {
    config::RunConfig small = cfg;
    small.hidden = 32;
    small.pretrain.steps = 300;
    small.num_steps = 10;
    small.batch_size = 8;
    const fs::path scratch = out / "determinism_weights.json";
    const TrainedPolicy a = train_pipeline(small);
    small.jobs = 3;
    const TrainedPolicy b = train_pipeline(small);
    const auto box = hopper_model.output_box();
    o.require(weights_text(a.trained, box, scratch) == weights_text(b.trained, box, scratch) && a.log == b.log,
              "training rerun (1 vs 3 threads) byte-identical");
    fs::remove(scratch);

    if (!need_policy(o)) return;
    const auto x0 = eval::pre_impact_state(hopper::Vec4(0.3, -0.2, 0.1, 0.2), cfg.hopper);
    const std::vector<eval::Disturbance> kick{{12, hopper::Vec2(0.3, -0.2)}};
    const std::string r1 = hoplog_text(eval::rollout(psi, x0, 30, rc, kick));
    const std::string r2 = hoplog_text(eval::rollout(psi, x0, 30, rc, kick));
    o.require(r1 == r2, "simulate rerun byte-identical");
    const auto sq = experiments::square_waypoints(cfg.eval.square_side, cfg.eval.square_hops);
    const auto origin = eval::pre_impact_state(hopper::Vec4::Zero(), cfg.hopper);
    o.require(hoplog_text(eval::waypoint_track(psi, sq, origin, rc).logs) ==
                  read_file(out / "square_log.csv"),
              "square rerun byte-identical");
  });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
