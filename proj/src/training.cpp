#include "zdp/training.hpp"

#include <chrono>
#include <cmath>
#include <optional>
#include <ostream>

#include "zdp/errors.hpp"
#include "zdp/hoplog.hpp"
#include "zdp/parallel.hpp"

namespace zdp::training {
namespace {

struct Solved {
  VectorXd x0;
  model::Lift lift;
  trajopt::IlqrSolution sol;
  model::Projection proj;
};

// Lift the manifold point above z and solve from there. Returns nullopt for
// samples whose rollout diverges.
std::optional<Solved> solve_from_manifold(const VectorXd& v0, const VectorXd& z,
                                          const model::Model& model,
                                          const SolveConfig& config) {
  Solved s;
  s.lift = model.lift(model.embedding() * v0, z);
  s.x0 = s.lift.x;
  try {
    s.sol = trajopt::ilqr_solve(s.x0, model.initial_guess(s.x0, config.horizon),
                                model.dynamics(), model.cost(), model.bounds(),
                                config.ilqr);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kDivergedRollout || e.code() == ErrorCode::kNoConvergence) {
      return std::nullopt;
    }
    throw;
  }
  s.proj = model.project(s.sol.states[1]);
  return s;
}

void finish(LossResult& r) {
  double sum = 0.0;
  int used = 0;
  r.skipped = 0;
  for (const SampleResult& s : r.samples) {
    if (s.skipped) {
      ++r.skipped;
      continue;
    }
    sum += s.loss;
    ++used;
  }
  r.loss = used > 0 ? sum / used : 0.0;
}

void check_batch(const std::vector<VectorXd>& z_batch, const model::Model& model) {
  for (const auto& z : z_batch) {
    if (z.size() != model.z_dim()) {
      throw Error(ErrorCode::kInvalidArgument, "sample dimension does not match the model");
    }
  }
}

}  // namespace

void TrainConfig::validate(int z_dim) const {
  if (batch_size < 1 || num_steps < 0 || solve.horizon < 1) {
    throw Error(ErrorCode::kInvalidArgument, "batch size, steps and horizon must be positive");
  }
  if (z_lower.size() != z_dim || z_upper.size() != z_dim ||
      !(z_lower.array() <= z_upper.array()).all()) {
    throw Error(ErrorCode::kInvalidArgument, "sampling bounds are invalid");
  }
  if (!(optimizer.learning_rate >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "learning rate must be nonnegative");
  }
  if (checkpoint_every < 0) {
    throw Error(ErrorCode::kInvalidArgument, "checkpoint interval must be nonnegative");
  }
}

std::vector<VectorXd> sample_batch(const VectorXd& lower, const VectorXd& upper, int n,
                                   std::mt19937_64& rng) {
  if (n < 1) throw Error(ErrorCode::kInvalidArgument, "batch size must be at least 1");
  if (lower.size() != upper.size()) {
    throw Error(ErrorCode::kInvalidArgument, "sampling bounds have mismatched sizes");
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<VectorXd> out(static_cast<std::size_t>(n), VectorXd(lower.size()));
  for (auto& z : out)
    for (Eigen::Index i = 0; i < z.size(); ++i)
      z(i) = lower(i) + (upper(i) - lower(i)) * unit(rng);
  return out;
}

LossResult invariance_loss(const zerodyn::ManifoldMap& psi,
                           const std::vector<VectorXd>& z_batch,
                           const model::Model& model, const SolveConfig& config) {
  check_batch(z_batch, model);
  LossResult r;
  r.samples.resize(z_batch.size());
  parallel_for(z_batch.size(), config.jobs, [&](std::size_t i) {
    SampleResult& out = r.samples[i];
    const auto s = solve_from_manifold(psi(z_batch[i]), z_batch[i], model, config);
    if (!s) {
      out.skipped = true;
      return;
    }
    out.converged = s->sol.converged;
    out.z1 = s->proj.z;
    out.residual = s->proj.eta - model.embedding() * psi(s->proj.z);
    out.loss = out.residual.squaredNorm();
  });
  finish(r);
  return r;
}

LossResult invariance_loss(const policy::PolicyParams& params,
                           const std::vector<VectorXd>& z_batch,
                           const model::Model& model, const SolveConfig& config) {
  const policy::OutputBox& box = model.output_box();
  return invariance_loss(
      [&](const VectorXd& z) { return policy::policy_forward(params, box, z); }, z_batch,
      model, config);
}

GradientResult loss_gradient(const policy::PolicyParams& params,
                             const std::vector<VectorXd>& z_batch,
                             const model::Model& model, const SolveConfig& config) {
  check_batch(z_batch, model);
  const policy::OutputBox& box = model.output_box();
  const MatrixXd& E = model.embedding();
  const std::size_t n = z_batch.size();

  GradientResult g;
  g.loss.samples.resize(n);
  std::vector<policy::PolicyParams> per_sample(n);
  parallel_for(n, config.jobs, [&](std::size_t i) {
    const VectorXd& z = z_batch[i];
    SampleResult& out = g.loss.samples[i];
    const auto s = solve_from_manifold(policy::policy_forward(params, box, z), z, model, config);
    if (!s) {
      out.skipped = true;
      return;
    }
    out.converged = s->sol.converged;
    out.z1 = s->proj.z;
    out.residual = s->proj.eta - E * policy::policy_forward(params, box, s->proj.z);
    out.loss = out.residual.squaredNorm();

    // Successor side: psi(z1) enters the residual directly and through z1.
    const VectorXd u1 = E.transpose() * out.residual;
    const policy::PolicyGradient at_z1 = policy::policy_backward(params, box, s->proj.z, u1);
    const VectorXd g_x1 =
        2.0 * (s->proj.deta_dx.transpose() * out.residual - s->proj.dz_dx.transpose() * at_z1.input);

    // x1 = f(x0, v0*(x0)) with dv0*/dx0 = -K0.
    const MatrixXd S0 = trajopt::solution_gradient(s->sol, true);
    const trajopt::StepResult step = model.dynamics()(s->x0, s->sol.inputs[0], true);
    const VectorXd g_x0 = (step.A + step.B * S0).transpose() * g_x1;
    const VectorXd g_v0 = E.transpose() * (s->lift.dx_deta.transpose() * g_x0);

    policy::PolicyGradient at_z = policy::policy_backward(params, box, z, g_v0);
    VectorXd flat = at_z.params.flatten() - 2.0 * at_z1.params.flatten();
    per_sample[i] = std::move(at_z.params);
    per_sample[i].assign_flat(flat);
  });
  finish(g.loss);

  g.grad = policy::PolicyParams::zeros(params.z_dim(), params.hidden(), params.out_dim());
  const int used = static_cast<int>(n) - g.loss.skipped;
  if (used > 0) {
    VectorXd acc = VectorXd::Zero(params.size());
    for (std::size_t i = 0; i < n; ++i)
      if (!g.loss.samples[i].skipped) acc += per_sample[i].flatten();
    g.grad.assign_flat(acc / used);
  }
  return g;
}

TrainResult train(const TrainConfig& config, const policy::PolicyParams& initial,
                  const model::Model& model, const RecordCallback& on_record) {
  config.validate(model.z_dim());
  if (initial.z_dim() != model.z_dim() || initial.out_dim() != model.input_dim()) {
    throw Error(ErrorCode::kInvalidArgument, "policy shape does not match the model");
  }
  TrainResult result;
  result.params = initial;
  VectorXd flat = initial.flatten();
  policy::Optimizer opt(config.optimizer, flat.size());
  std::mt19937_64 rng(config.seed);

  for (int step = 0; step < config.num_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<VectorXd> batch =
        sample_batch(config.z_lower, config.z_upper, config.batch_size, rng);
    const GradientResult g = loss_gradient(result.params, batch, model, config.solve);
    if (g.loss.skipped > config.max_skip_fraction * config.batch_size) {
      throw Error(ErrorCode::kTrainingAborted,
                  "step " + std::to_string(step) + ": " + std::to_string(g.loss.skipped) +
                      " of " + std::to_string(config.batch_size) + " iLQR solves diverged");
    }
    const VectorXd grad = g.grad.flatten();
    if (!grad.allFinite()) {
      throw Error(ErrorCode::kTrainingAborted, "non-finite gradient at step " + std::to_string(step));
    }
    opt.step(flat, grad);
    result.params.assign_flat(flat);

    TrainRecord rec;
    rec.step = step;
    rec.loss = g.loss.loss;
    rec.grad_norm = grad.norm();
    rec.skipped = g.loss.skipped;
    rec.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0).count();
    for (const auto& s : g.loss.samples) rec.converged.push_back(s.converged);
    if (on_record) on_record(rec);
    result.records.push_back(std::move(rec));

    if (config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0) {
      policy::save_weights(config.checkpoint_dir /
                               ("checkpoint_" + std::to_string(step + 1) + ".json"),
                           result.params, model.output_box());
    }
  }
  return result;
}

void write_train_log_header(std::ostream& out) {
  out << "step,loss,grad_norm,skipped,wall_ms\n";
}

void write_train_log_row(std::ostream& out, const TrainRecord& r, bool include_timing) {
  out << r.step << ',' << io::format_number(r.loss) << ',' << io::format_number(r.grad_norm)
      << ',' << r.skipped << ',' << io::format_number(include_timing ? r.wall_ms : 0.0) << '\n';
}

}  // namespace zdp::training
