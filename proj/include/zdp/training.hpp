#pragma once

// Monte Carlo training of the zero dynamics policy. For each sampled z the
// manifold point (E psi(z), z) is lifted to a state, iLQR is solved from
// there, and the loss measures how far the first optimal successor lands
// from the manifold:
//
//   L(theta) = mean_z || eta_1* - E psi(z_1*) ||^2.
//
// Gradients treat the iLQR solution as exact and use dv0*/dx0 = -K0.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "zdp/model.hpp"
#include "zdp/policy.hpp"
#include "zdp/trajopt.hpp"

namespace zdp::training {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct SolveConfig {
  int horizon = 10;
  trajopt::IlqrOptions ilqr;
  int jobs = 1;
};

struct TrainConfig {
  int batch_size = 30;
  int num_steps = 2000;
  policy::OptimizerConfig optimizer;
  VectorXd z_lower;
  VectorXd z_upper;
  SolveConfig solve;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0 disables checkpoints
  std::filesystem::path checkpoint_dir;
  double max_skip_fraction = 0.5;

  void validate(int z_dim) const;
};

struct TrainRecord {
  int step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  int skipped = 0;
  double wall_ms = 0.0;
  std::vector<bool> converged;  // per sample iLQR convergence
};

/// I.i.d. uniform samples in [lower, upper].
std::vector<VectorXd> sample_batch(const VectorXd& lower, const VectorXd& upper, int n,
                                   std::mt19937_64& rng);

struct SampleResult {
  bool skipped = false;  // iLQR reported a diverged rollout
  bool converged = false;
  double loss = 0.0;
  VectorXd residual;     // eta_1* - E psi(z_1*)
  VectorXd z1;
};

struct LossResult {
  double loss = 0.0;  // mean over non-skipped samples
  std::vector<SampleResult> samples;
  int skipped = 0;
};

/// Invariance loss of an arbitrary manifold map z -> v (input space).
LossResult invariance_loss(const zerodyn::ManifoldMap& psi,
                           const std::vector<VectorXd>& z_batch,
                           const model::Model& model, const SolveConfig& config);

LossResult invariance_loss(const policy::PolicyParams& params,
                           const std::vector<VectorXd>& z_batch,
                           const model::Model& model, const SolveConfig& config);

struct GradientResult {
  LossResult loss;
  policy::PolicyParams grad;
};

GradientResult loss_gradient(const policy::PolicyParams& params,
                             const std::vector<VectorXd>& z_batch,
                             const model::Model& model, const SolveConfig& config);

struct TrainResult {
  policy::PolicyParams params;
  std::vector<TrainRecord> records;
};

using RecordCallback = std::function<void(const TrainRecord&)>;

/// Runs config.num_steps optimizer steps. Throws Error(kTrainingAborted) if
/// more than max_skip_fraction of a batch diverges.
TrainResult train(const TrainConfig& config, const policy::PolicyParams& initial,
                  const model::Model& model, const RecordCallback& on_record = {});

/// CSV columns step, loss, grad_norm, skipped, wall_ms. Wall time is written
/// as 0 unless include_timing is set so logs stay reproducible.
void write_train_log_header(std::ostream& out);
void write_train_log_row(std::ostream& out, const TrainRecord& record, bool include_timing);

}  // namespace zdp::training
