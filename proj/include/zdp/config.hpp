#pragma once

// Run configuration: one JSON document with nested sections and a
// schema_version field. Every section and key is optional (defaults below)
// but unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>

#include <Eigen/Core>

#include "zdp/hopper.hpp"
#include "zdp/model.hpp"
#include "zdp/policy.hpp"
#include "zdp/training.hpp"

namespace zdp::config {

inline constexpr int kSchemaVersion = 1;

struct EvalConfig {
  int holdout_samples = 100;
  std::uint64_t holdout_seed = 7;
  int starts = 20;
  double start_radius = 0.5;
  int hops = 30;
  double agreement_radius = 0.1;
  int agreement_grid = 5;
  // Acceptance thresholds checked by `zdp eval`.
  double max_decay_lambda = 0.9;
  double max_agreement = 0.05;
  double max_residual_ratio = 0.1;  // trained / Raibert mean residual
  double max_cost_ratio = 1.05;      // policy rollout cost / iLQR cost
  double disturbance = 0.5;          // m/s impulse
  double recovery_tolerance = 0.05;
  int max_recovery_hops = 10;
  double square_side = 1.0;
  int square_hops = 10;
  double max_corner_error = 0.1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  int jobs = 1;

  hopper::HopperParams hopper;
  hopper::InputBox box;
  hopper::FlightOptions flight;

  int horizon = 10;
  trajopt::IlqrOptions ilqr;
  Eigen::VectorXd q_diag;  // 8 entries over (eta, z)
  Eigen::VectorXd r_diag;  // 2 entries

  int hidden = 256;
  policy::RaibertParams raibert;
  policy::PretrainOptions pretrain;

  int batch_size = 30;
  int num_steps = 2000;
  policy::OptimizerConfig optimizer;
  Eigen::VectorXd z_lower;
  Eigen::VectorXd z_upper;
  int checkpoint_every = 0;
  std::string checkpoint_dir;

  EvalConfig eval;

  RunConfig();

  trajopt::QuadCost cost() const;
  model::HopperModel make_model() const;
  training::SolveConfig solve() const;
  training::TrainConfig train() const;
};

/// Throws Error(kConfig) on syntax errors, unknown keys, wrong types,
/// schema_version mismatch or invalid values.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Full document including defaults.
std::string dump_config(const RunConfig& config);

}  // namespace zdp::config
