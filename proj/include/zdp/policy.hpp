#pragma once

// Zero dynamics policy psi_theta: z -> lean command, a two-hidden-layer ReLU
// network
//
//   y(z)   = W3 relu(W2 relu(W1 z + b1) + b2) + b3
//   psi(z) = squash(y(z) - y(0))
//
// Subtracting y(0) pins the manifold to the origin (psi(0) = 0). squash maps
// each coordinate smoothly into its (lower, upper) interval with unit slope
// at zero: u tanh(r/u) for r >= 0 and |l| tanh(r/|l|) for r < 0. Infinite
// bounds leave that side linear.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>

#include <Eigen/Core>

#include "zdp/hopper.hpp"

namespace zdp::policy {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct PolicyParams {
  MatrixXd W1;
  VectorXd b1;
  MatrixXd W2;
  VectorXd b2;
  MatrixXd W3;
  VectorXd b3;

  static PolicyParams zeros(int z_dim, int hidden, int out_dim);
  /// He-style uniform weights, small uniform biases, deterministic in seed.
  static PolicyParams he_uniform(int z_dim, int hidden, int out_dim,
                                 std::uint64_t seed);

  int z_dim() const { return static_cast<int>(W1.cols()); }
  int hidden() const { return static_cast<int>(W1.rows()); }
  int out_dim() const { return static_cast<int>(W3.rows()); }
  Eigen::Index size() const;
  bool all_finite() const;

  /// Concatenation W1, b1, W2, b2, W3, b3 (matrices column-major).
  VectorXd flatten() const;
  void assign_flat(const VectorXd& flat);

  bool operator==(const PolicyParams& other) const;
};

struct OutputBox {
  VectorXd lower;
  VectorXd upper;

  static OutputBox unbounded(int dim);
  static OutputBox from(const hopper::InputBox& box);
  /// Throws Error(kInvalidArgument) unless lower < 0 < upper.
  void validate() const;
};

VectorXd policy_forward(const PolicyParams& params, const OutputBox& box,
                        const VectorXd& z);

struct PolicyGradient {
  PolicyParams params;
  VectorXd input;
};

/// Reverse-mode gradient of upstream' psi(z) with respect to the parameters
/// and to z.
PolicyGradient policy_backward(const PolicyParams& params, const OutputBox& box,
                               const VectorXd& z, const VectorXd& upstream);

/// d psi / dz (out_dim x z_dim).
MatrixXd policy_jacobian(const PolicyParams& params, const OutputBox& box,
                         const VectorXd& z);

// ------------------------------------------------------------ Raibert

struct RaibertParams {
  double velocity_gain = 0.0;   // s
  double feedback_gain = 0.02;  // foot offset per metre of position error
  Eigen::Vector2d reference_velocity = Eigen::Vector2d::Zero();

  void validate() const;
};

/// Foot-placement heuristic. Foot offset ahead of the body
///   d = pdot * T_g / 2 + k (pdot - pdot_ref) + k_p p
/// with T_g the stance duration, converted to lean angles through the leg
/// geometry and clipped to the box. z is relative to the setpoint.
Eigen::Vector2d raibert(const Eigen::Vector4d& z, const RaibertParams& params,
                        const hopper::HopperParams& hopper,
                        const hopper::InputBox& box);

// ------------------------------------------------------------ optimizers

enum class OptimizerKind { kAdam, kSgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Optimizer {
 public:
  Optimizer(const OptimizerConfig& config, Eigen::Index size);
  void step(VectorXd& params, const VectorXd& grad);

 private:
  OptimizerConfig config_;
  VectorXd m_;
  VectorXd v_;
  long t_ = 0;
};

// ------------------------------------------------------------ pretraining

struct SampleBox {
  VectorXd lower;
  VectorXd upper;
};

struct PretrainOptions {
  int steps = 4000;
  double rate = 1e-3;
  int batch = 64;
  std::uint64_t seed = 1;
  double target_mse = 1e-4;
  int patience = 1000;
};

/// Supervised regression of psi onto the Raibert heuristic over uniform
/// samples of the box. Throws Error(kNoProgress) if the minibatch loss has
/// not improved for `patience` consecutive steps while still above
/// target_mse.
PolicyParams pretrain(const PolicyParams& params0, const RaibertParams& raibert_params,
                      const hopper::HopperParams& hopper, const hopper::InputBox& box,
                      const SampleBox& sample_box, const PretrainOptions& options);

/// Mean squared error of psi against the Raibert heuristic over the given
/// points.
double raibert_mse(const PolicyParams& params, const OutputBox& out_box,
                   const RaibertParams& raibert_params,
                   const hopper::HopperParams& hopper, const hopper::InputBox& box,
                   const std::vector<Eigen::Vector4d>& points,
                   double* max_abs_error = nullptr);

// ------------------------------------------------------------ persistence

struct PolicyFile {
  PolicyParams params;
  OutputBox box;
};

inline constexpr int kWeightFormatVersion = 1;

void save_weights(const std::filesystem::path& path, const PolicyParams& params,
                  const OutputBox& box);
/// Throws Error(kCorruptFile) for unreadable or malformed files and
/// Error(kSchemaMismatch) for version or shape mismatches against the
/// expected dimensions (a negative expectation is not checked).
PolicyFile load_weights(const std::filesystem::path& path, int expected_z_dim = -1,
                        int expected_out_dim = -1);

}  // namespace zdp::policy
