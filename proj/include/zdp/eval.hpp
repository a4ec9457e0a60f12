#pragma once

// Closed-loop evaluation on the full hybrid hopper and empirical stability
// certificates: decay fits with hard bounds, invariance residuals, agreement
// with LQR near the origin, disturbance recovery and waypoint tracking.

#include <functional>
#include <vector>

#include <Eigen/Core>

#include "zdp/errors.hpp"
#include "zdp/hoplog.hpp"
#include "zdp/hopper.hpp"
#include "zdp/model.hpp"
#include "zdp/policy.hpp"
#include "zdp/training.hpp"

namespace zdp::eval {

using hopper::FullState;
using hopper::Vec2;
using hopper::Vec4;
using io::HopLog;

/// Lean command as a function of (setpoint-relative) touchdown z.
using LeanPolicy = std::function<Vec2(const Vec4&)>;

LeanPolicy network_policy(policy::PolicyParams params, policy::OutputBox box);
LeanPolicy raibert_policy(policy::RaibertParams raibert, hopper::HopperParams params,
                          hopper::InputBox box);
/// Adapts a lean policy to the generic manifold-map signature.
zerodyn::ManifoldMap as_manifold_map(LeanPolicy policy);

class RolloutDiverged : public Error {
 public:
  RolloutDiverged(int hop, const std::string& what)
      : Error(ErrorCode::kRolloutDiverged, "hop " + std::to_string(hop) + ": " + what),
        hop_(hop) {}
  int hop() const { return hop_; }

 private:
  int hop_;
};

/// z is measured relative to (p, v): z_rel = (p_xy - p, pdot_xy - v).
struct Setpoint {
  Vec2 p = Vec2::Zero();
  Vec2 v = Vec2::Zero();
};

struct Disturbance {
  int hop = 0;
  Vec2 dv = Vec2::Zero();  // added to the horizontal velocity before hop `hop`
};

struct RolloutConfig {
  hopper::HopperParams hopper;
  hopper::FlightOptions flight;
  trajopt::QuadCost cost;  // per-hop cost on (eta, z_rel) and v
};

RolloutConfig default_rollout_config(const hopper::HopperParams& params = {});

struct HopResult {
  HopLog log;
  FullState next;
};

/// One hop from pre-impact state x: stance, then flight while the attitude
/// controller tracks policy(z_pred(t)), z_pred being the ballistic
/// prediction of the next touchdown (recomputed every control tick).
HopResult simulate_hop(const FullState& x, int k, const LeanPolicy& policy,
                       const Setpoint& setpoint, const RolloutConfig& config);

/// n_hops hops through the full hybrid model. Throws RolloutDiverged.
std::vector<HopLog> rollout(const LeanPolicy& policy, const FullState& x0, int n_hops,
                            const RolloutConfig& config,
                            const std::vector<Disturbance>& disturbances = {},
                            const Setpoint& setpoint = {},
                            std::vector<FullState>* states = nullptr);

/// Pre-impact state with zero lean and rates at the given z.
FullState pre_impact_state(const Vec4& z, const hopper::HopperParams& params,
                           const Vec2& lean = Vec2::Zero());

// ------------------------------------------------------------ decay fits

/// s_k <= M lambda^k for every k used; gain = M / s_0 (>= 1) is the
/// normalized form s_k <= gain lambda^k s_0.
struct DecayFit {
  double M = 1.0;
  double lambda = 1.0;
  double gain = 1.0;
  double residual = 0.0;  // RMS misfit in log space
  int points = 0;
  bool truncated = false;  // series hit zero and the fit stopped there
  bool bound_holds = true;
};

/// Least-squares line through (k, log s_k), lambda capped to [0, 1], then M
/// raised until the bound holds. Throws Error(kNonPositive) for negative or
/// non-finite entries, or when fewer than 2 points precede a zero, and
/// Error(kInvalidArgument) for fewer than 5 entries.
DecayFit fit_decay(const std::vector<double>& series);

/// ||e_{k+1}|| <= alpha ||e_k|| + beta, alpha by least squares through the
/// origin-offset line, beta raised until the bound holds.
struct ContractionFit {
  double alpha = 0.0;
  double beta = 0.0;
};
ContractionFit fit_contraction(const std::vector<double>& series);

// ------------------------------------------------------------ residuals

struct ResidualStats {
  double mean = 0.0;
  double max = 0.0;
  double median = 0.0;
  double q90 = 0.0;
  double q99 = 0.0;
  int samples = 0;
  int skipped = 0;
};

ResidualStats invariance_residual(const zerodyn::ManifoldMap& psi,
                                  const std::vector<Eigen::VectorXd>& samples,
                                  const model::Model& model,
                                  const training::SolveConfig& config);

// ------------------------------------------------------------ LQR agreement

struct AgreementPoint {
  Eigen::VectorXd z;
  Eigen::VectorXd policy;
  Eigen::VectorXd lqr;
};

struct Agreement {
  double max_deviation = 0.0;  // max |psi(z) - G z| over grid and components
  double at_origin = 0.0;
  Eigen::MatrixXd G;
  std::vector<AgreementPoint> points;
};

/// Grid of grid_n points per axis on [-radius, radius]^z_dim restricted to
/// the ball. Throws Error(kConstraintActive) if the LQR command leaves the
/// model's input box anywhere on the grid.
Agreement lqr_agreement(const zerodyn::ManifoldMap& psi, const model::Model& model,
                        double radius, int grid_n);

// ------------------------------------------------------------ waypoints

struct Waypoint {
  Vec2 p = Vec2::Zero();
  Vec2 v = Vec2::Zero();
  int hops = 10;
};

struct LegStats {
  int leg = 0;
  double corner_error = 0.0;  // ||p - p_ref|| after the leg's last hop
  double velocity_error_mean = 0.0;
  double velocity_error_2sigma = 0.0;
};

struct TrackPoint {
  int hop = 0;
  int leg = 0;
  Vec2 p = Vec2::Zero();
  Vec2 pdot = Vec2::Zero();
  Vec2 p_ref = Vec2::Zero();
  Vec2 v_ref = Vec2::Zero();
};

struct WaypointResult {
  std::vector<HopLog> logs;  // z relative to the active waypoint
  std::vector<TrackPoint> track;
  std::vector<LegStats> legs;
};

WaypointResult waypoint_track(const LeanPolicy& policy, const std::vector<Waypoint>& waypoints,
                              const FullState& x0, const RolloutConfig& config);

/// Waypoint CSV with header px,py,vx_ref,vy_ref,hops.
std::vector<Waypoint> read_waypoints(std::istream& in);

// ------------------------------------------------------------ optimality

/// Ratio of the cost of rolling the model forward under v_s = psi(z_{s+1})
/// to the cost iLQR reaches from the same start, over `horizon` steps.
std::vector<double> optimality_ratios(const zerodyn::ManifoldMap& psi,
                                      const model::Model& model,
                                      const std::vector<Eigen::VectorXd>& starts,
                                      const training::SolveConfig& config);

}  // namespace zdp::eval
