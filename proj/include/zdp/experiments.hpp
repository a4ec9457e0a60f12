#pragma once

// Scripted closed-loop campaigns used by `zdp eval` and the acceptance
// binary.

#include <cstdint>
#include <vector>

#include "zdp/eval.hpp"

namespace zdp::experiments {

using eval::LeanPolicy;
using eval::RolloutConfig;

/// Uniform samples in the 4-ball of the given radius.
std::vector<hopper::Vec4> ball_samples(int n, double radius, std::uint64_t seed);

struct DecayCampaign {
  std::vector<hopper::Vec4> starts;
  std::vector<eval::DecayFit> e_fits;
  std::vector<eval::DecayFit> z_fits;
  std::vector<eval::ContractionFit> contraction;
  double max_lambda_e = 0.0;
  double max_lambda_z = 0.0;
  double max_alpha = 0.0;
  bool bounds_hold = true;
};

/// Rollouts from zero-lean pre-impact states at the given z, with decay fits
/// of ||e_k|| and ||z_k||.
DecayCampaign decay_campaign(const LeanPolicy& policy, const RolloutConfig& config,
                             const std::vector<hopper::Vec4>& starts, int hops, int jobs);

struct DisturbanceResult {
  std::vector<io::HopLog> logs;
  int impulse_hop = 0;
  int recovery_hops = -1;  // hops after the impulse until ||z|| stays below tol
  double peak = 0.0;
};

DisturbanceResult disturbance_experiment(const LeanPolicy& policy, const RolloutConfig& config,
                                         const hopper::Vec2& dv, int impulse_hop,
                                         int total_hops, double tolerance);

/// Counter-clockwise square starting from the origin: (s,0), (s,s), (0,s),
/// (0,0).
std::vector<eval::Waypoint> square_waypoints(double side, int hops_per_side);

}  // namespace zdp::experiments
