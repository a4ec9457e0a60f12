#include "zdp/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "zdp/parallel.hpp"

namespace zdp::experiments {

std::vector<hopper::Vec4> ball_samples(int n, double radius, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<hopper::Vec4> out;
  for (int i = 0; i < n; ++i) {
    hopper::Vec4 d;
    do {
      for (int j = 0; j < 4; ++j) d(j) = normal(rng);
    } while (d.norm() < 1e-12);
    out.push_back(d.normalized() * radius * std::pow(unit(rng), 0.25));
  }
  return out;
}

DecayCampaign decay_campaign(const LeanPolicy& policy, const RolloutConfig& config,
                             const std::vector<hopper::Vec4>& starts, int hops, int jobs) {
  DecayCampaign c;
  c.starts = starts;
  const std::size_t n = starts.size();
  c.e_fits.resize(n);
  c.z_fits.resize(n);
  c.contraction.resize(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    const auto logs =
        eval::rollout(policy, eval::pre_impact_state(starts[i], config.hopper), hops, config);
    std::vector<double> e, z;
    for (const auto& l : logs) {
      e.push_back(l.e.norm());
      z.push_back(l.z.norm());
    }
    c.e_fits[i] = eval::fit_decay(e);
    c.z_fits[i] = eval::fit_decay(z);
    c.contraction[i] = eval::fit_contraction(e);
  });
  for (std::size_t i = 0; i < n; ++i) {
    c.max_lambda_e = std::max(c.max_lambda_e, c.e_fits[i].lambda);
    c.max_lambda_z = std::max(c.max_lambda_z, c.z_fits[i].lambda);
    c.max_alpha = std::max(c.max_alpha, c.contraction[i].alpha);
    c.bounds_hold = c.bounds_hold && c.e_fits[i].bound_holds && c.z_fits[i].bound_holds;
  }
  return c;
}

DisturbanceResult disturbance_experiment(const LeanPolicy& policy, const RolloutConfig& config,
                                         const hopper::Vec2& dv, int impulse_hop,
                                         int total_hops, double tolerance) {
  DisturbanceResult r;
  r.impulse_hop = impulse_hop;
  r.logs = eval::rollout(policy, eval::pre_impact_state(hopper::Vec4::Zero(), config.hopper),
                         total_hops, config, {{impulse_hop, dv}});
  int last_bad = impulse_hop - 1;
  for (const auto& l : r.logs) {
    if (l.k < impulse_hop) continue;
    r.peak = std::max(r.peak, l.z.norm());
    if (l.z.norm() >= tolerance) last_bad = l.k;
  }
  if (last_bad + 1 < total_hops) r.recovery_hops = last_bad + 1 - impulse_hop;
  return r;
}

std::vector<eval::Waypoint> square_waypoints(double side, int hops_per_side) {
  return {{{side, 0.0}, {0.0, 0.0}, hops_per_side},
          {{side, side}, {0.0, 0.0}, hops_per_side},
          {{0.0, side}, {0.0, 0.0}, hops_per_side},
          {{0.0, 0.0}, {0.0, 0.0}, hops_per_side}};
}

}  // namespace zdp::experiments
