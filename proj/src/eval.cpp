#include "zdp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <sstream>

#include "zdp/parallel.hpp"

namespace zdp::eval {
namespace {

Vec4 relative_z(const FullState& x, const Setpoint& sp) {
  const hopper::PreImpactState s = hopper::decompose(x);
  Vec4 z = s.z;
  z.head<2>() -= sp.p;
  z.tail<2>() -= sp.v;
  return z;
}

// Time until the body drops to the touchdown height L n_z on the current
// ballistic arc.
double time_to_touchdown(const FullState& x, const hopper::HopperParams& params) {
  const double g = params.gravity;
  const double h = x.p.z() - params.leg_length * hopper::leg_axis(x.q).z();
  const double vz = x.pdot.z();
  const double disc = vz * vz + 2.0 * g * h;
  return disc > 0.0 ? (vz + std::sqrt(disc)) / g : std::max(vz / g, 0.0);
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return (1.0 - w) * v[lo] + w * v[hi];
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  return out;
}

}  // namespace

LeanPolicy network_policy(policy::PolicyParams params, policy::OutputBox box) {
  return [params = std::move(params), box = std::move(box)](const Vec4& z) -> Vec2 {
    const Eigen::VectorXd v = policy::policy_forward(params, box, z);
    return Vec2(v(0), v(1));
  };
}

LeanPolicy raibert_policy(policy::RaibertParams raibert, hopper::HopperParams params,
                          hopper::InputBox box) {
  return [=](const Vec4& z) { return policy::raibert(z, raibert, params, box); };
}

zerodyn::ManifoldMap as_manifold_map(LeanPolicy policy) {
  return [policy = std::move(policy)](const Eigen::VectorXd& z) -> Eigen::VectorXd {
    return policy(Vec4(z));
  };
}

RolloutConfig default_rollout_config(const hopper::HopperParams& params) {
  RolloutConfig c;
  c.hopper = params;
  c.cost = model::default_hopper_cost(params);
  return c;
}

FullState pre_impact_state(const Vec4& z, const hopper::HopperParams& params,
                           const Vec2& lean) {
  hopper::PreImpactState s;
  s.eta << lean, 0.0, 0.0;
  s.z = z;
  return hopper::recompose(s, params);
}

HopResult simulate_hop(const FullState& x, int k, const LeanPolicy& policy,
                       const Setpoint& setpoint, const RolloutConfig& config) {
  const hopper::HopperParams& params = config.hopper;
  HopResult out;
  HopLog& log = out.log;
  log.k = k;
  log.z = relative_z(x, setpoint);
  log.eta = hopper::decompose(x).eta;
  log.psi = policy(log.z);
  log.e = log.eta;
  log.e.head<2>() -= log.psi;

  Vec2 last = log.psi;
  const hopper::LeanReference reference = [&](const FullState& s, double) {
    const double tau = time_to_touchdown(s, params);
    FullState predicted = s;
    predicted.p.head<2>() += tau * s.pdot.head<2>();
    last = policy(relative_z(predicted, setpoint));
    return last;
  };
  try {
    const FullState lifted = hopper::ground_map(x, params);
    const hopper::FlightResult flight =
        hopper::flight_flow(lifted, reference, params, config.flight);
    out.next = flight.touchdown;
    log.flight_time = flight.flight_time;
  } catch (const Error& e) {
    throw RolloutDiverged(k, e.what());
  }
  log.v = last;
  Eigen::VectorXd xs(8);
  xs << log.eta, log.z;
  log.cost = config.cost.stage(xs, log.v);
  return out;
}

std::vector<HopLog> rollout(const LeanPolicy& policy, const FullState& x0, int n_hops,
                            const RolloutConfig& config,
                            const std::vector<Disturbance>& disturbances,
                            const Setpoint& setpoint, std::vector<FullState>* states) {
  if (n_hops < 0) throw Error(ErrorCode::kInvalidArgument, "hop count must be nonnegative");
  if (hopper::tilt(x0.q) > config.hopper.max_lean) {
    throw Error(ErrorCode::kLeanOutOfCone, "initial state is outside the lean cone");
  }
  std::vector<HopLog> logs;
  logs.reserve(static_cast<std::size_t>(n_hops));
  if (states) states->clear();
  FullState x = x0;
  for (int k = 0; k < n_hops; ++k) {
    for (const Disturbance& d : disturbances)
      if (d.hop == k) x.pdot.head<2>() += d.dv;
    if (states) states->push_back(x);
    HopResult r = simulate_hop(x, k, policy, setpoint, config);
    logs.push_back(r.log);
    x = r.next;
  }
  if (states) states->push_back(x);
  return logs;
}

// ------------------------------------------------------------ decay fits

DecayFit fit_decay(const std::vector<double>& series) {
  if (series.size() < 5) {
    throw Error(ErrorCode::kInvalidArgument, "decay fit needs at least 5 points");
  }
  DecayFit fit;
  std::size_t n = series.size();
  for (std::size_t k = 0; k < series.size(); ++k) {
    if (!std::isfinite(series[k]) || series[k] < 0.0) {
      throw Error(ErrorCode::kNonPositive, "decay series has a negative or non-finite entry");
    }
    if (series[k] == 0.0) {
      n = k;
      fit.truncated = true;
      break;
    }
  }
  if (n < 2) throw Error(ErrorCode::kNonPositive, "decay series reaches zero too early");

  double sk = 0, sy = 0, skk = 0, sky = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double y = std::log(series[k]);
    sk += k;
    sy += y;
    skk += static_cast<double>(k * k);
    sky += k * y;
  }
  const double dn = static_cast<double>(n);
  const double slope = (dn * sky - sk * sy) / (dn * skk - sk * sk);
  const double intercept = (sy - slope * sk) / dn;
  fit.lambda = std::clamp(std::exp(slope), 0.0, 1.0);
  const double log_lambda = std::log(std::max(fit.lambda, std::numeric_limits<double>::min()));

  double ss = 0.0;
  double log_m = intercept;
  for (std::size_t k = 0; k < n; ++k) {
    const double y = std::log(series[k]);
    const double r = y - (intercept + slope * static_cast<double>(k));
    ss += r * r;
    log_m = std::max(log_m, y - log_lambda * static_cast<double>(k));
  }
  fit.residual = std::sqrt(ss / dn);
  fit.M = std::exp(log_m);
  fit.gain = fit.M / series[0];
  fit.points = static_cast<int>(n);
  fit.bound_holds = true;
  for (std::size_t k = 0; k < n; ++k) {
    if (series[k] > fit.M * std::pow(fit.lambda, static_cast<double>(k)) * (1.0 + 1e-12)) {
      fit.bound_holds = false;
    }
  }
  return fit;
}

ContractionFit fit_contraction(const std::vector<double>& series) {
  if (series.size() < 3) {
    throw Error(ErrorCode::kInvalidArgument, "contraction fit needs at least 3 points");
  }
  const std::size_t n = series.size() - 1;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double x = series[k], y = series[k + 1];
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double dn = static_cast<double>(n);
  const double den = dn * sxx - sx * sx;
  ContractionFit fit;
  fit.alpha = den > 0.0 ? std::max(0.0, (dn * sxy - sx * sy) / den) : 0.0;
  fit.beta = 0.0;
  for (std::size_t k = 0; k < n; ++k)
    fit.beta = std::max(fit.beta, series[k + 1] - fit.alpha * series[k]);
  return fit;
}

// ------------------------------------------------------------ residuals

ResidualStats invariance_residual(const zerodyn::ManifoldMap& psi,
                                  const std::vector<Eigen::VectorXd>& samples,
                                  const model::Model& model,
                                  const training::SolveConfig& config) {
  const training::LossResult r = training::invariance_loss(psi, samples, model, config);
  std::vector<double> values;
  for (const auto& s : r.samples)
    if (!s.skipped) values.push_back(s.loss);
  ResidualStats st;
  st.samples = static_cast<int>(values.size());
  st.skipped = r.skipped;
  st.mean = r.loss;
  if (!values.empty()) {
    st.max = *std::max_element(values.begin(), values.end());
    st.median = quantile(values, 0.5);
    st.q90 = quantile(values, 0.9);
    st.q99 = quantile(values, 0.99);
  }
  return st;
}

// ------------------------------------------------------------ LQR agreement

Agreement lqr_agreement(const zerodyn::ManifoldMap& psi, const model::Model& model,
                        double radius, int grid_n) {
  if (!(radius > 0.0) || grid_n < 2) {
    throw Error(ErrorCode::kInvalidArgument, "agreement grid needs radius > 0 and grid_n >= 2");
  }
  Agreement a;
  a.G = model::lqr_manifold_gain(model);
  const int nz = model.z_dim();
  const trajopt::InputBounds& bounds = model.bounds();

  std::vector<int> idx(static_cast<std::size_t>(nz), 0);
  while (true) {
    Eigen::VectorXd z(nz);
    for (int i = 0; i < nz; ++i)
      z(i) = -radius + 2.0 * radius * idx[static_cast<std::size_t>(i)] / (grid_n - 1);
    if (z.norm() <= radius * (1.0 + 1e-12)) {
      AgreementPoint p{z, psi(z), a.G * z};
      if (!bounds.contains(p.lqr)) {
        throw Error(ErrorCode::kConstraintActive,
                    "LQR command leaves the input box inside radius " + std::to_string(radius));
      }
      a.max_deviation = std::max(a.max_deviation, (p.policy - p.lqr).cwiseAbs().maxCoeff());
      a.points.push_back(std::move(p));
    }
    int d = 0;
    while (d < nz && ++idx[static_cast<std::size_t>(d)] == grid_n) idx[static_cast<std::size_t>(d++)] = 0;
    if (d == nz) break;
  }
  a.at_origin = psi(Eigen::VectorXd::Zero(nz)).cwiseAbs().maxCoeff();
  return a;
}

// ------------------------------------------------------------ waypoints

WaypointResult waypoint_track(const LeanPolicy& policy, const std::vector<Waypoint>& waypoints,
                              const FullState& x0, const RolloutConfig& config) {
  if (waypoints.empty()) throw Error(ErrorCode::kInvalidArgument, "no waypoints given");
  WaypointResult out;
  FullState x = x0;
  int hop = 0;
  for (std::size_t leg = 0; leg < waypoints.size(); ++leg) {
    const Waypoint& w = waypoints[leg];
    if (w.hops < 1) throw Error(ErrorCode::kInvalidArgument, "waypoint hop count must be positive");
    const Setpoint sp{w.p, w.v};
    std::vector<double> vel_err;
    for (int h = 0; h < w.hops; ++h, ++hop) {
      HopResult r = simulate_hop(x, hop, policy, sp, config);
      out.logs.push_back(r.log);
      out.track.push_back({hop, static_cast<int>(leg), x.p.head<2>(), x.pdot.head<2>(), w.p, w.v});
      vel_err.push_back((x.pdot.head<2>() - w.v).norm());
      x = r.next;
    }
    LegStats st;
    st.leg = static_cast<int>(leg);
    st.corner_error = (x.p.head<2>() - w.p).norm();
    double mean = 0.0;
    for (double e : vel_err) mean += e;
    mean /= static_cast<double>(vel_err.size());
    double var = 0.0;
    for (double e : vel_err) var += (e - mean) * (e - mean);
    var /= static_cast<double>(vel_err.size());
    st.velocity_error_mean = mean;
    st.velocity_error_2sigma = 2.0 * std::sqrt(var);
    out.legs.push_back(st);
  }
  out.track.push_back({hop, static_cast<int>(waypoints.size()) - 1, x.p.head<2>(),
                       x.pdot.head<2>(), waypoints.back().p, waypoints.back().v});
  return out;
}

std::vector<Waypoint> read_waypoints(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) ||
      split_csv(line) != std::vector<std::string>{"px", "py", "vx_ref", "vy_ref", "hops"}) {
    throw Error(ErrorCode::kCorruptFile, "waypoint file must start with px,py,vx_ref,vy_ref,hops");
  }
  std::vector<Waypoint> out;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 5) throw Error(ErrorCode::kCorruptFile, "waypoint row needs 5 columns");
    try {
      std::size_t used = 0;
      Waypoint w;
      w.p = Vec2(std::stod(cells[0]), std::stod(cells[1]));
      w.v = Vec2(std::stod(cells[2]), std::stod(cells[3]));
      w.hops = std::stoi(cells[4], &used);
      if (used != cells[4].size() || w.hops < 1) throw std::invalid_argument("hops");
      out.push_back(w);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::kCorruptFile, "bad waypoint row: " + line);
    }
  }
  if (out.empty()) throw Error(ErrorCode::kInvalidArgument, "waypoint file has no waypoints");
  return out;
}

// ------------------------------------------------------------ optimality

std::vector<double> optimality_ratios(const zerodyn::ManifoldMap& psi,
                                      const model::Model& model,
                                      const std::vector<Eigen::VectorXd>& starts,
                                      const training::SolveConfig& config) {
  std::vector<double> ratios(starts.size());
  const auto& f = model.dynamics();
  parallel_for(starts.size(), config.jobs, [&](std::size_t i) {
    std::vector<Eigen::VectorXd> inputs;
    Eigen::VectorXd x = starts[i];
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(model.input_dim());
    for (int s = 0; s < config.horizon; ++s) {
      // The next touchdown's z does not depend on the current input.
      const Eigen::VectorXd z1 = model.project(f(x, zero, false).next).z;
      const Eigen::VectorXd v = model.bounds().clamp(psi(z1));
      inputs.push_back(v);
      x = f(x, v, false).next;
    }
    const double policy_cost = trajopt::rollout_cost(starts[i], inputs, f, model.cost());
    const trajopt::IlqrSolution sol =
        trajopt::ilqr_solve(starts[i], inputs, f, model.cost(), model.bounds(), config.ilqr);
    ratios[i] = policy_cost / sol.total_cost;
  });
  return ratios;
}

}  // namespace zdp::eval
