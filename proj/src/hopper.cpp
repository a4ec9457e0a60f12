#include "zdp/hopper.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "zdp/errors.hpp"

namespace zdp::hopper {
namespace {

const Vec3 kUnitZ = Vec3::UnitZ();

// sin(phi)/phi and its derivative divided by phi, with Taylor branches.
double sinc(double phi) {
  if (phi < 1e-4) return 1.0 - phi * phi / 6.0;
  return std::sin(phi) / phi;
}

double sinc_deriv_over_phi(double phi) {
  if (phi < 1e-3) return -1.0 / 3.0 + phi * phi / 30.0;
  return (phi * std::cos(phi) - std::sin(phi)) / (phi * phi * phi);
}

struct Derivative {
  Vec3 dp;
  Vec3 dpdot;
  Eigen::Vector4d dq;
  Vec3 domega;
  Vec3 dwheels;
};

// Integration state with the quaternion as a raw 4-vector; renormalized only
// after a full step.
struct RawState {
  Vec3 p;
  Vec3 pdot;
  Eigen::Vector4d q;
  Vec3 omega;
  Vec3 wheels;
};

RawState to_raw(const FullState& x) {
  return {x.p, x.pdot, x.q.coeffs(), x.omega, x.wheel_speeds};
}

FullState from_raw(const RawState& r) {
  FullState x;
  x.p = r.p;
  x.pdot = r.pdot;
  x.q = so3::UnitQuaternion(r.q[0], r.q[1], r.q[2], r.q[3]);
  x.omega = r.omega;
  x.wheel_speeds = r.wheels;
  return x;
}

Derivative flight_rhs(const RawState& s, const Vec3& torque,
                      const HopperParams& params,
                      const Eigen::Matrix3d& inertia_inv) {
  Derivative d;
  d.dp = s.pdot;
  d.dpdot = Vec3(0.0, 0.0, -params.gravity);
  d.dq = so3::quat_derivative(s.q, s.omega);
  const Vec3 momentum = params.body_inertia * s.omega;
  d.domega = inertia_inv * (torque - s.omega.cross(momentum));
  d.dwheels = -torque / params.flywheel_inertia;
  return d;
}

RawState axpy(const RawState& s, double h, const Derivative& d) {
  return {s.p + h * d.dp, s.pdot + h * d.dpdot, s.q + h * d.dq,
          s.omega + h * d.domega, s.wheels + h * d.dwheels};
}

// One RK4 step with the torque held constant (zero-order hold).
FullState rk4_step(const FullState& x, const Vec3& torque, double h,
                   const HopperParams& params,
                   const Eigen::Matrix3d& inertia_inv) {
  const RawState s0 = to_raw(x);
  const Derivative k1 = flight_rhs(s0, torque, params, inertia_inv);
  const Derivative k2 =
      flight_rhs(axpy(s0, 0.5 * h, k1), torque, params, inertia_inv);
  const Derivative k3 =
      flight_rhs(axpy(s0, 0.5 * h, k2), torque, params, inertia_inv);
  const Derivative k4 = flight_rhs(axpy(s0, h, k3), torque, params, inertia_inv);
  RawState out = s0;
  out.p += h / 6.0 * (k1.dp + 2.0 * k2.dp + 2.0 * k3.dp + k4.dp);
  out.pdot += h / 6.0 * (k1.dpdot + 2.0 * k2.dpdot + 2.0 * k3.dpdot + k4.dpdot);
  out.q += h / 6.0 * (k1.dq + 2.0 * k2.dq + 2.0 * k3.dq + k4.dq);
  out.omega +=
      h / 6.0 * (k1.domega + 2.0 * k2.domega + 2.0 * k3.domega + k4.domega);
  out.wheels += h / 6.0 *
                (k1.dwheels + 2.0 * k2.dwheels + 2.0 * k3.dwheels + k4.dwheels);
  return from_raw(out);
}

double foot_velocity(const FullState& x, const HopperParams& params) {
  const Vec3 n_dot =
      x.q.rotation_matrix() * x.omega.cross(kUnitZ);
  return x.pdot.z() - params.leg_length * n_dot.z();
}

bool finite(const FullState& x) {
  return x.p.allFinite() && x.pdot.allFinite() && x.omega.allFinite() &&
         x.wheel_speeds.allFinite() && x.q.coeffs().allFinite();
}

}  // namespace

void HopperParams::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::kInvalidArgument, what);
  };
  require(mass > 0 && gravity > 0 && leg_length > 0, "mass, gravity and leg_length must be positive");
  require(apex_height > 0, "apex_height must be positive");
  require(ground_duration > 0, "ground_duration must be positive");
  require(flywheel_inertia > 0 && torque_limit > 0 && spindown_gain > 0,
          "flywheel_inertia, torque_limit and spindown_gain must be positive");
  require(max_lean > 0 && max_lean < std::numbers::pi / 2, "max_lean must lie in (0, pi/2)");
  auto spd = [](const Eigen::Matrix3d& m) {
    if (!m.isApprox(m.transpose(), 1e-12)) return false;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff() > 0.0;
  };
  require(spd(body_inertia), "body_inertia must be SPD");
  require(spd(kp) && spd(kd), "PD gains must be SPD");
}

double HopperParams::takeoff_speed() const {
  return std::sqrt(2.0 * gravity * apex_height);
}

double HopperParams::nominal_flight_time() const {
  return 2.0 * std::sqrt(2.0 * apex_height / gravity);
}

bool InputBox::contains(const Vec2& v) const {
  return (v.array() >= lower.array()).all() && (v.array() <= upper.array()).all();
}

Vec2 InputBox::clamp(const Vec2& v) const {
  return v.cwiseMax(lower).cwiseMin(upper);
}

Vec3 leg_axis(const so3::UnitQuaternion& q) {
  return so3::rotate_vector(q, kUnitZ);
}

double foot_height(const FullState& x, const HopperParams& params) {
  return x.p.z() - params.leg_length * leg_axis(x.q).z();
}

Vec2 lean_angles(const so3::UnitQuaternion& q) {
  return so3::quat_log(q).head<2>();
}

so3::UnitQuaternion lean_quaternion(const Vec2& lean) {
  return so3::quat_exp(Vec3(lean.x(), lean.y(), 0.0));
}

double tilt(const so3::UnitQuaternion& q) {
  return std::acos(std::clamp(leg_axis(q).z(), -1.0, 1.0));
}

Vec3 attitude_torque(const FullState& x, const Vec2& lean,
                     const HopperParams& params) {
  const so3::UnitQuaternion q_d = lean_quaternion(lean);
  const Vec3 err = so3::quat_log(so3::quat_mul(q_d.inverse(), x.q));
  Vec3 u = -params.kp * err - params.kd * x.omega;
  return u.cwiseMax(-params.torque_limit).cwiseMin(params.torque_limit);
}

FlightResult flight_flow(const FullState& x0, const DiscreteInput& target,
                         const HopperParams& params,
                         const FlightOptions& options) {
  return flight_flow(
      x0, [target](const FullState&, double) { return target; }, params,
      options);
}

FlightResult flight_flow(const FullState& x0, const LeanReference& reference,
                         const HopperParams& params,
                         const FlightOptions& options) {
  const double foot0 = foot_height(x0, params);
  if (foot0 < -1e-9 || (foot0 <= 0.0 && foot_velocity(x0, params) <= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                "flight must start with the foot above ground or lifting off");
  }
  const Eigen::Matrix3d inertia_inv = params.body_inertia.inverse();
  const bool nominal = options.convention == FlightTimeConvention::kNominal;
  const double t_nominal = params.nominal_flight_time();

  FlightResult result;
  FullState x = x0;
  double t = 0.0;
  double foot_prev = foot0;
  if (options.record_trajectory) result.trajectory.push_back(x);

  while (true) {
    if (t > options.max_horizon || !finite(x)) {
      throw Error(ErrorCode::kNoTouchdown,
                  "foot did not reach the ground within the flight horizon");
    }
    const Vec3 torque = attitude_torque(x, reference(x, t), params);
    double h = options.dt;
    if (nominal && t + h >= t_nominal) {
      h = t_nominal - t;
      x = rk4_step(x, torque, h, params, inertia_inv);
      t = t_nominal;
      break;
    }
    FullState next = rk4_step(x, torque, h, params, inertia_inv);
    const double foot_next = foot_height(next, params);
    if (!nominal && foot_prev > 0.0 && foot_next <= 0.0 &&
        foot_velocity(next, params) < 0.0) {
      // Bisect on the sub-step length; keep the bracket end with the foot
      // still above ground.
      double lo = 0.0, hi = h;
      FullState at_lo = x;
      while (hi - lo > options.event_tolerance) {
        const double mid = 0.5 * (lo + hi);
        FullState trial = rk4_step(x, torque, mid, params, inertia_inv);
        if (foot_height(trial, params) > 0.0) {
          lo = mid;
          at_lo = trial;
        } else {
          hi = mid;
        }
      }
      x = at_lo;
      t += lo;
      break;
    }
    x = next;
    t += h;
    foot_prev = foot_next;
    if (options.record_trajectory) result.trajectory.push_back(x);
  }

  if (options.record_trajectory) result.trajectory.push_back(x);
  if (tilt(x.q) > params.max_lean) {
    throw Error(ErrorCode::kLeanOutOfCone,
                "leg tilt at touchdown exceeds max_lean");
  }
  result.touchdown = x;
  result.flight_time = t;
  return result;
}

Vec3 takeoff_velocity(const Vec3& incoming, const Vec3& axis,
                      const HopperParams& params) {
  const double d = incoming.dot(axis);
  const Vec3 tangential = incoming - d * axis;
  const double s = (params.takeoff_speed() - tangential.z()) / axis.z();
  return tangential + s * axis;
}

FullState ground_map(const FullState& x_td, const HopperParams& params) {
  const Vec3 n = leg_axis(x_td.q);
  if (n.z() < std::cos(params.max_lean)) {
    throw Error(ErrorCode::kLegSingular, "leg axis too shallow for the stance impulse");
  }
  FullState out = x_td;
  out.pdot = takeoff_velocity(x_td.pdot, n, params);
  // The planted leg holds the body attitude through stance.
  out.omega.setZero();
  out.wheel_speeds =
      x_td.wheel_speeds *
      std::exp(-params.spindown_gain * params.ground_duration / params.flywheel_inertia);
  return out;
}

FullState return_map(const FullState& x_k, const DiscreteInput& v_k,
                     const HopperParams& params, const FlightOptions& options) {
  return flight_flow(ground_map(x_k, params), v_k, params, options).touchdown;
}

ClosedFormStep closed_form_return_map(const Vec4& eta, const Vec4& z,
                                      const DiscreteInput& v,
                                      const HopperParams& params) {
  const double a = eta[0];
  const double b = eta[1];
  const double phi = std::hypot(a, b);
  const double f = sinc(phi);
  const double g = sinc_deriv_over_phi(phi);
  const Vec3 n(b * f, -a * f, std::cos(phi));
  if (n.z() < std::cos(params.max_lean)) {
    throw Error(ErrorCode::kLegSingular, "leg axis too shallow for the stance impulse");
  }
  Eigen::Matrix<double, 3, 2> dn_dlean;
  dn_dlean.col(0) << b * g * a, -f - a * g * a, -f * a;
  dn_dlean.col(1) << f + b * g * b, -a * g * b, -f * b;

  const double w = params.takeoff_speed();
  const double t_f = params.nominal_flight_time();
  const Vec3 v_in(z[2], z[3], -w);

  // Impulse map and its partials with respect to (incoming velocity, axis).
  const double d = v_in.dot(n);
  const Vec3 v_t = v_in - d * n;
  const double s = (w - v_t.z()) / n.z();
  const Vec3 v_out = v_t + s * n;

  const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
  const Eigen::Matrix3d dvt_dv = I - n * n.transpose();
  const Eigen::Matrix3d dvt_dn = -(n * v_in.transpose() + d * I);
  const Eigen::RowVector3d ds_dv = -dvt_dv.row(2) / n.z();
  const Eigen::RowVector3d ds_dn =
      (-dvt_dn.row(2) * n.z() - (w - v_t.z()) * kUnitZ.transpose()) /
      (n.z() * n.z());
  const Eigen::Matrix3d dout_dv = dvt_dv + n * ds_dv;
  const Eigen::Matrix3d dout_dn = dvt_dn + n * ds_dn + s * I;

  const Eigen::Matrix2d dvh_dvh = dout_dv.topLeftCorner<2, 2>();
  const Eigen::Matrix2d dvh_dlean = dout_dn.topRows<2>() * dn_dlean;

  ClosedFormStep step;
  step.eta_next << v[0], v[1], 0.0, 0.0;
  const Vec2 vh = v_out.head<2>();
  step.z_next << z[0] + t_f * vh[0], z[1] + t_f * vh[1], vh[0], vh[1];

  step.d_input.topRows<2>().setIdentity();
  // position rows
  step.d_state.block<2, 2>(4, 0) = t_f * dvh_dlean;
  step.d_state.block<2, 2>(4, 4).setIdentity();
  step.d_state.block<2, 2>(4, 6) = t_f * dvh_dvh;
  // velocity rows
  step.d_state.block<2, 2>(6, 0) = dvh_dlean;
  step.d_state.block<2, 2>(6, 6) = dvh_dvh;
  return step;
}

PreImpactState decompose(const FullState& x) {
  PreImpactState s;
  const Vec2 lean = lean_angles(x.q);
  s.eta << lean.x(), lean.y(), x.omega.x(), x.omega.y();
  s.z << x.p.x(), x.p.y(), x.pdot.x(), x.pdot.y();
  return s;
}

FullState recompose(const PreImpactState& s, const HopperParams& params) {
  FullState x;
  x.q = lean_quaternion(s.eta.head<2>());
  x.omega = Vec3(s.eta[2], s.eta[3], 0.0);
  x.p = Vec3(s.z[0], s.z[1], params.leg_length * leg_axis(x.q).z());
  x.pdot = Vec3(s.z[2], s.z[3], -params.takeoff_speed());
  return x;
}

Vec8 to_hop_vector(const PreImpactState& s) {
  Vec8 x;
  x << s.eta, s.z;
  return x;
}

PreImpactState from_hop_vector(const Vec8& x) {
  return {x.head<4>(), x.tail<4>()};
}

}  // namespace zdp::hopper
