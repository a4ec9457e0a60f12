#pragma once

// Canonical 3D impulse hopper.
//
// Flight: ballistic translation, torque-limited body attitude driven by three
// reaction wheels under a quaternion PD law. Touchdown when the foot
// (leg_length below the body along the leg axis) reaches the ground plane.
// Stance: instantaneous leg impulse that keeps the velocity component
// orthogonal to the leg and restores the vertical takeoff speed needed to
// reach apex_height, followed by a fixed-duration hold with wheel spindown.
//
// Pre-impact states split into actuated coordinates
//   eta = (lean_x, lean_y, omega_x, omega_y)
// and unactuated coordinates
//   z   = (p_x, p_y, pdot_x, pdot_y).

#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "zdp/so3.hpp"

namespace zdp::hopper {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec8 = Eigen::Matrix<double, 8, 1>;
using Mat8 = Eigen::Matrix<double, 8, 8>;
using Mat82 = Eigen::Matrix<double, 8, 2>;

inline constexpr int kEtaDim = 4;
inline constexpr int kZDim = 4;
inline constexpr int kHopStateDim = 8;
inline constexpr int kInputDim = 2;

struct HopperParams {
  double mass = 2.0;
  double gravity = 9.81;
  double leg_length = 0.4;
  double apex_height = 0.5;
  double ground_duration = 0.12;
  Eigen::Matrix3d body_inertia = Eigen::Vector3d(0.03, 0.03, 0.02).asDiagonal();
  double flywheel_inertia = 1e-3;
  double torque_limit = 2.0;
  double spindown_gain = 0.01;
  Eigen::Matrix3d kp = Eigen::Vector3d(18.0, 18.0, 12.0).asDiagonal();
  Eigen::Matrix3d kd = Eigen::Vector3d(1.5, 1.5, 1.0).asDiagonal();
  double max_lean = 0.35;

  /// Throws Error(kInvalidArgument) when an invariant is violated.
  void validate() const;

  /// Vertical takeoff speed sqrt(2 g h_apex).
  double takeoff_speed() const;
  /// Touchdown-to-touchdown flight time when takeoff and touchdown heights
  /// coincide: 2 sqrt(2 h_apex / g).
  double nominal_flight_time() const;
};

struct FullState {
  Vec3 p = Vec3::Zero();
  so3::UnitQuaternion q;
  Vec3 pdot = Vec3::Zero();
  Vec3 omega = Vec3::Zero();  // body frame
  Vec3 wheel_speeds = Vec3::Zero();
};

struct PreImpactState {
  Vec4 eta = Vec4::Zero();
  Vec4 z = Vec4::Zero();
};

/// Desired lean angles at the next touchdown (the discrete input v_k).
using DiscreteInput = Vec2;

struct InputBox {
  Vec2 lower = Vec2::Constant(-0.25);
  Vec2 upper = Vec2::Constant(0.25);

  bool contains(const Vec2& v) const;
  Vec2 clamp(const Vec2& v) const;
};

enum class FlightTimeConvention {
  kFootContact,  // event foot_z = 0 while descending
  kNominal,      // flight ends after nominal_flight_time()
};

struct FlightOptions {
  double dt = 1e-3;
  double event_tolerance = 1e-8;
  double max_horizon = 5.0;
  FlightTimeConvention convention = FlightTimeConvention::kFootContact;
  bool record_trajectory = false;
};

struct FlightResult {
  std::vector<FullState> trajectory;  // empty unless record_trajectory
  FullState touchdown;
  double flight_time = 0.0;
};

/// Lean reference evaluated once per control tick from the current state and
/// the time since takeoff.
using LeanReference = std::function<Vec2(const FullState&, double)>;

// Geometry helpers.
Vec3 leg_axis(const so3::UnitQuaternion& q);
double foot_height(const FullState& x, const HopperParams& params);
Vec2 lean_angles(const so3::UnitQuaternion& q);
so3::UnitQuaternion lean_quaternion(const Vec2& lean);
/// Angle between the leg axis and the vertical.
double tilt(const so3::UnitQuaternion& q);

/// Flywheel-actuated attitude torque for tracking `lean`, saturated per axis.
Vec3 attitude_torque(const FullState& x, const Vec2& lean,
                     const HopperParams& params);

FlightResult flight_flow(const FullState& x0, const DiscreteInput& target,
                         const HopperParams& params,
                         const FlightOptions& options = {});
FlightResult flight_flow(const FullState& x0, const LeanReference& reference,
                         const HopperParams& params,
                         const FlightOptions& options = {});

/// Touchdown -> liftoff (after the stance hold).
FullState ground_map(const FullState& x_td, const HopperParams& params);

/// Pre-impact state k -> pre-impact state k+1 through the full hybrid model.
FullState return_map(const FullState& x_k, const DiscreteInput& v_k,
                     const HopperParams& params,
                     const FlightOptions& options = {});

struct ClosedFormStep {
  Vec4 eta_next = Vec4::Zero();
  Vec4 z_next = Vec4::Zero();
  Mat8 d_state = Mat8::Zero();   // d(eta', z') / d(eta, z)
  Mat82 d_input = Mat82::Zero();  // d(eta', z') / dv
};

/// Hop map under perfect lean tracking (lean = v_k, zero rates at the next
/// touchdown) and nominal flight time, with exact Jacobians.
ClosedFormStep closed_form_return_map(const Vec4& eta, const Vec4& z,
                                      const DiscreteInput& v,
                                      const HopperParams& params);

/// Takeoff velocity produced by the leg impulse for a given incoming velocity
/// and leg axis.
Vec3 takeoff_velocity(const Vec3& incoming, const Vec3& axis,
                      const HopperParams& params);

// Coordinate split for pre-impact states.
PreImpactState decompose(const FullState& x);
/// Inverse of decompose on yaw-free states: foot on the ground, nominal
/// vertical touchdown speed, wheels at rest.
FullState recompose(const PreImpactState& s, const HopperParams& params);

Vec8 to_hop_vector(const PreImpactState& s);
PreImpactState from_hop_vector(const Vec8& x);

}  // namespace zdp::hopper
