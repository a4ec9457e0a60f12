#pragma once

#include <Eigen/Core>

namespace zdp::so3 {

using Vec3 = Eigen::Vector3d;

/// Scalar-first unit quaternion. Constructors renormalize; canonical() picks
/// the representative with w >= 0.
class UnitQuaternion {
 public:
  UnitQuaternion() = default;
  UnitQuaternion(double w, double x, double y, double z);

  static UnitQuaternion identity() { return {}; }

  double w() const { return w_; }
  double x() const { return x_; }
  double y() const { return y_; }
  double z() const { return z_; }
  Vec3 vec() const { return {x_, y_, z_}; }
  Eigen::Vector4d coeffs() const { return {w_, x_, y_, z_}; }

  UnitQuaternion conjugate() const;
  UnitQuaternion inverse() const { return conjugate(); }
  UnitQuaternion canonical() const;

  Eigen::Matrix3d rotation_matrix() const;

 private:
  double w_ = 1.0;
  double x_ = 0.0;
  double y_ = 0.0;
  double z_ = 0.0;
};

/// Axis-angle tangent vector (radians).
using RotVec = Vec3;

RotVec quat_log(const UnitQuaternion& q);
UnitQuaternion quat_exp(const RotVec& w);
UnitQuaternion quat_mul(const UnitQuaternion& a, const UnitQuaternion& b);
Vec3 rotate_vector(const UnitQuaternion& q, const Vec3& v);

/// Geodesic angle between the rotations represented by a and b, in [0, pi].
double angular_distance(const UnitQuaternion& a, const UnitQuaternion& b);

/// Quaternion kinematics: d/dt q = 0.5 q (x) (0, omega), omega in body frame.
Eigen::Vector4d quat_derivative(const Eigen::Vector4d& q, const Vec3& omega);

}  // namespace zdp::so3
