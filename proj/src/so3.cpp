#include "zdp/so3.hpp"

#include <cmath>

#include <Eigen/Geometry>

namespace zdp::so3 {
namespace {

// Below this angle log/exp switch to their Taylor expansions.
constexpr double kSmallAngle = 1e-6;

}  // namespace

UnitQuaternion::UnitQuaternion(double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  w_ = w / n;
  x_ = x / n;
  y_ = y / n;
  z_ = z / n;
}

UnitQuaternion UnitQuaternion::conjugate() const {
  UnitQuaternion q = *this;
  q.x_ = -x_;
  q.y_ = -y_;
  q.z_ = -z_;
  return q;
}

UnitQuaternion UnitQuaternion::canonical() const {
  if (w_ >= 0.0) return *this;
  UnitQuaternion q;
  q.w_ = -w_;
  q.x_ = -x_;
  q.y_ = -y_;
  q.z_ = -z_;
  return q;
}

Eigen::Matrix3d UnitQuaternion::rotation_matrix() const {
  return Eigen::Quaterniond(w_, x_, y_, z_).toRotationMatrix();
}

RotVec quat_log(const UnitQuaternion& q_in) {
  const UnitQuaternion q = q_in.canonical();
  const Vec3 v = q.vec();
  const double s = v.norm();
  // atan2 is accurate across the whole range, including angles near pi where
  // acos(w) loses precision.
  const double half = std::atan2(s, q.w());
  if (2.0 * half < kSmallAngle) {
    // angle/sin(angle/2) = 2/w * (1 + s^2/(3 w^2)) + O(s^4)
    const double w = q.w();
    return v * (2.0 / w) * (1.0 - s * s / (3.0 * w * w));
  }
  return v * (2.0 * half / s);
}

UnitQuaternion quat_exp(const RotVec& w) {
  const double angle = w.norm();
  const double half = 0.5 * angle;
  double k;  // sin(angle/2)/angle
  if (angle < kSmallAngle) {
    k = 0.5 - angle * angle / 48.0;
  } else {
    k = std::sin(half) / angle;
  }
  return UnitQuaternion(std::cos(half), k * w.x(), k * w.y(), k * w.z());
}

UnitQuaternion quat_mul(const UnitQuaternion& a, const UnitQuaternion& b) {
  return UnitQuaternion(
      a.w() * b.w() - a.x() * b.x() - a.y() * b.y() - a.z() * b.z(),
      a.w() * b.x() + a.x() * b.w() + a.y() * b.z() - a.z() * b.y(),
      a.w() * b.y() - a.x() * b.z() + a.y() * b.w() + a.z() * b.x(),
      a.w() * b.z() + a.x() * b.y() - a.y() * b.x() + a.z() * b.w());
}

Vec3 rotate_vector(const UnitQuaternion& q, const Vec3& v) {
  // v' = v + 2 r x (r x v + w v), r the vector part.
  const Vec3 r = q.vec();
  const Vec3 t = 2.0 * r.cross(v);
  return v + q.w() * t + r.cross(t);
}

double angular_distance(const UnitQuaternion& a, const UnitQuaternion& b) {
  return quat_log(quat_mul(a.inverse(), b)).norm();
}

Eigen::Vector4d quat_derivative(const Eigen::Vector4d& q, const Vec3& omega) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return 0.5 * Eigen::Vector4d(-x * omega.x() - y * omega.y() - z * omega.z(),
                               w * omega.x() + y * omega.z() - z * omega.y(),
                               w * omega.y() - x * omega.z() + z * omega.x(),
                               w * omega.z() + x * omega.y() - y * omega.x());
}

}  // namespace zdp::so3
