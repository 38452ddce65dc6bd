#include "surfelio/geometry.hpp"

#include <cmath>

namespace surfelio {

namespace {

Eigen::Quaterniond canonical(Eigen::Quaterniond q) {
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  return q;
}

}  // namespace

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return m;
}

Rotation::Rotation(const Eigen::Quaterniond& q) : q_(canonical(q)) {}

// Eigen's matrix-to-quaternion conversion branches on the largest diagonal
// element, which stays well conditioned near a half turn.
Rotation::Rotation(const Mat3& m) : q_(canonical(Eigen::Quaterniond(m))) {}

double Rotation::angle() const {
  return 2.0 * std::atan2(q_.vec().norm(), q_.w());
}

Rotation exp_so3(const Vec3& phi) {
  const double theta = phi.norm();
  const double half = 0.5 * theta;
  double k;  // sin(theta/2) / theta
  if (theta < 1e-6) {
    k = 0.5 - theta * theta / 48.0;
  } else {
    k = std::sin(half) / theta;
  }
  Eigen::Quaterniond q(std::cos(half), k * phi.x(), k * phi.y(), k * phi.z());
  return Rotation(q);
}

Vec3 log_so3(const Rotation& r) {
  const Eigen::Quaterniond& q = r.quat();
  const double n = q.vec().norm();
  const double w = q.w();
  if (n < 1e-8) {
    // theta / sin(theta/2) ~ 2 / w * (1 + n^2 / (6 w^2))
    return (2.0 / w) * (1.0 + n * n / (6.0 * w * w)) * q.vec();
  }
  const double theta = 2.0 * std::atan2(n, w);
  return (theta / n) * q.vec();
}

Mat3 right_jacobian(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const Mat3 k = skew(phi);
  if (theta2 < 1e-10) {
    return Mat3::Identity() - 0.5 * k + (1.0 / 6.0) * k * k;
  }
  const double theta = std::sqrt(theta2);
  const double a = (1.0 - std::cos(theta)) / theta2;
  const double b = (theta - std::sin(theta)) / (theta2 * theta);
  return Mat3::Identity() - a * k + b * k * k;
}

Mat3 right_jacobian_inv(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const Mat3 k = skew(phi);
  if (theta2 < 1e-10) {
    return Mat3::Identity() + 0.5 * k + (1.0 / 12.0) * k * k;
  }
  const double theta = std::sqrt(theta2);
  const double c = 1.0 / theta2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Mat3::Identity() + 0.5 * k + c * k * k;
}

Rotation slerp(const Rotation& ra, const Rotation& rb, double s) {
  if (s == 0.0) return ra;
  if (s == 1.0) return rb;
  return ra * exp_so3(s * log_so3(ra.inverse() * rb));
}

Pose pose_interpolate(const Pose& ta, const Pose& tb, double s) {
  return Pose(slerp(ta.rot, tb.rot, s), (1.0 - s) * ta.trans + s * tb.trans);
}

}  // namespace surfelio
