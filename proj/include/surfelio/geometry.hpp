#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace surfelio {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Seconds since the dataset epoch.
using Timestamp = double;

Mat3 skew(const Vec3& v);

/// Unit quaternion rotation, canonicalized so that w >= 0.
class Rotation {
 public:
  Rotation() : q_(Eigen::Quaterniond::Identity()) {}
  explicit Rotation(const Eigen::Quaterniond& q);
  explicit Rotation(const Mat3& m);

  static Rotation identity() { return Rotation(); }
  static Rotation from_wxyz(double w, double x, double y, double z) {
    return Rotation(Eigen::Quaterniond(w, x, y, z));
  }

  const Eigen::Quaterniond& quat() const { return q_; }
  Mat3 matrix() const { return q_.toRotationMatrix(); }

  Rotation inverse() const { return Rotation(q_.conjugate()); }
  Vec3 operator*(const Vec3& v) const { return q_ * v; }
  Rotation operator*(const Rotation& o) const { return Rotation(q_ * o.q_); }

  /// Rotation angle in [0, pi].
  double angle() const;

 private:
  Eigen::Quaterniond q_;
};

Rotation exp_so3(const Vec3& phi);

/// Axis-angle vector with angle in [0, pi].
Vec3 log_so3(const Rotation& r);

/// Right Jacobian of SO(3) and its inverse.
Mat3 right_jacobian(const Vec3& phi);
Mat3 right_jacobian_inv(const Vec3& phi);

/// ra * Exp(s * Log(ra^-1 * rb)).
Rotation slerp(const Rotation& ra, const Rotation& rb, double s);

struct Pose {
  Rotation rot;
  Vec3 trans = Vec3::Zero();

  Pose() = default;
  Pose(const Rotation& r, const Vec3& t) : rot(r), trans(t) {}

  static Pose identity() { return Pose(); }

  Vec3 operator*(const Vec3& f) const { return rot * f + trans; }
  Pose operator*(const Pose& o) const { return Pose(rot * o.rot, rot * o.trans + trans); }
  Pose inverse() const {
    Rotation ri = rot.inverse();
    return Pose(ri, -(ri * trans));
  }
};

inline Vec3 transform_point(const Pose& t, const Vec3& f) { return t * f; }

/// Rotation by slerp, translation by linear blend.
Pose pose_interpolate(const Pose& ta, const Pose& tb, double s);

/// Angle between two rotations in radians.
inline double rotation_distance(const Rotation& a, const Rotation& b) {
  return (a.inverse() * b).angle();
}

inline double rad2deg(double r) { return r * 180.0 / M_PI; }
inline double deg2rad(double d) { return d * M_PI / 180.0; }

}  // namespace surfelio
