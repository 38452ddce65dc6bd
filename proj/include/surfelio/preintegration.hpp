#pragma once

#include <span>
#include <vector>

#include "surfelio/imu.hpp"

namespace surfelio {

using Mat93 = Eigen::Matrix<double, 9, 3>;

/// Gravity-free accumulation of body-frame IMU samples between two knots,
/// with midpoint integration, first-order bias Jacobians and discrete
/// covariance propagation. Immutable after construction.
///
/// Error-state layout is (dtheta, dv, dp, dbg, dba), matching idx.
class Preintegration {
 public:
  Preintegration(std::span<const ImuSample> samples, const Vec3& bg_lin, const Vec3& ba_lin,
                 const ImuNoise& noise);

  /// Same samples, new linearization biases.
  Preintegration relinearized(const Vec3& bg_lin, const Vec3& ba_lin) const {
    return Preintegration(samples_, bg_lin, ba_lin, noise_);
  }

  const Rotation& delta_rot() const { return dr_; }
  const Vec3& delta_vel() const { return dv_; }
  const Vec3& delta_pos() const { return dp_; }
  double dt() const { return dt_; }
  const Mat15& covariance() const { return cov_; }
  /// Rows (theta, v, p) w.r.t. gyro / accel bias.
  const Mat93& jac_bg() const { return j_bg_; }
  const Mat93& jac_ba() const { return j_ba_; }
  const Vec3& bg_lin() const { return bg_lin_; }
  const Vec3& ba_lin() const { return ba_lin_; }
  Timestamp t_begin() const { return samples_.front().t; }
  Timestamp t_end() const { return samples_.back().t; }
  const std::vector<ImuSample>& samples() const { return samples_; }

  /// Lower-triangular W with W^T W = covariance^-1.
  const Mat15& sqrt_info() const { return sqrt_info_; }

 private:
  std::vector<ImuSample> samples_;
  ImuNoise noise_;
  Vec3 bg_lin_;
  Vec3 ba_lin_;

  Rotation dr_;
  Vec3 dv_ = Vec3::Zero();
  Vec3 dp_ = Vec3::Zero();
  double dt_ = 0.0;
  Mat15 cov_ = Mat15::Zero();
  Mat93 j_bg_ = Mat93::Zero();
  Mat93 j_ba_ = Mat93::Zero();
  Mat15 sqrt_info_ = Mat15::Zero();
};

struct PreintResidual {
  Vec15 r;        // whitened
  Mat15 jac_i;    // w.r.t. the state at the interval start
  Mat15 jac_j;    // w.r.t. the state at the interval end
};

/// Standard on-manifold inertial residual with gravity reinstated and bias
/// random-walk terms, whitened by the preintegrated covariance.
PreintResidual preint_residual(const Preintegration& pre, const StateEstimate& xi, const StateEstimate& xj,
                               const ImuNoise& noise);

/// Unwhitened residual only.
Vec15 preint_raw_residual(const Preintegration& pre, const StateEstimate& xi, const StateEstimate& xj,
                          const ImuNoise& noise);

}  // namespace surfelio
