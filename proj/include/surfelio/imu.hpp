#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "surfelio/geometry.hpp"

namespace surfelio {

struct ImuSample {
  Timestamp t = 0.0;
  Vec3 omega = Vec3::Zero();  // rad/s, body frame
  Vec3 accel = Vec3::Zero();  // specific force m/s^2, body frame
};

struct ImuNoise {
  double gyro_noise = 1.0e-3;       // rad/s/sqrt(Hz)
  double accel_noise = 1.0e-2;      // m/s^2/sqrt(Hz)
  double gyro_bias_walk = 1.0e-5;   // rad/s^2/sqrt(Hz)
  double accel_bias_walk = 1.0e-4;  // m/s^3/sqrt(Hz)
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);

  void validate() const;
};

/// Tangent layout of a state and of the inertial residual.
namespace idx {
inline constexpr int kRot = 0;
inline constexpr int kVel = 3;
inline constexpr int kPos = 6;
inline constexpr int kBg = 9;
inline constexpr int kBa = 12;
inline constexpr int kDim = 15;
}  // namespace idx

using Vec15 = Eigen::Matrix<double, 15, 1>;
using Mat15 = Eigen::Matrix<double, 15, 15>;

struct StateEstimate {
  Rotation rot;
  Vec3 pos = Vec3::Zero();
  Vec3 vel = Vec3::Zero();
  Vec3 bg = Vec3::Zero();
  Vec3 ba = Vec3::Zero();

  Pose pose() const { return Pose(rot, pos); }

  /// Right perturbation on rotation, additive elsewhere, layout per idx.
  StateEstimate boxplus(const Eigen::Ref<const Vec15>& delta) const;
};

struct StampedPose {
  Timestamp t = 0.0;
  Pose pose;
};

/// Dense pose samples over one interval, strictly increasing in time.
using PropagatedPoseSeq = std::vector<StampedPose>;

struct Propagation {
  PropagatedPoseSeq poses;
  StateEstimate end;  // state at the far end of the integration
};

/// Midpoint integration from the first sample's time to the last. `x0` is
/// the state at samples.front().t. Throws on unordered or empty input.
Propagation propagate(const StateEstimate& x0, std::span<const ImuSample> samples, const ImuNoise& noise);

/// Time-reversed integration; `x1` is the state at samples.back().t. The
/// returned poses are in ascending time and `end` is the state at
/// samples.front().t. Exact inverse of propagate up to rounding.
Propagation propagate_backward(const StateEstimate& x1, std::span<const ImuSample> samples,
                               const ImuNoise& noise);

/// Linear interpolation of the sample stream at t.
ImuSample interpolate_sample(const ImuSample& a, const ImuSample& b, Timestamp t);

/// Samples covering [a, b]: interpolated endpoints plus every raw sample
/// strictly inside. `buffer` must be time ordered. When the buffer ends
/// before b by at most `hold`, the last sample is held constant.
/// Throws OutOfRange when coverage is insufficient.
std::vector<ImuSample> slice_samples(std::span<const ImuSample> buffer, Timestamp a, Timestamp b,
                                     double hold = 0.0);

}  // namespace surfelio
