#pragma once

#include <span>
#include <string>

#include "surfelio/imu.hpp"

namespace surfelio {

enum class Alignment { None, Rigid };

Alignment parse_alignment(const std::string& s);

struct AteReport {
  double rmse = 0.0;
  double mean = 0.0;
  double median = 0.0;
  double max = 0.0;
  Vec3 axis_rmse = Vec3::Zero();
  Pose alignment;  // applied to the estimate before differencing
  std::size_t matched = 0;
};

/// Each estimated pose is paired with the ground-truth pose nearest in time,
/// if within `tolerance` seconds. With Alignment::Rigid the estimate is first
/// moved by the least-squares rotation and translation (no scale) onto the
/// ground truth. Throws std::invalid_argument when nothing matches.
AteReport evaluate_ate(std::span<const StampedPose> gt, std::span<const StampedPose> est, Alignment align,
                       double tolerance = 0.01);

}  // namespace surfelio
