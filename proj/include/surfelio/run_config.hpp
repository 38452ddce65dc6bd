#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "surfelio/estimator.hpp"
#include "surfelio/loop_closure.hpp"
#include "surfelio/surfel_map.hpp"
#include "surfelio/sync.hpp"

namespace surfelio {

/// Every knob of an odometry run. Text form is one `key = value` per line,
/// '#' starts a comment; unknown keys and malformed values are rejected.
///
///   map.leaf_size = 0.1
///   surfel.depths = 1,2,3,4,5
///   extrinsic.1 = tx,ty,tz,qx,qy,qz,qw
struct RunConfig {
  MapConfig map;
  SyncConfig sync;
  SolverConfig solver;
  ImuNoise imu;
  KeyframeThresholds keyframe;
  LoopConfig loop;
  std::map<int, Pose> extrinsics;  // sensor in body, per lidar id

  double init_duration = 1.0;      // s of rest used for static initialization
  int loop_retry_keyframes = 10;   // keyframes between two loop attempts
  // Experiment knob: extra yaw added to the odometry at each keyframe, per
  // metre travelled since the previous one (rad/m). Zero in normal runs.
  double drift_yaw_per_meter = 0.0;

  std::filesystem::path dataset;
  std::filesystem::path output;
  bool export_map = false;
  std::uint64_t seed = 1;

  /// Depths whose surfels may be associated, from solver.assoc.depth_mask.
  std::vector<int> depths() const;
  void set_depths(const std::vector<int>& depths);

  /// Throws std::invalid_argument.
  void validate() const;

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;
};

}  // namespace surfelio
