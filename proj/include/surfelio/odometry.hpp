#pragma once

#include <filesystem>
#include <memory>
#include <vector>

#include "surfelio/loop_closure.hpp"
#include "surfelio/run_config.hpp"

namespace surfelio {

struct TimingRecord {
  int window_index = 0;
  Timestamp t_k = 0.0;
  double dt_loop_ms = 0.0;
  double dt_solve_ms = 0.0;
  std::size_t num_factors = 0;
};

struct RunResult {
  std::vector<StampedPose> trajectory;  // one row per knot leaving the window, then the rest at the end
  std::vector<TimingRecord> timing;
  std::size_t keyframes = 0;
  std::size_t loops_accepted = 0;
  std::size_t loops_rejected = 0;
  std::size_t windows = 0;
};

/// Offline driver for one dataset: sync, propagate, deskew and associate,
/// optimize, marginalize, and optional loop closure, window after window.
///
/// Knot times are multiples of the sweep period counted in integer
/// nanoseconds. The first second of IMU data (init_duration) must be at rest;
/// it fixes roll, pitch and gyro bias, and the first bundle seeds the map.
class OdometrySystem {
 public:
  explicit OdometrySystem(RunConfig cfg);
  ~OdometrySystem();

  /// Points must already be in the body frame.
  RunResult run(std::span<const RawPoint> points, std::span<const ImuSample> imu);

  const SurfelMap& map() const { return map_; }
  const KeyframeStore& keyframes() const { return store_; }
  /// Graph of the last loop-closure optimization, empty before any.
  const PoseGraph& pose_graph() const { return graph_; }

 private:
  struct Row {
    Timestamp t;
    Pose pose;    // as estimated when it left the window
    int anchor;   // newest keyframe at that moment
    Pose rel;     // anchor^-1 * pose
  };

  void emit(Timestamp t, const Pose& pose);
  void add_keyframe(Keyframe kf);
  void inject_drift(const Pose& previous_keyframe, Pose& kf_pose);
  void maybe_submit_loop(int query);
  void apply_loop(const LoopResult& res, RunResult& out);
  void transform_window(const Pose& c);

  RunConfig cfg_;
  SurfelMap map_;
  KeyframeStore store_;
  SlidingWindow win_;
  std::vector<Row> rows_;
  std::vector<RelativePosePrior> loops_;
  PoseGraph graph_;
  std::unique_ptr<LoopWorker> worker_;
  int last_loop_attempt_ = -1000000;
  bool corrected_ = false;
};

/// Reads scans.csv and imu.csv from cfg.dataset, applies the extrinsics, runs
/// the system and writes trajectory.txt and timing.csv (plus map.ply and
/// pose_graph.g2o when enabled) into cfg.output.
RunResult run_odometry(const RunConfig& cfg);

void write_timing_csv(const std::filesystem::path& path, std::span<const TimingRecord> rows);

/// One vertex per leaf voxel at its mean, intensity = point count.
void write_map_ply(const std::filesystem::path& path, const SurfelMap& map);

}  // namespace surfelio
