#pragma once

#include <condition_variable>
#include <mutex>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "surfelio/keyframe.hpp"
#include "surfelio/pose_graph.hpp"
#include "surfelio/surfel_map.hpp"

namespace surfelio {

struct IcpConfig {
  int max_iterations = 30;
  int normal_neighbours = 10;
  double max_correspondence = 1.0;  // m
  double fitness_threshold = 0.3;   // m, inlier RMS
  double min_inlier_ratio = 0.3;
  std::size_t max_source_points = 4000;
  double step_tolerance = 1e-7;
  // Loop-edge covariance per unit fitness.
  double rot_var = 0.01;  // rad^2
  double pos_var = 0.01;  // m^2

  void validate() const;
};

struct LoopConfig {
  bool enabled = false;
  int candidates = 10;         // K
  double min_time_gap = 30.0;  // s
  int submap_radius = 5;       // keyframes on each side of the candidate used as ICP target
  // Odometry-edge covariance between consecutive keyframes.
  double odom_rot_var = 1e-4;
  double odom_pos_var = 1e-4;
  IcpConfig icp;

  void validate() const;
};

/// Among the K keyframes nearest to `pose` by position (nearest first, ties
/// by index), the oldest whose time differs from t by at least min_time_gap.
std::optional<int> detect_loop(const Pose& pose, Timestamp t, const KeyframeStore& store, int k, double min_time_gap);
inline std::optional<int> detect_loop(const Keyframe& kf, const KeyframeStore& store, int k, double min_time_gap) {
  return detect_loop(kf.pose, kf.t, store, k, min_time_gap);
}

struct IcpResult {
  Pose rel;          // maps source points into the target frame
  double fitness = 0.0;
  Mat6 covariance = Mat6::Identity();  // [rot, pos]
  int iterations = 0;
  std::size_t inliers = 0;
};

/// Point-to-plane ICP with target normals from k-NN PCA. Throws
/// NoConvergence when the inlier RMS exceeds the threshold or too few source
/// points find a partner.
IcpResult icp_align(std::span<const Vec3> source, std::span<const Vec3> target, const Pose& init, const IcpConfig& cfg);

/// Relative pose target^-1 * source between two keyframes.
IcpResult icp_relative_pose(const Keyframe& source, const Keyframe& target, const Pose& init, const IcpConfig& cfg);

/// Clears and re-inserts every keyframe cloud at its current pose.
SurfelMap rebuild_map(const KeyframeStore& store, const MapConfig& cfg);

/// Keyframes [center - radius, center + radius] expressed in the frame of `center`.
std::vector<Vec3> keyframe_submap(const KeyframeStore& store, int center, int radius);

/// Chain of odometry edges over the store plus the given loop edges.
PoseGraph make_pose_graph(const KeyframeStore& store, std::span<const RelativePosePrior> loops, const LoopConfig& cfg);

struct LoopJob {
  int query = 0;      // keyframe index (the newer one)
  int candidate = 0;  // older keyframe
  std::vector<Vec3> source;  // query body frame
  std::vector<Vec3> target;  // candidate body frame
  Pose init;                 // odometry guess of candidate^-1 * query
};

struct LoopResult {
  LoopJob job;
  std::optional<IcpResult> icp;  // empty when ICP was rejected
};

/// Runs ICP for one job at a time on a background thread. Results are only
/// handed back through join(), so callers decide where they take effect.
class LoopWorker {
 public:
  explicit LoopWorker(IcpConfig cfg);
  ~LoopWorker();
  LoopWorker(const LoopWorker&) = delete;
  LoopWorker& operator=(const LoopWorker&) = delete;

  bool busy() const;
  /// Precondition: not busy.
  void submit(LoopJob job);
  /// Waits for the pending job; empty when nothing was submitted.
  std::optional<LoopResult> join();

 private:
  void run();

  IcpConfig cfg_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::optional<LoopJob> pending_;
  std::optional<LoopResult> done_;
  bool working_ = false;
  bool stop_ = false;
  std::thread thread_;
};

}  // namespace surfelio
