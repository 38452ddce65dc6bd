#pragma once

#include <deque>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "surfelio/deskew.hpp"
#include "surfelio/imu.hpp"
#include "surfelio/keyframe.hpp"
#include "surfelio/lm_solver.hpp"
#include "surfelio/preintegration.hpp"
#include "surfelio/surfel_map.hpp"
#include "surfelio/sync.hpp"

namespace surfelio {

struct SolverConfig {
  int max_outer_iterations = 3;
  int max_inner_iterations = 8;
  bool robust = true;
  double huber_delta = 0.1;            // m
  double outer_tolerance = 1e-4;       // m of knot motion between outer passes
  double lidar_sigma2 = 0.05 * 0.05;   // Sigma_L (m^2)
  double relative_tolerance = 1e-6;    // inner LM
  std::size_t max_points_per_bundle = 4000;
  bool use_lidar = true;
  AssocConfig assoc;

  // Weak prior placed on the window head (standard deviations).
  double prior_rot = 1e-2;
  double prior_pos = 1e-2;
  double prior_vel = 5e-2;
  double prior_bg = 1e-3;
  double prior_ba = 1e-2;

  void validate() const;
  LmOptions lm_options() const;
};

/// Diagonal prior on one state.
struct StatePrior {
  StateEstimate mean;
  Vec15 sigma = Vec15::Ones();
};

struct WindowInterval {
  std::vector<ImuSample> imu;           // sliced to [t_m, t_{m+1}]
  std::optional<Preintegration> preint;
  PropagatedPoseSeq poses;              // forward propagation from knot m
  std::vector<PtsCoeff> coeffs;
};

struct WindowBundle {
  ScanBundle bundle;
  std::vector<RawPoint> points;  // downsampled copy used for association
  bool keyframed = false;        // already inserted (bootstrap)
};

/// Knots t_w..t_k with one state each; intervals tile [t_w, t_k].
struct SlidingWindow {
  std::vector<Timestamp> knot_times;
  std::vector<StateEstimate> states;
  std::vector<WindowInterval> intervals;
  std::deque<WindowBundle> bundles;
  std::optional<StatePrior> head_prior;

  bool empty() const { return knot_times.empty(); }
  int num_knots() const { return static_cast<int>(knot_times.size()); }
  int num_intervals() const { return static_cast<int>(intervals.size()); }

  /// Throws std::logic_error when knots or intervals do not tile the span.
  void check_tiling() const;
};

/// Roll/pitch from the mean specific force and gyro bias from the mean rate
/// over a stationary stretch; yaw, position, velocity and accel bias zero.
StateEstimate static_initialize(std::span<const ImuSample> samples, const ImuNoise& noise);

/// Appends knots_per_bundle uniformly spaced knots over the bundle, initialized
/// by forward propagation from the current last knot, with one preintegration
/// per new interval. On an empty window the first knot is placed at t_start
/// with `initial`. Throws DataGap when the bundle does not start at the last knot.
void admit_bundle(SlidingWindow& win, ScanBundle bundle, const SyncConfig& cfg, const ImuNoise& noise,
                  const SolverConfig& solver, const StateEstimate& initial = {});

/// Factors of the window cost: one inertial factor per interval and one
/// point-to-surfel factor per coefficient.
struct FactorSet {
  std::size_t imu_factors = 0;
  std::size_t pts_factors = 0;
  bool has_prior = false;
  bool degenerate = false;  // no lidar factors at all

  std::size_t total() const { return imu_factors + pts_factors; }
};

FactorSet build_cost(const SlidingWindow& win);

/// Window MAP problem in the shape solve_lm expects. Tangent layout is
/// knot-major, 15 per knot in idx order.
class WindowProblem {
 public:
  WindowProblem(SlidingWindow& win, const ImuNoise& noise, const SolverConfig& cfg);

  double linearize(Eigen::MatrixXd& h, Eigen::VectorXd& g);
  double cost_at(const Eigen::VectorXd& dx) const;
  void apply(const Eigen::VectorXd& dx);
  double cost() const { return cost_at(Eigen::VectorXd::Zero(dim())); }

  int dim() const { return 15 * win_.num_knots(); }

 private:
  struct Group {
    int interval;
    std::size_t begin;
    std::size_t end;  // coeffs [begin, end) of the interval share one raw point
  };

  double evaluate(const std::vector<StateEstimate>& states, Eigen::MatrixXd* h, Eigen::VectorXd* g) const;
  std::vector<StateEstimate> retract(const Eigen::VectorXd& dx) const;

  SlidingWindow& win_;
  ImuNoise noise_;
  SolverConfig cfg_;
  std::vector<std::vector<Group>> groups_;  // per interval
};

struct OptimizeReport {
  int outer_iterations = 0;
  std::vector<LmReport> inner;
  std::vector<double> cost_trace;  // every accepted inner step, in order
  FactorSet factors;
  double solve_ms = 0.0;
  std::size_t dropped_points = 0;
};

/// Re-preintegrates every interval at its current start-knot biases and
/// forward propagates each knot across its interval.
void repropagate(SlidingWindow& win, const ImuNoise& noise);

/// Outer loop: propagate, deskew and associate against the map, then an LM
/// solve; repeats until the knots move less than outer_tolerance.
OptimizeReport optimize(SlidingWindow& win, const SurfelMap& map, const ImuNoise& noise, const SolverConfig& cfg);

struct KeyframeThresholds {
  double meters = 0.3;
  double degrees = 10.0;
  int neighbours = 5;
};

/// Rule for admitting a pose: every one of its nearest stored keyframes (by
/// position) is farther than `meters` or rotated more than `degrees`.
bool keyframe_test(const Pose& pose, const KeyframeStore& store, const KeyframeThresholds& th);

struct Marginalized {
  Timestamp t = 0.0;
  Pose pose;                        // end knot of the dropped bundle
  std::optional<Keyframe> keyframe;  // set when admitted
};

/// Drops the oldest bundle and its knots. The end knot of that bundle becomes
/// the head and receives a weak prior at its current estimate. When the pose
/// passes keyframe_test, the bundle deskewed into that body frame is returned
/// as a keyframe; inserting it into the map and store is the caller's job.
Marginalized marginalize_keyframe(SlidingWindow& win, const KeyframeStore& store, const KeyframeThresholds& th,
                                  const SyncConfig& sync, const ImuNoise& noise, const SolverConfig& solver);

/// Body-frame cloud of a bundle at the pose of its end knot, using the
/// window's propagated poses for that bundle's intervals.
std::vector<Vec3> bundle_cloud_at_end(const SlidingWindow& win, std::size_t bundle_index, const SyncConfig& sync);

}  // namespace surfelio
