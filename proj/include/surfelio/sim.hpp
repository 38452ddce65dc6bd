#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "surfelio/deskew.hpp"
#include "surfelio/geometry.hpp"
#include "surfelio/imu.hpp"

namespace surfelio::sim {

/// mt19937_64 with Box-Muller on the raw 53-bit mantissa, so sequences are
/// identical on every platform (the std distributions are not specified).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  double uniform();  // [0, 1)
  double normal();
  std::uint64_t next() { return eng_(); }

 private:
  std::mt19937_64 eng_;
  std::optional<double> spare_;
};

/// corner + u e1 + v e2 for u, v in [0, 1]; e1 and e2 orthogonal.
struct Rect {
  Vec3 corner;
  Vec3 e1;
  Vec3 e2;
};

struct Box {
  Vec3 lo;
  Vec3 hi;
};

struct WorldModel {
  std::string name;
  std::vector<Rect> rects;
  std::vector<Box> boxes;

  void validate() const;

  /// Nearest hit distance along unit `dir` within (min_range, max_range].
  std::optional<double> raycast(const Vec3& origin, const Vec3& dir, double max_range,
                                double min_range = 0.0) const;

  /// Distance to the closest face.
  double distance_to_surface(const Vec3& p) const;

  static WorldModel room();
  static WorldModel corridor_loop();
  static WorldModel two_scale();
  static WorldModel by_name(const std::string& name);
};

/// c + sum_j a_j sin(w_j tau + phi_j).
struct SineSeries {
  double offset = 0.0;
  struct Term {
    double amp;
    double freq;  // rad per unit tau
    double phase;
  };
  std::vector<Term> terms;

  double value(double tau) const;
  double d1(double tau) const;
  double d2(double tau) const;
};

/// Analytic trajectory. Time is warped so the body rests for `hold`
/// seconds, then eases into motion over `ramp` seconds (C2 overall).
struct TrajectorySpec {
  SineSeries x, y, z;
  SineSeries yaw, pitch, roll;  // ZYX Euler angles (rad)
  double duration = 60.0;
  double hold = 2.0;
  double ramp = 2.0;

  static TrajectorySpec for_world(const std::string& world, double duration);
  static TrajectorySpec stationary(double duration);
};

struct TrajectorySample {
  Pose pose;
  Vec3 vel = Vec3::Zero();
  Vec3 acc = Vec3::Zero();       // world
  Vec3 omega = Vec3::Zero();     // body angular rate
  Vec3 specific = Vec3::Zero();  // body specific force R^T (a - g)
};

/// Throws OutOfRange outside [0, duration].
TrajectorySample eval_trajectory(const TrajectorySpec& spec, Timestamp t, const Vec3& gravity = Vec3(0, 0, -9.81));

struct LidarSim {
  int id = 0;
  int channels = 16;
  int columns = 360;  // per sweep
  double rate = 10.0;
  double min_range = 0.3;
  double max_range = 30.0;
  double range_noise = 0.0;
  double fov_down_deg = -15.0;
  double fov_up_deg = 15.0;
  Pose extrinsic;  // sensor in body
};

struct ImuSim {
  double rate = 400.0;
  bool noisy = false;
  ImuNoise noise;  // densities and bias walks; gravity
  Vec3 bg0 = Vec3::Zero();
  Vec3 ba0 = Vec3::Zero();
};

struct SimConfig {
  std::vector<LidarSim> lidars;
  ImuSim imu;
  std::uint64_t seed = 1;
  double duration = 60.0;

  /// Primary 16x180 at 10 Hz plus a sideways 8x90 at 20 Hz.
  static SimConfig defaults(bool noisy);
};

/// One sweep starting at t0. Columns sweep the azimuth and share a timestamp;
/// the sensor pose at each column comes from `body_at`. Points are in the
/// sensor frame; missed beams are dropped. `rng` may be null when noise is 0.
std::vector<RawPoint> raycast_scan(const WorldModel& world, const std::function<Pose(Timestamp)>& body_at,
                                   const LidarSim& lidar, Timestamp t0, Rng* rng);

/// Fixed-pose convenience overload.
std::vector<RawPoint> raycast_scan(const WorldModel& world, const Pose& body, const LidarSim& lidar, Timestamp t0,
                                   Rng* rng);

struct Dataset {
  std::vector<RawPoint> points;   // sensor frame, ordered by (time, lidar)
  std::vector<ImuSample> imu;
  std::vector<StampedPose> truth;  // body poses at the primary sweep ends, plus t=0
};

Dataset simulate(const WorldModel& world, const TrajectorySpec& spec, const SimConfig& cfg);

struct DatasetPaths {
  std::filesystem::path scans, imu, truth, manifest;
  static DatasetPaths in(const std::filesystem::path& dir);
};

/// Writes scans.csv, imu.csv, groundtruth.txt and manifest.txt into dir.
/// Throws std::runtime_error on I/O failure.
DatasetPaths generate_dataset(const WorldModel& world, const TrajectorySpec& spec, const SimConfig& cfg,
                              const std::filesystem::path& dir);

}  // namespace surfelio::sim
