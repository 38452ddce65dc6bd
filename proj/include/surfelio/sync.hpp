#pragma once

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "surfelio/deskew.hpp"
#include "surfelio/imu.hpp"

namespace surfelio {

struct SyncConfig {
  int primary_lidar_id = 0;
  double sweep_period = 0.1;  // Delta_l (s)
  int knots_per_bundle = 4;
  int window_bundles = 4;
  double imu_period = 1.0 / 400.0;  // nominal

  void validate() const;
  double window_span() const { return window_bundles * sweep_period; }
};

/// Everything observed in [t_start, t_end). `imu` additionally carries the
/// last sample at or before t_start and the first at or after t_end when the
/// stream has them, so every knot interval can be sliced with interpolation.
struct ScanBundle {
  std::vector<RawPoint> points;  // all lidars, sorted by time
  std::vector<ImuSample> imu;
  Timestamp t_start = 0.0;
  Timestamp t_end = 0.0;
};

/// Per-lidar point streams and the IMU stream, each time ordered.
class SensorBuffers {
 public:
  /// Points are routed by lidar_id. Each stream must stay ordered.
  void add_points(std::span<const RawPoint> points);
  void add_imu(std::span<const ImuSample> samples);
  /// No more data will arrive; lets the last sweep be extracted.
  void set_complete(bool complete = true) { complete_ = complete; }
  bool complete() const { return complete_; }

  const std::vector<RawPoint>* stream(int lidar_id) const;
  const std::map<int, std::vector<RawPoint>>& streams() const { return lidar_; }
  const std::vector<ImuSample>& imu() const { return imu_; }

  /// Drops data strictly older than t (keeping one IMU sample at or before t).
  void discard_before(Timestamp t);

 private:
  std::map<int, std::vector<RawPoint>> lidar_;
  std::vector<ImuSample> imu_;
  bool complete_ = false;
};

/// Bundle for [t_k - Delta_l, t_k). Empty optional when the primary sweep or
/// the IMU has not reached t_k yet. Throws DataGap when an IMU gap inside the
/// window exceeds twice the nominal period, or when the stream is complete
/// and still does not cover the window.
std::optional<ScanBundle> sync_extract(const SensorBuffers& buffers, Timestamp t_k, const SyncConfig& cfg);

}  // namespace surfelio
