#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "surfelio/geometry.hpp"
#include "surfelio/imu.hpp"
#include "surfelio/surfel_map.hpp"

namespace surfelio {

struct RawPoint {
  Vec3 f = Vec3::Zero();  // body frame at t
  Timestamp t = 0.0;
  int lidar_id = 0;
  float intensity = 0.0f;
};

/// One point-to-surfel association.
struct PtsCoeff {
  Vec3 f = Vec3::Zero();       // body frame at the sample time
  Vec3 normal = Vec3::UnitZ();
  Vec3 mean = Vec3::Zero();
  double s = 0.0;              // (t - t_m) / (t_{m+1} - t_m)
  int interval = 0;
  int depth = 0;
  double weight = 1.0;
};

/// Per-interval buckets of coefficients.
struct AssociationSet {
  std::vector<std::vector<PtsCoeff>> intervals;
  std::size_t dropped_out_of_range = 0;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& v : intervals) n += v.size();
    return n;
  }
};

struct AssocConfig {
  /// Bit d set: surfels at depth d may be associated.
  std::uint32_t depth_mask = ~0u;
  /// Divide each coefficient's weight by the number of scales its point matched.
  bool per_scale_weight = false;
};

struct DeskewedPoint {
  Vec3 world = Vec3::Zero();
  double s = 0.0;  // fraction of the covered interval, not of the pose bracket
};

/// Interpolates the pose at p.t between the two bracketing propagated poses.
/// Throws OutOfRange when p.t is not covered.
DeskewedPoint deskew_point(const RawPoint& p, const PropagatedPoseSeq& poses);

/// Deskews into the world frame and re-expresses the cloud in the body frame
/// at the last pose of the sequence.
std::vector<Vec3> deskew_to_frame_end(std::span<const RawPoint> points, const PropagatedPoseSeq& poses);

/// Same as above against one sequence per interval; the target frame is the
/// end of the last interval. Points outside coverage are dropped.
std::vector<Vec3> deskew_to_frame_end(std::span<const RawPoint> points,
                                      std::span<const PropagatedPoseSeq> intervals);

/// Index of the interval whose [front, back) time range holds t, the final
/// interval also accepting its end. -1 when not covered.
int find_interval(std::span<const PropagatedPoseSeq> intervals, Timestamp t);

/// Two-stage point-to-surfel association. `intervals[m]` holds the propagated
/// poses across knot interval m. Deterministic and ordered by input point.
AssociationSet associate(std::span<const RawPoint> points, std::span<const PropagatedPoseSeq> intervals,
                         const SurfelMap& map, const AssocConfig& cfg = {});

/// Every stride-th point so that at most `max_points` remain.
std::vector<RawPoint> stride_downsample(std::span<const RawPoint> points, std::size_t max_points);

}  // namespace surfelio
