#include "surfelio/deskew.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "surfelio/errors.hpp"
#include "surfelio/parallel.hpp"

namespace surfelio {

DeskewedPoint deskew_point(const RawPoint& p, const PropagatedPoseSeq& poses) {
  if (poses.empty() || p.t < poses.front().t || p.t > poses.back().t) {
    throw OutOfRange("point time " + std::to_string(p.t) + " outside propagated pose coverage");
  }
  DeskewedPoint out;
  const double span = poses.back().t - poses.front().t;
  out.s = span > 0.0 ? (p.t - poses.front().t) / span : 0.0;
  if (poses.size() == 1) {
    out.world = poses.front().pose * p.f;
    return out;
  }
  auto it = std::upper_bound(poses.begin(), poses.end(), p.t,
                             [](Timestamp t, const StampedPose& sp) { return t < sp.t; });
  if (it == poses.end()) --it;  // t equals the last stamp
  const StampedPose& a = *(it - 1);
  const StampedPose& b = *it;
  const double s = (p.t - a.t) / (b.t - a.t);
  const Pose t_s = s == 0.0 ? a.pose : pose_interpolate(a.pose, b.pose, s);
  out.world = t_s * p.f;
  return out;
}

std::vector<Vec3> deskew_to_frame_end(std::span<const RawPoint> points, const PropagatedPoseSeq& poses) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  if (points.empty()) return out;
  const Pose end_inv = poses.back().pose.inverse();
  for (const RawPoint& p : points) out.push_back(end_inv * deskew_point(p, poses).world);
  return out;
}

int find_interval(std::span<const PropagatedPoseSeq> intervals, Timestamp t) {
  if (intervals.empty()) return -1;
  // Intervals are contiguous and ordered by start time.
  auto it = std::upper_bound(intervals.begin(), intervals.end(), t,
                             [](Timestamp v, const PropagatedPoseSeq& seq) { return v < seq.front().t; });
  if (it == intervals.begin()) return -1;
  --it;
  const int m = static_cast<int>(it - intervals.begin());
  const bool last = m + 1 == static_cast<int>(intervals.size());
  if (t < it->back().t || (last && t == it->back().t)) return m;
  return -1;
}

std::vector<Vec3> deskew_to_frame_end(std::span<const RawPoint> points,
                                      std::span<const PropagatedPoseSeq> intervals) {
  std::vector<Vec3> out;
  if (intervals.empty()) return out;
  out.reserve(points.size());
  const Pose end_inv = intervals.back().back().pose.inverse();
  for (const RawPoint& p : points) {
    const int m = find_interval(intervals, p.t);
    if (m < 0) continue;
    out.push_back(end_inv * deskew_point(p, intervals[m]).world);
  }
  return out;
}

AssociationSet associate(std::span<const RawPoint> points, std::span<const PropagatedPoseSeq> intervals,
                         const SurfelMap& map, const AssocConfig& cfg) {
  AssociationSet out;
  out.intervals.resize(intervals.size());
  if (map.empty() || points.empty()) return out;

  const double d_max = map.config().max_plane_dist;
  std::vector<std::vector<PtsCoeff>> per_point(points.size());
  std::vector<char> dropped(points.size(), 0);

  parallel_for_chunks(points.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const RawPoint& p = points[i];
      const int m = find_interval(intervals, p.t);
      if (m < 0) {
        dropped[i] = 1;
        continue;
      }
      const DeskewedPoint d = deskew_point(p, intervals[m]);
      auto& coeffs = per_point[i];
      for (const SurfelCandidate& c : map.query_candidates(d.world)) {
        if (c.key.depth >= 32 || !((cfg.depth_mask >> c.key.depth) & 1u)) continue;
        const double dist = c.attrs.normal.dot(d.world - c.attrs.mean);
        if (std::abs(dist) >= d_max) continue;
        coeffs.push_back(PtsCoeff{p.f, c.attrs.normal, c.attrs.mean, d.s, m, c.key.depth, 1.0});
      }
      if (cfg.per_scale_weight && !coeffs.empty()) {
        const double w = 1.0 / static_cast<double>(coeffs.size());
        for (PtsCoeff& c : coeffs) c.weight = w;
      }
    }
  });

  for (std::size_t i = 0; i < points.size(); ++i) {
    out.dropped_out_of_range += dropped[i];
    for (const PtsCoeff& c : per_point[i]) out.intervals[c.interval].push_back(c);
  }
  return out;
}

std::vector<RawPoint> stride_downsample(std::span<const RawPoint> points, std::size_t max_points) {
  if (max_points == 0 || points.size() <= max_points) return {points.begin(), points.end()};
  const std::size_t stride = (points.size() + max_points - 1) / max_points;
  std::vector<RawPoint> out;
  out.reserve(points.size() / stride + 1);
  for (std::size_t i = 0; i < points.size(); i += stride) out.push_back(points[i]);
  return out;
}

}  // namespace surfelio
