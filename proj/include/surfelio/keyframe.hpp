#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "surfelio/geometry.hpp"

namespace surfelio {

struct Keyframe {
  int index = 0;
  Timestamp t = 0.0;
  Pose pose;
  std::vector<Eigen::Vector3f> cloud;  // deskewed, body frame at t

  std::vector<Vec3> world_cloud() const;
  std::vector<Vec3> world_cloud(const Pose& at) const;
};

/// Append-only keyframe buffer. Indices equal positions.
class KeyframeStore {
 public:
  Keyframe& add(Timestamp t, const Pose& pose, std::span<const Vec3> body_cloud);

  std::size_t size() const { return kfs_.size(); }
  bool empty() const { return kfs_.empty(); }
  const Keyframe& operator[](std::size_t i) const { return kfs_[i]; }
  Keyframe& operator[](std::size_t i) { return kfs_[i]; }
  const std::vector<Keyframe>& all() const { return kfs_; }

  /// Up to k keyframe indices nearest to p by position, nearest first; ties
  /// broken by lower index.
  std::vector<int> nearest(const Vec3& p, std::size_t k) const;

 private:
  std::vector<Keyframe> kfs_;
};

}  // namespace surfelio
