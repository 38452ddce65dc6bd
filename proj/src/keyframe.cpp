#include "surfelio/keyframe.hpp"

#include <algorithm>
#include <utility>

namespace surfelio {

std::vector<Vec3> Keyframe::world_cloud() const { return world_cloud(pose); }

std::vector<Vec3> Keyframe::world_cloud(const Pose& at) const {
  std::vector<Vec3> out;
  out.reserve(cloud.size());
  for (const Eigen::Vector3f& f : cloud) out.push_back(at * f.cast<double>());
  return out;
}

Keyframe& KeyframeStore::add(Timestamp t, const Pose& pose, std::span<const Vec3> body_cloud) {
  Keyframe kf;
  kf.index = static_cast<int>(kfs_.size());
  kf.t = t;
  kf.pose = pose;
  kf.cloud.reserve(body_cloud.size());
  for (const Vec3& p : body_cloud) kf.cloud.push_back(p.cast<float>());
  kfs_.push_back(std::move(kf));
  return kfs_.back();
}

std::vector<int> KeyframeStore::nearest(const Vec3& p, std::size_t k) const {
  std::vector<std::pair<double, int>> d;
  d.reserve(kfs_.size());
  for (const Keyframe& kf : kfs_) d.emplace_back((kf.pose.trans - p).squaredNorm(), kf.index);
  const std::size_t n = std::min(k, d.size());
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(n), d.end());
  std::vector<int> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(d[i].second);
  return out;
}

}  // namespace surfelio
