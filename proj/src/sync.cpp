#include "surfelio/sync.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "surfelio/errors.hpp"

namespace surfelio {

void SyncConfig::validate() const {
  if (!(sweep_period > 0.0)) throw std::invalid_argument("sweep period must be > 0");
  if (knots_per_bundle < 2 || knots_per_bundle > 8) throw std::invalid_argument("knots_per_bundle must be in [2, 8]");
  if (window_bundles < 1) throw std::invalid_argument("window_bundles must be >= 1");
  if (!(imu_period > 0.0)) throw std::invalid_argument("imu period must be > 0");
}

void SensorBuffers::add_points(std::span<const RawPoint> points) {
  for (const RawPoint& p : points) {
    auto& s = lidar_[p.lidar_id];
    if (!s.empty() && p.t < s.back().t) {
      throw std::invalid_argument("lidar " + std::to_string(p.lidar_id) + " stream out of order");
    }
    s.push_back(p);
  }
}

void SensorBuffers::add_imu(std::span<const ImuSample> samples) {
  for (const ImuSample& s : samples) {
    if (!imu_.empty() && !(s.t > imu_.back().t)) throw std::invalid_argument("imu stream out of order");
    imu_.push_back(s);
  }
}

const std::vector<RawPoint>* SensorBuffers::stream(int lidar_id) const {
  auto it = lidar_.find(lidar_id);
  return it == lidar_.end() ? nullptr : &it->second;
}

void SensorBuffers::discard_before(Timestamp t) {
  for (auto& [id, s] : lidar_) {
    auto it = std::lower_bound(s.begin(), s.end(), t, [](const RawPoint& p, Timestamp v) { return p.t < v; });
    s.erase(s.begin(), it);
  }
  auto it = std::upper_bound(imu_.begin(), imu_.end(), t, [](Timestamp v, const ImuSample& s) { return v < s.t; });
  if (it != imu_.begin()) --it;
  imu_.erase(imu_.begin(), it);
}

namespace {

auto point_lower(const std::vector<RawPoint>& s, Timestamp t) {
  return std::lower_bound(s.begin(), s.end(), t, [](const RawPoint& p, Timestamp v) { return p.t < v; });
}

}  // namespace

std::optional<ScanBundle> sync_extract(const SensorBuffers& buffers, Timestamp t_k, const SyncConfig& cfg) {
  const Timestamp t0 = t_k - cfg.sweep_period;
  const std::vector<RawPoint>* primary = buffers.stream(cfg.primary_lidar_id);
  if (primary == nullptr || primary->empty()) return std::nullopt;
  // The sweep is complete once the next one has started, or the data ended.
  if (!buffers.complete() && primary->back().t < t_k) return std::nullopt;
  if (point_lower(*primary, t0) == point_lower(*primary, t_k)) return std::nullopt;

  const auto& imu = buffers.imu();
  const double hold = 1.5 * cfg.imu_period;
  if (imu.empty() || imu.back().t < t_k) {
    if (!buffers.complete()) return std::nullopt;
    if (imu.empty() || imu.back().t < t_k - hold) {
      throw DataGap("imu stream ends before " + std::to_string(t_k));
    }
  }
  if (imu.front().t > t0 + hold) throw DataGap("imu stream starts after " + std::to_string(t0));

  ScanBundle b;
  b.t_start = t0;
  b.t_end = t_k;
  auto first = std::upper_bound(imu.begin(), imu.end(), t0, [](Timestamp v, const ImuSample& s) { return v < s.t; });
  if (first != imu.begin()) --first;
  auto last = std::lower_bound(imu.begin(), imu.end(), t_k, [](const ImuSample& s, Timestamp v) { return s.t < v; });
  if (last != imu.end()) ++last;
  b.imu.assign(first, last);
  for (std::size_t i = 1; i < b.imu.size(); ++i) {
    if (b.imu[i].t - b.imu[i - 1].t > 2.0 * cfg.imu_period) {
      throw DataGap("imu gap of " + std::to_string(b.imu[i].t - b.imu[i - 1].t) + " s at t=" +
                    std::to_string(b.imu[i - 1].t));
    }
  }

  for (const auto& [id, s] : buffers.streams()) {
    b.points.insert(b.points.end(), point_lower(s, t0), point_lower(s, t_k));
  }
  // Streams are concatenated in lidar id order; a stable sort keeps ties deterministic.
  std::stable_sort(b.points.begin(), b.points.end(), [](const RawPoint& a, const RawPoint& c) { return a.t < c.t; });
  return b;
}

}  // namespace surfelio
