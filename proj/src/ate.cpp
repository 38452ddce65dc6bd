#include "surfelio/ate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Geometry>

namespace surfelio {

Alignment parse_alignment(const std::string& s) {
  if (s == "none") return Alignment::None;
  if (s == "rigid") return Alignment::Rigid;
  throw std::invalid_argument("alignment must be none or rigid, got '" + s + "'");
}

AteReport evaluate_ate(std::span<const StampedPose> gt, std::span<const StampedPose> est, Alignment align,
                       double tolerance) {
  std::vector<Vec3> a, b;  // estimate, truth
  for (const StampedPose& e : est) {
    auto it = std::lower_bound(gt.begin(), gt.end(), e.t, [](const StampedPose& g, double t) { return g.t < t; });
    const StampedPose* best = nullptr;
    if (it != gt.end()) best = &*it;
    if (it != gt.begin() && (best == nullptr || e.t - std::prev(it)->t <= best->t - e.t)) best = &*std::prev(it);
    if (best == nullptr || std::abs(best->t - e.t) > tolerance) continue;
    a.push_back(e.pose.trans);
    b.push_back(best->pose.trans);
  }
  if (a.empty()) throw std::invalid_argument("no estimated pose lies within tolerance of a ground-truth time");

  AteReport rep;
  rep.matched = a.size();
  if (align == Alignment::Rigid && a.size() >= 3) {
    Eigen::Matrix3Xd src(3, a.size()), dst(3, b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      src.col(static_cast<Eigen::Index>(i)) = a[i];
      dst.col(static_cast<Eigen::Index>(i)) = b[i];
    }
    const Eigen::Matrix4d t = Eigen::umeyama(src, dst, false);
    rep.alignment = Pose(Rotation(Mat3(t.topLeftCorner<3, 3>())), t.topRightCorner<3, 1>());
  } else if (align == Alignment::Rigid) {
    Vec3 d = Vec3::Zero();
    for (std::size_t i = 0; i < a.size(); ++i) d += b[i] - a[i];
    rep.alignment = Pose(Rotation(), d / static_cast<double>(a.size()));
  }

  std::vector<double> err;
  err.reserve(a.size());
  Vec3 axis = Vec3::Zero();
  double sq = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Vec3 d = rep.alignment * a[i] - b[i];
    axis += d.cwiseAbs2();
    sq += d.squaredNorm();
    sum += d.norm();
    err.push_back(d.norm());
  }
  const double n = static_cast<double>(a.size());
  rep.rmse = std::sqrt(sq / n);
  rep.mean = sum / n;
  rep.axis_rmse = (axis / n).cwiseSqrt();
  rep.max = *std::max_element(err.begin(), err.end());
  std::sort(err.begin(), err.end());
  const std::size_t m = err.size() / 2;
  rep.median = err.size() % 2 ? err[m] : 0.5 * (err[m - 1] + err[m]);
  return rep;
}

}  // namespace surfelio
