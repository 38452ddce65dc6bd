#include "surfelio/loop_closure.hpp"

#include <algorithm>
#include <boost/geometry.hpp>
#include <boost/geometry/index/rtree.hpp>
#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "surfelio/errors.hpp"

namespace surfelio {

namespace bg = boost::geometry;
namespace bgi = boost::geometry::index;

void IcpConfig::validate() const {
  if (max_iterations < 1 || normal_neighbours < 3) throw std::invalid_argument("icp iterations >= 1, neighbours >= 3");
  if (!(max_correspondence > 0 && fitness_threshold > 0 && rot_var > 0 && pos_var > 0)) {
    throw std::invalid_argument("icp thresholds must be > 0");
  }
  if (!(min_inlier_ratio >= 0.0 && min_inlier_ratio <= 1.0)) throw std::invalid_argument("min_inlier_ratio in [0, 1]");
}

void LoopConfig::validate() const {
  if (candidates < 1) throw std::invalid_argument("loop candidates must be >= 1");
  if (!(min_time_gap >= 0.0)) throw std::invalid_argument("min_time_gap must be >= 0");
  if (submap_radius < 0) throw std::invalid_argument("submap_radius must be >= 0");
  if (!(odom_rot_var > 0 && odom_pos_var > 0)) throw std::invalid_argument("odometry variances must be > 0");
  icp.validate();
}

std::optional<int> detect_loop(const Pose& pose, Timestamp t, const KeyframeStore& store, int k, double min_time_gap) {
  std::optional<int> best;
  for (int i : store.nearest(pose.trans, static_cast<std::size_t>(std::max(k, 0)))) {
    const Keyframe& kf = store[static_cast<std::size_t>(i)];
    if (std::abs(kf.t - t) < min_time_gap) continue;
    if (!best || kf.t < store[static_cast<std::size_t>(*best)].t) best = i;
  }
  return best;
}

namespace {

using BPoint = bg::model::point<double, 3, bg::cs::cartesian>;
using Entry = std::pair<BPoint, std::size_t>;
using Tree = bgi::rtree<Entry, bgi::rstar<16>>;

BPoint bpoint(const Vec3& v) { return BPoint(v.x(), v.y(), v.z()); }

// k nearest target indices, ordered by (distance, index) for determinism.
std::vector<std::size_t> knn(const Tree& tree, std::span<const Vec3> pts, const Vec3& q, int k) {
  std::vector<Entry> hits;
  tree.query(bgi::nearest(bpoint(q), static_cast<unsigned>(k)), std::back_inserter(hits));
  std::vector<std::pair<double, std::size_t>> d;
  d.reserve(hits.size());
  for (const Entry& e : hits) d.push_back({(pts[e.second] - q).squaredNorm(), e.second});
  std::sort(d.begin(), d.end());
  std::vector<std::size_t> out;
  out.reserve(d.size());
  for (const auto& p : d) out.push_back(p.second);
  return out;
}

struct TargetIndex {
  std::span<const Vec3> pts;
  Tree tree;
  std::vector<Vec3> normals;
  std::vector<char> valid;
};

TargetIndex index_target(std::span<const Vec3> target, int neighbours) {
  TargetIndex ti;
  ti.pts = target;
  std::vector<Entry> entries;
  entries.reserve(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) entries.emplace_back(bpoint(target[i]), i);
  ti.tree = Tree(entries.begin(), entries.end());
  ti.normals.assign(target.size(), Vec3::UnitZ());
  ti.valid.assign(target.size(), 0);
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto nb = knn(ti.tree, target, target[i], neighbours);
    if (static_cast<int>(nb.size()) < 3) continue;
    Vec3 mean = Vec3::Zero();
    for (std::size_t j : nb) mean += target[j];
    mean /= static_cast<double>(nb.size());
    Mat3 cov = Mat3::Zero();
    for (std::size_t j : nb) cov += (target[j] - mean) * (target[j] - mean).transpose();
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    const Vec3 ev = es.eigenvalues();
    if (ev(1) <= 1e-12 * std::max(ev(2), 1e-300)) continue;  // collinear neighbourhood
    ti.normals[i] = es.eigenvectors().col(0);
    ti.valid[i] = 1;
  }
  return ti;
}

}  // namespace

IcpResult icp_align(std::span<const Vec3> source_all, std::span<const Vec3> target, const Pose& init,
                    const IcpConfig& cfg) {
  cfg.validate();
  if (source_all.empty() || target.empty()) throw std::invalid_argument("icp needs two nonempty clouds");
  std::vector<Vec3> source;
  const std::size_t stride = std::max<std::size_t>(1, (source_all.size() + cfg.max_source_points - 1) / cfg.max_source_points);
  for (std::size_t i = 0; i < source_all.size(); i += stride) source.push_back(source_all[i]);

  const TargetIndex ti = index_target(target, cfg.normal_neighbours);
  const double gate2 = cfg.max_correspondence * cfg.max_correspondence;

  IcpResult res;
  res.rel = init;
  double sq = 0.0;
  auto correspond = [&](const Pose& t, Eigen::Matrix<double, 6, 6>* h, Eigen::Matrix<double, 6, 1>* g) {
    std::size_t inl = 0;
    sq = 0.0;
    const Mat3 r = t.rot.matrix();
    for (const Vec3& s : source) {
      const Vec3 q = t * s;
      const auto nb = knn(ti.tree, target, q, 1);
      if (nb.empty()) continue;
      const std::size_t j = nb.front();
      if (!ti.valid[j] || (target[j] - q).squaredNorm() > gate2) continue;
      const Vec3& n = ti.normals[j];
      const double e = n.dot(q - target[j]);
      ++inl;
      sq += e * e;
      if (h != nullptr) {
        Eigen::Matrix<double, 6, 1> jrow;
        jrow.head<3>() = -(n.transpose() * r * skew(s)).transpose();
        jrow.tail<3>() = n;
        *h += jrow * jrow.transpose();
        *g += jrow * e;
      }
    }
    return inl;
  };

  for (int it = 0; it < cfg.max_iterations; ++it) {
    ++res.iterations;
    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    if (correspond(res.rel, &h, &g) < 6) break;
    Eigen::LDLT<Eigen::Matrix<double, 6, 6>> ldlt(h + 1e-9 * Eigen::Matrix<double, 6, 6>::Identity());
    const Eigen::Matrix<double, 6, 1> dx = ldlt.solve(-g);
    if (ldlt.info() != Eigen::Success || !dx.allFinite()) break;
    res.rel = pose_boxplus(res.rel, dx);
    if (dx.norm() < cfg.step_tolerance) break;
  }

  res.inliers = correspond(res.rel, nullptr, nullptr);
  const double ratio = static_cast<double>(res.inliers) / static_cast<double>(source.size());
  res.fitness = res.inliers > 0 ? std::sqrt(sq / static_cast<double>(res.inliers)) : INFINITY;
  if (ratio < cfg.min_inlier_ratio) {
    throw NoConvergence("icp: only " + std::to_string(res.inliers) + " of " + std::to_string(source.size()) +
                        " points found a partner");
  }
  if (!(res.fitness <= cfg.fitness_threshold)) {
    throw NoConvergence("icp: fitness " + std::to_string(res.fitness) + " m above threshold");
  }
  const double scale = std::max(res.fitness, 1e-3);
  res.covariance.setZero();
  res.covariance.diagonal().head<3>().setConstant(cfg.rot_var * scale);
  res.covariance.diagonal().tail<3>().setConstant(cfg.pos_var * scale);
  return res;
}

namespace {

std::vector<Vec3> body_cloud(const Keyframe& kf) {
  std::vector<Vec3> out;
  out.reserve(kf.cloud.size());
  for (const auto& p : kf.cloud) out.push_back(p.cast<double>());
  return out;
}

}  // namespace

IcpResult icp_relative_pose(const Keyframe& source, const Keyframe& target, const Pose& init, const IcpConfig& cfg) {
  const std::vector<Vec3> s = body_cloud(source), t = body_cloud(target);
  return icp_align(s, t, init, cfg);
}

SurfelMap rebuild_map(const KeyframeStore& store, const MapConfig& cfg) {
  SurfelMap map(cfg);
  for (const Keyframe& kf : store.all()) {
    const std::vector<Vec3> w = kf.world_cloud();
    map.insert_cloud(w, kf.pose.trans);
  }
  return map;
}

std::vector<Vec3> keyframe_submap(const KeyframeStore& store, int center, int radius) {
  const int n = static_cast<int>(store.size());
  if (center < 0 || center >= n) throw std::out_of_range("submap center outside the store");
  const Pose inv = store[static_cast<std::size_t>(center)].pose.inverse();
  std::vector<Vec3> out;
  for (int i = std::max(0, center - radius); i <= std::min(n - 1, center + radius); ++i) {
    const Keyframe& kf = store[static_cast<std::size_t>(i)];
    const Pose rel = inv * kf.pose;
    for (const auto& p : kf.cloud) out.push_back(rel * p.cast<double>());
  }
  return out;
}

PoseGraph make_pose_graph(const KeyframeStore& store, std::span<const RelativePosePrior> loops, const LoopConfig& cfg) {
  PoseGraph g;
  for (const Keyframe& kf : store.all()) g.poses.push_back(kf.pose);
  Mat6 cov = Mat6::Zero();
  cov.diagonal().head<3>().setConstant(cfg.odom_rot_var);
  cov.diagonal().tail<3>().setConstant(cfg.odom_pos_var);
  for (std::size_t i = 1; i < g.poses.size(); ++i) {
    g.odometry.push_back(RelativePosePrior{static_cast<int>(i - 1), static_cast<int>(i),
                                           g.poses[i - 1].inverse() * g.poses[i], cov});
  }
  g.loops.assign(loops.begin(), loops.end());
  return g;
}

// ---------------------------------------------------------------------------

LoopWorker::LoopWorker(IcpConfig cfg) : cfg_(std::move(cfg)), thread_([this] { run(); }) {}

LoopWorker::~LoopWorker() {
  {
    std::lock_guard<std::mutex> lk(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  thread_.join();
}

bool LoopWorker::busy() const {
  std::lock_guard<std::mutex> lk(mu_);
  return pending_.has_value() || working_ || done_.has_value();
}

void LoopWorker::submit(LoopJob job) {
  {
    std::lock_guard<std::mutex> lk(mu_);
    if (pending_ || working_ || done_) throw std::logic_error("loop worker already has a job");
    pending_ = std::move(job);
  }
  cv_.notify_all();
}

std::optional<LoopResult> LoopWorker::join() {
  std::unique_lock<std::mutex> lk(mu_);
  cv_.wait(lk, [this] { return !pending_ && !working_; });
  std::optional<LoopResult> out = std::move(done_);
  done_.reset();
  return out;
}

void LoopWorker::run() {
  std::unique_lock<std::mutex> lk(mu_);
  for (;;) {
    cv_.wait(lk, [this] { return stop_ || pending_.has_value(); });
    if (stop_) return;
    LoopJob job = std::move(*pending_);
    pending_.reset();
    working_ = true;
    lk.unlock();
    LoopResult res;
    try {
      res.icp = icp_align(job.source, job.target, job.init, cfg_);
    } catch (const NoConvergence&) {
      res.icp.reset();
    }
    res.job = std::move(job);
    lk.lock();
    done_ = std::move(res);
    working_ = false;
    cv_.notify_all();
  }
}

}  // namespace surfelio
