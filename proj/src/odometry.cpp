#include "surfelio/odometry.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "surfelio/errors.hpp"
#include "surfelio/io.hpp"

namespace surfelio {

OdometrySystem::OdometrySystem(RunConfig cfg) : cfg_(std::move(cfg)), map_(cfg_.map) {
  cfg_.validate();
  if (cfg_.loop.enabled) worker_ = std::make_unique<LoopWorker>(cfg_.loop.icp);
}

OdometrySystem::~OdometrySystem() = default;

void OdometrySystem::emit(Timestamp t, const Pose& pose) {
  const int anchor = static_cast<int>(store_.size()) - 1;
  rows_.push_back(Row{t, pose, anchor, store_[static_cast<std::size_t>(anchor)].pose.inverse() * pose});
}

void OdometrySystem::add_keyframe(Keyframe kf) {
  std::vector<Vec3> body;
  body.reserve(kf.cloud.size());
  for (const auto& p : kf.cloud) body.push_back(p.cast<double>());
  const Keyframe& stored = store_.add(kf.t, kf.pose, body);
  // The stored (float) cloud is what a rebuild will insert, so use it here too.
  map_.insert_cloud(stored.world_cloud(), stored.pose.trans);
}

void OdometrySystem::transform_window(const Pose& c) {
  auto move = [&](StateEstimate& x) {
    x.rot = c.rot * x.rot;
    x.pos = c * x.pos;
    x.vel = c.rot * x.vel;
  };
  for (StateEstimate& x : win_.states) move(x);
  if (win_.head_prior) move(win_.head_prior->mean);
}

void OdometrySystem::inject_drift(const Pose& previous_keyframe, Pose& kf_pose) {
  const double yaw = cfg_.drift_yaw_per_meter * (kf_pose.trans - previous_keyframe.trans).norm();
  const Rotation rz = exp_so3(Vec3(0, 0, yaw));
  // Rotate about the new keyframe's position so the error shows up downstream.
  const Pose d(rz, kf_pose.trans - rz * kf_pose.trans);
  kf_pose = d * kf_pose;
  transform_window(d);
}

void OdometrySystem::maybe_submit_loop(int query) {
  if (!worker_ || query - last_loop_attempt_ < cfg_.loop_retry_keyframes) return;
  const Keyframe& q = store_[static_cast<std::size_t>(query)];
  const auto cand = detect_loop(q, store_, cfg_.loop.candidates, cfg_.loop.min_time_gap);
  if (!cand) return;
  last_loop_attempt_ = query;
  LoopJob job;
  job.query = query;
  job.candidate = *cand;
  job.source.reserve(q.cloud.size());
  for (const auto& p : q.cloud) job.source.push_back(p.cast<double>());
  job.target = keyframe_submap(store_, *cand, cfg_.loop.submap_radius);
  job.init = store_[static_cast<std::size_t>(*cand)].pose.inverse() * q.pose;
  worker_->submit(std::move(job));
}

void OdometrySystem::apply_loop(const LoopResult& res, RunResult& out) {
  if (!res.icp) {
    ++out.loops_rejected;
    return;
  }
  ++out.loops_accepted;
  loops_.push_back(RelativePosePrior{res.job.candidate, res.job.query, res.icp->rel, res.icp->covariance});
  graph_ = make_pose_graph(store_, loops_, cfg_.loop);
  LmOptions opt;
  opt.max_iterations = 50;
  optimize_pose_graph(graph_, opt);

  const Pose last_before = store_[store_.size() - 1].pose;
  for (std::size_t i = 0; i < store_.size(); ++i) store_[i].pose = graph_.poses[i];
  map_ = rebuild_map(store_, cfg_.map);
  // The window rides along with the newest keyframe.
  transform_window(store_[store_.size() - 1].pose * last_before.inverse());
  corrected_ = true;
}

RunResult OdometrySystem::run(std::span<const RawPoint> points, std::span<const ImuSample> imu) {
  using Clock = std::chrono::steady_clock;
  if (points.empty() || imu.empty()) throw std::invalid_argument("run needs lidar points and imu samples");
  if (!store_.empty()) throw std::logic_error("OdometrySystem::run may only be called once");

  SensorBuffers buf;
  buf.add_points(points);
  buf.add_imu(imu);
  buf.set_complete();

  std::size_t n_init = 0;
  while (n_init < imu.size() && imu[n_init].t < imu.front().t + cfg_.init_duration) ++n_init;
  const StateEstimate x0 = static_initialize(imu.subspan(0, n_init), cfg_.imu);

  const std::vector<RawPoint>* primary = buf.stream(cfg_.sync.primary_lidar_id);
  if (primary == nullptr || primary->empty()) throw std::invalid_argument("no points from the primary lidar");
  const std::int64_t sweep_ns = std::llround(cfg_.sync.sweep_period * 1e9);
  auto knot = [&](std::int64_t k) { return static_cast<double>(k * sweep_ns) * 1e-9; };
  const double t_begin = std::max(primary->front().t, imu.front().t);
  std::int64_t k = static_cast<std::int64_t>(std::ceil(t_begin * 1e9 / static_cast<double>(sweep_ns) - 1e-6)) + 1;

  RunResult out;
  const std::size_t kpb = static_cast<std::size_t>(cfg_.sync.knots_per_bundle);
  for (;; ++k) {
    const auto loop_start = Clock::now();
    auto bundle = sync_extract(buf, knot(k), cfg_.sync);
    if (!bundle) break;
    admit_bundle(win_, std::move(*bundle), cfg_.sync, cfg_.imu, cfg_.solver, x0);

    TimingRecord rec;
    rec.window_index = static_cast<int>(out.windows++);
    rec.t_k = knot(k);

    if (store_.empty()) {
      // Bootstrap: the first sweep, deskewed by IMU propagation, seeds the map.
      repropagate(win_, cfg_.imu);
      const std::vector<Vec3> cloud = bundle_cloud_at_end(win_, 0, cfg_.sync);
      Keyframe kf;
      kf.t = win_.knot_times[kpb];
      kf.pose = win_.states[kpb].pose();
      for (const Vec3& p : cloud) kf.cloud.push_back(p.cast<float>());
      add_keyframe(std::move(kf));
      win_.bundles.front().keyframed = true;
      emit(win_.knot_times.front(), win_.states.front().pose());
    } else {
      const OptimizeReport rep = optimize(win_, map_, cfg_.imu, cfg_.solver);
      rec.dt_solve_ms = rep.solve_ms;
      rec.num_factors = rep.factors.total();

      // Background ICP started last cycle lands here, at a fixed point in the sequence.
      if (worker_ && worker_->busy()) {
        if (auto res = worker_->join()) apply_loop(*res, out);
      }

      if (win_.bundles.size() >= static_cast<std::size_t>(cfg_.sync.window_bundles)) {
        Marginalized m = marginalize_keyframe(win_, store_, cfg_.keyframe, cfg_.sync, cfg_.imu, cfg_.solver);
        if (m.keyframe) {
          if (cfg_.drift_yaw_per_meter != 0.0) {
            inject_drift(store_[store_.size() - 1].pose, m.keyframe->pose);
            m.pose = m.keyframe->pose;
          }
          add_keyframe(std::move(*m.keyframe));
          maybe_submit_loop(static_cast<int>(store_.size()) - 1);
        }
        emit(m.t, m.pose);
      }
    }
    rec.dt_loop_ms = std::chrono::duration<double, std::milli>(Clock::now() - loop_start).count();
    out.timing.push_back(rec);
  }
  if (store_.empty()) throw DataGap("no complete sweep in the data");
  if (worker_ && worker_->busy()) {
    if (auto res = worker_->join()) apply_loop(*res, out);
  }

  // Knots still in the window at bundle boundaries; the head is already out.
  for (std::size_t i = kpb; i < win_.knot_times.size(); i += kpb) emit(win_.knot_times[i], win_.states[i].pose());

  out.trajectory.reserve(rows_.size());
  for (const Row& r : rows_) {
    const Pose p = corrected_ ? store_[static_cast<std::size_t>(r.anchor)].pose * r.rel : r.pose;
    out.trajectory.push_back(StampedPose{r.t, p});
  }
  out.keyframes = store_.size();
  return out;
}

void write_timing_csv(const std::filesystem::path& path, std::span<const TimingRecord> rows) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) throw std::runtime_error("cannot open " + path.string() + " for writing");
  std::fprintf(f, "window_index,t_k,dt_loop_ms,dt_solve_ms,num_factors\n");
  for (const TimingRecord& r : rows) {
    std::fprintf(f, "%d,%.9f,%.3f,%.3f,%zu\n", r.window_index, r.t_k, r.dt_loop_ms, r.dt_solve_ms, r.num_factors);
  }
  const bool bad = std::ferror(f) != 0;
  if (std::fclose(f) != 0 || bad) throw std::runtime_error("write failed for " + path.string());
}

void write_map_ply(const std::filesystem::path& path, const SurfelMap& map) {
  std::vector<Vec3> pts;
  std::vector<float> n;
  for (const NodeKey& key : map.sorted_keys()) {
    if (key.depth != 0) continue;
    const SurfelStats& s = map.find(key)->stats;
    pts.push_back(s.sum / static_cast<double>(s.n));
    n.push_back(static_cast<float>(s.n));
  }
  write_ply(path, pts, n);
}

RunResult run_odometry(const RunConfig& cfg) {
  cfg.validate();
  std::vector<RawPoint> points = parse_scan_log(cfg.dataset / "scans.csv");
  const std::vector<ImuSample> imu = parse_imu_log(cfg.dataset / "imu.csv");
  apply_extrinsics(points, cfg.extrinsics);
  std::stable_sort(points.begin(), points.end(), [](const RawPoint& a, const RawPoint& b) { return a.t < b.t; });

  OdometrySystem sys(cfg);
  RunResult res = sys.run(points, imu);

  std::filesystem::create_directories(cfg.output);
  write_tum(cfg.output / "trajectory.txt", res.trajectory);
  write_timing_csv(cfg.output / "timing.csv", res.timing);
  if (cfg.export_map) write_map_ply(cfg.output / "map.ply", sys.map());
  if (!sys.pose_graph().poses.empty()) write_g2o(cfg.output / "pose_graph.g2o", sys.pose_graph());
  return res;
}

}  // namespace surfelio
