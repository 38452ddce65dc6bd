#include "surfelio/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "surfelio/errors.hpp"
#include "surfelio/io.hpp"
#include "surfelio/parallel.hpp"

namespace surfelio::sim {

double Rng::uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (spare_) {
    const double v = *spare_;
    spare_.reset();
    return v;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(2.0 * M_PI * u2);
  return r * std::cos(2.0 * M_PI * u2);
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix(splitmix(splitmix(seed) ^ a) ^ (b * 0x2545F4914F6CDD1Dull));
}

std::optional<double> hit_rect(const Rect& r, const Vec3& o, const Vec3& d, double lo, double hi) {
  const Vec3 n = r.e1.cross(r.e2);
  const double denom = n.dot(d);
  if (std::abs(denom) < 1e-15) return std::nullopt;
  const double t = n.dot(r.corner - o) / denom;
  if (!(t > lo && t <= hi)) return std::nullopt;
  const Vec3 rel = o + t * d - r.corner;
  const double u = rel.dot(r.e1) / r.e1.squaredNorm();
  const double v = rel.dot(r.e2) / r.e2.squaredNorm();
  if (u < 0.0 || u > 1.0 || v < 0.0 || v > 1.0) return std::nullopt;
  return t;
}

std::optional<double> hit_box(const Box& b, const Vec3& o, const Vec3& d, double lo, double hi) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-300) {
      if (o[i] < b.lo[i] || o[i] > b.hi[i]) return std::nullopt;
      continue;
    }
    double a = (b.lo[i] - o[i]) / d[i];
    double c = (b.hi[i] - o[i]) / d[i];
    if (a > c) std::swap(a, c);
    t0 = std::max(t0, a);
    t1 = std::min(t1, c);
  }
  if (t0 > t1) return std::nullopt;
  const double t = t0 > lo ? t0 : t1;
  if (!(t > lo && t <= hi)) return std::nullopt;
  return t;
}

double rect_distance(const Rect& r, const Vec3& p) {
  const Vec3 rel = p - r.corner;
  const double u = std::clamp(rel.dot(r.e1) / r.e1.squaredNorm(), 0.0, 1.0);
  const double v = std::clamp(rel.dot(r.e2) / r.e2.squaredNorm(), 0.0, 1.0);
  return (p - (r.corner + u * r.e1 + v * r.e2)).norm();
}

double box_distance(const Box& b, const Vec3& p) {
  const Vec3 out = (b.lo - p).cwiseMax(p - b.hi).cwiseMax(Vec3::Zero());
  if (out.squaredNorm() > 0.0) return out.norm();
  return std::min((p - b.lo).minCoeff(), (b.hi - p).minCoeff());
}

// Six inward faces of an axis-aligned room.
void add_room(WorldModel& w, const Vec3& lo, const Vec3& hi) {
  const Vec3 s = hi - lo;
  w.rects.push_back({lo, Vec3(s.x(), 0, 0), Vec3(0, s.y(), 0)});                      // floor
  w.rects.push_back({Vec3(lo.x(), lo.y(), hi.z()), Vec3(s.x(), 0, 0), Vec3(0, s.y(), 0)});  // ceiling
  w.rects.push_back({lo, Vec3(s.x(), 0, 0), Vec3(0, 0, s.z())});                      // y = lo
  w.rects.push_back({Vec3(lo.x(), hi.y(), lo.z()), Vec3(s.x(), 0, 0), Vec3(0, 0, s.z())});
  w.rects.push_back({lo, Vec3(0, s.y(), 0), Vec3(0, 0, s.z())});                      // x = lo
  w.rects.push_back({Vec3(hi.x(), lo.y(), lo.z()), Vec3(0, s.y(), 0), Vec3(0, 0, s.z())});
}

}  // namespace

void WorldModel::validate() const {
  if (rects.empty() && boxes.empty()) throw std::invalid_argument("world has no surfaces");
  for (const Rect& r : rects) {
    if (r.e1.cross(r.e2).norm() < 1e-12) throw std::invalid_argument("degenerate rectangle");
    if (std::abs(r.e1.dot(r.e2)) > 1e-9 * r.e1.norm() * r.e2.norm()) {
      throw std::invalid_argument("rectangle edges must be orthogonal");
    }
  }
  for (const Box& b : boxes) {
    if (((b.hi - b.lo).array() <= 0.0).any()) throw std::invalid_argument("degenerate box");
  }
}

std::optional<double> WorldModel::raycast(const Vec3& origin, const Vec3& dir, double max_range,
                                          double min_range) const {
  std::optional<double> best;
  double hi = max_range;
  for (const Rect& r : rects) {
    if (auto t = hit_rect(r, origin, dir, min_range, hi)) {
      best = t;
      hi = *t;
    }
  }
  for (const Box& b : boxes) {
    if (auto t = hit_box(b, origin, dir, min_range, hi)) {
      best = t;
      hi = *t;
    }
  }
  return best;
}

double WorldModel::distance_to_surface(const Vec3& p) const {
  double d = std::numeric_limits<double>::infinity();
  for (const Rect& r : rects) d = std::min(d, rect_distance(r, p));
  for (const Box& b : boxes) d = std::min(d, box_distance(b, p));
  return d;
}

WorldModel WorldModel::room() {
  WorldModel w;
  w.name = "room";
  add_room(w, Vec3(-5, -4, 0), Vec3(5, 4, 3));
  return w;
}

WorldModel WorldModel::corridor_loop() {
  WorldModel w;
  w.name = "corridor-loop";
  add_room(w, Vec3(-15, -10, 0), Vec3(15, 10, 3));
  w.boxes.push_back({Vec3(-11, -6, 0), Vec3(11, 6, 3)});
  return w;
}

WorldModel WorldModel::two_scale() {
  WorldModel w;
  w.name = "two-scale";
  add_room(w, Vec3(-6, -5, 0), Vec3(6, 5, 3));
  // Small panels standing off the long walls.
  for (int i = 0; i < 7; ++i) {
    const double x = -4.5 + 1.5 * i;
    const double z = 0.6 + 0.5 * (i % 3);
    w.boxes.push_back({Vec3(x, -5.0, z), Vec3(x + 0.4, -4.85, z + 0.4)});
    w.boxes.push_back({Vec3(x + 0.5, 4.85, z + 0.3), Vec3(x + 0.9, 5.0, z + 0.7)});
  }
  for (int i = 0; i < 5; ++i) {
    const double y = -3.5 + 1.6 * i;
    w.boxes.push_back({Vec3(-6.0, y, 1.0), Vec3(-5.85, y + 0.4, 1.4)});
    w.boxes.push_back({Vec3(5.85, y + 0.4, 1.6), Vec3(6.0, y + 0.8, 2.0)});
  }
  // A few small free-standing blocks.
  w.boxes.push_back({Vec3(-3.5, 2.5, 0.0), Vec3(-3.0, 3.0, 0.5)});
  w.boxes.push_back({Vec3(3.0, -3.2, 0.0), Vec3(3.5, -2.7, 0.5)});
  w.boxes.push_back({Vec3(0.5, 3.3, 0.0), Vec3(0.9, 3.7, 0.8)});
  return w;
}

WorldModel WorldModel::by_name(const std::string& name) {
  if (name == "room") return room();
  if (name == "corridor-loop") return corridor_loop();
  if (name == "two-scale") return two_scale();
  throw std::invalid_argument("unknown world '" + name + "'");
}

double SineSeries::value(double tau) const {
  double v = offset;
  for (const Term& t : terms) v += t.amp * std::sin(t.freq * tau + t.phase);
  return v;
}

double SineSeries::d1(double tau) const {
  double v = 0.0;
  for (const Term& t : terms) v += t.amp * t.freq * std::cos(t.freq * tau + t.phase);
  return v;
}

double SineSeries::d2(double tau) const {
  double v = 0.0;
  for (const Term& t : terms) v -= t.amp * t.freq * t.freq * std::sin(t.freq * tau + t.phase);
  return v;
}

TrajectorySpec TrajectorySpec::stationary(double duration) {
  TrajectorySpec s;
  s.duration = duration;
  s.z.offset = 1.2;
  return s;
}

TrajectorySpec TrajectorySpec::for_world(const std::string& world, double duration) {
  TrajectorySpec s;
  s.duration = duration;
  if (world == "corridor-loop") {
    // Rounded rectangle along the corridor centre line, one lap per 60 s of tau.
    const double w = 2.0 * M_PI / 60.0;
    s.x.terms = {{13.0 * 1.1402, w, M_PI / 2}, {-13.0 * 0.2012, 3 * w, M_PI / 2}};
    s.y.terms = {{8.0 * 1.1402, w, 0.0}, {8.0 * 0.2012, 3 * w, 0.0}};
    s.z.offset = 1.4;
    s.z.terms = {{0.15, 0.4, 0.0}};
    s.yaw.terms = {{0.6, 0.2, 0.0}, {0.2, 0.53, 1.0}};
    s.pitch.terms = {{0.05, 0.6, 0.3}};
    s.roll.terms = {{0.05, 0.5, 1.2}};
    return s;
  }
  // room and two-scale share a gentle wander around the middle.
  s.x.terms = {{2.2, 0.25, 0.0}, {0.3, 0.7, 0.4}};
  s.y.terms = {{1.8, 0.33, 0.5}, {0.2, 0.9, 1.1}};
  s.z.offset = 1.3;
  s.z.terms = {{0.25, 0.4, 0.0}};
  s.yaw.terms = {{1.0, 0.12, 0.0}, {0.3, 0.31, 0.7}};
  s.pitch.terms = {{0.08, 0.5, 0.2}};
  s.roll.terms = {{0.06, 0.45, 1.0}};
  return s;
}

TrajectorySample eval_trajectory(const TrajectorySpec& spec, Timestamp t, const Vec3& gravity) {
  if (t < 0.0 || t > spec.duration) throw OutOfRange("trajectory time " + std::to_string(t) + " out of range");
  double tau = 0.0, dtau = 0.0, ddtau = 0.0;
  if (t >= spec.hold) {
    if (spec.ramp > 0.0 && t < spec.hold + spec.ramp) {
      const double u = (t - spec.hold) / spec.ramp;
      tau = spec.ramp * (u * u * u - 0.5 * u * u * u * u);
      dtau = 3 * u * u - 2 * u * u * u;
      ddtau = (6 * u - 6 * u * u) / spec.ramp;
    } else {
      tau = 0.5 * spec.ramp + (t - spec.hold - spec.ramp);
      dtau = 1.0;
    }
  }
  auto pos = [&](const SineSeries& s) { return s.value(tau); };
  auto vel = [&](const SineSeries& s) { return s.d1(tau) * dtau; };
  auto acc = [&](const SineSeries& s) { return s.d2(tau) * dtau * dtau + s.d1(tau) * ddtau; };

  TrajectorySample out;
  const double psi = pos(spec.yaw), th = pos(spec.pitch), ph = pos(spec.roll);
  const double dpsi = vel(spec.yaw), dth = vel(spec.pitch), dph = vel(spec.roll);
  const Eigen::Quaterniond q = Eigen::AngleAxisd(psi, Vec3::UnitZ()) * Eigen::AngleAxisd(th, Vec3::UnitY()) *
                               Eigen::AngleAxisd(ph, Vec3::UnitX());
  out.pose = Pose(Rotation(q), Vec3(pos(spec.x), pos(spec.y), pos(spec.z)));
  out.vel = Vec3(vel(spec.x), vel(spec.y), vel(spec.z));
  out.acc = Vec3(acc(spec.x), acc(spec.y), acc(spec.z));
  const double sth = std::sin(th), cth = std::cos(th), sph = std::sin(ph), cph = std::cos(ph);
  out.omega = Vec3(dph - dpsi * sth, dth * cph + dpsi * cth * sph, -dth * sph + dpsi * cth * cph);
  out.specific = out.pose.rot.inverse() * (out.acc - gravity);
  return out;
}

SimConfig SimConfig::defaults(bool noisy) {
  SimConfig c;
  LidarSim primary;
  primary.id = 0;
  primary.channels = 16;
  primary.columns = 180;
  primary.rate = 10.0;
  primary.fov_down_deg = -15.0;
  primary.fov_up_deg = 15.0;
  primary.extrinsic = Pose(Rotation(), Vec3(0.05, 0.0, 0.1));
  LidarSim secondary;
  secondary.id = 1;
  secondary.channels = 8;
  secondary.columns = 90;
  secondary.rate = 20.0;
  secondary.fov_down_deg = -30.0;
  secondary.fov_up_deg = 30.0;
  // Mounted on its side so it sweeps a vertical plane.
  secondary.extrinsic = Pose(exp_so3(Vec3(M_PI / 2, 0.0, 0.0)), Vec3(-0.05, 0.0, 0.15));
  if (noisy) {
    primary.range_noise = 0.02;
    secondary.range_noise = 0.02;
  }
  c.lidars = {primary, secondary};
  c.imu.noisy = noisy;
  if (noisy) {
    c.imu.bg0 = Vec3(0.002, -0.003, 0.001);
    c.imu.ba0 = Vec3(0.02, -0.01, 0.015);
  }
  return c;
}

std::vector<RawPoint> raycast_scan(const WorldModel& world, const std::function<Pose(Timestamp)>& body_at,
                                   const LidarSim& lidar, Timestamp t0, Rng* rng) {
  std::vector<RawPoint> out;
  out.reserve(static_cast<std::size_t>(lidar.channels * lidar.columns));
  const double period = 1.0 / lidar.rate;
  const double down = deg2rad(lidar.fov_down_deg), up = deg2rad(lidar.fov_up_deg);
  for (int c = 0; c < lidar.columns; ++c) {
    const double t = t0 + period * c / lidar.columns;
    const Pose sensor = body_at(t) * lidar.extrinsic;
    const double az = 2.0 * M_PI * c / lidar.columns;
    for (int ch = 0; ch < lidar.channels; ++ch) {
      const double el = lidar.channels > 1 ? down + (up - down) * ch / (lidar.channels - 1) : 0.5 * (down + up);
      const Vec3 dir(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
      const auto hit = world.raycast(sensor.trans, sensor.rot * dir, lidar.max_range, lidar.min_range);
      double range = hit.value_or(0.0);
      if (hit && lidar.range_noise > 0.0 && rng != nullptr) range += lidar.range_noise * rng->normal();
      if (!hit || range <= lidar.min_range) continue;
      out.push_back(RawPoint{dir * range, t, lidar.id, 100.0f});
    }
  }
  return out;
}

std::vector<RawPoint> raycast_scan(const WorldModel& world, const Pose& body, const LidarSim& lidar, Timestamp t0,
                                   Rng* rng) {
  return raycast_scan(world, [&](Timestamp) { return body; }, lidar, t0, rng);
}

namespace {

int count_steps(double duration, double rate) { return static_cast<int>(std::floor(duration * rate + 1e-9)); }

}  // namespace

Dataset simulate(const WorldModel& world, const TrajectorySpec& spec, const SimConfig& cfg) {
  world.validate();
  if (cfg.lidars.empty()) throw std::invalid_argument("simulation needs at least one lidar");
  for (const LidarSim& l : cfg.lidars) {
    if (!(l.rate > 0.0) || l.channels < 1 || l.columns < 1) throw std::invalid_argument("invalid lidar config");
  }
  if (!(cfg.imu.rate > 0.0)) throw std::invalid_argument("imu rate must be > 0");
  const Vec3 g = cfg.imu.noise.gravity;
  auto body_at = [&](Timestamp t) { return eval_trajectory(spec, std::min(t, spec.duration), g).pose; };

  Dataset ds;
  std::vector<std::vector<RawPoint>> all;
  for (const LidarSim& l : cfg.lidars) {
    const int n = count_steps(cfg.duration, l.rate);
    std::vector<std::vector<RawPoint>> scans(static_cast<std::size_t>(n));
    parallel_for_chunks(
        scans.size(),
        [&](std::size_t b, std::size_t e) {
          for (std::size_t i = b; i < e; ++i) {
            Rng rng(stream_seed(cfg.seed, static_cast<std::uint64_t>(l.id) + 1, i));
            scans[i] = raycast_scan(world, body_at, l, static_cast<double>(i) / l.rate, &rng);
          }
        },
        8);
    for (auto& s : scans) all.push_back(std::move(s));
  }
  std::size_t total = 0;
  for (const auto& s : all) total += s.size();
  ds.points.reserve(total);
  for (auto& s : all) ds.points.insert(ds.points.end(), s.begin(), s.end());
  std::stable_sort(ds.points.begin(), ds.points.end(), [](const RawPoint& a, const RawPoint& b) {
    return a.t < b.t || (a.t == b.t && a.lidar_id < b.lidar_id);
  });

  const int n_imu = count_steps(cfg.duration, cfg.imu.rate);
  const double dt = 1.0 / cfg.imu.rate;
  Rng rng(stream_seed(cfg.seed, 0x1u, 0x5EEDu));
  Vec3 bg = cfg.imu.bg0, ba = cfg.imu.ba0;
  const ImuNoise& nz = cfg.imu.noise;
  ds.imu.reserve(static_cast<std::size_t>(n_imu));
  for (int i = 0; i < n_imu; ++i) {
    const double t = static_cast<double>(i) / cfg.imu.rate;
    const TrajectorySample s = eval_trajectory(spec, t, g);
    ImuSample m{t, s.omega, s.specific};
    if (cfg.imu.noisy) {
      const Vec3 ng(rng.normal(), rng.normal(), rng.normal());
      const Vec3 na(rng.normal(), rng.normal(), rng.normal());
      m.omega += bg + nz.gyro_noise / std::sqrt(dt) * ng;
      m.accel += ba + nz.accel_noise / std::sqrt(dt) * na;
      const Vec3 wg(rng.normal(), rng.normal(), rng.normal());
      const Vec3 wa(rng.normal(), rng.normal(), rng.normal());
      bg += nz.gyro_bias_walk * std::sqrt(dt) * wg;
      ba += nz.accel_bias_walk * std::sqrt(dt) * wa;
    }
    ds.imu.push_back(m);
  }

  const LidarSim& primary = cfg.lidars.front();
  const int n_scans = count_steps(cfg.duration, primary.rate);
  ds.truth.push_back({0.0, eval_trajectory(spec, 0.0, g).pose});
  for (int i = 1; i <= n_scans; ++i) {
    const double t = static_cast<double>(i) / primary.rate;
    ds.truth.push_back({t, eval_trajectory(spec, std::min(t, spec.duration), g).pose});
  }
  return ds;
}

DatasetPaths DatasetPaths::in(const std::filesystem::path& dir) {
  return DatasetPaths{dir / "scans.csv", dir / "imu.csv", dir / "groundtruth.txt", dir / "manifest.txt"};
}

DatasetPaths generate_dataset(const WorldModel& world, const TrajectorySpec& spec, const SimConfig& cfg,
                              const std::filesystem::path& dir) {
  const Dataset ds = simulate(world, spec, cfg);
  std::filesystem::create_directories(dir);
  const DatasetPaths paths = DatasetPaths::in(dir);
  write_scan_log(paths.scans, ds.points);
  write_imu_log(paths.imu, ds.imu);
  write_tum(paths.truth, ds.truth);

  std::ofstream m(paths.manifest);
  if (!m) throw std::runtime_error("cannot write " + paths.manifest.string());
  char buf[256];
  m << "world=" << world.name << "\n";
  m << "seed=" << cfg.seed << "\n";
  std::snprintf(buf, sizeof buf, "duration=%.9g\n", cfg.duration);
  m << buf;
  std::snprintf(buf, sizeof buf, "imu.rate=%.9g\nimu.noisy=%d\n", cfg.imu.rate, cfg.imu.noisy ? 1 : 0);
  m << buf;
  for (const LidarSim& l : cfg.lidars) {
    const Eigen::Quaterniond q = l.extrinsic.rot.quat();
    std::snprintf(buf, sizeof buf,
                  "lidar.%d=channels:%d columns:%d rate:%.9g range:%.9g noise:%.9g extrinsic:%.9g,%.9g,%.9g,%.9g,%.9g,"
                  "%.9g,%.9g\n",
                  l.id, l.channels, l.columns, l.rate, l.max_range, l.range_noise, l.extrinsic.trans.x(),
                  l.extrinsic.trans.y(), l.extrinsic.trans.z(), q.x(), q.y(), q.z(), q.w());
    m << buf;
  }
  std::snprintf(buf, sizeof buf, "points=%zu\nimu_rows=%zu\nscans=%zu\n", ds.points.size(), ds.imu.size(),
                ds.truth.size() - 1);
  m << buf;
  if (!m) throw std::runtime_error("write failed for " + paths.manifest.string());
  return paths;
}

}  // namespace surfelio::sim
