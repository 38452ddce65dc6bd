#include "surfelio/run_config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <variant>
#include <vector>

#include "surfelio/errors.hpp"

namespace surfelio {

namespace {

using Ref = std::variant<double*, int*, bool*, std::size_t*, Vec3*, std::filesystem::path*>;

struct Field {
  std::string key;
  Ref ref;
};

// One table drives parsing and serialization so the two cannot disagree.
std::vector<Field> fields(RunConfig& c) {
  return {
      {"map.leaf_size", &c.map.leaf_size},
      {"map.max_depth", &c.map.max_depth},
      {"map.min_points", &c.map.min_points},
      {"map.min_planarity", &c.map.min_planarity},
      {"map.search_radius", &c.map.search_radius},
      {"map.max_plane_dist", &c.map.max_plane_dist},

      {"sync.primary_lidar", &c.sync.primary_lidar_id},
      {"sync.sweep_period", &c.sync.sweep_period},
      {"sync.knots_per_bundle", &c.sync.knots_per_bundle},
      {"sync.window_bundles", &c.sync.window_bundles},
      {"sync.imu_period", &c.sync.imu_period},

      {"solver.max_outer_iterations", &c.solver.max_outer_iterations},
      {"solver.max_inner_iterations", &c.solver.max_inner_iterations},
      {"solver.robust", &c.solver.robust},
      {"solver.huber_delta", &c.solver.huber_delta},
      {"solver.outer_tolerance", &c.solver.outer_tolerance},
      {"solver.lidar_sigma2", &c.solver.lidar_sigma2},
      {"solver.relative_tolerance", &c.solver.relative_tolerance},
      {"solver.max_points_per_bundle", &c.solver.max_points_per_bundle},
      {"solver.use_lidar", &c.solver.use_lidar},
      {"solver.per_scale_weight", &c.solver.assoc.per_scale_weight},
      {"solver.prior_rot", &c.solver.prior_rot},
      {"solver.prior_pos", &c.solver.prior_pos},
      {"solver.prior_vel", &c.solver.prior_vel},
      {"solver.prior_bg", &c.solver.prior_bg},
      {"solver.prior_ba", &c.solver.prior_ba},

      {"imu.gyro_noise", &c.imu.gyro_noise},
      {"imu.accel_noise", &c.imu.accel_noise},
      {"imu.gyro_bias_walk", &c.imu.gyro_bias_walk},
      {"imu.accel_bias_walk", &c.imu.accel_bias_walk},
      {"imu.gravity", &c.imu.gravity},

      {"keyframe.meters", &c.keyframe.meters},
      {"keyframe.degrees", &c.keyframe.degrees},
      {"keyframe.neighbours", &c.keyframe.neighbours},

      {"loop.enabled", &c.loop.enabled},
      {"loop.candidates", &c.loop.candidates},
      {"loop.min_time_gap", &c.loop.min_time_gap},
      {"loop.submap_radius", &c.loop.submap_radius},
      {"loop.odom_rot_var", &c.loop.odom_rot_var},
      {"loop.odom_pos_var", &c.loop.odom_pos_var},
      {"loop.retry_keyframes", &c.loop_retry_keyframes},
      {"loop.icp.max_iterations", &c.loop.icp.max_iterations},
      {"loop.icp.normal_neighbours", &c.loop.icp.normal_neighbours},
      {"loop.icp.max_correspondence", &c.loop.icp.max_correspondence},
      {"loop.icp.fitness_threshold", &c.loop.icp.fitness_threshold},
      {"loop.icp.min_inlier_ratio", &c.loop.icp.min_inlier_ratio},
      {"loop.icp.max_source_points", &c.loop.icp.max_source_points},
      {"loop.icp.rot_var", &c.loop.icp.rot_var},
      {"loop.icp.pos_var", &c.loop.icp.pos_var},

      {"init.duration", &c.init_duration},
      {"drift.yaw_per_meter", &c.drift_yaw_per_meter},
      {"dataset", &c.dataset},
      {"output", &c.output},
      {"export.map", &c.export_map},
  };
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(s);
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, out);
  return r.ec == std::errc() && r.ptr == end;
}

bool parse_values(const std::string& s, std::size_t n, std::vector<double>& out) {
  const auto parts = split(s, ',');
  if (parts.size() != n) return false;
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!parse_number(parts[i], out[i])) return false;
  }
  return true;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Assign {
  const std::string& v;
  bool operator()(double* p) const { return parse_number(v, *p); }
  bool operator()(int* p) const { return parse_number(v, *p); }
  bool operator()(std::size_t* p) const { return parse_number(v, *p); }
  bool operator()(bool* p) const {
    if (v == "true" || v == "1" || v == "on") return *p = true, true;
    if (v == "false" || v == "0" || v == "off") return *p = false, true;
    return false;
  }
  bool operator()(Vec3* p) const {
    std::vector<double> x;
    if (!parse_values(v, 3, x)) return false;
    *p = Vec3(x[0], x[1], x[2]);
    return true;
  }
  bool operator()(std::filesystem::path* p) const {
    *p = v;
    return true;
  }
};

struct Show {
  std::string operator()(const double* p) const { return fmt(*p); }
  std::string operator()(const int* p) const { return std::to_string(*p); }
  std::string operator()(const std::size_t* p) const { return std::to_string(*p); }
  std::string operator()(const bool* p) const { return *p ? "true" : "false"; }
  std::string operator()(const Vec3* p) const { return fmt(p->x()) + "," + fmt(p->y()) + "," + fmt(p->z()); }
  std::string operator()(const std::filesystem::path* p) const { return p->string(); }
};

}  // namespace

std::vector<int> RunConfig::depths() const {
  std::vector<int> out;
  for (int d = 0; d <= map.max_depth && d < 32; ++d) {
    if ((solver.assoc.depth_mask >> d) & 1u) out.push_back(d);
  }
  return out;
}

void RunConfig::set_depths(const std::vector<int>& depths) {
  std::uint32_t mask = 0;
  for (int d : depths) {
    if (d < 0 || d >= 32) throw std::invalid_argument("surfel depth " + std::to_string(d) + " out of range");
    mask |= 1u << d;
  }
  solver.assoc.depth_mask = mask;
}

void RunConfig::validate() const {
  map.validate();
  sync.validate();
  solver.validate();
  imu.validate();
  loop.validate();
  if (!(keyframe.meters >= 0 && keyframe.degrees >= 0 && keyframe.neighbours >= 1)) {
    throw std::invalid_argument("keyframe thresholds must be >= 0 and neighbours >= 1");
  }
  if (!(init_duration > 0)) throw std::invalid_argument("init.duration must be > 0");
  if (loop_retry_keyframes < 0) throw std::invalid_argument("loop.retry_keyframes must be >= 0");
  if (!std::isfinite(drift_yaw_per_meter)) throw std::invalid_argument("drift.yaw_per_meter must be finite");
  bool any = false;
  for (int d : depths()) any = any || d >= 1;
  if (!any) throw std::invalid_argument("surfel.depths must enable at least one depth in 1..map.max_depth");
  for (const auto& [id, e] : extrinsics) {
    if (!e.trans.allFinite()) throw std::invalid_argument("extrinsic." + std::to_string(id) + " is not finite");
  }
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::vector<Field> table = fields(c);
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& what) { throw ParseError("config", lineno, what); };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    if (key == "surfel.depths") {
      std::vector<int> d;
      for (const std::string& part : split(value, ',')) {
        int v = 0;
        if (!parse_number(part, v) || v < 0 || v >= 32) fail("bad depth list '" + value + "'");
        d.push_back(v);
      }
      c.set_depths(d);
      continue;
    }
    if (key == "seed") {
      if (!parse_number(value, c.seed)) fail("bad seed '" + value + "'");
      continue;
    }
    if (key.rfind("extrinsic.", 0) == 0) {
      int id = 0;
      std::vector<double> v;
      if (!parse_number(key.substr(10), id)) fail("bad lidar id in '" + key + "'");
      if (!parse_values(value, 7, v)) fail("extrinsic needs tx,ty,tz,qx,qy,qz,qw");
      const Eigen::Quaterniond q(v[6], v[3], v[4], v[5]);
      if (std::abs(q.norm() - 1.0) > 1e-6) fail("extrinsic quaternion is not unit length");
      c.extrinsics[id] = Pose(Rotation(q.normalized()), Vec3(v[0], v[1], v[2]));
      continue;
    }
    bool found = false;
    for (Field& f : table) {
      if (f.key != key) continue;
      found = true;
      if (!std::visit(Assign{value}, f.ref)) fail("bad value '" + value + "' for " + key);
      break;
    }
    if (!found) fail("unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str());
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    throw ParseError(path.string(), e.line(), msg.substr(msg.find(": ") + 2));
  }
}

std::string RunConfig::serialize() const {
  RunConfig copy = *this;
  std::ostringstream out;
  for (const Field& f : fields(copy)) out << f.key << " = " << std::visit(Show{}, f.ref) << "\n";
  std::string depth_list;
  for (int d : depths()) depth_list += (depth_list.empty() ? "" : ",") + std::to_string(d);
  out << "surfel.depths = " << depth_list << "\n";
  out << "seed = " << seed << "\n";
  for (const auto& [id, e] : extrinsics) {
    const Eigen::Quaterniond& q = e.rot.quat();
    out << "extrinsic." << id << " = " << fmt(e.trans.x()) << "," << fmt(e.trans.y()) << "," << fmt(e.trans.z()) << ","
        << fmt(q.x()) << "," << fmt(q.y()) << "," << fmt(q.z()) << "," << fmt(q.w()) << "\n";
  }
  return out.str();
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  out << serialize();
  if (!out) throw std::runtime_error("cannot write config " + path.string());
}

}  // namespace surfelio
