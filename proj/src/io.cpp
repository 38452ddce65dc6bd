#include "surfelio/io.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>

#include "surfelio/errors.hpp"

namespace surfelio {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_write(const std::filesystem::path& path) {
  File f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return f;
}

void finish(File& f, const std::filesystem::path& path) {
  if (std::ferror(f.get()) || std::fclose(f.release()) != 0) {
    throw std::runtime_error("write failed for " + path.string());
  }
}

std::ifstream open_read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

// Splits on `sep`; empty fields are kept so they fail to parse.
template <std::size_t N>
bool split(std::string_view line, char sep, std::array<std::string_view, N>& out) {
  std::size_t n = 0, start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == sep) {
      if (n == N) return false;
      out[n++] = line.substr(start, i - start);
      start = i + 1;
    }
  }
  return n == N;
}

bool to_double(std::string_view s, double& v) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && p == s.data() + s.size() && std::isfinite(v);
}

bool to_int(std::string_view s, int& v) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return !s.empty() && ec == std::errc() && p == s.data() + s.size();
}

std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

void expect_header(std::ifstream& in, const std::filesystem::path& path, std::string_view header) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string(), 1, "missing header");
  if (trim_cr(line) != header) throw ParseError(path.string(), 1, "expected header '" + std::string(header) + "'");
}

}  // namespace

void write_scan_log(const std::filesystem::path& path, std::span<const RawPoint> points) {
  File f = open_write(path);
  std::fputs("t,lidar_id,x,y,z,intensity\n", f.get());
  for (const RawPoint& p : points) {
    std::fprintf(f.get(), "%.9f,%d,%.6f,%.6f,%.6f,%.1f\n", p.t, p.lidar_id, p.f.x(), p.f.y(), p.f.z(),
                 static_cast<double>(p.intensity));
  }
  finish(f, path);
}

void write_imu_log(const std::filesystem::path& path, std::span<const ImuSample> samples) {
  File f = open_write(path);
  std::fputs("t,wx,wy,wz,ax,ay,az\n", f.get());
  for (const ImuSample& s : samples) {
    std::fprintf(f.get(), "%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f\n", s.t, s.omega.x(), s.omega.y(), s.omega.z(),
                 s.accel.x(), s.accel.y(), s.accel.z());
  }
  finish(f, path);
}

void write_tum(const std::filesystem::path& path, std::span<const StampedPose> poses) {
  File f = open_write(path);
  for (const StampedPose& p : poses) {
    const Eigen::Quaterniond q = p.pose.rot.quat();
    std::fprintf(f.get(), "%.9f %.9f %.9f %.9f %.9f %.9f %.9f %.9f\n", p.t, p.pose.trans.x(), p.pose.trans.y(),
                 p.pose.trans.z(), q.x(), q.y(), q.z(), q.w());
  }
  finish(f, path);
}

std::vector<RawPoint> parse_scan_log(const std::filesystem::path& path) {
  std::ifstream in = open_read(path);
  expect_header(in, path, "t,lidar_id,x,y,z,intensity");
  std::vector<RawPoint> out;
  std::unordered_map<int, double> last_t;
  std::string line;
  std::size_t lineno = 1;
  std::array<std::string_view, 6> fields;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view sv = trim_cr(line);
    if (sv.empty()) continue;
    RawPoint p;
    double x, y, z, intensity;
    if (!split(sv, ',', fields) || !to_double(fields[0], p.t) || !to_int(fields[1], p.lidar_id) ||
        !to_double(fields[2], x) || !to_double(fields[3], y) || !to_double(fields[4], z) ||
        !to_double(fields[5], intensity)) {
      throw ParseError(path.string(), lineno, "malformed scan row");
    }
    p.f = Vec3(x, y, z);
    p.intensity = static_cast<float>(intensity);
    auto [it, fresh] = last_t.emplace(p.lidar_id, p.t);
    if (!fresh) {
      if (p.t < it->second) {
        throw ParseError(path.string(), lineno, "non-monotonic time for lidar " + std::to_string(p.lidar_id));
      }
      it->second = p.t;
    }
    out.push_back(p);
  }
  return out;
}

std::vector<ImuSample> parse_imu_log(const std::filesystem::path& path) {
  std::ifstream in = open_read(path);
  expect_header(in, path, "t,wx,wy,wz,ax,ay,az");
  std::vector<ImuSample> out;
  std::string line;
  std::size_t lineno = 1;
  std::array<std::string_view, 7> f;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view sv = trim_cr(line);
    if (sv.empty()) continue;
    ImuSample s;
    double v[6];
    bool ok = split(sv, ',', f) && to_double(f[0], s.t);
    for (int i = 0; ok && i < 6; ++i) ok = to_double(f[static_cast<std::size_t>(i) + 1], v[i]);
    if (!ok) throw ParseError(path.string(), lineno, "malformed imu row");
    s.omega = Vec3(v[0], v[1], v[2]);
    s.accel = Vec3(v[3], v[4], v[5]);
    if (!out.empty() && !(s.t > out.back().t)) throw ParseError(path.string(), lineno, "non-monotonic imu time");
    out.push_back(s);
  }
  return out;
}

std::vector<StampedPose> parse_tum(const std::filesystem::path& path) {
  std::ifstream in = open_read(path);
  std::vector<StampedPose> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv = trim_cr(line);
    while (!sv.empty() && sv.front() == ' ') sv.remove_prefix(1);
    if (sv.empty() || sv.front() == '#') continue;
    double v[8];
    int n = 0;
    std::size_t pos = 0;
    bool ok = true;
    while (ok && pos < sv.size()) {
      const std::size_t next = sv.find(' ', pos);
      const std::string_view tok = sv.substr(pos, next == std::string_view::npos ? sv.size() - pos : next - pos);
      pos = next == std::string_view::npos ? sv.size() : next + 1;
      if (tok.empty()) continue;
      ok = n < 8 && to_double(tok, v[n]);
      ++n;
    }
    if (!ok || n != 8) throw ParseError(path.string(), lineno, "expected 8 numeric fields");
    const Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    if (std::abs(q.norm() - 1.0) > 1e-6) throw ParseError(path.string(), lineno, "quaternion not unit norm");
    if (!out.empty() && !(v[0] > out.back().t)) throw ParseError(path.string(), lineno, "non-monotonic timestamp");
    out.push_back({v[0], Pose(Rotation(q.normalized()), Vec3(v[1], v[2], v[3]))});
  }
  return out;
}

void apply_extrinsics(std::span<RawPoint> points, const std::map<int, Pose>& extrinsics) {
  for (RawPoint& p : points) {
    auto it = extrinsics.find(p.lidar_id);
    if (it != extrinsics.end()) p.f = it->second * p.f;
  }
}

void write_ply(const std::filesystem::path& path, std::span<const Vec3> points, std::span<const float> intensity) {
  static_assert(std::endian::native == std::endian::little, "PLY writer assumes a little-endian host");
  if (!intensity.empty() && intensity.size() != points.size()) {
    throw std::invalid_argument("ply intensity count differs from point count");
  }
  File f = open_write(path);
  std::fprintf(f.get(),
               "ply\nformat binary_little_endian 1.0\nelement vertex %zu\n"
               "property float x\nproperty float y\nproperty float z\n%send_header\n",
               points.size(), intensity.empty() ? "" : "property float intensity\n");
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3& p = points[i];
    const float v[4] = {static_cast<float>(p.x()), static_cast<float>(p.y()), static_cast<float>(p.z()),
                        intensity.empty() ? 0.0f : intensity[i]};
    std::fwrite(v, sizeof(float), intensity.empty() ? 3 : 4, f.get());
  }
  finish(f, path);
}

}  // namespace surfelio
