#include "surfelio/imu.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "surfelio/errors.hpp"

namespace surfelio {

void ImuNoise::validate() const {
  if (!(gyro_noise > 0.0 && accel_noise > 0.0 && gyro_bias_walk > 0.0 && accel_bias_walk > 0.0)) {
    throw std::invalid_argument("imu noise terms must be > 0");
  }
  if (std::abs(gravity.norm() - 9.81) > 0.1) {
    throw std::invalid_argument("gravity magnitude must be within 0.1 of 9.81 m/s^2");
  }
}

StateEstimate StateEstimate::boxplus(const Eigen::Ref<const Vec15>& delta) const {
  StateEstimate x;
  x.rot = rot * exp_so3(delta.segment<3>(idx::kRot));
  x.vel = vel + delta.segment<3>(idx::kVel);
  x.pos = pos + delta.segment<3>(idx::kPos);
  x.bg = bg + delta.segment<3>(idx::kBg);
  x.ba = ba + delta.segment<3>(idx::kBa);
  return x;
}

namespace {

void check_order(std::span<const ImuSample> samples) {
  if (samples.empty()) throw std::invalid_argument("propagation needs at least one IMU sample");
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (!(samples[i].t > samples[i - 1].t)) {
      throw std::invalid_argument("IMU samples not strictly increasing at index " + std::to_string(i));
    }
  }
}

}  // namespace

Propagation propagate(const StateEstimate& x0, std::span<const ImuSample> samples, const ImuNoise& noise) {
  check_order(samples);
  Propagation out;
  out.poses.reserve(samples.size());
  StateEstimate x = x0;
  out.poses.push_back({samples.front().t, x.pose()});
  for (std::size_t k = 0; k + 1 < samples.size(); ++k) {
    const ImuSample& s0 = samples[k];
    const ImuSample& s1 = samples[k + 1];
    const double dt = s1.t - s0.t;
    const Vec3 w = 0.5 * (s0.omega + s1.omega) - x.bg;
    const Rotation r1 = x.rot * exp_so3(w * dt);
    const Vec3 a = 0.5 * (x.rot * (s0.accel - x.ba) + r1 * (s1.accel - x.ba)) + noise.gravity;
    x.pos += x.vel * dt + 0.5 * a * dt * dt;
    x.vel += a * dt;
    x.rot = r1;
    out.poses.push_back({s1.t, x.pose()});
  }
  out.end = x;
  return out;
}

Propagation propagate_backward(const StateEstimate& x1, std::span<const ImuSample> samples,
                               const ImuNoise& noise) {
  check_order(samples);
  Propagation out;
  out.poses.resize(samples.size());
  StateEstimate x = x1;
  out.poses.back() = {samples.back().t, x.pose()};
  for (std::size_t k = samples.size() - 1; k > 0; --k) {
    const ImuSample& s0 = samples[k - 1];
    const ImuSample& s1 = samples[k];
    const double dt = s1.t - s0.t;
    const Vec3 w = 0.5 * (s0.omega + s1.omega) - x.bg;
    const Rotation r0 = x.rot * exp_so3(w * dt).inverse();
    const Vec3 a = 0.5 * (r0 * (s0.accel - x.ba) + x.rot * (s1.accel - x.ba)) + noise.gravity;
    x.vel -= a * dt;
    x.pos -= x.vel * dt + 0.5 * a * dt * dt;
    x.rot = r0;
    out.poses[k - 1] = {s0.t, x.pose()};
  }
  out.end = x;
  return out;
}

ImuSample interpolate_sample(const ImuSample& a, const ImuSample& b, Timestamp t) {
  const double s = (b.t == a.t) ? 0.0 : (t - a.t) / (b.t - a.t);
  ImuSample out;
  out.t = t;
  out.omega = (1.0 - s) * a.omega + s * b.omega;
  out.accel = (1.0 - s) * a.accel + s * b.accel;
  return out;
}

std::vector<ImuSample> slice_samples(std::span<const ImuSample> buffer, Timestamp a, Timestamp b, double hold) {
  if (buffer.empty() || !(b > a)) throw OutOfRange("empty IMU buffer or interval");
  if (buffer.front().t > a) {
    throw OutOfRange("IMU buffer starts at " + std::to_string(buffer.front().t) + " after " + std::to_string(a));
  }
  if (buffer.back().t < b - hold) {
    throw OutOfRange("IMU buffer ends at " + std::to_string(buffer.back().t) + " before " + std::to_string(b));
  }
  auto value_at = [&](Timestamp t) {
    auto it = std::lower_bound(buffer.begin(), buffer.end(), t,
                               [](const ImuSample& s, Timestamp v) { return s.t < v; });
    if (it == buffer.end()) {
      ImuSample s = buffer.back();
      s.t = t;
      return s;
    }
    if (it->t == t || it == buffer.begin()) {
      ImuSample s = *it;
      s.t = t;
      return s;
    }
    return interpolate_sample(*(it - 1), *it, t);
  };

  std::vector<ImuSample> out;
  out.push_back(value_at(a));
  auto it = std::upper_bound(buffer.begin(), buffer.end(), a,
                             [](Timestamp v, const ImuSample& s) { return v < s.t; });
  for (; it != buffer.end() && it->t < b; ++it) {
    // Avoid near-duplicate knots that would create zero-length steps.
    if (it->t - out.back().t > 1e-9 && b - it->t > 1e-9) out.push_back(*it);
  }
  out.push_back(value_at(b));
  return out;
}

}  // namespace surfelio
