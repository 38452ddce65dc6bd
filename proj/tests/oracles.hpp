#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance runner.

#include <Eigen/Geometry>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include "surfelio/imu.hpp"
#include "surfelio/pose_graph.hpp"
#include "surfelio/preintegration.hpp"
#include "surfelio/pts_factor.hpp"
#include "surfelio/surfel_map.hpp"
#include "surfelio/surfel_stats.hpp"
#include "test_util.hpp"

namespace surfelio::testing {

// Two-pass batch moments in long double.
inline SurfelStats batch_stats(const std::vector<Vec3>& pts) {
  SurfelStats s;
  s.n = static_cast<std::int64_t>(pts.size());
  if (pts.empty()) return s;
  Eigen::Matrix<long double, 3, 1> sum = Eigen::Matrix<long double, 3, 1>::Zero();
  for (const Vec3& p : pts) sum += p.cast<long double>();
  const Eigen::Matrix<long double, 3, 1> mean = sum / static_cast<long double>(pts.size());
  Eigen::Matrix<long double, 3, 3> c = Eigen::Matrix<long double, 3, 3>::Zero();
  for (const Vec3& p : pts) {
    const Eigen::Matrix<long double, 3, 1> d = p.cast<long double>() - mean;
    c += d * d.transpose();
  }
  s.sum = sum.cast<double>();
  s.c = c.cast<double>();
  return s;
}

inline std::vector<Vec3> random_cloud(std::mt19937_64& rng, int n, double scale) {
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i) pts.push_back(random_vec(rng, scale));
  return pts;
}

inline SurfelStats random_stats(std::mt19937_64& rng, int max_n) {
  std::uniform_int_distribution<int> un(0, max_n);
  const int n = un(rng);
  return batch_stats(random_cloud(rng, n, 3.0));
}

// Key computed without the map's own code.
inline std::array<std::int64_t, 4> oracle_key(const Vec3& p, double leaf, int depth) {
  auto idx = [&](double x) {
    const auto leaf_i = static_cast<std::int64_t>(std::floor(x / leaf));
    const std::int64_t div = std::int64_t{1} << depth;
    return leaf_i >= 0 ? leaf_i / div : -((-leaf_i + div - 1) / div);
  };
  return {depth, idx(p.x()), idx(p.y()), idx(p.z())};
}

struct BatchComparison {
  std::size_t expected_nodes = 0;
  std::size_t missing = 0;
  double worst = 0.0;  // relative error over nodes present in both
};

inline BatchComparison compare_with_batch(const SurfelMap& map, const std::vector<Vec3>& pts) {
  const MapConfig& cfg = map.config();
  std::map<std::array<std::int64_t, 4>, std::vector<Vec3>> members;
  for (const Vec3& p : pts) {
    for (int d = 0; d <= cfg.max_depth; ++d) members[oracle_key(p, cfg.leaf_size, d)].push_back(p);
  }
  BatchComparison out;
  out.expected_nodes = members.size();
  for (const auto& [k, v] : members) {
    const SurfelMap::Node* node = map.find(NodeKey{static_cast<int>(k[0]), k[1], k[2], k[3]});
    if (node == nullptr) {
      ++out.missing;
      continue;
    }
    out.worst = std::max(out.worst, stats_relative_error(node->stats, batch_stats(v)));
  }
  return out;
}

// Every node checked against the query predicates directly.
inline std::vector<NodeKey> brute_force_query(const SurfelMap& map, const Vec3& f) {
  const MapConfig& cfg = map.config();
  std::vector<NodeKey> out;
  map.for_each_node([&](const NodeKey& k, const SurfelMap::Node& n) {
    if (k.depth < 1 || k.depth > cfg.max_depth || n.stats.n < cfg.min_points) return;
    const double s = cfg.leaf_size * std::pow(2.0, k.depth);
    double d2 = 0.0;
    const double lo[3] = {k.ix * s, k.iy * s, k.iz * s};
    for (int i = 0; i < 3; ++i) {
      const double c = std::clamp(f[i], lo[i], lo[i] + s);
      d2 += (f[i] - c) * (f[i] - c);
    }
    if (d2 > cfg.search_radius * cfg.search_radius) return;
    if (!(n.stats.c.trace() / (n.stats.n - 1) >= 1e-12)) return;
    const SurfelAttributes a = derive_attributes(n.stats, n.viewpoint);
    if (a.eigenvalues[1] - a.eigenvalues[0] <= 1e-12) return;
    if (!(a.planarity > cfg.min_planarity)) return;
    out.push_back(k);
  });
  std::sort(out.begin(), out.end());
  return out;
}

// Four random noisy planes plus clutter.
inline SurfelMap random_structured_map(std::mt19937_64& rng, MapConfig cfg) {
  SurfelMap map(cfg);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::normal_distribution<double> g(0.0, 0.01);
  std::vector<Vec3> pts;
  for (int plane = 0; plane < 4; ++plane) {
    const Rotation r = random_rotation(rng);
    const Vec3 o = random_vec(rng, 2.0);
    for (int i = 0; i < 1500; ++i) pts.push_back(o + r * Vec3(u(rng), u(rng), g(rng)));
  }
  for (int i = 0; i < 800; ++i) pts.push_back(random_vec(rng, 3.0));
  map.insert_cloud(pts, Vec3(0, 0, 0));
  return map;
}

struct QueryComparison {
  std::size_t mismatches = 0;
  std::size_t queries = 0;
  std::size_t candidates = 0;
};

// 100 random maps, 40 queries each, a quarter of them snapped to voxel faces.
inline QueryComparison compare_queries(std::uint64_t seed, int maps = 100) {
  std::mt19937_64 rng(seed);
  QueryComparison out;
  for (int m = 0; m < maps; ++m) {
    MapConfig cfg;
    cfg.search_radius = (m % 2 == 0) ? 0.1 : 0.35;
    cfg.min_planarity = 0.3 + 0.1 * (m % 5);
    const SurfelMap map = random_structured_map(rng, cfg);
    for (int q = 0; q < 40; ++q) {
      Vec3 f = random_vec(rng, 3.5);
      if (q % 4 == 0) f.x() = std::round(f.x() / 0.4) * 0.4 + cfg.search_radius;
      std::vector<NodeKey> keys;
      for (const auto& c : map.query_candidates(f)) keys.push_back(c.key);
      std::sort(keys.begin(), keys.end());
      const auto expected = brute_force_query(map, f);
      if (keys != expected) ++out.mismatches;
      ++out.queries;
      out.candidates += expected.size();
    }
  }
  return out;
}

// Smooth random body rates and specific forces.
struct SmoothSignal {
  Vec3 w0, wa, a0, aa;
  Vec3 wf, af, wp, ap;

  explicit SmoothSignal(std::mt19937_64& rng, double rate_scale = 0.5, double max_freq = 3.0) {
    w0 = random_vec(rng, rate_scale);
    wa = random_vec(rng, rate_scale);
    a0 = Vec3(0, 0, 9.81) + random_vec(rng, 1.0);
    aa = random_vec(rng, 1.0);
    std::uniform_real_distribution<double> f(max_freq / 3.0, max_freq), p(0.0, 2 * M_PI);
    wf = Vec3(f(rng), f(rng), f(rng));
    af = Vec3(f(rng), f(rng), f(rng));
    wp = Vec3(p(rng), p(rng), p(rng));
    ap = Vec3(p(rng), p(rng), p(rng));
  }

  ImuSample at(double t) const {
    ImuSample s;
    s.t = t;
    for (int i = 0; i < 3; ++i) {
      s.omega[i] = w0[i] + wa[i] * std::sin(2 * M_PI * wf[i] * t + wp[i]);
      s.accel[i] = a0[i] + aa[i] * std::sin(2 * M_PI * af[i] * t + ap[i]);
    }
    return s;
  }

  std::vector<ImuSample> sample(double rate, double duration, double t0 = 0.0) const {
    std::vector<ImuSample> out;
    const int n = static_cast<int>(std::lround(duration * rate));
    for (int i = 0; i <= n; ++i) out.push_back(at(t0 + i / rate));
    return out;
  }
};

struct FineDelta {
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();
  Eigen::Vector3d v = Eigen::Vector3d::Zero();
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
};

// Each input step split into `sub` substeps of the linearly interpolated
// signal, midpoint rule on each substep, quaternion arithmetic.
inline FineDelta fine_integrate(const std::vector<ImuSample>& s, const Vec3& bg, const Vec3& ba, int sub) {
  FineDelta d;
  for (std::size_t k = 0; k + 1 < s.size(); ++k) {
    const double h = (s[k + 1].t - s[k].t) / sub;
    for (int j = 0; j < sub; ++j) {
      const double u0 = static_cast<double>(j) / sub, u1 = static_cast<double>(j + 1) / sub;
      const Vec3 w0 = (1 - u0) * s[k].omega + u0 * s[k + 1].omega;
      const Vec3 w1 = (1 - u1) * s[k].omega + u1 * s[k + 1].omega;
      const Vec3 a0 = (1 - u0) * s[k].accel + u0 * s[k + 1].accel - ba;
      const Vec3 a1 = (1 - u1) * s[k].accel + u1 * s[k + 1].accel - ba;
      const Vec3 w = 0.5 * (w0 + w1) - bg;
      const double ang = w.norm() * h;
      Eigen::Quaterniond dq = ang > 0 ? Eigen::Quaterniond(Eigen::AngleAxisd(ang, w.normalized()))
                                      : Eigen::Quaterniond::Identity();
      const Eigen::Quaterniond q1 = (d.q * dq).normalized();
      const Vec3 a = 0.5 * (d.q * a0 + q1 * a1);
      d.p += d.v * h + 0.5 * a * h * h;
      d.v += a * h;
      d.q = q1;
    }
  }
  return d;
}

struct PreintComparison {
  double rot = 0.0, vel = 0.0, pos = 0.0;
};

// 0.1 s at 400 Hz against the 10x finer integrator. The leading midpoint
// error is about T |a| |dw/dt| h^2 / 12; with gravity in |a| it stays under
// 1e-6 only for angular accelerations of order 1 rad/s^2, so signals are slow.
inline PreintComparison compare_preintegration(std::uint64_t seed, int trials = 50) {
  std::mt19937_64 rng(seed);
  PreintComparison out;
  for (int trial = 0; trial < trials; ++trial) {
    const SmoothSignal sig(rng, 0.5, 0.5);
    const auto samples = sig.sample(400, 0.1);
    const Vec3 bg = random_vec(rng, 0.01), ba = random_vec(rng, 0.05);
    const Preintegration pre(samples, bg, ba, ImuNoise{});
    const FineDelta fine = fine_integrate(samples, bg, ba, 10);
    out.rot = std::max(out.rot, rotation_distance(pre.delta_rot(), Rotation(fine.q)));
    out.vel = std::max(out.vel, (pre.delta_vel() - fine.v).norm());
    out.pos = std::max(out.pos, (pre.delta_pos() - fine.p).norm());
  }
  return out;
}

// Bitwise comparison of the deltas under two different gravity vectors.
inline bool preintegration_ignores_gravity(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const SmoothSignal sig(rng);
  const auto samples = sig.sample(400, 0.1);
  ImuNoise a, b;
  b.gravity = Vec3(0.3, -0.2, -9.8);
  const Preintegration pa(samples, Vec3::Zero(), Vec3::Zero(), a);
  const Preintegration pb(samples, Vec3::Zero(), Vec3::Zero(), b);
  return pa.delta_rot().quat().coeffs() == pb.delta_rot().quat().coeffs() && pa.delta_vel() == pb.delta_vel() &&
         pa.delta_pos() == pb.delta_pos();
}

// Worst relative error of the analytic PTS Jacobians against central differences.
inline double pts_jacobian_error(std::uint64_t seed, int trials) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> us(0.0, 1.0);
  const double h = 1e-6;
  double worst = 0;
  for (int trial = 0; trial < trials; ++trial) {
    StateEstimate xm = random_state(rng);
    StateEstimate xn = xm.boxplus((Vec15() << random_vec(rng, 0.3), Vec3::Zero(), random_vec(rng, 0.5),
                                   Vec3::Zero(), Vec3::Zero()).finished());
    PtsCoeff c;
    c.f = random_vec(rng, 10.0);
    c.s = us(rng);
    c.normal = random_vec(rng, 1.0).normalized();
    c.mean = random_vec(rng, 10.0);
    const PtsFactorResult an = pts_factor_eval(c, xm, xn);
    RowVec3 n_rm, n_pm, n_rn, n_pn;
    for (int k = 0; k < 3; ++k) {
      Vec15 d = Vec15::Zero();
      d[idx::kRot + k] = h;
      n_rm[k] = (pts_factor_eval(c, xm.boxplus(d), xn).r - pts_factor_eval(c, xm.boxplus(-d), xn).r) / (2 * h);
      n_rn[k] = (pts_factor_eval(c, xm, xn.boxplus(d)).r - pts_factor_eval(c, xm, xn.boxplus(-d)).r) / (2 * h);
      d.setZero();
      d[idx::kPos + k] = h;
      n_pm[k] = (pts_factor_eval(c, xm.boxplus(d), xn).r - pts_factor_eval(c, xm.boxplus(-d), xn).r) / (2 * h);
      n_pn[k] = (pts_factor_eval(c, xm, xn.boxplus(d)).r - pts_factor_eval(c, xm, xn.boxplus(-d)).r) / (2 * h);
    }
    worst = std::max({worst, jacobian_rel_error(an.d_rot_m, n_rm), jacobian_rel_error(an.d_rot_n, n_rn),
                      jacobian_rel_error(an.d_pos_m, n_pm), jacobian_rel_error(an.d_pos_n, n_pn)});
  }
  return worst;
}

inline double preint_jacobian_error(std::uint64_t seed, int trials) {
  std::mt19937_64 rng(seed);
  const ImuNoise noise;
  const double h = 1e-6;
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    const SmoothSignal sig(rng, 1.0);
    const auto samples = sig.sample(400, 0.025 + 0.001 * (trial % 50));
    StateEstimate xi = random_state(rng);
    const Preintegration pre(samples, xi.bg + random_vec(rng, 0.005), xi.ba + random_vec(rng, 0.02), noise);
    StateEstimate xj = propagate(xi, samples, noise).end;
    xj = xj.boxplus(Vec15::Random() * 0.05);
    const PreintResidual an = preint_residual(pre, xi, xj, noise);
    Mat15 ni, nj;
    for (int k = 0; k < 15; ++k) {
      Vec15 d = Vec15::Zero();
      d[k] = h;
      ni.col(k) = (preint_residual(pre, xi.boxplus(d), xj, noise).r -
                   preint_residual(pre, xi.boxplus(-d), xj, noise).r) / (2 * h);
      nj.col(k) = (preint_residual(pre, xi, xj.boxplus(d), noise).r -
                   preint_residual(pre, xi, xj.boxplus(-d), noise).r) / (2 * h);
    }
    worst = std::max({worst, jacobian_rel_error(an.jac_i, ni), jacobian_rel_error(an.jac_j, nj)});
  }
  return worst;
}

inline Mat6 random_cov(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  Mat6 a;
  for (int i = 0; i < 36; ++i) a(i) = u(rng);
  return a * a.transpose() + 0.01 * Mat6::Identity();
}

inline double pose_graph_jacobian_error(std::uint64_t seed, int trials) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  const double h = 1e-6;
  for (int trial = 0; trial < trials; ++trial) {
    const Pose tp = random_pose(rng), tc = random_pose(rng);
    const RelativePosePrior e{0, 1, random_pose(rng), random_cov(rng)};
    const EdgeResidual an = pose_graph_residual(e, tp, tc);
    Mat6 np, nc;
    for (int k = 0; k < 6; ++k) {
      Vec6 d = Vec6::Zero();
      d[k] = h;
      np.col(k) = (pose_graph_residual(e, pose_boxplus(tp, d), tc).r -
                   pose_graph_residual(e, pose_boxplus(tp, -d), tc).r) / (2 * h);
      nc.col(k) = (pose_graph_residual(e, tp, pose_boxplus(tc, d)).r -
                   pose_graph_residual(e, tp, pose_boxplus(tc, -d)).r) / (2 * h);
    }
    worst = std::max({worst, jacobian_rel_error(an.jac_from, np), jacobian_rel_error(an.jac_to, nc)});
  }
  return worst;
}

}  // namespace surfelio::testing
