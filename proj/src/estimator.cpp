#include "surfelio/estimator.hpp"

#include <Eigen/Geometry>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

#include "surfelio/errors.hpp"
#include "surfelio/parallel.hpp"
#include "surfelio/pts_factor.hpp"

namespace surfelio {

void SolverConfig::validate() const {
  if (max_outer_iterations < 1 || max_inner_iterations < 1) throw std::invalid_argument("iteration counts must be >= 1");
  if (!(huber_delta > 0.0 && outer_tolerance > 0.0 && lidar_sigma2 > 0.0 && relative_tolerance > 0.0)) {
    throw std::invalid_argument("solver thresholds must be > 0");
  }
  if (!(prior_rot > 0 && prior_pos > 0 && prior_vel > 0 && prior_bg > 0 && prior_ba > 0)) {
    throw std::invalid_argument("prior sigmas must be > 0");
  }
}

LmOptions SolverConfig::lm_options() const {
  LmOptions o;
  o.max_iterations = max_inner_iterations;
  o.relative_tolerance = relative_tolerance;
  return o;
}

void SlidingWindow::check_tiling() const {
  if (states.size() != knot_times.size()) throw std::logic_error("state and knot counts differ");
  if (!knot_times.empty() && intervals.size() + 1 != knot_times.size()) {
    throw std::logic_error("interval count does not match knots");
  }
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    if (!(knot_times[i + 1] > knot_times[i])) throw std::logic_error("knot times not increasing");
    const auto& imu = intervals[i].imu;
    if (imu.empty() || imu.front().t != knot_times[i] || imu.back().t != knot_times[i + 1]) {
      throw std::logic_error("interval samples do not span their knots");
    }
  }
}

StateEstimate static_initialize(std::span<const ImuSample> samples, const ImuNoise& noise) {
  if (samples.empty()) throw std::invalid_argument("static initialization needs IMU samples");
  Vec3 acc = Vec3::Zero(), gyr = Vec3::Zero();
  for (const ImuSample& s : samples) {
    acc += s.accel;
    gyr += s.omega;
  }
  acc /= static_cast<double>(samples.size());
  gyr /= static_cast<double>(samples.size());
  StateEstimate x;
  // At rest the specific force is -R^T g.
  x.rot = Rotation(Eigen::Quaterniond::FromTwoVectors(acc, -noise.gravity));
  x.bg = gyr;
  return x;
}

namespace {

WindowInterval make_interval(std::vector<ImuSample> imu, const StateEstimate& x0, const ImuNoise& noise,
                             StateEstimate* end) {
  WindowInterval iv;
  Propagation prop = propagate(x0, imu, noise);
  iv.poses = std::move(prop.poses);
  iv.preint.emplace(imu, x0.bg, x0.ba, noise);
  iv.imu = std::move(imu);
  *end = prop.end;
  return iv;
}

}  // namespace

void admit_bundle(SlidingWindow& win, ScanBundle bundle, const SyncConfig& cfg, const ImuNoise& noise,
                  const SolverConfig& solver, const StateEstimate& initial) {
  cfg.validate();
  if (!(bundle.t_end > bundle.t_start)) throw std::invalid_argument("bundle has an empty time range");
  if (win.empty()) {
    win.knot_times.push_back(bundle.t_start);
    win.states.push_back(initial);
  } else if (std::abs(win.knot_times.back() - bundle.t_start) > 1e-6) {
    throw DataGap("bundle starting at " + std::to_string(bundle.t_start) + " is not contiguous with window end " +
                  std::to_string(win.knot_times.back()));
  }

  const int k = cfg.knots_per_bundle;
  const Timestamp t0 = win.knot_times.back();
  const double step = (bundle.t_end - t0) / k;
  const double hold = 1.5 * cfg.imu_period;
  for (int j = 1; j <= k; ++j) {
    const Timestamp ta = win.knot_times.back();
    const Timestamp tb = j == k ? bundle.t_end : t0 + j * step;
    StateEstimate next;
    win.intervals.push_back(make_interval(slice_samples(bundle.imu, ta, tb, hold), win.states.back(), noise, &next));
    win.knot_times.push_back(tb);
    win.states.push_back(next);
  }

  WindowBundle wb;
  wb.points = stride_downsample(bundle.points, solver.max_points_per_bundle);
  wb.bundle = std::move(bundle);
  win.bundles.push_back(std::move(wb));
}

FactorSet build_cost(const SlidingWindow& win) {
  FactorSet f;
  for (const WindowInterval& iv : win.intervals) {
    if (iv.preint) ++f.imu_factors;
    f.pts_factors += iv.coeffs.size();
  }
  f.has_prior = win.head_prior.has_value();
  f.degenerate = f.pts_factors == 0;
  return f;
}

void repropagate(SlidingWindow& win, const ImuNoise& noise) {
  for (std::size_t m = 0; m < win.intervals.size(); ++m) {
    WindowInterval& iv = win.intervals[m];
    const StateEstimate& x = win.states[m];
    if (!iv.preint || iv.preint->bg_lin() != x.bg || iv.preint->ba_lin() != x.ba) {
      iv.preint.emplace(iv.imu, x.bg, x.ba, noise);
    }
    iv.poses = propagate(x, iv.imu, noise).poses;
  }
}

// ---------------------------------------------------------------------------

WindowProblem::WindowProblem(SlidingWindow& win, const ImuNoise& noise, const SolverConfig& cfg)
    : win_(win), noise_(noise), cfg_(cfg) {
  groups_.resize(win_.intervals.size());
  for (std::size_t m = 0; m < win_.intervals.size(); ++m) {
    const auto& c = win_.intervals[m].coeffs;
    std::size_t b = 0;
    for (std::size_t i = 1; i <= c.size(); ++i) {
      if (i == c.size() || c[i].f != c[b].f || c[i].s != c[b].s) {
        groups_[m].push_back(Group{static_cast<int>(m), b, i});
        b = i;
      }
    }
  }
}

namespace {

using Mat30 = Eigen::Matrix<double, 30, 30>;
using Vec30 = Eigen::Matrix<double, 30, 1>;
using Mat3x12 = Eigen::Matrix<double, 3, 12>;

struct IntervalAcc {
  Mat30 h;
  Vec30 g;
  double cost = 0.0;
};

// Local 30-vector: knot m then knot m+1, idx layout inside each.
constexpr int kLocal[4] = {idx::kRot, idx::kPos, 15 + idx::kRot, 15 + idx::kPos};

}  // namespace

std::vector<StateEstimate> WindowProblem::retract(const Eigen::VectorXd& dx) const {
  std::vector<StateEstimate> out(win_.states.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = win_.states[i].boxplus(dx.segment<15>(15 * i));
  return out;
}

double WindowProblem::evaluate(const std::vector<StateEstimate>& states, Eigen::MatrixXd* h,
                               Eigen::VectorXd* g) const {
  const bool jac = h != nullptr;
  const int n = dim();
  if (jac) {
    h->setZero(n, n);
    g->setZero(n);
  }
  double cost = 0.0;

  // Inertial factors.
  for (std::size_t m = 0; m < win_.intervals.size(); ++m) {
    const Preintegration& pre = *win_.intervals[m].preint;
    const int a = 15 * static_cast<int>(m), b = a + 15;
    if (!jac) {
      cost += (pre.sqrt_info() * preint_raw_residual(pre, states[m], states[m + 1], noise_)).squaredNorm();
      continue;
    }
    const PreintResidual r = preint_residual(pre, states[m], states[m + 1], noise_);
    cost += r.r.squaredNorm();
    h->block<15, 15>(a, a) += r.jac_i.transpose() * r.jac_i;
    h->block<15, 15>(a, b) += r.jac_i.transpose() * r.jac_j;
    h->block<15, 15>(b, a) += r.jac_j.transpose() * r.jac_i;
    h->block<15, 15>(b, b) += r.jac_j.transpose() * r.jac_j;
    g->segment<15>(a) += r.jac_i.transpose() * r.r;
    g->segment<15>(b) += r.jac_j.transpose() * r.r;
  }

  // Head prior.
  if (win_.head_prior) {
    const StatePrior& p = *win_.head_prior;
    const StateEstimate& x = states[0];
    Vec15 r;
    r.segment<3>(idx::kRot) = log_so3(p.mean.rot.inverse() * x.rot);
    r.segment<3>(idx::kVel) = x.vel - p.mean.vel;
    r.segment<3>(idx::kPos) = x.pos - p.mean.pos;
    r.segment<3>(idx::kBg) = x.bg - p.mean.bg;
    r.segment<3>(idx::kBa) = x.ba - p.mean.ba;
    const Vec15 w = p.sigma.cwiseInverse();
    const Vec15 rw = r.cwiseProduct(w);
    cost += rw.squaredNorm();
    if (jac) {
      Mat15 j = w.asDiagonal();
      j.block<3, 3>(idx::kRot, idx::kRot) = w[idx::kRot] * right_jacobian_inv(r.segment<3>(idx::kRot));
      h->block<15, 15>(0, 0) += j.transpose() * j;
      g->segment<15>(0) += j.transpose() * rw;
    }
  }

  if (!cfg_.use_lidar) return cost;

  // Point-to-surfel factors, accumulated per interval and merged in order.
  const double inv_sigma2 = 1.0 / cfg_.lidar_sigma2;
  const double delta = cfg_.huber_delta;
  const bool robust = cfg_.robust;
  std::vector<IntervalAcc> acc(win_.intervals.size());
  parallel_for_chunks(
      win_.intervals.size(),
      [&](std::size_t begin, std::size_t end) {
        for (std::size_t m = begin; m < end; ++m) {
          IntervalAcc& A = acc[m];
          A.h.setZero();
          A.g.setZero();
          const auto& coeffs = win_.intervals[m].coeffs;
          const StateEstimate& xm = states[m];
          const StateEstimate& xn = states[m + 1];
          for (const Group& grp : groups_[m]) {
            const PtsCoeff& first = coeffs[grp.begin];
            const InterpolatedPoint ip = interpolate_point(first.f, first.s, xm, xn, jac);
            Mat3 info = Mat3::Zero();
            Vec3 b = Vec3::Zero();
            for (std::size_t i = grp.begin; i < grp.end; ++i) {
              const PtsCoeff& c = coeffs[i];
              const double d = c.normal.dot(ip.q - c.mean);
              const double ad = std::abs(d);
              double rho = d * d, w = 1.0;
              if (robust && ad > delta) {
                rho = 2.0 * delta * ad - delta * delta;
                w = delta / ad;
              }
              A.cost += c.weight * rho * inv_sigma2;
              if (jac) {
                const double wt = c.weight * w * inv_sigma2;
                info.noalias() += wt * c.normal * c.normal.transpose();
                b.noalias() += (wt * d) * c.normal;
              }
            }
            if (!jac) continue;
            Mat3x12 dq;
            dq.block<3, 3>(0, 0) = ip.d_rot_m;
            dq.block<3, 3>(0, 3) = (1.0 - first.s) * Mat3::Identity();
            dq.block<3, 3>(0, 6) = ip.d_rot_n;
            dq.block<3, 3>(0, 9) = first.s * Mat3::Identity();
            const Eigen::Matrix<double, 12, 12> hb = dq.transpose() * info * dq;
            const Eigen::Matrix<double, 12, 1> gb = dq.transpose() * b;
            for (int u = 0; u < 4; ++u) {
              A.g.segment<3>(kLocal[u]) += gb.segment<3>(3 * u);
              for (int v = 0; v < 4; ++v) A.h.block<3, 3>(kLocal[u], kLocal[v]) += hb.block<3, 3>(3 * u, 3 * v);
            }
          }
        }
      },
      1);
  for (std::size_t m = 0; m < acc.size(); ++m) {
    cost += acc[m].cost;
    if (jac) {
      const int a = 15 * static_cast<int>(m);
      h->block<30, 30>(a, a) += acc[m].h;
      g->segment<30>(a) += acc[m].g;
    }
  }
  return cost;
}

double WindowProblem::linearize(Eigen::MatrixXd& h, Eigen::VectorXd& g) { return evaluate(win_.states, &h, &g); }

double WindowProblem::cost_at(const Eigen::VectorXd& dx) const { return evaluate(retract(dx), nullptr, nullptr); }

void WindowProblem::apply(const Eigen::VectorXd& dx) { win_.states = retract(dx); }

// ---------------------------------------------------------------------------

OptimizeReport optimize(SlidingWindow& win, const SurfelMap& map, const ImuNoise& noise, const SolverConfig& cfg) {
  using Clock = std::chrono::steady_clock;
  OptimizeReport report;
  if (win.intervals.empty()) return report;

  std::vector<RawPoint> points;
  for (const WindowBundle& b : win.bundles) points.insert(points.end(), b.points.begin(), b.points.end());
  std::vector<PropagatedPoseSeq> poses(win.intervals.size());

  for (int outer = 0; outer < cfg.max_outer_iterations; ++outer) {
    ++report.outer_iterations;
    repropagate(win, noise);
    for (auto& iv : win.intervals) iv.coeffs.clear();
    if (cfg.use_lidar && !map.empty()) {
      for (std::size_t m = 0; m < poses.size(); ++m) poses[m] = win.intervals[m].poses;
      AssociationSet a = associate(points, poses, map, cfg.assoc);
      report.dropped_points = a.dropped_out_of_range;
      for (std::size_t m = 0; m < poses.size(); ++m) win.intervals[m].coeffs = std::move(a.intervals[m]);
    }

    const std::vector<StateEstimate> before = win.states;
    WindowProblem problem(win, noise, cfg);
    const auto t0 = Clock::now();
    LmReport lm = solve_lm(problem, cfg.lm_options());
    report.solve_ms += std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    report.cost_trace.insert(report.cost_trace.end(), lm.cost_trace.begin(), lm.cost_trace.end());
    report.inner.push_back(std::move(lm));

    double change = 0.0;
    for (std::size_t i = 0; i < before.size(); ++i) {
      change = std::max(change, (win.states[i].pos - before[i].pos).norm());
      // Rotation counted as arc length at 1 m.
      change = std::max(change, rotation_distance(win.states[i].rot, before[i].rot));
    }
    if (change < cfg.outer_tolerance) break;
  }
  report.factors = build_cost(win);
  return report;
}

// ---------------------------------------------------------------------------

bool keyframe_test(const Pose& pose, const KeyframeStore& store, const KeyframeThresholds& th) {
  for (int i : store.nearest(pose.trans, static_cast<std::size_t>(th.neighbours))) {
    const Pose& other = store[static_cast<std::size_t>(i)].pose;
    const double dist = (other.trans - pose.trans).norm();
    const double rot = rad2deg(rotation_distance(other.rot, pose.rot));
    if (!(dist > th.meters || rot > th.degrees)) return false;
  }
  return true;
}

std::vector<Vec3> bundle_cloud_at_end(const SlidingWindow& win, std::size_t bundle_index, const SyncConfig& sync) {
  const std::size_t k = static_cast<std::size_t>(sync.knots_per_bundle);
  const std::size_t first = bundle_index * k;
  if (bundle_index >= win.bundles.size() || first + k > win.intervals.size()) {
    throw std::out_of_range("bundle index outside the window");
  }
  std::vector<PropagatedPoseSeq> seqs;
  seqs.reserve(k);
  for (std::size_t m = first; m < first + k; ++m) seqs.push_back(win.intervals[m].poses);
  const Pose end_inv = win.states[first + k].pose().inverse();
  std::vector<Vec3> out;
  const auto& pts = win.bundles[bundle_index].bundle.points;
  out.reserve(pts.size());
  for (const RawPoint& p : pts) {
    const int m = find_interval(seqs, p.t);
    if (m < 0) continue;
    out.push_back(end_inv * deskew_point(p, seqs[static_cast<std::size_t>(m)]).world);
  }
  return out;
}

Marginalized marginalize_keyframe(SlidingWindow& win, const KeyframeStore& store, const KeyframeThresholds& th,
                                  const SyncConfig& sync, const ImuNoise& noise, const SolverConfig& solver) {
  const int k = sync.knots_per_bundle;
  if (win.bundles.empty() || win.num_intervals() < k) throw std::logic_error("nothing to marginalize");
  repropagate(win, noise);

  Marginalized out;
  out.t = win.knot_times[static_cast<std::size_t>(k)];
  out.pose = win.states[static_cast<std::size_t>(k)].pose();
  if (!win.bundles.front().keyframed && keyframe_test(out.pose, store, th)) {
    const std::vector<Vec3> cloud = bundle_cloud_at_end(win, 0, sync);
    if (!cloud.empty()) {
      Keyframe kf;
      kf.index = static_cast<int>(store.size());
      kf.t = out.t;
      kf.pose = out.pose;
      kf.cloud.reserve(cloud.size());
      for (const Vec3& p : cloud) kf.cloud.push_back(p.cast<float>());
      out.keyframe = std::move(kf);
    }
  }

  win.knot_times.erase(win.knot_times.begin(), win.knot_times.begin() + k);
  win.states.erase(win.states.begin(), win.states.begin() + k);
  win.intervals.erase(win.intervals.begin(), win.intervals.begin() + k);
  win.bundles.pop_front();

  StatePrior prior;
  prior.mean = win.states.front();
  prior.sigma.segment<3>(idx::kRot).setConstant(solver.prior_rot);
  prior.sigma.segment<3>(idx::kVel).setConstant(solver.prior_vel);
  prior.sigma.segment<3>(idx::kPos).setConstant(solver.prior_pos);
  prior.sigma.segment<3>(idx::kBg).setConstant(solver.prior_bg);
  prior.sigma.segment<3>(idx::kBa).setConstant(solver.prior_ba);
  win.head_prior = prior;
  return out;
}

}  // namespace surfelio
