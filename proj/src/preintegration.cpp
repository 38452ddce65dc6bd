#include "surfelio/preintegration.hpp"

#include <Eigen/Cholesky>
#include <stdexcept>

#include "surfelio/errors.hpp"

namespace surfelio {

namespace {

using Mat15x12 = Eigen::Matrix<double, 15, 12>;
using Mat12 = Eigen::Matrix<double, 12, 12>;

}  // namespace

Preintegration::Preintegration(std::span<const ImuSample> samples, const Vec3& bg_lin, const Vec3& ba_lin,
                               const ImuNoise& noise)
    : samples_(samples.begin(), samples.end()), noise_(noise), bg_lin_(bg_lin), ba_lin_(ba_lin) {
  if (samples_.size() < 2) throw std::invalid_argument("preintegration needs an interval of at least two samples");
  for (std::size_t i = 1; i < samples_.size(); ++i) {
    if (!(samples_[i].t > samples_[i - 1].t)) {
      throw std::invalid_argument("preintegration samples not strictly increasing");
    }
  }

  using namespace idx;
  const Mat3 eye = Mat3::Identity();
  // Top-right 9x6 block of the cumulative transition gives the bias Jacobians.
  Eigen::Matrix<double, 9, 6> jb = Eigen::Matrix<double, 9, 6>::Zero();

  for (std::size_t k = 0; k + 1 < samples_.size(); ++k) {
    const ImuSample& s0 = samples_[k];
    const ImuSample& s1 = samples_[k + 1];
    const double dt = s1.t - s0.t;
    const Vec3 w = 0.5 * (s0.omega + s1.omega) - bg_lin_;
    const Vec3 a0 = s0.accel - ba_lin_;
    const Vec3 a1 = s1.accel - ba_lin_;
    const Rotation inc = exp_so3(w * dt);
    const Rotation r1 = dr_ * inc;
    const Mat3 rk = dr_.matrix();
    const Mat3 rk1 = r1.matrix();
    const Mat3 inc_t = inc.matrix().transpose();
    const Mat3 jr = right_jacobian(w * dt);

    const Vec3 a = 0.5 * (rk * a0 + rk1 * a1);
    dp_ += dv_ * dt + 0.5 * a * dt * dt;
    dv_ += a * dt;
    dr_ = r1;
    dt_ += dt;

    // d(a_mid)/d(theta_k), d(a_mid)/d(bg), d(a_mid)/d(ba)
    const Mat3 rk1_a1x = rk1 * skew(a1);
    const Mat3 da_dth = -0.5 * (rk * skew(a0) + rk1_a1x * inc_t);
    const Mat3 da_dbg = 0.5 * rk1_a1x * jr * dt;
    const Mat3 da_dba = -0.5 * (rk + rk1);

    Mat15 f = Mat15::Identity();
    f.block<3, 3>(kRot, kRot) = inc_t;
    f.block<3, 3>(kRot, kBg) = -jr * dt;
    f.block<3, 3>(kVel, kRot) = da_dth * dt;
    f.block<3, 3>(kVel, kBg) = da_dbg * dt;
    f.block<3, 3>(kVel, kBa) = da_dba * dt;
    f.block<3, 3>(kPos, kRot) = 0.5 * da_dth * dt * dt;
    f.block<3, 3>(kPos, kVel) = eye * dt;
    f.block<3, 3>(kPos, kBg) = 0.5 * da_dbg * dt * dt;
    f.block<3, 3>(kPos, kBa) = 0.5 * da_dba * dt * dt;

    // Noise inputs: gyro, accel, gyro bias walk, accel bias walk.
    Mat15x12 g = Mat15x12::Zero();
    g.block<3, 3>(kRot, 0) = jr * dt;
    g.block<3, 3>(kVel, 0) = -da_dbg * dt;
    g.block<3, 3>(kPos, 0) = -0.5 * da_dbg * dt * dt;
    g.block<3, 3>(kVel, 3) = 0.5 * (rk + rk1) * dt;
    g.block<3, 3>(kPos, 3) = 0.25 * (rk + rk1) * dt * dt;
    g.block<3, 3>(kBg, 6) = eye;
    g.block<3, 3>(kBa, 9) = eye;

    Mat12 q = Mat12::Zero();
    q.block<3, 3>(0, 0) = eye * (noise_.gyro_noise * noise_.gyro_noise / dt);
    q.block<3, 3>(3, 3) = eye * (noise_.accel_noise * noise_.accel_noise / dt);
    q.block<3, 3>(6, 6) = eye * (noise_.gyro_bias_walk * noise_.gyro_bias_walk * dt);
    q.block<3, 3>(9, 9) = eye * (noise_.accel_bias_walk * noise_.accel_bias_walk * dt);

    cov_ = f * cov_ * f.transpose() + g * q * g.transpose();
    cov_ = 0.5 * (cov_ + cov_.transpose());

    jb = f.topLeftCorner<9, 9>() * jb + f.topRightCorner<9, 6>();
  }
  j_bg_ = jb.leftCols<3>();
  j_ba_ = jb.rightCols<3>();

  Eigen::LLT<Mat15> llt(cov_);
  if (llt.info() != Eigen::Success) throw SingularCovariance("preintegration covariance is not positive definite");
  sqrt_info_ = llt.matrixL().solve(Mat15::Identity());
}

namespace {

struct Corrected {
  Rotation dr;
  Vec3 dv;
  Vec3 dp;
  Vec3 dbg;
};

Corrected correct(const Preintegration& pre, const StateEstimate& xi) {
  using namespace idx;
  Corrected c;
  c.dbg = xi.bg - pre.bg_lin();
  const Vec3 dba = xi.ba - pre.ba_lin();
  c.dr = pre.delta_rot() * exp_so3(pre.jac_bg().block<3, 3>(kRot, 0) * c.dbg);
  c.dv = pre.delta_vel() + pre.jac_bg().block<3, 3>(kVel, 0) * c.dbg + pre.jac_ba().block<3, 3>(kVel, 0) * dba;
  c.dp = pre.delta_pos() + pre.jac_bg().block<3, 3>(kPos, 0) * c.dbg + pre.jac_ba().block<3, 3>(kPos, 0) * dba;
  return c;
}

}  // namespace

Vec15 preint_raw_residual(const Preintegration& pre, const StateEstimate& xi, const StateEstimate& xj,
                          const ImuNoise& noise) {
  using namespace idx;
  const Corrected c = correct(pre, xi);
  const double dt = pre.dt();
  const Mat3 rit = xi.rot.matrix().transpose();
  Vec15 r;
  r.segment<3>(kRot) = log_so3(c.dr.inverse() * xi.rot.inverse() * xj.rot);
  r.segment<3>(kVel) = rit * (xj.vel - xi.vel - noise.gravity * dt) - c.dv;
  r.segment<3>(kPos) = rit * (xj.pos - xi.pos - xi.vel * dt - 0.5 * noise.gravity * dt * dt) - c.dp;
  r.segment<3>(kBg) = xj.bg - xi.bg;
  r.segment<3>(kBa) = xj.ba - xi.ba;
  return r;
}

PreintResidual preint_residual(const Preintegration& pre, const StateEstimate& xi, const StateEstimate& xj,
                               const ImuNoise& noise) {
  using namespace idx;
  const Corrected c = correct(pre, xi);
  const double dt = pre.dt();
  const Mat3 ri = xi.rot.matrix();
  const Mat3 rit = ri.transpose();
  const Mat3 rj = xj.rot.matrix();
  const Mat3 eye = Mat3::Identity();

  const Rotation e = c.dr.inverse() * xi.rot.inverse() * xj.rot;
  const Vec3 r_rot = log_so3(e);
  const Vec3 vel_term = rit * (xj.vel - xi.vel - noise.gravity * dt);
  const Vec3 pos_term = rit * (xj.pos - xi.pos - xi.vel * dt - 0.5 * noise.gravity * dt * dt);

  Vec15 r;
  r.segment<3>(kRot) = r_rot;
  r.segment<3>(kVel) = vel_term - c.dv;
  r.segment<3>(kPos) = pos_term - c.dp;
  r.segment<3>(kBg) = xj.bg - xi.bg;
  r.segment<3>(kBa) = xj.ba - xi.ba;

  const Mat3 jr_inv = right_jacobian_inv(r_rot);
  const Mat3 j_r_bg = pre.jac_bg().block<3, 3>(kRot, 0);

  Mat15 ji = Mat15::Zero();
  Mat15 jj = Mat15::Zero();

  ji.block<3, 3>(kRot, kRot) = -jr_inv * rj.transpose() * ri;
  ji.block<3, 3>(kRot, kBg) = -jr_inv * e.matrix().transpose() * right_jacobian(j_r_bg * c.dbg) * j_r_bg;
  jj.block<3, 3>(kRot, kRot) = jr_inv;

  ji.block<3, 3>(kVel, kRot) = skew(vel_term);
  ji.block<3, 3>(kVel, kVel) = -rit;
  ji.block<3, 3>(kVel, kBg) = -pre.jac_bg().block<3, 3>(kVel, 0);
  ji.block<3, 3>(kVel, kBa) = -pre.jac_ba().block<3, 3>(kVel, 0);
  jj.block<3, 3>(kVel, kVel) = rit;

  ji.block<3, 3>(kPos, kRot) = skew(pos_term);
  ji.block<3, 3>(kPos, kVel) = -rit * dt;
  ji.block<3, 3>(kPos, kPos) = -rit;
  ji.block<3, 3>(kPos, kBg) = -pre.jac_bg().block<3, 3>(kPos, 0);
  ji.block<3, 3>(kPos, kBa) = -pre.jac_ba().block<3, 3>(kPos, 0);
  jj.block<3, 3>(kPos, kPos) = rit;

  ji.block<3, 3>(kBg, kBg) = -eye;
  jj.block<3, 3>(kBg, kBg) = eye;
  ji.block<3, 3>(kBa, kBa) = -eye;
  jj.block<3, 3>(kBa, kBa) = eye;

  const Mat15& w = pre.sqrt_info();
  return PreintResidual{w * r, w * ji, w * jj};
}

}  // namespace surfelio
