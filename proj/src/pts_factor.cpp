#include "surfelio/pts_factor.hpp"

#include <cmath>

namespace surfelio {

InterpolatedPoint interpolate_point(const Vec3& f, double s, const StateEstimate& xm, const StateEstimate& xn,
                                    bool with_jacobians) {
  InterpolatedPoint out;
  out.s = s;
  const Vec3 phi = log_so3(xm.rot.inverse() * xn.rot);
  const Rotation step = exp_so3(s * phi);
  const Rotation rs = xm.rot * step;
  out.q = rs * f + (1.0 - s) * xm.pos + s * xn.pos;
  if (!with_jacobians) return out;

  // R_s Exp(x) f ~ R_s f - R_s [f]x x, where x is the induced tangent change.
  const Mat3 a = -(rs.matrix() * skew(f));
  const Mat3 jr_s = right_jacobian(s * phi);
  out.d_rot_m = a * (step.matrix().transpose() - s * jr_s * right_jacobian_inv(-phi));
  out.d_rot_n = a * (s * jr_s * right_jacobian_inv(phi));
  return out;
}

PtsFactorResult pts_factor_eval(const PtsCoeff& coeff, const StateEstimate& xm, const StateEstimate& xn,
                                double sigma2) {
  const InterpolatedPoint ip = interpolate_point(coeff.f, coeff.s, xm, xn);
  const double w = 1.0 / std::sqrt(sigma2);
  const RowVec3 nt = coeff.normal.transpose() * w;
  PtsFactorResult out;
  out.r = nt.dot((ip.q - coeff.mean).transpose());
  out.d_rot_m = nt * ip.d_rot_m;
  out.d_rot_n = nt * ip.d_rot_n;
  out.d_pos_m = (1.0 - coeff.s) * nt;
  out.d_pos_n = coeff.s * nt;
  return out;
}

}  // namespace surfelio
