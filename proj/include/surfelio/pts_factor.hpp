#pragma once

#include <Eigen/Core>

#include "surfelio/deskew.hpp"
#include "surfelio/imu.hpp"

namespace surfelio {

using RowVec3 = Eigen::RowVector3d;

/// Point-to-surfel residual n^T (R_s f + p_s - mu), with R_s the geodesic
/// interpolation of the two knot rotations at fraction s and p_s the linear
/// blend of the knot positions.
struct PtsFactorResult {
  double r = 0.0;  // whitened by 1 / sqrt(sigma2)
  RowVec3 d_rot_m;
  RowVec3 d_pos_m;
  RowVec3 d_rot_n;
  RowVec3 d_pos_n;
};

PtsFactorResult pts_factor_eval(const PtsCoeff& coeff, const StateEstimate& xm, const StateEstimate& xn,
                                double sigma2 = 1.0);

/// World-frame point at the coefficient's time and its derivative with
/// respect to (rot_m, pos_m, rot_n, pos_n), shared by every coefficient of the
/// same raw point.
struct InterpolatedPoint {
  Vec3 q = Vec3::Zero();
  Mat3 d_rot_m;
  Mat3 d_rot_n;
  double s = 0.0;
};

InterpolatedPoint interpolate_point(const Vec3& f, double s, const StateEstimate& xm, const StateEstimate& xn,
                                    bool with_jacobians = true);

}  // namespace surfelio
