#include "surfelio/surfel_stats.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <string>

#include "surfelio/errors.hpp"

namespace surfelio {

namespace {

Mat3 symmetrized(const Mat3& m) { return 0.5 * (m + m.transpose()); }

}  // namespace

SurfelStats stats_merge(const SurfelStats& a, const SurfelStats& b) {
  if (a.n == 0) return b;
  if (b.n == 0) return a;
  const double na = static_cast<double>(a.n);
  const double nb = static_cast<double>(b.n);
  const double alpha = 1.0 / (na * nb * (na + nb));
  const Vec3 beta = nb * a.sum - na * b.sum;

  SurfelStats out;
  out.n = a.n + b.n;
  out.sum = a.sum + b.sum;
  out.c = symmetrized(a.c + b.c + alpha * beta * beta.transpose());
  return out;
}

SurfelStats stats_remove(const SurfelStats& parent, const SurfelStats& child) {
  if (child.n > parent.n) {
    throw InvalidRemoval("cannot remove " + std::to_string(child.n) + " points from a node holding " +
                         std::to_string(parent.n));
  }
  if (child.n == 0) return parent;

  SurfelStats out;
  out.n = parent.n - child.n;
  if (out.n == 0) return out;
  out.sum = parent.sum - child.sum;
  if (out.n == 1) return out;  // a single point has no spread

  const double ni = static_cast<double>(out.n);
  const double nn = static_cast<double>(child.n);
  const double alpha = 1.0 / (ni * nn * (ni + nn));
  const Vec3 beta = nn * out.sum - ni * child.sum;
  out.c = symmetrized(parent.c - child.c - alpha * beta * beta.transpose());
  return out;
}

SurfelAttributes derive_attributes(const SurfelStats& s, const std::optional<Vec3>& viewpoint) {
  if (s.n < 3) {
    throw InsufficientPoints("surfel needs at least 3 points, has " + std::to_string(s.n));
  }
  SurfelAttributes a;
  a.mean = s.sum / static_cast<double>(s.n);
  a.cov = s.c / static_cast<double>(s.n - 1);
  const double trace = a.cov.trace();
  if (!(trace >= 1e-12)) {
    throw DegenerateSurfel("surfel covariance trace " + std::to_string(trace) + " is degenerate");
  }

  Eigen::SelfAdjointEigenSolver<Mat3> es;
  es.computeDirect(a.cov);
  a.eigenvalues = es.eigenvalues();
  Vec3 n = es.eigenvectors().col(0).normalized();

  if (viewpoint) {
    if (n.dot(*viewpoint - a.mean) < 0.0) n = -n;
  } else {
    int idx = 0;
    n.cwiseAbs().maxCoeff(&idx);
    if (n[idx] < 0.0) n = -n;
  }
  a.normal = n;
  a.offset = -n.dot(a.mean);

  const Vec3& l = a.eigenvalues;
  const double denom = l.sum();
  double rho = 2.0 * (l[1] - l[0]) / denom;
  assert(l[0] >= -1e-9 * trace);
  assert(rho <= 1.0 + 1e-9 && rho >= -1e-9);
  a.planarity = std::clamp(rho, 0.0, 1.0);
  return a;
}

double stats_relative_error(const SurfelStats& a, const SurfelStats& b) {
  if (a.n != b.n) return std::numeric_limits<double>::infinity();
  const double cs = std::max({a.c.norm(), b.c.norm(), 1e-300});
  const double ss = std::max({a.sum.norm(), b.sum.norm(), 1e-300});
  const double ec = (a.c - b.c).norm();
  const double es = (a.sum - b.sum).norm();
  return std::max(ec == 0.0 ? 0.0 : ec / cs, es == 0.0 ? 0.0 : es / ss);
}

}  // namespace surfelio
