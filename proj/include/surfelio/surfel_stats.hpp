#pragma once

#include <cstdint>
#include <optional>

#include "surfelio/geometry.hpp"

namespace surfelio {

/// Raw moments of a point set: count, sum and centered second moment
/// C = sum(f f^T) - S S^T / N.
struct SurfelStats {
  std::int64_t n = 0;
  Vec3 sum = Vec3::Zero();
  Mat3 c = Mat3::Zero();

  static SurfelStats from_point(const Vec3& f) {
    SurfelStats s;
    s.n = 1;
    s.sum = f;
    return s;
  }

  bool empty() const { return n == 0; }
};

struct SurfelAttributes {
  Vec3 mean = Vec3::Zero();
  Mat3 cov = Mat3::Zero();
  Vec3 eigenvalues = Vec3::Zero();  // ascending
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;  // c = -n^T mu
  double planarity = 0.0;
};

SurfelStats stats_merge(const SurfelStats& a, const SurfelStats& b);

/// Inverse of stats_merge. Throws InvalidRemoval when child.n > parent.n.
SurfelStats stats_remove(const SurfelStats& parent, const SurfelStats& child);

/// Plane parameters from raw moments. The normal is oriented towards
/// `viewpoint` when given; otherwise its largest-magnitude component is made
/// positive. Throws InsufficientPoints (n < 3) or DegenerateSurfel.
SurfelAttributes derive_attributes(const SurfelStats& s,
                                   const std::optional<Vec3>& viewpoint = std::nullopt);

/// Relative Frobenius distance between the C matrices plus relative sum error;
/// zero iff counts match and moments agree exactly.
double stats_relative_error(const SurfelStats& a, const SurfelStats& b);

}  // namespace surfelio
