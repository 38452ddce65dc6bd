#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <set>
#include <vector>

#include "surfelio/deskew.hpp"
#include "surfelio/errors.hpp"
#include "surfelio/pts_factor.hpp"
#include "surfelio/surfel_map.hpp"
#include "oracles.hpp"

using namespace surfelio;
using surfelio::testing::jacobian_rel_error;
using surfelio::testing::random_state;
using surfelio::testing::random_vec;

namespace {

PropagatedPoseSeq constant_velocity(const Vec3& v, double t0, double t1, int n) {
  PropagatedPoseSeq seq;
  for (int i = 0; i <= n; ++i) {
    const double t = t0 + (t1 - t0) * i / n;
    seq.push_back({t, Pose(Rotation(), v * (t - t0))});
  }
  return seq;
}

PropagatedPoseSeq smooth_trajectory(std::mt19937_64& rng, double t0, double t1, int n) {
  const Vec3 w = random_vec(rng, 1.0), v = random_vec(rng, 2.0), a = random_vec(rng, 0.5);
  const Pose start = surfelio::testing::random_pose(rng);
  PropagatedPoseSeq seq;
  for (int i = 0; i <= n; ++i) {
    const double t = t0 + (t1 - t0) * i / n, u = t - t0;
    seq.push_back({t, start * Pose(exp_so3(w * u + 0.3 * a * u * u), v * u + 0.5 * a * u * u)});
  }
  return seq;
}

std::vector<Vec3> plane_cloud(double half, double step, double z = 0.0) {
  std::vector<Vec3> pts;
  for (double x = -half; x <= half + 1e-12; x += step) {
    for (double y = -half; y <= half + 1e-12; y += step) pts.emplace_back(x, y, z);
  }
  return pts;
}

}  // namespace

TEST_CASE("deskew under a stationary trajectory is the identity") {
  PropagatedPoseSeq seq;
  for (int i = 0; i <= 10; ++i) seq.push_back({0.01 * i, Pose::identity()});
  const RawPoint p{Vec3(1, -2, 3), 0.037, 0, 0.f};
  CHECK((deskew_point(p, seq).world - p.f).norm() == 0.0);
}

TEST_CASE("deskew at a bracket stamp uses that pose exactly") {
  std::mt19937_64 rng(1);
  const PropagatedPoseSeq seq = smooth_trajectory(rng, 1.0, 1.1, 40);
  const RawPoint p{Vec3(0.5, 2, -1), seq[17].t, 0, 0.f};
  const Vec3 expected = seq[17].pose * p.f;
  CHECK((deskew_point(p, seq).world - expected).norm() == 0.0);
}

TEST_CASE("deskew under constant velocity") {
  const Vec3 v(1.0, -0.5, 0.25);
  const PropagatedPoseSeq seq = constant_velocity(v, 2.0, 2.1, 40);
  for (double ts : {2.0, 2.00125, 2.05, 2.0731, 2.1}) {
    const RawPoint p{Vec3(3, 4, 5), ts, 0, 0.f};
    const DeskewedPoint d = deskew_point(p, seq);
    CHECK((d.world - (p.f + v * (ts - 2.0))).norm() < 1e-9);
    CHECK(d.s == doctest::Approx((ts - 2.0) / 0.1));
  }
}

TEST_CASE("deskew outside coverage throws") {
  const PropagatedPoseSeq seq = constant_velocity(Vec3::UnitX(), 0.0, 0.1, 10);
  CHECK_THROWS_AS(deskew_point(RawPoint{Vec3::Zero(), -1e-6, 0, 0.f}, seq), OutOfRange);
  CHECK_THROWS_AS(deskew_point(RawPoint{Vec3::Zero(), 0.1 + 1e-6, 0, 0.f}, seq), OutOfRange);
}

TEST_CASE("deskew_to_frame_end") {
  SUBCASE("zero motion returns the input") {
    PropagatedPoseSeq seq;
    for (int i = 0; i <= 4; ++i) seq.push_back({0.025 * i, Pose::identity()});
    std::vector<RawPoint> pts{{Vec3(1, 2, 3), 0.01, 0, 0.f}, {Vec3(-4, 0, 1), 0.09, 0, 0.f}};
    const auto out = deskew_to_frame_end(pts, seq);
    for (std::size_t i = 0; i < pts.size(); ++i) CHECK((out[i] - pts[i].f).norm() == 0.0);
  }
  SUBCASE("points on the spin axis stay fixed") {
    PropagatedPoseSeq seq;
    for (int i = 0; i <= 40; ++i) seq.push_back({0.0025 * i, Pose(exp_so3(Vec3(0, 0, 2.0 * 0.0025 * i)), Vec3::Zero())});
    std::vector<RawPoint> pts;
    for (int i = 0; i < 20; ++i) pts.push_back({Vec3(0, 0, 0.3 * i - 2), 0.005 * i, 0, 0.f});
    const auto out = deskew_to_frame_end(pts, seq);
    for (std::size_t i = 0; i < pts.size(); ++i) CHECK((out[i] - pts[i].f).norm() < 1e-12);
  }
  SUBCASE("skewing back recovers the raw points") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
      const PropagatedPoseSeq seq = smooth_trajectory(rng, 0.0, 0.1, 40);
      std::uniform_real_distribution<double> ut(0.0, 0.1);
      std::vector<RawPoint> pts;
      for (int i = 0; i < 200; ++i) pts.push_back({random_vec(rng, 20.0), ut(rng), 0, 0.f});
      const auto out = deskew_to_frame_end(pts, seq);
      const Pose end = seq.back().pose;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        // Independent bracket search and interpolation.
        std::size_t b = 1;
        while (b + 1 < seq.size() && seq[b].t < pts[i].t) ++b;
        const double s = (pts[i].t - seq[b - 1].t) / (seq[b].t - seq[b - 1].t);
        const Pose ts = pose_interpolate(seq[b - 1].pose, seq[b].pose, s);
        const Vec3 back = ts.inverse() * (end * out[i]);
        CHECK((back - pts[i].f).norm() < 1e-9);
      }
    }
  }
}

TEST_CASE("find_interval over contiguous sequences") {
  std::vector<PropagatedPoseSeq> iv{constant_velocity(Vec3::Zero(), 0.0, 0.025, 10),
                                    constant_velocity(Vec3::Zero(), 0.025, 0.05, 10)};
  CHECK(find_interval(iv, 0.0) == 0);
  CHECK(find_interval(iv, 0.0249) == 0);
  CHECK(find_interval(iv, 0.025) == 1);
  CHECK(find_interval(iv, 0.05) == 1);
  CHECK(find_interval(iv, 0.0501) == -1);
  CHECK(find_interval(iv, -0.001) == -1);
}

TEST_CASE("association") {
  MapConfig cfg;
  SurfelMap map(cfg);
  const auto plane = plane_cloud(1.0, 0.02);
  map.insert_cloud(plane, Vec3(0, 0, 5));
  std::vector<PropagatedPoseSeq> iv{constant_velocity(Vec3::Zero(), 0.0, 0.05, 20),
                                    constant_velocity(Vec3::Zero(), 0.05, 0.1, 20)};

  SUBCASE("empty map gives nothing") {
    SurfelMap empty(cfg);
    const std::vector<RawPoint> pts{{Vec3(0.1, 0.1, 0), 0.01, 0, 0.f}};
    CHECK(associate(pts, iv, empty).total() == 0);
  }
  SUBCASE("a point on the plane matches at several scales") {
    const std::vector<RawPoint> pts{{Vec3(0.33, 0.27, 0.0), 0.06, 0, 0.f}};
    const AssociationSet a = associate(pts, iv, map);
    REQUIRE(a.intervals.size() == 2);
    CHECK(a.intervals[0].empty());
    std::set<int> depths;
    for (const PtsCoeff& c : a.intervals[1]) {
      depths.insert(c.depth);
      CHECK(c.interval == 1);
      CHECK(std::abs(c.normal.norm() - 1.0) < 1e-12);
      CHECK(c.s == doctest::Approx(0.2));
      CHECK(c.weight == 1.0);
    }
    CHECK(depths.count(1) == 1);
    CHECK(depths.count(2) == 1);
    CHECK(depths.count(3) == 1);
  }
  SUBCASE("a point two plane distances away is rejected") {
    const std::vector<RawPoint> pts{{Vec3(0.33, 0.27, 2 * cfg.max_plane_dist), 0.02, 0, 0.f}};
    CHECK(associate(pts, iv, map).total() == 0);
  }
  SUBCASE("points outside coverage are counted and dropped") {
    const std::vector<RawPoint> pts{{Vec3(0.3, 0.3, 0), 0.2, 0, 0.f}, {Vec3(0.3, 0.3, 0), 0.03, 0, 0.f}};
    const AssociationSet a = associate(pts, iv, map);
    CHECK(a.dropped_out_of_range == 1);
    CHECK(a.intervals[0].size() > 0);
  }
  SUBCASE("depth mask and per-scale weights") {
    const std::vector<RawPoint> pts{{Vec3(0.33, 0.27, 0.0), 0.01, 0, 0.f}};
    AssocConfig only2;
    only2.depth_mask = 1u << 2;
    const AssociationSet masked = associate(pts, iv, map, only2);
    CHECK(!masked.intervals[0].empty());
    for (const PtsCoeff& c : masked.intervals[0]) CHECK(c.depth == 2);
    AssocConfig scaled;
    scaled.per_scale_weight = true;
    const AssociationSet a = associate(pts, iv, map, scaled);
    double sum = 0;
    for (const PtsCoeff& c : a.intervals[0]) sum += c.weight;
    CHECK(sum == doctest::Approx(1.0));
  }
}

TEST_CASE("association is repeatable and respects the plane distance") {
  std::mt19937_64 rng(3);
  SurfelMap map;
  std::vector<Vec3> cloud;
  std::normal_distribution<double> noise(0.0, 0.01);
  for (const Vec3& p : plane_cloud(2.0, 0.03)) cloud.push_back(p + Vec3(0, 0, noise(rng)));
  for (const Vec3& p : plane_cloud(2.0, 0.03)) cloud.emplace_back(p.x(), 2.0, p.y() + 2.0);
  map.insert_cloud(cloud, Vec3(0, 0, 1));
  std::vector<PropagatedPoseSeq> iv;
  for (int m = 0; m < 4; ++m) {
    PropagatedPoseSeq seq;
    for (int i = 0; i <= 10; ++i) {
      const double t = 0.025 * m + 0.0025 * i;
      seq.push_back({t, Pose(exp_so3(Vec3(0, 0, 0.1 * t)), Vec3(0.2 * t, 0, 0))});
    }
    iv.push_back(seq);
  }
  std::vector<RawPoint> pts;
  std::uniform_real_distribution<double> ut(0.0, 0.1);
  for (int i = 0; i < 3000; ++i) {
    pts.push_back({Vec3(random_vec(rng, 1.8).x(), random_vec(rng, 1.8).y(), noise(rng)), ut(rng), 0, 0.f});
  }
  const AssociationSet a = associate(pts, iv, map);
  const AssociationSet b = associate(pts, iv, map);
  REQUIRE(a.total() > 1000);
  REQUIRE(a.total() == b.total());
  for (std::size_t m = 0; m < a.intervals.size(); ++m) {
    for (std::size_t k = 0; k < a.intervals[m].size(); ++k) {
      const PtsCoeff& x = a.intervals[m][k];
      const PtsCoeff& y = b.intervals[m][k];
      CHECK(x.f == y.f);
      CHECK(x.normal == y.normal);
      CHECK(x.mean == y.mean);
      CHECK(x.s == y.s);
      CHECK(x.interval == static_cast<int>(m));
      const RawPoint probe{x.f, iv[m].front().t + x.s * (iv[m].back().t - iv[m].front().t), 0, 0.f};
      const Vec3 w = deskew_point(probe, iv[m]).world;
      CHECK(std::abs(x.normal.dot(w - x.mean)) < map.config().max_plane_dist);
    }
  }
}

TEST_CASE("noiseless planar world gives zero residuals at the true poses") {
  SurfelMap map;
  map.insert_cloud(plane_cloud(2.0, 0.02, 1.5), Vec3::Zero());
  StateEstimate xm, xn;
  xm.pos = Vec3(0.1, 0.0, 0.0);
  xm.rot = exp_so3(Vec3(0.0, 0.0, 0.2));
  xn.pos = Vec3(0.15, 0.02, 0.01);
  xn.rot = exp_so3(Vec3(0.01, 0.02, 0.25));
  PropagatedPoseSeq seq;
  for (int i = 0; i <= 10; ++i) {
    const double s = i / 10.0;
    seq.push_back({0.0025 * i, Pose(slerp(xm.rot, xn.rot, s), (1 - s) * xm.pos + s * xn.pos)});
  }
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> us(0.0, 1.0);
  std::vector<RawPoint> pts;
  for (int i = 0; i < 500; ++i) {
    const double s = us(rng);
    const Pose t(slerp(xm.rot, xn.rot, s), (1 - s) * xm.pos + s * xn.pos);
    const Vec3 world(random_vec(rng, 1.5).x(), random_vec(rng, 1.5).y(), 1.5);
    pts.push_back({t.inverse() * world, 0.025 * s, 0, 0.f});
  }
  const std::vector<PropagatedPoseSeq> iv{seq};
  const AssociationSet a = associate(pts, iv, map);
  REQUIRE(a.total() > 500);
  double worst = 0;
  for (const PtsCoeff& c : a.intervals[0]) worst = std::max(worst, std::abs(pts_factor_eval(c, xm, xn).r));
  CHECK(worst <= 1e-6);
}

TEST_CASE("stride downsample") {
  std::vector<RawPoint> pts(10);
  for (int i = 0; i < 10; ++i) pts[i].t = i;
  CHECK(stride_downsample(pts, 0).size() == 10);
  CHECK(stride_downsample(pts, 20).size() == 10);
  const auto half = stride_downsample(pts, 5);
  REQUIRE(half.size() == 5);
  CHECK(half[1].t == 2.0);
  CHECK(stride_downsample(pts, 3).size() <= 3);
}

TEST_CASE("PTS residual shifts by the offset along the normal") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 50; ++i) {
    const StateEstimate xm = random_state(rng), xn = random_state(rng);
    PtsCoeff c;
    c.f = random_vec(rng, 5.0);
    c.s = 0.4;
    c.normal = random_vec(rng, 1.0).normalized();
    c.mean = interpolate_point(c.f, c.s, xm, xn, false).q;
    CHECK(std::abs(pts_factor_eval(c, xm, xn).r) < 1e-12);
    const double delta = 0.07;
    c.mean -= delta * c.normal;
    CHECK(pts_factor_eval(c, xm, xn).r == doctest::Approx(delta).epsilon(1e-9));
    CHECK(pts_factor_eval(c, xm, xn, 0.25).r == doctest::Approx(2 * delta).epsilon(1e-9));
  }
}

TEST_CASE("PTS Jacobians match central differences") {
  const double worst = surfelio::testing::pts_jacobian_error(6, 200);
  MESSAGE("worst relative Jacobian error " << worst);
  CHECK(worst <= 1e-5);
}
