#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "surfelio/ate.hpp"
#include "surfelio/errors.hpp"
#include "surfelio/io.hpp"
#include "surfelio/odometry.hpp"
#include "surfelio/run_config.hpp"
#include "surfelio/sim.hpp"
#include "test_util.hpp"

using namespace surfelio;
namespace fs = std::filesystem;

namespace {

std::vector<StampedPose> circle_track(int n) {
  std::vector<StampedPose> out;
  for (int i = 0; i < n; ++i) {
    const double a = 0.1 * i;
    out.push_back({0.1 * i, Pose(exp_so3(Vec3(0.02 * std::sin(a), 0.01, a)), Vec3(3 * std::cos(a), 2 * std::sin(a), 0.3 * std::sin(2 * a)))});
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Simulated dataset on disk plus a config pointing at it.
RunConfig dataset(const std::string& name, const std::string& world, double duration, bool noisy, bool stationary) {
  const fs::path dir = fs::temp_directory_path() / ("surfelio_run_" + name);
  fs::remove_all(dir);
  sim::SimConfig sc = sim::SimConfig::defaults(noisy);
  sc.duration = duration;
  const auto spec = stationary ? sim::TrajectorySpec::stationary(duration) : sim::TrajectorySpec::for_world(world, duration);
  sim::generate_dataset(sim::WorldModel::by_name(world), spec, sc, dir);
  RunConfig cfg;
  cfg.dataset = dir;
  cfg.output = dir / "out";
  for (const auto& l : sc.lidars) cfg.extrinsics[l.id] = l.extrinsic;
  cfg.map.max_plane_dist = 0.05;  // keeps points of the next wall out of corner voxels
  return cfg;
}

}  // namespace

TEST_CASE("config round trip reproduces the effective configuration") {
  RunConfig c;
  c.map.leaf_size = 0.2;
  c.solver.huber_delta = 0.1 + 1e-12;
  c.imu.gravity = Vec3(0.01, 0, -9.80665);
  c.loop.enabled = true;
  c.loop.icp.max_source_points = 1234;
  c.set_depths({1, 3, 5});
  c.extrinsics[1] = Pose(exp_so3(Vec3(M_PI / 2, 0, 0)), Vec3(-0.05, 0, 0.15));
  c.dataset = "data/room";
  c.seed = 18446744073709551615ull;
  const std::string text = c.serialize();
  const RunConfig back = RunConfig::parse(text);
  CHECK(back.serialize() == text);
  CHECK(back.map.leaf_size == 0.2);
  CHECK(back.solver.huber_delta == c.solver.huber_delta);
  CHECK(back.depths() == std::vector<int>{1, 3, 5});
  CHECK(back.loop.icp.max_source_points == 1234);
  CHECK(back.seed == c.seed);
  CHECK((back.extrinsics.at(1).trans - c.extrinsics.at(1).trans).norm() == 0.0);
  CHECK(rotation_distance(back.extrinsics.at(1).rot, c.extrinsics.at(1).rot) < 1e-15);
}

TEST_CASE("config parsing is strict") {
  CHECK_NOTHROW(RunConfig::parse("# comment\n\n  map.leaf_size = 0.1   # trailing\n"));
  try {
    RunConfig::parse("map.leaf_size = 0.1\nmap.leaf_sise = 0.2\n");
    FAIL("unknown key accepted");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(RunConfig::parse("map.leaf_size = 0.1x\n"), ParseError);
  CHECK_THROWS_AS(RunConfig::parse("map.leaf_size\n"), ParseError);
  CHECK_THROWS_AS(RunConfig::parse("solver.robust = maybe\n"), ParseError);
  CHECK_THROWS_AS(RunConfig::parse("imu.gravity = 0,0\n"), ParseError);
  CHECK_THROWS_AS(RunConfig::parse("extrinsic.1 = 0,0,0,0,0,0,2\n"), ParseError);
  CHECK_THROWS_AS(RunConfig::parse("extrinsic.x = 0,0,0,0,0,0,1\n"), ParseError);
  CHECK_THROWS_AS(RunConfig::parse("surfel.depths = 1,,2\n"), ParseError);
  // Values that parse but violate an invariant.
  CHECK_THROWS_AS(RunConfig::parse("map.leaf_size = -1\n"), std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::parse("surfel.depths = 0\n"), std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::parse("loop.candidates = 0\n"), std::invalid_argument);

  const RunConfig c = RunConfig::parse("surfel.depths = 2\nloop.enabled = on\nextrinsic.0 = 1,2,3,0,0,0,1\n");
  CHECK(c.depths() == std::vector<int>{2});
  CHECK(c.solver.assoc.depth_mask == 0b100u);
  CHECK(c.loop.enabled);
  CHECK(c.extrinsics.at(0).trans == Vec3(1, 2, 3));

  const fs::path p = fs::temp_directory_path() / "surfelio_bad.cfg";
  { std::ofstream(p) << "map.max_depth = 5\nbogus = 1\n"; }
  try {
    RunConfig::load(p);
    FAIL("unknown key accepted");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find(p.string()) != std::string::npos);
  }
  fs::remove(p);
}

TEST_CASE("ate of a trajectory against itself is zero") {
  const auto gt = circle_track(100);
  for (Alignment a : {Alignment::None, Alignment::Rigid}) {
    const AteReport r = evaluate_ate(gt, gt, a);
    CHECK(r.matched == 100);
    CHECK(r.rmse < 1e-12);
    CHECK(r.max < 1e-12);
  }
}

TEST_CASE("ate of a shifted trajectory without alignment is the shift") {
  const auto gt = circle_track(100);
  auto est = gt;
  for (auto& s : est) s.pose.trans += Vec3(0.1, 0, 0);
  const AteReport r = evaluate_ate(gt, est, Alignment::None);
  CHECK(r.rmse == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(r.mean == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(r.median == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(r.axis_rmse.x() == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(r.axis_rmse.tail<2>().norm() < 1e-15);
  CHECK(evaluate_ate(gt, est, Alignment::Rigid).rmse < 1e-9);
}

TEST_CASE("rigid alignment removes any rigid transform") {
  std::mt19937_64 rng(21);
  const auto gt = circle_track(80);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose t = testing::random_pose(rng, M_PI, 50.0);
    auto est = gt;
    for (auto& s : est) s.pose = t * s.pose;
    const AteReport r = evaluate_ate(gt, est, Alignment::Rigid);
    CHECK(r.rmse <= 1e-9);
    CHECK(rotation_distance(r.alignment.rot, t.rot.inverse()) < 1e-9);
  }
}

TEST_CASE("ate matches timestamps within 10 ms only") {
  const auto gt = circle_track(50);
  auto est = gt;
  for (std::size_t i = 0; i < est.size(); ++i) est[i].t += (i % 2 == 0) ? 0.005 : 0.015;
  CHECK(evaluate_ate(gt, est, Alignment::None).matched == 25);
  std::vector<StampedPose> late = {{100.0, Pose()}};
  CHECK_THROWS_AS(evaluate_ate(gt, late, Alignment::None), std::invalid_argument);

  // Errors 0, 0, 0.3, 0.4 -> mean 0.175, median 0.15, max 0.4.
  std::vector<StampedPose> g(gt.begin(), gt.begin() + 4), e = g;
  e[2].pose.trans.x() += 0.3;
  e[3].pose.trans.y() += 0.4;
  const AteReport r = evaluate_ate(g, e, Alignment::None);
  CHECK(r.mean == doctest::Approx(0.175));
  CHECK(r.median == doctest::Approx(0.15));
  CHECK(r.max == doctest::Approx(0.4));
  CHECK(r.rmse == doctest::Approx(std::sqrt(0.25 / 4)));
  CHECK(parse_alignment("rigid") == Alignment::Rigid);
  CHECK_THROWS(parse_alignment("sim3"));
}

TEST_CASE("stationary dataset stays at a constant pose") {
  RunConfig cfg = dataset("stationary", "room", 4.0, false, true);
  const RunResult r = run_odometry(cfg);
  REQUIRE(!r.trajectory.empty());
  double worst = 0.0;
  for (const auto& s : r.trajectory) worst = std::max(worst, (s.pose.trans - r.trajectory.front().pose.trans).norm());
  MESSAGE("max displacement " << worst);
  CHECK(worst <= 1e-3);
  CHECK(r.keyframes == 1);
  CHECK(fs::exists(cfg.output / "trajectory.txt"));
  CHECK(fs::exists(cfg.output / "timing.csv"));
  CHECK(slurp(cfg.output / "timing.csv").rfind("window_index,t_k,dt_loop_ms,dt_solve_ms,num_factors\n", 0) == 0);
  fs::remove_all(cfg.dataset);
}

TEST_CASE("noisy stationary dataset jitters but does not drift") {
  // 2 cm range noise and a map seeded from a single sweep put each window
  // within a few millimetres; no keyframe may be triggered.
  RunConfig cfg = dataset("stationary_noisy", "room", 4.0, true, true);
  const RunResult r = run_odometry(cfg);
  Vec3 mean = Vec3::Zero();
  for (const auto& s : r.trajectory) mean += s.pose.trans;
  mean /= static_cast<double>(r.trajectory.size());
  double worst = 0.0;
  for (const auto& s : r.trajectory) worst = std::max(worst, (s.pose.trans - mean).norm());
  MESSAGE("max distance from mean " << worst);
  CHECK(worst <= 5e-3);
  CHECK(r.keyframes == 1);
  fs::remove_all(cfg.dataset);
}

TEST_CASE("same dataset and config give identical trajectory files") {
  RunConfig cfg = dataset("determinism", "room", 5.0, true, false);
  cfg.export_map = true;
  const fs::path base = cfg.output;
  cfg.output = base / "a";
  run_odometry(cfg);
  cfg.output = base / "b";
  run_odometry(cfg);
  const std::string a = slurp(base / "a" / "trajectory.txt");
  CHECK(!a.empty());
  CHECK(a == slurp(base / "b" / "trajectory.txt"));
  CHECK(slurp(base / "a" / "map.ply") == slurp(base / "b" / "map.ply"));
  CHECK(slurp(base / "a" / "map.ply").rfind("ply\nformat binary_little_endian 1.0\n", 0) == 0);
  fs::remove_all(cfg.dataset);
}

TEST_CASE("loop closure on and off both cover every ground-truth time") {
  RunConfig cfg = dataset("coverage", "room", 5.0, true, false);
  const auto gt = parse_tum(cfg.dataset / "groundtruth.txt");
  for (bool lc : {false, true}) {
    cfg.loop.enabled = lc;
    cfg.output = cfg.dataset / (lc ? "on" : "off");
    const RunResult r = run_odometry(cfg);
    const auto est = parse_tum(cfg.output / "trajectory.txt");
    REQUIRE(est.size() == r.trajectory.size());
    std::size_t covered = 0;
    for (const auto& g : gt) {
      for (const auto& e : est) {
        if (std::abs(e.t - g.t) <= 0.01) {
          ++covered;
          break;
        }
      }
    }
    CHECK(covered == gt.size());
    CHECK(evaluate_ate(gt, est, Alignment::Rigid).rmse < 0.05);
  }
  fs::remove_all(cfg.dataset);
}

TEST_CASE("run fails loudly on bad input") {
  RunConfig cfg;
  cfg.dataset = fs::temp_directory_path() / "surfelio_missing_dataset";
  cfg.output = cfg.dataset / "out";
  CHECK_THROWS(run_odometry(cfg));
  OdometrySystem sys(cfg);
  CHECK_THROWS_AS(sys.run({}, {}), std::invalid_argument);
}
