// surfelio: simulate datasets, run odometry, evaluate ATE, sweep surfel depths.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "surfelio/ate.hpp"
#include "surfelio/errors.hpp"
#include "surfelio/io.hpp"
#include "surfelio/odometry.hpp"
#include "surfelio/sim.hpp"

namespace fs = std::filesystem;
using namespace surfelio;

namespace {

struct RunFlags {
  std::string config, dataset, output, loop_closure;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_points;
  bool export_map = false;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--config", f.config, "key=value config (default: <dataset>/run.cfg when present)");
  cmd->add_option("--dataset", f.dataset, "dataset directory with scans.csv and imu.csv");
  cmd->add_option("--output", f.output, "output directory");
  cmd->add_option("--loop-closure", f.loop_closure, "on|off")->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--seed", f.seed, "recorded in the effective config");
  cmd->add_option("--max-points-per-bundle", f.max_points, "downsampling cap per bundle");
}

RunConfig resolve(const RunFlags& f) {
  RunConfig cfg;
  fs::path config = f.config;
  if (config.empty() && !f.dataset.empty() && fs::exists(fs::path(f.dataset) / "run.cfg")) {
    config = fs::path(f.dataset) / "run.cfg";
  }
  if (!config.empty()) cfg = RunConfig::load(config);
  if (!f.dataset.empty()) cfg.dataset = f.dataset;
  if (!f.output.empty()) cfg.output = f.output;
  if (!f.loop_closure.empty()) cfg.loop.enabled = f.loop_closure == "on";
  if (f.seed) cfg.seed = *f.seed;
  if (f.max_points) cfg.solver.max_points_per_bundle = *f.max_points;
  if (f.export_map) cfg.export_map = true;
  if (cfg.dataset.empty()) throw std::invalid_argument("no dataset given (--dataset or dataset= in the config)");
  if (cfg.output.empty()) cfg.output = "out";
  cfg.validate();
  return cfg;
}

void print_ate(const AteReport& r) {
  std::printf("matched  %zu\nrmse     %.6f m\nmean     %.6f m\nmedian   %.6f m\nmax      %.6f m\n", r.matched, r.rmse,
              r.mean, r.median, r.max);
  std::printf("axis     %.6f %.6f %.6f m\n", r.axis_rmse.x(), r.axis_rmse.y(), r.axis_rmse.z());
  const auto q = r.alignment.rot.quat();
  std::printf("align    t=(%.6f %.6f %.6f) q=(%.6f %.6f %.6f %.6f)\n", r.alignment.trans.x(), r.alignment.trans.y(),
              r.alignment.trans.z(), q.x(), q.y(), q.z(), q.w());
}

std::string depth_label(const std::vector<int>& d, const char* sep = ",") {
  std::string s;
  for (int x : d) s += (s.empty() ? "" : sep) + std::to_string(x);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Surfel lidar-inertial odometry toolkit"};
  app.require_subcommand(1);

  // sim
  std::string world = "room", sim_out;
  double duration = 60.0;
  std::uint64_t sim_seed = 1;
  bool noiseless = false, stationary = false;
  auto* sim_cmd = app.add_subcommand("sim", "generate a synthetic dataset");
  sim_cmd->add_option("--world", world, "room | corridor-loop | two-scale");
  sim_cmd->add_option("--duration", duration, "seconds");
  sim_cmd->add_option("--seed", sim_seed);
  sim_cmd->add_flag("--noiseless", noiseless, "no sensor noise and no IMU bias");
  sim_cmd->add_flag("--stationary", stationary, "body at rest the whole time");
  sim_cmd->add_option("--output", sim_out, "dataset directory")->required();

  // run
  RunFlags run_flags;
  auto* run_cmd = app.add_subcommand("run", "run odometry on a dataset");
  add_run_flags(run_cmd, run_flags);
  run_cmd->add_flag("--export-map", run_flags.export_map, "write map.ply");

  // eval
  std::string gt_path, est_path, align = "rigid";
  auto* eval_cmd = app.add_subcommand("eval", "absolute trajectory error");
  eval_cmd->add_option("--gt", gt_path, "ground-truth TUM file")->required();
  eval_cmd->add_option("--est", est_path, "estimated TUM file")->required();
  eval_cmd->add_option("--align", align, "none | rigid")->check(CLI::IsMember({"none", "rigid"}));

  // ablate
  RunFlags ab_flags;
  auto* ab_cmd = app.add_subcommand("ablate", "sweep enabled surfel depths and compare ATE");
  add_run_flags(ab_cmd, ab_flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim_cmd) {
      sim::SimConfig cfg = sim::SimConfig::defaults(!noiseless);
      cfg.duration = duration;
      cfg.seed = sim_seed;
      const sim::TrajectorySpec spec =
          stationary ? sim::TrajectorySpec::stationary(duration) : sim::TrajectorySpec::for_world(world, duration);
      const sim::DatasetPaths p = sim::generate_dataset(sim::WorldModel::by_name(world), spec, cfg, sim_out);
      RunConfig rc;
      rc.dataset = sim_out;
      rc.output = fs::path(sim_out) / "out";
      rc.seed = sim_seed;
      for (const auto& l : cfg.lidars) rc.extrinsics[l.id] = l.extrinsic;
      // Box-shaped synthetic worlds: a tight plane gate keeps corner voxels from
      // pulling points onto the neighbouring wall.
      rc.map.max_plane_dist = 0.05;
      rc.save(fs::path(sim_out) / "run.cfg");
      std::printf("wrote %s, %s, %s, %s and run.cfg\n", p.scans.c_str(), p.imu.c_str(), p.truth.c_str(),
                  p.manifest.c_str());
      return 0;
    }
    if (*run_cmd) {
      const RunConfig cfg = resolve(run_flags);
      const RunResult r = run_odometry(cfg);
      cfg.save(cfg.output / "effective.cfg");
      double loop_ms = 0.0;
      for (const auto& t : r.timing) loop_ms += t.dt_loop_ms;
      std::printf("windows %zu, keyframes %zu, loops %zu accepted / %zu rejected, mean cycle %.1f ms\n", r.windows,
                  r.keyframes, r.loops_accepted, r.loops_rejected, r.timing.empty() ? 0.0 : loop_ms / r.timing.size());
      std::printf("trajectory: %s\n", (cfg.output / "trajectory.txt").c_str());
      const fs::path gt = cfg.dataset / "groundtruth.txt";
      if (fs::exists(gt)) {
        const auto g = parse_tum(gt);
        print_ate(evaluate_ate(g, r.trajectory, Alignment::Rigid));
      }
      return 0;
    }
    if (*eval_cmd) {
      const auto g = parse_tum(gt_path);
      const auto e = parse_tum(est_path);
      print_ate(evaluate_ate(g, e, parse_alignment(align)));
      return 0;
    }
    if (*ab_cmd) {
      const RunConfig base = resolve(ab_flags);
      const auto gt = parse_tum(base.dataset / "groundtruth.txt");
      std::vector<std::vector<int>> sets;
      std::vector<int> all;
      for (int d = 1; d <= base.map.max_depth; ++d) all.push_back(d);
      sets.push_back(all);
      for (int d = 1; d <= base.map.max_depth; ++d) sets.push_back({d});
      fs::create_directories(base.output);
      std::ofstream csv(base.output / "ablation.csv");
      csv << "depths,ate_rmse_m,ate_max_m,keyframes\n";
      std::printf("%-12s %12s %12s %10s\n", "depths", "ATE rmse", "ATE max", "keyframes");
      for (const auto& s : sets) {
        RunConfig cfg = base;
        cfg.set_depths(s);
        cfg.output = base.output / ("depths_" + depth_label(s, "-"));
        try {
          const RunResult r = run_odometry(cfg);
          const AteReport a = evaluate_ate(gt, r.trajectory, Alignment::Rigid);
          std::printf("%-12s %12.6f %12.6f %10zu\n", depth_label(s).c_str(), a.rmse, a.max, r.keyframes);
          csv << '"' << depth_label(s) << "\"," << a.rmse << "," << a.max << "," << r.keyframes << "\n";
        } catch (const Error& e) {
          std::printf("%-12s failed: %s\n", depth_label(s).c_str(), e.what());
          csv << '"' << depth_label(s) << "\",nan,nan,0\n";
        }
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
