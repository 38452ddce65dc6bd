#pragma once

#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "surfelio/geometry.hpp"
#include "surfelio/lm_solver.hpp"

namespace surfelio {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Pose tangent used by the graph: [rotation (right), translation (world)],
/// i.e. R <- R Exp(d_rot), p <- p + d_pos.
Pose pose_boxplus(const Pose& t, const Vec6& d);

/// Relative-pose prior T_bar = T_from^-1 T_to.
struct RelativePosePrior {
  int from = 0;
  int to = 0;
  Pose rel;
  Mat6 covariance = Mat6::Identity();  // [rot, pos] order
};

struct PoseGraph {
  std::vector<Pose> poses;
  std::vector<RelativePosePrior> odometry;  // edge i joins i and i+1
  std::vector<RelativePosePrior> loops;

  /// Throws std::invalid_argument when the odometry edges are not a chain over
  /// all poses, an index is out of range, or a covariance is not positive definite.
  void validate() const;
};

struct EdgeResidual {
  Vec6 r;       // whitened
  Mat6 jac_from;
  Mat6 jac_to;
};

/// r = [Log(R_bar^T R_p^T R_c); R_bar^T (R_p^T (p_c - p_p) - p_bar)], whitened
/// by the edge covariance. Zero iff T_p^-1 T_c = T_bar.
EdgeResidual pose_graph_residual(const RelativePosePrior& edge, const Pose& tp, const Pose& tc);

struct PoseGraphReport {
  LmReport lm;
  double initial_cost = 0.0;
  double final_cost = 0.0;
};

/// LM over every pose but the first, which stays fixed.
PoseGraphReport optimize_pose_graph(PoseGraph& graph, const LmOptions& opt = {});

double pose_graph_cost(const PoseGraph& graph);

/// g2o text: VERTEX_SE3:QUAT and EDGE_SE3:QUAT with the information matrix in
/// g2o's [translation, rotation] order.
void write_g2o(const std::filesystem::path& path, const PoseGraph& graph);

}  // namespace surfelio
