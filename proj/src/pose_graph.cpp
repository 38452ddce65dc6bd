#include "surfelio/pose_graph.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SparseCore>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>

namespace surfelio {

Pose pose_boxplus(const Pose& t, const Vec6& d) {
  return Pose(t.rot * exp_so3(d.head<3>()), t.trans + d.tail<3>());
}

namespace {

// Upper-triangular whitening factor U with U^T U = cov^-1.
Mat6 sqrt_information(const Mat6& cov) {
  Eigen::LLT<Mat6> llt(cov.inverse());
  if (llt.info() != Eigen::Success) throw std::invalid_argument("edge covariance is not positive definite");
  return llt.matrixU();
}

void check_edge(const RelativePosePrior& e, int n) {
  if (e.from < 0 || e.to < 0 || e.from >= n || e.to >= n || e.from == e.to) {
    throw std::invalid_argument("edge " + std::to_string(e.from) + "->" + std::to_string(e.to) + " out of range");
  }
  Eigen::LLT<Mat6> llt(e.covariance);
  if (llt.info() != Eigen::Success || !e.covariance.isApprox(e.covariance.transpose(), 1e-9)) {
    throw std::invalid_argument("edge covariance must be symmetric positive definite");
  }
}

}  // namespace

void PoseGraph::validate() const {
  const int n = static_cast<int>(poses.size());
  if (n == 0) throw std::invalid_argument("pose graph is empty");
  if (static_cast<int>(odometry.size()) != n - 1) throw std::invalid_argument("odometry edges must chain all poses");
  for (int i = 0; i + 1 < n; ++i) {
    const RelativePosePrior& e = odometry[static_cast<std::size_t>(i)];
    if (e.from != i || e.to != i + 1) throw std::invalid_argument("odometry edge " + std::to_string(i) + " breaks the chain");
    check_edge(e, n);
  }
  for (const RelativePosePrior& e : loops) check_edge(e, n);
}

EdgeResidual pose_graph_residual(const RelativePosePrior& edge, const Pose& tp, const Pose& tc) {
  const Mat3 rp_t = tp.rot.inverse().matrix();
  const Mat3 rbar_t = edge.rel.rot.inverse().matrix();
  const Rotation x = tp.rot.inverse() * tc.rot;
  const Vec3 phi = log_so3(edge.rel.rot.inverse() * x);
  const Vec3 local = rp_t * (tc.trans - tp.trans);

  Vec6 r;
  r.head<3>() = phi;
  r.tail<3>() = rbar_t * (local - edge.rel.trans);

  const Mat3 jr_inv = right_jacobian_inv(phi);
  Mat6 jp = Mat6::Zero(), jc = Mat6::Zero();
  jc.block<3, 3>(0, 0) = jr_inv;
  jp.block<3, 3>(0, 0) = -jr_inv * x.matrix().transpose();
  jp.block<3, 3>(3, 0) = rbar_t * skew(local);
  jp.block<3, 3>(3, 3) = -rbar_t * rp_t;
  jc.block<3, 3>(3, 3) = rbar_t * rp_t;

  const Mat6 u = sqrt_information(edge.covariance);
  return EdgeResidual{u * r, u * jp, u * jc};
}

double pose_graph_cost(const PoseGraph& graph) {
  double c = 0.0;
  auto add = [&](const RelativePosePrior& e) {
    c += pose_graph_residual(e, graph.poses[static_cast<std::size_t>(e.from)],
                             graph.poses[static_cast<std::size_t>(e.to)])
             .r.squaredNorm();
  };
  for (const auto& e : graph.odometry) add(e);
  for (const auto& e : graph.loops) add(e);
  return c;
}

namespace {

class GraphProblem {
 public:
  using Hessian = Eigen::SparseMatrix<double>;

  explicit GraphProblem(PoseGraph& g) : g_(g) {
    for (const auto& e : g.odometry) edges_.push_back(&e);
    for (const auto& e : g.loops) edges_.push_back(&e);
  }

  int dim() const { return 6 * (static_cast<int>(g_.poses.size()) - 1); }

  double linearize(Hessian& h, Eigen::VectorXd& g) {
    const int n = dim();
    g.setZero(n);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(edges_.size() * 4 * 36 + static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) trip.emplace_back(i, i, 0.0);  // keep the diagonal for damping
    double cost = 0.0;
    for (const RelativePosePrior* e : edges_) {
      const EdgeResidual er = pose_graph_residual(*e, g_.poses[static_cast<std::size_t>(e->from)],
                                                  g_.poses[static_cast<std::size_t>(e->to)]);
      cost += er.r.squaredNorm();
      const int idx[2] = {6 * (e->from - 1), 6 * (e->to - 1)};
      const Mat6* jac[2] = {&er.jac_from, &er.jac_to};
      for (int a = 0; a < 2; ++a) {
        if (idx[a] < 0) continue;
        g.segment<6>(idx[a]) += jac[a]->transpose() * er.r;
        for (int b = 0; b < 2; ++b) {
          if (idx[b] < 0) continue;
          const Mat6 blk = jac[a]->transpose() * *jac[b];
          for (int u = 0; u < 6; ++u) {
            for (int v = 0; v < 6; ++v) trip.emplace_back(idx[a] + u, idx[b] + v, blk(u, v));
          }
        }
      }
    }
    h.resize(n, n);
    h.setFromTriplets(trip.begin(), trip.end());
    return cost;
  }

  double cost_at(const Eigen::VectorXd& dx) const {
    PoseGraph moved;
    moved.poses = retract(dx);
    double c = 0.0;
    for (const RelativePosePrior* e : edges_) {
      c += pose_graph_residual(*e, moved.poses[static_cast<std::size_t>(e->from)],
                               moved.poses[static_cast<std::size_t>(e->to)])
               .r.squaredNorm();
    }
    return c;
  }

  void apply(const Eigen::VectorXd& dx) { g_.poses = retract(dx); }

 private:
  std::vector<Pose> retract(const Eigen::VectorXd& dx) const {
    std::vector<Pose> out = g_.poses;
    for (std::size_t i = 1; i < out.size(); ++i) out[i] = pose_boxplus(out[i], dx.segment<6>(6 * (static_cast<int>(i) - 1)));
    return out;
  }

  PoseGraph& g_;
  std::vector<const RelativePosePrior*> edges_;
};

}  // namespace

PoseGraphReport optimize_pose_graph(PoseGraph& graph, const LmOptions& opt) {
  graph.validate();
  PoseGraphReport rep;
  rep.initial_cost = pose_graph_cost(graph);
  if (graph.poses.size() < 2) {
    rep.final_cost = rep.initial_cost;
    return rep;
  }
  GraphProblem problem(graph);
  rep.lm = solve_lm(problem, opt);
  rep.final_cost = rep.lm.final_cost;
  return rep;
}

void write_g2o(const std::filesystem::path& path, const PoseGraph& graph) {
  struct Closer {
    void operator()(std::FILE* f) const { std::fclose(f); }
  };
  std::unique_ptr<std::FILE, Closer> f(std::fopen(path.c_str(), "w"));
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (std::size_t i = 0; i < graph.poses.size(); ++i) {
    const Pose& p = graph.poses[i];
    const Eigen::Quaterniond& q = p.rot.quat();
    std::fprintf(f.get(), "VERTEX_SE3:QUAT %zu %.9f %.9f %.9f %.9f %.9f %.9f %.9f\n", i, p.trans.x(), p.trans.y(),
                 p.trans.z(), q.x(), q.y(), q.z(), q.w());
  }
  if (!graph.poses.empty()) std::fprintf(f.get(), "FIX 0\n");
  auto edge = [&](const RelativePosePrior& e) {
    const Eigen::Quaterniond& q = e.rel.rot.quat();
    // Reorder [rot, pos] to g2o's [pos, rot].
    constexpr int order[6] = {3, 4, 5, 0, 1, 2};
    const Mat6 ours = e.covariance.inverse();
    Mat6 info;
    for (int r = 0; r < 6; ++r) {
      for (int c = 0; c < 6; ++c) info(r, c) = ours(order[r], order[c]);
    }
    std::fprintf(f.get(), "EDGE_SE3:QUAT %d %d %.9f %.9f %.9f %.9f %.9f %.9f %.9f", e.from, e.to, e.rel.trans.x(),
                 e.rel.trans.y(), e.rel.trans.z(), q.x(), q.y(), q.z(), q.w());
    for (int r = 0; r < 6; ++r) {
      for (int c = r; c < 6; ++c) std::fprintf(f.get(), " %.9g", info(r, c));
    }
    std::fputc('\n', f.get());
  };
  for (const auto& e : graph.odometry) edge(e);
  for (const auto& e : graph.loops) edge(e);
  if (std::ferror(f.get())) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace surfelio
