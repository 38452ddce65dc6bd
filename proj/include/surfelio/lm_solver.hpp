#pragma once

#include <algorithm>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <type_traits>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "surfelio/errors.hpp"

namespace surfelio {

struct LmOptions {
  int max_iterations = 10;
  double initial_lambda = 1e-4;
  double max_lambda = 1e10;
  /// Stop when an accepted step lowers the cost by less than this fraction.
  double relative_tolerance = 1e-6;
  double step_tolerance = 1e-10;
};

struct LmReport {
  int iterations = 0;
  int accepted = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::vector<double> cost_trace;  // cost after every accepted step
  bool converged = false;
};

/// Raised when the cost becomes non-finite; the problem is left at the last
/// accepted iterate.
class Divergence : public Error {
 public:
  Divergence(const std::string& what, LmReport report) : Error(what), report_(std::move(report)) {}
  const LmReport& report() const { return report_; }

 private:
  LmReport report_;
};

namespace detail {

// Solves (H + lambda diag(H)) dx = -g. False when the factorization fails.
inline bool damped_solve(const Eigen::MatrixXd& h, const Eigen::VectorXd& g, double lambda, Eigen::VectorXd& dx) {
  Eigen::MatrixXd damped = h;
  for (Eigen::Index i = 0; i < h.rows(); ++i) damped(i, i) += lambda * std::max(h(i, i), 1e-9);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(damped);
  dx = ldlt.solve(-g);
  return ldlt.info() == Eigen::Success;
}

// Sparse variant; h must hold its full diagonal.
inline bool damped_solve(const Eigen::SparseMatrix<double>& h, const Eigen::VectorXd& g, double lambda,
                         Eigen::VectorXd& dx) {
  Eigen::SparseMatrix<double> damped = h;
  for (Eigen::Index i = 0; i < h.rows(); ++i) damped.coeffRef(i, i) += lambda * std::max(h.coeff(i, i), 1e-9);
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(damped);
  if (ldlt.info() != Eigen::Success) return false;
  dx = ldlt.solve(-g);
  return ldlt.info() == Eigen::Success;
}

template <class P, class = void>
struct HessianOf {
  using type = Eigen::MatrixXd;
};
template <class P>
struct HessianOf<P, std::void_t<typename P::Hessian>> {
  using type = typename P::Hessian;
};

}  // namespace detail

/// Levenberg-Marquardt with Marquardt diagonal damping. The problem type provides
///   double linearize(H& h, Eigen::VectorXd& g);       // cost, J^T W J, J^T W r
///   double cost_at(const Eigen::VectorXd& dx) const;  // cost after retracting dx
///   void apply(const Eigen::VectorXd& dx);            // commit the retraction
/// H is Problem::Hessian when declared (dense or Eigen::SparseMatrix<double>),
/// otherwise Eigen::MatrixXd.
template <class Problem>
LmReport solve_lm(Problem& problem, const LmOptions& opt) {
  LmReport report;
  typename detail::HessianOf<Problem>::type h;
  Eigen::VectorXd g;
  double cost = problem.linearize(h, g);
  report.initial_cost = cost;
  report.final_cost = cost;
  report.cost_trace.push_back(cost);
  if (!std::isfinite(cost)) throw Divergence("initial cost is not finite", report);
  if (g.size() == 0 || cost <= 1e-24 || g.lpNorm<Eigen::Infinity>() < 1e-14) {
    report.converged = true;
    return report;
  }

  double lambda = opt.initial_lambda;
  while (report.iterations < opt.max_iterations) {
    ++report.iterations;
    Eigen::VectorXd dx;
    const bool solved = detail::damped_solve(h, g, lambda, dx) && dx.allFinite();
    const double new_cost = solved ? problem.cost_at(dx) : std::numeric_limits<double>::infinity();

    if (solved && std::isfinite(new_cost) && new_cost < cost) {
      problem.apply(dx);
      ++report.accepted;
      const double decrease = (cost - new_cost) / std::max(cost, 1e-300);
      cost = problem.linearize(h, g);
      if (!std::isfinite(cost)) throw Divergence("cost became non-finite after an accepted step", report);
      report.cost_trace.push_back(cost);
      report.final_cost = cost;
      lambda = std::max(lambda / 3.0, 1e-12);
      if (decrease < opt.relative_tolerance || dx.norm() < opt.step_tolerance) {
        report.converged = true;
        break;
      }
    } else {
      lambda *= 4.0;
      if (lambda > opt.max_lambda) {
        // No damped step lowers the cost any further.
        report.converged = true;
        break;
      }
    }
  }
  return report;
}

}  // namespace surfelio
