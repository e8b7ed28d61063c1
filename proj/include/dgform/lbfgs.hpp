#pragma once

#include <Eigen/Core>

#include <functional>

namespace dgform {

// Objective oracle: returns f(x) and writes the gradient. May throw
// Error(kNonFiniteCost); the line search treats that as a rejected step.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct LbfgsOptions {
  int memory = 8;
  int max_iterations = 200;
  double g_tol = 1e-5;      // infinity norm
  double rel_tol = 1e-8;    // relative decrease between iterates
  int max_linesearch = 40;
  double c1 = 1e-4;
  double c2 = 0.9;
};

enum class LbfgsStatus { kGradientTolerance, kRelativeDecrease, kMaxIterations, kLineSearchFailed };

struct LbfgsResult {
  Eigen::VectorXd x;
  double cost = 0.0;
  double initial_cost = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  LbfgsStatus status = LbfgsStatus::kMaxIterations;
  bool degraded = false;
};

// Throws kNonFiniteCost when f is not finite at x0.
LbfgsResult lbfgs_minimize(const Objective& f, const Eigen::VectorXd& x0, const LbfgsOptions& options = {});

}  // namespace dgform
