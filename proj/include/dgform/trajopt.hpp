#pragma once

#include "dgform/banded.hpp"

#include <Eigen/Core>

#include <functional>
#include <utility>
#include <vector>

namespace dgform {

// Control order of the minimum-control spline; pieces have degree 2s-1.
inline constexpr int kMincoOrder = 3;

// Row vector of the monomial basis derivative: entry k is d^order/dt^order t^k.
Eigen::RowVectorXd basis_row(double t, int order, int coeff_count);

// Piecewise polynomial. Coefficients are stacked per piece: row
// piece * (degree + 1) + k holds the t^k coefficient for every dimension.
class PiecewisePoly {
 public:
  PiecewisePoly() = default;
  PiecewisePoly(Eigen::VectorXd durations, Eigen::MatrixXd coefficients);

  int dim() const { return static_cast<int>(coeffs_.cols()); }
  int pieces() const { return static_cast<int>(durations_.size()); }
  int degree() const { return pieces() == 0 ? -1 : static_cast<int>(coeffs_.rows()) / pieces() - 1; }
  const Eigen::VectorXd& durations() const { return durations_; }
  const Eigen::MatrixXd& coefficients() const { return coeffs_; }
  double total_duration() const { return total_; }
  bool empty() const { return pieces() == 0; }

  // Piece owning t (right-continuous) and the local time inside it.
  std::pair<int, double> locate(double t) const;

  // Throws kOutOfRange outside [0, total_duration].
  Eigen::VectorXd eval(double t, int order = 0) const;
  // Clamps t into the span first.
  Eigen::VectorXd eval_clamped(double t, int order = 0) const;
  Eigen::VectorXd eval_piece(int piece, double local_t, int order) const;

 private:
  Eigen::VectorXd durations_;
  Eigen::MatrixXd coeffs_;
  double total_ = 0.0;
};

// Minimum-control spline through fixed waypoints with fixed boundary states.
//
// Boundary matrices are s x dim (row d holds the d-th derivative);
// waypoints are (M-1) x dim.
class Minco {
 public:
  explicit Minco(int dim, int s = kMincoOrder);

  int dim() const { return dim_; }
  int order() const { return s_; }
  int pieces() const { return static_cast<int>(durations_.size()); }

  void set_boundary(const Eigen::MatrixXd& head, const Eigen::MatrixXd& tail);
  void set_parameters(const Eigen::MatrixXd& waypoints, const Eigen::VectorXd& durations);

  const Eigen::MatrixXd& coefficients() const { return coeffs_; }
  const Eigen::VectorXd& durations() const { return durations_; }
  PiecewisePoly trajectory() const { return PiecewisePoly(durations_, coeffs_); }

  // Sum over dimensions of weight_d * integral of the squared s-th derivative.
  double effort(const Eigen::VectorXd& weights) const;
  void add_effort_gradient(const Eigen::VectorXd& weights, Eigen::MatrixXd& grad_c, Eigen::VectorXd& grad_t) const;

  // Adjoint pass. grad_c is the partial w.r.t. coefficients, grad_t_explicit
  // the partial w.r.t. durations with coefficients held fixed.
  void propagate_gradient(const Eigen::MatrixXd& grad_c, const Eigen::VectorXd& grad_t_explicit,
                          Eigen::MatrixXd& grad_q, Eigen::VectorXd& grad_t, Eigen::MatrixXd* grad_head = nullptr,
                          Eigen::MatrixXd* grad_tail = nullptr) const;

 private:
  int dim_;
  int s_;
  Eigen::MatrixXd head_;
  Eigen::MatrixXd tail_;
  Eigen::VectorXd durations_;
  Eigen::MatrixXd coeffs_;
  BandedLU lu_;
};

// Convenience wrapper: one-shot coefficient solve.
PiecewisePoly solve_coeffs(const Eigen::MatrixXd& waypoints, const Eigen::VectorXd& durations,
                           const Eigen::MatrixXd& head, const Eigen::MatrixXd& tail, int s = kMincoOrder);

// Sampled state handed to a penalty callback.
struct SampleState {
  int piece = 0;
  int index = 0;       // sample index inside the piece
  double t_abs = 0.0;  // time since trajectory start
  Eigen::VectorXd pos;
  Eigen::VectorXd vel;
  Eigen::VectorXd acc;
};

// Gradient of one penalty value w.r.t. the sampled quantities. Callbacks
// receive it zero-initialised and accumulate into it.
struct SampleGradient {
  Eigen::VectorXd pos;
  Eigen::VectorXd vel;
  Eigen::VectorXd acc;
  double t_abs = 0.0;
};

using SamplePenaltyFn = std::function<double(const SampleState&, SampleGradient&)>;

// Penalty at fixed absolute time; index runs over the registered times.
using PointPenaltyFn = std::function<double(int index, double t, const Eigen::VectorXd& pos, Eigen::VectorXd& grad)>;

// Smoothed inequality penalty max(0, g)^3 and its derivative.
inline double cubic_penalty(double g, double& dg) {
  if (g <= 0.0) {
    dg = 0.0;
    return 0.0;
  }
  dg = 3.0 * g * g;
  return g * g * g;
}

struct PenaltySpec {
  int samples_per_piece = 16;
  double time_weight = 0.0;
  Eigen::VectorXd effort_weights;  // empty means all ones
};

struct CostBreakdown {
  double effort = 0.0;
  double time = 0.0;
  double samples = 0.0;
  double points = 0.0;
};

// J = effort + w_T * sum(T) + sum_i sum_j (T_i / kappa) * penalty(sample_ij) + point terms.
class PenalizedCost {
 public:
  PenalizedCost(int dim, Eigen::MatrixXd head, Eigen::MatrixXd tail, PenaltySpec spec, int s = kMincoOrder);

  void add_sample_penalty(SamplePenaltyFn fn) { sample_fns_.push_back(std::move(fn)); }
  void set_point_penalty(std::vector<double> times, PointPenaltyFn fn);

  // Parameters (q, tau) with T = exp(tau). Throws kNonFiniteCost on NaN/inf.
  double evaluate(const Eigen::MatrixXd& q, const Eigen::VectorXd& tau, Eigen::MatrixXd& grad_q,
                  Eigen::VectorXd& grad_tau);
  // Durations held fixed; only the waypoint gradient is produced.
  double evaluate_fixed_time(const Eigen::MatrixXd& q, const Eigen::VectorXd& durations, Eigen::MatrixXd& grad_q);

  const CostBreakdown& breakdown() const { return breakdown_; }
  const Minco& minco() const { return minco_; }
  const PenaltySpec& spec() const { return spec_; }

 private:
  double evaluate_durations(const Eigen::MatrixXd& q, const Eigen::VectorXd& durations, Eigen::MatrixXd& grad_q,
                            Eigen::VectorXd& grad_t);

  PenaltySpec spec_;
  Minco minco_;
  Eigen::VectorXd effort_weights_;
  std::vector<SamplePenaltyFn> sample_fns_;
  std::vector<double> point_times_;
  PointPenaltyFn point_fn_;
  CostBreakdown breakdown_;
};

}  // namespace dgform
