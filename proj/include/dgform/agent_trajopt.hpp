#pragma once

#include "dgform/dvs_trajopt.hpp"
#include "dgform/geometry.hpp"
#include "dgform/lbfgs.hpp"
#include "dgform/paas.hpp"
#include "dgform/trajopt.hpp"

#include <span>
#include <vector>

namespace dgform {

struct AgentTrajectory {
  PiecewisePoly backbone;  // 3-D positions
  int agent_id = -1;
  int epoch = 0;
  double stamp = 0.0;  // world time at backbone t = 0

  bool empty() const { return backbone.empty(); }
  double end_time() const { return stamp + backbone.total_duration(); }
  // World-time evaluation, clamped into the span.
  Point3 position(double t_world) const;
  Eigen::Vector3d derivative(double t_world, int order) const;
};

// Desired positions of one agent at world times t_now + j * dt_f.
struct FormationRef {
  std::vector<double> times;
  std::vector<Point3> positions;
};

// Throws kNoAssignment when the agent has no target in the plan.
FormationRef build_formation_ref(const DvsTrajectory& dvs, const FormationPlan& plan, int agent, double t_now,
                                 double horizon, double dt_f);

// sum_j |p_j - ref_j|^2, gradient written per sample.
double formation_penalty(std::span<const Point3> positions, std::span<const Point3> reference,
                         std::vector<Eigen::Vector3d>& grad);

// max(0, clearance - esdf(p))^3 with its gradient w.r.t. p.
double obstacle_penalty(const Point3& p, const Esdf& esdf, double clearance, Eigen::Vector3d& grad);

// max(0, d_safe^2 - |E (p - other)|^2)^3 with E = diag(1, 1, 1 / downwash).
// grad is w.r.t. p; the gradient w.r.t. other is its negative.
double swarm_penalty(const Point3& p, const Point3& other, double d_safe, double downwash, Eigen::Vector3d& grad);

struct AgentOptConfig {
  double horizon = 2.0;
  int pieces = 4;
  double ref_dt = 0.1;
  int samples_per_piece = 16;
  double v_max = 3.0;
  double a_max = 10.0;
  double clearance = 0.3;
  double downwash = 2.0;
  double effort_weight = 1e-4;
  double formation_weight = 1.0;
  double obstacle_weight = 1e5;
  double swarm_weight = 1e4;
  double dynamics_weight = 1e4;
  double time_weight = 20.0;
  // Neighbors farther than this at the start of the horizon are ignored; 0 keeps all.
  double neighbor_radius = 0.0;
  // Added to d_safe inside the swarm penalty only. Neighbours plan against
  // each other's previous-cycle trajectories, so a small buffer absorbs the
  // disagreement between simultaneous plans.
  double swarm_margin = 0.0;
  LbfgsOptions lbfgs{8, 200, 1e-6, 1e-8, 40, 1e-4, 0.9};
};

struct AgentOptResult {
  AgentTrajectory trajectory;
  double cost = 0.0;
  double initial_cost = 0.0;
  int iterations = 0;
  bool degraded = false;
  // Initial cost was not finite; the trajectory brakes to rest instead.
  bool emergency_stop = false;
};

struct AgentProblem {
  int agent_id = 0;
  double t_now = 0.0;
  Eigen::MatrixXd head;  // 3 x 3: position, velocity, acceleration rows
  FormationRef reference;
  const Esdf* esdf = nullptr;
  std::span<const AgentTrajectory> neighbors;
  double d_safe = 0.0;
  const AgentTrajectory* warm_start = nullptr;
};

// Uniform fixed piece durations over the horizon.
Eigen::VectorXd agent_durations(const AgentOptConfig& config);

// Constant-deceleration stop from head, held at rest for the rest of the horizon.
AgentTrajectory emergency_stop_trajectory(const Eigen::MatrixXd& head, double a_max, double horizon, double t_now,
                                          int agent_id);

AgentOptResult optimize_agent(const AgentProblem& problem, const AgentOptConfig& config);

}  // namespace dgform
