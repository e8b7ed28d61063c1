#include "dgform/agent_trajopt.hpp"

#include "dgform/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dgform {

Point3 AgentTrajectory::position(double t_world) const { return backbone.eval_clamped(t_world - stamp, 0); }

Eigen::Vector3d AgentTrajectory::derivative(double t_world, int order) const {
  const double t = t_world - stamp;
  // Past either end the agent is held at the boundary state, which is at rest at the tail.
  if (t > backbone.total_duration()) return Eigen::Vector3d::Zero();
  return backbone.eval_clamped(t, order);
}

FormationRef build_formation_ref(const DvsTrajectory& dvs, const FormationPlan& plan, int agent, double t_now,
                                 double horizon, double dt_f) {
  if (agent < 0 || agent >= static_cast<int>(plan.assignment.size()) || plan.assignment[agent] < 0 ||
      plan.assignment[agent] >= static_cast<int>(plan.relative_targets.size())) {
    throw Error(ErrorCode::kNoAssignment, "agent " + std::to_string(agent) + " has no target");
  }
  if (!(dt_f > 0.0) || !(horizon > 0.0)) throw Error(ErrorCode::kInvalidConfig, "horizon and dt_f must be positive");
  const Point3& target = plan.relative_targets[plan.assignment[agent]];
  const int count = static_cast<int>(std::lround(horizon / dt_f));
  FormationRef ref;
  ref.times.reserve(count + 1);
  ref.positions.reserve(count + 1);
  for (int j = 0; j <= count; ++j) {
    const double t = t_now + j * dt_f;
    ref.times.push_back(t);
    ref.positions.push_back(desired_position(dvs.state_at(t), target, dvs.base_radius));
  }
  return ref;
}

double formation_penalty(std::span<const Point3> positions, std::span<const Point3> reference,
                         std::vector<Eigen::Vector3d>& grad) {
  if (positions.size() != reference.size()) throw Error(ErrorCode::kInvalidInput, "sample count mismatch");
  grad.assign(positions.size(), Eigen::Vector3d::Zero());
  double cost = 0.0;
  for (std::size_t j = 0; j < positions.size(); ++j) {
    const Eigen::Vector3d d = positions[j] - reference[j];
    cost += d.squaredNorm();
    grad[j] = 2.0 * d;
  }
  return cost;
}

double obstacle_penalty(const Point3& p, const Esdf& esdf, double clearance, Eigen::Vector3d& grad) {
  const EsdfSample s = esdf.query(p);
  double dg;
  const double value = cubic_penalty(clearance - s.distance, dg);
  grad = -dg * s.gradient;
  return value;
}

double swarm_penalty(const Point3& p, const Point3& other, double d_safe, double downwash, Eigen::Vector3d& grad) {
  const Eigen::Vector3d e(1.0, 1.0, 1.0 / downwash);
  const Eigen::Vector3d d = e.cwiseProduct(p - other);
  double dg;
  const double value = cubic_penalty(d_safe * d_safe - d.squaredNorm(), dg);
  grad = -2.0 * dg * e.cwiseProduct(d);
  return value;
}

AgentTrajectory emergency_stop_trajectory(const Eigen::MatrixXd& head, double a_max, double horizon, double t_now,
                                          int agent_id) {
  const int n = 2 * kMincoOrder;
  const Eigen::Vector3d p0 = head.row(0).transpose();
  const Eigen::Vector3d v0 = head.row(1).transpose();
  const double speed = v0.norm();
  const double t_stop = std::min(speed / a_max, 0.5 * horizon);

  AgentTrajectory out;
  out.agent_id = agent_id;
  out.stamp = t_now;
  if (t_stop <= 1e-9) {
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(n, 3);
    c.row(0) = p0.transpose();
    out.backbone = PiecewisePoly(Eigen::VectorXd::Constant(1, horizon), c);
    return out;
  }
  // Constant deceleration along -v0 until rest, then hold.
  const Eigen::Vector3d a = -v0 / t_stop;
  const Eigen::Vector3d p1 = p0 + v0 * t_stop + 0.5 * a * t_stop * t_stop;
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(2 * n, 3);
  c.row(0) = p0.transpose();
  c.row(1) = v0.transpose();
  c.row(2) = 0.5 * a.transpose();
  c.row(n) = p1.transpose();
  Eigen::VectorXd durations(2);
  durations << t_stop, horizon - t_stop;
  out.backbone = PiecewisePoly(durations, c);
  return out;
}

Eigen::VectorXd agent_durations(const AgentOptConfig& config) {
  if (config.pieces < 1 || !(config.horizon > 0.0)) throw Error(ErrorCode::kInvalidConfig, "bad horizon");
  return Eigen::VectorXd::Constant(config.pieces, config.horizon / config.pieces);
}

namespace {

Eigen::MatrixXd initial_waypoints(const AgentProblem& pb, const Eigen::VectorXd& durations) {
  const int m = static_cast<int>(durations.size());
  Eigen::MatrixXd q(m - 1, 3);
  const Point3 p0 = pb.head.row(0).transpose();
  const Point3& p_end = pb.reference.positions.back();
  double t = 0.0;
  for (int i = 0; i + 1 < m; ++i) {
    t += durations[i];
    if (pb.warm_start != nullptr && !pb.warm_start->empty()) {
      q.row(i) = pb.warm_start->position(pb.t_now + t).transpose();
    } else {
      q.row(i) = (p0 + (p_end - p0) * (static_cast<double>(i + 1) / m)).transpose();
    }
  }
  return q;
}

}  // namespace

AgentOptResult optimize_agent(const AgentProblem& pb, const AgentOptConfig& config) {
  if (pb.head.rows() != 3 || pb.head.cols() != 3) throw Error(ErrorCode::kInvalidInput, "head must be 3 x 3");
  if (pb.reference.positions.empty() || pb.reference.positions.size() != pb.reference.times.size()) {
    throw Error(ErrorCode::kInvalidInput, "formation reference is empty or inconsistent");
  }
  const int m = config.pieces;
  const int kappa = config.samples_per_piece;
  const Eigen::VectorXd durations = agent_durations(config);

  Eigen::MatrixXd tail = Eigen::MatrixXd::Zero(3, 3);
  tail.row(0) = pb.reference.positions.back().transpose();

  PenaltySpec spec;
  spec.samples_per_piece = kappa;
  spec.time_weight = config.time_weight;
  spec.effort_weights = Eigen::VectorXd::Constant(3, config.effort_weight);
  PenalizedCost cost(3, pb.head, tail, spec);

  // Durations are fixed, so neighbor positions at every sample are known up front.
  const Point3 p0 = pb.head.row(0).transpose();
  std::vector<const AgentTrajectory*> neighbors;
  for (const auto& nb : pb.neighbors) {
    if (nb.empty() || nb.agent_id == pb.agent_id) continue;
    if (config.neighbor_radius > 0.0 && (nb.position(pb.t_now) - p0).norm() > config.neighbor_radius) continue;
    neighbors.push_back(&nb);
  }
  std::vector<Point3> nb_pos(neighbors.size() * m * kappa);
  double piece_start = pb.t_now;
  for (int i = 0; i < m; ++i) {
    if (i > 0) piece_start += durations[i - 1];
    for (int j = 0; j < kappa; ++j) {
      const double t = piece_start + static_cast<double>(j) / kappa * durations[i];
      for (std::size_t k = 0; k < neighbors.size(); ++k) {
        nb_pos[(i * kappa + j) * neighbors.size() + k] = neighbors[k]->position(t);
      }
    }
  }

  const double v2 = config.v_max * config.v_max;
  const double a2 = config.a_max * config.a_max;
  cost.add_sample_penalty([&](const SampleState& st, SampleGradient& g) {
    const Point3 p = st.pos;
    double value = 0.0;
    double dg;
    Eigen::Vector3d gp;
    if (pb.esdf != nullptr) {
      if (st.piece == 0 && st.index == 0 && pb.esdf->query(p).distance < 0.0) {
        return std::numeric_limits<double>::infinity();
      }
      value += config.obstacle_weight * obstacle_penalty(p, *pb.esdf, config.clearance, gp);
      g.pos += config.obstacle_weight * gp;
    }
    const std::size_t base = (st.piece * kappa + st.index) * neighbors.size();
    for (std::size_t k = 0; k < neighbors.size(); ++k) {
      value += config.swarm_weight * swarm_penalty(p, nb_pos[base + k], pb.d_safe, config.downwash, gp);
      g.pos += config.swarm_weight * gp;
    }
    value += config.dynamics_weight * cubic_penalty(st.vel.squaredNorm() - v2, dg);
    g.vel += config.dynamics_weight * dg * 2.0 * st.vel;
    value += config.dynamics_weight * cubic_penalty(st.acc.squaredNorm() - a2, dg);
    g.acc += config.dynamics_weight * dg * 2.0 * st.acc;
    return value;
  });

  std::vector<double> ref_times;
  ref_times.reserve(pb.reference.times.size());
  for (double t : pb.reference.times) ref_times.push_back(t - pb.t_now);
  const double wf = config.formation_weight;
  cost.set_point_penalty(ref_times, [&](int idx, double, const Eigen::VectorXd& pos, Eigen::VectorXd& grad) {
    const Eigen::Vector3d d = pos - pb.reference.positions[idx];
    grad = 2.0 * wf * d;
    return wf * d.squaredNorm();
  });

  const Eigen::MatrixXd q0 = initial_waypoints(pb, durations);
  Objective objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
    const Eigen::MatrixXd q = Eigen::Map<const Eigen::MatrixXd>(x.data(), m - 1, 3);
    Eigen::MatrixXd gq;
    const double j = cost.evaluate_fixed_time(q, durations, gq);
    grad = Eigen::Map<const Eigen::VectorXd>(gq.data(), gq.size());
    return j;
  };

  AgentOptResult out;
  const Eigen::VectorXd x0 = Eigen::Map<const Eigen::VectorXd>(q0.data(), q0.size());
  LbfgsResult res;
  try {
    res = lbfgs_minimize(objective, x0, config.lbfgs);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNonFiniteCost) throw;
    out.trajectory = emergency_stop_trajectory(pb.head, config.a_max, config.horizon, pb.t_now, pb.agent_id);
    out.emergency_stop = true;
    out.degraded = true;
    out.cost = out.initial_cost = std::numeric_limits<double>::infinity();
    return out;
  }
  Eigen::VectorXd scratch;
  objective(res.x, scratch);
  out.trajectory.backbone = cost.minco().trajectory();
  out.trajectory.agent_id = pb.agent_id;
  out.trajectory.stamp = pb.t_now;
  out.cost = res.cost;
  out.initial_cost = res.initial_cost;
  out.iterations = res.iterations;
  out.degraded = res.degraded;
  return out;
}

}  // namespace dgform
