#pragma once

#include "dgform/dvs_search.hpp"
#include "dgform/dvs_state.hpp"
#include "dgform/lbfgs.hpp"
#include "dgform/trajopt.hpp"

#include <vector>

namespace dgform {

// Dimension layout of the DVS backbone.
inline constexpr int kDvsDim = 5;  // x, y, z, r, alpha
inline constexpr int kDvsRadius = 3;
inline constexpr int kDvsAlpha = 4;

struct ContourSet {
  double radius = 1.0;
  std::vector<Point3> points;
};

// theta_a = pi * a / n_theta (poles included), phi_b = 2 pi b / (n_phi + 1).
ContourSet contour_samples(double radius, int n_theta, int n_phi);

struct ContourMotion {
  Point3 position;
  Eigen::Vector3d velocity;
  Eigen::Vector3d acceleration;
};

// Motion of a point attached to the deforming structure. state, rate and
// accel are 5-vectors [x y z r alpha] and their first two time derivatives.
ContourMotion contour_motion(const Eigen::VectorXd& state, const Eigen::VectorXd& rate, const Eigen::VectorXd& accel,
                             const Point3& base, double base_radius);

// weight * sum over contour points of max(0, |v|^2 - v_max^2)^3 + max(0, |a|^2 - a_max^2)^3
// at one backbone sample, accumulating its gradient into g.
double contour_limit_penalty(const SampleState& sample, const ContourSet& contour, double base_radius, double v_max,
                             double a_max, double weight, SampleGradient& g);

struct DvsTrajectory {
  PiecewisePoly backbone;
  double base_radius = 1.0;
  double stamp = 0.0;  // world time at backbone t = 0

  double end_time() const { return stamp + backbone.total_duration(); }
  // World-time evaluation, clamped into the span.
  Eigen::VectorXd eval(double t_world, int order = 0) const;
  DvsState state_at(double t_world) const;
};

struct DvsOptConfig {
  double v_max = 2.0;
  double a_max = 7.0;
  double time_weight = 20.0;
  double penalty_weight = 1e4;
  double anchor_weight = 10.0;
  // Same tie for the radius and stretch waypoints; keeps the deformation the
  // search chose for a gap from being smoothed away.
  double shape_anchor_weight = 100.0;
  double r_floor_ratio = 0.95;
  double alpha_min = 0.5;
  double alpha_max = 2.0;
  int n_theta = 4;
  int n_phi = 8;
  int samples_per_piece = 16;
  // Initial piece durations assume this fraction of v_max.
  double initial_speed_ratio = 0.5;
  // Pin r and alpha to their path values (rigid structure).
  bool freeze_shape = false;
  double speed_tol = 1e-2;
  double accel_tol = 1e-1;
  LbfgsOptions lbfgs{8, 300, 1e-5, 1e-8, 40, 1e-4, 0.9};
};

struct DvsOptStats {
  int iterations = 0;
  double cost = 0.0;
  double initial_cost = 0.0;
  bool degraded = false;
  double max_contour_speed = 0.0;
  double max_contour_accel = 0.0;
  double min_radius = 0.0;
  double min_alpha = 0.0;
  double max_alpha = 0.0;
};

struct DvsOptResult {
  DvsTrajectory trajectory;
  DvsOptStats stats;
};

// Sample-wise feasibility summary of an existing trajectory.
DvsOptStats measure_dvs(const DvsTrajectory& traj, const DvsOptConfig& config);

// head is the current DVS state with its first two derivatives (3 x 5);
// the terminal state is path.back() at rest. r_safe sets the radius floor.
// Throws kInfeasibleGuidance when the optimizer degrades and a limit is
// violated by more than ten times its tolerance.
DvsOptResult optimize_dvs(const DvsPath& path, const Eigen::MatrixXd& head, double base_radius, double r_safe,
                          const DvsOptConfig& config, double stamp = 0.0);

}  // namespace dgform
