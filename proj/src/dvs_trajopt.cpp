#include "dgform/dvs_trajopt.hpp"

#include "dgform/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace dgform {

namespace {

// Time derivatives of the horizontal stretch factors sx = alpha * u and
// sy = u / alpha, u = r / r0, together with their partials w.r.t. the
// backbone quantities (alpha, alpha', alpha'', u, u', u'').
struct StretchRates {
  double sx, vx, ax;
  double sy, vy, ay;
  // partials of vx, vy, ax, ay
  double vx_a, vx_da, vx_u, vx_du;
  double vy_a, vy_da, vy_u, vy_du;
  double ax_a, ax_da, ax_dda, ax_u, ax_du, ax_ddu;
  double ay_a, ay_da, ay_dda, ay_u, ay_du, ay_ddu;
};

StretchRates stretch_rates(double a, double da, double dda, double u, double du, double ddu) {
  StretchRates s{};
  const double a2 = a * a, a3 = a2 * a, a4 = a3 * a;
  s.sx = a * u;
  s.vx = da * u + a * du;
  s.ax = dda * u + 2.0 * da * du + a * ddu;
  s.sy = u / a;
  s.vy = du / a - u * da / a2;
  s.ay = ddu / a - 2.0 * du * da / a2 - u * dda / a2 + 2.0 * u * da * da / a3;

  s.vx_a = du;
  s.vx_da = u;
  s.vx_u = da;
  s.vx_du = a;
  s.vy_a = -du / a2 + 2.0 * u * da / a3;
  s.vy_da = -u / a2;
  s.vy_u = -da / a2;
  s.vy_du = 1.0 / a;

  s.ax_a = ddu;
  s.ax_da = 2.0 * du;
  s.ax_dda = u;
  s.ax_u = dda;
  s.ax_du = 2.0 * da;
  s.ax_ddu = a;
  s.ay_a = -ddu / a2 + 4.0 * du * da / a3 + 2.0 * u * dda / a3 - 6.0 * u * da * da / a4;
  s.ay_da = -2.0 * du / a2 + 4.0 * u * da / a3;
  s.ay_dda = -u / a2;
  s.ay_u = -dda / a2 + 2.0 * da * da / a3;
  s.ay_du = -2.0 * da / a2;
  s.ay_ddu = 1.0 / a;
  return s;
}

StretchRates rates_of(const Eigen::VectorXd& state, const Eigen::VectorXd& rate, const Eigen::VectorXd& accel,
                      double base_radius) {
  return stretch_rates(state[kDvsAlpha], rate[kDvsAlpha], accel[kDvsAlpha], state[kDvsRadius] / base_radius,
                       rate[kDvsRadius] / base_radius, accel[kDvsRadius] / base_radius);
}

}  // namespace

ContourSet contour_samples(double radius, int n_theta, int n_phi) {
  if (n_theta < 2 || n_phi < 4) throw Error(ErrorCode::kInvalidConfig, "contour needs n_theta >= 2 and n_phi >= 4");
  if (!(radius > 0.0)) throw Error(ErrorCode::kInvalidConfig, "contour radius must be positive");
  ContourSet set;
  set.radius = radius;
  for (int a = 0; a <= n_theta; ++a) {
    const double theta = std::numbers::pi * a / n_theta;
    for (int b = 0; b <= n_phi; ++b) {
      const double phi = 2.0 * std::numbers::pi * b / (n_phi + 1);
      set.points.emplace_back(radius * std::sin(theta) * std::cos(phi), radius * std::sin(theta) * std::sin(phi),
                              radius * std::cos(theta));
    }
  }
  return set;
}

ContourMotion contour_motion(const Eigen::VectorXd& state, const Eigen::VectorXd& rate, const Eigen::VectorXd& accel,
                             const Point3& base, double base_radius) {
  if (!(state[kDvsAlpha] > 0.0)) throw Error(ErrorCode::kInvalidState, "alpha must be positive");
  const StretchRates s = rates_of(state, rate, accel, base_radius);
  ContourMotion m;
  m.position = state.head<3>() + Point3(base.x() * s.sx, base.y() * s.sy, base.z());
  m.velocity = rate.head<3>() + Eigen::Vector3d(base.x() * s.vx, base.y() * s.vy, 0.0);
  m.acceleration = accel.head<3>() + Eigen::Vector3d(base.x() * s.ax, base.y() * s.ay, 0.0);
  return m;
}

Eigen::VectorXd DvsTrajectory::eval(double t_world, int order) const {
  return backbone.eval_clamped(t_world - stamp, order);
}

DvsState DvsTrajectory::state_at(double t_world) const {
  const Eigen::VectorXd s = eval(t_world, 0);
  return DvsState{s.head<3>(), s[kDvsRadius], s[kDvsAlpha]};
}

DvsOptStats measure_dvs(const DvsTrajectory& traj, const DvsOptConfig& config) {
  const ContourSet contour = contour_samples(traj.base_radius, config.n_theta, config.n_phi);
  DvsOptStats st;
  st.min_radius = std::numeric_limits<double>::infinity();
  st.min_alpha = std::numeric_limits<double>::infinity();
  st.max_alpha = -std::numeric_limits<double>::infinity();
  const auto& bb = traj.backbone;
  auto visit = [&](int piece, double tl) {
    const Eigen::VectorXd p = bb.eval_piece(piece, tl, 0);
    const Eigen::VectorXd v = bb.eval_piece(piece, tl, 1);
    const Eigen::VectorXd a = bb.eval_piece(piece, tl, 2);
    st.min_radius = std::min(st.min_radius, p[kDvsRadius]);
    st.min_alpha = std::min(st.min_alpha, p[kDvsAlpha]);
    st.max_alpha = std::max(st.max_alpha, p[kDvsAlpha]);
    if (!(p[kDvsAlpha] > 0.0)) return;
    for (const auto& base : contour.points) {
      const ContourMotion m = contour_motion(p, v, a, base, traj.base_radius);
      st.max_contour_speed = std::max(st.max_contour_speed, m.velocity.norm());
      st.max_contour_accel = std::max(st.max_contour_accel, m.acceleration.norm());
    }
  };
  for (int i = 0; i < bb.pieces(); ++i) {
    for (int j = 0; j < config.samples_per_piece; ++j) visit(i, bb.durations()[i] * j / config.samples_per_piece);
  }
  visit(bb.pieces() - 1, bb.durations()[bb.pieces() - 1]);
  return st;
}

double contour_limit_penalty(const SampleState& st, const ContourSet& contour, double base_radius, double v_max,
                             double a_max, double weight, SampleGradient& g) {
  const StretchRates s = rates_of(st.pos, st.vel, st.acc, base_radius);
  const Eigen::Vector3d pv = st.vel.head<3>();
  const Eigen::Vector3d pa = st.acc.head<3>();
  const double vmax2 = v_max * v_max;
  const double amax2 = a_max * a_max;
  double value = 0.0;
  double sxv = 0.0, syv = 0.0, sxa = 0.0, sya = 0.0;
  for (const auto& b : contour.points) {
    const Eigen::Vector3d v = pv + Eigen::Vector3d(b.x() * s.vx, b.y() * s.vy, 0.0);
    const Eigen::Vector3d a = pa + Eigen::Vector3d(b.x() * s.ax, b.y() * s.ay, 0.0);
    double dv, da;
    value += cubic_penalty(v.squaredNorm() - vmax2, dv) + cubic_penalty(a.squaredNorm() - amax2, da);
    if (dv != 0.0) {
      const Eigen::Vector3d gv = 2.0 * weight * dv * v;
      g.vel.head<3>() += gv;
      sxv += gv.x() * b.x();
      syv += gv.y() * b.y();
    }
    if (da != 0.0) {
      const Eigen::Vector3d ga = 2.0 * weight * da * a;
      g.acc.head<3>() += ga;
      sxa += ga.x() * b.x();
      sya += ga.y() * b.y();
    }
  }
  if (sxv != 0.0 || syv != 0.0 || sxa != 0.0 || sya != 0.0) {
    g.pos[kDvsAlpha] += sxv * s.vx_a + syv * s.vy_a + sxa * s.ax_a + sya * s.ay_a;
    g.vel[kDvsAlpha] += sxv * s.vx_da + syv * s.vy_da + sxa * s.ax_da + sya * s.ay_da;
    g.acc[kDvsAlpha] += sxa * s.ax_dda + sya * s.ay_dda;
    g.pos[kDvsRadius] += (sxv * s.vx_u + syv * s.vy_u + sxa * s.ax_u + sya * s.ay_u) / base_radius;
    g.vel[kDvsRadius] += (sxv * s.vx_du + syv * s.vy_du + sxa * s.ax_du + sya * s.ay_du) / base_radius;
    g.acc[kDvsRadius] += (sxa * s.ax_ddu + sya * s.ay_ddu) / base_radius;
  }
  return weight * value;
}

DvsOptResult optimize_dvs(const DvsPath& path, const Eigen::MatrixXd& head, double base_radius, double r_safe,
                          const DvsOptConfig& config, double stamp) {
  const auto& wp = path.waypoints;
  if (wp.size() < 2) throw Error(ErrorCode::kInvalidInput, "DVS path needs at least two waypoints");
  if (head.rows() != 3 || head.cols() != kDvsDim) throw Error(ErrorCode::kInvalidInput, "head state must be 3 x 5");
  if (!(base_radius > 0.0)) throw Error(ErrorCode::kInvalidConfig, "base radius must be positive");

  const int m = static_cast<int>(wp.size()) - 1;
  auto as_row = [](const DvsState& s) {
    Eigen::RowVectorXd r(kDvsDim);
    r << s.position.x(), s.position.y(), s.position.z(), s.radius, s.alpha;
    return r;
  };
  Eigen::MatrixXd tail = Eigen::MatrixXd::Zero(3, kDvsDim);
  tail.row(0) = as_row(wp.back());

  Eigen::MatrixXd q0(m - 1, kDvsDim);
  for (int i = 0; i + 1 < m; ++i) q0.row(i) = as_row(wp[i + 1]);
  Eigen::VectorXd tau0(m);
  const double cruise = config.initial_speed_ratio * config.v_max;
  for (int i = 0; i < m; ++i) {
    const double len = (wp[i + 1].position - wp[i].position).norm();
    tau0[i] = std::log(std::max(len / cruise, 0.1));
  }

  std::vector<int> free_dims{0, 1, 2};
  if (!config.freeze_shape) free_dims = {0, 1, 2, 3, 4};
  const int nf = static_cast<int>(free_dims.size());
  const int nq = (m - 1) * nf;

  PenaltySpec spec;
  spec.samples_per_piece = config.samples_per_piece;
  spec.time_weight = config.time_weight;
  PenalizedCost cost(kDvsDim, head, tail, spec);

  const ContourSet contour = contour_samples(base_radius, config.n_theta, config.n_phi);
  const double w = config.penalty_weight;
  const double r_floor = config.r_floor_ratio * r_safe;
  const bool shape_free = !config.freeze_shape;

  cost.add_sample_penalty([&](const SampleState& st, SampleGradient& g) {
    const double alpha = st.pos[kDvsAlpha];
    if (!(alpha > 1e-6)) throw Error(ErrorCode::kNonFiniteCost, "alpha left the positive range");
    double value = contour_limit_penalty(st, contour, base_radius, config.v_max, config.a_max, w, g);
    if (shape_free) {
      double d;
      value += w * cubic_penalty(r_floor - st.pos[kDvsRadius], d);
      g.pos[kDvsRadius] -= w * d;
      value += w * cubic_penalty(config.alpha_min - alpha, d);
      g.pos[kDvsAlpha] -= w * d;
      value += w * cubic_penalty(alpha - config.alpha_max, d);
      g.pos[kDvsAlpha] += w * d;
    }
    return value;
  });

  auto unpack = [&](const Eigen::VectorXd& x, Eigen::MatrixXd& q, Eigen::VectorXd& tau) {
    q = q0;
    for (int i = 0; i + 1 < m; ++i)
      for (int k = 0; k < nf; ++k) q(i, free_dims[k]) = x[i * nf + k];
    tau = x.tail(m);
  };

  const double wg = config.anchor_weight;
  const double ws = shape_free ? config.shape_anchor_weight : 0.0;
  Objective objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
    Eigen::MatrixXd q, gq;
    Eigen::VectorXd tau, gtau;
    unpack(x, q, tau);
    double j = cost.evaluate(q, tau, gq, gtau);
    for (int i = 0; i + 1 < m; ++i) {
      const Eigen::Vector3d d = q.row(i).head<3>().transpose() - wp[i + 1].position;
      j += wg * d.squaredNorm();
      gq.row(i).head<3>() += 2.0 * wg * d.transpose();
      if (ws > 0.0) {
        const double dr = q(i, kDvsRadius) - wp[i + 1].radius;
        const double da = q(i, kDvsAlpha) - wp[i + 1].alpha;
        j += ws * (dr * dr + da * da);
        gq(i, kDvsRadius) += 2.0 * ws * dr;
        gq(i, kDvsAlpha) += 2.0 * ws * da;
      }
    }
    grad.resize(x.size());
    for (int i = 0; i + 1 < m; ++i)
      for (int k = 0; k < nf; ++k) grad[i * nf + k] = gq(i, free_dims[k]);
    grad.tail(m) = gtau;
    return j;
  };

  Eigen::VectorXd x0(nq + m);
  for (int i = 0; i + 1 < m; ++i)
    for (int k = 0; k < nf; ++k) x0[i * nf + k] = q0(i, free_dims[k]);
  x0.tail(m) = tau0;

  const LbfgsResult res = lbfgs_minimize(objective, x0, config.lbfgs);
  Eigen::MatrixXd q;
  Eigen::VectorXd tau;
  unpack(res.x, q, tau);
  Eigen::VectorXd scratch;
  objective(res.x, scratch);

  DvsOptResult out;
  out.trajectory.backbone = cost.minco().trajectory();
  out.trajectory.base_radius = base_radius;
  out.trajectory.stamp = stamp;
  out.stats = measure_dvs(out.trajectory, config);
  out.stats.iterations = res.iterations;
  out.stats.cost = res.cost;
  out.stats.initial_cost = res.initial_cost;
  out.stats.degraded = res.degraded;

  if (res.degraded) {
    const double alpha_tol = 1e-2;
    const bool violated = out.stats.max_contour_speed > config.v_max + 10 * config.speed_tol ||
                          out.stats.max_contour_accel > config.a_max + 10 * config.accel_tol ||
                          (shape_free && (out.stats.min_radius < r_floor - 10 * alpha_tol ||
                                          out.stats.min_alpha < config.alpha_min - 10 * alpha_tol ||
                                          out.stats.max_alpha > config.alpha_max + 10 * alpha_tol));
    if (violated) throw Error(ErrorCode::kInfeasibleGuidance, "DVS optimization left limits violated");
  }
  return out;
}

}  // namespace dgform
