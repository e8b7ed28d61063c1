#include "dgform/trajopt.hpp"

#include "dgform/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dgform {

namespace {

// k! / (k - order)!
double falling_factorial(int k, int order) {
  double out = 1.0;
  for (int i = 0; i < order; ++i) out *= static_cast<double>(k - i);
  return out;
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw Error(ErrorCode::kNonFiniteCost, std::string("non-finite ") + what);
}

}  // namespace

Eigen::RowVectorXd basis_row(double t, int order, int coeff_count) {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(coeff_count);
  double power = 1.0;
  for (int k = order; k < coeff_count; ++k) {
    row[k] = falling_factorial(k, order) * power;
    power *= t;
  }
  return row;
}

PiecewisePoly::PiecewisePoly(Eigen::VectorXd durations, Eigen::MatrixXd coefficients)
    : durations_(std::move(durations)), coeffs_(std::move(coefficients)) {
  if (durations_.size() == 0) throw Error(ErrorCode::kInvalidDurations, "trajectory needs at least one piece");
  if (coeffs_.rows() % durations_.size() != 0) {
    throw Error(ErrorCode::kInvalidInput, "coefficient rows must be a multiple of the piece count");
  }
  for (int i = 0; i < durations_.size(); ++i) {
    if (!(durations_[i] > 0.0) || !std::isfinite(durations_[i])) {
      throw Error(ErrorCode::kInvalidDurations, "piece durations must be positive and finite");
    }
  }
  total_ = durations_.sum();
}

std::pair<int, double> PiecewisePoly::locate(double t) const {
  if (empty()) throw Error(ErrorCode::kOutOfRange, "empty trajectory");
  const double slack = 1e-12 * std::max(1.0, total_);
  if (!(t >= -slack && t <= total_ + slack)) {
    throw Error(ErrorCode::kOutOfRange, "time " + std::to_string(t) + " outside [0, " + std::to_string(total_) + "]");
  }
  double start = 0.0;
  const int last = pieces() - 1;
  for (int i = 0; i < last; ++i) {
    if (t < start + durations_[i]) return {i, std::max(0.0, t - start)};
    start += durations_[i];
  }
  return {last, std::clamp(t - start, 0.0, durations_[last])};
}

Eigen::VectorXd PiecewisePoly::eval_piece(int piece, double local_t, int order) const {
  const int n = degree() + 1;
  return (basis_row(local_t, order, n) * coeffs_.middleRows(piece * n, n)).transpose();
}

Eigen::VectorXd PiecewisePoly::eval(double t, int order) const {
  const auto [piece, local] = locate(t);
  return eval_piece(piece, local, order);
}

Eigen::VectorXd PiecewisePoly::eval_clamped(double t, int order) const {
  return eval(std::clamp(t, 0.0, total_), order);
}

Minco::Minco(int dim, int s) : dim_(dim), s_(s) {
  if (dim < 1 || s < 1) throw Error(ErrorCode::kInvalidConfig, "spline needs dim >= 1 and s >= 1");
  head_ = Eigen::MatrixXd::Zero(s, dim);
  tail_ = Eigen::MatrixXd::Zero(s, dim);
}

void Minco::set_boundary(const Eigen::MatrixXd& head, const Eigen::MatrixXd& tail) {
  if (head.rows() != s_ || head.cols() != dim_ || tail.rows() != s_ || tail.cols() != dim_) {
    throw Error(ErrorCode::kInvalidInput, "boundary states must be s x dim");
  }
  head_ = head;
  tail_ = tail;
}

void Minco::set_parameters(const Eigen::MatrixXd& waypoints, const Eigen::VectorXd& durations) {
  const int m = static_cast<int>(durations.size());
  if (m < 1) throw Error(ErrorCode::kInvalidDurations, "at least one piece required");
  if (waypoints.rows() != m - 1 || (m > 1 && waypoints.cols() != dim_)) {
    throw Error(ErrorCode::kInvalidInput, "waypoints must be (M-1) x dim");
  }
  for (int i = 0; i < m; ++i) {
    if (!(durations[i] > 0.0) || !std::isfinite(durations[i])) {
      throw Error(ErrorCode::kInvalidDurations, "piece durations must be positive and finite");
    }
  }
  durations_ = durations;
  const int s = s_;
  const int nc = 2 * s;
  const int n = m * nc;
  lu_.reset(n, nc, nc);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n, dim_);

  for (int d = 0; d < s; ++d) {
    lu_(d, d) = falling_factorial(d, d);
    rhs.row(d) = head_.row(d);
  }
  for (int i = 0; i + 1 < m; ++i) {
    const int base = s + nc * i;
    const int col = nc * i;
    const int next = nc * (i + 1);
    const double t = durations[i];
    for (int d = s; d <= nc - 2; ++d) {
      const int row = base + (d - s);
      const Eigen::RowVectorXd b = basis_row(t, d, nc);
      for (int k = d; k < nc; ++k) lu_(row, col + k) = b[k];
      lu_(row, next + d) = -falling_factorial(d, d);
    }
    {
      const int row = base + s - 1;
      const Eigen::RowVectorXd b = basis_row(t, 0, nc);
      for (int k = 0; k < nc; ++k) lu_(row, col + k) = b[k];
      rhs.row(row) = waypoints.row(i);
    }
    for (int d = 0; d < s; ++d) {
      const int row = base + s + d;
      const Eigen::RowVectorXd b = basis_row(t, d, nc);
      for (int k = d; k < nc; ++k) lu_(row, col + k) = b[k];
      lu_(row, next + d) = -falling_factorial(d, d);
    }
  }
  {
    const int col = nc * (m - 1);
    const double t = durations[m - 1];
    for (int d = 0; d < s; ++d) {
      const int row = n - s + d;
      const Eigen::RowVectorXd b = basis_row(t, d, nc);
      for (int k = d; k < nc; ++k) lu_(row, col + k) = b[k];
      rhs.row(row) = tail_.row(d);
    }
  }
  lu_.factorize();
  lu_.solve(rhs);
  coeffs_ = std::move(rhs);
}

double Minco::effort(const Eigen::VectorXd& weights) const {
  const int nc = 2 * s_;
  double total = 0.0;
  for (int i = 0; i < pieces(); ++i) {
    const double t = durations_[i];
    const auto c = coeffs_.middleRows(i * nc, nc);
    for (int k = s_; k < nc; ++k) {
      for (int l = s_; l < nc; ++l) {
        const int e = k + l - 2 * s_ + 1;
        const double q = falling_factorial(k, s_) * falling_factorial(l, s_) * std::pow(t, e) / e;
        for (int d = 0; d < dim_; ++d) total += weights[d] * q * c(k, d) * c(l, d);
      }
    }
  }
  return total;
}

void Minco::add_effort_gradient(const Eigen::VectorXd& weights, Eigen::MatrixXd& grad_c,
                                Eigen::VectorXd& grad_t) const {
  const int nc = 2 * s_;
  for (int i = 0; i < pieces(); ++i) {
    const double t = durations_[i];
    const auto c = coeffs_.middleRows(i * nc, nc);
    for (int k = s_; k < nc; ++k) {
      for (int l = s_; l < nc; ++l) {
        const int e = k + l - 2 * s_ + 1;
        const double pp = falling_factorial(k, s_) * falling_factorial(l, s_);
        const double q = pp * std::pow(t, e) / e;
        const double dq = pp * std::pow(t, e - 1);
        for (int d = 0; d < dim_; ++d) {
          grad_c(i * nc + k, d) += 2.0 * weights[d] * q * c(l, d);
          grad_t[i] += weights[d] * dq * c(k, d) * c(l, d);
        }
      }
    }
  }
}

void Minco::propagate_gradient(const Eigen::MatrixXd& grad_c, const Eigen::VectorXd& grad_t_explicit,
                               Eigen::MatrixXd& grad_q, Eigen::VectorXd& grad_t, Eigen::MatrixXd* grad_head,
                               Eigen::MatrixXd* grad_tail) const {
  const int m = pieces();
  const int s = s_;
  const int nc = 2 * s;
  const int n = m * nc;
  Eigen::MatrixXd adj = grad_c;
  lu_.solve_transpose(adj);

  grad_q.resize(m - 1, dim_);
  grad_t = grad_t_explicit;
  // Each row that evaluates piece i at its end contributes -adj_row . sigma_i^(d+1)(T_i).
  auto end_rows = [&](int i, int row, int d) {
    const Eigen::RowVectorXd b = basis_row(durations_[i], d + 1, nc);
    const Eigen::RowVectorXd deriv = b * coeffs_.middleRows(i * nc, nc);
    grad_t[i] -= adj.row(row).dot(deriv);
  };
  for (int i = 0; i + 1 < m; ++i) {
    const int base = s + nc * i;
    for (int d = s; d <= nc - 2; ++d) end_rows(i, base + (d - s), d);
    end_rows(i, base + s - 1, 0);
    for (int d = 0; d < s; ++d) end_rows(i, base + s + d, d);
    grad_q.row(i) = adj.row(base + s - 1);
  }
  for (int d = 0; d < s; ++d) end_rows(m - 1, n - s + d, d);
  if (grad_head != nullptr) *grad_head = adj.topRows(s);
  if (grad_tail != nullptr) *grad_tail = adj.bottomRows(s);
}

PiecewisePoly solve_coeffs(const Eigen::MatrixXd& waypoints, const Eigen::VectorXd& durations,
                           const Eigen::MatrixXd& head, const Eigen::MatrixXd& tail, int s) {
  Minco minco(static_cast<int>(head.cols()), s);
  minco.set_boundary(head, tail);
  minco.set_parameters(waypoints, durations);
  return minco.trajectory();
}

PenalizedCost::PenalizedCost(int dim, Eigen::MatrixXd head, Eigen::MatrixXd tail, PenaltySpec spec, int s)
    : spec_(std::move(spec)), minco_(dim, s) {
  if (spec_.samples_per_piece < 4) throw Error(ErrorCode::kInvalidConfig, "need at least 4 samples per piece");
  if (spec_.time_weight < 0.0) throw Error(ErrorCode::kInvalidConfig, "time weight must be non-negative");
  minco_.set_boundary(head, tail);
  effort_weights_ = spec_.effort_weights.size() == 0 ? Eigen::VectorXd::Ones(dim) : spec_.effort_weights;
  if (effort_weights_.size() != dim) throw Error(ErrorCode::kInvalidConfig, "effort weight count mismatch");
}

void PenalizedCost::set_point_penalty(std::vector<double> times, PointPenaltyFn fn) {
  point_times_ = std::move(times);
  point_fn_ = std::move(fn);
}

double PenalizedCost::evaluate(const Eigen::MatrixXd& q, const Eigen::VectorXd& tau, Eigen::MatrixXd& grad_q,
                               Eigen::VectorXd& grad_tau) {
  const Eigen::VectorXd durations = tau.array().exp().matrix();
  Eigen::VectorXd grad_t;
  const double j = evaluate_durations(q, durations, grad_q, grad_t);
  grad_tau = grad_t.cwiseProduct(durations);
  return j;
}

double PenalizedCost::evaluate_fixed_time(const Eigen::MatrixXd& q, const Eigen::VectorXd& durations,
                                          Eigen::MatrixXd& grad_q) {
  Eigen::VectorXd grad_t;
  return evaluate_durations(q, durations, grad_q, grad_t);
}

double PenalizedCost::evaluate_durations(const Eigen::MatrixXd& q, const Eigen::VectorXd& durations,
                                         Eigen::MatrixXd& grad_q, Eigen::VectorXd& grad_t) {
  if (!q.allFinite() || !durations.allFinite()) throw Error(ErrorCode::kNonFiniteCost, "non-finite parameters");
  minco_.set_parameters(q, durations);
  const int m = minco_.pieces();
  const int dim = minco_.dim();
  const int nc = 2 * minco_.order();
  const Eigen::MatrixXd& coeffs = minco_.coefficients();

  Eigen::MatrixXd grad_c = Eigen::MatrixXd::Zero(coeffs.rows(), dim);
  Eigen::VectorXd grad_t_explicit = Eigen::VectorXd::Zero(m);

  breakdown_ = CostBreakdown{};
  breakdown_.effort = minco_.effort(effort_weights_);
  minco_.add_effort_gradient(effort_weights_, grad_c, grad_t_explicit);
  breakdown_.time = spec_.time_weight * durations.sum();
  grad_t_explicit.array() += spec_.time_weight;

  if (!sample_fns_.empty()) {
    const int kappa = spec_.samples_per_piece;
    Eigen::VectorXd time_shift = Eigen::VectorXd::Zero(m);  // d(cost)/d(t_abs) summed per piece
    SampleState st;
    SampleGradient g;
    double start = 0.0;
    for (int i = 0; i < m; ++i) {
      const double step = durations[i] / kappa;
      const auto c = coeffs.middleRows(i * nc, nc);
      for (int jj = 0; jj < kappa; ++jj) {
        const double tl = jj * step;
        const Eigen::RowVectorXd b0 = basis_row(tl, 0, nc);
        const Eigen::RowVectorXd b1 = basis_row(tl, 1, nc);
        const Eigen::RowVectorXd b2 = basis_row(tl, 2, nc);
        const Eigen::RowVectorXd b3 = basis_row(tl, 3, nc);
        st.piece = i;
        st.index = jj;
        st.t_abs = start + tl;
        st.pos = (b0 * c).transpose();
        st.vel = (b1 * c).transpose();
        st.acc = (b2 * c).transpose();
        g.pos = Eigen::VectorXd::Zero(dim);
        g.vel = Eigen::VectorXd::Zero(dim);
        g.acc = Eigen::VectorXd::Zero(dim);
        g.t_abs = 0.0;
        double p = 0.0;
        for (const auto& fn : sample_fns_) p += fn(st, g);
        require_finite(p, "sample penalty");
        if (p == 0.0 && g.t_abs == 0.0 && g.pos.isZero(0.0) && g.vel.isZero(0.0) && g.acc.isZero(0.0)) continue;
        breakdown_.samples += step * p;
        grad_c.middleRows(i * nc, nc) +=
            step * (b0.transpose() * g.pos.transpose() + b1.transpose() * g.vel.transpose() +
                    b2.transpose() * g.acc.transpose());
        const Eigen::VectorXd jerk = (b3 * c).transpose();
        const double frac = static_cast<double>(jj) / kappa;
        grad_t_explicit[i] += p / kappa + step * frac * (g.pos.dot(st.vel) + g.vel.dot(st.acc) + g.acc.dot(jerk) +
                                                         g.t_abs);
        time_shift[i] += step * g.t_abs;
      }
      start += durations[i];
    }
    // t_abs of a sample in piece i grows with every earlier duration.
    double suffix = 0.0;
    for (int i = m - 1; i >= 0; --i) {
      grad_t_explicit[i] += suffix;
      suffix += time_shift[i];
    }
  }

  if (point_fn_ && !point_times_.empty()) {
    const PiecewisePoly traj = minco_.trajectory();
    Eigen::VectorXd g(dim);
    for (int idx = 0; idx < static_cast<int>(point_times_.size()); ++idx) {
      const double t = std::clamp(point_times_[idx], 0.0, traj.total_duration());
      const auto [piece, local] = traj.locate(t);
      const auto c = coeffs.middleRows(piece * nc, nc);
      const Eigen::RowVectorXd b0 = basis_row(local, 0, nc);
      const Eigen::VectorXd pos = (b0 * c).transpose();
      g.setZero();
      const double p = point_fn_(idx, point_times_[idx], pos, g);
      require_finite(p, "point penalty");
      breakdown_.points += p;
      grad_c.middleRows(piece * nc, nc) += b0.transpose() * g.transpose();
      const Eigen::VectorXd vel = (basis_row(local, 1, nc) * c).transpose();
      const double shift = g.dot(vel);
      if (point_times_[idx] >= traj.total_duration()) {
        // pinned to the end: the local time is the last duration itself
        grad_t_explicit[piece] += shift;
      } else {
        for (int l = 0; l < piece; ++l) grad_t_explicit[l] -= shift;
      }
    }
  }

  const double total = breakdown_.effort + breakdown_.time + breakdown_.samples + breakdown_.points;
  require_finite(total, "cost");
  minco_.propagate_gradient(grad_c, grad_t_explicit, grad_q, grad_t);
  return total;
}

}  // namespace dgform
