#include "dgform/lbfgs.hpp"

#include "dgform/error.hpp"

#include <cmath>
#include <deque>
#include <limits>

namespace dgform {

namespace {

struct Pair {
  Eigen::VectorXd s;
  Eigen::VectorXd y;
  double rho;
};

Eigen::VectorXd two_loop(const std::deque<Pair>& mem, const Eigen::VectorXd& g) {
  Eigen::VectorXd q = -g;
  std::vector<double> alpha(mem.size());
  for (int i = static_cast<int>(mem.size()) - 1; i >= 0; --i) {
    alpha[i] = mem[i].rho * mem[i].s.dot(q);
    q -= alpha[i] * mem[i].y;
  }
  if (!mem.empty()) {
    const auto& last = mem.back();
    q *= last.s.dot(last.y) / last.y.squaredNorm();
  }
  for (std::size_t i = 0; i < mem.size(); ++i) {
    const double beta = mem[i].rho * mem[i].y.dot(q);
    q += (alpha[i] - beta) * mem[i].s;
  }
  return q;
}

}  // namespace

LbfgsResult lbfgs_minimize(const Objective& f, const Eigen::VectorXd& x0, const LbfgsOptions& options) {
  LbfgsResult res;
  Eigen::VectorXd x = x0;
  Eigen::VectorXd g(x.size());
  double fx = f(x, g);
  res.evaluations = 1;
  if (!std::isfinite(fx) || !g.allFinite()) throw Error(ErrorCode::kNonFiniteCost, "objective not finite at x0");
  res.initial_cost = fx;

  std::deque<Pair> mem;
  Eigen::VectorXd x_new(x.size());
  Eigen::VectorXd g_new(x.size());
  res.status = LbfgsStatus::kMaxIterations;

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    if (g.lpNorm<Eigen::Infinity>() < options.g_tol) {
      res.status = LbfgsStatus::kGradientTolerance;
      break;
    }
    Eigen::VectorXd d = two_loop(mem, g);
    double dg0 = d.dot(g);
    if (!(dg0 < 0.0)) {
      mem.clear();
      d = -g;
      dg0 = -g.squaredNorm();
    }
    double step = mem.empty() ? std::min(1.0, 1.0 / d.norm()) : 1.0;

    // Weak Wolfe bracketing (Lewis-Overton).
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    bool accepted = false;
    double f_new = fx;
    for (int trial = 0; trial < options.max_linesearch; ++trial) {
      x_new = x + step * d;
      bool ok = true;
      try {
        f_new = f(x_new, g_new);
        ok = std::isfinite(f_new) && g_new.allFinite();
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNonFiniteCost) throw;
        ok = false;
      }
      ++res.evaluations;
      if (!ok || f_new > fx + options.c1 * step * dg0) {
        hi = step;
      } else if (g_new.dot(d) < options.c2 * dg0) {
        lo = step;
      } else {
        accepted = true;
        break;
      }
      step = std::isinf(hi) ? 2.0 * step : 0.5 * (lo + hi);
    }
    ++res.iterations;
    if (!accepted) {
      res.status = LbfgsStatus::kLineSearchFailed;
      res.degraded = true;
      break;
    }

    Pair p{x_new - x, g_new - g, 0.0};
    const double sy = p.s.dot(p.y);
    if (sy > 1e-12 * p.y.squaredNorm() && sy > 0.0) {
      p.rho = 1.0 / sy;
      mem.push_back(std::move(p));
      if (static_cast<int>(mem.size()) > options.memory) mem.pop_front();
    }
    const double f_old = fx;
    x = x_new;
    g = g_new;
    fx = f_new;
    if ((f_old - fx) / std::max({1.0, std::abs(f_old), std::abs(fx)}) < options.rel_tol) {
      res.status = LbfgsStatus::kRelativeDecrease;
      break;
    }
  }

  res.x = x;
  res.cost = fx;
  res.grad_norm = g.lpNorm<Eigen::Infinity>();
  return res;
}

}  // namespace dgform
