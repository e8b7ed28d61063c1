#include "dgform/dvs_search.hpp"

#include "dgform/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <unordered_set>

namespace dgform {

namespace {

constexpr double kScoreFloor = 1e-6;

// Unit-radius lattice: (cos(phi) sin(theta), sin(phi) sin(theta), cos(theta)) * shell.
const std::vector<Eigen::Vector3d>& unit_lattice() {
  static const std::vector<Eigen::Vector3d> lattice = [] {
    std::vector<Eigen::Vector3d> pts;
    pts.reserve(kOccupancyLatticeSize);
    for (int k = 0; k < 8; ++k) {
      const double shell = (k + 0.5) / 8.0;
      for (int j = 0; j < 8; ++j) {
        const double theta = std::numbers::pi * (j + 0.5) / 8.0;
        for (int l = 0; l < 16; ++l) {
          const double phi = 2.0 * std::numbers::pi * l / 16.0;
          pts.emplace_back(shell * std::cos(phi) * std::sin(theta), shell * std::sin(phi) * std::sin(theta),
                           shell * std::cos(theta));
        }
      }
    }
    return pts;
  }();
  return lattice;
}

// Occupied lattice count, abandoning once it exceeds `limit`.
int occupied_count(const OccupancyGrid& grid, const DvsState& dvs, int limit) {
  const double sx = dvs.alpha * dvs.radius;
  const double sy = dvs.radius / dvs.alpha;
  const double sz = dvs.radius;
  const double inv_res = 1.0 / grid.resolution();
  const Point3& o = grid.origin();
  int count = 0;
  for (const auto& u : unit_lattice()) {
    const int ix = static_cast<int>(std::floor((dvs.position.x() + sx * u.x() - o.x()) * inv_res));
    const int iy = static_cast<int>(std::floor((dvs.position.y() + sy * u.y() - o.y()) * inv_res));
    const int iz = static_cast<int>(std::floor((dvs.position.z() + sz * u.z() - o.z()) * inv_res));
    if (grid.occupied(ix, iy, iz) && ++count > limit) return count;
  }
  return count;
}

double alignment_cost(const Point3& now, const Point3& goal, const Point3& end) {
  const Eigen::Vector3d to_goal = goal - now;
  const Eigen::Vector3d step = end - now;
  const double denom = to_goal.norm() * step.norm();
  if (denom == 0.0) return 0.0;
  return 1.0 - std::clamp(to_goal.dot(step) / denom, -1.0, 1.0);
}

std::int64_t voxel_key(const OccupancyGrid& grid, const Point3& p) {
  const auto v = grid.voxel_of(p);
  constexpr std::int64_t kSpan = 1 << 20;
  return ((static_cast<std::int64_t>(v[0]) + kSpan / 2) * kSpan + (v[1] + kSpan / 2)) * kSpan + (v[2] + kSpan / 2);
}

}  // namespace

const std::vector<Eigen::Vector3d>& primitive_directions() {
  static const std::vector<Eigen::Vector3d> dirs = [] {
    std::vector<Eigen::Vector3d> out;
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dz = -1; dz <= 1; ++dz) {
          if (dx == 0 && dy == 0 && dz == 0) continue;
          out.push_back(Eigen::Vector3d(dx, dy, dz).normalized());
        }
      }
    }
    return out;
  }();
  return dirs;
}

double occupancy_ratio(const OccupancyGrid& grid, const DvsState& dvs) {
  return static_cast<double>(occupied_count(grid, dvs, kOccupancyLatticeSize)) / kOccupancyLatticeSize;
}

PrimitiveCosts primitive_costs(const Primitive& prim, const DvsState& current, const Point3& goal,
                               const OccupancyGrid& grid, double r0, double alpha0) {
  const double len = prim.direction.norm();
  if (!(len > 0.0) || !std::isfinite(len)) throw Error(ErrorCode::kInvalidPrimitive, "zero-length direction");
  const Eigen::Vector3d dir = prim.direction / len;
  PrimitiveCosts c;
  c.c_r = (prim.radius - r0) * (prim.radius - r0);
  c.c_alpha = (prim.alpha - alpha0) * (prim.alpha - alpha0);
  const Point3 end = current.position + prim.length * dir;
  c.c_e = alignment_cost(current.position, goal, end);
  for (double f : {0.0, 0.5, 1.0}) {
    const DvsState s{current.position + f * prim.length * dir, prim.radius, prim.alpha};
    c.c_o = std::max(c.c_o, occupancy_ratio(grid, s));
  }
  return c;
}

double score_from_costs(const PrimitiveCosts& c, const ScoreWeights& w) {
  const double denom = w.w_r * c.c_r + w.w_alpha * c.c_alpha + w.w_o * c.c_o + w.w_e * c.c_e;
  return 1.0 / std::max(denom, kScoreFloor);
}

double score_path(const Primitive& prim, const DvsState& current, const Point3& goal, const OccupancyGrid& grid,
                  const ScoreWeights& weights, double r0, double alpha0) {
  if (!(weights.w_r > 0 && weights.w_alpha > 0 && weights.w_o > 0 && weights.w_e > 0)) {
    throw Error(ErrorCode::kInvalidConfig, "score weights must be positive");
  }
  return score_from_costs(primitive_costs(prim, current, goal, grid, r0, alpha0), weights);
}

void ramp_deformation(DvsPath& path, const OccupancyGrid& grid, double rate) {
  auto& wp = path.waypoints;
  if (!(rate > 0.0) || wp.size() < 3) return;
  // One pass pulls alpha toward the deformation ahead of it, the other toward
  // the deformation behind it.
  auto pass = [&](int from, int to, int step) {
    for (int i = from; i != to; i += step) {
      const DvsState& ref = wp[i - step];
      DvsState& cur = wp[i];
      const double ds = (cur.position - ref.position).norm();
      const double d_ref = std::log(ref.alpha), d_cur = std::log(cur.alpha);
      double target = d_cur;
      if (d_ref > 0.0 && d_cur >= 0.0) target = std::max(d_cur, d_ref - rate * ds);
      if (d_ref < 0.0 && d_cur <= 0.0) target = std::min(d_cur, d_ref + rate * ds);
      if (target == d_cur) continue;
      DvsState ramped = cur;
      ramped.alpha = std::exp(target);
      if (occupancy_ratio(grid, ramped) <= occupancy_ratio(grid, cur)) cur = ramped;
    }
  };
  const int n = static_cast<int>(wp.size());
  pass(n - 2, 0, -1);
  pass(1, n - 1, 1);
}

DvsPath search_path(const DvsState& start, const Point3& goal, const OccupancyGrid& grid,
                    const SearchConfig& config) {
  const double length = config.primitive_length > 0.0 ? config.primitive_length : 4.0 * grid.resolution();
  const double r_max = config.r_max > 0.0 ? config.r_max : 2.0 * config.r_safe;
  const ScoreWeights& w = config.weights;
  const int limit = static_cast<int>(std::floor(config.c_o_max * kOccupancyLatticeSize));

  if (occupied_count(grid, start, limit) > limit) {
    throw Error(ErrorCode::kNoPathFound, "start state exceeds the occupancy limit");
  }

  DvsPath path;
  path.waypoints.push_back(start);
  std::unordered_set<std::int64_t> visited{voxel_key(grid, start.position)};
  DvsState cur = start;
  const auto& dirs = primitive_directions();

  struct Candidate {
    int index;
    int dir;
    double radius;
    double alpha;
    double cheap;  // weighted cost without the occupancy term
  };
  std::vector<Candidate> candidates;

  for (int step = 0; step < config.max_steps; ++step) {
    if ((cur.position - goal).norm() < length) {
      const DvsState end{goal, config.rigid ? cur.radius : config.r_safe, 1.0};
      if (occupied_count(grid, end, limit) > limit) {
        throw Error(ErrorCode::kNoPathFound, "goal state exceeds the occupancy limit");
      }
      path.waypoints.push_back(end);
      return path;
    }

    std::vector<double> radii;
    std::vector<double> alphas;
    if (config.rigid) {
      radii = {cur.radius};
      alphas = {cur.alpha};
    } else {
      for (double f : config.radius_factors) radii.push_back(std::clamp(f * cur.radius, config.r_safe, r_max));
      for (double a : config.alpha_candidates) alphas.push_back(std::clamp(a, config.alpha_min, config.alpha_max));
      // clamping can collapse candidates; the first occurrence keeps its index
      auto dedupe = [](std::vector<double>& v) {
        std::vector<double> out;
        for (double x : v) {
          if (std::find(out.begin(), out.end(), x) == out.end()) out.push_back(x);
        }
        v = std::move(out);
      };
      dedupe(radii);
      dedupe(alphas);
    }

    candidates.clear();
    int index = 0;
    for (int d = 0; d < static_cast<int>(dirs.size()); ++d) {
      const Point3 end = cur.position + length * dirs[d];
      const bool revisit = visited.count(voxel_key(grid, end)) > 0;
      for (double r : radii) {
        for (double a : alphas) {
          const int idx = index++;
          if (revisit) continue;
          const double c_r = (r - config.r_safe) * (r - config.r_safe);
          const double c_a = (a - 1.0) * (a - 1.0);
          const double c_e = alignment_cost(cur.position, goal, end);
          candidates.push_back({idx, d, r, a, w.w_r * c_r + w.w_alpha * c_a + w.w_e * c_e});
        }
      }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& x, const Candidate& y) {
      return x.cheap != y.cheap ? x.cheap < y.cheap : x.index < y.index;
    });

    // Branch and bound on the denominator: occupancy can only add to it.
    const Candidate* best = nullptr;
    double best_denom = std::numeric_limits<double>::infinity();
    for (const auto& c : candidates) {
      const double floored_cheap = std::max(c.cheap, kScoreFloor);
      if (floored_cheap > best_denom || (floored_cheap == best_denom && c.index > best->index)) continue;
      int occ_max = 0;
      bool rejected = false;
      for (double f : {1.0, 0.5, 0.0}) {
        const DvsState s{cur.position + f * length * dirs[c.dir], c.radius, c.alpha};
        occ_max = std::max(occ_max, occupied_count(grid, s, limit));
        if (occ_max > limit) {
          rejected = true;
          break;
        }
      }
      if (rejected) continue;
      const double denom =
          std::max(c.cheap + w.w_o * static_cast<double>(occ_max) / kOccupancyLatticeSize, kScoreFloor);
      if (denom < best_denom || (denom == best_denom && c.index < best->index)) {
        best_denom = denom;
        best = &c;
      }
    }
    if (best == nullptr) throw Error(ErrorCode::kNoPathFound, "every primitive is blocked");

    cur = DvsState{cur.position + length * dirs[best->dir], best->radius, best->alpha};
    visited.insert(voxel_key(grid, cur.position));
    path.waypoints.push_back(cur);
    path.scores.push_back(1.0 / best_denom);
  }
  throw Error(ErrorCode::kNoPathFound, "step limit reached before the goal");
}

}  // namespace dgform
