#include "dgform/paas.hpp"

#include "dgform/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace dgform {

namespace {

// Uniform bucket grid over generator positions for nearest-generator queries.
// Ties resolve to the lowest generator index, same as a linear scan.
class GeneratorIndex {
 public:
  GeneratorIndex(std::span<const Vec2> generators, const Vec2& lo, const Vec2& hi)
      : generators_(generators), lo_(lo) {
    const Vec2 extent = (hi - lo).cwiseMax(1e-12);
    const double cell = std::sqrt(extent.x() * extent.y() / std::max<std::size_t>(1, generators.size()));
    cell_ = std::max(cell, 1e-9);
    nx_ = std::max(1, static_cast<int>(std::ceil(extent.x() / cell_)));
    ny_ = std::max(1, static_cast<int>(std::ceil(extent.y() / cell_)));
    buckets_.assign(static_cast<std::size_t>(nx_) * ny_, {});
    for (std::size_t i = 0; i < generators.size(); ++i) {
      const auto [cx, cy] = cell_of(generators[i]);
      buckets_[static_cast<std::size_t>(cx) * ny_ + cy].push_back(static_cast<int>(i));
    }
  }

  // Returns (index, squared distance).
  std::pair<int, double> nearest(const Vec2& q) const {
    const auto [cx, cy] = cell_of(q);
    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    const int max_ring = std::max(nx_, ny_);
    for (int ring = 0; ring <= max_ring; ++ring) {
      for (int ix = cx - ring; ix <= cx + ring; ++ix) {
        if (ix < 0 || ix >= nx_) continue;
        const bool edge_col = (ix == cx - ring || ix == cx + ring);
        for (int iy = cy - ring; iy <= cy + ring; ++iy) {
          if (iy < 0 || iy >= ny_) continue;
          if (!edge_col && iy != cy - ring && iy != cy + ring) continue;
          for (int g : buckets_[static_cast<std::size_t>(ix) * ny_ + iy]) {
            const double d2 = (generators_[g] - q).squaredNorm();
            if (d2 < best_d2 || (d2 == best_d2 && g < best)) {
              best_d2 = d2;
              best = g;
            }
          }
        }
      }
      // Unscanned generators are at least ring * cell away.
      if (best >= 0) {
        const double bound = ring * cell_;
        if (best_d2 < bound * bound) break;
      }
    }
    return {best, best_d2};
  }

 private:
  std::pair<int, int> cell_of(const Vec2& p) const {
    const int cx = std::clamp(static_cast<int>(std::floor((p.x() - lo_.x()) / cell_)), 0, nx_ - 1);
    const int cy = std::clamp(static_cast<int>(std::floor((p.y() - lo_.y()) / cell_)), 0, ny_ - 1);
    return {cx, cy};
  }

  std::span<const Vec2> generators_;
  Vec2 lo_;
  double cell_ = 1.0;
  int nx_ = 1;
  int ny_ = 1;
  std::vector<std::vector<int>> buckets_;
};

std::pair<Vec2, Vec2> bounding_box(const Polygon2& poly) {
  Vec2 lo = poly.vertices.front(), hi = poly.vertices.front();
  for (const auto& v : poly.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  return {lo, hi};
}

std::vector<Vec2> grid_seeds(const Polygon2& poly, int count) {
  const auto [lo, hi] = bounding_box(poly);
  double spacing = std::sqrt(polygon_area(poly) / count);
  std::vector<Vec2> inside;
  for (int attempt = 0; attempt < 200; ++attempt) {
    inside.clear();
    const int nx = static_cast<int>(std::floor((hi.x() - lo.x()) / spacing)) + 1;
    const int ny = static_cast<int>(std::floor((hi.y() - lo.y()) / spacing)) + 1;
    // center the lattice on the bounding box
    const double ox = 0.5 * (lo.x() + hi.x()) - 0.5 * (nx - 1) * spacing;
    const double oy = 0.5 * (lo.y() + hi.y()) - 0.5 * (ny - 1) * spacing;
    for (int iy = 0; iy < ny; ++iy) {
      for (int ix = 0; ix < nx; ++ix) {
        const Vec2 p(ox + ix * spacing, oy + iy * spacing);
        if (point_in_polygon(p, poly)) inside.push_back(p);
      }
    }
    if (static_cast<int>(inside.size()) >= count) break;
    spacing *= 0.9;
  }
  if (static_cast<int>(inside.size()) < count) {
    throw Error(ErrorCode::kInvalidConfig, "could not seed enough generators inside the layer");
  }
  std::vector<Vec2> seeds;
  seeds.reserve(count);
  const std::size_t m = inside.size();
  for (int k = 0; k < count; ++k) seeds.push_back(inside[(static_cast<std::size_t>(k) * m) / count]);
  return seeds;
}

}  // namespace

LayerAllocation allocate_layer_counts(const FormationShape& shape, int n) {
  if (n < 1) throw Error(ErrorCode::kInvalidConfig, "agent count must be >= 1");
  if (shape.layers.empty()) throw Error(ErrorCode::kInvalidShape, "formation shape has no layers");
  const std::size_t k = shape.layers.size();
  std::vector<double> areas(k);
  for (std::size_t m = 0; m < k; ++m) areas[m] = polygon_area(shape.layers[m]);
  const double total = std::accumulate(areas.begin(), areas.end(), 0.0);

  LayerAllocation out;
  out.counts.assign(k, 0);
  std::vector<double> remainder(k);
  int assigned = 0;
  for (std::size_t m = 0; m < k; ++m) {
    const double quota = n * areas[m] / total;
    out.counts[m] = static_cast<int>(std::floor(quota));
    remainder[m] = quota - out.counts[m];
    assigned += out.counts[m];
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) out.counts[order[i % k]] += 1;

  if (static_cast<std::size_t>(n) >= k) {
    // every layer keeps at least one agent; borrow from the fullest layer
    for (std::size_t m = 0; m < k; ++m) {
      if (out.counts[m] > 0) continue;
      const auto donor = std::max_element(out.counts.begin(), out.counts.end()) - out.counts.begin();
      out.counts[donor] -= 1;
      out.counts[m] = 1;
    }
  } else {
    out.under_allocated = true;
  }
  return out;
}

std::vector<Vec2> polygon_samples(const Polygon2& poly, double spacing) {
  if (!(spacing > 0.0)) throw Error(ErrorCode::kInvalidConfig, "sample spacing must be positive");
  const auto [lo, hi] = bounding_box(poly);
  std::vector<Vec2> samples;
  const int nx = static_cast<int>(std::ceil((hi.x() - lo.x()) / spacing));
  const int ny = static_cast<int>(std::ceil((hi.y() - lo.y()) / spacing));
  samples.reserve(static_cast<std::size_t>(nx) * ny);
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      const Vec2 p(lo.x() + (ix + 0.5) * spacing, lo.y() + (iy + 0.5) * spacing);
      if (point_in_polygon(p, poly)) samples.push_back(p);
    }
  }
  return samples;
}

double coverage_cost(std::span<const Vec2> samples, std::span<const Vec2> generators) {
  if (samples.empty() || generators.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& q : samples) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& g : generators) best = std::min(best, (q - g).squaredNorm());
    sum += best;
  }
  return sum / samples.size();
}

LloydResult lloyd_partition(const Polygon2& layer, int count, std::uint64_t seed, const LloydOptions& options) {
  if (count < 1) throw Error(ErrorCode::kInvalidConfig, "generator count must be >= 1");
  polygon_area(layer);
  const double spacing = polygon_diameter(layer) / options.sample_divisor;
  const std::vector<Vec2> samples = polygon_samples(layer, spacing);
  if (static_cast<std::size_t>(count) > samples.size()) {
    throw Error(ErrorCode::kInvalidConfig, "more generators than layer samples");
  }

  LloydResult result;
  result.sample_count = samples.size();
  if (count == 1) {
    Vec2 mean = Vec2::Zero();
    for (const auto& q : samples) mean += q;
    mean /= static_cast<double>(samples.size());
    result.generators = {mean};
    result.cost_history = {coverage_cost(samples, result.generators)};
    return result;
  }

  std::vector<Vec2> gen = grid_seeds(layer, count);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-1e-6, 1e-6);
  for (auto& g : gen) {
    const Vec2 moved = g + Vec2(jitter(rng), jitter(rng));
    if (point_in_polygon(moved, layer)) g = moved;
  }

  const auto [lo, hi] = bounding_box(layer);
  std::vector<int> owner(samples.size());
  std::vector<double> dist2(samples.size());
  std::vector<Vec2> sums(count);
  std::vector<int> members(count);

  auto assign = [&]() {
    GeneratorIndex index(gen, lo, hi);
    double total = 0.0;
    for (std::size_t s = 0; s < samples.size(); ++s) {
      const auto [g, d2] = index.nearest(samples[s]);
      owner[s] = g;
      dist2[s] = d2;
      total += d2;
    }
    return total / samples.size();
  };

  result.cost_history.push_back(assign());
  for (int it = 0; it < options.max_iterations; ++it) {
    std::fill(sums.begin(), sums.end(), Vec2::Zero());
    std::fill(members.begin(), members.end(), 0);
    for (std::size_t s = 0; s < samples.size(); ++s) {
      sums[owner[s]] += samples[s];
      members[owner[s]] += 1;
    }
    double max_move = 0.0;
    for (int g = 0; g < count; ++g) {
      Vec2 next;
      if (members[g] == 0) {
        // An idle generator can go anywhere without raising the cost; send it
        // to the worst-covered sample.
        const auto worst = std::max_element(dist2.begin(), dist2.end()) - dist2.begin();
        next = samples[worst];
        dist2[worst] = 0.0;
      } else {
        const Vec2 centroid = sums[g] / members[g];
        next = centroid;
        if (!point_in_polygon(centroid, layer)) {
          // Non-convex layers: the closest in-cell sample to the centroid, or
          // stay put if that is no closer.
          double best = std::numeric_limits<double>::infinity();
          for (std::size_t s = 0; s < samples.size(); ++s) {
            if (owner[s] != g) continue;
            const double d = (samples[s] - centroid).squaredNorm();
            if (d < best) {
              best = d;
              next = samples[s];
            }
          }
          if ((gen[g] - centroid).squaredNorm() <= best) next = gen[g];
        }
      }
      max_move = std::max(max_move, (next - gen[g]).norm());
      gen[g] = next;
    }
    result.iterations = it + 1;
    result.cost_history.push_back(assign());
    if (max_move < options.tolerance) break;
  }
  result.generators = std::move(gen);
  return result;
}

Assignment hungarian_assign(const Eigen::MatrixXd& cost) {
  if (cost.rows() != cost.cols()) throw Error(ErrorCode::kInvalidInput, "cost matrix must be square");
  const int n = static_cast<int>(cost.rows());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (!std::isfinite(cost(i, j)) || cost(i, j) < 0.0) {
        throw Error(ErrorCode::kInvalidInput, "cost entries must be finite and non-negative");
      }
    }
  }
  Assignment out;
  if (n == 0) return out;

  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is the virtual start column.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> row_of(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    row_of[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = row_of[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[row_of[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (row_of[j0] != 0);
    do {
      const int j1 = way[j0];
      row_of[j0] = row_of[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  out.target_of.assign(n, -1);
  for (int j = 1; j <= n; ++j) out.target_of[row_of[j] - 1] = j - 1;
  for (int i = 0; i < n; ++i) out.total_cost += cost(i, out.target_of[i]);
  return out;
}

double min_pairwise_distance(std::span<const Point3> points) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = i + 1; j < points.size(); ++j) best = std::min(best, (points[i] - points[j]).norm());
  }
  return best;
}

std::vector<Point3> scale_targets(std::span<const Point3> targets, double ratio) {
  std::vector<Point3> out;
  out.reserve(targets.size());
  for (const auto& p : targets) out.emplace_back(p.x() * ratio, p.y() * ratio, p.z());
  return out;
}

SafetyScale safety_scale(std::span<const Point3> targets, double agent_radius, double margin,
                         double base_radius) {
  if (targets.size() < 2) throw Error(ErrorCode::kInvalidInput, "safety scaling needs at least two targets");
  if (!(agent_radius > 0.0)) throw Error(ErrorCode::kInvalidConfig, "agent radius must be positive");
  if (!(margin >= 1.0)) throw Error(ErrorCode::kInvalidConfig, "safety margin h must be >= 1");
  SafetyScale out;
  out.l_s = 2.0 * margin * agent_radius;
  out.l_min = min_pairwise_distance(targets);
  if (!(out.l_min > 0.0)) throw Error(ErrorCode::kDegenerateFormation, "duplicate formation targets");

  double factor = 0.0;
  bool coplanar = true;
  for (std::size_t i = 1; i < targets.size() && coplanar; ++i) coplanar = targets[i].z() == targets[0].z();
  if (coplanar) {
    factor = out.l_s / out.l_min;
  } else {
    for (std::size_t i = 0; i < targets.size(); ++i) {
      for (std::size_t j = i + 1; j < targets.size(); ++j) {
        const Point3 d = targets[i] - targets[j];
        const double h = d.head<2>().norm();
        const double need = out.l_s * out.l_s - d.z() * d.z();
        if (need <= 0.0) continue;
        if (h == 0.0) throw Error(ErrorCode::kDegenerateFormation, "stacked targets closer than l_s");
        factor = std::max(factor, std::sqrt(need) / h);
      }
    }
    if (factor == 0.0) factor = out.l_s / out.l_min;
  }
  out.radius = base_radius * factor;
  return out;
}

ShapeFrame shape_frame(const FormationShape& shape) {
  Point3 c = Point3::Zero();
  double total = 0.0;
  for (const auto& layer : shape.layers) {
    const double a = polygon_area(layer);
    const Vec2 lc = polygon_centroid(layer);
    c += a * Point3(lc.x(), lc.y(), layer.z);
    total += a;
  }
  c /= total;
  double radius = 0.0;
  for (const auto& layer : shape.layers) {
    for (const auto& v : layer.vertices) radius = std::max(radius, (v - c.head<2>()).norm());
  }
  return {c, radius};
}

FormationPlan run_paas(const FormationShape& shape, std::span<const Point3> agent_positions,
                       const DvsState& dvs, const PaasConfig& config) {
  shape.validate();
  const int n = static_cast<int>(agent_positions.size());
  if (n < 1) throw Error(ErrorCode::kInvalidConfig, "PAAS needs at least one agent");
  if (!(dvs.radius > 0.0)) throw Error(ErrorCode::kInvalidState, "DVS radius must be positive");

  const LayerAllocation alloc = allocate_layer_counts(shape, n);
  const ShapeFrame frame = shape_frame(shape);
  const double to_dvs = dvs.radius / frame.horizontal_radius;

  FormationPlan plan;
  plan.layer_counts = alloc.counts;
  plan.under_allocated = alloc.under_allocated;
  plan.base_radius = dvs.radius;
  for (std::size_t m = 0; m < shape.layers.size(); ++m) {
    if (alloc.counts[m] == 0) continue;
    const auto lloyd = lloyd_partition(shape.layers[m], alloc.counts[m], config.seed + m, config.lloyd);
    for (const auto& g : lloyd.generators) {
      plan.relative_targets.emplace_back((g.x() - frame.centroid.x()) * to_dvs, (g.y() - frame.centroid.y()) * to_dvs,
                                         shape.layers[m].z - frame.centroid.z());
      plan.target_layer.push_back(static_cast<int>(m));
    }
  }

  if (n >= 2) {
    const SafetyScale s = safety_scale(plan.relative_targets, config.agent_radius, config.margin, dvs.radius);
    plan.l_min = s.l_min;
    plan.l_s = s.l_s;
    plan.safety_radius = s.radius;
  } else {
    plan.l_s = 2.0 * config.margin * config.agent_radius;
    plan.l_min = 0.0;
    plan.safety_radius = dvs.radius;
  }

  Eigen::MatrixXd cost(n, n);
  for (int j = 0; j < n; ++j) {
    const Point3 world = desired_position(dvs, plan.relative_targets[j], plan.base_radius);
    for (int i = 0; i < n; ++i) cost(i, j) = (world - agent_positions[i]).squaredNorm();
  }
  const Assignment a = hungarian_assign(cost);
  plan.assignment = a.target_of;
  plan.assignment_cost = a.total_cost;
  return plan;
}

}  // namespace dgform
