#pragma once

#include "dgform/dvs_state.hpp"
#include "dgform/geometry.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

namespace dgform {

struct LayerAllocation {
  std::vector<int> counts;
  // Set when fewer agents than positive-area layers forced empty layers.
  bool under_allocated = false;
};

// Agents per layer, proportional to layer area (largest remainder).
LayerAllocation allocate_layer_counts(const FormationShape& shape, int n);

struct LloydOptions {
  int max_iterations = 100;
  double tolerance = 1e-3;      // max generator displacement, meters
  double sample_divisor = 200;  // sample spacing = shape diameter / divisor
};

struct LloydResult {
  std::vector<Vec2> generators;
  // Sampled coverage cost (mean squared distance to the nearest generator),
  // one entry per evaluated configuration; non-increasing.
  std::vector<double> cost_history;
  int iterations = 0;
  std::size_t sample_count = 0;
};

std::vector<Vec2> polygon_samples(const Polygon2& poly, double spacing);
double coverage_cost(std::span<const Vec2> samples, std::span<const Vec2> generators);

LloydResult lloyd_partition(const Polygon2& layer, int count, std::uint64_t seed,
                            const LloydOptions& options = {});

struct Assignment {
  std::vector<int> target_of;  // agent index -> target index
  double total_cost = 0.0;     // summed in agent order
};

// Exact O(n^3) minimum-cost perfect matching on a square cost matrix.
Assignment hungarian_assign(const Eigen::MatrixXd& cost);

struct SafetyScale {
  double l_min = 0.0;   // min pairwise target distance
  double l_s = 0.0;     // 2 * h * r_a
  double radius = 0.0;  // new DVS radius
};

// r = r_0 * l_s / l_min for coplanar targets. With layered targets only the
// horizontal part scales, so the factor is the smallest one that lifts every
// pair to at least l_s.
SafetyScale safety_scale(std::span<const Point3> targets, double agent_radius, double margin,
                         double base_radius);

// Horizontal scaling applied by desired_position at radius / base_radius.
std::vector<Point3> scale_targets(std::span<const Point3> targets, double ratio);
double min_pairwise_distance(std::span<const Point3> points);

struct FormationPlan {
  std::vector<Point3> relative_targets;  // at base_radius, DVS-centroid frame
  std::vector<int> target_layer;
  std::vector<int> assignment;           // agent index -> target index
  std::vector<int> layer_counts;
  double l_min = 0.0;
  double l_s = 0.0;
  double safety_radius = 0.0;
  double base_radius = 0.0;
  double assignment_cost = 0.0;
  bool under_allocated = false;
};

struct PaasConfig {
  double agent_radius = 0.15;
  double margin = 1.5;  // h >= 1
  std::uint64_t seed = 0;
  LloydOptions lloyd;
};

struct ShapeFrame {
  Point3 centroid;
  double horizontal_radius;
};

// Area-weighted centroid and the largest horizontal vertex distance from it.
ShapeFrame shape_frame(const FormationShape& shape);

FormationPlan run_paas(const FormationShape& shape, std::span<const Point3> agent_positions,
                       const DvsState& dvs, const PaasConfig& config);

}  // namespace dgform
