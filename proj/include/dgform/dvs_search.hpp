#pragma once

#include "dgform/dvs_state.hpp"
#include "dgform/geometry.hpp"

#include <vector>

namespace dgform {

// One library entry: a straight move with scale and stretch held fixed.
struct Primitive {
  Eigen::Vector3d direction = Eigen::Vector3d::UnitX();
  double length = 0.4;
  double radius = 1.0;
  double alpha = 1.0;
};

struct DvsPath {
  std::vector<DvsState> waypoints;
  std::vector<double> scores;  // one per emitted primitive
};

struct ScoreWeights {
  double w_r = 1.0;
  double w_alpha = 1.0;
  double w_o = 10.0;
  double w_e = 2.0;
};

struct SearchConfig {
  ScoreWeights weights;
  double alpha_min = 0.5;
  double alpha_max = 2.0;
  double r_safe = 1.0;
  double r_max = 0.0;             // 0 -> 2 * r_safe
  double primitive_length = 0.0;  // 0 -> 4 * grid resolution
  double c_o_max = 0.2;
  int max_steps = 500;
  std::vector<double> radius_factors{0.8, 0.9, 1.0, 1.1, 1.2};
  std::vector<double> alpha_candidates{0.5, 0.7, 1.0, 1.4, 2.0};
  // Rigid virtual structure: radius pinned to r_safe and alpha to 1.
  bool rigid = false;
  // Max |d ln(alpha) / ds| per meter used by ramp_deformation in the
  // guidance loop; search_path itself does not apply it. 0 disables.
  double alpha_ramp = 0.1;
};

// Number of lattice points used by occupancy_ratio (8 radial x 8 polar x 16 azimuthal).
inline constexpr int kOccupancyLatticeSize = 8 * 8 * 16;

// Fraction of the deformed-ellipsoid lattice that falls in occupied voxels.
double occupancy_ratio(const OccupancyGrid& grid, const DvsState& dvs);

// Primitive cost terms before weighting.
struct PrimitiveCosts {
  double c_r = 0.0;
  double c_alpha = 0.0;
  double c_o = 0.0;
  double c_e = 0.0;  // 1 - cos(angle to goal)
};

PrimitiveCosts primitive_costs(const Primitive& prim, const DvsState& current, const Point3& goal,
                               const OccupancyGrid& grid, double r0, double alpha0);
double score_from_costs(const PrimitiveCosts& costs, const ScoreWeights& weights);
double score_path(const Primitive& prim, const DvsState& current, const Point3& goal, const OccupancyGrid& grid,
                  const ScoreWeights& weights, double r0, double alpha0);

// Greedy receding primitive selection from start to goal.
DvsPath search_path(const DvsState& start, const Point3& goal, const OccupancyGrid& grid,
                    const SearchConfig& config);

// Spread abrupt stretch changes of a greedy path over the neighbouring
// waypoints so |d ln(alpha) / ds| <= rate. Only moves alpha away from 1 on
// the side it already leans to, never touches the end points, and keeps a
// ramped state only if its occupancy does not exceed the original's.
void ramp_deformation(DvsPath& path, const OccupancyGrid& grid, double rate);

// The 26 lattice-neighbour unit directions in a fixed order.
const std::vector<Eigen::Vector3d>& primitive_directions();

}  // namespace dgform
