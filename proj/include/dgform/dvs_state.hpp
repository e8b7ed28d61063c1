#pragma once

#include "dgform/geometry.hpp"

#include <Eigen/Core>

namespace dgform {

// Pose of the deformable virtual structure: centroid, circumsphere radius
// and the horizontal area-preserving stretch A = diag(alpha, 1/alpha, 1).
struct DvsState {
  Point3 position = Point3::Zero();
  double radius = 1.0;
  double alpha = 1.0;
};

inline Eigen::Matrix3d affine_matrix(double alpha) {
  return Eigen::Vector3d(alpha, 1.0 / alpha, 1.0).asDiagonal();
}

// Where an agent with relative target p_ic (at base radius r_0) should be.
// Horizontal offsets scale with radius / r_0; the vertical one does not.
inline Point3 desired_position(const DvsState& dvs, const Point3& p_ic, double base_radius) {
  const double rho = dvs.radius / base_radius;
  return dvs.position + Point3(p_ic.x() * dvs.alpha * rho, p_ic.y() * rho / dvs.alpha, p_ic.z());
}

}  // namespace dgform
