#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace dgform {

using Vec2 = Eigen::Vector2d;
using Point3 = Eigen::Vector3d;

// Planar layer of a formation shape. Vertices are stored counter-clockwise;
// use make() to validate and normalize arbitrary input.
struct Polygon2 {
  std::vector<Vec2> vertices;
  double z = 0.0;

  static Polygon2 make(std::vector<Vec2> vertices, double z);
};

double polygon_area(const Polygon2& poly);
Vec2 polygon_centroid(const Polygon2& poly);
// Largest vertex-to-vertex distance.
double polygon_diameter(const Polygon2& poly);
// Even-odd rule; an edge owns its lower endpoint but not its upper one.
bool point_in_polygon(const Vec2& p, const Polygon2& poly);
bool polygon_is_simple(std::span<const Vec2> vertices);

struct FormationShape {
  std::vector<Polygon2> layers;
  double dz = 0.0;

  // Throws kInvalidShape unless layers are ordered with constant spacing dz.
  void validate() const;
};

struct Box {
  Point3 min;
  Point3 max;
};

struct Bounds {
  Point3 min;
  Point3 max;
};

// Signed distance from p to the box surface, negative inside.
double box_signed_distance(const Box& box, const Point3& p);

class OccupancyGrid {
 public:
  OccupancyGrid() = default;
  OccupancyGrid(Point3 origin, double resolution, std::array<int, 3> dims);

  const Point3& origin() const { return origin_; }
  double resolution() const { return resolution_; }
  const std::array<int, 3>& dims() const { return dims_; }
  std::size_t size() const { return cells_.size(); }

  std::size_t index(int ix, int iy, int iz) const {
    return (static_cast<std::size_t>(ix) * dims_[1] + iy) * dims_[2] + iz;
  }
  bool in_bounds(int ix, int iy, int iz) const {
    return ix >= 0 && iy >= 0 && iz >= 0 && ix < dims_[0] && iy < dims_[1] && iz < dims_[2];
  }
  bool occupied(int ix, int iy, int iz) const {
    return !in_bounds(ix, iy, iz) || cells_[index(ix, iy, iz)] != 0;
  }
  void set(int ix, int iy, int iz, bool occ) { cells_[index(ix, iy, iz)] = occ ? 1 : 0; }

  // Queries outside the lattice report occupied.
  bool occupied_at(const Point3& p) const;
  Point3 voxel_center(int ix, int iy, int iz) const;
  std::array<int, 3> voxel_of(const Point3& p) const;

  const std::vector<std::uint8_t>& cells() const { return cells_; }

 private:
  Point3 origin_ = Point3::Zero();
  double resolution_ = 1.0;
  std::array<int, 3> dims_{1, 1, 1};
  std::vector<std::uint8_t> cells_ = std::vector<std::uint8_t>(1, 0);
};

// Voxel is occupied iff its center lies in a box; the outermost voxel shell is
// always occupied.
OccupancyGrid build_grid(std::span<const Box> boxes, const Bounds& bounds, double resolution);

struct EsdfSample {
  double distance;
  Eigen::Vector3d gradient;
};

class Esdf {
 public:
  Esdf() = default;
  Esdf(Point3 origin, double resolution, std::array<int, 3> dims, std::vector<double> distances);

  const Point3& origin() const { return origin_; }
  double resolution() const { return resolution_; }
  const std::array<int, 3>& dims() const { return dims_; }
  const std::vector<double>& distances() const { return distances_; }

  double at(int ix, int iy, int iz) const {
    return distances_[(static_cast<std::size_t>(ix) * dims_[1] + iy) * dims_[2] + iz];
  }

  // Trilinear interpolation over voxel centers with the exact derivative of
  // the interpolant. Points outside the lattice return kOutsideDistance.
  EsdfSample query(const Point3& p) const;

  static constexpr double kOutsideDistance = -1.0e3;

 private:
  Point3 origin_ = Point3::Zero();
  double resolution_ = 1.0;
  std::array<int, 3> dims_{1, 1, 1};
  std::vector<double> distances_ = std::vector<double>(1, 0.0);
};

// Exact Euclidean transform over voxel centers. Free voxels hold the distance
// to the nearest occupied center (the ring just outside the lattice counts as
// occupied). Occupied voxels hold -(distance to nearest free center - res), so
// boundary-occupied voxels read 0 and the field stays 1-Lipschitz.
Esdf esdf_from_grid(const OccupancyGrid& grid);

// Flat little-endian dump: origin (3 x f64), resolution (f64), dims (3 x i64),
// then row-major cells (u8 for grids, f64 for distance fields).
void dump_binary(const OccupancyGrid& grid, std::ostream& out);
void dump_binary(const Esdf& esdf, std::ostream& out);

}  // namespace dgform
