#include "dgform/geometry.hpp"

#include "dgform/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <ostream>

namespace dgform {

namespace {

double signed_area(std::span<const Vec2> v) {
  double a = 0.0;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    a += v[j].x() * v[i].y() - v[i].x() * v[j].y();
  }
  return 0.5 * a;
}

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

bool on_segment(const Vec2& p, const Vec2& a, const Vec2& b) {
  return std::min(a.x(), b.x()) <= p.x() && p.x() <= std::max(a.x(), b.x()) &&
         std::min(a.y(), b.y()) <= p.y() && p.y() <= std::max(a.y(), b.y());
}

bool segments_intersect(const Vec2& p1, const Vec2& p2, const Vec2& q1, const Vec2& q2) {
  const double d1 = cross(q1, q2, p1);
  const double d2 = cross(q1, q2, p2);
  const double d3 = cross(p1, p2, q1);
  const double d4 = cross(p1, p2, q2);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) {
    return true;
  }
  return (d1 == 0 && on_segment(p1, q1, q2)) || (d2 == 0 && on_segment(p2, q1, q2)) ||
         (d3 == 0 && on_segment(q1, p1, p2)) || (d4 == 0 && on_segment(q2, p1, p2));
}

template <typename T>
void write_le(std::ostream& out, T value) {
  auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  out.write(bytes.data(), bytes.size());
}

void write_header(std::ostream& out, const Point3& origin, double res, const std::array<int, 3>& dims) {
  for (int i = 0; i < 3; ++i) write_le(out, origin[i]);
  write_le(out, res);
  for (int i = 0; i < 3; ++i) write_le(out, static_cast<std::int64_t>(dims[i]));
}

constexpr double kInf = 1.0e20;

// Squared distance transform of a sampled function along one line
// (lower envelope of parabolas).
void edt_1d(const double* f, int n, double* d, std::vector<int>& v, std::vector<double>& z) {
  v.resize(n);
  z.resize(n + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  auto intersect = [&](int q, int p) {
    return ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * q - 2.0 * p);
  };
  for (int q = 1; q < n; ++q) {
    double s = intersect(q, v[k]);
    while (s <= z[k]) {
      --k;
      s = intersect(q, v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

// Squared voxel distance from every voxel to the nearest voxel where
// target(idx) holds; exterior_is_target adds the ring outside the lattice.
std::vector<double> squared_edt(const std::array<int, 3>& dims, const std::vector<std::uint8_t>& target,
                                bool exterior_is_target) {
  const int nx = dims[0], ny = dims[1], nz = dims[2];
  const std::size_t total = static_cast<std::size_t>(nx) * ny * nz;
  std::vector<double> g(total);
  for (std::size_t i = 0; i < total; ++i) g[i] = target[i] ? 0.0 : kInf;

  const int nmax = std::max({nx, ny, nz});
  std::vector<double> f(nmax), d(nmax), zbuf;
  std::vector<int> vbuf;

  // z lines (contiguous)
  for (int ix = 0; ix < nx; ++ix) {
    for (int iy = 0; iy < ny; ++iy) {
      double* line = &g[(static_cast<std::size_t>(ix) * ny + iy) * nz];
      std::copy(line, line + nz, f.begin());
      edt_1d(f.data(), nz, d.data(), vbuf, zbuf);
      std::copy(d.begin(), d.begin() + nz, line);
    }
  }
  // y lines
  for (int ix = 0; ix < nx; ++ix) {
    for (int iz = 0; iz < nz; ++iz) {
      for (int iy = 0; iy < ny; ++iy) f[iy] = g[(static_cast<std::size_t>(ix) * ny + iy) * nz + iz];
      edt_1d(f.data(), ny, d.data(), vbuf, zbuf);
      for (int iy = 0; iy < ny; ++iy) g[(static_cast<std::size_t>(ix) * ny + iy) * nz + iz] = d[iy];
    }
  }
  // x lines
  for (int iy = 0; iy < ny; ++iy) {
    for (int iz = 0; iz < nz; ++iz) {
      for (int ix = 0; ix < nx; ++ix) f[ix] = g[(static_cast<std::size_t>(ix) * ny + iy) * nz + iz];
      edt_1d(f.data(), nx, d.data(), vbuf, zbuf);
      for (int ix = 0; ix < nx; ++ix) g[(static_cast<std::size_t>(ix) * ny + iy) * nz + iz] = d[ix];
    }
  }

  if (exterior_is_target) {
    for (int ix = 0; ix < nx; ++ix) {
      for (int iy = 0; iy < ny; ++iy) {
        for (int iz = 0; iz < nz; ++iz) {
          const int e = std::min({ix + 1, nx - ix, iy + 1, ny - iy, iz + 1, nz - iz});
          double& cell = g[(static_cast<std::size_t>(ix) * ny + iy) * nz + iz];
          cell = std::min(cell, double(e) * e);
        }
      }
    }
  }
  return g;
}

struct AxisInterp {
  int i0;
  int i1;
  double t;
  double dt;  // d t / d coordinate
};

AxisInterp axis_interp(double u, int n, double res) {
  if (n == 1) return {0, 0, 0.0, 0.0};
  const int i0 = std::clamp(static_cast<int>(std::floor(u)), 0, n - 2);
  double t = u - i0;
  double dt = 1.0 / res;
  if (t < 0.0) {
    t = 0.0;
    dt = 0.0;
  } else if (t > 1.0) {
    t = 1.0;
    dt = 0.0;
  }
  return {i0, i0 + 1, t, dt};
}

}  // namespace

Polygon2 Polygon2::make(std::vector<Vec2> vertices, double z) {
  if (vertices.size() < 3) throw Error(ErrorCode::kInvalidShape, "polygon needs at least 3 vertices");
  for (const auto& v : vertices) {
    if (!v.allFinite()) throw Error(ErrorCode::kInvalidShape, "polygon vertex is not finite");
  }
  if (!std::isfinite(z)) throw Error(ErrorCode::kInvalidShape, "polygon z is not finite");
  const double a = signed_area(vertices);
  if (!(std::abs(a) > 0.0)) throw Error(ErrorCode::kInvalidShape, "polygon has zero area");
  if (!polygon_is_simple(vertices)) throw Error(ErrorCode::kInvalidShape, "polygon self-intersects");
  if (a < 0.0) std::reverse(vertices.begin(), vertices.end());
  return Polygon2{std::move(vertices), z};
}

bool polygon_is_simple(std::span<const Vec2> v) {
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a1 = v[i];
    const Vec2& a2 = v[(i + 1) % n];
    for (std::size_t j = i + 1; j < n; ++j) {
      // adjacent edges share a vertex by construction
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (segments_intersect(a1, a2, v[j], v[(j + 1) % n])) return false;
    }
  }
  return true;
}

double polygon_area(const Polygon2& poly) {
  if (poly.vertices.size() < 3) throw Error(ErrorCode::kInvalidShape, "polygon needs at least 3 vertices");
  const double a = std::abs(signed_area(poly.vertices));
  if (!(a > 0.0)) throw Error(ErrorCode::kInvalidShape, "polygon has zero area");
  return a;
}

Vec2 polygon_centroid(const Polygon2& poly) {
  const auto& v = poly.vertices;
  double a = 0.0;
  Vec2 c = Vec2::Zero();
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    const double w = v[j].x() * v[i].y() - v[i].x() * v[j].y();
    a += w;
    c += w * (v[j] + v[i]);
  }
  if (a == 0.0) throw Error(ErrorCode::kInvalidShape, "polygon has zero area");
  return c / (3.0 * a);
}

double polygon_diameter(const Polygon2& poly) {
  double d = 0.0;
  for (std::size_t i = 0; i < poly.vertices.size(); ++i) {
    for (std::size_t j = i + 1; j < poly.vertices.size(); ++j) {
      d = std::max(d, (poly.vertices[i] - poly.vertices[j]).norm());
    }
  }
  return d;
}

bool point_in_polygon(const Vec2& p, const Polygon2& poly) {
  const auto& v = poly.vertices;
  bool inside = false;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    const Vec2& a = v[i];
    const Vec2& b = v[j];
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      const double x_cross = a.x() + (p.y() - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
      if (p.x() < x_cross) inside = !inside;
    }
  }
  return inside;
}

void FormationShape::validate() const {
  if (layers.empty()) throw Error(ErrorCode::kInvalidShape, "formation shape has no layers");
  for (const auto& layer : layers) polygon_area(layer);
  if (layers.size() > 1) {
    if (!(dz > 0.0)) throw Error(ErrorCode::kInvalidShape, "layer spacing dz must be positive");
    for (std::size_t i = 1; i < layers.size(); ++i) {
      const double step = layers[i].z - layers[i - 1].z;
      if (std::abs(step - dz) > 1e-9 * std::max(1.0, dz)) {
        throw Error(ErrorCode::kInvalidShape, "layer z values must increase by exactly dz");
      }
    }
  }
}

double box_signed_distance(const Box& box, const Point3& p) {
  const Point3 center = 0.5 * (box.min + box.max);
  const Point3 half = 0.5 * (box.max - box.min);
  const Point3 q = (p - center).cwiseAbs() - half;
  const double outside = q.cwiseMax(0.0).norm();
  const double inside = std::min(q.maxCoeff(), 0.0);
  return outside + inside;
}

OccupancyGrid::OccupancyGrid(Point3 origin, double resolution, std::array<int, 3> dims)
    : origin_(std::move(origin)), resolution_(resolution), dims_(dims) {
  if (!(resolution > 0.0) || !std::isfinite(resolution)) {
    throw Error(ErrorCode::kInvalidConfig, "grid resolution must be positive");
  }
  for (int d : dims) {
    if (d < 1) throw Error(ErrorCode::kInvalidConfig, "grid dims must be >= 1");
  }
  cells_.assign(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2], 0);
}

std::array<int, 3> OccupancyGrid::voxel_of(const Point3& p) const {
  std::array<int, 3> v{};
  for (int i = 0; i < 3; ++i) v[i] = static_cast<int>(std::floor((p[i] - origin_[i]) / resolution_));
  return v;
}

bool OccupancyGrid::occupied_at(const Point3& p) const {
  const auto v = voxel_of(p);
  return occupied(v[0], v[1], v[2]);
}

Point3 OccupancyGrid::voxel_center(int ix, int iy, int iz) const {
  return origin_ + resolution_ * Point3(ix + 0.5, iy + 0.5, iz + 0.5);
}

OccupancyGrid build_grid(std::span<const Box> boxes, const Bounds& bounds, double resolution) {
  if (!(resolution > 0.0)) throw Error(ErrorCode::kInvalidConfig, "grid resolution must be positive");
  const Point3 extent = bounds.max - bounds.min;
  if (!(extent.minCoeff() > 0.0)) throw Error(ErrorCode::kInvalidConfig, "grid bounds have zero volume");
  std::array<int, 3> dims{};
  for (int i = 0; i < 3; ++i) {
    // tolerate bounds that are an exact multiple of the resolution
    dims[i] = std::max(1, static_cast<int>(std::ceil(extent[i] / resolution - 1e-9)));
  }
  OccupancyGrid grid(bounds.min, resolution, dims);
  for (int ix = 0; ix < dims[0]; ++ix) {
    for (int iy = 0; iy < dims[1]; ++iy) {
      for (int iz = 0; iz < dims[2]; ++iz) {
        const bool shell = ix == 0 || iy == 0 || iz == 0 || ix == dims[0] - 1 || iy == dims[1] - 1 ||
                           iz == dims[2] - 1;
        bool occ = shell;
        if (!occ) {
          const Point3 c = grid.voxel_center(ix, iy, iz);
          for (const auto& b : boxes) {
            if ((c.array() >= b.min.array()).all() && (c.array() <= b.max.array()).all()) {
              occ = true;
              break;
            }
          }
        }
        grid.set(ix, iy, iz, occ);
      }
    }
  }
  return grid;
}

Esdf::Esdf(Point3 origin, double resolution, std::array<int, 3> dims, std::vector<double> distances)
    : origin_(std::move(origin)), resolution_(resolution), dims_(dims), distances_(std::move(distances)) {}

EsdfSample Esdf::query(const Point3& p) const {
  const Point3 rel = (p - origin_) / resolution_;
  for (int i = 0; i < 3; ++i) {
    if (!(rel[i] >= 0.0 && rel[i] <= dims_[i])) return {kOutsideDistance, Eigen::Vector3d::Zero()};
  }
  const AxisInterp ax = axis_interp(rel.x() - 0.5, dims_[0], resolution_);
  const AxisInterp ay = axis_interp(rel.y() - 0.5, dims_[1], resolution_);
  const AxisInterp az = axis_interp(rel.z() - 0.5, dims_[2], resolution_);

  const double c000 = at(ax.i0, ay.i0, az.i0), c100 = at(ax.i1, ay.i0, az.i0);
  const double c010 = at(ax.i0, ay.i1, az.i0), c110 = at(ax.i1, ay.i1, az.i0);
  const double c001 = at(ax.i0, ay.i0, az.i1), c101 = at(ax.i1, ay.i0, az.i1);
  const double c011 = at(ax.i0, ay.i1, az.i1), c111 = at(ax.i1, ay.i1, az.i1);

  const double tx = ax.t, ty = ay.t, tz = az.t;
  const double c00 = c000 + tx * (c100 - c000);
  const double c10 = c010 + tx * (c110 - c010);
  const double c01 = c001 + tx * (c101 - c001);
  const double c11 = c011 + tx * (c111 - c011);
  const double c0 = c00 + ty * (c10 - c00);
  const double c1 = c01 + ty * (c11 - c01);
  const double value = c0 + tz * (c1 - c0);

  Eigen::Vector3d grad;
  {
    const double d00 = c100 - c000, d10 = c110 - c010, d01 = c101 - c001, d11 = c111 - c011;
    const double d0 = d00 + ty * (d10 - d00);
    const double d1 = d01 + ty * (d11 - d01);
    grad.x() = (d0 + tz * (d1 - d0)) * ax.dt;
  }
  grad.y() = ((c10 - c00) + tz * ((c11 - c01) - (c10 - c00))) * ay.dt;
  grad.z() = (c1 - c0) * az.dt;
  return {value, grad};
}

Esdf esdf_from_grid(const OccupancyGrid& grid) {
  const auto& dims = grid.dims();
  const auto& cells = grid.cells();
  std::vector<std::uint8_t> free_mask(cells.size());
  bool any_free = false;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    free_mask[i] = cells[i] ? 0 : 1;
    any_free = any_free || free_mask[i];
  }
  const std::vector<double> to_occ = squared_edt(dims, cells, true);
  const double res = grid.resolution();
  std::vector<double> dist(cells.size());
  std::vector<double> to_free;
  if (any_free) to_free = squared_edt(dims, free_mask, false);
  // fully occupied: report the negated lattice diagonal
  const double diag = res * std::sqrt(double(dims[0]) * dims[0] + double(dims[1]) * dims[1] +
                                      double(dims[2]) * dims[2]);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!cells[i]) {
      dist[i] = res * std::sqrt(to_occ[i]);
    } else {
      dist[i] = any_free ? -(res * std::sqrt(to_free[i]) - res) : -diag;
    }
  }
  return Esdf(grid.origin(), res, dims, std::move(dist));
}

void dump_binary(const OccupancyGrid& grid, std::ostream& out) {
  write_header(out, grid.origin(), grid.resolution(), grid.dims());
  out.write(reinterpret_cast<const char*>(grid.cells().data()), static_cast<std::streamsize>(grid.size()));
}

void dump_binary(const Esdf& esdf, std::ostream& out) {
  write_header(out, esdf.origin(), esdf.resolution(), esdf.dims());
  for (double d : esdf.distances()) write_le(out, d);
}

}  // namespace dgform
