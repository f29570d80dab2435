#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

namespace attr {

struct GeometryError : std::runtime_error {
  explicit GeometryError(const std::string& m) : std::runtime_error(m) {}
};

using Vec2 = Eigen::Vector2d;

// Simple polygon in pixel coordinates. Construction repairs the vertex list:
// consecutive duplicates are dropped, orientation is forced to positive
// signed area, and a self-intersecting ring falls back to its convex hull.
struct Polygon {
  std::vector<Vec2> pts;

  Polygon() = default;
  explicit Polygon(std::vector<Vec2> raw);

  int size() const { return static_cast<int>(pts.size()); }
  const Vec2& operator[](int i) const { return pts[static_cast<size_t>(i)]; }

  Eigen::AlignedBox2d bbox() const;
};

double signed_area(const std::vector<Vec2>& ring);
double polygon_area(const Polygon& p);

bool is_self_intersecting(const std::vector<Vec2>& ring);
std::vector<Vec2> convex_hull(std::vector<Vec2> pts);

// Douglas-Peucker simplification of a closed ring (tolerance in px).
std::vector<Vec2> simplify_ring(const std::vector<Vec2>& ring, double tol);

// Binary occupancy grid, row-major, y down.
struct BinaryGrid {
  int w = 0, h = 0;
  std::vector<std::uint8_t> cells;

  BinaryGrid() = default;
  BinaryGrid(int w_, int h_) : w(w_), h(h_), cells(static_cast<size_t>(w_) * h_, 0) {}
  std::uint8_t& at(int x, int y) { return cells[static_cast<size_t>(y) * w + x]; }
  std::uint8_t at(int x, int y) const { return cells[static_cast<size_t>(y) * w + x]; }
  std::int64_t count() const;
};

// Even-odd scanline fill of `poly` onto a w x h grid whose cell (x, y) center
// sits at world coordinates (ox + (x+0.5)*sx, oy + (y+0.5)*sy). Cells are
// OR-ed into `out`.
void rasterize_polygon(const Polygon& poly, double ox, double oy, double sx, double sy,
                       BinaryGrid& out);

// Rasterized IoU of two polygons on a raster_res x raster_res grid covering
// their joint bounding box. Disjoint polygons give 0.
double polygon_iou(const Polygon& a, const Polygon& b, int raster_res = 512);

// (|A∩B|/|A|, |A∩B|/|B|) on the same shared grid as polygon_iou.
std::pair<double, double> intersection_fractions(const Polygon& a, const Polygon& b,
                                                 int raster_res = 512);

// One polygon per 4-connected foreground component (outer boundary, traced
// along cell edges), simplified with tolerance 1.0 px. Components smaller
// than 9 cells are discarded.
std::vector<Polygon> trace_contours(const BinaryGrid& mask);

bool point_in_polygon(const Polygon& poly, double x, double y);

}  // namespace attr
