#include "attr/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace attr {

namespace {

constexpr double kDupEps = 1e-9;

bool segments_properly_intersect(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
  auto cross = [](const Vec2& o, const Vec2& p, const Vec2& q) {
    return (p.x() - o.x()) * (q.y() - o.y()) - (p.y() - o.y()) * (q.x() - o.x());
  };
  const double d1 = cross(c, d, a), d2 = cross(c, d, b);
  const double d3 = cross(a, b, c), d4 = cross(a, b, d);
  return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

}  // namespace

double signed_area(const std::vector<Vec2>& ring) {
  double acc = 0;
  const size_t n = ring.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2& p = ring[i];
    const Vec2& q = ring[(i + 1) % n];
    acc += p.x() * q.y() - q.x() * p.y();
  }
  return acc * 0.5;
}

bool is_self_intersecting(const std::vector<Vec2>& ring) {
  const size_t n = ring.size();
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      // adjacent edges share an endpoint; skip
      if (j == i || (j + 1) % n == i || (i + 1) % n == j) continue;
      if (segments_properly_intersect(ring[i], ring[(i + 1) % n], ring[j], ring[(j + 1) % n]))
        return true;
    }
  }
  return false;
}

std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Vec2& a, const Vec2& b) { return (a - b).norm() < kDupEps; }),
            pts.end());
  const size_t n = pts.size();
  if (n < 3) return pts;
  auto cross = [](const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Vec2> hull(2 * n);
  size_t k = 0;
  for (size_t i = 0; i < n; ++i) {  // lower
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (size_t i = n - 1, t = k + 1; i-- > 0;) {  // upper
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

Polygon::Polygon(std::vector<Vec2> raw) {
  std::vector<Vec2> v;
  v.reserve(raw.size());
  for (const auto& p : raw) {
    if (v.empty() || (p - v.back()).norm() > kDupEps) v.push_back(p);
  }
  while (v.size() > 1 && (v.front() - v.back()).norm() <= kDupEps) v.pop_back();
  if (v.size() < 3) throw GeometryError("polygon: fewer than 3 distinct points");

  if (is_self_intersecting(v) || std::abs(signed_area(v)) < kDupEps) {
    v = convex_hull(v);
    if (v.size() < 3 || std::abs(signed_area(v)) < kDupEps)
      throw GeometryError("polygon: zero area");
  }
  if (signed_area(v) < 0) std::reverse(v.begin(), v.end());
  pts = std::move(v);
}

Eigen::AlignedBox2d Polygon::bbox() const {
  Eigen::AlignedBox2d box;
  for (const auto& p : pts) box.extend(p);
  return box;
}

double polygon_area(const Polygon& p) { return signed_area(p.pts); }

std::int64_t BinaryGrid::count() const {
  return std::accumulate(cells.begin(), cells.end(), std::int64_t(0),
                         [](std::int64_t a, std::uint8_t c) { return a + (c != 0); });
}

void rasterize_polygon(const Polygon& poly, double ox, double oy, double sx, double sy,
                       BinaryGrid& out) {
  const size_t n = poly.pts.size();
  std::vector<double> xs;
  for (int row = 0; row < out.h; ++row) {
    const double cy = oy + (row + 0.5) * sy;
    xs.clear();
    for (size_t i = 0; i < n; ++i) {
      const Vec2& p = poly.pts[i];
      const Vec2& q = poly.pts[(i + 1) % n];
      // half-open rule on y avoids double-counting shared vertices
      if ((p.y() <= cy) == (q.y() <= cy)) continue;
      xs.push_back(p.x() + (cy - p.y()) / (q.y() - p.y()) * (q.x() - p.x()));
    }
    std::sort(xs.begin(), xs.end());
    for (size_t i = 0; i + 1 < xs.size(); i += 2) {
      // cell centers cx = ox + (col+0.5)*sx inside [xs[i], xs[i+1])
      int c0 = static_cast<int>(std::ceil((xs[i] - ox) / sx - 0.5));
      int c1 = static_cast<int>(std::ceil((xs[i + 1] - ox) / sx - 0.5)) - 1;
      c0 = std::max(c0, 0);
      c1 = std::min(c1, out.w - 1);
      for (int col = c0; col <= c1; ++col) out.at(col, row) = 1;
    }
  }
}

bool point_in_polygon(const Polygon& poly, double x, double y) {
  bool inside = false;
  const size_t n = poly.pts.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2& p = poly.pts[i];
    const Vec2& q = poly.pts[(i + 1) % n];
    if ((p.y() <= y) == (q.y() <= y)) continue;
    const double xi = p.x() + (y - p.y()) / (q.y() - p.y()) * (q.x() - p.x());
    if (x < xi) inside = !inside;
  }
  return inside;
}

namespace {

struct SharedRaster {
  BinaryGrid ga, gb;
  bool empty = false;
};

SharedRaster rasterize_pair(const Polygon& a, const Polygon& b, int res) {
  SharedRaster r;
  Eigen::AlignedBox2d box = a.bbox();
  box.extend(b.bbox());
  const double w = box.sizes().x(), h = box.sizes().y();
  if (w <= 0 || h <= 0) {
    r.empty = true;
    return r;
  }
  r.ga = BinaryGrid(res, res);
  r.gb = BinaryGrid(res, res);
  const double sx = w / res, sy = h / res;
  rasterize_polygon(a, box.min().x(), box.min().y(), sx, sy, r.ga);
  rasterize_polygon(b, box.min().x(), box.min().y(), sx, sy, r.gb);
  return r;
}

}  // namespace

double polygon_iou(const Polygon& a, const Polygon& b, int raster_res) {
  SharedRaster r = rasterize_pair(a, b, raster_res);
  if (r.empty) return 0.0;
  std::int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < r.ga.cells.size(); ++i) {
    const bool ia = r.ga.cells[i] != 0, ib = r.gb.cells[i] != 0;
    inter += ia && ib;
    uni += ia || ib;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::pair<double, double> intersection_fractions(const Polygon& a, const Polygon& b,
                                                 int raster_res) {
  SharedRaster r = rasterize_pair(a, b, raster_res);
  if (r.empty) return {0.0, 0.0};
  std::int64_t inter = 0, ca = 0, cb = 0;
  for (size_t i = 0; i < r.ga.cells.size(); ++i) {
    const bool ia = r.ga.cells[i] != 0, ib = r.gb.cells[i] != 0;
    inter += ia && ib;
    ca += ia;
    cb += ib;
  }
  return {ca == 0 ? 0.0 : static_cast<double>(inter) / ca,
          cb == 0 ? 0.0 : static_cast<double>(inter) / cb};
}

namespace {

void dp_simplify(const std::vector<Vec2>& pts, size_t lo, size_t hi, double tol,
                 std::vector<char>& keep) {
  if (hi <= lo + 1) return;
  const Vec2& a = pts[lo];
  const Vec2& b = pts[hi];
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  double best = -1;
  size_t best_i = lo;
  for (size_t i = lo + 1; i < hi; ++i) {
    double d;
    if (len2 < 1e-18) {
      d = (pts[i] - a).norm();
    } else {
      const double t = std::clamp((pts[i] - a).dot(ab) / len2, 0.0, 1.0);
      d = (pts[i] - (a + t * ab)).norm();
    }
    if (d > best) {
      best = d;
      best_i = i;
    }
  }
  if (best > tol) {
    keep[best_i] = 1;
    dp_simplify(pts, lo, best_i, tol, keep);
    dp_simplify(pts, best_i, hi, tol, keep);
  }
}

}  // namespace

std::vector<Vec2> simplify_ring(const std::vector<Vec2>& ring, double tol) {
  const size_t n = ring.size();
  if (n <= 4) return ring;
  // Anchor the closed ring at two mutually distant vertices, then simplify
  // the two open chains between them.
  size_t a0 = 0, a1 = 0;
  double best = -1;
  for (size_t i = 0; i < n; ++i) {
    const double d = (ring[i] - ring[0]).squaredNorm();
    if (d > best) {
      best = d;
      a1 = i;
    }
  }
  if (a1 == a0) a1 = n / 2;

  std::vector<Vec2> chain(ring.begin() + static_cast<long>(a0), ring.end());
  chain.insert(chain.end(), ring.begin(), ring.begin() + static_cast<long>(a0) + 1);
  // chain now starts and ends at ring[a0]; a1 sits at offset (a1 - a0) mod n
  const size_t mid = (a1 + n - a0) % n;
  std::vector<char> keep(chain.size(), 0);
  keep.front() = keep.back() = 1;
  keep[mid] = 1;
  dp_simplify(chain, 0, mid, tol, keep);
  dp_simplify(chain, mid, chain.size() - 1, tol, keep);

  std::vector<Vec2> out;
  for (size_t i = 0; i + 1 < chain.size(); ++i)
    if (keep[i]) out.push_back(chain[i]);
  return out;
}

namespace {

// Outer boundary of one component, walked along cell edges with the component
// kept on the right. Emits lattice corner points.
std::vector<Vec2> trace_component_boundary(const BinaryGrid& g, const std::vector<int>& label,
                                           int comp, int sx, int sy) {
  auto is_comp = [&](int x, int y) {
    return x >= 0 && x < g.w && y >= 0 && y < g.h &&
           label[static_cast<size_t>(y) * g.w + x] == comp;
  };
  // Start at the top-left corner of the topmost-leftmost cell, heading east.
  int cx = sx, cy = sy;        // current corner (lattice coords)
  int dx = 1, dy = 0;          // heading
  const int start_x = cx, start_y = cy;
  const int start_dx = dx, start_dy = dy;
  std::vector<Vec2> ring;
  do {
    ring.emplace_back(cx, cy);
    // step to next corner
    cx += dx;
    cy += dy;
    // cells around the new corner, relative to heading: left and right ahead
    // left cell and right cell of the continuing direction decide the turn
    auto cell_left = [&](int ddx, int ddy) {  // cell to the left of heading at corner
      if (ddx == 1) return is_comp(cx, cy - 1);
      if (ddx == -1) return is_comp(cx - 1, cy);
      if (ddy == 1) return is_comp(cx, cy);
      return is_comp(cx - 1, cy - 1);
    };
    auto cell_right = [&](int ddx, int ddy) {
      if (ddx == 1) return is_comp(cx, cy);
      if (ddx == -1) return is_comp(cx - 1, cy - 1);
      if (ddy == 1) return is_comp(cx - 1, cy);
      return is_comp(cx, cy - 1);
    };
    const bool l = cell_left(dx, dy), r = cell_right(dx, dy);
    if (l && !r) {
      // turn left
      const int ndx = dy, ndy = -dx;
      dx = ndx;
      dy = ndy;
    } else if (!l && !r) {
      // turn right... only left cell pattern decides; here nothing ahead-left:
      const int ndx = -dy, ndy = dx;
      dx = ndx;
      dy = ndy;
    } else if (l && r) {
      // both filled: turn left (keeps the walk on the outer boundary)
      const int ndx = dy, ndy = -dx;
      dx = ndx;
      dy = ndy;
    }
    // straight when !l && r
  } while (!(cx == start_x && cy == start_y && dx == start_dx && dy == start_dy));
  return ring;
}

}  // namespace

std::vector<Polygon> trace_contours(const BinaryGrid& mask) {
  std::vector<int> label(static_cast<size_t>(mask.w) * mask.h, -1);
  std::vector<Polygon> out;
  int next = 0;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < mask.h; ++y) {
    for (int x = 0; x < mask.w; ++x) {
      if (!mask.at(x, y) || label[static_cast<size_t>(y) * mask.w + x] >= 0) continue;
      const int comp = next++;
      std::int64_t count = 0;
      stack.clear();
      stack.emplace_back(x, y);
      label[static_cast<size_t>(y) * mask.w + x] = comp;
      while (!stack.empty()) {
        auto [px, py] = stack.back();
        stack.pop_back();
        ++count;
        const int nx[4] = {px + 1, px - 1, px, px};
        const int ny[4] = {py, py, py + 1, py - 1};
        for (int i = 0; i < 4; ++i) {
          if (nx[i] < 0 || nx[i] >= mask.w || ny[i] < 0 || ny[i] >= mask.h) continue;
          if (!mask.at(nx[i], ny[i])) continue;
          auto& lb = label[static_cast<size_t>(ny[i]) * mask.w + nx[i]];
          if (lb >= 0) continue;
          lb = comp;
          stack.emplace_back(nx[i], ny[i]);
        }
      }
      if (count < 9) continue;
      auto ring = trace_component_boundary(mask, label, comp, x, y);
      auto simplified = simplify_ring(ring, 1.0);
      try {
        out.emplace_back(std::vector<Vec2>(simplified.begin(), simplified.end()));
      } catch (const GeometryError&) {
        // degenerate after simplification; drop the component
      }
    }
  }
  return out;
}

}  // namespace attr
