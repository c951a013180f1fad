#pragma once

// Exact planar geometry on the pixel grid: convex hulls and point location in
// doubled-integer coordinates, minimum enclosing circles, Euclidean distance
// transforms, and outer boundary tracing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "agglo/core.hpp"

namespace agglo::geometry {

struct I2 {
  long long x = 0;
  long long y = 0;
  friend bool operator==(I2 a, I2 b) { return a.x == b.x && a.y == b.y; }
  friend bool operator<(I2 a, I2 b) { return a.x != b.x ? a.x < b.x : a.y < b.y; }
};

struct P2 {
  double x = 0.0;
  double y = 0.0;
};

inline long long cross(I2 o, I2 a, I2 b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Andrew monotone chain, counterclockwise, no collinear points on the hull.
// Collinear input collapses to its two extreme points.
inline std::vector<I2> convex_hull(std::vector<I2> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  const std::size_t n = pts.size();
  if (n <= 2) return pts;
  std::vector<I2> hull(2 * n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {  // lower
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  const std::size_t lower = k + 1;
  for (std::size_t i = n - 1; i-- > 0;) {  // upper
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

// +1 strictly inside, 0 on the boundary, -1 outside. Hull must be CCW.
inline int point_in_convex(const std::vector<I2>& hull, I2 p) {
  const std::size_t n = hull.size();
  if (n == 0) return -1;
  if (n == 1) return (hull[0] == p) ? 0 : -1;
  if (n == 2) {  // degenerate segment
    const long long c = cross(hull[0], hull[1], p);
    if (c != 0) return -1;
    const long long d = (p.x - hull[0].x) * (hull[1].x - hull[0].x) +
                        (p.y - hull[0].y) * (hull[1].y - hull[0].y);
    const long long len = (hull[1].x - hull[0].x) * (hull[1].x - hull[0].x) +
                          (hull[1].y - hull[0].y) * (hull[1].y - hull[0].y);
    return (d >= 0 && d <= len) ? 0 : -1;
  }
  bool on_edge = false;
  for (std::size_t i = 0; i < n; ++i) {
    const long long c = cross(hull[i], hull[(i + 1) % n], p);
    if (c < 0) return -1;
    if (c == 0) on_edge = true;
  }
  return on_edge ? 0 : 1;
}

// Twice the signed area (positive for CCW).
inline long long polygon_area2(const std::vector<I2>& poly) {
  long long s = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const I2& a = poly[i];
    const I2& b = poly[(i + 1) % poly.size()];
    s += a.x * b.y - b.x * a.y;
  }
  return s;
}

struct Circle {
  double cx = 0.0;
  double cy = 0.0;
  double r = -1.0;  // negative = empty

  bool contains(P2 p, double eps) const {
    if (r < 0.0) return false;
    const double dx = p.x - cx, dy = p.y - cy;
    return std::sqrt(dx * dx + dy * dy) <= r + eps;
  }
};

inline Circle circle_two(P2 a, P2 b) {
  Circle c;
  c.cx = 0.5 * (a.x + b.x);
  c.cy = 0.5 * (a.y + b.y);
  c.r = 0.5 * std::hypot(a.x - b.x, a.y - b.y);
  return c;
}

inline Circle circle_three(P2 a, P2 b, P2 c) {
  const double d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
  if (std::abs(d) < 1e-12) {  // collinear: widest diametral pair
    Circle ab = circle_two(a, b), ac = circle_two(a, c), bc = circle_two(b, c);
    Circle best = ab;
    if (ac.r > best.r) best = ac;
    if (bc.r > best.r) best = bc;
    return best;
  }
  const double a2 = a.x * a.x + a.y * a.y;
  const double b2 = b.x * b.x + b.y * b.y;
  const double c2 = c.x * c.x + c.y * c.y;
  Circle out;
  out.cx = (a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / d;
  out.cy = (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / d;
  out.r = std::hypot(a.x - out.cx, a.y - out.cy);
  return out;
}

// Welzl-style incremental minimum enclosing circle, processed in the given
// order (deterministic; intended point counts are small, e.g. hull vertices).
inline Circle min_enclosing_circle(const std::vector<P2>& pts) {
  if (pts.empty()) throw std::invalid_argument("min_enclosing_circle: no points");
  double scale = 1.0;
  for (const P2& p : pts) scale = std::max({scale, std::abs(p.x), std::abs(p.y)});
  const double eps = 1e-10 * scale;

  Circle c{pts[0].x, pts[0].y, 0.0};
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (c.contains(pts[i], eps)) continue;
    c = Circle{pts[i].x, pts[i].y, 0.0};
    for (std::size_t j = 0; j < i; ++j) {
      if (c.contains(pts[j], eps)) continue;
      c = circle_two(pts[i], pts[j]);
      for (std::size_t k = 0; k < j; ++k) {
        if (c.contains(pts[k], eps)) continue;
        c = circle_three(pts[i], pts[j], pts[k]);
      }
    }
  }
  return c;
}

namespace detail {

// 1-D squared distance transform by lower envelope of parabolas. Infinite
// entries are not sites; the caller guarantees at least one finite entry.
inline void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
                   std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  const int n = static_cast<int>(f.size());
  d.assign(static_cast<std::size_t>(n), 0.0);
  v.assign(static_cast<std::size_t>(n), 0);
  z.assign(static_cast<std::size_t>(n) + 1, 0.0);

  int q0 = 0;
  while (f[static_cast<std::size_t>(q0)] == inf) ++q0;
  int k = 0;
  v[0] = q0;
  z[0] = -inf;
  z[1] = inf;
  for (int q = q0 + 1; q < n; ++q) {
    if (f[static_cast<std::size_t>(q)] == inf) continue;
    double s;
    for (;;) {
      const int p = v[static_cast<std::size_t>(k)];
      s = ((f[static_cast<std::size_t>(q)] + q * static_cast<double>(q)) -
           (f[static_cast<std::size_t>(p)] + p * static_cast<double>(p))) /
          (2.0 * q - 2.0 * p);
      if (s <= z[static_cast<std::size_t>(k)]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = inf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(k) + 1] < q) ++k;
    const int p = v[static_cast<std::size_t>(k)];
    const double dq = q - static_cast<double>(p);
    d[static_cast<std::size_t>(q)] = dq * dq + f[static_cast<std::size_t>(p)];
  }
}

}  // namespace detail

// Squared Euclidean distance from every cell to the nearest seed cell
// (seed = true). Distances between integer cell centers; exact in double.
inline std::vector<double> edt_squared(const std::vector<std::uint8_t>& seed, int w, int h) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> g(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = seed[i] ? 0.0 : inf;

  std::vector<double> f, d, out(static_cast<std::size_t>(w) * h);
  std::vector<int> v;
  std::vector<double> z;

  // columns first
  f.resize(static_cast<std::size_t>(h));
  for (int c = 0; c < w; ++c) {
    bool any = false;
    for (int r = 0; r < h; ++r) {
      f[static_cast<std::size_t>(r)] = g[static_cast<std::size_t>(r) * w + c];
      any = any || f[static_cast<std::size_t>(r)] < inf;
    }
    if (!any) {
      for (int r = 0; r < h; ++r) out[static_cast<std::size_t>(r) * w + c] = inf;
      continue;
    }
    detail::edt_1d(f, d, v, z);
    for (int r = 0; r < h; ++r) out[static_cast<std::size_t>(r) * w + c] = d[static_cast<std::size_t>(r)];
  }
  // then rows
  f.resize(static_cast<std::size_t>(w));
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) f[static_cast<std::size_t>(c)] = out[static_cast<std::size_t>(r) * w + c];
    detail::edt_1d(f, d, v, z);
    for (int c = 0; c < w; ++c) out[static_cast<std::size_t>(r) * w + c] = d[static_cast<std::size_t>(c)];
  }
  return out;
}

// Moore boundary trace of the outer contour on a local mask grid. Returns a
// closed pixel cycle (front == back) in trace order, or a single pixel for
// isolated pixels. Start pixel is the raster-first region pixel, entered from
// the west; stop when the start is re-entered toward the same successor.
inline std::vector<Pixel> trace_boundary(const std::vector<std::uint8_t>& mask, int w, int h) {
  int sr = -1, sc = -1;
  for (int r = 0; r < h && sr < 0; ++r)
    for (int c = 0; c < w; ++c)
      if (mask[static_cast<std::size_t>(r) * w + c]) {
        sr = r;
        sc = c;
        break;
      }
  if (sr < 0) throw std::invalid_argument("trace_boundary: empty mask");

  constexpr int dr8[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
  constexpr int dc8[8] = {0, 1, 1, 1, 0, -1, -1, -1};
  auto filled = [&](int r, int c) {
    return r >= 0 && r < h && c >= 0 && c < w && mask[static_cast<std::size_t>(r) * w + c] != 0;
  };

  std::vector<Pixel> path{{sr, sc}};
  int cr = sr, cc = sc;
  int back = 6;  // came from the west
  const std::size_t limit = 8 * static_cast<std::size_t>(w) * h + 16;
  for (;;) {
    bool moved = false;
    for (int k = 0; k < 8; ++k) {
      const int j = (back + 1 + k) % 8;
      const int nr = cr + dr8[j], nc = cc + dc8[j];
      if (filled(nr, nc)) {
        path.push_back({nr, nc});
        back = (j + 4) % 8;
        cr = nr;
        cc = nc;
        moved = true;
        break;
      }
    }
    if (!moved) return path;  // isolated pixel
    const std::size_t m = path.size();
    if (m > 2 && path[m - 1] == path[1] && path[m - 2] == path[0]) {
      path.pop_back();
      return path;
    }
    if (m > limit) throw std::runtime_error("trace_boundary: contour did not close");
  }
}

}  // namespace agglo::geometry
