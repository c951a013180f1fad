#pragma once

// Morphological and textural descriptors of a segmented object, plus the
// ordered feature layout used by the classifier.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "agglo/core.hpp"
#include "agglo/geometry.hpp"
#include "agglo/io.hpp"
#include "agglo/rng.hpp"

namespace agglo::descriptors {

// Lengths in micrometers, areas in squared micrometers, centroids in
// millimeters; the rest dimensionless. x = column direction, y = row direction.
struct DescriptorRecord {
  double d = 0;         // area-equivalent diameter
  double a = 0;         // point-count area
  double a_convex = 0;  // convex hull area (point-count, boundary centers half)
  double s = 0;         // solidity a / a_convex
  double v1 = 0;        // major axis length
  double v2 = 0;        // minor axis length
  double e = 0;         // eccentricity
  double o = 0;         // orientation vs image y-axis, [-pi/2, pi/2)
  double r1 = 0;        // min enclosing radius
  double r2 = 0;        // max inscribed radius
  double r = 0;         // r1 / r2
  double h = 0;         // largest Feret diameter
  double lambda_mean = 0;
  double lambda_std = 0;
  double lambda_max = 0;
  double delta = 0;     // perimeter
  double psi = 0;       // roundness 4*pi*a / delta^2
  double z1_x = 0, z1_y = 0;  // centroid (mm)
  double z2_x = 0, z2_y = 0;  // gray-weighted centroid (mm)
  double z = 0;               // |z1 - z2| (mm)
  double kappa = 0;           // fractal dimension, clamped to [0,2]
  double g_mean = 0, g_std = 0, g_min = 0, g_max = 0;
};

inline void check_nonempty(const ObjectRegion& region, const char* op) {
  if (region.pixels.empty())
    throw std::invalid_argument(std::string(op) + ": empty region");
}

inline std::pair<double, double> area_and_diameter(const ObjectRegion& region, double pitch) {
  check_nonempty(region, "area_and_diameter");
  const double a = static_cast<double>(region.pixels.size()) * pitch * pitch;
  return {a, 2.0 * std::sqrt(a / std::numbers::pi)};
}

// Convex hull vertices over the 4 corners of every pixel, in doubled integer
// coordinates (x = 2*col +- 1, y = 2*row +- 1) so predicates are exact.
inline std::vector<geometry::I2> corner_hull(const ObjectRegion& region) {
  std::vector<geometry::I2> corners;
  corners.reserve(region.pixels.size() * 4);
  for (const Pixel& p : region.pixels) {
    const long long x = 2LL * p.col, y = 2LL * p.row;
    corners.push_back({x - 1, y - 1});
    corners.push_back({x - 1, y + 1});
    corners.push_back({x + 1, y - 1});
    corners.push_back({x + 1, y + 1});
  }
  return geometry::convex_hull(std::move(corners));
}

// Point-count area of the filled hull, same estimator as a: pixel centers
// strictly inside count 1, centers exactly on the hull boundary count 1/2.
inline double convex_hull_area(const ObjectRegion& region, double pitch) {
  check_nonempty(region, "convex_hull_area");
  const auto hull = corner_hull(region);
  long long min_x = hull[0].x, max_x = hull[0].x, min_y = hull[0].y, max_y = hull[0].y;
  for (const auto& v : hull) {
    min_x = std::min(min_x, v.x);
    max_x = std::max(max_x, v.x);
    min_y = std::min(min_y, v.y);
    max_y = std::max(max_y, v.y);
  }
  // centers are the even coordinates (corners are odd)
  const auto even_ceil = [](long long v) { return v % 2 == 0 ? v : v + 1; };
  long long twice_count = 0;
  for (long long y = even_ceil(min_y); y <= max_y; y += 2) {
    for (long long x = even_ceil(min_x); x <= max_x; x += 2) {
      const int side = geometry::point_in_convex(hull, {x, y});
      if (side > 0)
        twice_count += 2;
      else if (side == 0)
        twice_count += 1;
    }
  }
  return static_cast<double>(twice_count) * 0.5 * pitch * pitch;
}

struct MomentEllipse {
  double v1 = 0, v2 = 0, e = 0, o = 0;
};

// Axis lengths from the covariance of pixel centers, each pixel carrying an
// extra 1/12 variance for its own extent. Orientation is the angle between
// the major axis and the image y-axis, wrapped to [-pi/2, pi/2).
inline MomentEllipse moment_ellipse(const ObjectRegion& region, double pitch) {
  check_nonempty(region, "moment_ellipse");
  const std::size_t n = region.pixels.size();
  if (n == 1) return {pitch, pitch, 0.0, 0.0};

  double mr = 0, mc = 0;
  for (const Pixel& p : region.pixels) {
    mr += p.row;
    mc += p.col;
  }
  mr /= static_cast<double>(n);
  mc /= static_cast<double>(n);
  double m20 = 0, m02 = 0, m11 = 0;
  for (const Pixel& p : region.pixels) {
    const double dr = p.row - mr, dc = p.col - mc;
    m20 += dr * dr;
    m02 += dc * dc;
    m11 += dr * dc;
  }
  m20 = m20 / static_cast<double>(n) + 1.0 / 12.0;
  m02 = m02 / static_cast<double>(n) + 1.0 / 12.0;
  m11 /= static_cast<double>(n);

  const double tr = m20 + m02;
  const double gap = std::sqrt((m20 - m02) * (m20 - m02) + 4.0 * m11 * m11);
  const double l1 = 0.5 * (tr + gap), l2 = 0.5 * (tr - gap);

  MomentEllipse out;
  out.v1 = 4.0 * std::sqrt(l1) * pitch;
  out.v2 = 4.0 * std::sqrt(std::max(l2, 0.0)) * pitch;
  const double ratio = out.v2 / out.v1;
  out.e = std::sqrt(std::max(0.0, 1.0 - ratio * ratio));

  // eigenvector of the larger eigenvalue; pick the better-conditioned form
  const double ar = l1 - m02, ac = m11;   // (row, col) candidate A
  const double br = m11, bc = l1 - m20;   // candidate B
  double vr, vc;
  if (ar * ar + ac * ac >= br * br + bc * bc) {
    vr = ar;
    vc = ac;
  } else {
    vr = br;
    vc = bc;
  }
  double o = (vr == 0.0 && vc == 0.0) ? 0.0 : std::atan2(vc, vr);
  while (o >= std::numbers::pi / 2) o -= std::numbers::pi;
  while (o < -std::numbers::pi / 2) o += std::numbers::pi;
  out.o = o;
  return out;
}

struct BorderDistances {
  double mean = 0, std = 0, max = 0;  // micrometers
};

// Distance of each region pixel to the background: Euclidean center distance
// to the nearest non-region pixel minus half a pixel, floored at half a pixel.
// Everything outside the region (holes and the image frame) is background.
inline BorderDistances border_distances(const ObjectRegion& region, double pitch) {
  check_nonempty(region, "border_distances");
  const int bw = region.bbox.width() + 2, bh = region.bbox.height() + 2;
  std::vector<std::uint8_t> background(static_cast<std::size_t>(bw) * bh, 1);
  for (const Pixel& p : region.pixels) {
    const int r = p.row - region.bbox.min_row + 1, c = p.col - region.bbox.min_col + 1;
    background[static_cast<std::size_t>(r) * bw + c] = 0;
  }
  const auto dist2 = geometry::edt_squared(background, bw, bh);
  double sum = 0, sum2 = 0, mx = 0;
  for (const Pixel& p : region.pixels) {
    const int r = p.row - region.bbox.min_row + 1, c = p.col - region.bbox.min_col + 1;
    const double lam = std::max(0.5, std::sqrt(dist2[static_cast<std::size_t>(r) * bw + c]) - 0.5);
    sum += lam;
    sum2 += lam * lam;
    mx = std::max(mx, lam);
  }
  const double n = static_cast<double>(region.pixels.size());
  BorderDistances out;
  out.mean = (sum / n) * pitch;
  const double var = std::max(0.0, sum2 / n - (sum / n) * (sum / n));
  out.std = std::sqrt(var) * pitch;
  out.max = mx * pitch;
  return out;
}

struct EnclosingInscribed {
  double r1 = 0, r2 = 0, r = 0;
};

inline EnclosingInscribed enclosing_and_inscribed(const ObjectRegion& region, double pitch) {
  check_nonempty(region, "enclosing_and_inscribed");
  const auto hull = corner_hull(region);
  std::vector<geometry::P2> pts;
  pts.reserve(hull.size());
  for (const auto& v : hull)
    pts.push_back({static_cast<double>(v.x) * 0.5, static_cast<double>(v.y) * 0.5});
  EnclosingInscribed out;
  out.r1 = geometry::min_enclosing_circle(pts).r * pitch;
  out.r2 = border_distances(region, pitch).max;
  out.r = out.r1 / out.r2;
  return out;
}

// Largest Feret diameter: max pairwise distance over hull corner vertices.
inline double feret_diameter(const ObjectRegion& region, double pitch) {
  check_nonempty(region, "feret_diameter");
  const auto hull = corner_hull(region);
  long long best = 0;
  for (std::size_t i = 0; i < hull.size(); ++i)
    for (std::size_t j = i + 1; j < hull.size(); ++j) {
      const long long dx = hull[i].x - hull[j].x, dy = hull[i].y - hull[j].y;
      best = std::max(best, dx * dx + dy * dy);
    }
  return std::sqrt(static_cast<double>(best)) * 0.5 * pitch;
}

struct PerimeterRoundness {
  double delta = 0, psi = 0;
};

// Perimeter along the traced outer contour: 1 per axial step, sqrt(2) per
// diagonal step. A single pixel gets the fixed value (2 + sqrt(2)) * pitch.
inline PerimeterRoundness perimeter_and_roundness(const ObjectRegion& region, double pitch) {
  check_nonempty(region, "perimeter_and_roundness");
  const int bw = region.bbox.width(), bh = region.bbox.height();
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(bw) * bh, 0);
  for (const Pixel& p : region.pixels)
    mask[static_cast<std::size_t>(p.row - region.bbox.min_row) * bw +
         (p.col - region.bbox.min_col)] = 1;
  const auto path = geometry::trace_boundary(mask, bw, bh);
  double steps = 0.0;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    const int dr = std::abs(path[i].row - path[i + 1].row);
    const int dc = std::abs(path[i].col - path[i + 1].col);
    steps += (dr + dc == 1) ? 1.0 : std::numbers::sqrt2;
  }
  PerimeterRoundness out;
  out.delta = (path.size() == 1 ? 2.0 + std::numbers::sqrt2 : steps) * pitch;
  const double a = static_cast<double>(region.pixels.size()) * pitch * pitch;
  out.psi = 4.0 * std::numbers::pi * a / (out.delta * out.delta);
  return out;
}

struct Centroids {
  double z1_x = 0, z1_y = 0, z2_x = 0, z2_y = 0, z = 0;  // millimeters
};

inline Centroids centroids(const ObjectRegion& region, const GrayImage& img) {
  check_nonempty(region, "centroids");
  const double mm = img.pixel_pitch / 1000.0;
  double mr = 0, mc = 0, wr = 0, wc = 0, wsum = 0;
  for (const Pixel& p : region.pixels) {
    mr += p.row;
    mc += p.col;
    const double g = img.at(p.row, p.col);
    wr += g * p.row;
    wc += g * p.col;
    wsum += g;
  }
  if (wsum <= 0.0)
    throw std::runtime_error("centroids: all intensities zero, weighted centroid undefined");
  const double n = static_cast<double>(region.pixels.size());
  Centroids out;
  out.z1_x = (mc / n) * mm;
  out.z1_y = (mr / n) * mm;
  out.z2_x = (wc / wsum) * mm;
  out.z2_y = (wr / wsum) * mm;
  out.z = std::hypot(out.z1_x - out.z2_x, out.z1_y - out.z2_y);
  return out;
}

// Box counting over tilings of the bounding box with tile sizes 1,2,4,...
// up to half the longer bbox side; slope of ln N against ln(1/eps),
// clamped to [0,2].
inline double fractal_dimension(const ObjectRegion& region) {
  check_nonempty(region, "fractal_dimension");
  const int bw = region.bbox.width(), bh = region.bbox.height();
  const int longest = std::max(bw, bh);
  std::vector<double> xs, ys;
  for (int eps = 1; 2 * eps <= longest; eps *= 2) {
    const int tw = (bw + eps - 1) / eps, th = (bh + eps - 1) / eps;
    std::vector<std::uint8_t> tile(static_cast<std::size_t>(tw) * th, 0);
    for (const Pixel& p : region.pixels)
      tile[static_cast<std::size_t>((p.row - region.bbox.min_row) / eps) * tw +
           (p.col - region.bbox.min_col) / eps] = 1;
    long long count = 0;
    for (const auto t : tile) count += t;
    xs.push_back(-std::log(static_cast<double>(eps)));
    ys.push_back(std::log(static_cast<double>(count)));
  }
  if (xs.size() < 2)
    throw std::runtime_error("fractal_dimension: fewer than 2 usable scales");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(xs.size());
  my /= static_cast<double>(xs.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  return std::clamp(sxy / sxx, 0.0, 2.0);
}

struct GrayStats {
  double mean = 0, std = 0, min = 0, max = 0;
};

inline GrayStats gray_stats(const ObjectRegion& region, const GrayImage& img) {
  check_nonempty(region, "gray_stats");
  double sum = 0, sum2 = 0;
  double mn = 256.0, mx = -1.0;
  for (const Pixel& p : region.pixels) {
    const double g = img.at(p.row, p.col);
    sum += g;
    sum2 += g * g;
    mn = std::min(mn, g);
    mx = std::max(mx, g);
  }
  const double n = static_cast<double>(region.pixels.size());
  GrayStats out;
  out.mean = sum / n;
  out.std = std::sqrt(std::max(0.0, sum2 / n - out.mean * out.mean));
  out.min = mn;
  out.max = mx;
  return out;
}

inline DescriptorRecord compute_record(const ObjectRegion& region, const GrayImage& img) {
  check_nonempty(region, "compute_record");
  const double pitch = img.pixel_pitch;
  DescriptorRecord rec;
  const auto [a, d] = area_and_diameter(region, pitch);
  rec.a = a;
  rec.d = d;
  rec.a_convex = convex_hull_area(region, pitch);
  rec.s = rec.a / rec.a_convex;
  const auto ell = moment_ellipse(region, pitch);
  rec.v1 = ell.v1;
  rec.v2 = ell.v2;
  rec.e = ell.e;
  rec.o = ell.o;
  const auto bd = border_distances(region, pitch);
  rec.lambda_mean = bd.mean;
  rec.lambda_std = bd.std;
  rec.lambda_max = bd.max;
  const auto hullp = corner_hull(region);
  {
    std::vector<geometry::P2> pts;
    pts.reserve(hullp.size());
    for (const auto& v : hullp)
      pts.push_back({static_cast<double>(v.x) * 0.5, static_cast<double>(v.y) * 0.5});
    rec.r1 = geometry::min_enclosing_circle(pts).r * pitch;
  }
  rec.r2 = rec.lambda_max;
  rec.r = rec.r1 / rec.r2;
  rec.h = feret_diameter(region, pitch);
  const auto pr = perimeter_and_roundness(region, pitch);
  rec.delta = pr.delta;
  rec.psi = pr.psi;
  const auto cen = centroids(region, img);
  rec.z1_x = cen.z1_x;
  rec.z1_y = cen.z1_y;
  rec.z2_x = cen.z2_x;
  rec.z2_y = cen.z2_y;
  rec.z = cen.z;
  rec.kappa = fractal_dimension(region);
  const auto gs = gray_stats(region, img);
  rec.g_mean = gs.mean;
  rec.g_std = gs.std;
  rec.g_min = gs.min;
  rec.g_max = gs.max;
  return rec;
}

// Scalar descriptors available as classifier features.
enum class Desc {
  d, a, a_convex, s, v1, v2, e, o, r1, r2, r, h,
  lambda_mean, lambda_std, lambda_max, delta, psi, z, kappa,
  g_mean, g_std, g_min, g_max
};

inline const char* desc_name(Desc id) {
  switch (id) {
    case Desc::d: return "d";
    case Desc::a: return "a";
    case Desc::a_convex: return "a_convex";
    case Desc::s: return "s";
    case Desc::v1: return "v1";
    case Desc::v2: return "v2";
    case Desc::e: return "e";
    case Desc::o: return "o";
    case Desc::r1: return "r1";
    case Desc::r2: return "r2";
    case Desc::r: return "r";
    case Desc::h: return "h";
    case Desc::lambda_mean: return "lambda_mean";
    case Desc::lambda_std: return "lambda_std";
    case Desc::lambda_max: return "lambda_max";
    case Desc::delta: return "delta";
    case Desc::psi: return "psi";
    case Desc::z: return "z";
    case Desc::kappa: return "kappa";
    case Desc::g_mean: return "g_mean";
    case Desc::g_std: return "g_std";
    case Desc::g_min: return "g_min";
    case Desc::g_max: return "g_max";
  }
  return "?";
}

inline double record_value(const DescriptorRecord& rec, Desc id) {
  switch (id) {
    case Desc::d: return rec.d;
    case Desc::a: return rec.a;
    case Desc::a_convex: return rec.a_convex;
    case Desc::s: return rec.s;
    case Desc::v1: return rec.v1;
    case Desc::v2: return rec.v2;
    case Desc::e: return rec.e;
    case Desc::o: return rec.o;
    case Desc::r1: return rec.r1;
    case Desc::r2: return rec.r2;
    case Desc::r: return rec.r;
    case Desc::h: return rec.h;
    case Desc::lambda_mean: return rec.lambda_mean;
    case Desc::lambda_std: return rec.lambda_std;
    case Desc::lambda_max: return rec.lambda_max;
    case Desc::delta: return rec.delta;
    case Desc::psi: return rec.psi;
    case Desc::z: return rec.z;
    case Desc::kappa: return rec.kappa;
    case Desc::g_mean: return rec.g_mean;
    case Desc::g_std: return rec.g_std;
    case Desc::g_min: return rec.g_min;
    case Desc::g_max: return rec.g_max;
  }
  return 0.0;
}

// Ordered feature list for classifier input. The default drops the raw
// centroids (z1, z2) and the orientation, and keeps the centroid shift z,
// giving 22 features; both switches below change that set.
struct FeatureLayout {
  std::vector<Desc> items;

  std::size_t size() const { return items.size(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(items.size());
    for (Desc id : items) out.emplace_back(desc_name(id));
    return out;
  }

  std::string joined_names() const {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (i) out.push_back(',');
      out += desc_name(items[i]);
    }
    return out;
  }

  std::string fingerprint() const { return io::hash_hex(joined_names()); }

  std::vector<double> extract(const DescriptorRecord& rec) const {
    std::vector<double> out;
    out.reserve(items.size());
    for (Desc id : items) out.push_back(record_value(rec, id));
    return out;
  }
};

inline FeatureLayout default_layout(bool include_orientation = false,
                                    bool include_centroid_shift = true) {
  FeatureLayout layout;
  layout.items = {Desc::d, Desc::a, Desc::a_convex, Desc::s, Desc::v1, Desc::v2, Desc::e};
  if (include_orientation) layout.items.push_back(Desc::o);
  for (Desc id : {Desc::r1, Desc::r2, Desc::r, Desc::h, Desc::lambda_mean, Desc::lambda_std,
                  Desc::lambda_max, Desc::delta, Desc::psi})
    layout.items.push_back(id);
  if (include_centroid_shift) layout.items.push_back(Desc::z);
  for (Desc id : {Desc::kappa, Desc::g_mean, Desc::g_std, Desc::g_min, Desc::g_max})
    layout.items.push_back(id);
  return layout;
}

}  // namespace agglo::descriptors
