#pragma once

// Segmentation stage: non-local means denoising, Otsu thresholding, binary
// masks, 4-connected component labeling, and IoU scoring.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <thread>
#include <vector>

#include "agglo/core.hpp"

namespace agglo::imaging {

// Weighted patch average with weights exp(-S/strength), S the sum of squared
// intensity differences over patch offsets valid for both pixels. Accelerated
// with one integral image per window offset; exp() is skipped when the
// exponent is below -40 (total output contribution < 2e-12, far inside the
// 1e-9 agreement bound with the direct evaluation). Extended-precision prefix
// sums keep the accelerated sums within that bound as well.
inline GrayImage nlmeans_denoise(const GrayImage& img, double strength = 100.0,
                                 int search_radius = 21, int patch_radius = 5,
                                 int threads = 1) {
  if (img.empty()) throw std::invalid_argument("nlmeans_denoise: empty image");
  if (strength <= 0.0) throw std::invalid_argument("nlmeans_denoise: strength must be > 0");
  if (patch_radius < 0 || search_radius < patch_radius)
    throw std::invalid_argument("nlmeans_denoise: need search_radius >= patch_radius >= 0");

  const int W = img.width, H = img.height;
  const std::size_t n = img.pixels.size();
  const double* I = img.pixels.data();

  // self weight is exp(0) = 1
  std::vector<double> num(img.pixels);
  std::vector<double> den(n, 1.0);

  std::vector<long double> prefix;  // (rh+1) x (rw+1), row-major
  const double skip_threshold = 40.0 * strength;
  const int p = patch_radius;

  const int nthreads = std::max(1, std::min(threads, H));

  for (int dr = 0; dr <= search_radius; ++dr) {
    const int dc_begin = (dr == 0) ? 1 : -search_radius;
    for (int dc = dc_begin; dc <= search_radius; ++dc) {
      // rectangle of pixels x with both x and x+z in bounds
      const int r0 = std::max(0, -dr), r1 = H - 1 - std::max(0, dr);
      const int c0 = std::max(0, -dc), c1 = W - 1 - std::max(0, dc);
      if (r0 > r1 || c0 > c1) continue;
      const int rh = r1 - r0 + 1, rw = c1 - c0 + 1;

      prefix.assign(static_cast<std::size_t>(rh + 1) * (rw + 1), 0.0L);
      for (int r = 0; r < rh; ++r) {
        const double* row_a = I + static_cast<std::size_t>(r0 + r) * W;
        const double* row_b = I + static_cast<std::size_t>(r0 + r + dr) * W;
        const long double* prow = prefix.data() + static_cast<std::size_t>(r) * (rw + 1);
        long double* crow = prefix.data() + static_cast<std::size_t>(r + 1) * (rw + 1);
        long double rowsum = 0.0L;
        for (int c = 0; c < rw; ++c) {
          const double diff = row_a[c0 + c] - row_b[c0 + c + dc];
          rowsum += static_cast<long double>(diff) * diff;
          crow[c + 1] = prow[c + 1] + rowsum;
        }
      }

      // patch sum around x, clipped to the valid rectangle
      auto patch_sum = [&](int r, int c) -> double {
        const int ra = std::max(r0, r - p) - r0, rb = std::min(r1, r + p) - r0;
        const int ca = std::max(c0, c - p) - c0, cb = std::min(c1, c + p) - c0;
        const long double* top = prefix.data() + static_cast<std::size_t>(ra) * (rw + 1);
        const long double* bot = prefix.data() + static_cast<std::size_t>(rb + 1) * (rw + 1);
        return static_cast<double>(bot[cb + 1] - bot[ca] - top[cb + 1] + top[ca]);
      };

      // Each output row is written by exactly one worker, and each output pixel
      // receives its -z contribution before its +z contribution, so the result
      // is identical for any thread count.
      auto process_rows = [&](int row_begin, int row_end) {
        for (int r = row_begin; r < row_end; ++r) {
          const int rs = r - dr;  // source row of the mirrored (-z) contribution
          if (rs >= r0 && rs <= r1) {
            double* nrow = num.data() + static_cast<std::size_t>(r) * W;
            double* drow = den.data() + static_cast<std::size_t>(r) * W;
            const double* srow = I + static_cast<std::size_t>(rs) * W;
            for (int c = c0; c <= c1; ++c) {
              const double S = patch_sum(rs, c);
              if (S <= skip_threshold) {
                const double w = std::exp(-S / strength);
                nrow[c + dc] += w * srow[c];
                drow[c + dc] += w;
              }
            }
          }
          if (r >= r0 && r <= r1) {
            double* nrow = num.data() + static_cast<std::size_t>(r) * W;
            double* drow = den.data() + static_cast<std::size_t>(r) * W;
            const double* srow = I + static_cast<std::size_t>(r + dr) * W;
            for (int c = c0; c <= c1; ++c) {
              const double S = patch_sum(r, c);
              if (S <= skip_threshold) {
                const double w = std::exp(-S / strength);
                nrow[c] += w * srow[c + dc];
                drow[c] += w;
              }
            }
          }
        }
      };

      if (nthreads == 1) {
        process_rows(0, H);
      } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(nthreads));
        const int chunk = (H + nthreads - 1) / nthreads;
        for (int t = 0; t < nthreads; ++t) {
          const int b = t * chunk, e = std::min(H, b + chunk);
          if (b >= e) break;
          pool.emplace_back(process_rows, b, e);
        }
        for (auto& th : pool) th.join();
      }
    }
  }

  GrayImage out(W, H, 0.0, img.pixel_pitch);
  for (std::size_t i = 0; i < n; ++i) out.pixels[i] = num[i] / den[i];
  return out;
}

inline int intensity_bin(double v) {
  if (v <= 0.0) return 0;
  const int b = static_cast<int>(v * (256.0 / 255.0));
  return b > 255 ? 255 : b;
}

// 256-bin histogram of (possibly real-valued) intensities in [0,255].
inline std::array<std::int64_t, 256> histogram256(const GrayImage& img) {
  std::array<std::int64_t, 256> h{};
  for (double v : img.pixels) ++h[static_cast<std::size_t>(intensity_bin(v))];
  return h;
}

// Exhaustive between-class-variance maximization over the 256-bin histogram.
// Ties resolved toward the smallest bin. Returns the threshold mapped back to
// intensity units: eta = (k+1) * 255/256 for the winning split bin k.
inline double otsu_threshold_from_histogram(const std::array<std::int64_t, 256>& h) {
  std::int64_t total = 0;
  int nonzero = 0;
  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) {
    total += h[static_cast<std::size_t>(i)];
    if (h[static_cast<std::size_t>(i)] > 0) ++nonzero;
    sum_all += static_cast<double>(i) * static_cast<double>(h[static_cast<std::size_t>(i)]);
  }
  if (nonzero < 2)
    throw std::runtime_error("otsu_threshold: degenerate histogram (needs >= 2 occupied bins)");

  double best = -1.0;
  int best_k = 0;
  std::int64_t w0 = 0;
  double sum0 = 0.0;
  for (int k = 0; k < 256; ++k) {
    w0 += h[static_cast<std::size_t>(k)];
    sum0 += static_cast<double>(k) * static_cast<double>(h[static_cast<std::size_t>(k)]);
    const std::int64_t w1 = total - w0;
    if (w0 == 0) continue;
    if (w1 == 0) break;
    const double mu0 = sum0 / static_cast<double>(w0);
    const double mu1 = (sum_all - sum0) / static_cast<double>(w1);
    const double var = static_cast<double>(w0) * static_cast<double>(w1) * (mu0 - mu1) * (mu0 - mu1);
    if (var > best) {
      best = var;
      best_k = k;
    }
  }
  return (best_k + 1) * (255.0 / 256.0);
}

inline double otsu_threshold(const GrayImage& img) {
  if (img.empty()) throw std::invalid_argument("otsu_threshold: empty image");
  return otsu_threshold_from_histogram(histogram256(img));
}

// foreground iff intensity >= eta
inline BinaryMask binarize(const GrayImage& img, double eta) {
  BinaryMask mask(img.width, img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) mask.bits[i] = img.pixels[i] >= eta;
  return mask;
}

// 4-connected labeling; labels 1..N assigned in first-encounter raster order.
inline LabelMap label_components(const BinaryMask& mask) {
  const int W = mask.width, H = mask.height;
  LabelMap lmap(W, H);
  std::vector<std::size_t> stack;
  std::int32_t next_label = 0;
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const std::size_t i = mask.index(r, c);
      if (!mask.bits[i] || lmap.labels[i] != 0) continue;
      ++next_label;
      lmap.labels[i] = next_label;
      stack.push_back(i);
      while (!stack.empty()) {
        const std::size_t cur = stack.back();
        stack.pop_back();
        const int cr = static_cast<int>(cur) / W, cc = static_cast<int>(cur) % W;
        constexpr int dr[4] = {-1, 1, 0, 0};
        constexpr int dc[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int nr = cr + dr[k], nc = cc + dc[k];
          if (nr < 0 || nr >= H || nc < 0 || nc >= W) continue;
          const std::size_t ni = mask.index(nr, nc);
          if (mask.bits[ni] && lmap.labels[ni] == 0) {
            lmap.labels[ni] = next_label;
            stack.push_back(ni);
          }
        }
      }
    }
  }
  lmap.object_count = next_label;
  return lmap;
}

inline std::vector<ObjectRegion> extract_regions(const LabelMap& lmap, const GrayImage& img,
                                                 int min_area = 5) {
  if (lmap.width != img.width || lmap.height != img.height)
    throw std::invalid_argument("extract_regions: label map and image dimensions differ");
  std::vector<ObjectRegion> regions(static_cast<std::size_t>(lmap.object_count));
  for (int i = 0; i < lmap.object_count; ++i) {
    regions[static_cast<std::size_t>(i)].label = i + 1;
    regions[static_cast<std::size_t>(i)].source = &img;
    regions[static_cast<std::size_t>(i)].bbox = {lmap.height, lmap.width, -1, -1};
  }
  for (int r = 0; r < lmap.height; ++r) {
    for (int c = 0; c < lmap.width; ++c) {
      const std::int32_t lab = lmap.get(r, c);
      if (lab <= 0) continue;
      ObjectRegion& reg = regions[static_cast<std::size_t>(lab - 1)];
      reg.pixels.push_back({r, c});
      reg.bbox.min_row = std::min(reg.bbox.min_row, r);
      reg.bbox.min_col = std::min(reg.bbox.min_col, c);
      reg.bbox.max_row = std::max(reg.bbox.max_row, r);
      reg.bbox.max_col = std::max(reg.bbox.max_col, c);
      if (r == 0 || c == 0 || r == lmap.height - 1 || c == lmap.width - 1)
        reg.touches_border = true;
    }
  }
  std::vector<ObjectRegion> out;
  out.reserve(regions.size());
  for (auto& reg : regions)
    if (static_cast<int>(reg.pixels.size()) >= min_area) out.push_back(std::move(reg));
  return out;
}

inline double iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("iou: mask dimensions differ");
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    const bool fa = a.bits[i] != 0, fb = b.bits[i] != 0;
    inter += fa && fb;
    uni += fa || fb;
  }
  if (uni == 0) throw std::runtime_error("iou: undefined for two empty masks");
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace agglo::imaging
