#pragma once

// Raster containers and segmented-object regions shared across the pipeline.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace agglo {

struct Pixel {
  int row = 0;
  int col = 0;

  friend bool operator==(Pixel a, Pixel b) { return a.row == b.row && a.col == b.col; }
  friend bool operator!=(Pixel a, Pixel b) { return !(a == b); }
  // raster order: by row, then column
  friend bool operator<(Pixel a, Pixel b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  }
};

// Grayscale raster. Intensities live in [0,255]; 8-bit on ingest but real-valued
// after denoising. pixel_pitch is the physical size of one pixel in micrometers.
struct GrayImage {
  int width = 0;
  int height = 0;
  double pixel_pitch = 15.0;
  std::vector<double> pixels;  // row-major

  GrayImage() = default;
  GrayImage(int w, int h, double fill = 0.0, double pitch = 15.0)
      : width(w), height(h), pixel_pitch(pitch) {
    if (w < 1 || h < 1) throw std::invalid_argument("GrayImage: dimensions must be >= 1");
    pixels.assign(static_cast<std::size_t>(w) * h, fill);
  }

  bool in_bounds(int r, int c) const { return r >= 0 && r < height && c >= 0 && c < width; }
  std::size_t index(int r, int c) const {
    return static_cast<std::size_t>(r) * width + c;
  }
  double& at(int r, int c) { return pixels[index(r, c)]; }
  double at(int r, int c) const { return pixels[index(r, c)]; }
  bool empty() const { return pixels.empty(); }
};

struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // row-major, nonzero = foreground

  BinaryMask() = default;
  BinaryMask(int w, int h, bool fill = false) : width(w), height(h) {
    if (w < 1 || h < 1) throw std::invalid_argument("BinaryMask: dimensions must be >= 1");
    bits.assign(static_cast<std::size_t>(w) * h, fill ? 1 : 0);
  }

  std::size_t index(int r, int c) const {
    return static_cast<std::size_t>(r) * width + c;
  }
  bool get(int r, int c) const { return bits[index(r, c)] != 0; }
  void set(int r, int c, bool v) { bits[index(r, c)] = v ? 1 : 0; }
  bool in_bounds(int r, int c) const { return r >= 0 && r < height && c >= 0 && c < width; }
};

// Connected-component labeling result. 0 is background; positive labels are
// assigned 1..object_count in first-encounter raster order.
struct LabelMap {
  int width = 0;
  int height = 0;
  int object_count = 0;
  std::vector<std::int32_t> labels;  // row-major

  LabelMap() = default;
  LabelMap(int w, int h) : width(w), height(h) {
    labels.assign(static_cast<std::size_t>(w) * h, 0);
  }

  std::size_t index(int r, int c) const {
    return static_cast<std::size_t>(r) * width + c;
  }
  std::int32_t get(int r, int c) const { return labels[index(r, c)]; }
  void set(int r, int c, std::int32_t v) { labels[index(r, c)] = v; }
};

struct BBox {
  int min_row = 0;
  int min_col = 0;
  int max_row = 0;
  int max_col = 0;

  int height() const { return max_row - min_row + 1; }
  int width() const { return max_col - min_col + 1; }
};

// One segmented object. pixel_set is sorted in raster order and 4-connected.
struct ObjectRegion {
  int label = 0;
  std::vector<Pixel> pixels;
  BBox bbox;
  bool touches_border = false;
  const GrayImage* source = nullptr;  // non-owning

  std::size_t area_px() const { return pixels.size(); }
};

}  // namespace agglo
