#pragma once

// Synthetic ground truth: renders disk-built particle scenes (single disks,
// chain-like and raspberry-like disk unions) with clipped Gaussian noise, and
// produces labeled descriptor datasets by running the measurement chain on
// per-object scenes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "agglo/classify.hpp"
#include "agglo/core.hpp"
#include "agglo/descriptors.hpp"
#include "agglo/imaging.hpp"
#include "agglo/io.hpp"
#include "agglo/rng.hpp"

namespace agglo::synth {

struct Disk {
  double row = 0.0;
  double col = 0.0;
  double radius = 0.0;
};

struct SceneSpec {
  int width = 512;
  int height = 512;
  double pixel_pitch = 15.0;
  int n_primary = 0;
  int n_chain = 0;
  int n_raspberry = 0;
  double radius_min = 8.0;   // primary-disk radius range, px
  double radius_max = 16.0;
  double chain_spacing = 1.6;     // center spacing in units of radius
  int chain_min = 2;
  int chain_max = 5;
  int raspberry_min = 6;          // disks per cluster
  int raspberry_max = 20;
  double raspberry_overlap = 0.9; // center spacing as fraction of 2*radius
  double background = 30.0;
  double foreground = 200.0;
  double shading = 0.0;           // radial darkening toward disk rims, [0,1)
  double noise_std = 0.0;
  double gap = 2.0;               // minimum clearance between objects, px
  bool allow_border = false;      // permit objects to overhang the frame
  std::uint64_t seed = 0;
};

struct SceneTruth {
  GrayImage image;
  LabelMap labels;    // exact object ids 1..N
  BinaryMask mask;    // exact foreground
  std::vector<int> classes;                     // per id, 0 primary 1 chain 2 raspberry
  std::vector<std::vector<Disk>> object_disks;  // per id, generating disks
};

namespace detail {

constexpr int kPlaceAttempts = 500;
constexpr int kGrowAttempts = 500;

inline void validate_spec(const SceneSpec& spec) {
  if (spec.width < 8 || spec.height < 8)
    throw std::invalid_argument("SceneSpec: frame must be at least 8x8");
  if (spec.n_primary < 0 || spec.n_chain < 0 || spec.n_raspberry < 0)
    throw std::invalid_argument("SceneSpec: object counts must be nonnegative");
  if (!(spec.radius_min > 0.0) || spec.radius_max < spec.radius_min)
    throw std::invalid_argument("SceneSpec: invalid radius range");
  if (spec.chain_min < 2 || spec.chain_max < spec.chain_min)
    throw std::invalid_argument("SceneSpec: chains need 2 or more disks");
  if (spec.raspberry_min < 3 || spec.raspberry_max < spec.raspberry_min)
    throw std::invalid_argument("SceneSpec: raspberries need 3 or more disks");
  if (!(spec.chain_spacing > 0.0) || spec.chain_spacing >= 2.0)
    throw std::invalid_argument("SceneSpec: chain spacing must keep disks overlapping");
  if (!(spec.raspberry_overlap > 0.0) || spec.raspberry_overlap >= 1.0)
    throw std::invalid_argument("SceneSpec: raspberry overlap must be in (0,1)");
  if (!(spec.foreground > spec.background) || spec.background < 0.0 ||
      spec.foreground > 255.0)
    throw std::invalid_argument("SceneSpec: need bright objects on a darker background");
  if (spec.shading < 0.0 || spec.shading >= 1.0)
    throw std::invalid_argument("SceneSpec: shading must be in [0,1)");
  if (spec.noise_std < 0.0) throw std::invalid_argument("SceneSpec: negative noise std");
  if (spec.gap < 0.0) throw std::invalid_argument("SceneSpec: negative gap");
}

inline double draw_radius(const SceneSpec& spec, Rng& rng) {
  return spec.radius_min + (spec.radius_max - spec.radius_min) * rng.uniform();
}

inline std::vector<Disk> make_primary(const SceneSpec& spec, Rng& rng) {
  return {Disk{0.0, 0.0, draw_radius(spec, rng)}};
}

inline std::vector<Disk> make_chain(const SceneSpec& spec, Rng& rng) {
  const int n = rng.uniform_int(spec.chain_min, spec.chain_max);
  const double r = draw_radius(spec, rng);
  const double step = spec.chain_spacing * r;
  const double phi = 3.14159265358979323846 * rng.uniform();
  const double dr = std::cos(phi), dc = std::sin(phi);
  std::vector<Disk> disks;
  for (int i = 0; i < n; ++i) {
    const double off = (i - 0.5 * (n - 1)) * step;
    disks.push_back({off * dr, off * dc, r});
  }
  return disks;
}

// Grows a compact cluster: each disk after the second sits at the contact
// distance from two existing disks and not deeply inside any other.
inline std::vector<Disk> make_raspberry(const SceneSpec& spec, Rng& rng) {
  const int n = rng.uniform_int(spec.raspberry_min, spec.raspberry_max);
  const double r = draw_radius(spec, rng);
  const double s = 2.0 * r * spec.raspberry_overlap;
  std::vector<Disk> disks{{0.0, 0.0, r}};
  const double a0 = 2.0 * 3.14159265358979323846 * rng.uniform();
  disks.push_back({s * std::cos(a0), s * std::sin(a0), r});
  while (static_cast<int>(disks.size()) < n) {
    bool grown = false;
    for (int attempt = 0; attempt < kGrowAttempts && !grown; ++attempt) {
      const int i = rng.uniform_int(0, static_cast<int>(disks.size()) - 1);
      const int j = rng.uniform_int(0, static_cast<int>(disks.size()) - 1);
      if (i == j) continue;
      const double dr = disks[static_cast<std::size_t>(j)].row -
                        disks[static_cast<std::size_t>(i)].row;
      const double dc = disks[static_cast<std::size_t>(j)].col -
                        disks[static_cast<std::size_t>(i)].col;
      const double dist = std::hypot(dr, dc);
      if (!(dist > 1e-9) || dist > 1.999 * s) continue;
      const double h = std::sqrt(std::max(0.0, s * s - 0.25 * dist * dist));
      const double mr = disks[static_cast<std::size_t>(i)].row + 0.5 * dr;
      const double mc = disks[static_cast<std::size_t>(i)].col + 0.5 * dc;
      const double sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
      const Disk cand{mr + sign * h * (-dc / dist), mc + sign * h * (dr / dist), r};
      bool clear = true;
      for (std::size_t m = 0; m < disks.size() && clear; ++m) {
        if (m == static_cast<std::size_t>(i) || m == static_cast<std::size_t>(j)) continue;
        clear = std::hypot(cand.row - disks[m].row, cand.col - disks[m].col) >= 0.95 * s;
      }
      if (clear) {
        disks.push_back(cand);
        grown = true;
      }
    }
    if (!grown)
      throw std::runtime_error("make_raspberry: cluster growth stalled");
  }
  return disks;
}

inline std::vector<Disk> make_shape(int cls, const SceneSpec& spec, Rng& rng) {
  std::vector<Disk> disks;
  switch (cls) {
    case 0: disks = make_primary(spec, rng); break;
    case 1: disks = make_chain(spec, rng); break;
    case 2: disks = make_raspberry(spec, rng); break;
    default: throw std::invalid_argument("make_shape: class must be 0, 1, or 2");
  }
  double mr = 0.0, mc = 0.0;
  for (const Disk& d : disks) {
    mr += d.row;
    mc += d.col;
  }
  mr /= static_cast<double>(disks.size());
  mc /= static_cast<double>(disks.size());
  for (Disk& d : disks) {
    d.row -= mr;
    d.col -= mc;
  }
  return disks;
}

// Largest center offset plus radius; bounds the shape's extent in any direction.
inline double shape_bound(const std::vector<Disk>& disks) {
  double bound = 0.0;
  for (const Disk& d : disks)
    bound = std::max(bound, std::hypot(d.row, d.col) + d.radius);
  return bound;
}

inline bool clearance_ok(const std::vector<Disk>& candidate,
                         const std::vector<Disk>& placed, double gap) {
  for (const Disk& a : candidate)
    for (const Disk& b : placed)
      if (std::hypot(a.row - b.row, a.col - b.col) < a.radius + b.radius + gap)
        return false;
  return true;
}

inline void rasterize_object(const std::vector<Disk>& disks, std::int32_t id,
                             const SceneSpec& spec, GrayImage& image,
                             LabelMap& labels, BinaryMask& mask) {
  for (const Disk& d : disks) {
    const int r0 = std::max(0, static_cast<int>(std::ceil(d.row - d.radius)));
    const int r1 = std::min(spec.height - 1, static_cast<int>(std::floor(d.row + d.radius)));
    const int c0 = std::max(0, static_cast<int>(std::ceil(d.col - d.radius)));
    const int c1 = std::min(spec.width - 1, static_cast<int>(std::floor(d.col + d.radius)));
    const double rr2 = d.radius * d.radius;
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const double dist2 = (r - d.row) * (r - d.row) + (c - d.col) * (c - d.col);
        if (dist2 > rr2) continue;
        labels.set(r, c, id);
        mask.set(r, c, true);
        const double value =
            spec.foreground - spec.shading * (spec.foreground - spec.background) *
                                  (dist2 / rr2);
        image.at(r, c) = std::max(image.at(r, c), value);
      }
    }
  }
}

}  // namespace detail

// Renders the scene with exact ground truth. Object ids are 1..N ordered
// primaries, chains, raspberries; placement itself proceeds largest class
// first so crowded specs still pack.
inline SceneTruth render(const SceneSpec& spec) {
  detail::validate_spec(spec);
  const int total = spec.n_primary + spec.n_chain + spec.n_raspberry;
  if (total < 1) throw std::invalid_argument("render: no objects requested");

  SceneTruth truth;
  truth.image = GrayImage(spec.width, spec.height, spec.background, spec.pixel_pitch);
  truth.labels = LabelMap(spec.width, spec.height);
  truth.labels.object_count = total;
  truth.mask = BinaryMask(spec.width, spec.height);
  truth.classes.assign(static_cast<std::size_t>(total), 0);
  truth.object_disks.assign(static_cast<std::size_t>(total), {});

  // (final id, class), listed in placement order.
  std::vector<std::pair<std::int32_t, int>> order;
  for (int i = 0; i < spec.n_raspberry; ++i)
    order.emplace_back(spec.n_primary + spec.n_chain + 1 + i, 2);
  for (int i = 0; i < spec.n_chain; ++i) order.emplace_back(spec.n_primary + 1 + i, 1);
  for (int i = 0; i < spec.n_primary; ++i) order.emplace_back(1 + i, 0);

  Rng rng(derive_seed(spec.seed, "place", 0));
  std::vector<Disk> placed;
  for (const auto& [id, cls] : order) {
    const auto shape = detail::make_shape(cls, spec, rng);
    const double bound = detail::shape_bound(shape);
    double lo_r = bound, hi_r = spec.height - 1 - bound;
    double lo_c = bound, hi_c = spec.width - 1 - bound;
    if (spec.allow_border) {
      lo_r = 0.0;
      hi_r = spec.height - 1;
      lo_c = 0.0;
      hi_c = spec.width - 1;
    } else if (lo_r > hi_r || lo_c > hi_c) {
      throw std::runtime_error("render: object of extent " + io::format_double(2 * bound) +
                               " px cannot fit the frame");
    }
    bool done = false;
    for (int attempt = 0; attempt < detail::kPlaceAttempts && !done; ++attempt) {
      const double cr = lo_r + (hi_r - lo_r) * rng.uniform();
      const double cc = lo_c + (hi_c - lo_c) * rng.uniform();
      std::vector<Disk> candidate = shape;
      for (Disk& d : candidate) {
        d.row += cr;
        d.col += cc;
      }
      if (!detail::clearance_ok(candidate, placed, spec.gap)) continue;
      detail::rasterize_object(candidate, id, spec, truth.image, truth.labels, truth.mask);
      placed.insert(placed.end(), candidate.begin(), candidate.end());
      truth.classes[static_cast<std::size_t>(id - 1)] = cls;
      truth.object_disks[static_cast<std::size_t>(id - 1)] = std::move(candidate);
      done = true;
    }
    if (!done)
      throw std::runtime_error("render: failed to place an object after " +
                               std::to_string(detail::kPlaceAttempts) + " attempts");
  }

  if (spec.noise_std > 0.0) {
    Rng noise(derive_seed(spec.seed, "noise", 0));
    for (double& p : truth.image.pixels)
      p = std::clamp(p + noise.normal(0.0, spec.noise_std), 0.0, 255.0);
  }
  return truth;
}

struct DescriptorDataset {
  std::vector<classify::LabeledSample> samples;  // class-major order
  descriptors::FeatureLayout layout;
};

// Renders one object per small frame, segments it by thresholding alone, and
// extracts its descriptor vector; the attached label is exact by construction.
inline DescriptorDataset gen_descriptor_dataset(const SceneSpec& base, int n_per_class,
                                                std::uint64_t seed) {
  detail::validate_spec(base);
  if (n_per_class < 1)
    throw std::invalid_argument("gen_descriptor_dataset: n_per_class must be positive");

  DescriptorDataset out;
  out.layout = descriptors::default_layout();
  const int margin = 12;
  for (int cls = 0; cls < 3; ++cls) {
    const std::uint64_t class_seed =
        derive_seed(seed, "class", static_cast<std::uint64_t>(cls));
    for (int i = 0; i < n_per_class; ++i) {
      Rng rng(derive_seed(class_seed, "sample", static_cast<std::uint64_t>(i)));
      const auto shape = detail::make_shape(cls, base, rng);
      double min_r = 1e300, max_r = -1e300, min_c = 1e300, max_c = -1e300;
      for (const Disk& d : shape) {
        min_r = std::min(min_r, d.row - d.radius);
        max_r = std::max(max_r, d.row + d.radius);
        min_c = std::min(min_c, d.col - d.radius);
        max_c = std::max(max_c, d.col + d.radius);
      }
      SceneSpec local = base;
      local.width = static_cast<int>(std::ceil(max_c - min_c)) + 2 * margin;
      local.height = static_cast<int>(std::ceil(max_r - min_r)) + 2 * margin;
      GrayImage image(local.width, local.height, base.background, base.pixel_pitch);
      LabelMap labels(local.width, local.height);
      BinaryMask mask(local.width, local.height);
      std::vector<Disk> moved = shape;
      for (Disk& d : moved) {
        d.row += margin - min_r;
        d.col += margin - min_c;
      }
      detail::rasterize_object(moved, 1, local, image, labels, mask);
      if (base.noise_std > 0.0)
        for (double& p : image.pixels)
          p = std::clamp(p + rng.normal(0.0, base.noise_std), 0.0, 255.0);

      const double eta = imaging::otsu_threshold(image);
      const auto components = imaging::label_components(imaging::binarize(image, eta));
      auto regions = imaging::extract_regions(components, image, 20);
      if (regions.empty())
        throw std::runtime_error("gen_descriptor_dataset: segmentation lost the object");
      std::size_t best = 0;
      for (std::size_t k = 1; k < regions.size(); ++k)
        if (regions[k].area_px() > regions[best].area_px()) best = k;

      classify::LabeledSample sample;
      sample.features = out.layout.extract(descriptors::compute_record(regions[best], image));
      sample.label = cls;
      out.samples.push_back(std::move(sample));
    }
  }
  return out;
}

// CSV with the label first and one column per descriptor.
inline std::string dataset_to_csv(const std::vector<classify::LabeledSample>& samples,
                                  const descriptors::FeatureLayout& layout) {
  std::string out = "# descriptor-dataset v1\n";
  out += "label," + layout.joined_names() + "\n";
  for (const auto& sample : samples) {
    if (sample.features.size() != layout.size())
      throw std::invalid_argument("dataset_to_csv: feature count does not match layout");
    out += std::to_string(sample.label);
    for (const double v : sample.features) {
      out += ',';
      out += io::format_double(v);
    }
    out += '\n';
  }
  return out;
}

struct ParsedDataset {
  std::vector<classify::LabeledSample> samples;
  std::vector<std::string> feature_names;
};

inline ParsedDataset dataset_from_csv(const std::string& text,
                                      const std::string& origin = "<memory>") {
  const auto csv = io::parse_csv(text, origin);
  if (csv.header.empty() || csv.header.front() != "label")
    throw std::runtime_error(origin + ": dataset CSV must start with a label column");
  ParsedDataset out;
  out.feature_names.assign(csv.header.begin() + 1, csv.header.end());
  for (const auto& row : csv.rows) {
    classify::LabeledSample sample;
    const double label = io::parse_double(row.front(), origin + ": label");
    sample.label = static_cast<int>(label);
    if (sample.label < 0 || static_cast<double>(sample.label) != label)
      throw std::runtime_error(origin + ": labels must be nonnegative integers");
    for (std::size_t i = 1; i < row.size(); ++i)
      sample.features.push_back(io::parse_double(row[i], origin + ": feature"));
    out.samples.push_back(std::move(sample));
  }
  return out;
}

// Geometry-only ground truth; the image itself is persisted separately.
inline nlohmann::json truth_to_json(const SceneTruth& truth) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& disks : truth.object_disks) {
    nlohmann::json list = nlohmann::json::array();
    for (const Disk& d : disks)
      list.push_back({{"row", d.row}, {"col", d.col}, {"radius", d.radius}});
    objects.push_back(std::move(list));
  }
  return {{"schema_version", 1},
          {"width", truth.labels.width},
          {"height", truth.labels.height},
          {"classes", truth.classes},
          {"objects", std::move(objects)}};
}

inline SceneTruth truth_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema_version").get<int>() != 1)
      throw std::runtime_error("scene truth: unsupported schema version");
    SceneTruth truth;
    const int width = j.at("width").get<int>();
    const int height = j.at("height").get<int>();
    if (width < 1 || height < 1) throw std::runtime_error("scene truth: bad frame size");
    truth.labels = LabelMap(width, height);
    truth.mask = BinaryMask(width, height);
    truth.classes = j.at("classes").get<std::vector<int>>();
    const auto& objects = j.at("objects");
    if (objects.size() != truth.classes.size())
      throw std::runtime_error("scene truth: classes and objects disagree");
    truth.labels.object_count = static_cast<int>(objects.size());
    SceneSpec geom;
    geom.width = width;
    geom.height = height;
    GrayImage scratch(width, height);
    for (std::size_t k = 0; k < objects.size(); ++k) {
      std::vector<Disk> disks;
      for (const auto& d : objects[k])
        disks.push_back({d.at("row").get<double>(), d.at("col").get<double>(),
                         d.at("radius").get<double>()});
      detail::rasterize_object(disks, static_cast<std::int32_t>(k + 1), geom, scratch,
                               truth.labels, truth.mask);
      truth.object_disks.push_back(std::move(disks));
    }
    return truth;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("scene truth: malformed json: ") + e.what());
  }
}

}  // namespace agglo::synth
