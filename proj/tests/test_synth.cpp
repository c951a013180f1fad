// Tests for the synthetic scene generator: rendering determinism, ground
// truth exactness, object separation, dataset generation, and serialization.

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "agglo/descriptors.hpp"
#include "agglo/imaging.hpp"
#include "agglo/synth.hpp"
#include "catch2/catch_amalgamated.hpp"

namespace im = agglo::imaging;
namespace sy = agglo::synth;

namespace {

sy::SceneSpec small_spec() {
  sy::SceneSpec spec;
  spec.width = 320;
  spec.height = 320;
  spec.radius_min = 6.0;
  spec.radius_max = 10.0;
  spec.raspberry_max = 12;
  return spec;
}

}  // namespace

TEST_CASE("rendering is deterministic in the seed", "[synth]") {
  auto spec = small_spec();
  spec.n_primary = 3;
  spec.n_chain = 2;
  spec.n_raspberry = 1;
  spec.noise_std = 8.0;
  spec.seed = 99;

  const auto a = sy::render(spec);
  const auto b = sy::render(spec);
  REQUIRE(a.image.pixels == b.image.pixels);
  REQUIRE(a.labels.labels == b.labels.labels);
  REQUIRE(a.classes == b.classes);

  spec.seed = 100;
  const auto c = sy::render(spec);
  REQUIRE(a.image.pixels != c.image.pixels);
}

TEST_CASE("scene statistics match the spec exactly", "[synth]") {
  sy::SceneSpec spec;
  spec.width = 512;
  spec.height = 512;
  spec.radius_min = 6.0;
  spec.radius_max = 10.0;
  spec.raspberry_max = 12;
  spec.n_primary = 10;
  spec.n_chain = 5;
  spec.n_raspberry = 3;
  spec.seed = 7;

  const auto truth = sy::render(spec);
  REQUIRE(truth.labels.object_count == 18);
  REQUIRE(truth.classes.size() == 18);
  std::map<int, int> mix;
  for (const int c : truth.classes) ++mix[c];
  REQUIRE(mix[0] == 10);
  REQUIRE(mix[1] == 5);
  REQUIRE(mix[2] == 3);

  // Ids are grouped primary, chain, raspberry.
  for (int i = 0; i < 10; ++i) REQUIRE(truth.classes[static_cast<std::size_t>(i)] == 0);
  for (int i = 10; i < 15; ++i) REQUIRE(truth.classes[static_cast<std::size_t>(i)] == 1);
  for (int i = 15; i < 18; ++i) REQUIRE(truth.classes[static_cast<std::size_t>(i)] == 2);

  // Every object is present, connected, and away from the frame border.
  std::vector<std::vector<agglo::Pixel>> per_object(18);
  for (int r = 0; r < truth.labels.height; ++r) {
    for (int c = 0; c < truth.labels.width; ++c) {
      const auto id = truth.labels.get(r, c);
      REQUIRE(id >= 0);
      REQUIRE(id <= 18);
      if (id > 0) {
        per_object[static_cast<std::size_t>(id - 1)].push_back({r, c});
        REQUIRE(r > 0);
        REQUIRE(r < truth.labels.height - 1);
      }
    }
  }
  for (const auto& pixels : per_object) REQUIRE(pixels.size() >= 50);

  // 4-connectivity of each object, via flood fill from its first pixel.
  for (int id = 1; id <= 18; ++id) {
    const auto& pixels = per_object[static_cast<std::size_t>(id - 1)];
    std::map<std::pair<int, int>, bool> seen;
    std::vector<std::pair<int, int>> stack{{pixels.front().row, pixels.front().col}};
    seen[stack.front()] = true;
    std::size_t visited = 0;
    while (!stack.empty()) {
      const auto [r, c] = stack.back();
      stack.pop_back();
      ++visited;
      const int dr[4] = {-1, 1, 0, 0}, dc[4] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const int nr = r + dr[k], nc = c + dc[k];
        if (!truth.labels.width || nr < 0 || nc < 0 || nr >= truth.labels.height ||
            nc >= truth.labels.width)
          continue;
        if (truth.labels.get(nr, nc) != id) continue;
        if (seen.emplace(std::make_pair(nr, nc), true).second) stack.push_back({nr, nc});
      }
    }
    REQUIRE(visited == pixels.size());
  }

  // No two objects come within touching distance: every labeled pixel's
  // 8-neighborhood contains only itself or background.
  for (int r = 0; r < truth.labels.height; ++r) {
    for (int c = 0; c < truth.labels.width; ++c) {
      const auto id = truth.labels.get(r, c);
      if (id <= 0) continue;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int nr = r + dr, nc = c + dc;
          if (nr < 0 || nc < 0 || nr >= truth.labels.height || nc >= truth.labels.width)
            continue;
          const auto nid = truth.labels.get(nr, nc);
          REQUIRE((nid == 0 || nid == id));
        }
    }
  }
}

TEST_CASE("noiseless scenes have exact two-level intensities", "[synth]") {
  auto spec = small_spec();
  spec.n_primary = 2;
  spec.seed = 21;
  const auto truth = sy::render(spec);
  for (int r = 0; r < spec.height; ++r)
    for (int c = 0; c < spec.width; ++c) {
      const double v = truth.image.at(r, c);
      if (truth.mask.get(r, c))
        REQUIRE(v == 200.0);
      else
        REQUIRE(v == 30.0);
    }

  spec.shading = 0.4;
  const auto shaded = sy::render(spec);
  double lo = 255.0, hi = 0.0;
  for (int r = 0; r < spec.height; ++r)
    for (int c = 0; c < spec.width; ++c)
      if (shaded.mask.get(r, c)) {
        lo = std::min(lo, shaded.image.at(r, c));
        hi = std::max(hi, shaded.image.at(r, c));
      }
  // Disk centers are subpixel, so the peak only approaches the foreground level.
  REQUIRE(hi > 199.0);
  REQUIRE(hi <= 200.0);
  REQUIRE(lo >= 200.0 - 0.4 * 170.0 - 1e-9);
  REQUIRE(lo < 160.0);
}

TEST_CASE("noisy pixels stay inside the valid intensity range", "[synth]") {
  auto spec = small_spec();
  spec.n_primary = 1;
  spec.noise_std = 60.0;
  spec.seed = 23;
  const auto truth = sy::render(spec);
  double lo = 1e9, hi = -1e9;
  for (const double v : truth.image.pixels) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  REQUIRE(lo >= 0.0);
  REQUIRE(hi <= 255.0);
  REQUIRE(lo == 0.0);     // sigma 60 saturates both ends somewhere
  REQUIRE(hi == 255.0);
}

TEST_CASE("a noiseless disk segments to a perfect overlap", "[synth]") {
  auto spec = small_spec();
  spec.width = 96;
  spec.height = 96;
  spec.n_primary = 1;
  spec.seed = 5;
  const auto truth = sy::render(spec);
  const double eta = im::otsu_threshold(truth.image);
  const auto mask = im::binarize(truth.image, eta);
  REQUIRE(im::iou(mask, truth.mask) == 1.0);
}

TEST_CASE("a noisy scene still segments accurately", "[synth]") {
  auto spec = small_spec();
  spec.width = 192;
  spec.height = 192;
  spec.n_primary = 2;
  spec.n_chain = 1;
  spec.n_raspberry = 1;
  spec.raspberry_max = 9;
  spec.noise_std = 10.0;
  spec.seed = 33;
  const auto truth = sy::render(spec);
  const auto smooth = im::nlmeans_denoise(truth.image, 100.0, 10, 2);
  const auto mask = im::binarize(smooth, im::otsu_threshold(smooth));
  REQUIRE(im::iou(mask, truth.mask) >= 0.9);
}

TEST_CASE("infeasible and crowded specs fail loudly", "[synth]") {
  sy::SceneSpec spec;
  spec.width = 64;
  spec.height = 64;
  spec.radius_min = 40.0;
  spec.radius_max = 40.0;
  spec.n_primary = 1;
  REQUIRE_THROWS_AS(sy::render(spec), std::runtime_error);

  // Border mode tolerates overhang instead.
  spec.allow_border = true;
  const auto truth = sy::render(spec);
  REQUIRE(truth.labels.object_count == 1);
  std::size_t fg = 0;
  for (const auto b : truth.mask.bits) fg += b;
  REQUIRE(fg > 0);

  sy::SceneSpec crowded;
  crowded.width = 96;
  crowded.height = 96;
  crowded.radius_min = 12.0;
  crowded.radius_max = 12.0;
  crowded.n_primary = 40;
  crowded.seed = 3;
  REQUIRE_THROWS_AS(sy::render(crowded), std::runtime_error);

  sy::SceneSpec none;
  REQUIRE_THROWS_AS(sy::render(none), std::invalid_argument);
  sy::SceneSpec bad = small_spec();
  bad.n_primary = 1;
  bad.foreground = 20.0;
  REQUIRE_THROWS_AS(sy::render(bad), std::invalid_argument);
  bad = small_spec();
  bad.n_primary = 1;
  bad.chain_spacing = 2.5;
  REQUIRE_THROWS_AS(sy::render(bad), std::invalid_argument);
}

TEST_CASE("descriptor datasets are labeled, separable, and deterministic", "[synth]") {
  auto spec = small_spec();
  spec.noise_std = 6.0;
  const auto data = sy::gen_descriptor_dataset(spec, 30, 55);
  REQUIRE(data.samples.size() == 90);
  REQUIRE(data.layout.size() == 22);

  const auto desc_index = [&](agglo::descriptors::Desc id) {
    const auto it = std::find(data.layout.items.begin(), data.layout.items.end(), id);
    REQUIRE(it != data.layout.items.end());
    return static_cast<std::size_t>(it - data.layout.items.begin());
  };
  const std::size_t e_idx = desc_index(agglo::descriptors::Desc::e);
  const std::size_t d_idx = desc_index(agglo::descriptors::Desc::d);
  const std::size_t s_idx = desc_index(agglo::descriptors::Desc::s);

  std::array<double, 3> mean_e{}, mean_d{}, mean_s{};
  std::array<int, 3> count{};
  for (const auto& sample : data.samples) {
    REQUIRE(sample.label >= 0);
    REQUIRE(sample.label <= 2);
    REQUIRE(sample.features.size() == 22);
    mean_e[static_cast<std::size_t>(sample.label)] += sample.features[e_idx];
    mean_d[static_cast<std::size_t>(sample.label)] += sample.features[d_idx];
    mean_s[static_cast<std::size_t>(sample.label)] += sample.features[s_idx];
    ++count[static_cast<std::size_t>(sample.label)];
  }
  for (int c = 0; c < 3; ++c) {
    REQUIRE(count[static_cast<std::size_t>(c)] == 30);
    mean_e[static_cast<std::size_t>(c)] /= 30.0;
    mean_d[static_cast<std::size_t>(c)] /= 30.0;
    mean_s[static_cast<std::size_t>(c)] /= 30.0;
  }
  // Chains are elongated, raspberries big and less convex, primaries compact.
  REQUIRE(mean_e[1] > mean_e[2]);
  REQUIRE(mean_e[1] > 0.85);
  REQUIRE(mean_d[2] > mean_d[0]);
  REQUIRE(mean_s[0] > mean_s[2]);
  REQUIRE(mean_s[0] > 0.95);

  const auto again = sy::gen_descriptor_dataset(spec, 30, 55);
  REQUIRE(again.samples.size() == data.samples.size());
  for (std::size_t i = 0; i < data.samples.size(); ++i)
    REQUIRE(again.samples[i].features == data.samples[i].features);

  const auto other = sy::gen_descriptor_dataset(spec, 30, 56);
  REQUIRE(other.samples.front().features != data.samples.front().features);

  REQUIRE_THROWS_AS(sy::gen_descriptor_dataset(spec, 0, 1), std::invalid_argument);
}

TEST_CASE("dataset csv round trips", "[synth]") {
  auto spec = small_spec();
  spec.noise_std = 4.0;
  const auto data = sy::gen_descriptor_dataset(spec, 4, 61);
  const auto csv = sy::dataset_to_csv(data.samples, data.layout);
  REQUIRE(csv.rfind("# descriptor-dataset v1\n", 0) == 0);

  const auto parsed = sy::dataset_from_csv(csv);
  REQUIRE(parsed.feature_names == data.layout.names());
  REQUIRE(parsed.samples.size() == data.samples.size());
  for (std::size_t i = 0; i < parsed.samples.size(); ++i) {
    REQUIRE(parsed.samples[i].label == data.samples[i].label);
    REQUIRE(parsed.samples[i].features == data.samples[i].features);
  }

  REQUIRE_THROWS_AS(sy::dataset_from_csv("d,s\n1,2\n"), std::runtime_error);
  REQUIRE_THROWS_AS(sy::dataset_from_csv("label,d\nx,2\n"), std::runtime_error);
  REQUIRE_THROWS_AS(sy::dataset_from_csv("label,d\n-1,2\n"), std::runtime_error);
}

TEST_CASE("scene truth json reconstructs the exact masks", "[synth]") {
  auto spec = small_spec();
  spec.n_primary = 2;
  spec.n_chain = 1;
  spec.n_raspberry = 1;
  spec.raspberry_max = 9;
  spec.seed = 71;
  const auto truth = sy::render(spec);
  const auto j = sy::truth_to_json(truth);
  REQUIRE(j.at("schema_version").get<int>() == 1);

  const auto back = sy::truth_from_json(j);
  REQUIRE(back.labels.labels == truth.labels.labels);
  REQUIRE(back.mask.bits == truth.mask.bits);
  REQUIRE(back.classes == truth.classes);
  REQUIRE(back.labels.object_count == 4);

  auto bad = j;
  bad["classes"].erase(0);
  REQUIRE_THROWS_AS(sy::truth_from_json(bad), std::runtime_error);
  bad = j;
  bad.erase("objects");
  REQUIRE_THROWS_AS(sy::truth_from_json(bad), std::runtime_error);
  bad = j;
  bad["schema_version"] = 2;
  REQUIRE_THROWS_AS(sy::truth_from_json(bad), std::runtime_error);
}
