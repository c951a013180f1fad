// Command-line entry point: runs the measurement chain end to end or any
// stage in isolation. Artifacts are written atomically; every run emits a
// manifest whose only nondeterministic field is the timestamp.

#include <algorithm>
#include <array>
#include <chrono>
#include <clocale>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "agglo/classify.hpp"
#include "agglo/copula.hpp"
#include "agglo/core.hpp"
#include "agglo/descriptors.hpp"
#include "agglo/imaging.hpp"
#include "agglo/io.hpp"
#include "agglo/margins.hpp"
#include "agglo/pgm.hpp"
#include "agglo/rng.hpp"
#include "agglo/sensitivity.hpp"
#include "agglo/synth.hpp"
#include "agglo/temporal.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kAppVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Run manifest

struct Artifacts {
  json inputs = json::array();
  json outputs = json::array();

  void input(const fs::path& p) {
    inputs.push_back({{"path", p.string()}, {"hash", agglo::io::file_hash_hex(p)}});
  }
  void output(const fs::path& p) {
    outputs.push_back({{"path", p.string()}, {"hash", agglo::io::file_hash_hex(p)}});
  }
};

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const fs::path& out_dir, const std::string& command,
                    std::uint64_t seed, int threads, const json& settings,
                    const Artifacts& artifacts) {
  const json manifest = {{"schema_version", 1},
                         {"app_version", kAppVersion},
                         {"command", command},
                         {"timestamp", utc_timestamp()},
                         {"seed", seed},
                         {"threads", threads},
                         {"settings", settings},
                         {"settings_hash", agglo::io::hash_hex(settings.dump())},
                         {"inputs", artifacts.inputs},
                         {"outputs", artifacts.outputs}};
  agglo::io::atomic_write(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Shared helpers

// Input problems exit 2; anything thrown while computing or writing exits 3.
template <typename Load, typename Work>
int run_command(const char* name, Load&& load, Work&& work) {
  try {
    load();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "agglo %s: %s\n", name, e.what());
    return 2;
  }
  try {
    work();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "agglo %s: %s\n", name, e.what());
    return 3;
  }
  return 0;
}

json load_json_file(const fs::path& path) {
  try {
    return json::parse(agglo::io::read_file(path));
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": invalid json: " + e.what());
  }
}

std::size_t column_index(const agglo::io::Csv& csv, const std::string& name,
                         const std::string& origin) {
  for (std::size_t i = 0; i < csv.header.size(); ++i)
    if (csv.header[i] == name) return i;
  throw std::runtime_error(origin + ": missing required column '" + name + "'");
}

// Feature columns are everything except bookkeeping columns.
std::vector<std::size_t> feature_columns(const agglo::io::Csv& csv) {
  static const std::set<std::string> excluded{"region", "label", "predicted", "t"};
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < csv.header.size(); ++i)
    if (!excluded.count(csv.header[i])) out.push_back(i);
  return out;
}

std::string fingerprint_of(const agglo::io::Csv& csv,
                           const std::vector<std::size_t>& cols) {
  std::string joined;
  for (std::size_t k = 0; k < cols.size(); ++k) {
    if (k) joined.push_back(',');
    joined += csv.header[cols[k]];
  }
  return agglo::io::hash_hex(joined);
}

json labels_to_json(const agglo::LabelMap& lmap) {
  json runs = json::array();
  for (int r = 0; r < lmap.height; ++r) {
    int c = 0;
    while (c < lmap.width) {
      const auto id = lmap.get(r, c);
      if (id == 0) {
        ++c;
        continue;
      }
      int len = 1;
      while (c + len < lmap.width && lmap.get(r, c + len) == id) ++len;
      runs.push_back({r, c, len, id});
      c += len;
    }
  }
  return {{"schema_version", 1},
          {"width", lmap.width},
          {"height", lmap.height},
          {"object_count", lmap.object_count},
          {"runs", std::move(runs)}};
}

int env_or_flag_threads(int flag_value) { return std::max(1, flag_value); }

// ---------------------------------------------------------------------------
// Stage bodies. Each returns its artifacts so single commands and the
// pipeline share identical behavior.

struct SegmentParams {
  double strength = 100.0;
  int search_radius = 10;
  int patch_radius = 2;
  std::string polarity = "bright";
  int min_area = 5;
  double pitch = 15.0;
  int threads = 1;
};

struct SegmentOutput {
  agglo::GrayImage denoised;
  agglo::BinaryMask mask;
  agglo::LabelMap labels;
  std::vector<agglo::ObjectRegion> regions;
};

SegmentOutput segment_image(const agglo::GrayImage& img, const SegmentParams& p) {
  SegmentOutput out;
  out.denoised = agglo::imaging::nlmeans_denoise(img, p.strength, p.search_radius,
                                                 p.patch_radius, p.threads);
  if (p.polarity == "dark")
    for (double& v : out.denoised.pixels) v = 255.0 - v;
  const double eta = agglo::imaging::otsu_threshold(out.denoised);
  out.mask = agglo::imaging::binarize(out.denoised, eta);
  out.labels = agglo::imaging::label_components(out.mask);
  out.regions = agglo::imaging::extract_regions(out.labels, out.denoised, p.min_area);
  return out;
}

void run_segment(const std::vector<fs::path>& images, const fs::path& out_dir,
                 const SegmentParams& p, Artifacts& artifacts) {
  fs::create_directories(out_dir);
  for (const fs::path& path : images) {
    const auto img = agglo::pgm::read(path, p.pitch);
    artifacts.input(path);
    const auto seg = segment_image(img, p);
    const std::string stem = path.stem().string();

    const fs::path mask_path = out_dir / (stem + ".mask.pgm");
    agglo::io::atomic_write(mask_path, agglo::pgm::encode_mask(seg.mask));
    artifacts.output(mask_path);

    const fs::path labels_path = out_dir / (stem + ".labels.json");
    agglo::io::atomic_write(labels_path, labels_to_json(seg.labels).dump(2) + "\n");
    artifacts.output(labels_path);

    std::string csv = "# region-table v1\n";
    csv += "region,area_px,min_row,min_col,max_row,max_col,touches_border\n";
    for (const auto& reg : seg.regions) {
      csv += std::to_string(reg.label) + ',' + std::to_string(reg.area_px()) + ',' +
             std::to_string(reg.bbox.min_row) + ',' + std::to_string(reg.bbox.min_col) +
             ',' + std::to_string(reg.bbox.max_row) + ',' +
             std::to_string(reg.bbox.max_col) + ',' +
             (reg.touches_border ? "1" : "0") + '\n';
    }
    const fs::path regions_path = out_dir / (stem + ".regions.csv");
    agglo::io::atomic_write(regions_path, csv);
    artifacts.output(regions_path);
  }
}

std::string describe_to_csv(const agglo::GrayImage& img, const agglo::BinaryMask& mask,
                            int min_area) {
  const auto labels = agglo::imaging::label_components(mask);
  const auto regions = agglo::imaging::extract_regions(labels, img, min_area);
  const auto layout = agglo::descriptors::default_layout();
  std::string csv = "# descriptor-table v1\n";
  csv += "region," + layout.joined_names() + "\n";
  for (const auto& reg : regions) {
    const auto record = agglo::descriptors::compute_record(reg, img);
    csv += std::to_string(reg.label);
    for (const double v : layout.extract(record)) {
      csv += ',';
      csv += agglo::io::format_double(v);
    }
    csv += '\n';
  }
  return csv;
}

void run_describe(const std::vector<fs::path>& images, const fs::path& masks_dir,
                  const fs::path& out_dir, double pitch, int min_area,
                  Artifacts& artifacts) {
  fs::create_directories(out_dir);
  for (const fs::path& path : images) {
    const std::string stem = path.stem().string();
    const fs::path mask_path = masks_dir / (stem + ".mask.pgm");
    const auto img = agglo::pgm::read(path, pitch);
    const auto mask = agglo::pgm::read_mask(mask_path);
    artifacts.input(path);
    artifacts.input(mask_path);
    const fs::path csv_path = out_dir / (stem + ".descriptors.csv");
    agglo::io::atomic_write(csv_path, describe_to_csv(img, mask, min_area));
    artifacts.output(csv_path);
  }
}

struct TrainResult {
  agglo::classify::TrainedForest forest;
  double holdout_accuracy = 0.0;
  double reference_accuracy = 0.0;
  std::array<std::array<long long, 3>, 3> confusion{};
};

TrainResult train_on_samples(std::vector<agglo::classify::LabeledSample> samples,
                             const std::string& fingerprint, double holdout,
                             std::uint64_t seed, int threads) {
  if (samples.size() < 8)
    throw std::runtime_error("train: need at least 8 labeled samples");
  if (!(holdout > 0.0) || !(holdout < 1.0))
    throw std::runtime_error("train: holdout fraction must be in (0,1)");

  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  agglo::Rng rng(agglo::derive_seed(seed, "split", 0));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1],
              order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);

  const std::size_t held = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(holdout * static_cast<double>(samples.size()))));
  std::vector<agglo::classify::LabeledSample> train_set, test_set;
  for (std::size_t k = 0; k < order.size(); ++k)
    (k < held ? test_set : train_set).push_back(samples[order[k]]);

  const int features = static_cast<int>(train_set.front().features.size());
  const auto grid = agglo::classify::default_grid(features);
  const auto result = agglo::classify::grid_search(
      train_set, grid, agglo::derive_seed(seed, "train", 0), threads, fingerprint);

  TrainResult out;
  out.forest = result.forest;
  std::vector<int> predictions, truth;
  for (const auto& s : test_set) {
    predictions.push_back(agglo::classify::forest_predict(out.forest, s.features));
    truth.push_back(s.label);
  }
  out.confusion = agglo::classify::confusion_matrix(predictions, truth);
  long long correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    correct += predictions[i] == truth[i];
  out.holdout_accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  return out;
}

void run_train(const fs::path& data_path, const fs::path& out_dir, double holdout,
               std::uint64_t seed, int threads, Artifacts& artifacts) {
  const auto parsed = agglo::synth::dataset_from_csv(agglo::io::read_file(data_path),
                                                     data_path.string());
  artifacts.input(data_path);
  std::string joined;
  for (std::size_t i = 0; i < parsed.feature_names.size(); ++i) {
    if (i) joined.push_back(',');
    joined += parsed.feature_names[i];
  }
  const std::string fingerprint = agglo::io::hash_hex(joined);

  auto result = train_on_samples(parsed.samples, fingerprint, holdout, seed, threads);

  // Reference accuracy on the same data, when the needed columns exist.
  const auto find = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < parsed.feature_names.size(); ++i)
      if (parsed.feature_names[i] == name) return i;
    return std::nullopt;
  };
  const auto d_col = find("d"), e_col = find("e");
  if (d_col && e_col) {
    std::vector<double> ds, es;
    std::vector<int> labels;
    for (const auto& s : parsed.samples) {
      ds.push_back(s.features[*d_col]);
      es.push_back(s.features[*e_col]);
      labels.push_back(s.label);
    }
    const auto thresholds = agglo::classify::reference_train(ds, es, labels);
    long long correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
      correct += agglo::classify::reference_predict(ds[i], es[i], thresholds) == labels[i];
    result.reference_accuracy =
        static_cast<double>(correct) / static_cast<double>(labels.size());
  }

  fs::create_directories(out_dir);
  json forest_json = agglo::classify::forest_to_json(result.forest);
  const fs::path forest_path = out_dir / "forest.json";
  agglo::io::atomic_write(forest_path, forest_json.dump(2) + "\n");
  artifacts.output(forest_path);

  std::string csv = "# confusion-matrix v1\n";
  csv += "# holdout-accuracy " + agglo::io::format_double(result.holdout_accuracy) + "\n";
  if (d_col && e_col)
    csv += "# reference-accuracy " + agglo::io::format_double(result.reference_accuracy) +
           "\n";
  csv += "true_label,predicted_0,predicted_1,predicted_2\n";
  for (int t = 0; t < 3; ++t)
    csv += std::to_string(t) + ',' +
           std::to_string(result.confusion[static_cast<std::size_t>(t)][0]) + ',' +
           std::to_string(result.confusion[static_cast<std::size_t>(t)][1]) + ',' +
           std::to_string(result.confusion[static_cast<std::size_t>(t)][2]) + '\n';
  const fs::path confusion_path = out_dir / "confusion.csv";
  agglo::io::atomic_write(confusion_path, csv);
  artifacts.output(confusion_path);
}

std::string classify_csv(const agglo::io::Csv& csv,
                         const agglo::classify::TrainedForest& forest,
                         const std::string& origin) {
  const auto cols = feature_columns(csv);
  if (cols.empty()) throw std::runtime_error(origin + ": no feature columns");
  const std::string fingerprint = fingerprint_of(csv, cols);
  if (!forest.layout_fingerprint.empty() && forest.layout_fingerprint != fingerprint)
    throw std::runtime_error(origin + ": feature layout fingerprint " + fingerprint +
                             " does not match the model's " + forest.layout_fingerprint);

  std::string out = "# labeled-descriptors v1\n";
  out += "label";
  for (const std::size_t c : cols) out += ',' + csv.header[c];
  out += '\n';
  for (const auto& row : csv.rows) {
    agglo::classify::FeatureVector features;
    for (const std::size_t c : cols)
      features.push_back(agglo::io::parse_double(row[c], origin + ": feature value"));
    out += std::to_string(agglo::classify::forest_predict(forest, features));
    for (const std::size_t c : cols) {
      out += ',';
      out += row[c];
    }
    out += '\n';
  }
  return out;
}

void run_classify(const fs::path& data_path, const fs::path& model_path,
                  const fs::path& out_dir, Artifacts& artifacts) {
  const auto csv = agglo::io::load_csv(data_path);
  const auto forest = agglo::classify::forest_from_json(load_json_file(model_path));
  artifacts.input(data_path);
  artifacts.input(model_path);
  fs::create_directories(out_dir);
  const fs::path out_path = out_dir / "labeled.csv";
  agglo::io::atomic_write(out_path, classify_csv(csv, forest, data_path.string()));
  artifacts.output(out_path);
}

// Rows grouped by time step and class; steps with fewer than 5 objects of a
// class are skipped for that class.
struct FitInput {
  std::array<agglo::temporal::ClassTimeSeries, 3> per_class;
  std::vector<double> times;                        // all observed steps
  std::vector<agglo::temporal::ClassFractions> fractions;  // per observed step
  std::vector<double> step_counts;                  // objects per observed step
};

FitInput group_fit_rows(const agglo::io::Csv& csv, const std::string& origin) {
  const std::size_t t_col = column_index(csv, "t", origin);
  const std::size_t label_col = column_index(csv, "label", origin);
  const std::size_t d_col = column_index(csv, "d", origin);
  const std::size_t s_col = column_index(csv, "s", origin);
  const std::size_t a_col = column_index(csv, "a", origin);

  std::map<double, std::array<std::pair<std::vector<double>, std::vector<double>>, 3>> by_t;
  std::map<double, std::vector<std::pair<int, double>>> areas_by_t;
  for (const auto& row : csv.rows) {
    const double t = agglo::io::parse_double(row[t_col], origin + ": t");
    const double label_val = agglo::io::parse_double(row[label_col], origin + ": label");
    const int label = static_cast<int>(label_val);
    if (label < 0 || label > 2 || static_cast<double>(label) != label_val)
      throw std::runtime_error(origin + ": label must be 0, 1, or 2");
    const double d = agglo::io::parse_double(row[d_col], origin + ": d");
    const double s = agglo::io::parse_double(row[s_col], origin + ": s");
    const double a = agglo::io::parse_double(row[a_col], origin + ": a");
    auto& slot = by_t[t][static_cast<std::size_t>(label)];
    slot.first.push_back(d);
    slot.second.push_back(s);
    areas_by_t[t].emplace_back(label, a);
  }
  if (by_t.size() < 3)
    throw std::runtime_error(origin + ": need at least 3 distinct time steps");

  FitInput out;
  for (const auto& [t, per_label] : by_t) {
    out.times.push_back(t);
    out.fractions.push_back(agglo::temporal::class_fractions_step(areas_by_t[t]));
    out.step_counts.push_back(static_cast<double>(areas_by_t[t].size()));
    for (std::size_t cls = 0; cls < 3; ++cls) {
      const auto& [ds, ss] = per_label[cls];
      if (ds.size() < 5) continue;
      out.per_class[cls].times.push_back(t);
      out.per_class[cls].d.push_back(ds);
      out.per_class[cls].s.push_back(ss);
    }
  }
  return out;
}

void run_fit(const fs::path& data_path, const fs::path& out_dir, Artifacts& artifacts) {
  const auto csv = agglo::io::load_csv(data_path);
  const auto grouped = group_fit_rows(csv, data_path.string());
  artifacts.input(data_path);

  agglo::temporal::TimeSeriesModel model;
  model.t_min = grouped.times.front();
  model.t_max = grouped.times.back();

  json margins_json = {{"schema_version", 1}, {"classes", json::array()}};
  json copula_json = {{"schema_version", 1}, {"classes", json::array()}};
  for (std::size_t cls = 0; cls < 3; ++cls) {
    const auto& series = grouped.per_class[cls];
    if (series.times.size() < 3)
      throw std::runtime_error("fit: class " + std::to_string(cls) +
                               " has usable data at only " +
                               std::to_string(series.times.size()) +
                               " time steps; need 3");
    model.classes[cls] = agglo::temporal::fit_class_model(series, cls == 0);

    // Per-step margin and copula fits, for inspection and downstream reuse.
    const auto& cm = model.classes[cls];
    json margin_fits_d = json::array(), margin_fits_s = json::array();
    json copula_fits = json::array();
    const auto d_sel = agglo::margins::select_family(series.d, agglo::margins::diameter_support());
    const auto s_sel = agglo::margins::select_family(series.s, agglo::margins::solidity_support());
    for (std::size_t i = 0; i < series.times.size(); ++i) {
      margin_fits_d.push_back(agglo::margins::margin_to_json(d_sel.fits[i]));
      margin_fits_s.push_back(agglo::margins::margin_to_json(s_sel.fits[i]));
      if (cls != 0) {
        std::vector<std::pair<double, double>> pseudo;
        for (std::size_t k = 0; k < series.d[i].size(); ++k)
          pseudo.emplace_back(agglo::margins::cdf(d_sel.fits[i], series.d[i][k]),
                              agglo::margins::cdf(s_sel.fits[i], series.s[i][k]));
        copula_fits.push_back(agglo::copula::copula_to_json(
            agglo::copula::fit_theta(cm.copula_family, cm.copula_rotation, pseudo)));
      }
    }
    margins_json["classes"].push_back({{"label", cls},
                                       {"times", series.times},
                                       {"d", std::move(margin_fits_d)},
                                       {"s", std::move(margin_fits_s)}});
    json cop_entry = {{"label", cls}};
    if (cls == 0) {
      cop_entry["fits"] = nullptr;
    } else {
      cop_entry["family"] = agglo::copula::family_name(cm.copula_family);
      cop_entry["rotation"] = agglo::copula::rotation_degrees(cm.copula_rotation);
      cop_entry["times"] = series.times;
      cop_entry["fits"] = std::move(copula_fits);
    }
    copula_json["classes"].push_back(std::move(cop_entry));
  }

  // Fraction trajectories, weighted by how much data each step carries.
  std::vector<std::array<double, 3>> primary_pts, raspberry_pts;
  for (std::size_t i = 0; i < grouped.times.size(); ++i) {
    primary_pts.push_back(
        {grouped.times[i], grouped.fractions[i].primary, grouped.step_counts[i]});
    raspberry_pts.push_back(
        {grouped.times[i], grouped.fractions[i].raspberry, grouped.step_counts[i]});
  }
  model.primary_fraction = agglo::temporal::fit_curve_weighted(primary_pts);
  model.raspberry_fraction = agglo::temporal::fit_curve_weighted(raspberry_pts);

  fs::create_directories(out_dir);
  const fs::path margins_path = out_dir / "margins.json";
  agglo::io::atomic_write(margins_path, margins_json.dump(2) + "\n");
  artifacts.output(margins_path);
  const fs::path copula_path = out_dir / "copula.json";
  agglo::io::atomic_write(copula_path, copula_json.dump(2) + "\n");
  artifacts.output(copula_path);
  const fs::path curves_path = out_dir / "curves.json";
  agglo::io::atomic_write(curves_path,
                          agglo::temporal::time_series_to_json(model).dump(2) + "\n");
  artifacts.output(curves_path);
}

void run_predict(const fs::path& model_path, const fs::path& out_dir, double time,
                 int grid_size, Artifacts& artifacts) {
  const auto model = agglo::temporal::time_series_from_json(load_json_file(model_path));
  artifacts.input(model_path);
  if (grid_size < 2) throw std::runtime_error("predict: grid size must be at least 2");

  fs::create_directories(out_dir);
  const auto fractions = agglo::temporal::fractions_at_time(model, time);
  std::string frac_csv = "# class-fractions v1\n";
  frac_csv += "# time " + agglo::io::format_double(time) + "\n";
  frac_csv += "class,fraction\n";
  for (int cls = 0; cls < 3; ++cls)
    frac_csv += std::to_string(cls) + ',' +
                agglo::io::format_double(fractions[static_cast<std::size_t>(cls)]) + '\n';
  const fs::path frac_path = out_dir / "fractions.csv";
  agglo::io::atomic_write(frac_path, frac_csv);
  artifacts.output(frac_path);

  std::string density_csv = "# density-grid v1\n";
  density_csv += "# time " + agglo::io::format_double(time) + "\n";
  std::string flags;
  std::string body = "class,d,s,density\n";
  for (std::size_t cls = 0; cls < 3; ++cls) {
    const auto at = agglo::temporal::model_at_time(model.classes[cls], time, model.t_min,
                                                   model.t_max);
    if (at.extrapolated)
      flags += "# class " + std::to_string(cls) + " extrapolated\n";
    if (at.theta_clamped)
      flags += "# class " + std::to_string(cls) + " theta-clamped\n";
    const double d_lo = agglo::margins::quantile(at.model.margin_d, 0.005);
    const double d_hi = agglo::margins::quantile(at.model.margin_d, 0.995);
    const double s_lo = agglo::margins::quantile(at.model.margin_s, 0.005);
    const double s_hi = agglo::margins::quantile(at.model.margin_s, 0.995);
    for (int i = 0; i < grid_size; ++i) {
      const double d = d_lo + (d_hi - d_lo) * (i + 0.5) / grid_size;
      for (int j = 0; j < grid_size; ++j) {
        const double s = s_lo + (s_hi - s_lo) * (j + 0.5) / grid_size;
        body += std::to_string(cls) + ',' + agglo::io::format_double(d) + ',' +
                agglo::io::format_double(s) + ',' +
                agglo::io::format_double(agglo::copula::joint_density(at.model, d, s)) +
                '\n';
      }
    }
  }
  const fs::path density_path = out_dir / "density.csv";
  agglo::io::atomic_write(density_path, density_csv + flags + body);
  artifacts.output(density_path);
}

std::array<agglo::sensitivity::Observations, 3> sensitivity_data(
    const agglo::io::Csv& csv, const std::string& origin) {
  const std::size_t label_col = column_index(csv, "label", origin);
  const std::size_t d_col = column_index(csv, "d", origin);
  const std::size_t s_col = column_index(csv, "s", origin);
  std::array<agglo::sensitivity::Observations, 3> per_class;
  for (const auto& row : csv.rows) {
    const double label_val = agglo::io::parse_double(row[label_col], origin + ": label");
    const int label = static_cast<int>(label_val);
    if (label < 0 || label > 2 || static_cast<double>(label) != label_val)
      throw std::runtime_error(origin + ": label must be 0, 1, or 2");
    per_class[static_cast<std::size_t>(label)].emplace_back(
        agglo::io::parse_double(row[d_col], origin + ": d"),
        agglo::io::parse_double(row[s_col], origin + ": s"));
  }
  return per_class;
}

void run_sensitivity(const fs::path& data_path, const fs::path& out_dir,
                     const std::vector<int>& grid, int replicates, std::uint64_t seed,
                     int threads, Artifacts& artifacts) {
  const auto csv = agglo::io::load_csv(data_path);
  const auto per_class = sensitivity_data(csv, data_path.string());
  artifacts.input(data_path);
  const auto report = agglo::sensitivity::sensitivity_sweep(per_class, grid, replicates,
                                                            seed, threads);
  fs::create_directories(out_dir);
  const fs::path report_path = out_dir / "report.csv";
  agglo::io::atomic_write(report_path, agglo::sensitivity::report_to_csv(report));
  artifacts.output(report_path);
}

agglo::synth::SceneSpec scene_from_json(const json& j) {
  agglo::synth::SceneSpec s;
  s.width = j.value("width", s.width);
  s.height = j.value("height", s.height);
  s.pixel_pitch = j.value("pixel_pitch", s.pixel_pitch);
  s.n_primary = j.value("n_primary", s.n_primary);
  s.n_chain = j.value("n_chain", s.n_chain);
  s.n_raspberry = j.value("n_raspberry", s.n_raspberry);
  s.radius_min = j.value("radius_min", s.radius_min);
  s.radius_max = j.value("radius_max", s.radius_max);
  s.chain_spacing = j.value("chain_spacing", s.chain_spacing);
  s.chain_min = j.value("chain_min", s.chain_min);
  s.chain_max = j.value("chain_max", s.chain_max);
  s.raspberry_min = j.value("raspberry_min", s.raspberry_min);
  s.raspberry_max = j.value("raspberry_max", s.raspberry_max);
  s.raspberry_overlap = j.value("raspberry_overlap", s.raspberry_overlap);
  s.background = j.value("background", s.background);
  s.foreground = j.value("foreground", s.foreground);
  s.shading = j.value("shading", s.shading);
  s.noise_std = j.value("noise_std", s.noise_std);
  s.gap = j.value("gap", s.gap);
  s.allow_border = j.value("allow_border", s.allow_border);
  return s;
}

std::string scene_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%03d", index);
  return buf;
}

void run_synth(const json& spec, const fs::path& out_dir, std::uint64_t seed,
               Artifacts& artifacts) {
  if (spec.value("schema_version", 1) != 1)
    throw std::runtime_error("synth: unsupported spec schema version");
  const int scene_count = spec.value("scenes", 0);
  const int n_per_class = spec.contains("dataset")
                              ? spec.at("dataset").value("n_per_class", 0)
                              : 0;
  if (scene_count < 1 && n_per_class < 1)
    throw std::runtime_error("synth: spec requests neither scenes nor a dataset");
  auto scene = scene_from_json(spec.value("scene", json::object()));

  fs::create_directories(out_dir);
  for (int i = 0; i < scene_count; ++i) {
    scene.seed = agglo::derive_seed(seed, "scene", static_cast<std::uint64_t>(i));
    const auto truth = agglo::synth::render(scene);
    const fs::path img_path = out_dir / (scene_name(i) + ".pgm");
    agglo::io::atomic_write(img_path, agglo::pgm::encode(truth.image));
    artifacts.output(img_path);
    const fs::path truth_path = out_dir / (scene_name(i) + ".truth.json");
    agglo::io::atomic_write(truth_path,
                            agglo::synth::truth_to_json(truth).dump(2) + "\n");
    artifacts.output(truth_path);
  }
  if (n_per_class >= 1) {
    const auto data = agglo::synth::gen_descriptor_dataset(
        scene, n_per_class, agglo::derive_seed(seed, "dataset", 0));
    const fs::path data_path = out_dir / "dataset.csv";
    agglo::io::atomic_write(data_path,
                            agglo::synth::dataset_to_csv(data.samples, data.layout));
    artifacts.output(data_path);
  }
}

// ---------------------------------------------------------------------------
// Pipeline: the composition of the stages above on synthetic input.

void run_pipeline(const json& config, const fs::path& out_dir, std::uint64_t seed,
                  int threads, Artifacts& artifacts) {
  if (config.value("schema_version", 1) != 1)
    throw std::runtime_error("pipeline: unsupported config schema version");
  const auto& synth_cfg = config.at("synth");
  const std::vector<double> times = config.at("times").get<std::vector<double>>();
  if (times.size() < 3 || !std::is_sorted(times.begin(), times.end()))
    throw std::runtime_error("pipeline: times must be at least 3 ascending steps");

  // Growth factor applied to disk radii so later steps carry larger objects.
  const auto radius_scale = [](double t) { return 1.25 * (1.0 - 0.45 * std::exp(-0.02 * t)); };

  // Stage 1: synthetic scenes per time step.
  const auto base_scene = scene_from_json(synth_cfg.value("scene", json::object()));
  const int scenes_per_step = synth_cfg.value("scenes_per_step", 2);
  if (scenes_per_step < 1)
    throw std::runtime_error("pipeline: scenes_per_step must be positive");
  const fs::path synth_dir = out_dir / "synth";
  fs::create_directories(synth_dir);
  struct SceneRef {
    double t;
    fs::path image;
  };
  std::vector<SceneRef> scene_refs;
  for (std::size_t ti = 0; ti < times.size(); ++ti) {
    for (int k = 0; k < scenes_per_step; ++k) {
      auto scene = base_scene;
      const double scale = radius_scale(times[ti]);
      scene.radius_min *= scale;
      scene.radius_max *= scale;
      scene.seed = agglo::derive_seed(seed, "scene",
                                      ti * 1000 + static_cast<std::uint64_t>(k));
      const auto truth = agglo::synth::render(scene);
      const std::string name = "t" + agglo::io::format_double(times[ti]) + "_" +
                               scene_name(k);
      const fs::path img_path = synth_dir / (name + ".pgm");
      agglo::io::atomic_write(img_path, agglo::pgm::encode(truth.image));
      artifacts.output(img_path);
      const fs::path truth_path = synth_dir / (name + ".truth.json");
      agglo::io::atomic_write(truth_path,
                              agglo::synth::truth_to_json(truth).dump(2) + "\n");
      artifacts.output(truth_path);
      scene_refs.push_back({times[ti], img_path});
    }
  }

  // Stage 2 + 3: segmentation and descriptors for every scene.
  SegmentParams seg_params;
  seg_params.strength = config.value("segment", json::object()).value("strength", 100.0);
  seg_params.search_radius =
      config.value("segment", json::object()).value("search_radius", 10);
  seg_params.patch_radius =
      config.value("segment", json::object()).value("patch_radius", 2);
  seg_params.min_area = config.value("segment", json::object()).value("min_area", 20);
  seg_params.pitch = base_scene.pixel_pitch;
  seg_params.threads = threads;
  const fs::path seg_dir = out_dir / "segment";
  const fs::path desc_dir = out_dir / "describe";
  fs::create_directories(seg_dir);
  fs::create_directories(desc_dir);
  std::vector<std::pair<double, fs::path>> desc_files;
  for (const auto& ref : scene_refs) {
    run_segment({ref.image}, seg_dir, seg_params, artifacts);
    const std::string stem = ref.image.stem().string();
    run_describe({ref.image}, seg_dir, desc_dir, seg_params.pitch, seg_params.min_area,
                 artifacts);
    desc_files.emplace_back(ref.t, desc_dir / (stem + ".descriptors.csv"));
  }

  // Stage 4: train on a synthetic labeled dataset drawn from the same family.
  const int n_per_class = synth_cfg.value("dataset", json::object()).value("n_per_class", 150);
  const auto data = agglo::synth::gen_descriptor_dataset(
      base_scene, n_per_class, agglo::derive_seed(seed, "dataset", 0));
  const fs::path train_dir = out_dir / "train";
  fs::create_directories(train_dir);
  const fs::path dataset_path = train_dir / "dataset.csv";
  agglo::io::atomic_write(dataset_path,
                          agglo::synth::dataset_to_csv(data.samples, data.layout));
  artifacts.output(dataset_path);
  run_train(dataset_path, train_dir, config.value("train", json::object()).value("holdout", 0.25),
            agglo::derive_seed(seed, "train-stage", 0), threads, artifacts);

  // Stage 5: classify every described region and assemble the fit table.
  const auto forest =
      agglo::classify::forest_from_json(load_json_file(train_dir / "forest.json"));
  std::string fit_csv = "# labeled-time-table v1\n";
  fit_csv += "t,label,d,s,a\n";
  for (const auto& [t, desc_path] : desc_files) {
    const auto csv = agglo::io::load_csv(desc_path);
    const auto cols = feature_columns(csv);
    const std::string fingerprint = fingerprint_of(csv, cols);
    if (forest.layout_fingerprint != fingerprint)
      throw std::runtime_error("pipeline: descriptor columns do not match the model");
    const std::size_t d_col = column_index(csv, "d", desc_path.string());
    const std::size_t s_col = column_index(csv, "s", desc_path.string());
    const std::size_t a_col = column_index(csv, "a", desc_path.string());
    for (const auto& row : csv.rows) {
      agglo::classify::FeatureVector features;
      for (const std::size_t c : cols)
        features.push_back(agglo::io::parse_double(row[c], "pipeline feature"));
      const int label = agglo::classify::forest_predict(forest, features);
      fit_csv += agglo::io::format_double(t) + ',' + std::to_string(label) + ',' +
                 row[d_col] + ',' + row[s_col] + ',' + row[a_col] + '\n';
    }
  }
  const fs::path classify_dir = out_dir / "classify";
  fs::create_directories(classify_dir);
  const fs::path fit_input_path = classify_dir / "labeled_time.csv";
  agglo::io::atomic_write(fit_input_path, fit_csv);
  artifacts.output(fit_input_path);

  // Stage 6: temporal fit.
  const fs::path fit_dir = out_dir / "fit";
  run_fit(fit_input_path, fit_dir, artifacts);

  // Stage 7: density prediction at configured times.
  const std::vector<double> predict_times =
      config.value("predict", json::object())
          .value("times", std::vector<double>{0.5 * (times.front() + times.back())});
  for (std::size_t i = 0; i < predict_times.size(); ++i) {
    run_predict(fit_dir / "curves.json",
                out_dir / ("predict_" + agglo::io::format_double(predict_times[i])),
                predict_times[i],
                config.value("predict", json::object()).value("grid_size", 32), artifacts);
  }

  // Stage 8: bootstrap sensitivity on the final time step.
  const auto sens_cfg = config.value("sensitivity", json::object());
  std::vector<int> grid = sens_cfg.value("grid", std::vector<int>{5, 10, 20});
  const int replicates = sens_cfg.value("replicates", 50);
  std::string sens_csv = "# labeled-descriptors v1\nlabel,d,s\n";
  {
    const auto csv = agglo::io::load_csv(fit_input_path);
    const std::size_t t_col = column_index(csv, "t", "pipeline");
    const std::size_t label_col = column_index(csv, "label", "pipeline");
    const std::size_t d_col = column_index(csv, "d", "pipeline");
    const std::size_t s_col = column_index(csv, "s", "pipeline");
    const double t_last = times.back();
    for (const auto& row : csv.rows)
      if (agglo::io::parse_double(row[t_col], "pipeline t") == t_last)
        sens_csv += row[label_col] + ',' + row[d_col] + ',' + row[s_col] + '\n';
  }
  const fs::path sens_dir = out_dir / "sensitivity";
  fs::create_directories(sens_dir);
  const fs::path sens_input = sens_dir / "input.csv";
  agglo::io::atomic_write(sens_input, sens_csv);
  artifacts.output(sens_input);
  run_sensitivity(sens_input, sens_dir, grid, replicates,
                  agglo::derive_seed(seed, "sensitivity-stage", 0), threads, artifacts);
}

}  // namespace

// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
  std::setlocale(LC_ALL, "C");
  CLI::App app{"agglomerate characterization pipeline"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  int threads = 1;
  std::string out_dir;

  // segment
  auto* seg = app.add_subcommand("segment", "denoise, threshold, and label images");
  std::vector<std::string> seg_images;
  SegmentParams seg_params;
  seg->add_option("images", seg_images, "input PGM images")->required()->expected(-1);
  seg->add_option("--out", out_dir, "output directory")->required();
  seg->add_option("--strength", seg_params.strength, "denoise filtering strength");
  seg->add_option("--search-radius", seg_params.search_radius, "denoise search radius");
  seg->add_option("--patch-radius", seg_params.patch_radius, "denoise patch radius");
  seg->add_option("--polarity", seg_params.polarity, "object polarity")
      ->check(CLI::IsMember({"bright", "dark"}));
  seg->add_option("--min-area", seg_params.min_area, "minimum region area, px");
  seg->add_option("--pitch", seg_params.pitch, "pixel pitch, micrometers");
  seg->add_option("--threads", threads, "worker threads")->envname("AGGLO_THREADS");

  // describe
  auto* desc = app.add_subcommand("describe", "compute descriptors for masked images");
  std::vector<std::string> desc_images;
  std::string masks_dir;
  double desc_pitch = 15.0;
  int desc_min_area = 5;
  desc->add_option("images", desc_images, "input PGM images")->required()->expected(-1);
  desc->add_option("--masks", masks_dir, "directory holding <stem>.mask.pgm files")
      ->required();
  desc->add_option("--out", out_dir, "output directory")->required();
  desc->add_option("--pitch", desc_pitch, "pixel pitch, micrometers");
  desc->add_option("--min-area", desc_min_area, "minimum region area, px");

  // train
  auto* train = app.add_subcommand("train", "grid-search a random forest");
  std::string train_data;
  double holdout = 0.25;
  train->add_option("--data", train_data, "labeled descriptor CSV")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--holdout", holdout, "held-out fraction for evaluation");
  train->add_option("--seed", seed, "global seed")->envname("AGGLO_SEED");
  train->add_option("--threads", threads, "worker threads")->envname("AGGLO_THREADS");

  // classify
  auto* cls = app.add_subcommand("classify", "label descriptor rows with a trained forest");
  std::string cls_data, cls_model;
  cls->add_option("--data", cls_data, "descriptor CSV")->required();
  cls->add_option("--model", cls_model, "forest JSON")->required();
  cls->add_option("--out", out_dir, "output directory")->required();

  // fit
  auto* fit = app.add_subcommand("fit", "fit time-resolved bivariate models");
  std::string fit_data;
  fit->add_option("--data", fit_data, "labeled CSV with t,label,d,s,a columns")->required();
  fit->add_option("--out", out_dir, "output directory")->required();

  // predict
  auto* pred = app.add_subcommand("predict", "evaluate fitted models at a time step");
  std::string pred_model;
  double pred_time = 0.0;
  int pred_grid = 64;
  pred->add_option("--model", pred_model, "curves JSON from fit")->required();
  pred->add_option("--time", pred_time, "time step, minutes")->required();
  pred->add_option("--grid-size", pred_grid, "density grid resolution");
  pred->add_option("--out", out_dir, "output directory")->required();

  // sensitivity
  auto* sens = app.add_subcommand("sensitivity", "bootstrap sensitivity sweep");
  std::string sens_data;
  std::vector<int> sens_grid;
  int sens_replicates = 1000;
  sens->add_option("--data", sens_data, "labeled CSV with label,d,s columns")->required();
  sens->add_option("--out", out_dir, "output directory")->required();
  sens->add_option("--grid", sens_grid, "bootstrap sizes (default 5,20,...,140)");
  sens->add_option("--replicates", sens_replicates, "replicates per size");
  sens->add_option("--seed", seed, "global seed")->envname("AGGLO_SEED");
  sens->add_option("--threads", threads, "worker threads")->envname("AGGLO_THREADS");

  // synth
  auto* synth = app.add_subcommand("synth", "render synthetic scenes and datasets");
  std::string synth_spec;
  synth->add_option("--spec", synth_spec, "scene spec JSON")->required();
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--seed", seed, "global seed")->envname("AGGLO_SEED");

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "run every stage on synthetic input");
  std::string pipe_config;
  pipe->add_option("--config", pipe_config, "pipeline config JSON")->required();
  pipe->add_option("--out", out_dir, "output directory")->required();
  pipe->add_option("--seed", seed, "global seed")->envname("AGGLO_SEED");
  pipe->add_option("--threads", threads, "worker threads")->envname("AGGLO_THREADS");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  threads = env_or_flag_threads(threads);

  Artifacts artifacts;
  const fs::path out_path = out_dir;

  if (app.got_subcommand(seg)) {
    std::vector<fs::path> paths(seg_images.begin(), seg_images.end());
    return run_command(
        "segment",
        [&] {
          for (const auto& p : paths)
            if (!fs::exists(p)) throw std::runtime_error(p.string() + ": no such file");
          seg_params.threads = threads;
        },
        [&] {
          run_segment(paths, out_path, seg_params, artifacts);
          const json settings = {{"strength", seg_params.strength},
                                 {"search_radius", seg_params.search_radius},
                                 {"patch_radius", seg_params.patch_radius},
                                 {"polarity", seg_params.polarity},
                                 {"min_area", seg_params.min_area},
                                 {"pitch", seg_params.pitch}};
          write_manifest(out_path, "segment", seed, threads, settings, artifacts);
        });
  }
  if (app.got_subcommand(desc)) {
    std::vector<fs::path> paths(desc_images.begin(), desc_images.end());
    return run_command(
        "describe",
        [&] {
          for (const auto& p : paths)
            if (!fs::exists(p)) throw std::runtime_error(p.string() + ": no such file");
          if (!fs::exists(masks_dir))
            throw std::runtime_error(masks_dir + ": no such directory");
        },
        [&] {
          run_describe(paths, masks_dir, out_path, desc_pitch, desc_min_area, artifacts);
          const json settings = {{"pitch", desc_pitch}, {"min_area", desc_min_area}};
          write_manifest(out_path, "describe", seed, threads, settings, artifacts);
        });
  }
  if (app.got_subcommand(train)) {
    return run_command(
        "train",
        [&] {
          if (!fs::exists(train_data))
            throw std::runtime_error(train_data + ": no such file");
          if (!(holdout > 0.0) || !(holdout < 1.0))
            throw std::runtime_error("holdout fraction must be in (0,1)");
        },
        [&] {
          run_train(train_data, out_path, holdout, seed, threads, artifacts);
          const json settings = {{"holdout", holdout}};
          write_manifest(out_path, "train", seed, threads, settings, artifacts);
        });
  }
  if (app.got_subcommand(cls)) {
    return run_command(
        "classify",
        [&] {
          if (!fs::exists(cls_data)) throw std::runtime_error(cls_data + ": no such file");
          if (!fs::exists(cls_model))
            throw std::runtime_error(cls_model + ": no such file");
          // Schema problems in the inputs are input errors, not numeric ones.
          const auto csv = agglo::io::load_csv(cls_data);
          const auto forest =
              agglo::classify::forest_from_json(load_json_file(cls_model));
          const auto cols = feature_columns(csv);
          if (cols.empty()) throw std::runtime_error(cls_data + ": no feature columns");
          const std::string fp = fingerprint_of(csv, cols);
          if (!forest.layout_fingerprint.empty() && forest.layout_fingerprint != fp)
            throw std::runtime_error(cls_data + ": feature layout fingerprint " + fp +
                                     " does not match the model's " +
                                     forest.layout_fingerprint);
        },
        [&] {
          run_classify(cls_data, cls_model, out_path, artifacts);
          write_manifest(out_path, "classify", seed, threads, json::object(), artifacts);
        });
  }
  if (app.got_subcommand(fit)) {
    return run_command(
        "fit",
        [&] {
          if (!fs::exists(fit_data)) throw std::runtime_error(fit_data + ": no such file");
          group_fit_rows(agglo::io::load_csv(fit_data), fit_data);
        },
        [&] {
          run_fit(fit_data, out_path, artifacts);
          write_manifest(out_path, "fit", seed, threads, json::object(), artifacts);
        });
  }
  if (app.got_subcommand(pred)) {
    return run_command(
        "predict",
        [&] {
          if (!fs::exists(pred_model))
            throw std::runtime_error(pred_model + ": no such file");
          if (!(std::isfinite(pred_time)))
            throw std::runtime_error("time must be finite");
        },
        [&] {
          run_predict(pred_model, out_path, pred_time, pred_grid, artifacts);
          const json settings = {{"time", pred_time}, {"grid_size", pred_grid}};
          write_manifest(out_path, "predict", seed, threads, settings, artifacts);
        });
  }
  if (app.got_subcommand(sens)) {
    if (sens_grid.empty()) sens_grid = agglo::sensitivity::default_grid();
    return run_command(
        "sensitivity",
        [&] {
          if (!fs::exists(sens_data))
            throw std::runtime_error(sens_data + ": no such file");
          const auto per_class =
              sensitivity_data(agglo::io::load_csv(sens_data), sens_data);
          const int max_nb = *std::max_element(sens_grid.begin(), sens_grid.end());
          for (std::size_t c = 0; c < 3; ++c)
            if (!per_class[c].empty() &&
                static_cast<int>(per_class[c].size()) < max_nb)
              throw std::runtime_error(sens_data + ": class " + std::to_string(c) +
                                       " has fewer rows than the largest grid size");
        },
        [&] {
          run_sensitivity(sens_data, out_path, sens_grid, sens_replicates, seed, threads,
                          artifacts);
          const json settings = {{"grid", sens_grid}, {"replicates", sens_replicates}};
          write_manifest(out_path, "sensitivity", seed, threads, settings, artifacts);
        });
  }
  if (app.got_subcommand(synth)) {
    json spec;
    return run_command(
        "synth",
        [&] {
          if (!fs::exists(synth_spec))
            throw std::runtime_error(synth_spec + ": no such file");
          spec = load_json_file(synth_spec);
        },
        [&] {
          Artifacts local;
          local.input(synth_spec);
          run_synth(spec, out_path, seed, local);
          write_manifest(out_path, "synth", seed, threads,
                         json{{"spec", spec}}, local);
        });
  }
  if (app.got_subcommand(pipe)) {
    json config;
    return run_command(
        "pipeline",
        [&] {
          if (!fs::exists(pipe_config))
            throw std::runtime_error(pipe_config + ": no such file");
          config = load_json_file(pipe_config);
          if (!config.contains("synth") || !config.contains("times"))
            throw std::runtime_error(pipe_config + ": config needs synth and times");
        },
        [&] {
          Artifacts local;
          local.input(pipe_config);
          fs::create_directories(out_path);
          run_pipeline(config, out_path, seed, threads, local);
          write_manifest(out_path, "pipeline", seed, threads,
                         json{{"config", config}}, local);
        });
  }
  return 2;
}
