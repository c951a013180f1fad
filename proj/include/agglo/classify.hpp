#pragma once

// Random-forest object classifier (0 = primary particle, 1 = chain-like,
// 2 = raspberry-like), a two-threshold reference classifier, and evaluation
// reports. Trees are CART with gini impurity; each tree draws one random
// feature subset (no sample bootstrap).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "agglo/rng.hpp"

namespace agglo::classify {

inline constexpr int kClassCount = 3;

using FeatureVector = std::vector<double>;

struct LabeledSample {
  FeatureVector features;
  int label = 0;
};

// Summed child impurity of a candidate split; lower is better.
struct Split {
  int feature = -1;
  double threshold = 0.0;
  double quality = 0.0;
};

inline double gini(const std::array<long long, 3>& class_counts) {
  const long long total = class_counts[0] + class_counts[1] + class_counts[2];
  if (total <= 0) throw std::invalid_argument("gini: empty sample set");
  double g = 0.0;
  for (const long long c : class_counts) {
    const double q = static_cast<double>(c) / static_cast<double>(total);
    g += q * (1.0 - q);
  }
  return g;
}

namespace detail {

inline void validate_samples(const std::vector<LabeledSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("classify: empty sample set");
  const std::size_t width = samples.front().features.size();
  if (width == 0) throw std::invalid_argument("classify: zero-length feature vectors");
  for (const LabeledSample& s : samples) {
    if (s.features.size() != width)
      throw std::invalid_argument("classify: inconsistent feature vector lengths");
    if (s.label < 0 || s.label >= kClassCount)
      throw std::invalid_argument("classify: label out of range");
    for (const double v : s.features)
      if (!std::isfinite(v)) throw std::invalid_argument("classify: non-finite feature value");
  }
}

// Sorted, deduplicated feature subset checked against the vector width.
inline std::vector<int> normalize_subset(std::vector<int> subset, std::size_t width) {
  std::sort(subset.begin(), subset.end());
  subset.erase(std::unique(subset.begin(), subset.end()), subset.end());
  if (subset.empty()) throw std::invalid_argument("classify: empty feature subset");
  if (subset.front() < 0 || static_cast<std::size_t>(subset.back()) >= width)
    throw std::invalid_argument("classify: feature index out of range");
  return subset;
}

inline std::array<long long, 3> count_labels(const std::vector<LabeledSample>& samples,
                                             const int* idx, int n) {
  std::array<long long, 3> counts{0, 0, 0};
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(samples[idx[i]].label)];
  return counts;
}

// Smaller label wins ties.
inline int majority_label(const std::array<long long, 3>& counts) {
  int best = 0;
  for (int k = 1; k < kClassCount; ++k)
    if (counts[k] > counts[best]) best = k;
  return best;
}

// Midpoint between consecutive distinct sorted values, clamped below the
// upper value so that "x <= threshold" reproduces the sorted-group partition
// even when the midpoint rounds up onto the upper value.
inline double split_threshold(double lo, double hi) {
  double mid = lo + (hi - lo) / 2.0;
  if (!(mid < hi)) mid = lo;
  return mid;
}

// Exhaustive scan over features (ascending) and group boundaries (ascending);
// strict improvement keeps the smallest feature index, then smallest
// threshold, on quality ties. Returns nothing for pure or unsplittable spans.
inline std::optional<Split> best_split_span(const std::vector<LabeledSample>& samples,
                                            const int* idx, int n,
                                            const std::vector<int>& feature_subset,
                                            std::vector<std::pair<double, int>>& scratch) {
  if (n < 2) return std::nullopt;
  const std::array<long long, 3> total = count_labels(samples, idx, n);
  int nonzero = 0;
  for (const long long c : total) nonzero += c > 0;
  if (nonzero < 2) return std::nullopt;

  std::optional<Split> best;
  for (const int j : feature_subset) {
    scratch.clear();
    for (int i = 0; i < n; ++i) {
      const LabeledSample& s = samples[idx[i]];
      scratch.emplace_back(s.features[static_cast<std::size_t>(j)], s.label);
    }
    std::sort(scratch.begin(), scratch.end());

    std::array<long long, 3> left{0, 0, 0};
    long long n_left = 0;
    int i = 0;
    while (i < n) {
      const double value = scratch[static_cast<std::size_t>(i)].first;
      while (i < n && scratch[static_cast<std::size_t>(i)].first == value) {
        ++left[static_cast<std::size_t>(scratch[static_cast<std::size_t>(i)].second)];
        ++n_left;
        ++i;
      }
      if (i == n) break;
      const std::array<long long, 3> right{total[0] - left[0], total[1] - left[1],
                                           total[2] - left[2]};
      const long long n_right = n - n_left;
      const double quality = gini(left) * static_cast<double>(n_left) +
                             gini(right) * static_cast<double>(n_right);
      if (!best || quality < best->quality) {
        best = Split{j, split_threshold(value, scratch[static_cast<std::size_t>(i)].first),
                     quality};
      }
    }
  }
  return best;
}

}  // namespace detail

inline std::optional<Split> best_split(const std::vector<LabeledSample>& samples,
                                       std::vector<int> feature_subset) {
  detail::validate_samples(samples);
  if (samples.size() < 2) throw std::invalid_argument("best_split: need at least two samples");
  feature_subset = detail::normalize_subset(std::move(feature_subset),
                                            samples.front().features.size());
  std::vector<int> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<std::pair<double, int>> scratch;
  return detail::best_split_span(samples, idx.data(), static_cast<int>(idx.size()),
                                 feature_subset, scratch);
}

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int label = -1;  // valid at leaves
};

// Stored with pass-through subtrees below pure or unsplittable nodes collapsed
// to single leaves; predictions equal those of the equal-depth tree in which
// such nodes are padded with children repeating the majority label.
struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  int depth = 0;
  std::vector<int> feature_subset;

  int predict(const FeatureVector& x) const {
    int at = 0;
    while (nodes[static_cast<std::size_t>(at)].feature >= 0) {
      const TreeNode& node = nodes[static_cast<std::size_t>(at)];
      at = x[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left : node.right;
    }
    return nodes[static_cast<std::size_t>(at)].label;
  }
};

namespace detail {

inline int build_node(const std::vector<LabeledSample>& samples, std::vector<int>& idx, int lo,
                      int hi, int depth_left, const std::vector<int>& feature_subset,
                      std::vector<std::pair<double, int>>& scratch,
                      std::vector<TreeNode>& nodes) {
  const std::array<long long, 3> counts = count_labels(samples, idx.data() + lo, hi - lo);
  std::optional<Split> split;
  if (depth_left > 0)
    split = best_split_span(samples, idx.data() + lo, hi - lo, feature_subset, scratch);

  const int self = static_cast<int>(nodes.size());
  nodes.push_back(TreeNode{});
  if (!split) {
    nodes[static_cast<std::size_t>(self)].label = majority_label(counts);
    return self;
  }
  const int j = split->feature;
  const double threshold = split->threshold;
  const auto mid_it = std::stable_partition(
      idx.begin() + lo, idx.begin() + hi, [&](int i) {
        return samples[static_cast<std::size_t>(i)].features[static_cast<std::size_t>(j)] <=
               threshold;
      });
  const int mid = static_cast<int>(mid_it - idx.begin());
  const int left = build_node(samples, idx, lo, mid, depth_left - 1, feature_subset, scratch,
                              nodes);
  const int right = build_node(samples, idx, mid, hi, depth_left - 1, feature_subset, scratch,
                               nodes);
  TreeNode& node = nodes[static_cast<std::size_t>(self)];
  node.feature = j;
  node.threshold = threshold;
  node.left = left;
  node.right = right;
  return self;
}

}  // namespace detail

inline DecisionTree build_tree(const std::vector<LabeledSample>& samples, int max_depth,
                               std::vector<int> feature_subset) {
  detail::validate_samples(samples);
  if (max_depth < 0) throw std::invalid_argument("build_tree: negative depth");
  DecisionTree tree;
  tree.depth = max_depth;
  tree.feature_subset =
      detail::normalize_subset(std::move(feature_subset), samples.front().features.size());
  std::vector<int> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<std::pair<double, int>> scratch;
  detail::build_node(samples, idx, 0, static_cast<int>(idx.size()), max_depth,
                     tree.feature_subset, scratch, tree.nodes);
  return tree;
}

struct ForestHyperparams {
  int tree_count = 100;
  int max_depth = 5;
  int subset_size = 5;
};

struct TrainedForest {
  std::vector<DecisionTree> trees;
  ForestHyperparams hyperparams;
  std::uint64_t seed = 0;
  std::size_t feature_count = 0;
  std::string layout_fingerprint;  // empty when the model is not bound to a layout
};

// Per-tree seeds derive from (seed, tree index), so any thread count produces
// the identical forest.
inline TrainedForest train_forest(const std::vector<LabeledSample>& samples, int tree_count,
                                  int max_depth, int subset_size, std::uint64_t seed,
                                  int threads = 1, const std::string& layout_fingerprint = {}) {
  detail::validate_samples(samples);
  const int width = static_cast<int>(samples.front().features.size());
  if (tree_count < 1) throw std::invalid_argument("train_forest: tree_count must be positive");
  if (max_depth < 1) throw std::invalid_argument("train_forest: max_depth must be positive");
  if (subset_size < 1 || subset_size > width)
    throw std::invalid_argument("train_forest: subset_size out of range");

  TrainedForest forest;
  forest.hyperparams = ForestHyperparams{tree_count, max_depth, subset_size};
  forest.seed = seed;
  forest.feature_count = static_cast<std::size_t>(width);
  forest.layout_fingerprint = layout_fingerprint;
  forest.trees.resize(static_cast<std::size_t>(tree_count));

  const auto build_one = [&](int b) {
    Rng rng(derive_seed(seed, "tree", static_cast<std::uint64_t>(b)));
    std::vector<int> subset = rng.sample_without_replacement(width, subset_size);
    forest.trees[static_cast<std::size_t>(b)] = build_tree(samples, max_depth, std::move(subset));
  };

  if (threads <= 1 || tree_count == 1) {
    for (int b = 0; b < tree_count; ++b) build_one(b);
  } else {
    const int workers = std::min(threads, tree_count);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (int b = w; b < tree_count; b += workers) build_one(b);
      });
    for (std::thread& t : pool) t.join();
  }
  return forest;
}

inline int forest_predict(const TrainedForest& forest, const FeatureVector& features) {
  if (forest.trees.empty()) throw std::invalid_argument("forest_predict: empty forest");
  if (features.size() != forest.feature_count)
    throw std::invalid_argument("forest_predict: feature vector length mismatch");
  std::array<int, kClassCount> votes{0, 0, 0};
  for (const DecisionTree& tree : forest.trees)
    ++votes[static_cast<std::size_t>(tree.predict(features))];
  int best = 0;
  for (int k = 1; k < kClassCount; ++k)
    if (votes[static_cast<std::size_t>(k)] > votes[static_cast<std::size_t>(best)]) best = k;
  return best;
}

inline int forest_predict_checked(const TrainedForest& forest,
                                  const std::string& layout_fingerprint,
                                  const FeatureVector& features) {
  if (forest.layout_fingerprint != layout_fingerprint)
    throw std::runtime_error("forest_predict: feature layout fingerprint mismatch");
  return forest_predict(forest, features);
}

inline double forest_accuracy(const TrainedForest& forest,
                              const std::vector<LabeledSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("forest_accuracy: empty sample set");
  long long correct = 0;
  for (const LabeledSample& s : samples)
    correct += forest_predict(forest, s.features) == s.label;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

struct SearchGrid {
  std::vector<int> tree_counts;
  std::vector<int> max_depths;
  std::vector<int> subset_sizes;
};

inline SearchGrid default_grid(int feature_count) {
  return SearchGrid{{50, 100, 200}, {3, 5, 7, feature_count}, {5, feature_count}};
}

struct GridSearchResult {
  ForestHyperparams best;
  double train_accuracy = 0.0;
  TrainedForest forest;
};

// Exhaustive search selecting the highest training accuracy; ties resolve to
// fewer trees, then smaller depth, then smaller subset. Each combination gets
// a seed derived from its hyperparameters, so grid order never matters.
inline GridSearchResult grid_search(const std::vector<LabeledSample>& train,
                                    const SearchGrid& grid, std::uint64_t seed, int threads = 1,
                                    const std::string& layout_fingerprint = {}) {
  if (grid.tree_counts.empty() || grid.max_depths.empty() || grid.subset_sizes.empty())
    throw std::invalid_argument("grid_search: empty grid dimension");
  const auto ascending_unique = [](std::vector<int> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
  };
  const std::vector<int> tree_counts = ascending_unique(grid.tree_counts);
  const std::vector<int> depths = ascending_unique(grid.max_depths);
  const std::vector<int> subsets = ascending_unique(grid.subset_sizes);

  GridSearchResult out;
  bool have = false;
  for (const int b : tree_counts)
    for (const int d : depths)
      for (const int m : subsets) {
        const std::uint64_t combo = (static_cast<std::uint64_t>(b) << 32) |
                                    (static_cast<std::uint64_t>(d) << 16) |
                                    static_cast<std::uint64_t>(m);
        TrainedForest forest = train_forest(train, b, d, m, derive_seed(seed, "grid", combo),
                                            threads, layout_fingerprint);
        const double accuracy = forest_accuracy(forest, train);
        if (!have || accuracy > out.train_accuracy) {
          out.best = forest.hyperparams;
          out.train_accuracy = accuracy;
          out.forest = std::move(forest);
          have = true;
        }
      }
  return out;
}

struct ReferenceThresholds {
  double d_threshold = 0.0;
  double e_threshold = 0.0;
};

inline int reference_predict(double d, double e, const ReferenceThresholds& thresholds) {
  if (d < thresholds.d_threshold) return 0;
  return e > thresholds.e_threshold ? 1 : 2;
}

// Two-stage threshold search restricted to observed values: first a diameter
// cut separating primaries from agglomerates, then an eccentricity cut
// separating chains from raspberries among true non-primaries. Accuracy ties
// resolve to the smallest candidate value.
inline ReferenceThresholds reference_train(const std::vector<double>& d,
                                           const std::vector<double>& e,
                                           const std::vector<int>& labels) {
  const std::size_t n = labels.size();
  if (d.size() != n || e.size() != n)
    throw std::invalid_argument("reference_train: column length mismatch");
  if (n == 0) throw std::invalid_argument("reference_train: empty training data");
  std::array<long long, 3> totals{0, 0, 0};
  for (const int label : labels) {
    if (label < 0 || label >= kClassCount)
      throw std::invalid_argument("reference_train: label out of range");
    ++totals[static_cast<std::size_t>(label)];
  }
  if (totals[0] == 0 || totals[1] == 0 || totals[2] == 0)
    throw std::runtime_error("reference_train: training data must contain all three classes");

  ReferenceThresholds out;

  // Stage 1: predict primary iff d < threshold.
  {
    std::vector<std::pair<double, int>> sorted;  // (d, is_primary)
    sorted.reserve(n);
    for (std::size_t i = 0; i < n; ++i) sorted.emplace_back(d[i], labels[i] == 0 ? 1 : 0);
    std::sort(sorted.begin(), sorted.end());
    const long long primaries = totals[0];
    const long long others = static_cast<long long>(n) - primaries;
    long long primaries_below = 0, others_below = 0;
    long long best_correct = -1;
    std::size_t i = 0;
    while (i < n) {
      const double value = sorted[i].first;
      const long long correct = primaries_below + (others - others_below);
      if (correct > best_correct) {
        best_correct = correct;
        out.d_threshold = value;
      }
      while (i < n && sorted[i].first == value) {
        primaries_below += sorted[i].second;
        others_below += 1 - sorted[i].second;
        ++i;
      }
    }
  }

  // Stage 2: among true non-primaries, predict chain iff e > threshold.
  {
    std::vector<std::pair<double, int>> sorted;  // (e, is_chain)
    for (std::size_t i = 0; i < n; ++i)
      if (labels[i] != 0) sorted.emplace_back(e[i], labels[i] == 1 ? 1 : 0);
    std::sort(sorted.begin(), sorted.end());
    const long long chains = totals[1];
    long long chains_leq = 0, berries_leq = 0;
    long long best_correct = -1;
    std::size_t i = 0;
    while (i < sorted.size()) {
      const double value = sorted[i].first;
      while (i < sorted.size() && sorted[i].first == value) {
        chains_leq += sorted[i].second;
        berries_leq += 1 - sorted[i].second;
        ++i;
      }
      const long long correct = (chains - chains_leq) + berries_leq;
      if (correct > best_correct) {
        best_correct = correct;
        out.e_threshold = value;
      }
    }
  }
  return out;
}

inline std::array<std::array<long long, 3>, 3> confusion_matrix(
    const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("confusion_matrix: length mismatch");
  std::array<std::array<long long, 3>, 3> counts{};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= kClassCount || predictions[i] < 0 ||
        predictions[i] >= kClassCount)
      throw std::invalid_argument("confusion_matrix: class out of range");
    ++counts[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(predictions[i])];
  }
  return counts;
}

// Mean accuracy drop over `repeats` random permutations of one feature column.
// Each feature uses its own derived stream, so results do not depend on
// evaluation order.
inline std::vector<double> permutation_importance(const TrainedForest& forest,
                                                  const std::vector<LabeledSample>& samples,
                                                  std::uint64_t seed, int repeats = 10) {
  detail::validate_samples(samples);
  if (samples.front().features.size() != forest.feature_count)
    throw std::invalid_argument("permutation_importance: feature vector length mismatch");
  if (repeats < 1) throw std::invalid_argument("permutation_importance: repeats must be positive");

  const std::size_t n = samples.size();
  const double baseline = forest_accuracy(forest, samples);
  std::vector<double> importance(forest.feature_count, 0.0);
  for (std::size_t f = 0; f < forest.feature_count; ++f) {
    Rng rng(derive_seed(seed, "permute", static_cast<std::uint64_t>(f)));
    std::vector<double> column(n);
    for (std::size_t i = 0; i < n; ++i) column[i] = samples[i].features[f];
    double drop_sum = 0.0;
    for (int r = 0; r < repeats; ++r) {
      rng.shuffle(column);
      long long correct = 0;
      FeatureVector x;
      for (std::size_t i = 0; i < n; ++i) {
        x = samples[i].features;
        x[f] = column[i];
        correct += forest_predict(forest, x) == samples[i].label;
      }
      drop_sum += baseline - static_cast<double>(correct) / static_cast<double>(n);
    }
    importance[f] = drop_sum / static_cast<double>(repeats);
  }
  return importance;
}

inline nlohmann::json forest_to_json(const TrainedForest& forest) {
  nlohmann::json trees = nlohmann::json::array();
  for (const DecisionTree& tree : forest.trees) {
    nlohmann::json feature = nlohmann::json::array();
    nlohmann::json threshold = nlohmann::json::array();
    nlohmann::json left = nlohmann::json::array();
    nlohmann::json right = nlohmann::json::array();
    nlohmann::json label = nlohmann::json::array();
    for (const TreeNode& node : tree.nodes) {
      feature.push_back(node.feature);
      threshold.push_back(node.threshold);
      left.push_back(node.left);
      right.push_back(node.right);
      label.push_back(node.label);
    }
    trees.push_back({{"depth", tree.depth},
                     {"feature_subset", tree.feature_subset},
                     {"feature", std::move(feature)},
                     {"threshold", std::move(threshold)},
                     {"left", std::move(left)},
                     {"right", std::move(right)},
                     {"label", std::move(label)}});
  }
  return nlohmann::json{{"schema_version", 1},
                        {"model", "random_forest"},
                        {"hyperparams",
                         {{"tree_count", forest.hyperparams.tree_count},
                          {"max_depth", forest.hyperparams.max_depth},
                          {"subset_size", forest.hyperparams.subset_size}}},
                        {"seed", forest.seed},
                        {"feature_count", forest.feature_count},
                        {"layout_fingerprint", forest.layout_fingerprint},
                        {"trees", std::move(trees)}};
}

inline TrainedForest forest_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("schema_version", -1) != 1 ||
      j.value("model", std::string()) != "random_forest")
    throw std::runtime_error("forest_from_json: unsupported model document");
  TrainedForest forest;
  const nlohmann::json& hp = j.at("hyperparams");
  forest.hyperparams.tree_count = hp.at("tree_count").get<int>();
  forest.hyperparams.max_depth = hp.at("max_depth").get<int>();
  forest.hyperparams.subset_size = hp.at("subset_size").get<int>();
  forest.seed = j.at("seed").get<std::uint64_t>();
  forest.feature_count = j.at("feature_count").get<std::size_t>();
  forest.layout_fingerprint = j.at("layout_fingerprint").get<std::string>();

  for (const nlohmann::json& jt : j.at("trees")) {
    DecisionTree tree;
    tree.depth = jt.at("depth").get<int>();
    tree.feature_subset = jt.at("feature_subset").get<std::vector<int>>();
    const auto& feature = jt.at("feature");
    const auto& threshold = jt.at("threshold");
    const auto& left = jt.at("left");
    const auto& right = jt.at("right");
    const auto& label = jt.at("label");
    const std::size_t count = feature.size();
    if (threshold.size() != count || left.size() != count || right.size() != count ||
        label.size() != count || count == 0)
      throw std::runtime_error("forest_from_json: inconsistent node arrays");
    tree.nodes.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      TreeNode& node = tree.nodes[i];
      node.feature = feature[i].get<int>();
      node.threshold = threshold[i].get<double>();
      node.left = left[i].get<int>();
      node.right = right[i].get<int>();
      node.label = label[i].get<int>();
      if (node.feature >= 0) {
        if (node.feature >= static_cast<int>(forest.feature_count) || node.left < 0 ||
            node.right < 0 || node.left >= static_cast<int>(count) ||
            node.right >= static_cast<int>(count))
          throw std::runtime_error("forest_from_json: invalid internal node");
      } else if (node.label < 0 || node.label >= kClassCount) {
        throw std::runtime_error("forest_from_json: invalid leaf label");
      }
    }
    forest.trees.push_back(std::move(tree));
  }
  if (forest.trees.empty()) throw std::runtime_error("forest_from_json: no trees");
  return forest;
}

}  // namespace agglo::classify
