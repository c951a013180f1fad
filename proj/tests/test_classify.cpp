// Tests for the CART forest, reference classifier, and evaluation reports.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "agglo/classify.hpp"
#include "agglo/rng.hpp"
#include "catch2/catch_amalgamated.hpp"

using agglo::Rng;
using agglo::derive_seed;
namespace cls = agglo::classify;

namespace {

std::vector<cls::LabeledSample> one_dim(std::initializer_list<std::pair<double, int>> points) {
  std::vector<cls::LabeledSample> out;
  for (const auto& [x, label] : points) out.push_back({{x}, label});
  return out;
}

// Three well-separated Gaussian blobs in `width` dimensions.
std::vector<cls::LabeledSample> blob_data(int per_class, int width, double spread,
                                          std::uint64_t seed) {
  Rng rng(seed);
  std::vector<cls::LabeledSample> out;
  for (int label = 0; label < 3; ++label)
    for (int i = 0; i < per_class; ++i) {
      cls::LabeledSample s;
      s.label = label;
      for (int f = 0; f < width; ++f) s.features.push_back(10.0 * label + spread * rng.normal());
      out.push_back(std::move(s));
    }
  return out;
}

// Literal enumeration over every feature and midpoint candidate, with the same
// strict-improvement tie order (smaller feature, then smaller threshold).
std::optional<cls::Split> oracle_best_split(const std::vector<cls::LabeledSample>& samples,
                                            const std::vector<int>& features) {
  std::array<long long, 3> total{0, 0, 0};
  for (const auto& s : samples) ++total[static_cast<std::size_t>(s.label)];
  int nonzero = 0;
  for (long long c : total) nonzero += c > 0;
  if (nonzero < 2) return std::nullopt;

  const auto gini_of = [](const std::array<long long, 3>& c) {
    const double t = static_cast<double>(c[0] + c[1] + c[2]);
    double g = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double q = static_cast<double>(c[static_cast<std::size_t>(k)]) / t;
      g += q * (1.0 - q);
    }
    return g;
  };

  std::optional<cls::Split> best;
  for (const int j : features) {
    std::vector<double> values;
    for (const auto& s : samples) values.push_back(s.features[static_cast<std::size_t>(j)]);
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    for (std::size_t v = 0; v + 1 < values.size(); ++v) {
      double threshold = values[v] + (values[v + 1] - values[v]) / 2.0;
      if (!(threshold < values[v + 1])) threshold = values[v];
      std::array<long long, 3> left{0, 0, 0};
      std::array<long long, 3> right{0, 0, 0};
      for (const auto& s : samples) {
        auto& side = s.features[static_cast<std::size_t>(j)] <= threshold ? left : right;
        ++side[static_cast<std::size_t>(s.label)];
      }
      const double nl = static_cast<double>(left[0] + left[1] + left[2]);
      const double nr = static_cast<double>(right[0] + right[1] + right[2]);
      const double quality = gini_of(left) * nl + gini_of(right) * nr;
      if (!best || quality < best->quality) best = cls::Split{j, threshold, quality};
    }
  }
  return best;
}

}  // namespace

TEST_CASE("gini matches closed-form values", "[classify]") {
  REQUIRE(cls::gini({5, 0, 0}) == 0.0);
  REQUIRE(cls::gini({4, 4, 4}) == Catch::Approx(2.0 / 3.0).margin(1e-15));
  REQUIRE(cls::gini({2, 1, 0}) == Catch::Approx(4.0 / 9.0).margin(1e-15));
  REQUIRE(cls::gini({0, 7, 0}) == 0.0);
  REQUIRE_THROWS_AS(cls::gini({0, 0, 0}), std::invalid_argument);
}

TEST_CASE("best_split finds the separating midpoint", "[classify]") {
  const auto samples = one_dim({{1.0, 0}, {2.0, 0}, {9.0, 1}});
  const auto split = cls::best_split(samples, {0});
  REQUIRE(split.has_value());
  REQUIRE(split->feature == 0);
  REQUIRE(split->threshold == 5.5);
  REQUIRE(split->quality == 0.0);
}

TEST_CASE("best_split declines pure or unsplittable inputs", "[classify]") {
  REQUIRE_FALSE(cls::best_split(one_dim({{1.0, 2}, {5.0, 2}, {9.0, 2}}), {0}).has_value());
  REQUIRE_FALSE(cls::best_split(one_dim({{3.0, 0}, {3.0, 1}, {3.0, 2}}), {0}).has_value());
  REQUIRE_THROWS_AS(cls::best_split(one_dim({{1.0, 0}}), {0}), std::invalid_argument);
  REQUIRE_THROWS_AS(cls::best_split(one_dim({{1.0, 0}, {2.0, 1}}), {}), std::invalid_argument);
  REQUIRE_THROWS_AS(cls::best_split(one_dim({{1.0, 0}, {2.0, 1}}), {1}), std::invalid_argument);
}

TEST_CASE("best_split equals exhaustive enumeration with tie-breaks", "[classify]") {
  Rng rng(401);
  for (int round = 0; round < 120; ++round) {
    const int n = rng.uniform_int(2, 50);
    const int width = rng.uniform_int(1, 6);
    const bool coarse = rng.uniform() < 0.5;  // integer-valued features force ties
    std::vector<cls::LabeledSample> samples;
    for (int i = 0; i < n; ++i) {
      cls::LabeledSample s;
      s.label = rng.uniform_int(0, 2);
      for (int f = 0; f < width; ++f)
        s.features.push_back(coarse ? static_cast<double>(rng.uniform_int(0, 4))
                                    : rng.uniform(0.0, 10.0));
      samples.push_back(std::move(s));
    }
    std::vector<int> features(static_cast<std::size_t>(width));
    std::iota(features.begin(), features.end(), 0);

    const auto got = cls::best_split(samples, features);
    const auto want = oracle_best_split(samples, features);
    REQUIRE(got.has_value() == want.has_value());
    if (got) {
      REQUIRE(got->feature == want->feature);
      REQUIRE(got->threshold == want->threshold);
      REQUIRE(got->quality == want->quality);
    }
  }
}

TEST_CASE("build_tree stump reproduces the best split", "[classify]") {
  const auto samples = one_dim({{1.0, 0}, {2.0, 0}, {9.0, 1}});
  const auto tree = cls::build_tree(samples, 1, {0});
  REQUIRE(tree.nodes.size() == 3);
  REQUIRE(tree.nodes[0].feature == 0);
  REQUIRE(tree.nodes[0].threshold == 5.5);
  REQUIRE(tree.predict({0.0}) == 0);
  REQUIRE(tree.predict({5.5}) == 0);
  REQUIRE(tree.predict({5.6}) == 1);
}

TEST_CASE("build_tree collapses single-class data to one leaf", "[classify]") {
  const auto tree = cls::build_tree(one_dim({{1.0, 2}, {4.0, 2}, {9.0, 2}}), 5, {0});
  REQUIRE(tree.nodes.size() == 1);
  REQUIRE(tree.nodes[0].feature == -1);
  REQUIRE(tree.predict({3.0}) == 2);
  REQUIRE(tree.depth == 5);
}

TEST_CASE("build_tree separates spread-out classes perfectly", "[classify]") {
  const auto samples = blob_data(60, 4, 1.0, 77);
  std::vector<int> all{0, 1, 2, 3};
  const auto tree = cls::build_tree(samples, 7, all);
  for (const auto& s : samples) REQUIRE(tree.predict(s.features) == s.label);
}

TEST_CASE("training accuracy is monotone in depth", "[classify]") {
  const auto samples = blob_data(50, 3, 4.0, 901);  // overlapping blobs
  std::vector<int> all{0, 1, 2};
  double previous = -1.0;
  for (int depth = 1; depth <= 8; ++depth) {
    const auto tree = cls::build_tree(samples, depth, all);
    long long correct = 0;
    for (const auto& s : samples) correct += tree.predict(s.features) == s.label;
    const double accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
    REQUIRE(accuracy >= previous);
    previous = accuracy;
  }
}

TEST_CASE("routing is invariant under strictly monotone feature rescaling", "[classify]") {
  const auto samples = blob_data(40, 3, 4.0, 555);
  auto rescaled = samples;
  for (auto& s : rescaled) {
    s.features[1] = std::exp(s.features[1] / 10.0);
    s.features[2] = s.features[2] * s.features[2] * s.features[2] + 2.0 * s.features[2];
  }
  std::vector<int> all{0, 1, 2};
  const auto tree = cls::build_tree(samples, 4, all);
  const auto tree_rescaled = cls::build_tree(rescaled, 4, all);
  for (std::size_t i = 0; i < samples.size(); ++i)
    REQUIRE(tree.predict(samples[i].features) == tree_rescaled.predict(rescaled[i].features));
}

TEST_CASE("forest training is deterministic and thread-count invariant", "[classify]") {
  const auto samples = blob_data(30, 5, 2.0, 1234);
  const auto a = cls::train_forest(samples, 8, 4, 2, 99);
  const auto b = cls::train_forest(samples, 8, 4, 2, 99);
  const auto c = cls::train_forest(samples, 8, 4, 2, 99, 4);
  const auto other = cls::train_forest(samples, 8, 4, 2, 100);
  REQUIRE(cls::forest_to_json(a).dump() == cls::forest_to_json(b).dump());
  REQUIRE(cls::forest_to_json(a).dump() == cls::forest_to_json(c).dump());
  REQUIRE(cls::forest_to_json(a).dump() != cls::forest_to_json(other).dump());
}

TEST_CASE("forest training does not depend on sample order", "[classify]") {
  auto samples = blob_data(25, 4, 3.0, 31);
  const auto before = cls::train_forest(samples, 6, 5, 2, 7);
  Rng rng(8);
  rng.shuffle(samples);
  const auto after = cls::train_forest(samples, 6, 5, 2, 7);
  REQUIRE(cls::forest_to_json(before).dump() == cls::forest_to_json(after).dump());
}

TEST_CASE("single-tree forest equals the plain tree", "[classify]") {
  const auto samples = blob_data(20, 3, 2.0, 5150);
  const auto forest = cls::train_forest(samples, 1, 6, 3, 42);
  REQUIRE(forest.trees.size() == 1);
  REQUIRE(forest.trees[0].feature_subset == std::vector<int>{0, 1, 2});
  for (const auto& s : samples)
    REQUIRE(cls::forest_predict(forest, s.features) == forest.trees[0].predict(s.features));
}

TEST_CASE("train_forest rejects bad hyperparameters", "[classify]") {
  const auto samples = blob_data(5, 3, 1.0, 1);
  REQUIRE_THROWS_AS(cls::train_forest(samples, 4, 3, 0, 1), std::invalid_argument);
  REQUIRE_THROWS_AS(cls::train_forest(samples, 4, 3, 4, 1), std::invalid_argument);
  REQUIRE_THROWS_AS(cls::train_forest(samples, 0, 3, 2, 1), std::invalid_argument);
  REQUIRE_THROWS_AS(cls::train_forest({}, 4, 3, 2, 1), std::invalid_argument);
}

TEST_CASE("forest_predict votes with ties toward the smaller label", "[classify]") {
  const auto leaf_tree = [](int label) {
    cls::DecisionTree tree;
    tree.nodes.push_back(cls::TreeNode{-1, 0.0, -1, -1, label});
    tree.feature_subset = {0};
    return tree;
  };
  cls::TrainedForest forest;
  forest.feature_count = 1;
  forest.trees = {leaf_tree(0), leaf_tree(1), leaf_tree(1)};
  REQUIRE(cls::forest_predict(forest, {0.0}) == 1);
  forest.trees = {leaf_tree(2), leaf_tree(0)};
  REQUIRE(cls::forest_predict(forest, {0.0}) == 0);
  forest.trees = {leaf_tree(2), leaf_tree(1)};
  REQUIRE(cls::forest_predict(forest, {0.0}) == 1);
  REQUIRE_THROWS_AS(cls::forest_predict(forest, {0.0, 1.0}), std::invalid_argument);
}

TEST_CASE("fingerprint-checked prediction rejects mismatched layouts", "[classify]") {
  const auto samples = blob_data(10, 2, 1.0, 3);
  const auto forest = cls::train_forest(samples, 2, 3, 1, 5, 1, "aaaa");
  REQUIRE_NOTHROW(cls::forest_predict_checked(forest, "aaaa", {0.0, 0.0}));
  REQUIRE_THROWS_AS(cls::forest_predict_checked(forest, "bbbb", {0.0, 0.0}),
                    std::runtime_error);
}

TEST_CASE("grid_search picks the cheapest of tied configurations", "[classify]") {
  const auto samples = blob_data(30, 3, 1.0, 246);  // every combination reaches accuracy 1
  cls::SearchGrid grid{{50, 100}, {3, 5}, {2, 3}};
  const auto result = cls::grid_search(samples, grid, 17);
  REQUIRE(result.train_accuracy == 1.0);
  REQUIRE(result.best.tree_count == 50);
  REQUIRE(result.best.max_depth == 3);
  REQUIRE(result.best.subset_size == 2);
  REQUIRE(result.forest.hyperparams.tree_count == 50);
}

TEST_CASE("grid_search with a single cell returns that configuration", "[classify]") {
  const auto samples = blob_data(20, 3, 1.0, 777);
  const auto result = cls::grid_search(samples, cls::SearchGrid{{10}, {4}, {2}}, 3);
  REQUIRE(result.best.tree_count == 10);
  REQUIRE(result.best.max_depth == 4);
  REQUIRE(result.best.subset_size == 2);
  REQUIRE(result.train_accuracy == 1.0);
  REQUIRE_THROWS_AS(cls::grid_search(samples, cls::SearchGrid{{}, {4}, {2}}, 3),
                    std::invalid_argument);
}

TEST_CASE("reference classifier separates a planted threshold structure", "[classify]") {
  Rng rng(9090);
  std::vector<double> d, e;
  std::vector<int> labels;
  for (int i = 0; i < 90; ++i) {
    const int label = i % 3;
    labels.push_back(label);
    d.push_back(label == 0 ? rng.uniform(5.0, 10.0) : rng.uniform(20.0, 40.0));
    e.push_back(label == 1 ? rng.uniform(0.7, 0.95) : rng.uniform(0.05, 0.4));
  }
  const auto thresholds = cls::reference_train(d, e, labels);
  std::vector<int> predicted;
  for (std::size_t i = 0; i < d.size(); ++i)
    predicted.push_back(cls::reference_predict(d[i], e[i], thresholds));
  const auto matrix = cls::confusion_matrix(predicted, labels);
  REQUIRE(matrix[0][1] + matrix[0][2] == 0);  // no primary leaks out
  REQUIRE(matrix[1][0] + matrix[2][0] == 0);  // nothing leaks in
  REQUIRE(matrix[0][0] == 30);
  REQUIRE(matrix[1][1] == 30);
  REQUIRE(matrix[2][2] == 30);
}

TEST_CASE("reference threshold search equals the exhaustive scan", "[classify]") {
  Rng rng(4321);
  for (int round = 0; round < 25; ++round) {
    std::vector<double> d, e;
    std::vector<int> labels;
    const int n = rng.uniform_int(10, 100);
    for (int i = 0; i < n; ++i) {
      labels.push_back(i < 3 ? i : rng.uniform_int(0, 2));  // guarantee all classes
      d.push_back(static_cast<double>(rng.uniform_int(0, 15)));
      e.push_back(static_cast<double>(rng.uniform_int(0, 10)) / 10.0);
    }
    const auto got = cls::reference_train(d, e, labels);

    // Stage 1 oracle: count correct sides for every observed d value.
    double best_d = 0.0;
    long long best_correct = -1;
    std::vector<double> candidates = d;
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    for (const double threshold : candidates) {
      long long correct = 0;
      for (std::size_t i = 0; i < d.size(); ++i) {
        const int predicted = d[i] < threshold ? 0 : 1;
        correct += (predicted == 0) == (labels[i] == 0);
      }
      if (correct > best_correct) {
        best_correct = correct;
        best_d = threshold;
      }
    }
    REQUIRE(got.d_threshold == best_d);

    // Stage 2 oracle: chain-versus-raspberry accuracy on true non-primaries.
    double best_e = 0.0;
    best_correct = -1;
    std::vector<double> e_candidates;
    for (std::size_t i = 0; i < e.size(); ++i)
      if (labels[i] != 0) e_candidates.push_back(e[i]);
    std::sort(e_candidates.begin(), e_candidates.end());
    e_candidates.erase(std::unique(e_candidates.begin(), e_candidates.end()),
                       e_candidates.end());
    for (const double threshold : e_candidates) {
      long long correct = 0;
      for (std::size_t i = 0; i < e.size(); ++i) {
        if (labels[i] == 0) continue;
        const int predicted = e[i] > threshold ? 1 : 2;
        correct += predicted == labels[i];
      }
      if (correct > best_correct) {
        best_correct = correct;
        best_e = threshold;
      }
    }
    REQUIRE(got.e_threshold == best_e);
  }
}

TEST_CASE("reference ties resolve to the smallest observed value", "[classify]") {
  const std::vector<double> d{1.0, 2.0, 3.0, 4.0};
  const std::vector<double> e{0.0, 0.9, 0.0, 0.1};
  const std::vector<int> labels{0, 1, 0, 2};
  const auto thresholds = cls::reference_train(d, e, labels);
  REQUIRE(thresholds.d_threshold == 2.0);
  REQUIRE(thresholds.e_threshold == 0.1);
}

TEST_CASE("reference_train requires every class", "[classify]") {
  REQUIRE_THROWS_AS(cls::reference_train({1.0, 2.0}, {0.1, 0.2}, {0, 1}), std::runtime_error);
  REQUIRE_THROWS_AS(cls::reference_train({1.0}, {0.1, 0.2}, {0, 1}), std::invalid_argument);
}

TEST_CASE("confusion_matrix counts ground truth by prediction", "[classify]") {
  const auto perfect = cls::confusion_matrix({0, 1, 2, 1}, {0, 1, 2, 1});
  REQUIRE(perfect[0][0] == 1);
  REQUIRE(perfect[1][1] == 2);
  REQUIRE(perfect[2][2] == 1);
  REQUIRE(perfect[0][1] + perfect[0][2] + perfect[1][0] + perfect[1][2] + perfect[2][0] +
              perfect[2][1] ==
          0);
  const auto mixed = cls::confusion_matrix({1, 1, 0}, {0, 1, 2});
  REQUIRE(mixed[0][1] == 1);
  REQUIRE(mixed[1][1] == 1);
  REQUIRE(mixed[2][0] == 1);
  REQUIRE_THROWS_AS(cls::confusion_matrix({0}, {0, 1}), std::invalid_argument);
  REQUIRE_THROWS_AS(cls::confusion_matrix({3}, {0}), std::invalid_argument);
}

TEST_CASE("permutation importance flags informative features only", "[classify]") {
  Rng rng(2718);
  std::vector<cls::LabeledSample> samples;
  for (int i = 0; i < 120; ++i) {
    const int label = i % 3;
    samples.push_back({{10.0 * label + rng.normal(), 7.0}, label});  // feature 1 constant
  }
  const auto forest = cls::train_forest(samples, 3, 4, 2, 12);
  const auto importance = cls::permutation_importance(forest, samples, 55);
  REQUIRE(importance.size() == 2);
  REQUIRE(importance[0] > 0.2);
  REQUIRE(importance[1] == 0.0);
  REQUIRE(cls::permutation_importance(forest, samples, 55) == importance);
}

TEST_CASE("forest persistence round-trips exactly", "[classify]") {
  const auto samples = blob_data(25, 4, 3.0, 616);
  const auto forest = cls::train_forest(samples, 5, 5, 2, 21, 1, "feedbeef00112233");
  const auto doc = cls::forest_to_json(forest);
  const auto restored = cls::forest_from_json(doc);
  REQUIRE(cls::forest_to_json(restored).dump() == doc.dump());
  REQUIRE(restored.layout_fingerprint == "feedbeef00112233");
  Rng rng(11);
  for (int i = 0; i < 50; ++i) {
    cls::FeatureVector x;
    for (int f = 0; f < 4; ++f) x.push_back(rng.uniform(-5.0, 25.0));
    REQUIRE(cls::forest_predict(restored, x) == cls::forest_predict(forest, x));
  }
}

TEST_CASE("forest_from_json rejects malformed documents", "[classify]") {
  const auto samples = blob_data(10, 2, 1.0, 2);
  auto doc = cls::forest_to_json(cls::train_forest(samples, 2, 3, 1, 9));
  auto bad_version = doc;
  bad_version["schema_version"] = 2;
  REQUIRE_THROWS_AS(cls::forest_from_json(bad_version), std::runtime_error);
  auto bad_model = doc;
  bad_model["model"] = "linear";
  REQUIRE_THROWS_AS(cls::forest_from_json(bad_model), std::runtime_error);
  auto bad_arrays = doc;
  bad_arrays["trees"][0]["left"].erase(0);
  REQUIRE_THROWS_AS(cls::forest_from_json(bad_arrays), std::runtime_error);
  auto bad_label = doc;
  for (std::size_t i = 0; i < bad_label["trees"][0]["feature"].size(); ++i)
    if (bad_label["trees"][0]["feature"][i].get<int>() < 0) bad_label["trees"][0]["label"][i] = 9;
  REQUIRE_THROWS_AS(cls::forest_from_json(bad_label), std::runtime_error);
}
