#pragma once

#include "pts/features.hpp"
#include "pts/jsonl.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace pts {

inline constexpr std::string_view kModelFormat = "pts-gbdt/1";

struct TrainParams {
  int num_trees = 200;
  int max_depth = 6;
  double learning_rate = 0.1;
  double min_child_weight = 1.0;
  /// Weight applied to positive examples; unset means negatives / positives.
  std::optional<double> positive_class_weight;
  double l2_leaf_penalty = 1.0;
  /// Fraction of rows sampled (seeded) per tree; 1.0 uses every row.
  double subsample = 1.0;
  std::uint64_t seed = 0;

  Json to_json() const;
  static TrainParams from_json(const Json& doc);
};

/// Row-major design matrix with binary labels.
struct TrainingData {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> features;
  std::vector<std::uint8_t> labels;
  std::vector<SlotType> types;  // one per column
  std::uint64_t schema_hash = 0;

  std::span<const double> row(std::size_t i) const { return {features.data() + i * cols, cols}; }
};

/// One node of a flattened tree. Leaves have feature == -1.
struct TreeNode {
  std::int32_t feature = -1;
  double threshold = 0.0;                 // numeric: x <= threshold goes left
  std::vector<std::int32_t> categories;   // categorical: code in set goes left
  std::int32_t left = -1;
  std::int32_t right = -1;
  bool default_left = true;               // route for NaN inputs
  double weight = 0.0;                    // leaf weight before shrinkage

  bool is_leaf() const noexcept { return feature < 0; }
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double leaf_weight(std::span<const double> x, std::span<const SlotType> types) const;
  int depth() const;
};

double sigmoid(double margin) noexcept;

class BoostedModel {
 public:
  double base_score = 0.0;  // log-odds of the (weighted) positive prevalence
  double learning_rate = 0.1;
  std::vector<Tree> trees;
  std::vector<SlotType> feature_types;
  std::uint64_t schema_hash = 0;
  TrainParams params;
  /// Weighted logistic loss on the training set after each round (index 0 is
  /// the prior-only model).
  std::vector<double> training_loss;
  /// Free-form provenance: windows, label policy, feature schema, dictionary.
  Json manifest = Json::object();

  double predict_margin(std::span<const double> x) const;
  /// Score in the open interval (0, 1).
  double predict_score(std::span<const double> x) const;
  /// Checks the vector's schema hash first; throws SchemaMismatch.
  double predict_score(const FeatureVector& v) const;

  Json to_json() const;
  static BoostedModel from_json(const Json& doc);
  void save(const std::filesystem::path& path) const;
  static BoostedModel load(const std::filesystem::path& path);
};

/// Gradient-boosted trees with weighted logistic loss and exact greedy split
/// search over every distinct feature value. Throws DegenerateLabels when only
/// one class is present and SchemaMismatch on inconsistent shapes.
BoostedModel train(const TrainingData& data, const TrainParams& params);

struct LossGradient {
  double loss = 0.0;
  std::vector<double> gradient;  // d loss / d margin
  std::vector<double> hessian;
};

/// Weighted logistic loss of probability predictions; derivatives are with
/// respect to the margin (log-odds). Throws LengthMismatch.
LossGradient loss_and_gradient(std::span<const double> predictions, std::span<const std::uint8_t> labels,
                               double positive_class_weight);

}  // namespace pts
