#include "pts/boosting.hpp"

#include "pts/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace pts {

namespace {

// Loss of one example as a function of its margin: w * (softplus(m) - y*m).
double example_loss(double margin, bool positive, double weight) {
  const double softplus = margin > 0 ? margin + std::log1p(std::exp(-margin)) : std::log1p(std::exp(margin));
  return weight * (softplus - (positive ? margin : 0.0));
}

double total_loss(std::span<const double> margins, std::span<const std::uint8_t> labels, double pos_weight) {
  double loss = 0.0;
  for (std::size_t i = 0; i < margins.size(); ++i) {
    loss += example_loss(margins[i], labels[i] != 0, labels[i] ? pos_weight : 1.0);
  }
  return loss;
}

bool goes_left(const TreeNode& node, double x, SlotType type) {
  if (std::isnan(x)) return node.default_left;
  if (type == SlotType::Categorical) {
    const auto code = static_cast<std::int32_t>(x);
    return std::find(node.categories.begin(), node.categories.end(), code) != node.categories.end();
  }
  return x <= node.threshold;
}

struct GradPair {
  double g = 0.0;
  double h = 0.0;

  GradPair& operator+=(const GradPair& o) {
    g += o.g;
    h += o.h;
    return *this;
  }
};

GradPair operator-(GradPair a, const GradPair& b) { return {a.g - b.g, a.h - b.h}; }

/// Per-column sorted distinct values; a row's bin is the index of its value,
/// and the extra last bin holds NaN.
struct BinnedMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::vector<double>> cuts;
  std::vector<std::size_t> offsets;  // histogram offset per column
  std::size_t total_bins = 0;
  std::vector<std::uint32_t> bins;   // row-major

  explicit BinnedMatrix(const TrainingData& data) : rows(data.rows), cols(data.cols), cuts(data.cols) {
    std::vector<double> column;
    for (std::size_t f = 0; f < cols; ++f) {
      column.clear();
      for (std::size_t r = 0; r < rows; ++r) {
        const double v = data.features[r * cols + f];
        if (!std::isnan(v)) column.push_back(v);
      }
      std::sort(column.begin(), column.end());
      column.erase(std::unique(column.begin(), column.end()), column.end());
      cuts[f] = column;
    }
    offsets.resize(cols);
    for (std::size_t f = 0; f < cols; ++f) {
      offsets[f] = total_bins;
      total_bins += cuts[f].size() + 1;
    }
    bins.resize(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t f = 0; f < cols; ++f) {
        const double v = data.features[r * cols + f];
        const auto& c = cuts[f];
        bins[r * cols + f] = std::isnan(v) ? static_cast<std::uint32_t>(c.size())
                                           : static_cast<std::uint32_t>(std::lower_bound(c.begin(), c.end(), v) - c.begin());
      }
    }
  }

  std::uint32_t missing_bin(std::size_t f) const { return static_cast<std::uint32_t>(cuts[f].size()); }
};

struct SplitCandidate {
  double gain = 0.0;
  std::int32_t feature = -1;
  std::uint32_t bin = 0;  // numeric: bins <= bin go left; categorical: this bin goes left
  bool default_left = true;
};

class TreeBuilder {
 public:
  TreeBuilder(const BinnedMatrix& m, std::span<const SlotType> types, std::span<const GradPair> grads,
              const TrainParams& params)
      : m_(m), types_(types), grads_(grads), params_(params) {}

  Tree build(std::vector<std::uint32_t> rows) {
    rows_ = std::move(rows);
    tree_.nodes.clear();
    tree_.nodes.emplace_back();
    std::vector<GradPair> hist(m_.total_bins);
    fill_histogram(0, rows_.size(), hist);
    grow(0, 0, rows_.size(), 0, hist);
    return std::move(tree_);
  }

 private:
  void fill_histogram(std::size_t begin, std::size_t end, std::vector<GradPair>& hist) const {
    std::fill(hist.begin(), hist.end(), GradPair{});
    const std::size_t cols = m_.cols;
    for (std::size_t i = begin; i < end; ++i) {
      const std::uint32_t r = rows_[i];
      const GradPair gp = grads_[r];
      const std::uint32_t* b = m_.bins.data() + static_cast<std::size_t>(r) * cols;
      for (std::size_t f = 0; f < cols; ++f) hist[m_.offsets[f] + b[f]] += gp;
    }
  }

  double score(const GradPair& s) const { return s.g * s.g / (s.h + params_.l2_leaf_penalty); }

  void consider(SplitCandidate& best, const GradPair& left, const GradPair& total, double parent_score,
                std::int32_t feature, std::uint32_t bin, bool default_left) const {
    const GradPair right = total - left;
    if (left.h < params_.min_child_weight || right.h < params_.min_child_weight) return;
    const double gain = score(left) + score(right) - parent_score;
    if (gain > best.gain) best = {gain, feature, bin, default_left};
  }

  SplitCandidate find_split(const std::vector<GradPair>& hist, const GradPair& total) const {
    SplitCandidate best;
    best.gain = 1e-12;
    const double parent_score = score(total);
    for (std::size_t f = 0; f < m_.cols; ++f) {
      const GradPair* h = hist.data() + m_.offsets[f];
      const std::uint32_t nb = m_.missing_bin(f);
      const GradPair missing = h[nb];
      const bool has_missing = missing.h > 0.0 || missing.g != 0.0;
      const auto feature = static_cast<std::int32_t>(f);
      if (types_[f] == SlotType::Categorical) {
        for (std::uint32_t b = 0; b < nb; ++b) {
          consider(best, h[b], total, parent_score, feature, b, false);
          if (has_missing) {
            GradPair left = h[b];
            left += missing;
            consider(best, left, total, parent_score, feature, b, true);
          }
        }
        continue;
      }
      GradPair left;
      for (std::uint32_t b = 0; b + 1 < nb; ++b) {
        left += h[b];
        consider(best, left, total, parent_score, feature, b, false);
        if (has_missing) {
          GradPair with_missing = left;
          with_missing += missing;
          consider(best, with_missing, total, parent_score, feature, b, true);
        }
      }
      if (has_missing && nb > 0) {
        left += h[nb - 1];
        consider(best, left, total, parent_score, feature, nb - 1, false);
      }
    }
    return best;
  }

  bool row_goes_left(std::uint32_t r, const SplitCandidate& s) const {
    const std::uint32_t b = m_.bins[static_cast<std::size_t>(r) * m_.cols + static_cast<std::size_t>(s.feature)];
    if (b == m_.missing_bin(static_cast<std::size_t>(s.feature))) return s.default_left;
    if (types_[static_cast<std::size_t>(s.feature)] == SlotType::Categorical) return b == s.bin;
    return b <= s.bin;
  }

  void make_leaf(std::size_t node, const GradPair& total) {
    tree_.nodes[node].feature = -1;
    tree_.nodes[node].weight = -total.g / (total.h + params_.l2_leaf_penalty);
  }

  void grow(std::size_t node, std::size_t begin, std::size_t end, int depth, std::vector<GradPair>& hist) {
    GradPair total;
    {
      // Every row lands in exactly one bin of column 0.
      const GradPair* h = hist.data() + m_.offsets[0];
      for (std::uint32_t b = 0; b <= m_.missing_bin(0); ++b) total += h[b];
    }
    if (depth >= params_.max_depth) {
      make_leaf(node, total);
      return;
    }
    const SplitCandidate split = find_split(hist, total);
    if (split.feature < 0) {
      make_leaf(node, total);
      return;
    }

    const auto mid_it = std::stable_partition(rows_.begin() + static_cast<std::ptrdiff_t>(begin),
                                              rows_.begin() + static_cast<std::ptrdiff_t>(end),
                                              [&](std::uint32_t r) { return row_goes_left(r, split); });
    const auto mid = static_cast<std::size_t>(mid_it - rows_.begin());

    const auto f = static_cast<std::size_t>(split.feature);
    TreeNode& n = tree_.nodes[node];
    n.feature = split.feature;
    n.default_left = split.default_left;
    if (types_[f] == SlotType::Categorical) {
      n.categories = {static_cast<std::int32_t>(m_.cuts[f][split.bin])};
    } else {
      n.threshold = m_.cuts[f][split.bin];
    }
    const auto left_id = static_cast<std::int32_t>(tree_.nodes.size());
    tree_.nodes[node].left = left_id;
    tree_.nodes[node].right = left_id + 1;
    tree_.nodes.emplace_back();
    tree_.nodes.emplace_back();

    // Scan the smaller child; the sibling histogram is parent minus child.
    std::vector<GradPair> left_hist(m_.total_bins);
    std::vector<GradPair> right_hist(m_.total_bins);
    if (mid - begin <= end - mid) {
      fill_histogram(begin, mid, left_hist);
      for (std::size_t i = 0; i < hist.size(); ++i) right_hist[i] = hist[i] - left_hist[i];
    } else {
      fill_histogram(mid, end, right_hist);
      for (std::size_t i = 0; i < hist.size(); ++i) left_hist[i] = hist[i] - right_hist[i];
    }
    hist.clear();
    hist.shrink_to_fit();
    grow(static_cast<std::size_t>(left_id), begin, mid, depth + 1, left_hist);
    left_hist = {};
    grow(static_cast<std::size_t>(left_id) + 1, mid, end, depth + 1, right_hist);
  }

  const BinnedMatrix& m_;
  std::span<const SlotType> types_;
  std::span<const GradPair> grads_;
  const TrainParams& params_;
  std::vector<std::uint32_t> rows_;
  Tree tree_;
};

const char* slot_type_name(SlotType t) { return t == SlotType::Numeric ? "numeric" : "categorical"; }

SlotType parse_slot_type(const std::string& s) {
  if (s == "numeric") return SlotType::Numeric;
  if (s == "categorical") return SlotType::Categorical;
  throw Error(Errc::ParseError, "unknown feature type '" + s + "'");
}

}  // namespace

double sigmoid(double margin) noexcept {
  const double p = 1.0 / (1.0 + std::exp(-margin));
  return std::clamp(p, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

Json TrainParams::to_json() const {
  Json doc{{"num_trees", num_trees},
           {"max_depth", max_depth},
           {"learning_rate", learning_rate},
           {"min_child_weight", min_child_weight},
           {"l2_leaf_penalty", l2_leaf_penalty},
           {"subsample", subsample},
           {"seed", seed}};
  doc["positive_class_weight"] = positive_class_weight ? Json(*positive_class_weight) : Json(nullptr);
  return doc;
}

TrainParams TrainParams::from_json(const Json& doc) {
  TrainParams p;
  p.num_trees = doc.value("num_trees", p.num_trees);
  p.max_depth = doc.value("max_depth", p.max_depth);
  p.learning_rate = doc.value("learning_rate", p.learning_rate);
  p.min_child_weight = doc.value("min_child_weight", p.min_child_weight);
  p.l2_leaf_penalty = doc.value("l2_leaf_penalty", p.l2_leaf_penalty);
  p.subsample = doc.value("subsample", p.subsample);
  p.seed = doc.value("seed", p.seed);
  if (doc.contains("positive_class_weight") && !doc["positive_class_weight"].is_null()) {
    p.positive_class_weight = doc["positive_class_weight"].get<double>();
  }
  return p;
}

double Tree::leaf_weight(std::span<const double> x, std::span<const SlotType> types) const {
  std::size_t i = 0;
  while (!nodes[i].is_leaf()) {
    const auto& n = nodes[i];
    const auto f = static_cast<std::size_t>(n.feature);
    i = static_cast<std::size_t>(goes_left(n, x[f], types[f]) ? n.left : n.right);
  }
  return nodes[i].weight;
}

int Tree::depth() const {
  std::vector<int> level(nodes.size(), 0);
  int deepest = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].is_leaf()) continue;
    for (auto child : {nodes[i].left, nodes[i].right}) {
      level[static_cast<std::size_t>(child)] = level[i] + 1;
      deepest = std::max(deepest, level[i] + 1);
    }
  }
  return deepest;
}

double BoostedModel::predict_margin(std::span<const double> x) const {
  if (x.size() != feature_types.size()) {
    throw Error(Errc::SchemaMismatch, "expected " + std::to_string(feature_types.size()) + " features, got " +
                                          std::to_string(x.size()));
  }
  double sum = 0.0;
  for (const auto& t : trees) sum += t.leaf_weight(x, feature_types);
  return base_score + learning_rate * sum;
}

double BoostedModel::predict_score(std::span<const double> x) const { return sigmoid(predict_margin(x)); }

double BoostedModel::predict_score(const FeatureVector& v) const {
  if (v.schema_hash != schema_hash) {
    throw Error(Errc::SchemaMismatch, "vector schema " + hex64(v.schema_hash) + " vs model " + hex64(schema_hash));
  }
  return predict_score(std::span<const double>(v.values));
}

LossGradient loss_and_gradient(std::span<const double> predictions, std::span<const std::uint8_t> labels,
                               double positive_class_weight) {
  if (predictions.size() != labels.size()) {
    throw Error(Errc::LengthMismatch, std::to_string(predictions.size()) + " predictions vs " +
                                          std::to_string(labels.size()) + " labels");
  }
  LossGradient out;
  out.gradient.resize(predictions.size());
  out.hessian.resize(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double p = predictions[i];
    const bool y = labels[i] != 0;
    const double w = y ? positive_class_weight : 1.0;
    out.loss += -w * (y ? std::log(p) : std::log1p(-p));
    out.gradient[i] = w * (p - (y ? 1.0 : 0.0));
    out.hessian[i] = w * p * (1.0 - p);
  }
  return out;
}

BoostedModel train(const TrainingData& data, const TrainParams& params) {
  if (data.features.size() != data.rows * data.cols || data.labels.size() != data.rows ||
      data.types.size() != data.cols) {
    throw Error(Errc::SchemaMismatch, "training matrix shape is inconsistent");
  }
  if (params.num_trees < 0 || params.max_depth < 0 || !(params.learning_rate > 0.0) || params.learning_rate > 1.0 ||
      params.l2_leaf_penalty < 0.0 || !(params.subsample > 0.0) || params.subsample > 1.0) {
    throw Error(Errc::InvalidConfig, "invalid boosting parameters");
  }
  std::size_t positives = 0;
  for (auto l : data.labels) positives += l != 0;
  const std::size_t negatives = data.rows - positives;
  if (positives == 0 || negatives == 0) {
    throw Error(Errc::DegenerateLabels, std::to_string(positives) + " positives, " + std::to_string(negatives) +
                                            " negatives");
  }

  BoostedModel model;
  model.params = params;
  const double pos_weight = params.positive_class_weight.value_or(static_cast<double>(negatives) /
                                                                  static_cast<double>(positives));
  model.params.positive_class_weight = pos_weight;
  model.learning_rate = params.learning_rate;
  model.feature_types = data.types;
  model.schema_hash = data.schema_hash;
  model.base_score = std::log(pos_weight * static_cast<double>(positives) / static_cast<double>(negatives));

  const BinnedMatrix binned(data);
  std::vector<double> margins(data.rows, model.base_score);
  std::vector<GradPair> grads(data.rows);
  std::vector<double> probs(data.rows);
  std::vector<double> tree_out(data.rows);
  double loss = total_loss(margins, data.labels, pos_weight);
  model.training_loss.push_back(loss);

  std::mt19937_64 rng(params.seed);
  std::vector<std::uint32_t> all_rows(data.rows);
  for (std::uint32_t i = 0; i < data.rows; ++i) all_rows[i] = i;

  TreeBuilder builder(binned, data.types, grads, params);
  for (int round = 0; round < params.num_trees; ++round) {
    for (std::size_t i = 0; i < data.rows; ++i) probs[i] = sigmoid(margins[i]);
    const auto lg = loss_and_gradient(probs, data.labels, pos_weight);
    for (std::size_t i = 0; i < data.rows; ++i) grads[i] = {lg.gradient[i], lg.hessian[i]};

    std::vector<std::uint32_t> rows;
    if (params.subsample < 1.0) {
      std::bernoulli_distribution keep(params.subsample);
      for (std::uint32_t i = 0; i < data.rows; ++i) {
        if (keep(rng)) rows.push_back(i);
      }
      if (rows.empty()) rows = all_rows;
    } else {
      rows = all_rows;
    }
    Tree tree = builder.build(std::move(rows));

    for (std::size_t i = 0; i < data.rows; ++i) tree_out[i] = tree.leaf_weight(data.row(i), data.types);

    // Backtrack on the step size until the training loss does not increase.
    double scale = 1.0;
    double new_loss = loss;
    std::vector<double> trial(data.rows);
    for (int attempt = 0;; ++attempt) {
      for (std::size_t i = 0; i < data.rows; ++i) trial[i] = margins[i] + params.learning_rate * scale * tree_out[i];
      new_loss = total_loss(trial, data.labels, pos_weight);
      if (new_loss <= loss) break;
      if (attempt == 30) {
        scale = 0.0;
        new_loss = loss;
        trial = margins;
        break;
      }
      scale *= 0.5;
    }
    if (scale != 1.0) {
      for (auto& n : tree.nodes) n.weight *= scale;
    }
    margins.swap(trial);
    loss = new_loss;
    model.training_loss.push_back(loss);
    model.trees.push_back(std::move(tree));
  }
  return model;
}

Json BoostedModel::to_json() const {
  Json types = Json::array();
  for (auto t : feature_types) types.push_back(slot_type_name(t));
  Json tree_docs = Json::array();
  for (const auto& t : trees) {
    Json feature = Json::array(), threshold = Json::array(), categories = Json::array(), left = Json::array(),
         right = Json::array(), default_left = Json::array(), weight = Json::array();
    for (const auto& n : t.nodes) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      categories.push_back(n.categories);
      left.push_back(n.left);
      right.push_back(n.right);
      default_left.push_back(n.default_left);
      weight.push_back(n.weight);
    }
    tree_docs.push_back({{"feature", feature},
                         {"threshold", threshold},
                         {"categories", categories},
                         {"left", left},
                         {"right", right},
                         {"default_left", default_left},
                         {"weight", weight}});
  }
  return Json{{"format", kModelFormat},
              {"schema_hash", hex64(schema_hash)},
              {"feature_types", types},
              {"base_score", base_score},
              {"learning_rate", learning_rate},
              {"params", params.to_json()},
              {"training_loss", training_loss},
              {"manifest", manifest},
              {"trees", tree_docs}};
}

BoostedModel BoostedModel::from_json(const Json& doc) {
  if (doc.value("format", std::string()) != kModelFormat) {
    throw Error(Errc::ParseError, "unsupported model format '" + doc.value("format", std::string()) + "'");
  }
  BoostedModel m;
  m.schema_hash = std::stoull(doc.at("schema_hash").get<std::string>(), nullptr, 16);
  for (const auto& t : doc.at("feature_types")) m.feature_types.push_back(parse_slot_type(t.get<std::string>()));
  m.base_score = doc.at("base_score").get<double>();
  m.learning_rate = doc.at("learning_rate").get<double>();
  m.params = TrainParams::from_json(doc.at("params"));
  m.training_loss = doc.at("training_loss").get<std::vector<double>>();
  m.manifest = doc.at("manifest");
  const auto n_features = static_cast<std::int32_t>(m.feature_types.size());
  for (const auto& td : doc.at("trees")) {
    Tree t;
    const auto& feature = td.at("feature");
    t.nodes.resize(feature.size());
    for (std::size_t i = 0; i < feature.size(); ++i) {
      auto& n = t.nodes[i];
      n.feature = feature[i].get<std::int32_t>();
      n.threshold = td.at("threshold")[i].get<double>();
      n.categories = td.at("categories")[i].get<std::vector<std::int32_t>>();
      n.left = td.at("left")[i].get<std::int32_t>();
      n.right = td.at("right")[i].get<std::int32_t>();
      n.default_left = td.at("default_left")[i].get<bool>();
      n.weight = td.at("weight")[i].get<double>();
      if (n.feature >= n_features) throw Error(Errc::ParseError, "split references unknown feature");
      const auto size = static_cast<std::int32_t>(feature.size());
      if (!n.is_leaf() && (n.left <= static_cast<std::int32_t>(i) || n.right <= static_cast<std::int32_t>(i) ||
                           n.left >= size || n.right >= size)) {
        throw Error(Errc::ParseError, "malformed tree links");
      }
    }
    if (t.nodes.empty()) throw Error(Errc::ParseError, "empty tree");
    m.trees.push_back(std::move(t));
  }
  return m;
}

void BoostedModel::save(const std::filesystem::path& path) const { write_file_atomic(path, dump_pretty(to_json())); }

BoostedModel BoostedModel::load(const std::filesystem::path& path) { return from_json(read_json_file(path)); }

}  // namespace pts
