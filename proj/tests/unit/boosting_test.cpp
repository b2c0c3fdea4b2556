#include "pts/boosting.hpp"
#include "pts/error.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace pts {
namespace {

TrainingData make_data(std::size_t cols) {
  TrainingData d;
  d.cols = cols;
  d.types.assign(cols, SlotType::Numeric);
  return d;
}

void push(TrainingData& d, std::vector<double> x, bool y) {
  d.features.insert(d.features.end(), x.begin(), x.end());
  d.labels.push_back(y ? 1 : 0);
  ++d.rows;
}

// Walks the serialized arrays directly; shares no code with the model.
double naive_score(const Json& model, std::span<const double> x) {
  double margin = model.at("base_score").get<double>();
  const double lr = model.at("learning_rate").get<double>();
  for (const auto& t : model.at("trees")) {
    std::size_t n = 0;
    while (t.at("feature")[n].get<int>() >= 0) {
      const int f = t["feature"][n].get<int>();
      bool left;
      if (std::isnan(x[f])) {
        left = t["default_left"][n].get<bool>();
      } else if (!t["categories"][n].empty()) {
        left = false;
        for (const auto& c : t["categories"][n]) left |= c.get<int>() == static_cast<int>(x[f]);
      } else {
        left = x[f] <= t["threshold"][n].get<double>();
      }
      n = (left ? t["left"][n] : t["right"][n]).get<std::size_t>();
    }
    margin += lr * t["weight"][n].get<double>();
  }
  return 1.0 / (1.0 + std::exp(-margin));
}

double auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    pos += 1;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  for (int v : y) neg += v == 0;
  return num / (pos * neg);
}

TEST(Boosting, GradientClosedForms) {
  const std::vector<double> p{0.5, 0.25};
  const std::vector<std::uint8_t> y{1, 1};
  const auto lg = loss_and_gradient(p, y, 1.0);
  EXPECT_DOUBLE_EQ(lg.gradient[0], -0.5);
  const auto weighted = loss_and_gradient(p, y, 4.0);
  EXPECT_DOUBLE_EQ(weighted.gradient[1], 4.0 * (0.25 - 1.0));
  EXPECT_DOUBLE_EQ(weighted.hessian[1], 4.0 * 0.25 * 0.75);
  EXPECT_THROW(loss_and_gradient(p, std::vector<std::uint8_t>{1}, 1.0), Error);
}

TEST(Boosting, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> margin(-6.0, 6.0), weight(0.5, 50.0);
  const double h = 1e-5;
  for (int i = 0; i < 1000; ++i) {
    const double m = margin(rng), w = weight(rng);
    const std::vector<std::uint8_t> y{static_cast<std::uint8_t>(rng() % 2)};
    auto loss_at = [&](double mm) { return loss_and_gradient(std::vector{sigmoid(mm)}, y, w).loss; };
    const double fd = (loss_at(m + h) - loss_at(m - h)) / (2 * h);
    const auto lg = loss_and_gradient(std::vector{sigmoid(m)}, y, w);
    EXPECT_LE(std::abs(fd - lg.gradient[0]), 1e-6 * std::abs(lg.gradient[0])) << m << " " << w;
    const double fd2 = (loss_and_gradient(std::vector{sigmoid(m + h)}, y, w).gradient[0] -
                        loss_and_gradient(std::vector{sigmoid(m - h)}, y, w).gradient[0]) / (2 * h);
    EXPECT_NEAR(fd2, lg.hessian[0], 1e-6 * std::max(1.0, lg.hessian[0]));
  }
}

TEST(Boosting, SeparableOneDimensional) {
  auto d = make_data(1);
  for (int i = 0; i < 200; ++i) push(d, {static_cast<double>(i)}, i >= 120);
  TrainParams p;
  p.num_trees = 20;
  const auto m = train(d, p);
  int correct = 0;
  for (std::size_t i = 0; i < d.rows; ++i) correct += (m.predict_score(d.row(i)) > 0.5) == (d.labels[i] == 1);
  EXPECT_GE(correct, 198);
}

TEST(Boosting, IdenticalFeaturesPredictPrevalence) {
  auto d = make_data(2);
  for (int i = 0; i < 40; ++i) push(d, {1.0, 2.0}, i < 10);
  TrainParams p;
  p.positive_class_weight = 1.0;
  const auto m = train(d, p);
  EXPECT_NEAR(m.predict_score(d.row(0)), 0.25, 1e-9);
}

TEST(Boosting, XorNeedsDepthTwo) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  auto d = make_data(2);
  for (int i = 0; i < 400; ++i) {
    const double a = u(rng), b = u(rng);
    push(d, {a, b}, (a > 0) != (b > 0));
  }
  // Best single stump by brute force over every threshold.
  double best_stump = 0;
  for (std::size_t f = 0; f < 2; ++f) {
    for (std::size_t r = 0; r < d.rows; ++r) {
      const double t = d.row(r)[f];
      int agree = 0;
      for (std::size_t i = 0; i < d.rows; ++i) agree += (d.row(i)[f] <= t) == (d.labels[i] == 1);
      best_stump = std::max(best_stump, std::max(agree, static_cast<int>(d.rows) - agree) / double(d.rows));
    }
  }
  EXPECT_LT(best_stump, 0.65);

  TrainParams p;
  p.max_depth = 2;
  p.num_trees = 50;
  const auto m = train(d, p);
  int correct = 0;
  for (std::size_t i = 0; i < d.rows; ++i) correct += (m.predict_score(d.row(i)) > 0.5) == (d.labels[i] == 1);
  EXPECT_GE(correct / double(d.rows), 0.95);
}

TEST(Boosting, PriorOnlyAndClosedFormLeaf) {
  BoostedModel m;
  m.base_score = 0.3;
  m.feature_types = {SlotType::Numeric};
  const std::vector<double> x{1.0};
  EXPECT_DOUBLE_EQ(m.predict_score(x), 1.0 / (1.0 + std::exp(-0.3)));
  Tree t;
  t.nodes.push_back(TreeNode{});
  t.nodes[0].weight = 2.0;
  m.trees.push_back(t);
  m.learning_rate = 0.5;
  EXPECT_DOUBLE_EQ(m.predict_score(x), 1.0 / (1.0 + std::exp(-1.3)));
}

TEST(Boosting, MatchesNaiveWalkerAndRoundTrips) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0, 1);
  auto d = make_data(4);
  d.types[3] = SlotType::Categorical;
  for (int i = 0; i < 600; ++i) {
    const double a = g(rng), b = g(rng), c = g(rng), cat = static_cast<double>(rng() % 5);
    const double x0 = i % 17 == 0 ? std::nan("") : a;
    push(d, {x0, b, c, cat}, a + 0.5 * b + (cat == 2 ? 1.5 : 0) + 0.5 * g(rng) > 0.8);
  }
  TrainParams p;
  p.num_trees = 30;
  p.max_depth = 4;
  const auto m = train(d, p);
  const Json doc = m.to_json();
  const auto back = BoostedModel::from_json(Json::parse(doc.dump()));
  for (int i = 0; i < 100; ++i) {
    std::vector<double> x{i % 10 == 0 ? std::nan("") : g(rng), g(rng), g(rng), static_cast<double>(rng() % 6)};
    const double s = m.predict_score(x);
    EXPECT_NEAR(s, naive_score(doc, x), 1e-12);
    EXPECT_EQ(s, back.predict_score(x));
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
  for (const auto& t : m.trees) EXPECT_LE(t.depth(), 4);
}

TEST(Boosting, LossNonIncreasing) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0, 1);
  auto d = make_data(3);
  for (int i = 0; i < 500; ++i) {
    const double a = g(rng), b = g(rng), c = g(rng);
    push(d, {a, b, c}, a * b + 0.3 * g(rng) > 0.5);
  }
  const auto m = train(d, TrainParams{});
  ASSERT_EQ(m.training_loss.size(), 201u);
  for (std::size_t i = 1; i < m.training_loss.size(); ++i) EXPECT_LE(m.training_loss[i], m.training_loss[i - 1]);
}

TEST(Boosting, Deterministic) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0, 1);
  auto d = make_data(2);
  for (int i = 0; i < 300; ++i) {
    const double a = g(rng), b = g(rng);
    push(d, {a, b}, a + g(rng) > 1);
  }
  TrainParams p;
  p.num_trees = 20;
  p.subsample = 0.7;
  p.seed = 17;
  EXPECT_EQ(train(d, p).to_json().dump(), train(d, p).to_json().dump());
}

TEST(Boosting, ImbalancedRanking) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0, 1);
  auto make = [&](int neg, int pos) {
    auto d = make_data(2);
    for (int i = 0; i < neg; ++i) push(d, {g(rng), g(rng)}, false);
    for (int i = 0; i < pos; ++i) push(d, {3.0 + g(rng), g(rng)}, true);
    return d;
  };
  const auto tr = make(30000, 30);
  TrainParams p;
  p.num_trees = 50;
  const auto m = train(tr, p);
  const auto te = make(3000, 30);
  std::vector<double> s;
  std::vector<int> y;
  for (std::size_t i = 0; i < te.rows; ++i) {
    s.push_back(m.predict_score(te.row(i)));
    y.push_back(te.labels[i]);
  }
  EXPECT_GE(auc(s, y), 0.9);
}

TEST(Boosting, Errors) {
  auto d = make_data(1);
  push(d, {1.0}, true);
  push(d, {2.0}, true);
  EXPECT_THROW(train(d, TrainParams{}), Error);
  auto bad = make_data(2);
  push(bad, {1.0, 2.0}, true);
  push(bad, {1.0, 2.0}, false);
  bad.types.pop_back();
  EXPECT_THROW(train(bad, TrainParams{}), Error);

  BoostedModel m;
  m.schema_hash = 7;
  m.feature_types = {SlotType::Numeric};
  EXPECT_THROW(m.predict_score(FeatureVector{{1.0}, 8}), Error);
  EXPECT_NO_THROW(m.predict_score(FeatureVector{{1.0}, 7}));
}

}  // namespace
}  // namespace pts
