#include "pts/error.hpp"
#include "pts/pipeline.hpp"
#include "pts/strategy.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

namespace pts {
namespace {

std::vector<EvalChange> random_dataset(std::uint64_t seed, int changes = 40) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<EvalChange> out;
  for (int c = 0; c < changes; ++c) {
    EvalChange e{"c" + std::to_string(c), {}};
    const int n = 1 + static_cast<int>(rng() % 25);
    for (int i = 0; i < n; ++i) {
      const double s = std::round(u(rng) * 50) / 50;  // plenty of ties
      const bool failed = u(rng) < 0.15 * (0.3 + s);
      const bool flaked = !failed && u(rng) < 0.1;
      e.targets.push_back({"t" + std::to_string(i), s, failed, flaked});
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<std::string> names(const std::vector<ScoredTarget>& v) {
  std::vector<std::string> out;
  for (const auto& t : v) out.push_back(t.target);
  return out;
}

TEST(Strategy, UnionOfCriteria) {
  std::vector<ScoredTarget> s{{"b", 0.2}, {"a", 0.9}, {"c", 0.2}, {"d", 0.05}};
  EXPECT_EQ(names(select_from_scores(s, 0.5, 0)), (std::vector<std::string>{"a"}));
  EXPECT_EQ(names(select_from_scores(s, 0.5, 2)), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(names(select_from_scores(s, 0.1, 1)), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(names(select_from_scores(s, 1.0, 0)).size(), 0u);
  EXPECT_EQ(names(select_from_scores(s, 0.0, 0)).size(), 4u);
  EXPECT_EQ(names(select_from_scores(s, 1.0, kUnboundedCount)).size(), 4u);
}

// Prefix sums against explicit selections scored by the metrics module.
TEST(Strategy, EvaluateCutoffsMatchesExplicitSets) {
  const auto data = random_dataset(3);
  for (double sc : {0.0, 0.2, 0.5, 0.77, 1.0}) {
    for (std::size_t k : {0, 1, 3, 100}) {
      EXPECT_EQ(evaluate_cutoffs(data, sc, k), count(to_change_evaluations(data, sc, k))) << sc << " " << k;
    }
  }
}

TEST(Strategy, SweepsAreMonotone) {
  for (std::uint64_t seed : {1, 2, 3, 4}) {
    const auto data = random_dataset(seed);
    const auto sg = score_grid(data, 64);
    ASSERT_TRUE(std::is_sorted(sg.begin(), sg.end()));
    EXPECT_EQ(sg.front(), 0.0);
    EXPECT_EQ(sg.back(), 1.0);
    const auto sc = sweep_score_cutoff(data, sg);
    for (std::size_t i = 1; i < sc.points.size(); ++i) {
      const auto &a = sc.points[i - 1], &b = sc.points[i];
      EXPECT_LE(b.test_recall, a.test_recall);
      EXPECT_LE(b.change_recall, a.change_recall);
      EXPECT_LE(b.selection_rate, a.selection_rate);
      EXPECT_LE(b.test_recall_with_flakes, a.test_recall_with_flakes);
    }
    EXPECT_EQ(sc.points.front().selection_rate, 1.0);
    const auto kg = count_grid(data);
    const auto cc = sweep_count_cutoff(data, kg);
    EXPECT_EQ(cc.points.front().selection_rate, 0.0);
    EXPECT_EQ(cc.points.back().change_recall, 1.0);
    for (std::size_t i = 1; i < cc.points.size(); ++i) {
      EXPECT_GE(cc.points[i].change_recall, cc.points[i - 1].change_recall);
      EXPECT_GE(cc.points[i].selection_rate, cc.points[i - 1].selection_rate);
    }
  }
}

TEST(Strategy, CalibrationMeetsTargets) {
  const auto data = random_dataset(7, 80);
  for (double tr : {0.5, 0.8, 0.95}) {
    for (double cr : {0.6, 0.9, 0.999}) {
      const auto cal = calibrate(data, {tr, cr}, 128);
      const auto re = MetricsReport::from_counts(evaluate_cutoffs(data, cal.score_cutoff, cal.count_cutoff));
      EXPECT_GE(re.test_recall.value(), tr);
      EXPECT_GE(re.change_recall.value(), cr);
      EXPECT_EQ(re.selection_rate.numerator, cal.combined.selection_rate.numerator);
      // The chosen score cutoff is the largest grid value that reaches the target.
      bool seen = false;
      for (const auto& p : cal.score_curve.points) {
        if (p.cutoff > cal.score_cutoff && p.test_recall >= tr) seen = true;
      }
      EXPECT_FALSE(seen);
    }
  }
}

TEST(Strategy, CalibrationErrors) {
  std::vector<EvalChange> quiet{{"c", {{"t", 0.5, false, true}}}};
  try {
    calibrate(quiet, {0.9, 0.9});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NoFailuresInDataset);
  }
  const auto data = random_dataset(5);
  EXPECT_THROW(calibrate(data, {1.5, 0.9}), Error);
}

TEST(Strategy, OperatingPoint) {
  const auto data = random_dataset(9, 60);
  const auto p = operating_point_at_recall(data, 0.7, 0, 256);
  EXPECT_GE(p.test_recall, 0.7);
  const auto curve = sweep_score_cutoff(data, score_grid(data, 256));
  for (const auto& q : curve.points) {
    if (q.test_recall >= 0.7) {
      EXPECT_GE(q.selection_rate, p.selection_rate);
    }
  }
}

TEST(Strategy, CurveCsv) {
  const auto data = random_dataset(2, 5);
  std::ostringstream os;
  write_curve_csv(os, sweep_count_cutoff(data, count_grid(data)));
  const std::string text = os.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "count_cutoff,test_recall,change_recall,selection_rate,test_recall_with_flakes");
}

}  // namespace
}  // namespace pts
