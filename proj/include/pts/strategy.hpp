#pragma once

#include "pts/boosting.hpp"
#include "pts/features.hpp"
#include "pts/metrics.hpp"

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pts {

inline constexpr std::size_t kUnboundedCount = std::numeric_limits<std::size_t>::max();
inline constexpr std::size_t kDefaultGridSize = 512;

struct ScoredTarget {
  std::string target;
  double score = 0.0;
  bool failed = false;
  bool flaked = false;
};

/// One change of an evaluation dataset: every dependent test with its score
/// and aggregated outcome.
struct EvalChange {
  std::string change_id;
  std::vector<ScoredTarget> targets;
};

/// Selected targets from a scored list: every target with score >= score_cutoff
/// plus the count_cutoff highest-scoring ones, ordered by descending score,
/// ties broken by ascending target id.
std::vector<ScoredTarget> select_from_scores(std::vector<ScoredTarget> scored, double score_cutoff,
                                             std::size_t count_cutoff);

struct Strategy {
  std::shared_ptr<const BoostedModel> model;
  double score_cutoff = 0.0;
  std::size_t count_cutoff = 0;
};

/// Scores every dependent test of `change` and applies the strategy.
/// Throws MissingGraphSnapshot (via the extractor) and SchemaMismatch.
std::vector<ScoredTarget> select(const Strategy& strategy, const Change& change, const FeatureExtractor& extractor);

/// Metric counts of the strategy (score_cutoff, count_cutoff) over a dataset.
MetricCounts evaluate_cutoffs(std::span<const EvalChange> dataset, double score_cutoff, std::size_t count_cutoff);

struct CurvePoint {
  double cutoff = 0.0;
  double test_recall = 0.0;
  double change_recall = 0.0;
  double selection_rate = 0.0;
  double test_recall_with_flakes = 0.0;
  MetricCounts counts;
};

struct CalibrationCurve {
  std::string parameter;  // "score_cutoff" or "count_cutoff"
  std::vector<CurvePoint> points;  // ascending cutoff

  Json to_json() const;
};

/// {0, 1} plus `size` evenly spaced quantiles of the observed scores.
std::vector<double> score_grid(std::span<const EvalChange> dataset, std::size_t size = kDefaultGridSize);
/// 0 .. min(max |DependentTests|, cap).
std::vector<std::size_t> count_grid(std::span<const EvalChange> dataset, std::size_t cap = kDefaultGridSize);

/// Sweeps score_cutoff with count_cutoff fixed (0 by default). Throws
/// NoFailuresInDataset.
CalibrationCurve sweep_score_cutoff(std::span<const EvalChange> dataset, std::span<const double> grid,
                                    std::size_t count_cutoff = 0);
/// Sweeps count_cutoff with the score threshold disabled (ranked-only).
CalibrationCurve sweep_count_cutoff(std::span<const EvalChange> dataset, std::span<const std::size_t> grid);

struct RecallTargets {
  double test_recall_min = 0.95;
  double change_recall_min = 0.999;
};

struct Calibration {
  double score_cutoff = 0.0;
  std::size_t count_cutoff = 0;
  RecallTargets targets;
  CalibrationCurve score_curve;
  CalibrationCurve count_curve;
  MetricsReport combined;  // the chosen pair re-evaluated on the same data

  Json to_json() const;
};

/// Picks the largest score cutoff meeting test_recall_min and, independently,
/// the smallest count cutoff meeting change_recall_min. Throws
/// UnreachableTarget (with the best achievable value) or NoFailuresInDataset.
Calibration calibrate(std::span<const EvalChange> dataset, const RecallTargets& targets,
                      std::size_t grid_size = kDefaultGridSize);

/// Selection rate of the largest score cutoff reaching `test_recall` with the
/// given count cutoff, plus the point itself. Throws UnreachableTarget.
CurvePoint operating_point_at_recall(std::span<const EvalChange> dataset, double test_recall,
                                     std::size_t count_cutoff = 0, std::size_t grid_size = kDefaultGridSize);

/// Plain CSV: cutoff,test_recall,change_recall,selection_rate,test_recall_with_flakes.
void write_curve_csv(std::ostream& out, const CalibrationCurve& curve);

}  // namespace pts
