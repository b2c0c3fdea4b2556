#include "pts/strategy.hpp"

#include "pts/error.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace pts {

namespace {

bool ranks_before(const ScoredTarget& a, const ScoredTarget& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.target < b.target;
}

/// Per-change targets in rank order with prefix counts, so any strategy's
/// selection is a prefix whose counts are O(log n) to read.
struct RankedChange {
  std::vector<double> scores;          // descending
  std::vector<std::uint32_t> failed;   // prefix sums, size n + 1
  std::vector<std::uint32_t> flaked;
  std::uint32_t first_failure = 0;     // rank of the best-ranked failure, n if none

  explicit RankedChange(const EvalChange& change) {
    std::vector<ScoredTarget> sorted = change.targets;
    std::sort(sorted.begin(), sorted.end(), ranks_before);
    const auto n = static_cast<std::uint32_t>(sorted.size());
    scores.reserve(n);
    failed.assign(n + 1, 0);
    flaked.assign(n + 1, 0);
    first_failure = n;
    for (std::uint32_t i = 0; i < n; ++i) {
      scores.push_back(sorted[i].score);
      failed[i + 1] = failed[i] + (sorted[i].failed ? 1 : 0);
      flaked[i + 1] = flaked[i] + (sorted[i].flaked ? 1 : 0);
      if (sorted[i].failed && first_failure == n) first_failure = i;
    }
  }

  std::size_t size() const { return scores.size(); }

  std::size_t prefix_length(double score_cutoff, std::size_t count_cutoff) const {
    const auto above = static_cast<std::size_t>(
        std::upper_bound(scores.begin(), scores.end(), score_cutoff, std::greater<>()) - scores.begin());
    // upper_bound with greater<> gives the first score < cutoff.
    return std::max(above, std::min(count_cutoff, size()));
  }

  MetricCounts counts(std::size_t prefix) const {
    MetricCounts c;
    const std::size_t n = size();
    c.selected_failed = failed[prefix];
    c.failed = failed[n];
    c.faulty_changes = failed[n] > 0 ? 1 : 0;
    c.caught_changes = failed[prefix] > 0 ? 1 : 0;
    c.selected = prefix;
    c.dependent = n;
    c.selected_failed_or_flaked = failed[prefix] + flaked[prefix];
    c.failed_or_flaked = failed[n] + flaked[n];
    return c;
  }
};

std::vector<RankedChange> rank_all(std::span<const EvalChange> dataset) {
  std::vector<RankedChange> out;
  out.reserve(dataset.size());
  for (const auto& c : dataset) out.emplace_back(c);
  return out;
}

CurvePoint make_point(double cutoff, const MetricCounts& c) {
  const auto r = MetricsReport::from_counts(c);
  return {cutoff, r.test_recall.value(), r.change_recall.value(), r.selection_rate.value(),
          r.test_recall_with_flakes.value(), c};
}

void require_failures(std::span<const RankedChange> ranked) {
  for (const auto& r : ranked) {
    if (r.failed.back() > 0) return;
  }
  throw Error(Errc::NoFailuresInDataset, "evaluation dataset has no failed tests");
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

Json point_json(const CurvePoint& p) {
  return Json{{"cutoff", p.cutoff},
              {"test_recall", p.test_recall},
              {"change_recall", p.change_recall},
              {"selection_rate", p.selection_rate},
              {"test_recall_with_flakes", p.test_recall_with_flakes}};
}

}  // namespace

std::vector<ScoredTarget> select_from_scores(std::vector<ScoredTarget> scored, double score_cutoff,
                                             std::size_t count_cutoff) {
  std::sort(scored.begin(), scored.end(), ranks_before);
  std::size_t keep = 0;
  while (keep < scored.size() && scored[keep].score >= score_cutoff) ++keep;
  keep = std::max(keep, std::min(count_cutoff, scored.size()));
  scored.resize(keep);
  return scored;
}

std::vector<ScoredTarget> select(const Strategy& strategy, const Change& change, const FeatureExtractor& extractor) {
  if (!strategy.model) throw Error(Errc::InvalidInput, "strategy has no model");
  if (strategy.model->schema_hash != extractor.schema().hash()) {
    throw Error(Errc::SchemaMismatch, "extractor schema " + extractor.schema().hash_hex() + " vs model " +
                                          hex64(strategy.model->schema_hash));
  }
  const auto rows = extractor.extract_change(change);
  const std::size_t width = extractor.schema().size();
  std::vector<ScoredTarget> scored;
  scored.reserve(rows.targets.size());
  for (std::size_t i = 0; i < rows.targets.size(); ++i) {
    const std::span<const double> x(rows.values.data() + i * width, width);
    scored.push_back({rows.targets[i], strategy.model->predict_score(x), false, false});
  }
  return select_from_scores(std::move(scored), strategy.score_cutoff, strategy.count_cutoff);
}

MetricCounts evaluate_cutoffs(std::span<const EvalChange> dataset, double score_cutoff, std::size_t count_cutoff) {
  MetricCounts total;
  for (const auto& change : dataset) {
    const RankedChange r(change);
    total += r.counts(r.prefix_length(score_cutoff, count_cutoff));
  }
  return total;
}

Json CalibrationCurve::to_json() const {
  Json pts = Json::array();
  for (const auto& p : points) pts.push_back(point_json(p));
  return Json{{"parameter", parameter}, {"points", pts}};
}

std::vector<double> score_grid(std::span<const EvalChange> dataset, std::size_t size) {
  std::vector<double> scores;
  for (const auto& c : dataset) {
    for (const auto& t : c.targets) scores.push_back(t.score);
  }
  std::sort(scores.begin(), scores.end());
  std::vector<double> grid{0.0, 1.0};
  if (!scores.empty() && size > 0) {
    for (std::size_t i = 0; i < size; ++i) {
      const double q = size == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(size - 1);
      const auto idx = static_cast<std::size_t>(std::llround(q * static_cast<double>(scores.size() - 1)));
      grid.push_back(scores[idx]);
    }
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

std::vector<std::size_t> count_grid(std::span<const EvalChange> dataset, std::size_t cap) {
  std::size_t largest = 0;
  for (const auto& c : dataset) largest = std::max(largest, c.targets.size());
  std::vector<std::size_t> grid;
  for (std::size_t k = 0; k <= std::min(largest, cap); ++k) grid.push_back(k);
  return grid;
}

CalibrationCurve sweep_score_cutoff(std::span<const EvalChange> dataset, std::span<const double> grid,
                                    std::size_t count_cutoff) {
  const auto ranked = rank_all(dataset);
  require_failures(ranked);
  std::vector<double> sorted(grid.begin(), grid.end());
  std::sort(sorted.begin(), sorted.end());
  CalibrationCurve curve{"score_cutoff", {}};
  for (double cutoff : sorted) {
    MetricCounts total;
    for (const auto& r : ranked) total += r.counts(r.prefix_length(cutoff, count_cutoff));
    curve.points.push_back(make_point(cutoff, total));
  }
  return curve;
}

CalibrationCurve sweep_count_cutoff(std::span<const EvalChange> dataset, std::span<const std::size_t> grid) {
  const auto ranked = rank_all(dataset);
  require_failures(ranked);
  std::vector<std::size_t> sorted(grid.begin(), grid.end());
  std::sort(sorted.begin(), sorted.end());
  CalibrationCurve curve{"count_cutoff", {}};
  for (std::size_t k : sorted) {
    MetricCounts total;
    for (const auto& r : ranked) total += r.counts(std::min(k, r.size()));
    curve.points.push_back(make_point(static_cast<double>(k), total));
  }
  return curve;
}

Json Calibration::to_json() const {
  return Json{{"score_cutoff", score_cutoff},
              {"count_cutoff", count_cutoff},
              {"targets", {{"test_recall_min", targets.test_recall_min}, {"change_recall_min", targets.change_recall_min}}},
              {"score_curve", score_curve.to_json()},
              {"count_curve", count_curve.to_json()},
              {"combined", combined.to_json()}};
}

Calibration calibrate(std::span<const EvalChange> dataset, const RecallTargets& targets, std::size_t grid_size) {
  Calibration cal;
  cal.targets = targets;
  const auto sgrid = score_grid(dataset, grid_size);
  const auto cgrid = count_grid(dataset, grid_size);
  cal.score_curve = sweep_score_cutoff(dataset, sgrid);
  cal.count_curve = sweep_count_cutoff(dataset, cgrid);

  const CurvePoint* best_score = nullptr;
  double best_tr = 0.0;
  for (const auto& p : cal.score_curve.points) {
    best_tr = std::max(best_tr, p.test_recall);
    if (p.test_recall >= targets.test_recall_min) best_score = &p;  // ascending cutoffs: keep the last
  }
  if (!best_score) {
    throw Error(Errc::UnreachableTarget, "test recall " + fmt(targets.test_recall_min) +
                                             " unreachable; best achievable " + fmt(best_tr));
  }
  const CurvePoint* best_count = nullptr;
  double best_cr = 0.0;
  for (const auto& p : cal.count_curve.points) {
    best_cr = std::max(best_cr, p.change_recall);
    if (!best_count && p.change_recall >= targets.change_recall_min) best_count = &p;
  }
  if (!best_count) {
    throw Error(Errc::UnreachableTarget, "change recall " + fmt(targets.change_recall_min) +
                                             " unreachable; best achievable " + fmt(best_cr));
  }
  cal.score_cutoff = best_score->cutoff;
  cal.count_cutoff = static_cast<std::size_t>(best_count->cutoff);
  cal.combined = MetricsReport::from_counts(evaluate_cutoffs(dataset, cal.score_cutoff, cal.count_cutoff));
  return cal;
}

CurvePoint operating_point_at_recall(std::span<const EvalChange> dataset, double test_recall,
                                     std::size_t count_cutoff, std::size_t grid_size) {
  const auto grid = score_grid(dataset, grid_size);
  const auto curve = sweep_score_cutoff(dataset, grid, count_cutoff);
  const CurvePoint* chosen = nullptr;
  for (const auto& p : curve.points) {
    if (p.test_recall >= test_recall) chosen = &p;
  }
  if (!chosen) throw Error(Errc::UnreachableTarget, "test recall " + fmt(test_recall) + " unreachable");
  return *chosen;
}

void write_curve_csv(std::ostream& out, const CalibrationCurve& curve) {
  out << curve.parameter << ",test_recall,change_recall,selection_rate,test_recall_with_flakes\n";
  out << std::setprecision(17);
  for (const auto& p : curve.points) {
    out << p.cutoff << ',' << p.test_recall << ',' << p.change_recall << ',' << p.selection_rate << ','
        << p.test_recall_with_flakes << '\n';
  }
}

}  // namespace pts
