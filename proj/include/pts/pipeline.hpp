#pragma once

#include "pts/boosting.hpp"
#include "pts/depgraph.hpp"
#include "pts/features.hpp"
#include "pts/history.hpp"
#include "pts/simgen.hpp"
#include "pts/strategy.hpp"

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace pts {

/// Inputs every experiment reads: graph snapshots, target metadata, and the
/// change/outcome history.
struct Corpus {
  GraphStore graphs;
  TargetCatalog catalog;
  std::vector<Change> changes;
  std::vector<OutcomeRecord> outcomes;
  int max_retries = kDefaultMaxRetries;

  HistorySnapshot seal() const;
};

Corpus corpus_from_simulation(const SimCorpus& sim);
/// Reads graph.jsonl (snapshot "r0", or graphs/<revision>.jsonl when present),
/// targets.jsonl, changes.jsonl and outcomes.jsonl from `dir`.
Corpus load_corpus(const std::filesystem::path& dir);

struct RunParams {
  TrainParams train;
  FeatureMask mask = FeatureMask::all();
  TokenConfig tokens;
  LabelPolicy label_policy = LabelPolicy::Deflaked;
  int window_days = 90;   // trailing window of learning runs, holdout included
  int holdout_days = 7;
  std::optional<std::int64_t> end;  // window end (exclusive); default: after the last change
  RecallTargets targets{0.95, 0.999};
  std::size_t grid_size = kDefaultGridSize;
  bool shuffle_labels = false;  // sabotage hook for gate tests

  Json to_json() const;
};

/// Feature rows of every learning-run (change, dependent test) pair inside a
/// time window, with aggregated outcomes.
struct ExampleTable {
  FeatureSchema schema;
  ProjectDictionary projects;
  std::vector<LabeledExample> examples;  // label policy applied
  std::vector<Outcome> outcomes;
  std::vector<std::int64_t> timestamps;
  std::vector<double> values;  // row-major, schema.size() columns
  std::int64_t window_start = 0;
  std::int64_t window_end = 0;

  std::size_t rows() const noexcept { return examples.size(); }
  void relabel(LabelPolicy policy);
};

ExampleTable build_examples(const Corpus& corpus, const HistorySnapshot& history, const RunParams& params);

struct TrainedRun {
  std::shared_ptr<BoostedModel> model;
  std::vector<EvalChange> eval;  // scored held-out changes
  Json dataset_manifest;         // split boundary, label policy, counts, split hash
};

/// Time-splits `table`, trains on the older part, scores the holdout.
/// Throws InsufficientFailures when either side lacks positives.
TrainedRun train_on_table(const ExampleTable& table, const HistorySnapshot& history, const RunParams& params);

/// Keeps only the columns of `mask` (which must be a subset of the table's).
ExampleTable project_table(const ExampleTable& table, FeatureMask mask);

struct CalibratedRun {
  TrainedRun run;
  Calibration calibration;
};

CalibratedRun train_and_calibrate(const Corpus& corpus, const HistorySnapshot& history, const RunParams& params);

/// Eval-set layout the metrics module consumes, for a fixed pair of cutoffs.
std::vector<ChangeEvaluation> to_change_evaluations(std::span<const EvalChange> eval, double score_cutoff,
                                                    std::size_t count_cutoff);

// ---------------------------------------------------------------------------
// Flakiness experiment (deflaked vs conflated labels)

struct FlakinessCurves {
  CalibrationCurve curve;  // score sweep, count_cutoff = 0
  std::vector<double> test_recall;              // interpolated on the shared rate grid
  std::vector<double> test_recall_with_flakes;
};

struct ExperimentResult {
  std::vector<double> rate_grid;
  FlakinessCurves deflaked;   // variant A
  FlakinessCurves conflated;  // variant B
  Json manifest_a;
  Json manifest_b;
  double frac_a_recall_ge_flakes = 0.0;    // TR(A) >= TRWF(A)
  double frac_b_recall_lt_flakes = 0.0;    // TR(B) <  TRWF(B)
  double frac_a_recall_ge_b_recall = 0.0;  // TR(A) >= TR(B)
  double flaked_to_failed_ratio = 0.0;

  Json to_json() const;
};

/// Selection rates 0.05, 0.10, ..., 0.95.
std::vector<double> default_rate_grid();
/// Recall of a score-sweep curve at a selection rate, linearly interpolated.
double recall_at_rate(const CalibrationCurve& curve, double rate, bool with_flakes);

ExperimentResult run_flakiness_experiment(const Corpus& corpus, const HistorySnapshot& history,
                                          const RunParams& params);

// ---------------------------------------------------------------------------
// Wrapper-method feature ablation

struct AblationRow {
  std::string feature;
  double selection_rate_full = 0.0;
  double selection_rate_without = 0.0;
  double count_cutoff_full = 0.0;
  double count_cutoff_without = 0.0;
  std::optional<double> classification_ratio;  // without / full; > 1 means the feature helps
  std::optional<double> ranking_ratio;
};

struct AblationParams {
  double test_recall = 0.9;
  double change_recall = 0.9;
};

std::vector<AblationRow> run_ablation(const Corpus& corpus, const HistorySnapshot& history, const RunParams& params,
                                      std::span<const FeatureGroup> groups, const AblationParams& ablation = {});
Json ablation_to_json(std::span<const AblationRow> rows);

// ---------------------------------------------------------------------------
// Gates and the retrain-and-promote cycle

struct GateAssertion {
  std::string metric;      // selection_rate | test_recall | change_recall | test_recall_with_flakes
  std::string comparator;  // < <= > >=
  double bound = 0.0;
  std::optional<double> at_test_recall;   // operating point: largest cutoff reaching this recall
  std::optional<double> at_score_cutoff;  // or a fixed score cutoff
  std::size_t at_count_cutoff = 0;
  std::string text;

  Json to_json() const;
  static GateAssertion from_json(const Json& doc);
};

/// Parses e.g. "SelectionRate < 0.3 at TestRecall = 0.9, CountCutoff = 0".
GateAssertion parse_gate(std::string_view text);

struct GateCriteria {
  std::vector<GateAssertion> assertions;

  Json to_json() const;
  static GateCriteria from_json(const Json& doc);
};

struct GateResult {
  GateAssertion assertion;
  std::optional<double> observed;  // nullopt when the operating point is unreachable
  bool passed = false;

  Json to_json() const;
};

std::vector<GateResult> evaluate_gates(const GateCriteria& gates, std::span<const EvalChange> eval,
                                       std::size_t grid_size = kDefaultGridSize);

struct RetrainParams {
  RunParams run;
  int cadence_days = 7;
  int cycles = 3;
  std::optional<std::int64_t> first_end;  // default: the last cycle ends after the last change
  std::filesystem::path registry;
  std::set<int> sabotaged_cycles;  // cycles trained on label-shuffled data
};

struct CycleRecord {
  int cycle = 0;
  std::int64_t window_start = 0;
  std::int64_t window_end = 0;
  std::vector<GateResult> gates;
  bool passed = false;
  std::string model_hash;      // the candidate
  std::string promoted_hash;   // what CURRENT points at after the cycle
  std::optional<std::string> alert;

  Json to_json() const;
};

/// Model registry on disk: models/<hash>.json, CURRENT (hash of the promoted
/// model, swapped atomically) and deployments.jsonl (append-only log).
class ModelRegistry {
 public:
  explicit ModelRegistry(std::filesystem::path root);

  std::optional<std::string> current() const;
  std::filesystem::path model_path(const std::string& hash) const;
  /// Stores the model file and then swaps CURRENT.
  void promote(const std::string& hash, const std::string& model_text);
  void store(const std::string& hash, const std::string& model_text);
  void append_log(const Json& record);
  const std::filesystem::path& root() const noexcept { return root_; }

 private:
  std::filesystem::path root_;
};

/// Runs `cycles` weekly retrains. Throws NoPriorModel if the first cycle fails
/// its gates (after logging the failure).
std::vector<CycleRecord> retrain_cycle(const Corpus& corpus, const GateCriteria& gates, const RetrainParams& params);

/// Serializes a model and returns (text, content hash).
std::pair<std::string, std::string> model_text_and_hash(const BoostedModel& model);

}  // namespace pts
