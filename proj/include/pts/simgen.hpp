#pragma once

#include "pts/depgraph.hpp"
#include "pts/features.hpp"
#include "pts/history.hpp"
#include "pts/jsonl.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace pts {

/// Knobs for the synthetic monorepo and CI history. Defaults produce roughly
/// 2,000 tests and 20,000 changes over 90 days with about four flaked test
/// outcomes per failed one.
struct SimConfig {
  std::uint64_t seed = 1;

  // Repository shape.
  int files = 6000;
  int libraries = 1200;
  int tests = 2000;
  int projects = 12;
  int library_layers = 4;
  double cross_project_dependency = 0.08;  // chance a library edge reaches into project 0
  int max_test_cases = 300;

  // Change stream.
  int changes = 20000;
  int authors = 150;
  int timespan_days = 90;
  std::int64_t start_timestamp = 1'600'000'000;
  double home_project_affinity = 0.85;
  double files_per_change_mean = 2.0;  // geometric, at least one file
  int max_files_per_change = 8;
  double learning_sample_rate = 0.6;

  // Faults: each modified file makes the change faulty with probability
  // fault_probability times a fixed per-extension risk drawn log-uniformly
  // from [1 / spread, spread]. A faulty change breaks dependent test t with
  // probability min(1, impact(distance) * fragility(t)), impact(d) =
  // scale * base^(d - 1) unless impact_table is given (entry d - 1, zero past
  // the end).
  double fault_probability = 0.3;
  double extension_risk_spread = 10.0;
  double impact_scale = 1.0;
  double impact_base = 0.5;
  std::vector<double> impact_table;
  // Smaller targets are more likely to be fragile.
  double fragile_fraction = 0.08;  // targets with fragility 1 (times project factor)
  double robust_fragility = 0.003;  // fragility of the remaining targets
  double project_fragility_min = 0.3;

  // Flakiness: most targets flake rarely; a long tail flakes often. Larger
  // targets (more test cases) are more likely to be in the tail.
  double flaky_fraction = 0.11;
  double flaky_rate_min = 0.2;
  double flaky_rate_max = 0.4;
  double base_flake_rate = 0.0005;

  int max_retries = kDefaultMaxRetries;

  /// "fig1" replaces the generated repository with the fixed example graph.
  std::string fixture;

  void validate() const;  // throws InvalidConfig
  double impact(int distance) const;
  Json to_json() const;
  static SimConfig from_json(const Json& doc);
};

struct TargetTruth {
  std::string project;
  int num_tests = 1;
  double flake_rate = 0.0;
  double fragility = 1.0;
};

struct RepoModel {
  BuildGraph graph;
  std::map<std::string, TargetTruth> targets;  // by test id
  TargetCatalog catalog() const;
};

/// Provenance of one failed attempt.
enum class FailureCause : std::uint8_t { Fault, Flake };

struct ChangeTruth {
  double fault_probability = 0.0;
  bool faulty = false;
  std::vector<std::string> broken;  // sorted, subset of dependent tests
  std::map<std::string, std::vector<FailureCause>> failure_causes;  // per target, one per failed attempt
};

using GroundTruth = std::map<std::string, ChangeTruth>;  // by change id

/// The build graph from the example figure: two modified files reach tests 1-4;
/// tests 5 and 6 hang off a library with no modified inputs.
RepoModel fig1_fixture();

/// Layered DAG files -> libraries -> tests partitioned into projects.
RepoModel generate_repo(const SimConfig& config);

struct ChangeStream {
  std::vector<Change> changes;  // ascending timestamps
  GroundTruth truth;
};

ChangeStream generate_changes(const SimConfig& config, const RepoModel& repo);

/// Runs `targets` for one change: broken targets fail every attempt, others
/// fail each attempt with their flake rate; failures retry up to max_retries
/// times or until a pass. Records attempt provenance into `truth`. Throws
/// TargetNotDependent.
std::vector<OutcomeRecord> execute_tests(const Change& change, std::span<const std::string> targets,
                                         const RepoModel& repo, ChangeTruth& truth, const SimConfig& config,
                                         std::mt19937_64& rng);

struct SimCorpus {
  SimConfig config;
  RepoModel repo;
  std::vector<Change> changes;
  std::vector<OutcomeRecord> outcomes;  // learning runs only: every dependent test
  GroundTruth truth;
};

/// Full pipeline: repo, changes, and learning-run outcomes. Deterministic per seed.
SimCorpus simulate(const SimConfig& config);

/// Writes graph.jsonl, targets.jsonl, changes.jsonl, outcomes.jsonl,
/// ground_truth.jsonl, target_truth.jsonl and manifest.json into `dir`.
void write_corpus(const SimCorpus& corpus, const std::filesystem::path& dir);

/// Derives an independent stream seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace pts
