#pragma once

#include "pts/jsonl.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pts {

inline constexpr std::int64_t kSecondsPerDay = 86400;
inline constexpr int kDefaultMaxRetries = 10;

struct Change {
  std::string id;
  std::int64_t timestamp = 0;  // seconds since epoch
  std::string author;
  std::vector<std::string> modified_files;  // sorted, unique
  std::string revision;
  bool sampled_for_learning = false;
};

/// Throws InvalidChange when the invariants on Change do not hold. Sorts and
/// deduplicates modified_files in place.
void normalize_change(Change& change);

enum class Attempt : std::uint8_t { Fail, Pass };

struct OutcomeRecord {
  std::string change_id;
  std::string target_id;
  std::vector<Attempt> attempts;
};

enum class Outcome : std::uint8_t { Passed, Failed, Flaked };

std::string_view to_string(Outcome outcome) noexcept;

/// Failed iff every attempt failed, Flaked iff a failure was followed by a
/// success, Passed iff the single attempt succeeded. Throws MalformedAttempts
/// for an empty list, a success that is not last, or more than
/// max_retries + 1 attempts.
Outcome aggregate(std::span<const Attempt> attempts, int max_retries = kDefaultMaxRetries);

struct FailedFlaked {
  std::vector<std::string> failed;  // sorted
  std::vector<std::string> flaked;  // sorted
};

/// Partitions non-passing targets of a single change. Throws DuplicateRecord.
FailedFlaked failed_and_flaked_sets(std::span<const OutcomeRecord> records,
                                    int max_retries = kDefaultMaxRetries);

enum class LabelPolicy : std::uint8_t { Deflaked, Conflated };

std::string_view to_string(LabelPolicy policy) noexcept;
LabelPolicy parse_label_policy(std::string_view text);

/// Deflaked: positive iff Failed. Conflated: positive iff Failed or Flaked.
bool is_positive(Outcome outcome, LabelPolicy policy) noexcept;

struct LabeledExample {
  std::string change_id;
  std::string target_id;
  bool positive = false;
  LabelPolicy label_policy = LabelPolicy::Deflaked;
};

class HistorySnapshot;

struct TimeSplit {
  std::vector<std::size_t> train;  // indices into the input, input order
  std::vector<std::size_t> test;
  std::int64_t boundary = 0;       // test window is [boundary, end)
  std::int64_t end = 0;
  bool empty_training = false;     // degenerate split, reported as a warning
};

/// Examples whose change falls in the final `holdout_days` of [.., end) go to
/// the test set. `end` defaults to one second past the latest change among the
/// examples. Throws UnknownChange; InvalidChange for holdout_days < 1.
TimeSplit time_split(std::span<const LabeledExample> examples, const HistorySnapshot& history,
                     int holdout_days, std::optional<std::int64_t> end = std::nullopt);

/// Append-only store of changes and outcome records.
class HistoryStore {
 public:
  explicit HistoryStore(int max_retries = kDefaultMaxRetries) : max_retries_(max_retries) {}

  /// Throws InvalidChange / DuplicateRecord for a repeated change id.
  void add_change(Change change);
  /// Throws UnknownChange, DuplicateRecord, MalformedAttempts.
  void add_outcome(OutcomeRecord record);

  int max_retries() const noexcept { return max_retries_; }
  std::size_t change_count() const noexcept { return changes_.size(); }
  std::size_t outcome_count() const noexcept { return outcomes_.size(); }

  /// Freezes the current contents into an indexed, immutable snapshot.
  HistorySnapshot seal() const;

 private:
  int max_retries_;
  std::vector<Change> changes_;
  std::unordered_map<std::string, std::size_t> change_index_;
  std::vector<OutcomeRecord> outcomes_;
  std::unordered_map<std::string, std::size_t> outcome_keys_;
};

/// Read-only view over a sealed history with the lookups feature extraction
/// needs. All window queries are half-open [as_of - days, as_of).
class HistorySnapshot {
 public:
  struct AggregatedRecord {
    std::uint32_t change;  // index into changes()
    std::string target_id;
    Outcome outcome;
  };

  int max_retries() const noexcept { return max_retries_; }

  /// Changes ordered by (timestamp, id).
  std::span<const Change> changes() const noexcept { return changes_; }
  const Change& change(std::string_view id) const;  // throws UnknownChange
  std::optional<std::size_t> change_position(std::string_view id) const;

  std::span<const OutcomeRecord> raw_outcomes() const noexcept { return raw_; }
  /// Outcome records of one change (by position in changes()).
  std::span<const AggregatedRecord> outcomes_of(std::size_t change_position) const;

  /// Number of distinct changes touching any of `files` within the window.
  std::size_t changes_touching(std::span<const std::string> files, std::int64_t as_of, int days) const;
  /// Distinct authors of changes touching any of `files` within the window.
  std::size_t distinct_authors(std::span<const std::string> files, std::int64_t as_of, int days) const;

  struct FailureCounts {
    std::size_t failed = 0;
    std::size_t total = 0;
  };
  /// Aggregated outcomes of `target` from changes inside the window.
  FailureCounts target_failures(std::string_view target, std::int64_t as_of, int days) const;
  bool has_target(std::string_view target) const;

 private:
  friend class HistoryStore;

  struct FileTouch {
    std::int64_t timestamp;
    std::uint32_t change;
  };
  struct TargetRun {
    std::int64_t timestamp;
    bool failed;
  };

  template <typename F>
  void visit_touches(std::span<const std::string> files, std::int64_t as_of, int days, F&& visit) const;

  int max_retries_ = kDefaultMaxRetries;
  std::vector<Change> changes_;
  std::unordered_map<std::string, std::uint32_t> change_index_;
  std::vector<std::uint32_t> author_of_;
  std::vector<OutcomeRecord> raw_;
  std::vector<AggregatedRecord> aggregated_;       // grouped by change position
  std::vector<std::uint32_t> outcome_offsets_;     // CSR over changes_
  std::unordered_map<std::string, std::vector<FileTouch>> file_touches_;  // sorted by time
  std::unordered_map<std::string, std::vector<TargetRun>> target_runs_;   // sorted by time
  std::unordered_map<std::string, std::vector<std::uint32_t>> target_failed_prefix_;
};

// JSON-lines codecs for the changes and outcomes files.
Json change_to_json(const Change& change);
Change change_from_json(const Json& obj);
Json outcome_to_json(const OutcomeRecord& record);
OutcomeRecord outcome_from_json(const Json& obj);

}  // namespace pts
