#pragma once

#include "pts/jsonl.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pts {

/// Per-change sets; each vector is sorted and free of duplicates.
struct ChangeEvaluation {
  std::vector<std::string> dependent;
  std::vector<std::string> selected;
  std::vector<std::string> failed;
  std::vector<std::string> flaked;
};

/// Throws InvalidInput unless selected, failed, flaked are subsets of
/// dependent and failed/flaked are disjoint.
void validate(std::span<const ChangeEvaluation> inputs);

/// Numerators and denominators summed over a set of changes.
struct MetricCounts {
  std::size_t selected_failed = 0;       // sum |Selected ∩ Failed|
  std::size_t failed = 0;                // sum |Failed|
  std::size_t caught_changes = 0;        // changes with Selected ∩ Failed nonempty
  std::size_t faulty_changes = 0;        // changes with Failed nonempty
  std::size_t selected = 0;              // sum |Selected|
  std::size_t dependent = 0;             // sum |Dependent|
  std::size_t selected_failed_or_flaked = 0;
  std::size_t failed_or_flaked = 0;

  MetricCounts& operator+=(const MetricCounts& other);
  bool operator==(const MetricCounts&) const = default;
};

MetricCounts count(std::span<const ChangeEvaluation> inputs);

struct Ratio {
  std::size_t numerator = 0;
  std::size_t denominator = 0;

  bool defined() const noexcept { return denominator != 0; }
  double value() const noexcept {
    return denominator == 0 ? 0.0 : static_cast<double>(numerator) / static_cast<double>(denominator);
  }
};

struct MetricsReport {
  Ratio test_recall;
  Ratio change_recall;
  Ratio selection_rate;
  Ratio test_recall_with_flakes;

  static MetricsReport from_counts(const MetricCounts& c);
  /// Undefined ratios serialize as null.
  Json to_json() const;
};

// Each throws its precondition error when the denominator is zero.
double test_recall(std::span<const ChangeEvaluation> inputs);
double change_recall(std::span<const ChangeEvaluation> inputs);
double selection_rate(std::span<const ChangeEvaluation> inputs);
double test_recall_with_flakes(std::span<const ChangeEvaluation> inputs);

MetricsReport evaluate(std::span<const ChangeEvaluation> inputs);

}  // namespace pts
