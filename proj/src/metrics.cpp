#include "pts/metrics.hpp"

#include "pts/error.hpp"

#include <algorithm>
#include <iterator>

namespace pts {

namespace {

std::size_t intersection_size(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::size_t n = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

bool sorted_unique(const std::vector<std::string>& v) {
  return std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end();
}

Json ratio_json(const Ratio& r) {
  return Json{{"numerator", r.numerator},
              {"denominator", r.denominator},
              {"value", r.defined() ? Json(r.value()) : Json(nullptr)}};
}

}  // namespace

void validate(std::span<const ChangeEvaluation> inputs) {
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& e = inputs[i];
    const std::string where = "change #" + std::to_string(i);
    for (const auto* v : {&e.dependent, &e.selected, &e.failed, &e.flaked}) {
      if (!sorted_unique(*v)) throw Error(Errc::InvalidInput, where + ": sets must be sorted and unique");
    }
    if (intersection_size(e.selected, e.dependent) != e.selected.size()) {
      throw Error(Errc::InvalidInput, where + ": selected is not a subset of dependent");
    }
    if (intersection_size(e.failed, e.dependent) != e.failed.size()) {
      throw Error(Errc::InvalidInput, where + ": failed is not a subset of dependent");
    }
    if (intersection_size(e.flaked, e.dependent) != e.flaked.size()) {
      throw Error(Errc::InvalidInput, where + ": flaked is not a subset of dependent");
    }
    if (intersection_size(e.failed, e.flaked) != 0) {
      throw Error(Errc::InvalidInput, where + ": failed and flaked overlap");
    }
  }
}

MetricCounts& MetricCounts::operator+=(const MetricCounts& o) {
  selected_failed += o.selected_failed;
  failed += o.failed;
  caught_changes += o.caught_changes;
  faulty_changes += o.faulty_changes;
  selected += o.selected;
  dependent += o.dependent;
  selected_failed_or_flaked += o.selected_failed_or_flaked;
  failed_or_flaked += o.failed_or_flaked;
  return *this;
}

MetricCounts count(std::span<const ChangeEvaluation> inputs) {
  MetricCounts c;
  for (const auto& e : inputs) {
    const std::size_t caught = intersection_size(e.selected, e.failed);
    c.selected_failed += caught;
    c.failed += e.failed.size();
    if (!e.failed.empty()) {
      ++c.faulty_changes;
      if (caught > 0) ++c.caught_changes;
    }
    c.selected += e.selected.size();
    c.dependent += e.dependent.size();
    c.selected_failed_or_flaked += caught + intersection_size(e.selected, e.flaked);
    c.failed_or_flaked += e.failed.size() + e.flaked.size();
  }
  return c;
}

MetricsReport MetricsReport::from_counts(const MetricCounts& c) {
  return {{c.selected_failed, c.failed},
          {c.caught_changes, c.faulty_changes},
          {c.selected, c.dependent},
          {c.selected_failed_or_flaked, c.failed_or_flaked}};
}

Json MetricsReport::to_json() const {
  return Json{{"test_recall", ratio_json(test_recall)},
              {"change_recall", ratio_json(change_recall)},
              {"selection_rate", ratio_json(selection_rate)},
              {"test_recall_with_flakes", ratio_json(test_recall_with_flakes)}};
}

double test_recall(std::span<const ChangeEvaluation> inputs) {
  const auto r = MetricsReport::from_counts(count(inputs)).test_recall;
  if (!r.defined()) throw Error(Errc::NoFailures, "no failed tests in the evaluated changes");
  return r.value();
}

double change_recall(std::span<const ChangeEvaluation> inputs) {
  const auto r = MetricsReport::from_counts(count(inputs)).change_recall;
  if (!r.defined()) throw Error(Errc::NoFaultyChanges, "no faulty changes in the evaluated set");
  return r.value();
}

double selection_rate(std::span<const ChangeEvaluation> inputs) {
  const auto r = MetricsReport::from_counts(count(inputs)).selection_rate;
  if (!r.defined()) throw Error(Errc::EmptyDependentSets, "every dependent set is empty");
  return r.value();
}

double test_recall_with_flakes(std::span<const ChangeEvaluation> inputs) {
  const auto r = MetricsReport::from_counts(count(inputs)).test_recall_with_flakes;
  if (!r.defined()) throw Error(Errc::NoFailuresOrFlakes, "no failed or flaked tests in the evaluated changes");
  return r.value();
}

MetricsReport evaluate(std::span<const ChangeEvaluation> inputs) {
  validate(inputs);
  return MetricsReport::from_counts(count(inputs));
}

}  // namespace pts
