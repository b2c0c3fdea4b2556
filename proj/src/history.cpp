#include "pts/history.hpp"

#include "pts/error.hpp"

#include <algorithm>
#include <numeric>

namespace pts {

void normalize_change(Change& change) {
  if (change.id.empty()) throw Error(Errc::InvalidChange, "change id is empty");
  if (change.timestamp <= 0) {
    throw Error(Errc::InvalidChange, change.id + ": timestamp must be positive");
  }
  std::sort(change.modified_files.begin(), change.modified_files.end());
  change.modified_files.erase(std::unique(change.modified_files.begin(), change.modified_files.end()),
                              change.modified_files.end());
  if (change.modified_files.empty()) {
    throw Error(Errc::InvalidChange, change.id + ": no modified files");
  }
}

std::string_view to_string(Outcome outcome) noexcept {
  switch (outcome) {
    case Outcome::Passed: return "passed";
    case Outcome::Failed: return "failed";
    case Outcome::Flaked: return "flaked";
  }
  return "?";
}

Outcome aggregate(std::span<const Attempt> attempts, int max_retries) {
  if (attempts.empty()) throw Error(Errc::MalformedAttempts, "no attempts");
  if (attempts.size() > static_cast<std::size_t>(max_retries) + 1) {
    throw Error(Errc::MalformedAttempts, "more than max_retries + 1 attempts");
  }
  for (std::size_t i = 0; i + 1 < attempts.size(); ++i) {
    if (attempts[i] == Attempt::Pass) throw Error(Errc::MalformedAttempts, "success is not the last attempt");
  }
  if (attempts.back() == Attempt::Fail) return Outcome::Failed;
  return attempts.size() == 1 ? Outcome::Passed : Outcome::Flaked;
}

FailedFlaked failed_and_flaked_sets(std::span<const OutcomeRecord> records, int max_retries) {
  FailedFlaked out;
  std::vector<std::string_view> seen;
  seen.reserve(records.size());
  for (const auto& r : records) seen.push_back(r.target_id);
  std::sort(seen.begin(), seen.end());
  if (const auto dup = std::adjacent_find(seen.begin(), seen.end()); dup != seen.end()) {
    throw Error(Errc::DuplicateRecord, std::string(*dup));
  }
  for (const auto& r : records) {
    switch (aggregate(r.attempts, max_retries)) {
      case Outcome::Failed: out.failed.push_back(r.target_id); break;
      case Outcome::Flaked: out.flaked.push_back(r.target_id); break;
      case Outcome::Passed: break;
    }
  }
  std::sort(out.failed.begin(), out.failed.end());
  std::sort(out.flaked.begin(), out.flaked.end());
  return out;
}

std::string_view to_string(LabelPolicy policy) noexcept {
  return policy == LabelPolicy::Deflaked ? "deflaked" : "conflated";
}

LabelPolicy parse_label_policy(std::string_view text) {
  if (text == "deflaked") return LabelPolicy::Deflaked;
  if (text == "conflated") return LabelPolicy::Conflated;
  throw Error(Errc::ParseError, "unknown label policy '" + std::string(text) + "'");
}

bool is_positive(Outcome outcome, LabelPolicy policy) noexcept {
  if (outcome == Outcome::Failed) return true;
  return policy == LabelPolicy::Conflated && outcome == Outcome::Flaked;
}

TimeSplit time_split(std::span<const LabeledExample> examples, const HistorySnapshot& history,
                     int holdout_days, std::optional<std::int64_t> end) {
  if (holdout_days < 1) throw Error(Errc::InvalidChange, "holdout_days must be at least 1");
  std::vector<std::int64_t> stamps;
  stamps.reserve(examples.size());
  for (const auto& ex : examples) stamps.push_back(history.change(ex.change_id).timestamp);

  TimeSplit split;
  if (end) {
    split.end = *end;
  } else {
    split.end = stamps.empty() ? 1 : *std::max_element(stamps.begin(), stamps.end()) + 1;
  }
  split.boundary = split.end - static_cast<std::int64_t>(holdout_days) * kSecondsPerDay;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (stamps[i] >= split.boundary && stamps[i] < split.end) {
      split.test.push_back(i);
    } else if (stamps[i] < split.boundary) {
      split.train.push_back(i);
    }
  }
  split.empty_training = split.train.empty();
  return split;
}

void HistoryStore::add_change(Change change) {
  normalize_change(change);
  if (change_index_.count(change.id)) throw Error(Errc::DuplicateRecord, "change " + change.id);
  change_index_.emplace(change.id, changes_.size());
  changes_.push_back(std::move(change));
}

void HistoryStore::add_outcome(OutcomeRecord record) {
  if (!change_index_.count(record.change_id)) throw Error(Errc::UnknownChange, record.change_id);
  aggregate(record.attempts, max_retries_);
  std::string key = record.change_id;
  key.push_back('\0');
  key += record.target_id;
  if (!outcome_keys_.emplace(std::move(key), outcomes_.size()).second) {
    throw Error(Errc::DuplicateRecord, record.change_id + " / " + record.target_id);
  }
  outcomes_.push_back(std::move(record));
}

HistorySnapshot HistoryStore::seal() const {
  HistorySnapshot snap;
  snap.max_retries_ = max_retries_;
  snap.changes_ = changes_;
  std::sort(snap.changes_.begin(), snap.changes_.end(), [](const Change& a, const Change& b) {
    return a.timestamp != b.timestamp ? a.timestamp < b.timestamp : a.id < b.id;
  });

  std::unordered_map<std::string, std::uint32_t> authors;
  snap.change_index_.reserve(snap.changes_.size());
  snap.author_of_.reserve(snap.changes_.size());
  for (std::uint32_t i = 0; i < snap.changes_.size(); ++i) {
    const Change& c = snap.changes_[i];
    snap.change_index_.emplace(c.id, i);
    const auto author = authors.emplace(c.author, static_cast<std::uint32_t>(authors.size())).first->second;
    snap.author_of_.push_back(author);
    for (const auto& file : c.modified_files) snap.file_touches_[file].push_back({c.timestamp, i});
  }

  snap.raw_ = outcomes_;
  std::vector<std::size_t> order(outcomes_.size());
  std::vector<std::uint32_t> position(outcomes_.size());
  for (std::size_t i = 0; i < outcomes_.size(); ++i) {
    order[i] = i;
    position[i] = snap.change_index_.at(outcomes_[i].change_id);
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (position[a] != position[b]) return position[a] < position[b];
    return outcomes_[a].target_id < outcomes_[b].target_id;
  });
  snap.outcome_offsets_.assign(snap.changes_.size() + 1, 0);
  snap.aggregated_.reserve(outcomes_.size());
  for (std::size_t i : order) {
    const Outcome outcome = aggregate(outcomes_[i].attempts, max_retries_);
    snap.aggregated_.push_back({position[i], outcomes_[i].target_id, outcome});
    ++snap.outcome_offsets_[position[i] + 1];
  }
  std::partial_sum(snap.outcome_offsets_.begin(), snap.outcome_offsets_.end(), snap.outcome_offsets_.begin());

  // Records are grouped by change position, which is time-ordered.
  for (const auto& rec : snap.aggregated_) {
    snap.target_runs_[rec.target_id].push_back(
        {snap.changes_[rec.change].timestamp, rec.outcome == Outcome::Failed});
  }
  for (const auto& [target, runs] : snap.target_runs_) {
    auto& prefix = snap.target_failed_prefix_[target];
    prefix.resize(runs.size() + 1, 0);
    for (std::size_t i = 0; i < runs.size(); ++i) prefix[i + 1] = prefix[i] + (runs[i].failed ? 1 : 0);
  }
  return snap;
}

const Change& HistorySnapshot::change(std::string_view id) const {
  const auto pos = change_position(id);
  if (!pos) throw Error(Errc::UnknownChange, std::string(id));
  return changes_[*pos];
}

std::optional<std::size_t> HistorySnapshot::change_position(std::string_view id) const {
  const auto it = change_index_.find(std::string(id));
  if (it == change_index_.end()) return std::nullopt;
  return it->second;
}

std::span<const HistorySnapshot::AggregatedRecord> HistorySnapshot::outcomes_of(std::size_t change_position) const {
  return {aggregated_.data() + outcome_offsets_[change_position],
          aggregated_.data() + outcome_offsets_[change_position + 1]};
}

template <typename F>
void HistorySnapshot::visit_touches(std::span<const std::string> files, std::int64_t as_of, int days,
                                    F&& visit) const {
  const std::int64_t start = as_of - static_cast<std::int64_t>(days) * kSecondsPerDay;
  for (const auto& file : files) {
    const auto it = file_touches_.find(file);
    if (it == file_touches_.end()) continue;
    const auto& touches = it->second;
    auto lo = std::lower_bound(touches.begin(), touches.end(), start,
                               [](const FileTouch& t, std::int64_t v) { return t.timestamp < v; });
    for (; lo != touches.end() && lo->timestamp < as_of; ++lo) visit(*lo);
  }
}

std::size_t HistorySnapshot::changes_touching(std::span<const std::string> files, std::int64_t as_of,
                                              int days) const {
  std::vector<std::uint32_t> ids;
  visit_touches(files, as_of, days, [&](const FileTouch& t) { ids.push_back(t.change); });
  std::sort(ids.begin(), ids.end());
  return static_cast<std::size_t>(std::unique(ids.begin(), ids.end()) - ids.begin());
}

std::size_t HistorySnapshot::distinct_authors(std::span<const std::string> files, std::int64_t as_of,
                                              int days) const {
  std::vector<std::uint32_t> ids;
  visit_touches(files, as_of, days, [&](const FileTouch& t) { ids.push_back(author_of_[t.change]); });
  std::sort(ids.begin(), ids.end());
  return static_cast<std::size_t>(std::unique(ids.begin(), ids.end()) - ids.begin());
}

HistorySnapshot::FailureCounts HistorySnapshot::target_failures(std::string_view target, std::int64_t as_of,
                                                                int days) const {
  const auto it = target_runs_.find(std::string(target));
  if (it == target_runs_.end()) return {};
  const auto& runs = it->second;
  const auto& prefix = target_failed_prefix_.at(it->first);
  const std::int64_t start = as_of - static_cast<std::int64_t>(days) * kSecondsPerDay;
  const auto cmp = [](const TargetRun& r, std::int64_t v) { return r.timestamp < v; };
  const auto lo = static_cast<std::size_t>(std::lower_bound(runs.begin(), runs.end(), start, cmp) - runs.begin());
  const auto hi = static_cast<std::size_t>(std::lower_bound(runs.begin(), runs.end(), as_of, cmp) - runs.begin());
  if (hi <= lo) return {};
  return {prefix[hi] - prefix[lo], hi - lo};
}

bool HistorySnapshot::has_target(std::string_view target) const {
  return target_runs_.count(std::string(target)) != 0;
}

Json change_to_json(const Change& change) {
  return Json{{"id", change.id},
              {"timestamp", change.timestamp},
              {"author", change.author},
              {"modified_files", change.modified_files},
              {"revision", change.revision},
              {"sampled_for_learning", change.sampled_for_learning}};
}

Change change_from_json(const Json& obj) {
  Change c;
  c.id = obj.at("id").get<std::string>();
  c.timestamp = obj.at("timestamp").get<std::int64_t>();
  c.author = obj.at("author").get<std::string>();
  c.modified_files = obj.at("modified_files").get<std::vector<std::string>>();
  c.revision = obj.at("revision").get<std::string>();
  c.sampled_for_learning = obj.value("sampled_for_learning", false);
  normalize_change(c);
  return c;
}

Json outcome_to_json(const OutcomeRecord& record) {
  Json attempts = Json::array();
  for (Attempt a : record.attempts) attempts.push_back(a == Attempt::Pass ? "pass" : "fail");
  return Json{{"change_id", record.change_id}, {"target_id", record.target_id}, {"attempts", attempts}};
}

OutcomeRecord outcome_from_json(const Json& obj) {
  OutcomeRecord r;
  r.change_id = obj.at("change_id").get<std::string>();
  r.target_id = obj.at("target_id").get<std::string>();
  for (const auto& a : obj.at("attempts")) {
    const auto text = a.get<std::string>();
    if (text == "pass") {
      r.attempts.push_back(Attempt::Pass);
    } else if (text == "fail") {
      r.attempts.push_back(Attempt::Fail);
    } else {
      throw Error(Errc::ParseError, "attempt must be 'pass' or 'fail', got '" + text + "'");
    }
  }
  return r;
}

}  // namespace pts
