#include "pts/error.hpp"
#include "pts/history.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

namespace pts {
namespace {

using A = Attempt;

Change make_change(std::string id, std::int64_t ts, std::vector<std::string> files, std::string author = "ann") {
  Change c;
  c.id = std::move(id);
  c.timestamp = ts;
  c.author = std::move(author);
  c.modified_files = std::move(files);
  c.revision = "r0";
  c.sampled_for_learning = true;
  return c;
}

TEST(History, Aggregate) {
  EXPECT_EQ(aggregate(std::vector{A::Pass}), Outcome::Passed);
  EXPECT_EQ(aggregate(std::vector{A::Fail, A::Pass}), Outcome::Flaked);
  EXPECT_EQ(aggregate(std::vector<A>(11, A::Fail)), Outcome::Failed);
  std::vector<A> late(10, A::Fail);
  late.push_back(A::Pass);
  EXPECT_EQ(aggregate(late), Outcome::Flaked);
}

TEST(History, AggregateRejectsMalformed) {
  EXPECT_THROW(aggregate(std::vector<A>{}), Error);
  EXPECT_THROW(aggregate(std::vector{A::Pass, A::Fail}), Error);
  EXPECT_THROW(aggregate(std::vector<A>(12, A::Fail)), Error);
  EXPECT_EQ(aggregate(std::vector<A>(3, A::Fail), 2), Outcome::Failed);
}

TEST(History, FailedAndFlakedSets) {
  std::vector<OutcomeRecord> recs{{"c", "t3", {A::Fail, A::Fail}},
                                  {"c", "t1", {A::Fail, A::Pass}},
                                  {"c", "t2", {A::Pass}},
                                  {"c", "t0", {A::Fail}}};
  const auto sets = failed_and_flaked_sets(recs, 1);
  EXPECT_EQ(sets.failed, (std::vector<std::string>{"t0", "t3"}));
  EXPECT_EQ(sets.flaked, (std::vector<std::string>{"t1"}));
  recs.push_back({"c", "t2", {A::Pass}});
  try {
    failed_and_flaked_sets(recs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DuplicateRecord);
  }
}

TEST(History, LabelPolicies) {
  EXPECT_TRUE(is_positive(Outcome::Failed, LabelPolicy::Deflaked));
  EXPECT_FALSE(is_positive(Outcome::Flaked, LabelPolicy::Deflaked));
  EXPECT_TRUE(is_positive(Outcome::Flaked, LabelPolicy::Conflated));
  EXPECT_FALSE(is_positive(Outcome::Passed, LabelPolicy::Conflated));
  EXPECT_EQ(parse_label_policy(to_string(LabelPolicy::Conflated)), LabelPolicy::Conflated);
  EXPECT_THROW(parse_label_policy("sometimes"), Error);
}

TEST(History, NormalizeChange) {
  Change c = make_change("c1", 10, {"b", "a", "b"});
  normalize_change(c);
  EXPECT_EQ(c.modified_files, (std::vector<std::string>{"a", "b"}));
  Change empty = make_change("c2", 10, {});
  EXPECT_THROW(normalize_change(empty), Error);
  Change noid = make_change("", 10, {"a"});
  EXPECT_THROW(normalize_change(noid), Error);
}

TEST(History, StoreErrors) {
  HistoryStore store;
  store.add_change(make_change("c1", 100, {"a"}));
  EXPECT_THROW(store.add_change(make_change("c1", 200, {"b"})), Error);
  EXPECT_THROW(store.add_outcome({"zz", "t", {A::Pass}}), Error);
  store.add_outcome({"c1", "t", {A::Pass}});
  EXPECT_THROW(store.add_outcome({"c1", "t", {A::Pass}}), Error);
  EXPECT_THROW(store.add_outcome({"c1", "u", {A::Pass, A::Pass}}), Error);
}

TEST(History, TimeSplitBoundary) {
  HistoryStore store;
  const std::int64_t day = kSecondsPerDay;
  const std::int64_t end = 30 * day;
  store.add_change(make_change("old", end - 7 * day - 1, {"a"}));
  store.add_change(make_change("edge", end - 7 * day, {"a"}));
  store.add_change(make_change("late", end - 1, {"a"}));
  const auto snap = store.seal();
  std::vector<LabeledExample> ex{{"late", "t", true, {}}, {"old", "t", false, {}}, {"edge", "t", false, {}}};
  const auto split = time_split(ex, snap, 7, end);
  EXPECT_EQ(split.train, (std::vector<std::size_t>{1}));
  EXPECT_EQ(split.test, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(split.boundary, end - 7 * day);
  EXPECT_FALSE(split.empty_training);

  const auto all_test = time_split(std::span(ex).subspan(0, 1), snap, 7);
  EXPECT_TRUE(all_test.empty_training);
  EXPECT_THROW(time_split(ex, snap, 0, end), Error);
  std::vector<LabeledExample> bad{{"ghost", "t", true, {}}};
  EXPECT_THROW(time_split(bad, snap, 7, end), Error);
}

// Window counters against a full scan of every change.
TEST(History, WindowQueriesMatchFullScan) {
  std::mt19937_64 rng(3);
  HistoryStore store;
  std::vector<Change> changes;
  const std::vector<std::string> files{"a", "b", "c", "d", "e"};
  const std::vector<std::string> targets{"t0", "t1", "t2"};
  for (int i = 0; i < 300; ++i) {
    std::vector<std::string> mod{files[rng() % files.size()], files[rng() % files.size()]};
    Change c = make_change("c" + std::to_string(i), static_cast<std::int64_t>(rng() % (60 * kSecondsPerDay)), mod,
                           "u" + std::to_string(rng() % 7));
    normalize_change(c);
    store.add_change(c);
    changes.push_back(c);
    for (const auto& t : targets) {
      if (rng() % 3 == 0) continue;
      std::vector<A> at;
      switch (rng() % 3) {
        case 0: at = {A::Pass}; break;
        case 1: at = std::vector<A>(11, A::Fail); break;
        default: at = {A::Fail, A::Pass}; break;
      }
      store.add_outcome({c.id, t, at});
    }
  }
  const auto snap = store.seal();
  std::map<std::pair<std::string, std::string>, Outcome> outcome;
  for (const auto& r : snap.raw_outcomes()) outcome[{r.change_id, r.target_id}] = aggregate(r.attempts);

  for (int q = 0; q < 200; ++q) {
    const std::int64_t as_of = static_cast<std::int64_t>(rng() % (70 * kSecondsPerDay));
    const int days = 1 + static_cast<int>(rng() % 30);
    const std::int64_t lo = as_of - days * kSecondsPerDay;
    std::vector<std::string> query{files[rng() % files.size()], files[rng() % files.size()]};
    std::sort(query.begin(), query.end());
    query.erase(std::unique(query.begin(), query.end()), query.end());

    std::size_t touching = 0;
    std::set<std::string> authors;
    for (const auto& c : changes) {
      if (c.timestamp < lo || c.timestamp >= as_of) continue;
      bool hit = false;
      for (const auto& f : query) hit |= std::binary_search(c.modified_files.begin(), c.modified_files.end(), f);
      if (hit) {
        ++touching;
        authors.insert(c.author);
      }
    }
    EXPECT_EQ(snap.changes_touching(query, as_of, days), touching);
    EXPECT_EQ(snap.distinct_authors(query, as_of, days), authors.size());

    const auto& t = targets[rng() % targets.size()];
    std::size_t failed = 0, total = 0;
    for (const auto& c : changes) {
      if (c.timestamp < lo || c.timestamp >= as_of) continue;
      auto it = outcome.find({c.id, t});
      if (it == outcome.end()) continue;
      ++total;
      failed += it->second == Outcome::Failed;
    }
    const auto counts = snap.target_failures(t, as_of, days);
    EXPECT_EQ(counts.failed, failed);
    EXPECT_EQ(counts.total, total);
  }
}

TEST(History, SnapshotOrdersChanges) {
  HistoryStore store;
  store.add_change(make_change("b", 5, {"x"}));
  store.add_change(make_change("a", 5, {"x"}));
  store.add_change(make_change("c", 1, {"x"}));
  const auto snap = store.seal();
  ASSERT_EQ(snap.changes().size(), 3u);
  EXPECT_EQ(snap.changes()[0].id, "c");
  EXPECT_EQ(snap.changes()[1].id, "a");
  EXPECT_EQ(*snap.change_position("b"), 2u);
  EXPECT_THROW(snap.change("zz"), Error);
}

TEST(History, JsonCodecs) {
  const Change c = make_change("c9", 42, {"p/q.cc"});
  const Change back = change_from_json(change_to_json(c));
  EXPECT_EQ(back.id, c.id);
  EXPECT_EQ(back.timestamp, c.timestamp);
  EXPECT_EQ(back.modified_files, c.modified_files);
  EXPECT_TRUE(back.sampled_for_learning);
  const OutcomeRecord r{"c9", "t", {A::Fail, A::Pass}};
  const OutcomeRecord rb = outcome_from_json(outcome_to_json(r));
  EXPECT_EQ(rb.attempts, r.attempts);
  EXPECT_THROW(outcome_from_json(Json{{"change_id", "c"}, {"target_id", "t"}, {"attempts", {"maybe"}}}), Error);
}

}  // namespace
}  // namespace pts
