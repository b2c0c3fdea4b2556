#include "pts/error.hpp"
#include "pts/pipeline.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace pts {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("pts_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SimConfig small_sim() {
  SimConfig c;
  c.seed = 7;
  c.files = 400;
  c.libraries = 80;
  c.tests = 200;
  c.projects = 4;
  c.changes = 5000;
  c.authors = 30;
  c.timespan_days = 35;
  return c;
}

RunParams small_params() {
  RunParams p;
  p.train.num_trees = 40;
  p.train.max_depth = 4;
  p.train.seed = 3;
  p.window_days = 35;
  p.holdout_days = 7;
  p.targets = {0.9, 0.99};
  p.grid_size = 128;
  return p;
}

class PipelineSmall : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    sim_ = new SimCorpus(simulate(small_sim()));
    corpus_ = new Corpus(corpus_from_simulation(*sim_));
    history_ = new HistorySnapshot(corpus_->seal());
  }
  static void TearDownTestSuite() {
    delete history_;
    delete corpus_;
    delete sim_;
  }
  static SimCorpus* sim_;
  static Corpus* corpus_;
  static HistorySnapshot* history_;
};
SimCorpus* PipelineSmall::sim_ = nullptr;
Corpus* PipelineSmall::corpus_ = nullptr;
HistorySnapshot* PipelineSmall::history_ = nullptr;

TEST_F(PipelineSmall, ExamplesMatchOutcomes) {
  const auto params = small_params();
  const ExampleTable t = build_examples(*corpus_, *history_, params);
  ASSERT_GT(t.rows(), 0u);
  EXPECT_EQ(t.values.size(), t.rows() * t.schema.size());
  // Every learning outcome in the window appears once, with its aggregate.
  std::map<std::pair<std::string, std::string>, Outcome> want;
  for (const auto& r : corpus_->outcomes) {
    const auto& c = history_->change(r.change_id);
    if (c.timestamp >= t.window_start && c.timestamp < t.window_end) {
      want[{r.change_id, r.target_id}] = aggregate(r.attempts);
    }
  }
  ASSERT_EQ(want.size(), t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) {
    const auto& e = t.examples[i];
    const Outcome o = want.at({e.change_id, e.target_id});
    EXPECT_EQ(t.outcomes[i], o);
    EXPECT_EQ(e.positive, o == Outcome::Failed);
  }
  ExampleTable b = t;
  b.relabel(LabelPolicy::Conflated);
  for (std::size_t i = 0; i < b.rows(); ++i) EXPECT_EQ(b.examples[i].positive, b.outcomes[i] != Outcome::Passed);
}

TEST_F(PipelineSmall, ProjectTableKeepsColumns) {
  const auto params = small_params();
  const ExampleTable t = build_examples(*corpus_, *history_, params);
  const FeatureMask mask = FeatureMask::reduced();
  const ExampleTable p = project_table(t, mask);
  const FeatureSchema direct = FeatureSchema::make(mask, params.tokens);
  EXPECT_EQ(p.schema.hash(), direct.hash());
  ASSERT_EQ(p.rows(), t.rows());
  // Projected columns equal the full table's columns at the same slot names.
  std::map<std::string, std::size_t> full_col;
  for (std::size_t j = 0; j < t.schema.size(); ++j) full_col[t.schema.slots()[j].name] = j;
  for (std::size_t i = 0; i < p.rows(); i += 97) {
    for (std::size_t j = 0; j < p.schema.size(); ++j) {
      EXPECT_EQ(p.values[i * p.schema.size() + j], t.values[i * t.schema.size() + full_col.at(p.schema.slots()[j].name)]);
    }
  }
}

TEST_F(PipelineSmall, TrainAndCalibrate) {
  const auto params = small_params();
  const CalibratedRun r = train_and_calibrate(*corpus_, *history_, params);
  ASSERT_TRUE(r.run.model);
  ASSERT_FALSE(r.run.eval.empty());
  EXPECT_TRUE(r.run.model->manifest.contains("strategy"));
  EXPECT_TRUE(r.run.model->manifest.contains("dataset"));
  // The calibrated pair meets the targets on the data it was chosen on.
  const auto counts = evaluate_cutoffs(r.run.eval, r.calibration.score_cutoff, 0);
  EXPECT_GE(MetricsReport::from_counts(counts).test_recall.value(), 0.9);
  const auto counts2 = evaluate_cutoffs(r.run.eval, 1.1, r.calibration.count_cutoff);
  EXPECT_GE(MetricsReport::from_counts(counts2).change_recall.value(), 0.99);
  // Holdout changes come after the training boundary.
  const std::int64_t boundary = r.run.dataset_manifest["split_boundary"].get<std::int64_t>();
  for (const auto& e : r.run.eval) EXPECT_GE(history_->change(e.change_id).timestamp, boundary);
}

TEST_F(PipelineSmall, TrainingIsDeterministic) {
  const auto params = small_params();
  const ExampleTable t = build_examples(*corpus_, *history_, params);
  const auto a = train_on_table(t, *history_, params);
  const auto b = train_on_table(t, *history_, params);
  EXPECT_EQ(model_text_and_hash(*a.model), model_text_and_hash(*b.model));
}

TEST_F(PipelineSmall, ExperimentFractionsInRange) {
  const auto r = run_flakiness_experiment(*corpus_, *history_, small_params());
  EXPECT_EQ(r.rate_grid.size(), 19u);
  for (double f : {r.frac_a_recall_ge_flakes, r.frac_b_recall_lt_flakes, r.frac_a_recall_ge_b_recall}) {
    EXPECT_GE(f, 0.0);
    EXPECT_LE(f, 1.0);
  }
  // Ratio recomputed from raw outcomes in the experiment window.
  EXPECT_GT(r.flaked_to_failed_ratio, 0.0);
  for (std::size_t i = 1; i < r.rate_grid.size(); ++i) {
    EXPECT_GE(r.deflaked.test_recall[i] + 1e-12, r.deflaked.test_recall[i - 1]);
  }
}

TEST(Pipeline, RecallAtRateInterpolates) {
  CalibrationCurve c;
  c.parameter = "score_cutoff";
  auto point = [](double cutoff, double sr, double tr, double trwf) {
    CurvePoint p;
    p.cutoff = cutoff;
    p.selection_rate = sr;
    p.test_recall = tr;
    p.test_recall_with_flakes = trwf;
    return p;
  };
  c.points = {point(0.0, 1.0, 1.0, 1.0), point(0.5, 0.4, 0.8, 0.5), point(1.0, 0.0, 0.0, 0.0)};
  EXPECT_DOUBLE_EQ(recall_at_rate(c, 0.7, false), 0.9);
  EXPECT_DOUBLE_EQ(recall_at_rate(c, 0.2, false), 0.4);
  EXPECT_DOUBLE_EQ(recall_at_rate(c, 0.4, true), 0.5);
  EXPECT_DOUBLE_EQ(recall_at_rate(c, 1.0, false), 1.0);
  const auto grid = default_rate_grid();
  ASSERT_EQ(grid.size(), 19u);
  EXPECT_DOUBLE_EQ(grid.front(), 0.05);
  EXPECT_NEAR(grid.back(), 0.95, 1e-12);
}

TEST(Pipeline, ParseGate) {
  const auto g = parse_gate("SelectionRate < 0.3 at TestRecall = 0.9");
  EXPECT_EQ(g.metric, "selection_rate");
  EXPECT_EQ(g.comparator, "<");
  EXPECT_DOUBLE_EQ(g.bound, 0.3);
  ASSERT_TRUE(g.at_test_recall.has_value());
  EXPECT_DOUBLE_EQ(*g.at_test_recall, 0.9);
  EXPECT_FALSE(g.at_score_cutoff.has_value());
  EXPECT_EQ(g.at_count_cutoff, 0u);

  const auto h = parse_gate("change_recall >= 0.95 at ScoreCutoff = 0.2, CountCutoff = 5");
  EXPECT_EQ(h.metric, "change_recall");
  EXPECT_DOUBLE_EQ(*h.at_score_cutoff, 0.2);
  EXPECT_EQ(h.at_count_cutoff, 5u);
  EXPECT_EQ(GateAssertion::from_json(h.to_json()).to_json(), h.to_json());

  for (const char* bad : {"SelectionRate < 0.3", "Speed < 0.3 at TestRecall = 0.9",
                          "SelectionRate ~ 0.3 at TestRecall = 0.9", "SelectionRate < 0.3 at Depth = 2",
                          "SelectionRate < 0.3 at TestRecall = 0.9, ScoreCutoff = 0.1"}) {
    try {
      parse_gate(bad);
      ADD_FAILURE() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::ParseError) << bad;
    }
  }
}

TEST(Pipeline, EvaluateGates) {
  // Scores a > b > c > d; a and c fail.
  const std::vector<EvalChange> eval{
      {"c1", {{"a", 0.9, true, false}, {"b", 0.5, false, false}, {"c", 0.2, true, false}, {"d", 0.1, false, true}}}};
  GateCriteria gates;
  gates.assertions = {parse_gate("SelectionRate <= 0.25 at TestRecall = 0.5"),
                      parse_gate("SelectionRate < 0.5 at TestRecall = 1"),
                      parse_gate("SelectionRate <= 0.5 at ScoreCutoff = 0.5"),
                      parse_gate("TestRecallWithFlakes > 0.9 at ScoreCutoff = 0, CountCutoff = 0")};
  const auto r = evaluate_gates(gates, eval);
  ASSERT_EQ(r.size(), 4u);
  EXPECT_DOUBLE_EQ(*r[0].observed, 0.25);
  EXPECT_TRUE(r[0].passed);
  EXPECT_DOUBLE_EQ(*r[1].observed, 0.75);
  EXPECT_FALSE(r[1].passed);
  EXPECT_DOUBLE_EQ(*r[2].observed, 0.5);
  EXPECT_TRUE(r[2].passed);
  EXPECT_DOUBLE_EQ(*r[3].observed, 1.0);
  EXPECT_TRUE(r[3].passed);

  // No failures at all: the operating point does not exist and the gate fails.
  const std::vector<EvalChange> clean{{"c1", {{"a", 0.9, false, false}}}};
  const auto r2 = evaluate_gates(GateCriteria{{parse_gate("SelectionRate < 0.3 at TestRecall = 0.9")}}, clean);
  EXPECT_FALSE(r2[0].observed.has_value());
  EXPECT_FALSE(r2[0].passed);
}

TEST(Pipeline, RegistryPromote) {
  const auto dir = scratch("registry");
  ModelRegistry reg(dir);
  EXPECT_FALSE(reg.current().has_value());
  reg.promote("abc", "{}\n");
  EXPECT_EQ(reg.current(), "abc");
  EXPECT_EQ(slurp(reg.model_path("abc")), "{}\n");
  reg.store("def", "{\"x\":1}\n");
  EXPECT_EQ(reg.current(), "abc");
  reg.append_log(Json{{"n", 1}});
  reg.append_log(Json{{"n", 2}});
  EXPECT_EQ(slurp(dir / "deployments.jsonl"), "{\"n\":1}\n{\"n\":2}\n");
  fs::remove_all(dir);
}

TEST_F(PipelineSmall, RetrainKeepsCurrentOnFailedGate) {
  const auto dir = scratch("retrain");
  RetrainParams rp;
  rp.run = small_params();
  rp.run.window_days = 28;
  rp.cycles = 1;
  rp.registry = dir;
  const GateCriteria pass{{parse_gate("SelectionRate <= 1 at TestRecall = 0.5")}};
  const GateCriteria fail{{parse_gate("SelectionRate < 0 at TestRecall = 0.5")}};

  // Nothing to fall back on.
  EXPECT_THROW(
      {
        try {
          retrain_cycle(*corpus_, fail, rp);
        } catch (const Error& e) {
          EXPECT_EQ(e.code(), Errc::NoPriorModel);
          throw;
        }
      },
      Error);
  EXPECT_FALSE(ModelRegistry(dir).current().has_value());

  const auto first = retrain_cycle(*corpus_, pass, rp);
  ASSERT_EQ(first.size(), 1u);
  EXPECT_TRUE(first[0].passed);
  const auto promoted = ModelRegistry(dir).current();
  ASSERT_TRUE(promoted.has_value());
  EXPECT_EQ(*promoted, first[0].model_hash);
  const std::string current_bytes = slurp(dir / "CURRENT");

  rp.sabotaged_cycles = {0};
  const auto second = retrain_cycle(*corpus_, fail, rp);
  ASSERT_EQ(second.size(), 1u);
  EXPECT_FALSE(second[0].passed);
  EXPECT_TRUE(second[0].alert.has_value());
  EXPECT_EQ(second[0].promoted_hash, *promoted);
  EXPECT_EQ(slurp(dir / "CURRENT"), current_bytes);
  EXPECT_TRUE(fs::exists(dir / "models" / (*promoted + ".json")));

  // Log has one line per attempted cycle.
  std::ifstream log(dir / "deployments.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) ++lines;
  EXPECT_EQ(lines, 3);
  fs::remove_all(dir);
}

TEST(Pipeline, LoadCorpusRoundTrip) {
  SimConfig c;
  c.fixture = "fig1";
  c.changes = 50;
  const SimCorpus sim = simulate(c);
  const auto dir = scratch("load");
  write_corpus(sim, dir);
  const Corpus loaded = load_corpus(dir);
  const Corpus direct = corpus_from_simulation(sim);
  ASSERT_EQ(loaded.changes.size(), direct.changes.size());
  EXPECT_EQ(loaded.outcomes.size(), direct.outcomes.size());
  EXPECT_EQ(loaded.catalog.size(), 6u);
  for (std::size_t i = 0; i < loaded.changes.size(); ++i) {
    EXPECT_EQ(change_to_json(loaded.changes[i]), change_to_json(direct.changes[i]));
  }
  EXPECT_EQ(loaded.graphs.at("r0").dependent_tests(std::vector<std::string>{"file1", "file2"}).size(), 4u);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace pts
