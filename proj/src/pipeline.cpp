#include "pts/pipeline.hpp"

#include "pts/error.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>

namespace pts {

namespace {

constexpr std::uint64_t kShuffleStream = 77;

Json split_counts(const ExampleTable& table, std::span<const std::size_t> rows) {
  std::size_t positives = 0, failed = 0, flaked = 0;
  std::set<std::string> changes;
  for (std::size_t i : rows) {
    positives += table.examples[i].positive;
    failed += table.outcomes[i] == Outcome::Failed;
    flaked += table.outcomes[i] == Outcome::Flaked;
    changes.insert(table.examples[i].change_id);
  }
  return Json{{"examples", rows.size()},
              {"positives", positives},
              {"negatives", rows.size() - positives},
              {"failed", failed},
              {"flaked", flaked},
              {"changes", changes.size()}};
}

std::string split_hash(const ExampleTable& table, const TimeSplit& split) {
  std::uint64_t h = fnv1a64("split");
  for (const auto* part : {&split.train, &split.test}) {
    for (std::size_t i : *part) {
      h = fnv1a64(table.examples[i].change_id, h);
      h = fnv1a64("\t", h);
      h = fnv1a64(table.examples[i].target_id, h);
      h = fnv1a64("\n", h);
    }
    h = fnv1a64("|", h);
  }
  return hex64(h);
}

std::string canonical_metric(std::string_view name) {
  if (name == "SelectionRate" || name == "selection_rate") return "selection_rate";
  if (name == "TestRecall" || name == "test_recall") return "test_recall";
  if (name == "ChangeRecall" || name == "change_recall") return "change_recall";
  if (name == "TestRecallWithFlakes" || name == "test_recall_with_flakes") return "test_recall_with_flakes";
  if (name == "ScoreCutoff" || name == "score_cutoff") return "score_cutoff";
  if (name == "CountCutoff" || name == "count_cutoff") return "count_cutoff";
  throw Error(Errc::ParseError, "unknown gate term '" + std::string(name) + "'");
}

double metric_value(const MetricsReport& r, const std::string& metric) {
  if (metric == "selection_rate") return r.selection_rate.value();
  if (metric == "test_recall") return r.test_recall.value();
  if (metric == "change_recall") return r.change_recall.value();
  if (metric == "test_recall_with_flakes") return r.test_recall_with_flakes.value();
  throw Error(Errc::ParseError, "unknown gate metric '" + metric + "'");
}

bool compare(double observed, const std::string& cmp, double bound) {
  if (cmp == "<") return observed < bound;
  if (cmp == "<=") return observed <= bound;
  if (cmp == ">") return observed > bound;
  if (cmp == ">=") return observed >= bound;
  throw Error(Errc::ParseError, "unknown comparator '" + cmp + "'");
}

}  // namespace

HistorySnapshot Corpus::seal() const {
  HistoryStore store(max_retries);
  for (const auto& c : changes) store.add_change(c);
  for (const auto& r : outcomes) store.add_outcome(r);
  return store.seal();
}

Corpus corpus_from_simulation(const SimCorpus& sim) {
  Corpus c;
  c.graphs.add("r0", sim.repo.graph);
  c.catalog = sim.repo.catalog();
  c.changes = sim.changes;
  c.outcomes = sim.outcomes;
  c.max_retries = sim.config.max_retries;
  return c;
}

Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus c;
  const auto graphs_dir = dir / "graphs";
  if (std::filesystem::is_directory(graphs_dir)) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(graphs_dir)) {
      if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) c.graphs.add(f.stem().string(), load_graph_file(f));
  }
  if (std::filesystem::exists(dir / "graph.jsonl")) c.graphs.add("r0", load_graph_file(dir / "graph.jsonl"));
  if (c.graphs.size() == 0) throw Error(Errc::IoError, "no graph snapshot in " + dir.string());

  read_jsonl_file(dir / "targets.jsonl", [&](const Json& obj, std::size_t) {
    c.catalog.set(obj.at("target").get<std::string>(), obj.at("num_tests").get<int>());
  });
  read_jsonl_file(dir / "changes.jsonl", [&](const Json& obj, std::size_t) { c.changes.push_back(change_from_json(obj)); });
  if (std::filesystem::exists(dir / "outcomes.jsonl")) {
    read_jsonl_file(dir / "outcomes.jsonl",
                    [&](const Json& obj, std::size_t) { c.outcomes.push_back(outcome_from_json(obj)); });
  }
  if (std::filesystem::exists(dir / "manifest.json")) {
    const Json manifest = read_json_file(dir / "manifest.json");
    if (manifest.contains("config")) c.max_retries = manifest["config"].value("max_retries", kDefaultMaxRetries);
  }
  return c;
}

Json RunParams::to_json() const {
  return Json{{"train", train.to_json()},
              {"features", mask.names()},
              {"tokens", {{"separators", tokens.separators}, {"multiset", tokens.multiset}}},
              {"label_policy", to_string(label_policy)},
              {"window_days", window_days},
              {"holdout_days", holdout_days},
              {"end", end ? Json(*end) : Json(nullptr)},
              {"targets", {{"test_recall_min", targets.test_recall_min}, {"change_recall_min", targets.change_recall_min}}},
              {"grid_size", grid_size},
              {"shuffle_labels", shuffle_labels}};
}

void ExampleTable::relabel(LabelPolicy policy) {
  for (std::size_t i = 0; i < examples.size(); ++i) {
    examples[i].label_policy = policy;
    examples[i].positive = is_positive(outcomes[i], policy);
  }
}

ExampleTable build_examples(const Corpus& corpus, const HistorySnapshot& history, const RunParams& params) {
  ExampleTable table;
  table.schema = FeatureSchema::make(params.mask, params.tokens);
  std::vector<std::string> projects;
  for (const auto& [target, n] : corpus.catalog.entries()) projects.push_back(project_of(target));
  table.projects = ProjectDictionary(std::move(projects));

  const auto changes = history.changes();
  const std::int64_t last = changes.empty() ? 1 : changes.back().timestamp + 1;
  table.window_end = params.end.value_or(last);
  table.window_start = table.window_end - static_cast<std::int64_t>(params.window_days) * kSecondsPerDay;

  const FeatureExtractor extractor(corpus.graphs, history, corpus.catalog, table.projects, table.schema);
  const std::size_t width = table.schema.size();
  for (std::size_t pos = 0; pos < changes.size(); ++pos) {
    const Change& change = changes[pos];
    if (change.timestamp < table.window_start || change.timestamp >= table.window_end) continue;
    const auto records = history.outcomes_of(pos);
    if (records.empty()) continue;
    const auto rows = extractor.extract_change(change);
    // Both sides are sorted by target id; keep dependent tests that were run.
    std::size_t j = 0;
    for (std::size_t i = 0; i < rows.targets.size(); ++i) {
      while (j < records.size() && records[j].target_id < rows.targets[i]) ++j;
      if (j == records.size() || records[j].target_id != rows.targets[i]) continue;
      const Outcome outcome = records[j].outcome;
      table.examples.push_back({change.id, rows.targets[i], is_positive(outcome, params.label_policy),
                                params.label_policy});
      table.outcomes.push_back(outcome);
      table.timestamps.push_back(change.timestamp);
      table.values.insert(table.values.end(), rows.values.begin() + static_cast<std::ptrdiff_t>(i * width),
                          rows.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * width));
    }
  }
  return table;
}

ExampleTable project_table(const ExampleTable& table, FeatureMask mask) {
  ExampleTable out;
  out.schema = FeatureSchema::make(mask, table.schema.tokens());
  out.projects = table.projects;
  out.examples = table.examples;
  out.outcomes = table.outcomes;
  out.timestamps = table.timestamps;
  out.window_start = table.window_start;
  out.window_end = table.window_end;
  std::vector<std::size_t> columns;
  const auto src = table.schema.full_positions();
  for (std::size_t pos : out.schema.full_positions()) {
    const auto it = std::find(src.begin(), src.end(), pos);
    if (it == src.end()) throw Error(Errc::SchemaMismatch, "projection needs a column the table lacks");
    columns.push_back(static_cast<std::size_t>(it - src.begin()));
  }
  const std::size_t width = table.schema.size();
  out.values.reserve(table.rows() * columns.size());
  for (std::size_t r = 0; r < table.rows(); ++r) {
    for (std::size_t c : columns) out.values.push_back(table.values[r * width + c]);
  }
  return out;
}

TrainedRun train_on_table(const ExampleTable& table, const HistorySnapshot& history, const RunParams& params) {
  const TimeSplit split = time_split(table.examples, history, params.holdout_days, table.window_end);
  const std::size_t width = table.schema.size();

  TrainingData data;
  data.rows = split.train.size();
  data.cols = width;
  data.types = table.schema.slot_types();
  data.schema_hash = table.schema.hash();
  data.features.reserve(data.rows * width);
  for (std::size_t i : split.train) {
    data.labels.push_back(table.examples[i].positive ? 1 : 0);
    data.features.insert(data.features.end(), table.values.begin() + static_cast<std::ptrdiff_t>(i * width),
                         table.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * width));
  }
  if (params.shuffle_labels) {
    std::mt19937_64 rng(derive_seed(params.train.seed, kShuffleStream));
    std::shuffle(data.labels.begin(), data.labels.end(), rng);
  }
  const auto positives = static_cast<std::size_t>(std::count(data.labels.begin(), data.labels.end(), 1));
  if (positives == 0 || positives == data.rows) {
    throw Error(Errc::InsufficientFailures, "training window has " + std::to_string(positives) + " positives among " +
                                                std::to_string(data.rows) + " examples");
  }
  std::size_t eval_failures = 0;
  for (std::size_t i : split.test) eval_failures += table.outcomes[i] == Outcome::Failed;
  if (eval_failures == 0) throw Error(Errc::InsufficientFailures, "holdout window has no failed tests");

  TrainedRun run;
  run.model = std::make_shared<BoostedModel>(train(data, params.train));
  run.dataset_manifest = Json{{"window_start", table.window_start},
                              {"window_end", table.window_end},
                              {"split_boundary", split.boundary},
                              {"holdout_days", params.holdout_days},
                              {"label_policy", to_string(params.label_policy)},
                              {"shuffled_labels", params.shuffle_labels},
                              {"train", split_counts(table, split.train)},
                              {"test", split_counts(table, split.test)},
                              {"split_hash", split_hash(table, split)}};
  run.model->manifest = Json{{"dataset", run.dataset_manifest},
                             {"feature_schema", table.schema.to_json()},
                             {"projects", table.projects.to_json()}};

  for (std::size_t i : split.test) {
    const auto& ex = table.examples[i];
    if (run.eval.empty() || run.eval.back().change_id != ex.change_id) run.eval.push_back({ex.change_id, {}});
    const std::span<const double> x(table.values.data() + i * width, width);
    run.eval.back().targets.push_back({ex.target_id, run.model->predict_score(x), table.outcomes[i] == Outcome::Failed,
                                       table.outcomes[i] == Outcome::Flaked});
  }
  return run;
}

CalibratedRun train_and_calibrate(const Corpus& corpus, const HistorySnapshot& history, const RunParams& params) {
  const ExampleTable table = build_examples(corpus, history, params);
  CalibratedRun out{train_on_table(table, history, params), {}};
  out.calibration = calibrate(out.run.eval, params.targets, params.grid_size);
  out.run.model->manifest["strategy"] = Json{{"score_cutoff", out.calibration.score_cutoff},
                                             {"count_cutoff", out.calibration.count_cutoff}};
  out.run.model->manifest["calibration"] = Json{{"targets",
                                                 {{"test_recall_min", params.targets.test_recall_min},
                                                  {"change_recall_min", params.targets.change_recall_min}}},
                                                {"combined", out.calibration.combined.to_json()}};
  return out;
}

std::vector<ChangeEvaluation> to_change_evaluations(std::span<const EvalChange> eval, double score_cutoff,
                                                    std::size_t count_cutoff) {
  std::vector<ChangeEvaluation> out;
  out.reserve(eval.size());
  for (const auto& change : eval) {
    ChangeEvaluation e;
    for (const auto& t : change.targets) {
      e.dependent.push_back(t.target);
      if (t.failed) e.failed.push_back(t.target);
      if (t.flaked) e.flaked.push_back(t.target);
    }
    for (const auto& t : select_from_scores(change.targets, score_cutoff, count_cutoff)) e.selected.push_back(t.target);
    for (auto* v : {&e.dependent, &e.selected, &e.failed, &e.flaked}) std::sort(v->begin(), v->end());
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<double> default_rate_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 19; ++i) grid.push_back(0.05 * i);
  return grid;
}

double recall_at_rate(const CalibrationCurve& curve, double rate, bool with_flakes) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& p : curve.points) {
    pts.emplace_back(p.selection_rate, with_flakes ? p.test_recall_with_flakes : p.test_recall);
  }
  std::sort(pts.begin(), pts.end());
  if (pts.empty()) return 0.0;
  if (rate <= pts.front().first) return pts.front().second;
  if (rate >= pts.back().first) return pts.back().second;
  const auto hi = std::lower_bound(pts.begin(), pts.end(), std::make_pair(rate, -1.0));
  const auto lo = hi - 1;
  if (hi->first == lo->first) return hi->second;
  const double t = (rate - lo->first) / (hi->first - lo->first);
  return lo->second + t * (hi->second - lo->second);
}

Json ExperimentResult::to_json() const {
  auto variant = [&](const FlakinessCurves& v, const Json& manifest) {
    return Json{{"curve", v.curve.to_json()},
                {"test_recall_at_rate", v.test_recall},
                {"test_recall_with_flakes_at_rate", v.test_recall_with_flakes},
                {"dataset", manifest}};
  };
  return Json{{"rate_grid", rate_grid},
              {"deflaked", variant(deflaked, manifest_a)},
              {"conflated", variant(conflated, manifest_b)},
              {"flaked_to_failed_ratio", flaked_to_failed_ratio},
              {"verdicts",
               {{"deflaked_recall_ge_recall_with_flakes", frac_a_recall_ge_flakes},
                {"conflated_recall_lt_recall_with_flakes", frac_b_recall_lt_flakes},
                {"deflaked_recall_ge_conflated_recall", frac_a_recall_ge_b_recall}}}};
}

ExperimentResult run_flakiness_experiment(const Corpus& corpus, const HistorySnapshot& history,
                                          const RunParams& params) {
  ExampleTable table = build_examples(corpus, history, params);
  std::size_t failed = 0, flaked = 0;
  for (auto o : table.outcomes) {
    failed += o == Outcome::Failed;
    flaked += o == Outcome::Flaked;
  }
  if (failed == 0) throw Error(Errc::InsufficientFailures, "corpus has no failed outcomes");

  ExperimentResult result;
  result.rate_grid = default_rate_grid();
  result.flaked_to_failed_ratio = static_cast<double>(flaked) / static_cast<double>(failed);

  auto run_variant = [&](LabelPolicy policy, FlakinessCurves& curves, Json& manifest) {
    RunParams p = params;
    p.label_policy = policy;
    table.relabel(policy);
    const TrainedRun run = train_on_table(table, history, p);
    curves.curve = sweep_score_cutoff(run.eval, score_grid(run.eval, p.grid_size));
    for (double r : result.rate_grid) {
      curves.test_recall.push_back(recall_at_rate(curves.curve, r, false));
      curves.test_recall_with_flakes.push_back(recall_at_rate(curves.curve, r, true));
    }
    manifest = run.dataset_manifest;
  };
  run_variant(LabelPolicy::Deflaked, result.deflaked, result.manifest_a);
  run_variant(LabelPolicy::Conflated, result.conflated, result.manifest_b);

  const auto n = static_cast<double>(result.rate_grid.size());
  std::size_t a = 0, b = 0, c = 0;
  for (std::size_t i = 0; i < result.rate_grid.size(); ++i) {
    a += result.deflaked.test_recall[i] >= result.deflaked.test_recall_with_flakes[i];
    b += result.conflated.test_recall[i] < result.conflated.test_recall_with_flakes[i];
    c += result.deflaked.test_recall[i] >= result.conflated.test_recall[i];
  }
  result.frac_a_recall_ge_flakes = static_cast<double>(a) / n;
  result.frac_b_recall_lt_flakes = static_cast<double>(b) / n;
  result.frac_a_recall_ge_b_recall = static_cast<double>(c) / n;
  return result;
}

std::vector<AblationRow> run_ablation(const Corpus& corpus, const HistorySnapshot& history, const RunParams& params,
                                      std::span<const FeatureGroup> groups, const AblationParams& ablation) {
  const ExampleTable full = build_examples(corpus, history, params);

  auto measure = [&](const ExampleTable& table) {
    const TrainedRun run = train_on_table(table, history, params);
    const double rate = operating_point_at_recall(run.eval, ablation.test_recall, 0, params.grid_size).selection_rate;
    const auto curve = sweep_count_cutoff(run.eval, count_grid(run.eval, params.grid_size));
    double count = -1.0;
    for (const auto& p : curve.points) {
      if (p.change_recall >= ablation.change_recall) {
        count = p.cutoff;
        break;
      }
    }
    return std::make_pair(rate, count);
  };
  auto ratio = [](double without, double with) -> std::optional<double> {
    if (without < 0 || with < 0) return std::nullopt;
    if (with == 0.0) return without == 0.0 ? std::optional<double>(1.0) : std::nullopt;
    return without / with;
  };

  const auto [full_rate, full_count] = measure(full);
  std::vector<AblationRow> rows;
  for (FeatureGroup g : groups) {
    if (!params.mask.has(g)) continue;
    const auto [rate, count] = measure(project_table(full, params.mask.without(g)));
    AblationRow row;
    row.feature = std::string(to_string(g));
    row.selection_rate_full = full_rate;
    row.selection_rate_without = rate;
    row.count_cutoff_full = full_count;
    row.count_cutoff_without = count;
    row.classification_ratio = ratio(rate, full_rate);
    row.ranking_ratio = ratio(count, full_count);
    rows.push_back(row);
  }
  return rows;
}

Json ablation_to_json(std::span<const AblationRow> rows) {
  Json out = Json::array();
  for (const auto& r : rows) {
    out.push_back({{"feature", r.feature},
                   {"selection_rate_full", r.selection_rate_full},
                   {"selection_rate_without", r.selection_rate_without},
                   {"count_cutoff_full", r.count_cutoff_full},
                   {"count_cutoff_without", r.count_cutoff_without},
                   {"classification_ratio", r.classification_ratio ? Json(*r.classification_ratio) : Json(nullptr)},
                   {"ranking_ratio", r.ranking_ratio ? Json(*r.ranking_ratio) : Json(nullptr)}});
  }
  return out;
}

Json GateAssertion::to_json() const {
  Json at = Json::object();
  if (at_test_recall) at["test_recall"] = *at_test_recall;
  if (at_score_cutoff) at["score_cutoff"] = *at_score_cutoff;
  at["count_cutoff"] = at_count_cutoff;
  return Json{{"metric", metric}, {"comparator", comparator}, {"bound", bound}, {"at", at}, {"text", text}};
}

GateAssertion GateAssertion::from_json(const Json& doc) {
  if (doc.is_string()) return parse_gate(doc.get<std::string>());
  GateAssertion g;
  g.metric = canonical_metric(doc.at("metric").get<std::string>());
  g.comparator = doc.at("comparator").get<std::string>();
  compare(0.0, g.comparator, 0.0);
  g.bound = doc.at("bound").get<double>();
  const Json at = doc.value("at", Json::object());
  if (at.contains("test_recall")) g.at_test_recall = at["test_recall"].get<double>();
  if (at.contains("score_cutoff")) g.at_score_cutoff = at["score_cutoff"].get<double>();
  g.at_count_cutoff = at.value("count_cutoff", std::size_t{0});
  if (g.at_test_recall.has_value() == g.at_score_cutoff.has_value()) {
    throw Error(Errc::ParseError, "gate needs exactly one of at.test_recall or at.score_cutoff");
  }
  g.text = doc.value("text", std::string());
  return g;
}

GateAssertion parse_gate(std::string_view text) {
  static const std::regex head(R"(^\s*([A-Za-z_]+)\s*(<=|>=|<|>)\s*([0-9.eE+-]+)\s+at\s+(.+?)\s*$)");
  static const std::regex term(R"(^\s*([A-Za-z_]+)\s*=\s*([0-9.eE+-]+)\s*$)");
  const std::string s(text);
  std::smatch m;
  if (!std::regex_match(s, m, head)) throw Error(Errc::ParseError, "cannot parse gate '" + s + "'");
  GateAssertion g;
  g.text = s;
  g.metric = canonical_metric(m[1].str());
  if (g.metric == "score_cutoff" || g.metric == "count_cutoff") {
    throw Error(Errc::ParseError, "gate metric must be a recall or selection rate");
  }
  g.comparator = m[2].str();
  g.bound = std::stod(m[3].str());
  std::stringstream rest(m[4].str());
  std::string part;
  while (std::getline(rest, part, ',')) {
    std::smatch t;
    if (!std::regex_match(part, t, term)) throw Error(Errc::ParseError, "cannot parse gate setting '" + part + "'");
    const auto key = canonical_metric(t[1].str());
    const double value = std::stod(t[2].str());
    if (key == "test_recall") {
      g.at_test_recall = value;
    } else if (key == "score_cutoff") {
      g.at_score_cutoff = value;
    } else if (key == "count_cutoff") {
      g.at_count_cutoff = static_cast<std::size_t>(value);
    } else {
      throw Error(Errc::ParseError, "gate operating point must set TestRecall, ScoreCutoff or CountCutoff");
    }
  }
  if (g.at_test_recall.has_value() == g.at_score_cutoff.has_value()) {
    throw Error(Errc::ParseError, "gate needs exactly one of TestRecall or ScoreCutoff");
  }
  return g;
}

Json GateCriteria::to_json() const {
  Json arr = Json::array();
  for (const auto& a : assertions) arr.push_back(a.to_json());
  return Json{{"assertions", arr}};
}

GateCriteria GateCriteria::from_json(const Json& doc) {
  GateCriteria g;
  const Json& list = doc.is_array() ? doc : doc.at("assertions");
  for (const auto& a : list) g.assertions.push_back(GateAssertion::from_json(a));
  return g;
}

Json GateResult::to_json() const {
  return Json{{"assertion", assertion.to_json()},
              {"observed", observed ? Json(*observed) : Json(nullptr)},
              {"passed", passed}};
}

std::vector<GateResult> evaluate_gates(const GateCriteria& gates, std::span<const EvalChange> eval,
                                       std::size_t grid_size) {
  std::vector<GateResult> out;
  for (const auto& a : gates.assertions) {
    GateResult r{a, std::nullopt, false};
    try {
      MetricCounts counts;
      if (a.at_test_recall) {
        counts = operating_point_at_recall(eval, *a.at_test_recall, a.at_count_cutoff, grid_size).counts;
      } else {
        counts = evaluate_cutoffs(eval, *a.at_score_cutoff, a.at_count_cutoff);
      }
      r.observed = metric_value(MetricsReport::from_counts(counts), a.metric);
      r.passed = compare(*r.observed, a.comparator, a.bound);
    } catch (const Error& e) {
      if (e.code() != Errc::UnreachableTarget && e.code() != Errc::NoFailuresInDataset) throw;
    }
    out.push_back(std::move(r));
  }
  return out;
}

Json CycleRecord::to_json() const {
  Json g = Json::array();
  for (const auto& r : gates) g.push_back(r.to_json());
  return Json{{"cycle", cycle},
              {"window", {{"start", window_start}, {"end", window_end}}},
              {"gates", g},
              {"passed", passed},
              {"candidate_hash", model_hash},
              {"promoted_model_hash", promoted_hash},
              {"alert", alert ? Json(*alert) : Json(nullptr)}};
}

ModelRegistry::ModelRegistry(std::filesystem::path root) : root_(std::move(root)) {
  std::filesystem::create_directories(root_ / "models");
}

std::optional<std::string> ModelRegistry::current() const {
  const auto path = root_ / "CURRENT";
  if (!std::filesystem::exists(path)) return std::nullopt;
  std::string hash = read_text_file(path);
  while (!hash.empty() && (hash.back() == '\n' || hash.back() == '\r')) hash.pop_back();
  return hash;
}

std::filesystem::path ModelRegistry::model_path(const std::string& hash) const {
  return root_ / "models" / (hash + ".json");
}

void ModelRegistry::store(const std::string& hash, const std::string& model_text) {
  write_file_atomic(model_path(hash), model_text);
}

void ModelRegistry::promote(const std::string& hash, const std::string& model_text) {
  store(hash, model_text);
  write_file_atomic(root_ / "CURRENT", hash + "\n");
}

void ModelRegistry::append_log(const Json& record) {
  std::ofstream out(root_ / "deployments.jsonl", std::ios::app);
  if (!out) throw Error(Errc::IoError, "cannot append to deployment log");
  out << record.dump() << '\n';
}

std::pair<std::string, std::string> model_text_and_hash(const BoostedModel& model) {
  std::string text = dump_pretty(model.to_json());
  return {text, hex64(fnv1a64(text))};
}

std::vector<CycleRecord> retrain_cycle(const Corpus& corpus, const GateCriteria& gates, const RetrainParams& params) {
  if (corpus.changes.empty()) throw Error(Errc::InsufficientFailures, "empty corpus");
  ModelRegistry registry(params.registry);
  const HistorySnapshot history = corpus.seal();
  const std::int64_t first_end = params.first_end.value_or(
      history.changes().back().timestamp + 1 -
      static_cast<std::int64_t>(params.cycles - 1) * params.cadence_days * kSecondsPerDay);

  std::vector<CycleRecord> records;
  for (int cycle = 0; cycle < params.cycles; ++cycle) {
    RunParams run = params.run;
    run.end = first_end + static_cast<std::int64_t>(cycle) * params.cadence_days * kSecondsPerDay;
    run.shuffle_labels = params.sabotaged_cycles.count(cycle) != 0;

    CycleRecord rec;
    rec.cycle = cycle;
    rec.window_end = *run.end;
    rec.window_start = *run.end - static_cast<std::int64_t>(run.window_days) * kSecondsPerDay;
    std::string text;
    try {
      CalibratedRun trained = train_and_calibrate(corpus, history, run);
      rec.gates = evaluate_gates(gates, trained.run.eval, run.grid_size);
      rec.passed = std::all_of(rec.gates.begin(), rec.gates.end(), [](const GateResult& g) { return g.passed; });
      Json verdicts = Json::array();
      for (const auto& g : rec.gates) verdicts.push_back(g.to_json());
      trained.run.model->manifest["gates"] = verdicts;
      trained.run.model->manifest["cycle"] = cycle;
      std::tie(text, rec.model_hash) = model_text_and_hash(*trained.run.model);
    } catch (const Error& e) {
      if (e.code() != Errc::InsufficientFailures && e.code() != Errc::UnreachableTarget &&
          e.code() != Errc::DegenerateLabels) {
        throw;
      }
      rec.passed = false;
      rec.alert = std::string("training failed: ") + e.what();
    }

    if (rec.passed) {
      registry.promote(rec.model_hash, text);
    } else {
      if (!text.empty()) write_file_atomic(registry.root() / "rejected" / (rec.model_hash + ".json"), text);
      if (!rec.alert) rec.alert = "gate failure; keeping the previously promoted model";
    }
    rec.promoted_hash = registry.current().value_or("");
    registry.append_log(rec.to_json());
    records.push_back(rec);
    if (!rec.passed && rec.promoted_hash.empty()) {
      throw Error(Errc::NoPriorModel, "cycle " + std::to_string(cycle) + " failed its gates with no model to keep");
    }
  }
  return records;
}

}  // namespace pts
