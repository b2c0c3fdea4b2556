#include "pts/cli.hpp"

#include "pts/error.hpp"
#include "pts/metrics.hpp"
#include "pts/pipeline.hpp"
#include "pts/plot.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

namespace pts {

namespace {

struct Settings {
  std::uint64_t seed = 1;
  std::string corpus;
  std::string out;
  std::string model;
  std::string registry;
  std::string input;

  // generate
  std::string sim_config;
  std::string fixture;
  int sim_changes = 0;
  int sim_tests = 0;

  // training
  std::vector<std::string> features;
  std::string label_policy = "deflaked";
  int trees = 200;
  int depth = 6;
  double learning_rate = 0.1;
  double l2 = 1.0;
  double min_child_weight = 1.0;
  double subsample = 1.0;
  double positive_class_weight = 0.0;  // 0: negatives / positives
  int window_days = 90;
  int holdout_days = 7;
  std::int64_t end = 0;  // 0: after the last change
  double test_recall_target = 0.95;
  double change_recall_target = 0.999;
  std::size_t grid_size = kDefaultGridSize;

  // retrain
  std::vector<std::string> gates;
  int cycles = 3;
  int cadence_days = 7;
  std::vector<int> sabotage;
  std::int64_t first_end = 0;

  // select
  std::vector<std::string> files;
  std::string revision = "r0";
  std::string author = "cli";
  std::int64_t timestamp = 0;
  double score_cutoff = -1.0;  // negative: from the model
  long long count_cutoff = -1;

  // plot
  std::vector<std::string> series;
  std::string title;
  std::string x_label = "selection rate";
  std::string y_label = "recall";
};

Json settings_to_json(const Settings& s) {
  return Json{{"seed", s.seed},
              {"corpus", s.corpus},
              {"out", s.out},
              {"model", s.model},
              {"registry", s.registry},
              {"input", s.input},
              {"sim-config", s.sim_config},
              {"fixture", s.fixture},
              {"sim-changes", s.sim_changes},
              {"sim-tests", s.sim_tests},
              {"features", s.features},
              {"label-policy", s.label_policy},
              {"trees", s.trees},
              {"depth", s.depth},
              {"learning-rate", s.learning_rate},
              {"l2", s.l2},
              {"min-child-weight", s.min_child_weight},
              {"subsample", s.subsample},
              {"positive-class-weight", s.positive_class_weight},
              {"window-days", s.window_days},
              {"holdout-days", s.holdout_days},
              {"end", s.end},
              {"test-recall-target", s.test_recall_target},
              {"change-recall-target", s.change_recall_target},
              {"grid-size", s.grid_size},
              {"gates", s.gates},
              {"cycles", s.cycles},
              {"cadence-days", s.cadence_days},
              {"sabotage", s.sabotage},
              {"first-end", s.first_end},
              {"files", s.files},
              {"revision", s.revision},
              {"author", s.author},
              {"timestamp", s.timestamp},
              {"score-cutoff", s.score_cutoff},
              {"count-cutoff", s.count_cutoff},
              {"series", s.series},
              {"title", s.title},
              {"x-label", s.x_label},
              {"y-label", s.y_label}};
}

Settings settings_from_json(const Json& doc) {
  if (!doc.is_object()) throw Error(Errc::InvalidConfig, "config must be a JSON object");
  Json merged = settings_to_json(Settings{});
  for (const auto& [key, value] : doc.items()) {
    if (!merged.contains(key)) throw Error(Errc::InvalidConfig, "unknown config key '" + key + "'");
    merged[key] = value;
  }
  Settings s;
  try {
    s.seed = merged["seed"].get<std::uint64_t>();
    s.corpus = merged["corpus"].get<std::string>();
    s.out = merged["out"].get<std::string>();
    s.model = merged["model"].get<std::string>();
    s.registry = merged["registry"].get<std::string>();
    s.input = merged["input"].get<std::string>();
    s.sim_config = merged["sim-config"].get<std::string>();
    s.fixture = merged["fixture"].get<std::string>();
    s.sim_changes = merged["sim-changes"].get<int>();
    s.sim_tests = merged["sim-tests"].get<int>();
    s.features = merged["features"].get<std::vector<std::string>>();
    s.label_policy = merged["label-policy"].get<std::string>();
    s.trees = merged["trees"].get<int>();
    s.depth = merged["depth"].get<int>();
    s.learning_rate = merged["learning-rate"].get<double>();
    s.l2 = merged["l2"].get<double>();
    s.min_child_weight = merged["min-child-weight"].get<double>();
    s.subsample = merged["subsample"].get<double>();
    s.positive_class_weight = merged["positive-class-weight"].get<double>();
    s.window_days = merged["window-days"].get<int>();
    s.holdout_days = merged["holdout-days"].get<int>();
    s.end = merged["end"].get<std::int64_t>();
    s.test_recall_target = merged["test-recall-target"].get<double>();
    s.change_recall_target = merged["change-recall-target"].get<double>();
    s.grid_size = merged["grid-size"].get<std::size_t>();
    s.gates = merged["gates"].get<std::vector<std::string>>();
    s.cycles = merged["cycles"].get<int>();
    s.cadence_days = merged["cadence-days"].get<int>();
    s.sabotage = merged["sabotage"].get<std::vector<int>>();
    s.first_end = merged["first-end"].get<std::int64_t>();
    s.files = merged["files"].get<std::vector<std::string>>();
    s.revision = merged["revision"].get<std::string>();
    s.author = merged["author"].get<std::string>();
    s.timestamp = merged["timestamp"].get<std::int64_t>();
    s.score_cutoff = merged["score-cutoff"].get<double>();
    s.count_cutoff = merged["count-cutoff"].get<long long>();
    s.series = merged["series"].get<std::vector<std::string>>();
    s.title = merged["title"].get<std::string>();
    s.x_label = merged["x-label"].get<std::string>();
    s.y_label = merged["y-label"].get<std::string>();
  } catch (const Json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string("config: ") + e.what());
  }
  return s;
}

RunParams run_params(const Settings& s) {
  RunParams p;
  p.train.num_trees = s.trees;
  p.train.max_depth = s.depth;
  p.train.learning_rate = s.learning_rate;
  p.train.l2_leaf_penalty = s.l2;
  p.train.min_child_weight = s.min_child_weight;
  p.train.subsample = s.subsample;
  if (s.positive_class_weight > 0) p.train.positive_class_weight = s.positive_class_weight;
  p.train.seed = s.seed;
  if (!s.features.empty()) p.mask = FeatureMask::from_names(s.features);
  p.label_policy = parse_label_policy(s.label_policy);
  p.window_days = s.window_days;
  p.holdout_days = s.holdout_days;
  if (s.end != 0) p.end = s.end;
  p.targets = {s.test_recall_target, s.change_recall_target};
  p.grid_size = s.grid_size;
  return p;
}

std::filesystem::path require_dir(const std::string& path, const char* flag) {
  if (path.empty()) throw Error(Errc::InvalidConfig, std::string("missing --") + flag);
  std::filesystem::create_directories(path);
  return path;
}

void write_csv(const std::filesystem::path& path, const CalibrationCurve& curve) {
  std::ostringstream os;
  write_curve_csv(os, curve);
  write_file_atomic(path, os.str());
}

struct Context {
  Settings& s;
  std::ostream& out;
  std::ostream& err;
  std::string command;

  void echo() {
    Json effective = settings_to_json(s);
    effective["command"] = command;
    err << effective.dump() << '\n';
    if (!s.out.empty() && command != "plot" && command != "evaluate") {
      write_file_atomic(std::filesystem::path(s.out) / "config.json", dump_pretty(effective));
    }
  }
};

int cmd_generate(Context& ctx) {
  const Settings& s = ctx.s;
  SimConfig config = s.sim_config.empty() ? SimConfig{} : SimConfig::from_json(read_json_file(s.sim_config));
  config.seed = s.seed;
  if (!s.fixture.empty()) config.fixture = s.fixture;
  if (s.sim_changes > 0) config.changes = s.sim_changes;
  if (s.sim_tests > 0) config.tests = s.sim_tests;
  config.validate();
  const auto dir = require_dir(s.out, "out");
  ctx.echo();
  const SimCorpus corpus = simulate(config);
  write_corpus(corpus, dir);
  ctx.out << "wrote " << corpus.changes.size() << " changes, " << corpus.outcomes.size() << " outcomes to "
          << dir.string() << '\n';
  return kExitOk;
}

Corpus require_corpus(const Settings& s) {
  if (s.corpus.empty()) throw Error(Errc::InvalidConfig, "missing --corpus");
  return load_corpus(s.corpus);
}

int cmd_train(Context& ctx) {
  const Settings& s = ctx.s;
  const Corpus corpus = require_corpus(s);
  const auto dir = require_dir(s.out, "out");
  ctx.echo();
  const HistorySnapshot history = corpus.seal();
  const RunParams params = run_params(s);
  const ExampleTable table = build_examples(corpus, history, params);
  const TrainedRun run = train_on_table(table, history, params);
  run.model->manifest["run"] = params.to_json();
  run.model->save(dir / "model.json");
  write_file_atomic(dir / "dataset.json", dump_pretty(run.dataset_manifest));
  ctx.out << "trained " << run.model->trees.size() << " trees on " << run.dataset_manifest["train"]["examples"]
          << " examples\n";
  return kExitOk;
}

int cmd_calibrate(Context& ctx) {
  const Settings& s = ctx.s;
  const Corpus corpus = require_corpus(s);
  const auto dir = require_dir(s.out, "out");
  ctx.echo();
  const HistorySnapshot history = corpus.seal();
  const RunParams params = run_params(s);
  const CalibratedRun run = train_and_calibrate(corpus, history, params);
  run.run.model->manifest["run"] = params.to_json();
  run.run.model->save(dir / "model.json");
  Json report = run.calibration.to_json();
  report["dataset"] = run.run.dataset_manifest;
  write_file_atomic(dir / "calibration.json", dump_pretty(report));
  write_csv(dir / "score_curve.csv", run.calibration.score_curve);
  write_csv(dir / "count_curve.csv", run.calibration.count_curve);
  ctx.out << dump_pretty(Json{{"score_cutoff", run.calibration.score_cutoff},
                              {"count_cutoff", run.calibration.count_cutoff},
                              {"metrics", run.calibration.combined.to_json()}});
  return kExitOk;
}

int cmd_select(Context& ctx) {
  const Settings& s = ctx.s;
  const Corpus corpus = require_corpus(s);
  if (s.files.empty()) throw Error(Errc::InvalidConfig, "missing --files");
  ctx.echo();
  const HistorySnapshot history = corpus.seal();
  Change change;
  change.id = "cli";
  change.author = s.author;
  change.revision = s.revision;
  change.modified_files = s.files;
  change.timestamp = s.timestamp;
  if (change.timestamp == 0) {
    change.timestamp = history.changes().empty() ? 0 : history.changes().back().timestamp + 1;
  }
  normalize_change(change);

  std::vector<ScoredTarget> selected;
  if (s.model.empty()) {
    const auto& graph = corpus.graphs.at(change.revision);
    for (auto& t : graph.dependent_tests(change.modified_files)) {
      selected.push_back(ScoredTarget{std::move(t), 1.0, false, false});
    }
  } else {
    auto model = std::make_shared<BoostedModel>(BoostedModel::load(s.model));
    const Json& manifest = model->manifest;
    Strategy strategy{model, 0.0, 0};
    if (manifest.contains("strategy")) {
      strategy.score_cutoff = manifest["strategy"].at("score_cutoff").get<double>();
      strategy.count_cutoff = manifest["strategy"].at("count_cutoff").get<std::size_t>();
    }
    if (s.score_cutoff >= 0) strategy.score_cutoff = s.score_cutoff;
    if (s.count_cutoff >= 0) strategy.count_cutoff = static_cast<std::size_t>(s.count_cutoff);
    const FeatureExtractor extractor(corpus.graphs, history, corpus.catalog,
                                     ProjectDictionary::from_json(manifest.at("projects")),
                                     FeatureSchema::from_json(manifest.at("feature_schema")));
    selected = select(strategy, change, extractor);
  }
  ctx.out << std::setprecision(17);
  for (const auto& t : selected) ctx.out << t.target << '\t' << t.score << '\n';
  return kExitOk;
}

std::vector<std::string> string_list(const Json& obj, const char* key) {
  if (!obj.contains(key)) return {};
  auto v = obj.at(key).get<std::vector<std::string>>();
  std::sort(v.begin(), v.end());
  return v;
}

int cmd_evaluate(Context& ctx) {
  const Settings& s = ctx.s;
  if (s.input.empty()) throw Error(Errc::InvalidConfig, "missing --input");
  ctx.echo();
  const Json doc = read_json_file(s.input);
  const Json& list = doc.is_array() ? doc : doc.at("changes");
  std::vector<ChangeEvaluation> inputs;
  try {
    for (const auto& obj : list) {
      inputs.push_back({string_list(obj, "dependent"), string_list(obj, "selected"), string_list(obj, "failed"),
                        string_list(obj, "flaked")});
    }
  } catch (const Json::exception& e) {
    throw Error(Errc::ParseError, s.input + ": " + e.what());
  }
  validate(inputs);
  const std::string report = dump_pretty(MetricsReport::from_counts(count(inputs)).to_json());
  if (!s.out.empty()) write_file_atomic(s.out, report);
  ctx.out << report;
  return kExitOk;
}

int cmd_experiment(Context& ctx) {
  const Settings& s = ctx.s;
  const Corpus corpus = require_corpus(s);
  const auto dir = require_dir(s.out, "out");
  ctx.echo();
  const HistorySnapshot history = corpus.seal();
  const ExperimentResult result = run_flakiness_experiment(corpus, history, run_params(s));
  write_file_atomic(dir / "experiment.json", dump_pretty(result.to_json()));
  write_csv(dir / "deflaked_curve.csv", result.deflaked.curve);
  write_csv(dir / "conflated_curve.csv", result.conflated.curve);
  std::ostringstream grid;
  grid << "selection_rate,test_recall_a,test_recall_with_flakes_a,test_recall_b,test_recall_with_flakes_b\n"
       << std::setprecision(17);
  for (std::size_t i = 0; i < result.rate_grid.size(); ++i) {
    grid << result.rate_grid[i] << ',' << result.deflaked.test_recall[i] << ','
         << result.deflaked.test_recall_with_flakes[i] << ',' << result.conflated.test_recall[i] << ','
         << result.conflated.test_recall_with_flakes[i] << '\n';
  }
  write_file_atomic(dir / "rate_grid.csv", grid.str());
  const auto csv = dir / "rate_grid.csv";
  write_file_atomic(dir / "deflaked.svg",
                    render_svg({"Trained on de-flaked labels", "selection rate", "recall",
                                {{csv, "selection_rate", "test_recall_a", "TestRecall"},
                                 {csv, "selection_rate", "test_recall_with_flakes_a", "TestRecallWithFlakes"}}}));
  write_file_atomic(dir / "conflated.svg",
                    render_svg({"Trained on flaky labels", "selection rate", "recall",
                                {{csv, "selection_rate", "test_recall_b", "TestRecall"},
                                 {csv, "selection_rate", "test_recall_with_flakes_b", "TestRecallWithFlakes"}}}));
  ctx.out << dump_pretty(result.to_json()["verdicts"]);
  return kExitOk;
}

int cmd_ablation(Context& ctx) {
  const Settings& s = ctx.s;
  const Corpus corpus = require_corpus(s);
  const auto dir = require_dir(s.out, "out");
  ctx.echo();
  const HistorySnapshot history = corpus.seal();
  const auto rows = run_ablation(corpus, history, run_params(s), kAllFeatureGroups);
  const std::string text = dump_pretty(ablation_to_json(rows));
  write_file_atomic(dir / "ablation.json", text);
  ctx.out << text;
  return kExitOk;
}

int cmd_retrain(Context& ctx) {
  Settings& s = ctx.s;
  const Corpus corpus = require_corpus(s);
  if (s.registry.empty()) throw Error(Errc::InvalidConfig, "missing --registry");
  if (s.gates.empty()) s.gates.push_back("SelectionRate < 0.3 at TestRecall = 0.9");
  GateCriteria gates;
  for (const auto& g : s.gates) gates.assertions.push_back(parse_gate(g));
  ctx.echo();
  RetrainParams params;
  params.run = run_params(s);
  params.run.end.reset();
  params.cadence_days = s.cadence_days;
  params.cycles = s.cycles;
  if (s.first_end != 0) params.first_end = s.first_end;
  params.registry = s.registry;
  params.sabotaged_cycles.insert(s.sabotage.begin(), s.sabotage.end());
  bool all_passed = true;
  try {
    for (const auto& rec : retrain_cycle(corpus, gates, params)) {
      ctx.out << rec.to_json().dump() << '\n';
      if (!rec.passed) {
        all_passed = false;
        ctx.err << "ALERT cycle " << rec.cycle << ": " << rec.alert.value_or("gate failure") << '\n';
      }
    }
  } catch (const Error& e) {
    if (e.code() != Errc::NoPriorModel) throw;
    ctx.err << "ALERT " << e.what() << '\n';
    return kExitGateFailure;
  }
  return all_passed ? kExitOk : kExitGateFailure;
}

int cmd_plot(Context& ctx) {
  const Settings& s = ctx.s;
  if (s.series.empty()) throw Error(Errc::InvalidConfig, "missing --series");
  if (s.out.empty()) throw Error(Errc::InvalidConfig, "missing --out");
  ctx.echo();
  PlotSpec spec{s.title, s.x_label, s.y_label, {}};
  for (const auto& item : s.series) {
    std::vector<std::string> parts;
    std::stringstream ss(item);
    std::string part;
    while (std::getline(ss, part, ':')) parts.push_back(part);
    if (parts.size() != 4) throw Error(Errc::InvalidConfig, "series must be csv:x:y:label, got '" + item + "'");
    spec.series.push_back({parts[0], parts[1], parts[2], parts[3]});
  }
  write_file_atomic(s.out, render_svg(spec));
  return kExitOk;
}

std::string find_config(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return {};
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    const std::string config_path = find_config(args);
    Settings s = config_path.empty() ? Settings{} : settings_from_json(read_json_file(config_path));

    CLI::App app{"Predictive test selection: simulate, train, calibrate and gate test-selection models"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string ignored;
    app.add_option("--config", ignored, "JSON config file; flags override its keys");
    app.add_option("--seed", s.seed, "Seed for every random stream")->capture_default_str();

    auto add_run = [&](CLI::App* sub) {
      sub->add_option("--corpus", s.corpus, "Corpus directory");
      sub->add_option("--out", s.out, "Output directory");
      sub->add_option("--features", s.features, "Feature groups to keep (default: all)")->delimiter(',');
      sub->add_option("--label-policy", s.label_policy, "deflaked | conflated")->capture_default_str();
      sub->add_option("--trees", s.trees, "Boosting rounds")->capture_default_str();
      sub->add_option("--depth", s.depth, "Maximum tree depth")->capture_default_str();
      sub->add_option("--learning-rate", s.learning_rate, "Shrinkage")->capture_default_str();
      sub->add_option("--l2", s.l2, "Leaf weight L2 penalty")->capture_default_str();
      sub->add_option("--min-child-weight", s.min_child_weight, "Minimum hessian per child")->capture_default_str();
      sub->add_option("--subsample", s.subsample, "Row fraction per tree")->capture_default_str();
      sub->add_option("--positive-class-weight", s.positive_class_weight, "0 uses negatives/positives");
      sub->add_option("--window-days", s.window_days, "Training window incl. holdout")->capture_default_str();
      sub->add_option("--holdout-days", s.holdout_days, "Held-out calibration window")->capture_default_str();
      sub->add_option("--end", s.end, "Window end timestamp (exclusive); 0 = after the last change");
      sub->add_option("--test-recall-target", s.test_recall_target)->capture_default_str();
      sub->add_option("--change-recall-target", s.change_recall_target)->capture_default_str();
      sub->add_option("--grid-size", s.grid_size, "Cutoff grid resolution")->capture_default_str();
    };

    auto* generate = app.add_subcommand("generate", "Simulate a repository and CI history");
    generate->add_option("--out", s.out, "Output directory");
    generate->add_option("--sim-config", s.sim_config, "Simulator config JSON");
    generate->add_option("--fixture", s.fixture, "Fixed repository instead of a generated one (fig1)");
    generate->add_option("--sim-changes", s.sim_changes, "Override the number of changes");
    generate->add_option("--sim-tests", s.sim_tests, "Override the number of tests");

    auto* train = app.add_subcommand("train", "Train a model on the training window");
    add_run(train);
    auto* calibrate_cmd = app.add_subcommand("calibrate", "Train, then pick cutoffs on the held-out week");
    add_run(calibrate_cmd);
    auto* experiment = app.add_subcommand("experiment", "Compare de-flaked and flaky training labels");
    add_run(experiment);
    auto* ablation = app.add_subcommand("ablation", "Drop one feature group at a time");
    add_run(ablation);

    auto* retrain = app.add_subcommand("retrain", "Weekly retrain with promotion gates");
    add_run(retrain);
    retrain->add_option("--registry", s.registry, "Model registry directory");
    retrain->add_option("--gate", s.gates, "Gate assertion (repeatable)");
    retrain->add_option("--cycles", s.cycles)->capture_default_str();
    retrain->add_option("--cadence-days", s.cadence_days)->capture_default_str();
    retrain->add_option("--first-end", s.first_end, "End of the first window; 0 = last cycle ends after the last change");
    retrain->add_option("--sabotage", s.sabotage, "Cycles trained on shuffled labels")->delimiter(',');

    auto* select_cmd = app.add_subcommand("select", "Print the selected tests for a change");
    select_cmd->add_option("--corpus", s.corpus, "Corpus directory");
    select_cmd->add_option("--model", s.model, "Model file; without it every dependent test is selected");
    select_cmd->add_option("--files", s.files, "Modified files")->delimiter(',');
    select_cmd->add_option("--revision", s.revision)->capture_default_str();
    select_cmd->add_option("--author", s.author)->capture_default_str();
    select_cmd->add_option("--timestamp", s.timestamp, "0 = after the last change");
    select_cmd->add_option("--score-cutoff", s.score_cutoff, "Override the model's score cutoff");
    select_cmd->add_option("--count-cutoff", s.count_cutoff, "Override the model's count cutoff");

    auto* evaluate_cmd = app.add_subcommand("evaluate", "Metrics for explicit selections");
    evaluate_cmd->add_option("--input", s.input, "JSON list of {dependent, selected, failed, flaked}");
    evaluate_cmd->add_option("--out", s.out, "Report file");

    auto* plot = app.add_subcommand("plot", "Render CSV curves as SVG");
    plot->add_option("--series", s.series, "csv:x_column:y_column:label (repeatable)");
    plot->add_option("--out", s.out, "SVG file");
    plot->add_option("--title", s.title);
    plot->add_option("--x-label", s.x_label);
    plot->add_option("--y-label", s.y_label);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
      app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      err << e.what() << '\n';
      return kExitValidation;
    }

    Context ctx{s, out, err, app.get_subcommands().front()->get_name()};
    const std::string& cmd = ctx.command;
    if (cmd == "generate") return cmd_generate(ctx);
    if (cmd == "train") return cmd_train(ctx);
    if (cmd == "calibrate") return cmd_calibrate(ctx);
    if (cmd == "select") return cmd_select(ctx);
    if (cmd == "evaluate") return cmd_evaluate(ctx);
    if (cmd == "experiment") return cmd_experiment(ctx);
    if (cmd == "ablation") return cmd_ablation(ctx);
    if (cmd == "retrain") return cmd_retrain(ctx);
    if (cmd == "plot") return cmd_plot(ctx);
    return kExitInternal;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace pts
