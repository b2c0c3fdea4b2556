#include "pts/simgen.hpp"

#include "pts/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace pts {

namespace {

constexpr std::uint64_t kRepoStream = 1;
constexpr std::uint64_t kTargetStream = 2;
constexpr std::uint64_t kChangeStream = 3;
constexpr std::uint64_t kFaultStream = 4;
constexpr std::uint64_t kSampleStream = 5;
constexpr std::uint64_t kRiskStream = 6;
constexpr std::uint64_t kExecutionStreamBase = 1'000'000;

std::string padded(int value, int width) {
  std::ostringstream s;
  s << std::setw(width) << std::setfill('0') << value;
  return s.str();
}

bool probability(double p) { return p >= 0.0 && p <= 1.0; }

// Project language mixes; index into kExtensionRegistry plus a few overflow ones.
const std::vector<std::vector<std::string>> kLanguageMixes = {
    {"cpp", "h"}, {"java", "kt"}, {"py"}, {"js", "ts"}, {"php"}, {"m", "swift", "h"}, {"rs"}, {"go"}, {"c", "h"},
};
const std::vector<std::string> kStrayExtensions = {"json", "bzl", "txt", "md", "yaml", "cc", "hpp"};

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 over the combined value.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void SimConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(Errc::InvalidConfig, what); };
  if (fixture.empty()) {
    if (files < 1 || libraries < 1 || tests < 1 || projects < 1 || library_layers < 1 || max_test_cases < 1) {
      fail("repository counts must be at least 1");
    }
  } else if (fixture != "fig1") {
    fail("unknown fixture '" + fixture + "'");
  }
  if (changes < 1 || authors < 1 || timespan_days < 1 || start_timestamp <= 0) fail("change counts must be at least 1");
  if (files_per_change_mean < 1.0 || max_files_per_change < 1) fail("files per change must be at least 1");
  for (double p : {cross_project_dependency, home_project_affinity, learning_sample_rate, fault_probability,
                   impact_scale, impact_base, fragile_fraction, robust_fragility, project_fragility_min,
                   flaky_fraction, flaky_rate_min, flaky_rate_max, base_flake_rate}) {
    if (!probability(p)) fail("probabilities must lie in [0, 1]");
  }
  if (flaky_rate_min > flaky_rate_max) fail("flaky_rate_min exceeds flaky_rate_max");
  for (std::size_t i = 0; i < impact_table.size(); ++i) {
    if (!probability(impact_table[i])) fail("impact_table entries must lie in [0, 1]");
    if (i > 0 && impact_table[i] > impact_table[i - 1]) fail("impact_table must be non-increasing in distance");
  }
  if (max_retries < 0) fail("max_retries must be non-negative");
  if (!(extension_risk_spread >= 1.0)) fail("extension_risk_spread must be at least 1");
}

double SimConfig::impact(int distance) const {
  if (distance < 1) return 0.0;
  if (!impact_table.empty()) {
    const auto i = static_cast<std::size_t>(distance - 1);
    return i < impact_table.size() ? impact_table[i] : 0.0;
  }
  return impact_scale * std::pow(impact_base, distance - 1);
}

Json SimConfig::to_json() const {
  return Json{{"seed", seed},
              {"files", files},
              {"libraries", libraries},
              {"tests", tests},
              {"projects", projects},
              {"library_layers", library_layers},
              {"cross_project_dependency", cross_project_dependency},
              {"max_test_cases", max_test_cases},
              {"changes", changes},
              {"authors", authors},
              {"timespan_days", timespan_days},
              {"start_timestamp", start_timestamp},
              {"home_project_affinity", home_project_affinity},
              {"files_per_change_mean", files_per_change_mean},
              {"max_files_per_change", max_files_per_change},
              {"learning_sample_rate", learning_sample_rate},
              {"fault_probability", fault_probability},
              {"extension_risk_spread", extension_risk_spread},
              {"impact_scale", impact_scale},
              {"impact_base", impact_base},
              {"impact_table", impact_table},
              {"fragile_fraction", fragile_fraction},
              {"robust_fragility", robust_fragility},
              {"project_fragility_min", project_fragility_min},
              {"flaky_fraction", flaky_fraction},
              {"flaky_rate_min", flaky_rate_min},
              {"flaky_rate_max", flaky_rate_max},
              {"base_flake_rate", base_flake_rate},
              {"max_retries", max_retries},
              {"fixture", fixture}};
}

SimConfig SimConfig::from_json(const Json& doc) {
  SimConfig c;
  const Json defaults = c.to_json();
  for (const auto& [key, value] : doc.items()) {
    if (!defaults.contains(key)) throw Error(Errc::InvalidConfig, "unknown simulation key '" + key + "'");
  }
  Json merged = defaults;
  merged.update(doc);
  c.seed = merged["seed"].get<std::uint64_t>();
  c.files = merged["files"].get<int>();
  c.libraries = merged["libraries"].get<int>();
  c.tests = merged["tests"].get<int>();
  c.projects = merged["projects"].get<int>();
  c.library_layers = merged["library_layers"].get<int>();
  c.cross_project_dependency = merged["cross_project_dependency"].get<double>();
  c.max_test_cases = merged["max_test_cases"].get<int>();
  c.changes = merged["changes"].get<int>();
  c.authors = merged["authors"].get<int>();
  c.timespan_days = merged["timespan_days"].get<int>();
  c.start_timestamp = merged["start_timestamp"].get<std::int64_t>();
  c.home_project_affinity = merged["home_project_affinity"].get<double>();
  c.files_per_change_mean = merged["files_per_change_mean"].get<double>();
  c.max_files_per_change = merged["max_files_per_change"].get<int>();
  c.learning_sample_rate = merged["learning_sample_rate"].get<double>();
  c.fault_probability = merged["fault_probability"].get<double>();
  c.extension_risk_spread = merged["extension_risk_spread"].get<double>();
  c.impact_scale = merged["impact_scale"].get<double>();
  c.impact_base = merged["impact_base"].get<double>();
  c.impact_table = merged["impact_table"].get<std::vector<double>>();
  c.fragile_fraction = merged["fragile_fraction"].get<double>();
  c.robust_fragility = merged["robust_fragility"].get<double>();
  c.project_fragility_min = merged["project_fragility_min"].get<double>();
  c.flaky_fraction = merged["flaky_fraction"].get<double>();
  c.flaky_rate_min = merged["flaky_rate_min"].get<double>();
  c.flaky_rate_max = merged["flaky_rate_max"].get<double>();
  c.base_flake_rate = merged["base_flake_rate"].get<double>();
  c.max_retries = merged["max_retries"].get<int>();
  c.fixture = merged["fixture"].get<std::string>();
  return c;
}

TargetCatalog RepoModel::catalog() const {
  TargetCatalog c;
  for (const auto& [id, t] : targets) c.set(id, t.num_tests);
  return c;
}

RepoModel fig1_fixture() {
  std::vector<NodeSpec> nodes = {
      {"file1", NodeKind::File},    {"file2", NodeKind::File},    {"lib1", NodeKind::Library},
      {"lib2", NodeKind::Library},  {"lib3", NodeKind::Library},  {"lib4", NodeKind::Library},
      {"test1", NodeKind::Test},    {"test2", NodeKind::Test},    {"test3", NodeKind::Test},
      {"test4", NodeKind::Test},    {"test5", NodeKind::Test},    {"test6", NodeKind::Test},
  };
  std::vector<EdgeSpec> edges = {
      {"file1", "lib1"}, {"file2", "lib2"}, {"lib1", "lib3"}, {"lib2", "lib3"}, {"lib1", "test1"},
      {"lib1", "test2"}, {"lib3", "test3"}, {"lib2", "test4"}, {"lib4", "test5"}, {"lib4", "test6"},
  };
  RepoModel repo;
  repo.graph = BuildGraph::build(std::move(nodes), std::move(edges));
  for (int i = 1; i <= 6; ++i) repo.targets["test" + std::to_string(i)] = {"test" + std::to_string(i), 1, 0.0, 1.0};
  return repo;
}

RepoModel generate_repo(const SimConfig& config) {
  config.validate();
  if (config.fixture == "fig1") return fig1_fixture();

  std::mt19937_64 rng(derive_seed(config.seed, kRepoStream));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int P = config.projects;
  const int width = std::max(2, static_cast<int>(std::to_string(P - 1).size()));
  std::vector<std::string> project_names;
  for (int p = 0; p < P; ++p) project_names.push_back("proj" + padded(p, width));

  std::vector<NodeSpec> nodes;
  std::vector<EdgeSpec> edges;

  // Libraries: round-robin projects, random layer; the first of each project is a base layer library.
  struct Lib {
    std::string id;
    int project;
    int layer;
  };
  std::vector<Lib> libs;
  std::vector<std::vector<int>> libs_by_project(static_cast<std::size_t>(P));
  const int lib_width = static_cast<int>(std::to_string(config.libraries).size());
  for (int i = 0; i < config.libraries; ++i) {
    const int p = i % P;
    const int layer = i < P ? 0 : static_cast<int>(rng() % static_cast<std::uint64_t>(config.library_layers));
    libs.push_back({project_names[static_cast<std::size_t>(p)] + "/lib" + padded(i, lib_width) + ":lib", p, layer});
    libs_by_project[static_cast<std::size_t>(p)].push_back(i);
  }

  const int file_width = static_cast<int>(std::to_string(config.files).size());
  std::vector<std::vector<std::string>> project_exts(static_cast<std::size_t>(P));
  for (int p = 0; p < P; ++p) project_exts[static_cast<std::size_t>(p)] = kLanguageMixes[static_cast<std::size_t>(p) % kLanguageMixes.size()];

  std::vector<std::string> file_ids;
  std::vector<int> file_lib;
  for (int j = 0; j < config.files; ++j) {
    const int lib = j < config.libraries ? j : static_cast<int>(rng() % static_cast<std::uint64_t>(config.libraries));
    const auto& exts = project_exts[static_cast<std::size_t>(libs[static_cast<std::size_t>(lib)].project)];
    std::string ext = unit(rng) < 0.9 ? exts[rng() % exts.size()] : kStrayExtensions[rng() % kStrayExtensions.size()];
    const auto& lib_id = libs[static_cast<std::size_t>(lib)].id;
    file_ids.push_back(lib_id.substr(0, lib_id.find(':')) + "/file" + padded(j, file_width) + "." + ext);
    file_lib.push_back(lib);
  }

  for (const auto& f : file_ids) nodes.push_back({f, NodeKind::File});
  for (const auto& l : libs) nodes.push_back({l.id, NodeKind::Library});
  for (std::size_t j = 0; j < file_ids.size(); ++j) edges.push_back({file_ids[j], libs[static_cast<std::size_t>(file_lib[j])].id});

  for (std::size_t i = 0; i < libs.size(); ++i) {
    const Lib& lib = libs[i];
    if (lib.layer == 0) continue;
    std::set<int> deps;
    const int wanted = 1 + static_cast<int>(rng() % 2);
    for (int k = 0; k < wanted; ++k) {
      const bool cross = lib.project != 0 && unit(rng) < config.cross_project_dependency;
      const auto& pool = libs_by_project[static_cast<std::size_t>(cross ? 0 : lib.project)];
      std::vector<int> lower;
      for (int c : pool) {
        if (libs[static_cast<std::size_t>(c)].layer < lib.layer) lower.push_back(c);
      }
      if (lower.empty()) continue;
      deps.insert(lower[rng() % lower.size()]);
    }
    for (int d : deps) edges.push_back({libs[static_cast<std::size_t>(d)].id, lib.id});
  }

  RepoModel repo;
  std::vector<double> project_factor;
  std::mt19937_64 trng(derive_seed(config.seed, kTargetStream));
  for (int p = 0; p < P; ++p) {
    project_factor.push_back(config.project_fragility_min + (1.0 - config.project_fragility_min) * unit(trng));
  }
  const int test_width = static_cast<int>(std::to_string(config.tests).size());
  const double log_max = std::log(static_cast<double>(config.max_test_cases));
  for (int i = 0; i < config.tests; ++i) {
    const int p = i % P;
    const auto& pname = project_names[static_cast<std::size_t>(p)];
    const std::string id = pname + "/tests/t" + padded(i, test_width) + ":test";
    nodes.push_back({id, NodeKind::Test});
    const auto& pool = libs_by_project[static_cast<std::size_t>(p)];
    std::vector<double> weights;
    for (int c : pool) weights.push_back(1.0 + libs[static_cast<std::size_t>(c)].layer);
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    std::set<int> deps;
    const int wanted = 1 + static_cast<int>(rng() % 3);
    for (int k = 0; k < wanted; ++k) deps.insert(pool[pick(rng)]);
    for (int d : deps) edges.push_back({libs[static_cast<std::size_t>(d)].id, id});

    TargetTruth t;
    t.project = pname;
    t.num_tests = std::clamp(static_cast<int>(std::exp(unit(trng) * log_max)), 1, config.max_test_cases);
    const double size_share = log_max > 0 ? std::log(static_cast<double>(t.num_tests)) / log_max : 0.5;
    const bool flaky = unit(trng) < std::min(1.0, config.flaky_fraction * 2.0 * size_share);
    t.flake_rate = flaky ? config.flaky_rate_min + (config.flaky_rate_max - config.flaky_rate_min) * unit(trng)
                         : 2.0 * config.base_flake_rate * unit(trng);
    const bool fragile = unit(trng) < std::min(1.0, config.fragile_fraction * 2.0 * (1.0 - size_share));
    t.fragility = project_factor[static_cast<std::size_t>(p)] * (fragile ? 1.0 : config.robust_fragility);
    repo.targets.emplace(id, t);
  }

  repo.graph = BuildGraph::build(std::move(nodes), std::move(edges));
  return repo;
}

ChangeStream generate_changes(const SimConfig& config, const RepoModel& repo) {
  config.validate();
  const BuildGraph& g = repo.graph;

  // Candidate files per project with skewed popularity.
  std::map<std::string, std::vector<NodeIndex>> files_by_project;
  for (NodeIndex i = 0; i < g.node_count(); ++i) {
    if (g.kind(i) == NodeKind::File) files_by_project[project_of(g.id(i))].push_back(i);
  }
  if (files_by_project.empty()) throw Error(Errc::InvalidConfig, "repository has no files");
  std::vector<std::vector<NodeIndex>> pools;
  for (auto& [name, files] : files_by_project) pools.push_back(files);

  std::mt19937_64 rng(derive_seed(config.seed, kChangeStream));
  std::mt19937_64 fault_rng(derive_seed(config.seed, kFaultStream));
  std::mt19937_64 sample_rng(derive_seed(config.seed, kSampleStream));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Each extension carries a fixed log-uniform risk multiplier.
  std::map<std::string, double, std::less<>> risk_by_ext;
  auto extension_risk = [&](std::string_view file) {
    const auto dot = file.rfind('.');
    const std::string_view ext = dot == std::string_view::npos ? std::string_view() : file.substr(dot + 1);
    auto it = risk_by_ext.find(ext);
    if (it == risk_by_ext.end()) {
      const double u = static_cast<double>(derive_seed(config.seed ^ fnv1a64(ext), kRiskStream) >> 11) * 0x1.0p-53;
      const double spread = std::log(config.extension_risk_spread);
      it = risk_by_ext.emplace(std::string(ext), std::exp((2.0 * u - 1.0) * spread)).first;
    }
    return it->second;
  };

  std::vector<std::discrete_distribution<std::size_t>> popularity;
  for (auto& pool : pools) {
    std::vector<double> w(pool.size());
    std::vector<std::size_t> rank(pool.size());
    std::iota(rank.begin(), rank.end(), 0);
    std::shuffle(rank.begin(), rank.end(), rng);
    for (std::size_t i = 0; i < pool.size(); ++i) w[i] = 1.0 / std::pow(static_cast<double>(rank[i] + 1), 0.9);
    popularity.emplace_back(w.begin(), w.end());
  }

  const std::int64_t span = static_cast<std::int64_t>(config.timespan_days) * kSecondsPerDay;
  std::vector<std::int64_t> stamps(static_cast<std::size_t>(config.changes));
  std::uniform_int_distribution<std::int64_t> when(config.start_timestamp, config.start_timestamp + span - 1);
  for (auto& s : stamps) s = when(rng);
  std::sort(stamps.begin(), stamps.end());

  const int change_width = std::max(6, static_cast<int>(std::to_string(config.changes).size()));
  const int author_width = static_cast<int>(std::to_string(config.authors).size());
  const auto P = pools.size();
  std::geometric_distribution<int> extra_files(1.0 / config.files_per_change_mean);

  ChangeStream out;
  out.changes.reserve(stamps.size());
  for (std::size_t k = 0; k < stamps.size(); ++k) {
    Change c;
    c.id = "c" + padded(static_cast<int>(k), change_width);
    c.timestamp = stamps[k];
    const auto author = static_cast<int>(rng() % static_cast<std::uint64_t>(config.authors));
    c.author = "a" + padded(author, author_width);
    const std::size_t project = unit(rng) < config.home_project_affinity ? static_cast<std::size_t>(author) % P
                                                                         : static_cast<std::size_t>(rng() % P);
    const int n_files = std::min(1 + extra_files(rng), config.max_files_per_change);
    for (int f = 0; f < n_files; ++f) c.modified_files.push_back(g.id(pools[project][popularity[project](rng)]));
    c.revision = "r0";
    c.sampled_for_learning = unit(sample_rng) < config.learning_sample_rate;
    normalize_change(c);

    ChangeTruth truth;
    double clean = 1.0;
    for (const auto& f : c.modified_files) clean *= 1.0 - std::min(1.0, config.fault_probability * extension_risk(f));
    truth.fault_probability = 1.0 - clean;
    truth.faulty = unit(fault_rng) < truth.fault_probability;
    if (truth.faulty) {
      const auto dist = g.distances_from(g.resolve_files(c.modified_files));
      for (NodeIndex t : g.tests()) {
        if (dist[t] == kUnreachableDistance) continue;
        const double p = std::min(1.0, config.impact(dist[t]) * repo.targets.at(g.id(t)).fragility);
        if (unit(fault_rng) < p) truth.broken.push_back(g.id(t));
      }
      std::sort(truth.broken.begin(), truth.broken.end());
    }
    out.truth.emplace(c.id, std::move(truth));
    out.changes.push_back(std::move(c));
  }
  return out;
}

std::vector<OutcomeRecord> execute_tests(const Change& change, std::span<const std::string> targets,
                                         const RepoModel& repo, ChangeTruth& truth, const SimConfig& config,
                                         std::mt19937_64& rng) {
  const auto dependent = repo.graph.dependent_tests(change.modified_files);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<OutcomeRecord> out;
  out.reserve(targets.size());
  const std::size_t max_attempts = static_cast<std::size_t>(config.max_retries) + 1;
  for (const auto& target : targets) {
    if (!std::binary_search(dependent.begin(), dependent.end(), target)) {
      throw Error(Errc::TargetNotDependent, change.id + " / " + target);
    }
    OutcomeRecord rec{change.id, target, {}};
    const bool broken = std::binary_search(truth.broken.begin(), truth.broken.end(), target);
    const double flake_rate = repo.targets.at(target).flake_rate;
    std::vector<FailureCause> causes;
    while (rec.attempts.size() < max_attempts) {
      if (broken) {
        rec.attempts.push_back(Attempt::Fail);
        causes.push_back(FailureCause::Fault);
      } else if (unit(rng) < flake_rate) {
        rec.attempts.push_back(Attempt::Fail);
        causes.push_back(FailureCause::Flake);
      } else {
        rec.attempts.push_back(Attempt::Pass);
        break;
      }
    }
    if (!causes.empty()) truth.failure_causes[target] = std::move(causes);
    out.push_back(std::move(rec));
  }
  return out;
}

SimCorpus simulate(const SimConfig& config) {
  SimCorpus corpus;
  corpus.config = config;
  corpus.repo = generate_repo(config);
  auto stream = generate_changes(config, corpus.repo);
  corpus.changes = std::move(stream.changes);
  corpus.truth = std::move(stream.truth);
  for (std::size_t k = 0; k < corpus.changes.size(); ++k) {
    const Change& c = corpus.changes[k];
    if (!c.sampled_for_learning) continue;
    std::mt19937_64 rng(derive_seed(config.seed, kExecutionStreamBase + k));
    const auto targets = corpus.repo.graph.dependent_tests(c.modified_files);
    auto records = execute_tests(c, targets, corpus.repo, corpus.truth.at(c.id), config, rng);
    corpus.outcomes.insert(corpus.outcomes.end(), std::make_move_iterator(records.begin()),
                           std::make_move_iterator(records.end()));
  }
  return corpus;
}

void write_corpus(const SimCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ostringstream graph;
    write_graph_jsonl(graph, corpus.repo.graph);
    write_file_atomic(dir / "graph.jsonl", graph.str());
  }
  std::ostringstream targets, target_truth, changes, outcomes, truth;
  for (const auto& [id, t] : corpus.repo.targets) {
    targets << catalog_entry_to_json(id, t.num_tests).dump() << '\n';
    target_truth << Json{{"target", id}, {"project", t.project}, {"flake_rate", t.flake_rate},
                         {"fragility", t.fragility}}.dump()
                 << '\n';
  }
  for (const auto& c : corpus.changes) changes << change_to_json(c).dump() << '\n';
  for (const auto& r : corpus.outcomes) outcomes << outcome_to_json(r).dump() << '\n';
  std::size_t faulty = 0, broken = 0;
  for (const auto& c : corpus.changes) {
    const auto& t = corpus.truth.at(c.id);
    faulty += t.faulty;
    broken += t.broken.size();
    Json causes = Json::object();
    for (const auto& [target, list] : t.failure_causes) {
      Json arr = Json::array();
      for (auto cause : list) arr.push_back(cause == FailureCause::Fault ? "fault" : "flake");
      causes[target] = arr;
    }
    truth << Json{{"change_id", c.id}, {"fault_probability", t.fault_probability}, {"faulty", t.faulty}, {"broken", t.broken}, {"failure_causes", causes}}.dump()
          << '\n';
  }
  write_file_atomic(dir / "targets.jsonl", targets.str());
  write_file_atomic(dir / "target_truth.jsonl", target_truth.str());
  write_file_atomic(dir / "changes.jsonl", changes.str());
  write_file_atomic(dir / "outcomes.jsonl", outcomes.str());
  write_file_atomic(dir / "ground_truth.jsonl", truth.str());

  const Json manifest{{"format", "pts-sim-run/1"},
                      {"seed", corpus.config.seed},
                      {"config", corpus.config.to_json()},
                      {"counts",
                       {{"nodes", corpus.repo.graph.node_count()},
                        {"edges", corpus.repo.graph.edge_count()},
                        {"tests", corpus.repo.graph.tests().size()},
                        {"changes", corpus.changes.size()},
                        {"outcome_records", corpus.outcomes.size()},
                        {"faulty_changes", faulty},
                        {"broken_targets", broken}}}};
  write_file_atomic(dir / "manifest.json", dump_pretty(manifest));
}

}  // namespace pts
