#include "pts/features.hpp"

#include "pts/error.hpp"

#include <algorithm>

namespace pts {

namespace {

constexpr std::array<std::string_view, kFeatureGroupCount> kGroupNames = {
    "change_history", "file_cardinality", "target_cardinality", "distinct_authors", "file_extensions",
    "failure_rates",  "num_tests",        "project_name",       "min_distance",     "common_tokens"};

std::vector<Slot> build_full_layout() {
  std::vector<Slot> slots;
  for (int w : kChangeHistoryWindows) {
    slots.push_back({"change_history_" + std::to_string(w) + "d", FeatureGroup::ChangeHistory, SlotType::Numeric});
  }
  slots.push_back({"file_cardinality", FeatureGroup::FileCardinality, SlotType::Numeric});
  slots.push_back({"target_cardinality", FeatureGroup::TargetCardinality, SlotType::Numeric});
  slots.push_back({"distinct_authors", FeatureGroup::DistinctAuthors, SlotType::Numeric});
  for (auto ext : kExtensionRegistry) {
    slots.push_back({"ext_" + std::string(ext), FeatureGroup::FileExtensions, SlotType::Numeric});
  }
  slots.push_back({"ext_other", FeatureGroup::FileExtensions, SlotType::Numeric});
  for (int w : kFailureRateWindows) {
    slots.push_back({"failure_rate_" + std::to_string(w) + "d", FeatureGroup::FailureRates, SlotType::Numeric});
  }
  slots.push_back({"num_tests", FeatureGroup::NumTests, SlotType::Numeric});
  slots.push_back({"project", FeatureGroup::ProjectName, SlotType::Categorical});
  slots.push_back({"min_distance", FeatureGroup::MinDistance, SlotType::Numeric});
  slots.push_back({"common_tokens", FeatureGroup::CommonTokens, SlotType::Numeric});
  return slots;
}

}  // namespace

std::string_view to_string(FeatureGroup group) noexcept { return kGroupNames[static_cast<std::size_t>(group)]; }

FeatureGroup parse_feature_group(std::string_view text) {
  for (std::size_t i = 0; i < kGroupNames.size(); ++i) {
    if (kGroupNames[i] == text) return static_cast<FeatureGroup>(i);
  }
  throw Error(Errc::ParseError, "unknown feature group '" + std::string(text) + "'");
}

std::span<const Slot> full_slot_layout() {
  static const std::vector<Slot> layout = build_full_layout();
  return layout;
}

FeatureMask FeatureMask::all() {
  FeatureMask m;
  m.bits_.set();
  return m;
}

FeatureMask FeatureMask::reduced() {
  FeatureMask m;
  for (auto g : {FeatureGroup::FileExtensions, FeatureGroup::ChangeHistory, FeatureGroup::FailureRates,
                 FeatureGroup::ProjectName, FeatureGroup::NumTests, FeatureGroup::MinDistance}) {
    m = m.with(g);
  }
  return m;
}

FeatureMask FeatureMask::from_names(std::span<const std::string> names) {
  FeatureMask m;
  for (const auto& n : names) m = m.with(parse_feature_group(n));
  return m;
}

FeatureMask FeatureMask::without(FeatureGroup group) const {
  FeatureMask m = *this;
  m.bits_.reset(static_cast<std::size_t>(group));
  return m;
}

FeatureMask FeatureMask::with(FeatureGroup group) const {
  FeatureMask m = *this;
  m.bits_.set(static_cast<std::size_t>(group));
  return m;
}

std::vector<std::string> FeatureMask::names() const {
  std::vector<std::string> out;
  for (auto g : kAllFeatureGroups) {
    if (has(g)) out.emplace_back(to_string(g));
  }
  return out;
}

FeatureSchema FeatureSchema::make(FeatureMask mask, TokenConfig tokens) {
  FeatureSchema s;
  s.mask_ = mask;
  s.tokens_ = std::move(tokens);
  const auto layout = full_slot_layout();
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (mask.has(layout[i].group)) {
      s.slots_.push_back(layout[i]);
      s.positions_.push_back(i);
    }
  }
  Json canonical = s.to_json();
  canonical.erase("schema_hash");
  s.hash_ = fnv1a64(canonical.dump());
  return s;
}

FeatureSchema FeatureSchema::from_json(const Json& doc) {
  TokenConfig tokens;
  tokens.separators = doc.at("tokens").at("separators").get<std::string>();
  tokens.multiset = doc.at("tokens").at("multiset").get<bool>();
  const auto groups = doc.at("groups").get<std::vector<std::string>>();
  FeatureSchema s = make(FeatureMask::from_names(groups), tokens);
  if (doc.contains("schema_hash") && doc["schema_hash"].get<std::string>() != s.hash_hex()) {
    throw Error(Errc::SchemaMismatch, "schema document hash " + doc["schema_hash"].get<std::string>() +
                                          " does not match this build's " + s.hash_hex());
  }
  return s;
}

std::vector<SlotType> FeatureSchema::slot_types() const {
  std::vector<SlotType> out;
  out.reserve(slots_.size());
  for (const auto& s : slots_) out.push_back(s.type);
  return out;
}

Json FeatureSchema::to_json() const {
  Json slots = Json::array();
  for (const auto& s : slots_) {
    slots.push_back({{"name", s.name},
                     {"group", to_string(s.group)},
                     {"type", s.type == SlotType::Numeric ? "numeric" : "categorical"}});
  }
  return Json{{"format", "pts-feature-schema/1"},
              {"groups", mask_.names()},
              {"slots", slots},
              {"windows",
               {{"change_history_days", kChangeHistoryWindows},
                {"failure_rate_days", kFailureRateWindows},
                {"distinct_authors_days", kAuthorWindowDays}}},
              {"extension_registry", kExtensionRegistry},
              {"unreachable_distance", kUnreachableDistance},
              {"tokens", {{"separators", tokens_.separators}, {"multiset", tokens_.multiset}}},
              {"schema_hash", hex64(hash_)}};
}

void TargetCatalog::set(std::string target, int num_tests) { num_tests_.insert_or_assign(std::move(target), num_tests); }

int TargetCatalog::num_tests(std::string_view target) const {
  const auto it = num_tests_.find(target);
  if (it == num_tests_.end()) throw Error(Errc::UnknownTarget, std::string(target));
  return it->second;
}

bool TargetCatalog::contains(std::string_view target) const { return num_tests_.find(target) != num_tests_.end(); }

Json catalog_entry_to_json(std::string_view target, int num_tests) {
  return Json{{"target", target}, {"num_tests", num_tests}};
}

std::string project_of(std::string_view target) {
  const auto cut = target.find_first_of("/:");
  return std::string(target.substr(0, cut));
}

ProjectDictionary::ProjectDictionary(std::vector<std::string> projects) : projects_(std::move(projects)) {
  std::sort(projects_.begin(), projects_.end());
  projects_.erase(std::unique(projects_.begin(), projects_.end()), projects_.end());
}

int ProjectDictionary::code(std::string_view project) const {
  const auto it = std::lower_bound(projects_.begin(), projects_.end(), project);
  if (it == projects_.end() || *it != project) return 0;
  return static_cast<int>(it - projects_.begin()) + 1;
}

Json ProjectDictionary::to_json() const { return Json(projects_); }

ProjectDictionary ProjectDictionary::from_json(const Json& doc) {
  return ProjectDictionary(doc.get<std::vector<std::string>>());
}

std::vector<std::string> path_tokens(std::string_view path, std::string_view separators) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= path.size()) {
    const auto cut = path.find_first_of(separators, start);
    const auto end = cut == std::string_view::npos ? path.size() : cut;
    if (end > start) out.emplace_back(path.substr(start, end - start));
    if (cut == std::string_view::npos) break;
    start = cut + 1;
  }
  return out;
}

std::size_t common_token_count(std::span<const std::string> modified_files, std::string_view target,
                               const TokenConfig& config) {
  std::vector<std::string> left;
  for (const auto& f : modified_files) {
    auto tokens = path_tokens(f, config.separators);
    left.insert(left.end(), std::make_move_iterator(tokens.begin()), std::make_move_iterator(tokens.end()));
  }
  auto right = path_tokens(target, config.separators);
  std::sort(left.begin(), left.end());
  std::sort(right.begin(), right.end());
  if (!config.multiset) {
    left.erase(std::unique(left.begin(), left.end()), left.end());
    right.erase(std::unique(right.begin(), right.end()), right.end());
  }
  std::vector<std::string> shared;
  std::set_intersection(left.begin(), left.end(), right.begin(), right.end(), std::back_inserter(shared));
  return shared.size();
}

std::size_t extension_slot(std::string_view path) {
  const auto slash = path.find_last_of('/');
  const auto base = slash == std::string_view::npos ? path : path.substr(slash + 1);
  const auto dot = base.find_last_of('.');
  if (dot == std::string_view::npos || dot == 0) return kExtensionWidth - 1;
  const auto ext = base.substr(dot + 1);
  for (std::size_t i = 0; i < kExtensionRegistry.size(); ++i) {
    if (kExtensionRegistry[i] == ext) return i;
  }
  return kExtensionWidth - 1;
}

FeatureExtractor::FeatureExtractor(const GraphStore& graphs, const HistorySnapshot& history,
                                   const TargetCatalog& catalog, ProjectDictionary projects, FeatureSchema schema)
    : graphs_(graphs), history_(history), catalog_(catalog), projects_(std::move(projects)), schema_(std::move(schema)) {}

ChangeSlots FeatureExtractor::change_slots(const Change& change, std::size_t target_cardinality) const {
  ChangeSlots c;
  for (std::size_t i = 0; i < kChangeHistoryWindows.size(); ++i) {
    c.history[i] = static_cast<double>(
        history_.changes_touching(change.modified_files, change.timestamp, kChangeHistoryWindows[i]));
  }
  c.file_cardinality = static_cast<double>(change.modified_files.size());
  c.target_cardinality = static_cast<double>(target_cardinality);
  c.distinct_authors =
      static_cast<double>(history_.distinct_authors(change.modified_files, change.timestamp, kAuthorWindowDays));
  for (const auto& f : change.modified_files) c.extensions[extension_slot(f)] = 1.0;
  return c;
}

ChangeSlots FeatureExtractor::change_features(const Change& change) const {
  const BuildGraph& graph = graphs_.at(change.revision);
  return change_slots(change, graph.dependent_tests(change.modified_files).size());
}

TargetSlots FeatureExtractor::target_features(std::string_view target, std::int64_t as_of) const {
  TargetSlots t;
  t.num_tests = static_cast<double>(catalog_.num_tests(target));
  for (std::size_t i = 0; i < kFailureRateWindows.size(); ++i) {
    const auto counts = history_.target_failures(target, as_of, kFailureRateWindows[i]);
    t.failure_rates[i] =
        counts.total == 0 ? 0.0 : static_cast<double>(counts.failed) / static_cast<double>(counts.total);
  }
  t.project_code = static_cast<double>(projects_.code(project_of(target)));
  return t;
}

CrossSlots FeatureExtractor::cross_features(const Change& change, std::string_view target) const {
  const BuildGraph& graph = graphs_.at(change.revision);
  CrossSlots x;
  x.min_distance = static_cast<double>(graph.min_distance(change.modified_files, target));
  x.common_tokens = static_cast<double>(common_token_count(change.modified_files, target, schema_.tokens()));
  return x;
}

void FeatureExtractor::project_into(const ChangeSlots& c, const TargetSlots& t, const CrossSlots& x,
                                    std::vector<double>& out) const {
  std::array<double, 30> full{};
  std::size_t k = 0;
  for (double v : c.history) full[k++] = v;
  full[k++] = c.file_cardinality;
  full[k++] = c.target_cardinality;
  full[k++] = c.distinct_authors;
  for (double v : c.extensions) full[k++] = v;
  for (double v : t.failure_rates) full[k++] = v;
  full[k++] = t.num_tests;
  full[k++] = t.project_code;
  full[k++] = x.min_distance;
  full[k++] = x.common_tokens;
  for (std::size_t pos : schema_.full_positions()) out.push_back(full[pos]);
}

FeatureVector FeatureExtractor::assemble(const Change& change, std::string_view target) const {
  FeatureVector v;
  v.schema_hash = schema_.hash();
  v.values.reserve(schema_.size());
  project_into(change_features(change), target_features(target, change.timestamp), cross_features(change, target),
               v.values);
  return v;
}

FeatureExtractor::ChangeRows FeatureExtractor::extract_change(const Change& change) const {
  const BuildGraph& graph = graphs_.at(change.revision);
  const auto dist = graph.distances_from(graph.resolve_files(change.modified_files));
  std::vector<NodeIndex> reached;
  for (NodeIndex t : graph.tests()) {
    if (dist[t] != kUnreachableDistance) reached.push_back(t);
  }
  std::sort(reached.begin(), reached.end(), [&](NodeIndex a, NodeIndex b) { return graph.id(a) < graph.id(b); });

  ChangeRows rows;
  const ChangeSlots c = change_slots(change, reached.size());
  rows.targets.reserve(reached.size());
  rows.values.reserve(reached.size() * schema_.size());
  for (NodeIndex t : reached) {
    const auto& target = graph.id(t);
    CrossSlots x;
    x.min_distance = dist[t];
    if (schema_.mask().has(FeatureGroup::CommonTokens)) {
      x.common_tokens = static_cast<double>(common_token_count(change.modified_files, target, schema_.tokens()));
    }
    project_into(c, target_features(target, change.timestamp), x, rows.values);
    rows.targets.push_back(target);
  }
  return rows;
}

}  // namespace pts
