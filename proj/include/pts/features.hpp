#pragma once

#include "pts/depgraph.hpp"
#include "pts/history.hpp"
#include "pts/jsonl.hpp"

#include <array>
#include <bitset>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pts {

// Feature groups, in frozen slot order. Each ablation step removes one group.
enum class FeatureGroup : std::uint8_t {
  ChangeHistory,
  FileCardinality,
  TargetCardinality,
  DistinctAuthors,
  FileExtensions,
  FailureRates,
  NumTests,
  ProjectName,
  MinDistance,
  CommonTokens,
};
inline constexpr std::size_t kFeatureGroupCount = 10;
inline constexpr std::array<FeatureGroup, kFeatureGroupCount> kAllFeatureGroups = {
    FeatureGroup::ChangeHistory,  FeatureGroup::FileCardinality, FeatureGroup::TargetCardinality,
    FeatureGroup::DistinctAuthors, FeatureGroup::FileExtensions, FeatureGroup::FailureRates,
    FeatureGroup::NumTests,       FeatureGroup::ProjectName,     FeatureGroup::MinDistance,
    FeatureGroup::CommonTokens};

std::string_view to_string(FeatureGroup group) noexcept;
FeatureGroup parse_feature_group(std::string_view text);

inline constexpr std::array<int, 3> kChangeHistoryWindows = {3, 14, 56};
inline constexpr std::array<int, 4> kFailureRateWindows = {7, 14, 28, 56};
inline constexpr int kAuthorWindowDays = 56;
inline constexpr std::size_t kExtensionWidth = 16;
/// Extensions with a dedicated bit; anything else sets the last (overflow) bit.
inline constexpr std::array<std::string_view, kExtensionWidth - 1> kExtensionRegistry = {
    "c", "cc", "cpp", "h", "hpp", "java", "kt", "py", "js", "ts", "php", "m", "swift", "rs", "go"};

class FeatureMask {
 public:
  static FeatureMask all();
  /// Groups kept by the wrapper-method study in the original deployment:
  /// extensions, change history, failure rates, project, number of tests,
  /// minimal distance.
  static FeatureMask reduced();
  static FeatureMask from_names(std::span<const std::string> names);

  bool has(FeatureGroup group) const { return bits_.test(static_cast<std::size_t>(group)); }
  FeatureMask without(FeatureGroup group) const;
  FeatureMask with(FeatureGroup group) const;
  std::vector<std::string> names() const;
  bool operator==(const FeatureMask&) const = default;

 private:
  std::bitset<kFeatureGroupCount> bits_;
};

enum class SlotType : std::uint8_t { Numeric, Categorical };

struct Slot {
  std::string name;
  FeatureGroup group;
  SlotType type;
};

struct TokenConfig {
  std::string separators = "/._-:";
  bool multiset = true;  // false: count distinct shared tokens
};

/// Ordered slot layout shared by training and serving. The hash covers slot
/// names and types, window definitions, the distance sentinel and the token
/// rules, so any drift in extraction semantics changes it.
class FeatureSchema {
 public:
  FeatureSchema() = default;
  static FeatureSchema make(FeatureMask mask, TokenConfig tokens = {});
  static FeatureSchema from_json(const Json& doc);

  std::span<const Slot> slots() const noexcept { return slots_; }
  std::size_t size() const noexcept { return slots_.size(); }
  std::uint64_t hash() const noexcept { return hash_; }
  std::string hash_hex() const { return hex64(hash_); }
  const FeatureMask& mask() const noexcept { return mask_; }
  const TokenConfig& tokens() const noexcept { return tokens_; }
  /// Position of each schema slot within the full (unmasked) layout.
  std::span<const std::size_t> full_positions() const noexcept { return positions_; }
  std::vector<SlotType> slot_types() const;

  Json to_json() const;

 private:
  FeatureMask mask_;
  TokenConfig tokens_;
  std::vector<Slot> slots_;
  std::vector<std::size_t> positions_;
  std::uint64_t hash_ = 0;
};

/// Every slot in frozen order, regardless of mask.
std::span<const Slot> full_slot_layout();

struct ChangeSlots {
  std::array<double, kChangeHistoryWindows.size()> history{};
  double file_cardinality = 0;
  double target_cardinality = 0;
  double distinct_authors = 0;
  std::array<double, kExtensionWidth> extensions{};
};

struct TargetSlots {
  std::array<double, kFailureRateWindows.size()> failure_rates{};
  double num_tests = 0;
  double project_code = 0;
};

struct CrossSlots {
  double min_distance = kUnreachableDistance;
  double common_tokens = 0;
};

struct FeatureVector {
  std::vector<double> values;
  std::uint64_t schema_hash = 0;
};

/// Per-target metadata produced by the repository generator (test-case counts).
class TargetCatalog {
 public:
  void set(std::string target, int num_tests);
  /// Throws UnknownTarget.
  int num_tests(std::string_view target) const;
  bool contains(std::string_view target) const;
  std::size_t size() const noexcept { return num_tests_.size(); }
  const std::map<std::string, int, std::less<>>& entries() const noexcept { return num_tests_; }

 private:
  std::map<std::string, int, std::less<>> num_tests_;
};

/// First path segment of a target identifier ("app/feed/tests:x" -> "app").
std::string project_of(std::string_view target);

/// Categorical codes for project names; code 0 is the unknown bucket.
class ProjectDictionary {
 public:
  ProjectDictionary() = default;
  explicit ProjectDictionary(std::vector<std::string> projects);

  int code(std::string_view project) const;
  std::span<const std::string> projects() const noexcept { return projects_; }
  Json to_json() const;
  static ProjectDictionary from_json(const Json& doc);

 private:
  std::vector<std::string> projects_;  // sorted; code = index + 1
};

std::vector<std::string> path_tokens(std::string_view path, std::string_view separators);
std::size_t common_token_count(std::span<const std::string> modified_files, std::string_view target,
                               const TokenConfig& config);

/// Extension bit index for a file path, or kExtensionWidth - 1 for overflow.
std::size_t extension_slot(std::string_view path);

/// Extracts feature vectors for (change, target) pairs. All history lookups
/// are strictly before the change timestamp.
class FeatureExtractor {
 public:
  FeatureExtractor(const GraphStore& graphs, const HistorySnapshot& history, const TargetCatalog& catalog,
                   ProjectDictionary projects, FeatureSchema schema);

  const FeatureSchema& schema() const noexcept { return schema_; }
  const ProjectDictionary& projects() const noexcept { return projects_; }

  ChangeSlots change_features(const Change& change) const;
  TargetSlots target_features(std::string_view target, std::int64_t as_of) const;
  CrossSlots cross_features(const Change& change, std::string_view target) const;
  FeatureVector assemble(const Change& change, std::string_view target) const;

  /// Feature rows for every dependent test of `change` (sorted by id), sharing
  /// one graph traversal.
  struct ChangeRows {
    std::vector<std::string> targets;
    std::vector<double> values;  // row-major, schema().size() columns
  };
  ChangeRows extract_change(const Change& change) const;

 private:
  ChangeSlots change_slots(const Change& change, std::size_t target_cardinality) const;
  void project_into(const ChangeSlots& c, const TargetSlots& t, const CrossSlots& x,
                    std::vector<double>& out) const;

  const GraphStore& graphs_;
  const HistorySnapshot& history_;
  const TargetCatalog& catalog_;
  ProjectDictionary projects_;
  FeatureSchema schema_;
};

Json catalog_entry_to_json(std::string_view target, int num_tests);

}  // namespace pts
