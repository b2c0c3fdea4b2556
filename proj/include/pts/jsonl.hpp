#pragma once

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>

namespace pts {

using Json = nlohmann::json;

/// Calls `visit(object, line_number)` for every non-blank line of a JSON-lines
/// stream. Lines that are not JSON objects raise ParseError naming the line;
/// exceptions thrown by `visit` are rewrapped with the same context.
void read_jsonl(std::istream& in, const std::string& source,
                const std::function<void(const Json&, std::size_t)>& visit);

void read_jsonl_file(const std::filesystem::path& path,
                     const std::function<void(const Json&, std::size_t)>& visit);

Json read_json_file(const std::filesystem::path& path);

/// Writes `text` to `path` via a temporary file and rename, so readers never
/// observe a partially written artifact.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

std::string read_text_file(const std::filesystem::path& path);

/// Stable text form used for every JSON artifact (sorted keys, two-space indent).
std::string dump_pretty(const Json& value);

/// 64-bit FNV-1a; used for schema hashes and content digests.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

}  // namespace pts
