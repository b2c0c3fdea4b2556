#include "pts/jsonl.hpp"

#include "pts/error.hpp"

#include <fstream>
#include <sstream>

namespace pts {

void read_jsonl(std::istream& in, const std::string& source,
                const std::function<void(const Json&, std::size_t)>& visit) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json value;
    try {
      value = Json::parse(line);
    } catch (const Json::exception& e) {
      throw Error(Errc::ParseError, source + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!value.is_object()) {
      throw Error(Errc::ParseError,
                  source + ":" + std::to_string(line_no) + ": expected a JSON object");
    }
    try {
      visit(value, line_no);
    } catch (const Error& e) {
      throw Error(e.code(), source + ":" + std::to_string(line_no) + ": " + e.detail());
    } catch (const Json::exception& e) {
      throw Error(Errc::ParseError, source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void read_jsonl_file(const std::filesystem::path& path,
                     const std::function<void(const Json&, std::size_t)>& visit) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  read_jsonl(in, path.string(), visit);
}

Json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw Error(Errc::ParseError, path.string() + ": " + e.what());
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "cannot write " + tmp.string());
    out << text;
    if (!out) throw Error(Errc::IoError, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string dump_pretty(const Json& value) { return value.dump(2) + "\n"; }

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t hash = seed;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string hex64(std::uint64_t value) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[value & 0xF];
    value >>= 4;
  }
  return out;
}

}  // namespace pts
