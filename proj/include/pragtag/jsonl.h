#pragma once

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace pragtag {

using Json = nlohmann::ordered_json;

/// Reads a whole file into memory. Throws ErrorKind::kIo when unreadable.
std::string read_file(const std::filesystem::path& path);

/// Writes `content` to `path`, replacing any existing file.
void write_file(const std::filesystem::path& path, std::string_view content);

/// Appends one line (a newline is added) and flushes.
void append_line(const std::filesystem::path& path, std::string_view line);

/// Parses a line-delimited JSON file. Blank lines are skipped. A line that is
/// not valid JSON, or that `decode` rejects, raises a data error naming the
/// file and 1-based line number.
template <typename T>
std::vector<T> read_jsonl(const std::filesystem::path& path,
                          const std::function<T(const Json&)>& decode);

/// Same as read_jsonl but over in-memory text; `origin` names the source in errors.
template <typename T>
std::vector<T> parse_jsonl(std::string_view text, std::string_view origin,
                           const std::function<T(const Json&)>& decode);

/// Serializes one record per line, compact form.
template <typename T>
std::string to_jsonl(const std::vector<T>& items, const std::function<Json(const T&)>& encode) {
  std::string out;
  for (const auto& item : items) {
    out += encode(item).dump();
    out += '\n';
  }
  return out;
}

namespace detail {
[[noreturn]] void throw_line_error(std::string_view origin, std::size_t line, const std::string& what);
}  // namespace detail

template <typename T>
std::vector<T> parse_jsonl(std::string_view text, std::string_view origin,
                           const std::function<T(const Json&)>& decode) {
  std::vector<T> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto end = nl == std::string_view::npos ? text.size() : nl;
    const std::string_view line = text.substr(pos, end - pos);
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) {
      try {
        out.push_back(decode(Json::parse(line)));
      } catch (const std::exception& e) {
        detail::throw_line_error(origin, line_no, e.what());
      }
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return out;
}

template <typename T>
std::vector<T> read_jsonl(const std::filesystem::path& path,
                          const std::function<T(const Json&)>& decode) {
  const std::string text = read_file(path);
  return parse_jsonl<T>(text, path.string(), decode);
}

/// Field accessors that raise a descriptive error when a key is missing or
/// has the wrong type.
const Json& require(const Json& j, const char* key);
std::string require_string(const Json& j, const char* key);
bool require_bool(const Json& j, const char* key);
long long require_int(const Json& j, const char* key);

}  // namespace pragtag
