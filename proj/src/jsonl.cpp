#include "pragtag/jsonl.h"

#include <fstream>
#include <sstream>

#include "pragtag/error.h"

namespace pragtag {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_io("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw_io("error while reading " + path.string());
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_io("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw_io("error while writing " + path.string());
}

void append_line(const std::filesystem::path& path, std::string_view line) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw_io("cannot append to " + path.string());
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  out.put('\n');
  out.flush();
  if (!out) throw_io("error while appending to " + path.string());
}

namespace detail {
void throw_line_error(std::string_view origin, std::size_t line, const std::string& what) {
  throw_data(std::string(origin) + ":" + std::to_string(line) + ": " + what);
}
}  // namespace detail

const Json& require(const Json& j, const char* key) {
  if (!j.is_object()) throw_data("expected an object");
  const auto it = j.find(key);
  if (it == j.end()) throw_data(std::string("missing field '") + key + "'");
  return *it;
}

std::string require_string(const Json& j, const char* key) {
  const Json& v = require(j, key);
  if (!v.is_string()) throw_data(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

bool require_bool(const Json& j, const char* key) {
  const Json& v = require(j, key);
  if (!v.is_boolean()) throw_data(std::string("field '") + key + "' must be a boolean");
  return v.get<bool>();
}

long long require_int(const Json& j, const char* key) {
  const Json& v = require(j, key);
  if (!v.is_number_integer()) throw_data(std::string("field '") + key + "' must be an integer");
  return v.get<long long>();
}

}  // namespace pragtag
