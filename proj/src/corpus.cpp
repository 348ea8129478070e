#include "pragtag/corpus.h"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "pragtag/error.h"
#include "pragtag/text.h"

namespace pragtag::corpus {

bool matches_marker(std::string_view token, std::string_view lexeme) {
  const std::string_view core = text::strip_punct(token);
  if (core.empty()) return false;
  return text::to_lower_ascii(core) == text::to_lower_ascii(lexeme);
}

std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && text::is_ascii_space(s[i])) ++i;
    const std::size_t start = i;
    while (i < s.size() && !text::is_ascii_space(s[i])) ++i;
    if (i > start) out.emplace_back(s.substr(start, i - start));
  }
  return out;
}

TokenStream load_corpus(const std::filesystem::path& path, CorpusFormat format) {
  const std::string content = read_file(path);
  if (!text::is_valid_utf8(content)) throw_data(path.string() + ": not valid UTF-8");

  TokenStream stream;
  stream.source_id = path.stem().string();
  if (format == CorpusFormat::kPlain) {
    stream.tokens = split_whitespace(content);
    return stream;
  }
  // One token per line; blank lines are ignored, surrounding space trimmed.
  std::istringstream lines(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    auto parts = split_whitespace(line);
    if (parts.empty()) continue;
    if (parts.size() > 1) {
      throw_data(path.string() + ":" + std::to_string(line_no) + ": more than one token on the line");
    }
    stream.tokens.push_back(std::move(parts.front()));
  }
  return stream;
}

namespace {

bool is_marker(std::string_view token, const std::vector<std::string>& markers) {
  return std::any_of(markers.begin(), markers.end(),
                     [&](const std::string& m) { return matches_marker(token, m); });
}

}  // namespace

std::vector<CorpusInstance> extract_instances(const TokenStream& stream, std::string_view marker,
                                              std::size_t width) {
  return extract_instances(stream, std::vector<std::string>{std::string(marker)}, width);
}

std::vector<CorpusInstance> extract_instances(const TokenStream& stream,
                                              const std::vector<std::string>& markers,
                                              std::size_t width) {
  if (width == 0) throw_usage("window width must be at least 1");
  if (markers.empty()) throw_usage("at least one marker lexeme is required");

  const std::size_t n = stream.tokens.size();
  std::vector<bool> marked(n);
  for (std::size_t i = 0; i < n; ++i) marked[i] = is_marker(stream.tokens[i], markers);

  const std::size_t left = std::min(kLeftContext, width - 1);
  std::vector<CorpusInstance> out;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t node = 0; node < n; ++node) {
    if (!marked[node]) continue;
    std::size_t start = node >= left ? node - left : 0;
    const std::size_t end = std::min(n, start + width);
    start = end >= width ? end - width : 0;
    if (!seen.emplace(start, end).second) continue;

    CorpusInstance inst;
    inst.id = stream.source_id + ":" + std::to_string(start);
    inst.tokens.assign(stream.tokens.begin() + static_cast<std::ptrdiff_t>(start),
                       stream.tokens.begin() + static_cast<std::ptrdiff_t>(end));
    for (std::size_t i = start; i < end; ++i) {
      if (marked[i]) inst.marker_positions.push_back(i - start);
    }
    inst.source_span = {stream.source_id, start, end};
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<CorpusInstance> sample_instances(const std::vector<CorpusInstance>& instances,
                                             std::size_t count, unsigned long long seed) {
  if (count >= instances.size()) return instances;
  std::vector<std::size_t> order(instances.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Partial Fisher-Yates with plain modulo so the draw is identical across
  // standard library implementations.
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (order.size() - i));
    std::swap(order[i], order[j]);
  }
  order.resize(count);
  std::sort(order.begin(), order.end());
  std::vector<CorpusInstance> out;
  out.reserve(count);
  for (std::size_t idx : order) out.push_back(instances[idx]);
  return out;
}

Json to_json(const CorpusInstance& instance) {
  Json j;
  j["id"] = instance.id;
  j["tokens"] = instance.tokens;
  j["marker_positions"] = instance.marker_positions;
  Json span;
  span["source_id"] = instance.source_span.source_id;
  span["start"] = instance.source_span.start;
  span["end"] = instance.source_span.end;
  j["source_span"] = std::move(span);
  return j;
}

CorpusInstance instance_from_json(const Json& j) {
  CorpusInstance inst;
  inst.id = require_string(j, "id");
  if (inst.id.empty()) throw_data("empty instance id");

  const Json& tokens = require(j, "tokens");
  if (!tokens.is_array() || tokens.empty()) throw_data("'tokens' must be a non-empty array");
  for (const auto& t : tokens) {
    if (!t.is_string()) throw_data("tokens must be strings");
    auto s = t.get<std::string>();
    if (s.empty() || std::any_of(s.begin(), s.end(), text::is_ascii_space)) {
      throw_data("token '" + s + "' is empty or contains whitespace");
    }
    inst.tokens.push_back(std::move(s));
  }

  const Json& markers = require(j, "marker_positions");
  if (!markers.is_array() || markers.empty()) throw_data("'marker_positions' must be a non-empty array");
  for (const auto& m : markers) {
    if (!m.is_number_unsigned() && !(m.is_number_integer() && m.get<long long>() >= 0)) {
      throw_data("marker positions must be non-negative integers");
    }
    const auto pos = m.get<std::size_t>();
    if (pos >= inst.tokens.size()) throw_data("marker position out of range");
    if (!inst.marker_positions.empty() && pos <= inst.marker_positions.back()) {
      throw_data("marker positions must be strictly increasing");
    }
    inst.marker_positions.push_back(pos);
  }

  const Json& span = require(j, "source_span");
  inst.source_span.source_id = require_string(span, "source_id");
  const long long start = require_int(span, "start");
  const long long end = require_int(span, "end");
  if (start < 0 || end < start) throw_data("invalid source_span");
  inst.source_span.start = static_cast<std::size_t>(start);
  inst.source_span.end = static_cast<std::size_t>(end);
  return inst;
}

std::string instances_to_jsonl(const std::vector<CorpusInstance>& instances) {
  return to_jsonl<CorpusInstance>(instances, [](const CorpusInstance& i) { return to_json(i); });
}

std::vector<CorpusInstance> instances_from_jsonl(std::string_view text, std::string_view origin) {
  return parse_jsonl<CorpusInstance>(text, origin, instance_from_json);
}

void write_instances(const std::vector<CorpusInstance>& instances, const std::filesystem::path& path) {
  write_file(path, instances_to_jsonl(instances));
}

std::vector<CorpusInstance> read_instances(const std::filesystem::path& path) {
  return read_jsonl<CorpusInstance>(path, instance_from_json);
}

}  // namespace pragtag::corpus
