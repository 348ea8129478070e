#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "pragtag/jsonl.h"

namespace pragtag::corpus {

inline constexpr std::size_t kDefaultWidth = 20;
inline constexpr std::size_t kLeftContext = 9;

struct TokenStream {
  std::string source_id;
  std::vector<std::string> tokens;
};

struct SourceSpan {
  std::string source_id;
  std::size_t start = 0;
  std::size_t end = 0;

  bool operator==(const SourceSpan&) const = default;
};

/// A marker-centred excerpt of a token stream.
struct CorpusInstance {
  std::string id;  // source_id ":" start
  std::vector<std::string> tokens;
  std::vector<std::size_t> marker_positions;
  SourceSpan source_span;

  bool operator==(const CorpusInstance&) const = default;
};

enum class CorpusFormat { kPlain, kOneTokenPerLine };

/// Case-insensitive marker comparison. Surrounding punctuation on the token is
/// ignored so that un-tokenized text ("sorry,") still matches.
bool matches_marker(std::string_view token, std::string_view lexeme);

std::vector<std::string> split_whitespace(std::string_view text);

TokenStream load_corpus(const std::filesystem::path& path, CorpusFormat format = CorpusFormat::kPlain);

/// One instance per marker occurrence. The window holds up to kLeftContext
/// tokens before the node and fills rightward to `width`, clipped at the
/// stream edges and back-filled leftward. Windows with an identical source
/// span are emitted once.
std::vector<CorpusInstance> extract_instances(const TokenStream& stream, std::string_view marker,
                                              std::size_t width = kDefaultWidth);

/// Same as above but any of several lexemes counts as a marker.
std::vector<CorpusInstance> extract_instances(const TokenStream& stream,
                                              const std::vector<std::string>& markers,
                                              std::size_t width = kDefaultWidth);

/// Deterministic random sample of `count` instances, returned in source order.
std::vector<CorpusInstance> sample_instances(const std::vector<CorpusInstance>& instances,
                                             std::size_t count, unsigned long long seed);

Json to_json(const CorpusInstance& instance);
CorpusInstance instance_from_json(const Json& j);

std::string instances_to_jsonl(const std::vector<CorpusInstance>& instances);
std::vector<CorpusInstance> instances_from_jsonl(std::string_view text, std::string_view origin);

void write_instances(const std::vector<CorpusInstance>& instances, const std::filesystem::path& path);
std::vector<CorpusInstance> read_instances(const std::filesystem::path& path);

}  // namespace pragtag::corpus
