#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pragtag/corpus.h"
#include "pragtag/jsonl.h"

namespace pragtag::scheme {

struct TagDef {
  std::string name;  // upper-case ASCII letters and underscores
  std::string definition;
  bool open_class = false;
  bool is_ifid = false;

  bool operator==(const TagDef&) const = default;
};

struct AnnotationScheme {
  std::string act_name;
  std::vector<std::string> marker_lexemes;
  std::vector<TagDef> tags;
  std::string no_act_label;

  const TagDef* find(std::string_view tag_name) const;
  const TagDef& ifid() const;
  std::vector<std::string> tag_names() const;

  bool operator==(const AnnotationScheme&) const = default;
};

/// Half-open token range [start, end) carrying one tag.
struct TagSpan {
  std::string tag;
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start; }
  bool overlaps(const TagSpan& other) const { return start < other.end && other.start < end; }

  bool operator==(const TagSpan&) const = default;
  auto operator<=>(const TagSpan&) const = default;
};

enum class ProvenanceKind { kGold, kLlmRun, kHuman };

struct Provenance {
  ProvenanceKind kind = ProvenanceKind::kGold;
  std::string id;  // run id or reviewer id; empty for gold

  static Provenance gold() { return {}; }
  static Provenance llm_run(std::string run_id) { return {ProvenanceKind::kLlmRun, std::move(run_id)}; }
  static Provenance human(std::string reviewer) { return {ProvenanceKind::kHuman, std::move(reviewer)}; }

  std::string to_string() const;
  static Provenance parse(std::string_view text);

  bool operator==(const Provenance&) const = default;
};

struct Annotation {
  std::string instance_id;
  bool act_present = false;
  std::vector<TagSpan> spans;
  Provenance provenance;

  bool operator==(const Annotation&) const = default;
};

struct Violation {
  std::string code;  // short machine-readable key, e.g. "overlap"
  std::string message;

  bool operator==(const Violation&) const = default;
};

bool is_valid_tag_name(std::string_view name);

/// Checks the scheme's own invariants; returns human-readable problems.
std::vector<std::string> check_scheme(const AnnotationScheme& scheme);

AnnotationScheme default_apology_scheme();

/// Empty iff `ann` satisfies every annotation invariant against `instance`.
/// Throws a usage error when the ids disagree.
std::vector<Violation> validate_annotation(const Annotation& ann, const AnnotationScheme& scheme,
                                           const corpus::CorpusInstance& instance);

/// Variant for callers that only know the instance length and tokens.
std::vector<Violation> validate_annotation(const Annotation& ann, const AnnotationScheme& scheme,
                                           const std::vector<std::string>& tokens);

Json to_json(const AnnotationScheme& scheme);
AnnotationScheme scheme_from_json(const Json& j);
AnnotationScheme load_scheme(const std::filesystem::path& path);
void save_scheme(const AnnotationScheme& scheme, const std::filesystem::path& path);

/// Canonical serialized form; hashing this gives the scheme content hash.
std::string canonical_text(const AnnotationScheme& scheme);

Json to_json(const TagSpan& span);
TagSpan span_from_json(const Json& j);
Json to_json(const Annotation& ann);
Annotation annotation_from_json(const Json& j);

std::string annotations_to_jsonl(const std::vector<Annotation>& anns);
std::vector<Annotation> annotations_from_jsonl(std::string_view text, std::string_view origin);
void write_annotations(const std::vector<Annotation>& anns, const std::filesystem::path& path);
std::vector<Annotation> read_annotations(const std::filesystem::path& path);

}  // namespace pragtag::scheme
