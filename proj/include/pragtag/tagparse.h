#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pragtag/corpus.h"
#include "pragtag/scheme.h"

namespace pragtag::tagparse {

inline constexpr double kDefaultMinCoverage = 0.9;

enum class Verdict { kAct, kNoAct, kUnparseable };

std::string_view to_string(Verdict verdict);

struct Payload {
  Verdict verdict = Verdict::kUnparseable;
  std::string tagged_text;  // empty unless kAct
};

/// Locates the answer inside a chatty response. A no-act sentence wins; then
/// the text after the last "annotated version" marker; then the longest line
/// holding a well-formed tag pair.
Payload extract_payload(std::string_view response_text, std::string_view act_name = "apology");

struct ParsedOutput {
  Verdict verdict = Verdict::kUnparseable;
  std::vector<std::string> output_tokens;
  std::vector<scheme::TagSpan> raw_spans;  // over output_tokens
  std::vector<std::string> diagnostics;
};

/// Converts inline <NAME> ... </NAME> mark-up into spans over the untagged,
/// whitespace-split text. Tags may abut words. Unknown, unbalanced or nested
/// tags make the result kUnparseable.
ParsedOutput parse_tags(std::string_view tagged_text, const scheme::AnnotationScheme& scheme);

/// Half-open range of source tokens an output token maps onto.
struct SourceRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  bool operator==(const SourceRange&) const = default;
};

struct AlignmentResult {
  std::vector<std::optional<SourceRange>> mapping;  // per output token; nullopt = gap
  double coverage = 0;                             // fraction of source tokens matched
};

/// Token-level normal form: typographic quotes folded, ASCII case-folded,
/// surrounding punctuation stripped (kept when the token is all punctuation).
std::string normalize_token(std::string_view token);

/// LCS over normalized tokens, then a character-level pass over unmatched
/// regions that pairs fused or split tokens ("I'm" <-> "I 'm").
AlignmentResult align(const std::vector<std::string>& output_tokens,
                      const std::vector<std::string>& instance_tokens);

struct Conversion {
  std::optional<scheme::Annotation> annotation;
  std::string failure;  // set when annotation is empty
  std::vector<std::string> diagnostics;
  double coverage = 0;

  bool ok() const { return annotation.has_value(); }
};

/// Projects raw spans through the alignment without validating the result.
/// Spans that map to nothing are dropped with a diagnostic.
Conversion project(const ParsedOutput& parsed, const AlignmentResult& alignment,
                   const corpus::CorpusInstance& instance, const scheme::Provenance& provenance);

/// project() plus the coverage gate, an overlap check and validate_annotation.
Conversion to_annotation(const ParsedOutput& parsed, const AlignmentResult& alignment,
                         const corpus::CorpusInstance& instance, const scheme::AnnotationScheme& scheme,
                         const scheme::Provenance& provenance,
                         double min_coverage = kDefaultMinCoverage);

/// Full chain: extract_payload, parse_tags, align, to_annotation.
struct ResponseOutcome {
  Verdict verdict = Verdict::kUnparseable;
  Conversion conversion;
};

ResponseOutcome interpret_response(std::string_view response_text, const corpus::CorpusInstance& instance,
                                   const scheme::AnnotationScheme& scheme,
                                   const scheme::Provenance& provenance,
                                   double min_coverage = kDefaultMinCoverage);

/// Tokens joined by single spaces with open and close tags as separate tokens.
std::string render_tagged(const scheme::Annotation& annotation, const std::vector<std::string>& tokens);

}  // namespace pragtag::tagparse
