#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "pragtag/corpus.h"
#include "pragtag/jsonl.h"
#include "pragtag/scheme.h"

namespace pragtag::prompting {

inline constexpr std::string_view kUtterancePlaceholder = "{UTTERANCE}";

/// Characters per prompt part. Reproduces the two-part split of the shipped
/// apology prompt (four exemplars in the first part, six in the second).
inline constexpr std::size_t kDefaultPartBudget = 1750;

enum class Criterion { kRepresentativeness, kDiversity, kConciseness };

struct Exemplar {
  std::string utterance;
  std::string response;  // annotated version or a no-act sentence
  std::vector<Criterion> criteria;
  int rank = 0;
  bool ungrammatical = false;  // metadata flag consumed by the linter

  bool operator==(const Exemplar&) const = default;
};

struct PromptSpec {
  std::string preamble;
  std::string exemplars_intro;     // opens the exemplar list in the first part
  std::string continuation_intro;  // opens every later part
  std::string exemplar_question;   // contains {UTTERANCE}
  std::string answer_prefix;
  std::vector<Exemplar> exemplars;
  std::string question_template;   // contains exactly one {UTTERANCE}
  std::size_t part_budget = kDefaultPartBudget;
  std::vector<std::string> blocklist;

  bool operator==(const PromptSpec&) const = default;
};

/// The shipped apology prompt with its ten exemplars.
PromptSpec default_prompt_spec();

/// Problems that make a PromptSpec unusable (placeholder count, rank order, empty fields).
std::vector<std::string> check_spec(const PromptSpec& spec);

/// "NAME: definition" lines, one blank line apart, in scheme order.
std::string render_definitions(const scheme::AnnotationScheme& scheme);

/// Question/answer block for one exemplar.
std::string render_exemplar(const PromptSpec& spec, const Exemplar& exemplar);

/// Splits the prompt into parts of at most spec.part_budget characters,
/// breaking only between exemplars. Throws a data error when one exemplar
/// cannot fit in a part on its own.
std::vector<std::string> build_prompt(const scheme::AnnotationScheme& scheme, const PromptSpec& spec);

/// Number of exemplars placed in each part by build_prompt.
std::vector<std::size_t> part_layout(const scheme::AnnotationScheme& scheme, const PromptSpec& spec);

std::string render_question(const PromptSpec& spec, const std::vector<std::string>& tokens);
std::string render_question(const PromptSpec& spec, const corpus::CorpusInstance& instance);

enum class Severity { kInfo, kWarning, kError };

struct Finding {
  std::string code;  // "layout", "grammar", "terminology", ...
  int factor = 0;    // 1..8
  Severity severity = Severity::kWarning;
  std::string message;
  std::string location;
};

std::string_view to_string(Severity severity);
std::string factor_label(int factor);  // "i" .. "viii"

/// Heuristic checks for the eight prompt-quality factors.
std::vector<Finding> lint_prompt(const PromptSpec& spec, const scheme::AnnotationScheme& scheme);

Json to_json(const PromptSpec& spec);
PromptSpec spec_from_json(const Json& j);
PromptSpec load_spec(const std::filesystem::path& path);
void save_spec(const PromptSpec& spec, const std::filesystem::path& path);
std::string canonical_text(const PromptSpec& spec);

}  // namespace pragtag::prompting
