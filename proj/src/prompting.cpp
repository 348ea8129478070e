#include "pragtag/prompting.h"

#include <algorithm>
#include <set>

#include "pragtag/error.h"
#include "pragtag/text.h"

namespace pragtag::prompting {

namespace {

constexpr std::string_view kBlockSep = "\n\n";

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

std::string replace_placeholder(std::string_view tmpl, std::string_view value) {
  std::string out(tmpl);
  const auto pos = out.find(kUtterancePlaceholder);
  if (pos != std::string::npos) out.replace(pos, kUtterancePlaceholder.size(), value);
  return out;
}

std::string first_part_header(const scheme::AnnotationScheme& scheme, const PromptSpec& spec) {
  std::string header = spec.preamble;
  header += kBlockSep;
  header += render_definitions(scheme);
  header += kBlockSep;
  header += spec.exemplars_intro;
  return header;
}

std::vector<const Exemplar*> ranked(const PromptSpec& spec) {
  std::vector<const Exemplar*> out;
  for (const auto& e : spec.exemplars) out.push_back(&e);
  std::stable_sort(out.begin(), out.end(), [](const Exemplar* a, const Exemplar* b) { return a->rank < b->rank; });
  return out;
}

struct Layout {
  std::vector<std::string> parts;
  std::vector<std::vector<const Exemplar*>> members;
};

Layout layout_parts(const scheme::AnnotationScheme& scheme, const PromptSpec& spec) {
  if (auto problems = check_spec(spec); !problems.empty()) {
    throw_data("invalid prompt spec: " + text::join(problems, "; "));
  }
  Layout layout;
  std::string current = first_part_header(scheme, spec);
  if (current.size() > spec.part_budget) {
    throw_data("prompt header (" + std::to_string(current.size()) + " chars) exceeds part budget " +
               std::to_string(spec.part_budget));
  }
  std::vector<const Exemplar*> members;
  for (const Exemplar* e : ranked(spec)) {
    const std::string block = render_exemplar(spec, *e);
    if (current.size() + kBlockSep.size() + block.size() <= spec.part_budget) {
      current += kBlockSep;
      current += block;
      members.push_back(e);
      continue;
    }
    std::string fresh = spec.continuation_intro;
    fresh += kBlockSep;
    fresh += block;
    if (fresh.size() > spec.part_budget) {
      throw_data("exemplar of rank " + std::to_string(e->rank) + " (" + std::to_string(fresh.size()) +
                 " chars with continuation line) exceeds part budget " + std::to_string(spec.part_budget));
    }
    layout.parts.push_back(std::move(current));
    layout.members.push_back(std::move(members));
    current = std::move(fresh);
    members = {e};
  }
  layout.parts.push_back(std::move(current));
  layout.members.push_back(std::move(members));
  return layout;
}

bool mentions_tag(const Exemplar& e, std::string_view tag) {
  return e.response.find("<" + std::string(tag) + ">") != std::string::npos;
}

std::vector<std::string> words_lower(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) {
      cur += static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c);
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// Strips one derivational suffix from a lower-cased tag name.
std::string tag_stem(const std::string& lower) {
  static const std::vector<std::string> kSuffixes = {"ication", "ation", "ising", "izing", "iser", "izer",
                                                     "isee",    "izee",  "ing",   "ier",   "er",   "ee"};
  for (const auto& suffix : kSuffixes) {
    if (lower.size() >= suffix.size() + 4 && lower.ends_with(suffix)) {
      return lower.substr(0, lower.size() - suffix.size());
    }
  }
  return lower;
}

bool stem_in_definition(const scheme::TagDef& tag) {
  const std::string stem = tag_stem(text::to_lower_ascii(tag.name));
  const std::size_t needed = std::min<std::size_t>(stem.size(), 6);
  for (const auto& w : words_lower(tag.definition)) {
    std::size_t common = 0;
    while (common < w.size() && common < stem.size() && w[common] == stem[common]) ++common;
    if (common >= needed) return true;
  }
  return false;
}

}  // namespace

PromptSpec default_prompt_spec() {
  using enum Criterion;
  PromptSpec s;
  s.preamble =
      "Please learn the following contents.\n\n"
      "The speech act of apology may contain the following functional elements:";
  s.exemplars_intro = "Here are some examples:";
  s.continuation_intro = "Here are some other examples:";
  s.exemplar_question = "Question: Can you annotate the speech act of apology in the utterance \"{UTTERANCE}\"?";
  s.answer_prefix = "Answer: ";
  s.question_template =
      "Can you detect the speech act of apology and annotate any functional elements such as "
      "APOLOGISING, REASON, APOLOGISER, APOLOGISEE, or INTENSIFIER in the following utterance? "
      "Please exclude any irrelevant texts.\n\n{UTTERANCE}";
  s.part_budget = kDefaultPartBudget;

  int rank = 0;
  auto add = [&](std::string utterance, std::string response, std::vector<Criterion> criteria) {
    s.exemplars.push_back({std::move(utterance), std::move(response), std::move(criteria), ++rank, false});
  };
  add("Ah, I 'm really sorry for all that.",
      "The annotated version is: Ah, <APOLOGISER> I </APOLOGISER> 'm <INTENSIFIER> really </INTENSIFIER> "
      "<APOLOGISING> sorry </APOLOGISING> <REASON> for all that </REASON>.",
      {kRepresentativeness, kConciseness});
  add("Sorry about that, but I 've got to go to work.",
      "The annotated version is: <APOLOGISING> Sorry </APOLOGISING> <REASON> about that </REASON>, but I 've "
      "got to go to work.",
      {kRepresentativeness, kConciseness});
  add("Hello Mr [gap:name], I 'm sorry to bother you, my name is Kathy and I represent",
      "The annotated version is: Hello <APOLOGISEE> Mr [gap:name] </APOLOGISEE>, <APOLOGISER> I </APOLOGISER> "
      "'m <APOLOGISING> sorry </APOLOGISING> <REASON> to bother you </REASON>, my name is Kathy and I "
      "represent",
      {kRepresentativeness, kDiversity});
  add("Sorry sorry Mr [gap:name], I moved too quickly for you.",
      "The annotated version is: <APOLOGISING> Sorry </APOLOGISING> <APOLOGISING> sorry </APOLOGISING> "
      "<APOLOGISEE> Mr [gap:name] </APOLOGISEE>, <REASON> I moved too quickly for you </REASON>",
      {kDiversity});
  add("I'm sorry to hear that",
      "No speech act of apology is present in the utterance \"I'm sorry to hear that\".",
      {kRepresentativeness, kDiversity, kConciseness});
  add("I felt sorry for your loss",
      "No speech act of apology is present in the utterance \"I felt sorry for your loss\".",
      {kDiversity, kConciseness});
  add("I 'm sorry that I 've lost it",
      "The annotated version is: <APOLOGISER> I </APOLOGISER> 'm <APOLOGISING> sorry </APOLOGISING> "
      "<REASON> that I 've lost it </REASON>.",
      {kRepresentativeness, kConciseness});
  add("Er, I think there is a tendending now, for them to say, oh, I 'm terribly sorry, we can only do this "
      "against payment.",
      "The annotated version is: Er, I think there is a tendending now, for them to say, oh, <APOLOGISER> I "
      "</APOLOGISER> 'm <INTENSIFIER> terribly </INTENSIFIER> <APOLOGISING> sorry </APOLOGISING>, <REASON> we "
      "can only do this against payment </REASON>.",
      {kDiversity});
  add("Oh sorry darling I 'm not running off with you.",
      "The annotated version is: Oh <APOLOGISING> sorry </APOLOGISING> <APOLOGISEE> darling </APOLOGISEE> I 'm "
      "not running off with you.",
      {kDiversity, kConciseness});
  add("oh sorry mum there you go okay",
      "The annotated version is: oh <APOLOGISING> sorry </APOLOGISING> <APOLOGISEE> mum </APOLOGISEE> there you "
      "go okay",
      {kRepresentativeness, kConciseness});
  return s;
}

std::vector<std::string> check_spec(const PromptSpec& spec) {
  std::vector<std::string> problems;
  if (count_occurrences(spec.question_template, kUtterancePlaceholder) != 1) {
    problems.emplace_back("question_template must contain exactly one {UTTERANCE}");
  }
  if (count_occurrences(spec.exemplar_question, kUtterancePlaceholder) != 1) {
    problems.emplace_back("exemplar_question must contain exactly one {UTTERANCE}");
  }
  if (spec.part_budget == 0) problems.emplace_back("part_budget must be positive");
  for (std::size_t i = 0; i < spec.exemplars.size(); ++i) {
    const auto& e = spec.exemplars[i];
    if (e.utterance.empty()) problems.push_back("exemplar " + std::to_string(i + 1) + " has an empty utterance");
    if (e.response.empty()) problems.push_back("exemplar " + std::to_string(i + 1) + " has an empty response");
    if (i > 0 && e.rank <= spec.exemplars[i - 1].rank) {
      problems.push_back("exemplar ranks must be strictly increasing (exemplar " + std::to_string(i + 1) + ")");
    }
  }
  return problems;
}

std::string render_definitions(const scheme::AnnotationScheme& scheme) {
  std::vector<std::string> lines;
  for (const auto& t : scheme.tags) lines.push_back(t.name + ": " + t.definition);
  return text::join(lines, kBlockSep);
}

std::string render_exemplar(const PromptSpec& spec, const Exemplar& exemplar) {
  std::string out = replace_placeholder(spec.exemplar_question, exemplar.utterance);
  out += kBlockSep;
  out += spec.answer_prefix;
  out += exemplar.response;
  return out;
}

std::vector<std::string> build_prompt(const scheme::AnnotationScheme& scheme, const PromptSpec& spec) {
  return layout_parts(scheme, spec).parts;
}

std::vector<std::size_t> part_layout(const scheme::AnnotationScheme& scheme, const PromptSpec& spec) {
  std::vector<std::size_t> sizes;
  for (const auto& m : layout_parts(scheme, spec).members) sizes.push_back(m.size());
  return sizes;
}

std::string render_question(const PromptSpec& spec, const std::vector<std::string>& tokens) {
  return replace_placeholder(spec.question_template, "\"" + text::join(tokens, " ") + "\"");
}

std::string render_question(const PromptSpec& spec, const corpus::CorpusInstance& instance) {
  return render_question(spec, instance.tokens);
}

std::string_view to_string(Severity severity) {
  switch (severity) {
    case Severity::kInfo: return "info";
    case Severity::kWarning: return "warning";
    case Severity::kError: return "error";
  }
  return "info";
}

std::string factor_label(int factor) {
  static const char* kLabels[] = {"i", "ii", "iii", "iv", "v", "vi", "vii", "viii"};
  return factor >= 1 && factor <= 8 ? kLabels[factor - 1] : "?";
}

std::vector<Finding> lint_prompt(const PromptSpec& spec, const scheme::AnnotationScheme& scheme) {
  std::vector<Finding> out;
  auto emit = [&](std::string code, int factor, Severity sev, std::string msg, std::string where) {
    out.push_back({std::move(code), factor, sev, std::move(msg), std::move(where)});
  };

  // (i) formal layout
  if (spec.exemplar_question.find("Question:") == std::string::npos ||
      spec.answer_prefix.find("Answer:") == std::string::npos) {
    emit("layout", 1, Severity::kWarning, "exemplars are not laid out as Question/Answer pairs",
         "exemplar_question");
  }

  // (ii) grammatical correctness
  for (const auto& e : spec.exemplars) {
    if (e.ungrammatical) {
      emit("grammar", 2, Severity::kWarning, "exemplar is flagged as ungrammatical: \"" + e.utterance + "\"",
           "exemplar rank " + std::to_string(e.rank));
    }
  }

  // (iii) terminological precision
  if (!text::contains_ci(spec.question_template, "speech act")) {
    emit("terminology", 3, Severity::kWarning, "question does not name the task as a speech act",
         "question_template");
  }

  // (iv) explicitness
  std::vector<std::string> missing;
  for (const auto& t : scheme.tags) {
    if (spec.question_template.find(t.name) == std::string::npos) missing.push_back(t.name);
  }
  if (!missing.empty()) {
    emit("explicitness", 4, Severity::kWarning, "question does not enumerate tags: " + text::join(missing, ", "),
         "question_template");
  }

  // (v) textual conciseness
  const std::string header = first_part_header(scheme, spec);
  if (header.size() > spec.part_budget) {
    emit("length", 5, Severity::kError,
         "first part header is " + std::to_string(header.size()) + " chars, budget " +
             std::to_string(spec.part_budget),
         "part 1");
  }
  bool oversized = false;
  for (const auto& e : spec.exemplars) {
    const std::size_t len = spec.continuation_intro.size() + kBlockSep.size() + render_exemplar(spec, e).size();
    if (len > spec.part_budget) {
      oversized = true;
      emit("length", 5, Severity::kError,
           "exemplar needs " + std::to_string(len) + " chars, budget " + std::to_string(spec.part_budget),
           "exemplar rank " + std::to_string(e.rank));
    }
  }

  // (vi) textual order: open-class tags taught later than the first part
  if (!oversized && header.size() <= spec.part_budget && check_spec(spec).empty()) {
    const Layout layout = layout_parts(scheme, spec);
    if (layout.parts.size() > 1) {
      for (const auto& t : scheme.tags) {
        if (!t.open_class) continue;
        const auto& first = layout.members.front();
        const bool in_first = std::any_of(first.begin(), first.end(),
                                          [&](const Exemplar* e) { return mentions_tag(*e, t.name); });
        const bool anywhere = std::any_of(spec.exemplars.begin(), spec.exemplars.end(),
                                          [&](const Exemplar& e) { return mentions_tag(e, t.name); });
        if (anywhere && !in_first) {
          emit("ordering", 6, Severity::kWarning,
               "no exemplar of open-class tag " + t.name + " appears in the first part", "part 1");
        }
      }
    }
  }

  // (vii) label clarity
  for (const auto& t : scheme.tags) {
    if (t.name.size() > 14) {
      emit("opacity", 7, Severity::kWarning,
           "tag " + t.name + " is longer than 14 characters", "tag " + t.name);
    } else if (!stem_in_definition(t)) {
      emit("opacity", 7, Severity::kWarning,
           "tag " + t.name + " does not share a stem with its definition", "tag " + t.name);
    }
  }

  // (viii) inappropriate language
  if (!spec.blocklist.empty()) {
    std::set<std::string> blocked;
    for (const auto& w : spec.blocklist) blocked.insert(text::to_lower_ascii(w));
    for (const auto& e : spec.exemplars) {
      for (const auto& w : words_lower(e.utterance + " " + e.response)) {
        if (blocked.count(w)) {
          emit("blocklist", 8, Severity::kWarning, "exemplar contains blocklisted word '" + w + "'",
               "exemplar rank " + std::to_string(e.rank));
          break;
        }
      }
    }
  }
  return out;
}

namespace {

std::string_view to_string(Criterion c) {
  switch (c) {
    case Criterion::kRepresentativeness: return "representativeness";
    case Criterion::kDiversity: return "diversity";
    case Criterion::kConciseness: return "conciseness";
  }
  return "";
}

Criterion criterion_from_string(std::string_view s) {
  if (s == "representativeness") return Criterion::kRepresentativeness;
  if (s == "diversity") return Criterion::kDiversity;
  if (s == "conciseness") return Criterion::kConciseness;
  throw_data("unknown exemplar criterion '" + std::string(s) + "'");
}

}  // namespace

Json to_json(const PromptSpec& spec) {
  Json j;
  j["preamble"] = spec.preamble;
  j["exemplars_intro"] = spec.exemplars_intro;
  j["continuation_intro"] = spec.continuation_intro;
  j["exemplar_question"] = spec.exemplar_question;
  j["answer_prefix"] = spec.answer_prefix;
  Json ex = Json::array();
  for (const auto& e : spec.exemplars) {
    Json ej;
    ej["rank"] = e.rank;
    ej["utterance"] = e.utterance;
    ej["response"] = e.response;
    Json crit = Json::array();
    for (auto c : e.criteria) crit.push_back(std::string(to_string(c)));
    ej["criteria"] = std::move(crit);
    ej["ungrammatical"] = e.ungrammatical;
    ex.push_back(std::move(ej));
  }
  j["exemplars"] = std::move(ex);
  j["question_template"] = spec.question_template;
  j["part_budget"] = spec.part_budget;
  j["blocklist"] = spec.blocklist;
  return j;
}

PromptSpec spec_from_json(const Json& j) {
  PromptSpec s;
  s.preamble = require_string(j, "preamble");
  s.exemplars_intro = require_string(j, "exemplars_intro");
  s.continuation_intro = require_string(j, "continuation_intro");
  s.exemplar_question = require_string(j, "exemplar_question");
  s.answer_prefix = require_string(j, "answer_prefix");
  const Json& ex = require(j, "exemplars");
  if (!ex.is_array()) throw_data("'exemplars' must be an array");
  for (const auto& ej : ex) {
    Exemplar e;
    e.rank = static_cast<int>(require_int(ej, "rank"));
    e.utterance = require_string(ej, "utterance");
    e.response = require_string(ej, "response");
    if (ej.contains("criteria")) {
      for (const auto& c : ej.at("criteria")) e.criteria.push_back(criterion_from_string(c.get<std::string>()));
    }
    e.ungrammatical = ej.value("ungrammatical", false);
    s.exemplars.push_back(std::move(e));
  }
  s.question_template = require_string(j, "question_template");
  const long long budget = require_int(j, "part_budget");
  if (budget <= 0) throw_data("part_budget must be positive");
  s.part_budget = static_cast<std::size_t>(budget);
  if (j.contains("blocklist")) {
    for (const auto& w : j.at("blocklist")) s.blocklist.push_back(w.get<std::string>());
  }
  if (auto problems = check_spec(s); !problems.empty()) {
    throw_data("invalid prompt spec: " + text::join(problems, "; "));
  }
  return s;
}

std::string canonical_text(const PromptSpec& spec) { return to_json(spec).dump(2) + "\n"; }

PromptSpec load_spec(const std::filesystem::path& path) {
  const std::string content = read_file(path);
  try {
    return spec_from_json(Json::parse(content));
  } catch (const Json::exception& e) {
    throw_data(path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

void save_spec(const PromptSpec& spec, const std::filesystem::path& path) {
  write_file(path, canonical_text(spec));
}

}  // namespace pragtag::prompting
