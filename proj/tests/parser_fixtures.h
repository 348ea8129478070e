#pragma once

// Hand-read expectations for the shipped exemplar answers and one chat
// session answer. Spans index the whitespace-split utterance.

#include <string>
#include <vector>

#include "pragtag/prompting.h"
#include "pragtag/scheme.h"
#include "pragtag/tagparse.h"

namespace pragtag::testing {

struct ParserCase {
  std::string name;
  std::string utterance;
  std::string response;
  tagparse::Verdict verdict;
  std::vector<scheme::TagSpan> spans;
};

inline constexpr const char* kSessionUtterance =
    "I'm so excited oh look at these thank you yeah sorry they 're a bit wet yeah I like camping that";

inline constexpr const char* kSessionAnswer =
    "Answer: The annotated version is: \"I'm so excited oh look at these thank you yeah "
    "<APOLOGISING>sorry</APOLOGISING> <REASON>they 're a bit wet</REASON> yeah I like camping that\"";

inline std::vector<ParserCase> parser_cases() {
  using tagparse::Verdict;
  const auto ex = prompting::default_prompt_spec().exemplars;
  auto at = [&](std::size_t rank) -> const prompting::Exemplar& { return ex.at(rank - 1); };
  std::vector<std::vector<scheme::TagSpan>> expected = {
      {{"APOLOGISER", 1, 2}, {"INTENSIFIER", 3, 4}, {"APOLOGISING", 4, 5}, {"REASON", 5, 8}},
      {{"APOLOGISING", 0, 1}, {"REASON", 1, 3}},
      {{"APOLOGISEE", 1, 3}, {"APOLOGISER", 3, 4}, {"APOLOGISING", 5, 6}, {"REASON", 6, 9}},
      {{"APOLOGISING", 0, 1}, {"APOLOGISING", 1, 2}, {"APOLOGISEE", 2, 4}, {"REASON", 4, 10}},
      {},
      {},
      {{"APOLOGISER", 0, 1}, {"APOLOGISING", 2, 3}, {"REASON", 3, 8}},
      {{"APOLOGISER", 13, 14}, {"INTENSIFIER", 15, 16}, {"APOLOGISING", 16, 17}, {"REASON", 17, 24}},
      {{"APOLOGISING", 1, 2}, {"APOLOGISEE", 2, 3}},
      {{"APOLOGISING", 1, 2}, {"APOLOGISEE", 2, 3}},
  };
  std::vector<ParserCase> out;
  for (std::size_t rank = 1; rank <= expected.size(); ++rank) {
    const bool no_act = rank == 5 || rank == 6;
    out.push_back({"exemplar " + std::to_string(rank), at(rank).utterance, at(rank).response,
                   no_act ? Verdict::kNoAct : Verdict::kAct, expected[rank - 1]});
  }
  out.push_back({"chat session answer", kSessionUtterance, kSessionAnswer, Verdict::kAct,
                 {{"APOLOGISING", 10, 11}, {"REASON", 11, 16}}});
  return out;
}

}  // namespace pragtag::testing
