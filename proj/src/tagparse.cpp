#include "pragtag/tagparse.h"

#include <algorithm>
#include <regex>

#include "pragtag/error.h"
#include "pragtag/text.h"

namespace pragtag::tagparse {

std::string_view to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::kAct: return "ACT";
    case Verdict::kNoAct: return "NO_ACT";
    case Verdict::kUnparseable: return "UNPARSEABLE";
  }
  return "UNPARSEABLE";
}

namespace {

std::string trim(std::string_view s) {
  while (!s.empty() && text::is_ascii_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && text::is_ascii_space(s.back())) s.remove_suffix(1);
  return std::string(s);
}

std::string strip_quotes(std::string s) {
  s = trim(s);
  const std::string folded = text::fold_typography(s);
  if (folded.size() >= 2 && folded.front() == '"' && folded.back() == '"') {
    // Drop the outer quote characters in the original encoding.
    const std::size_t lead = s.starts_with("\xE2\x80\x9C") ? 3 : 1;
    const std::size_t tail = s.ends_with("\xE2\x80\x9D") ? 3 : 1;
    if (s.size() >= lead + tail) s = trim(std::string_view(s).substr(lead, s.size() - lead - tail));
  }
  return s;
}

std::vector<std::string> split_lines(std::string_view s) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto nl = s.find('\n', pos);
    const auto end = nl == std::string_view::npos ? s.size() : nl;
    std::string line(s.substr(pos, end - pos));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return lines;
}

const std::regex& tag_pair_regex() {
  static const std::regex re(R"(<\s*([A-Za-z_]+)\s*>[^\n]*?<\s*/\s*\1\s*>)");
  return re;
}

const std::regex& tag_regex() {
  static const std::regex re(R"(<\s*(/?)\s*([A-Za-z_]+)\s*>)");
  return re;
}

// Character key for the second alignment pass: alphanumerics only.
std::string char_key(std::string_view token) {
  std::string out;
  for (char c : text::to_lower_ascii(text::fold_typography(token))) {
    const auto u = static_cast<unsigned char>(c);
    if (u >= 0x80 || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) out += c;
  }
  return out;
}

}  // namespace

Payload extract_payload(std::string_view response_text, std::string_view act_name) {
  const std::string text = text::fold_typography(response_text);

  const std::regex no_act(R"(no\s+speech\s+act\s+of\s+)" + std::string(act_name) + R"(\s+is\s+present)",
                          std::regex::icase);
  if (std::regex_search(text, no_act)) return {Verdict::kNoAct, {}};

  const std::regex marker(R"((?:the\s+)?annotated\s+version(?:\s+is)?\s*:)", std::regex::icase);
  std::size_t after = std::string::npos;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), marker); it != std::sregex_iterator(); ++it) {
    after = static_cast<std::size_t>(it->position() + it->length());
  }
  if (after != std::string::npos) {
    const auto lines = split_lines(std::string_view(text).substr(after));
    for (const auto& line : lines) {
      std::string payload = strip_quotes(line);
      if (!payload.empty()) return {Verdict::kAct, std::move(payload)};
    }
    return {Verdict::kUnparseable, {}};
  }

  std::string best;
  for (const auto& line : split_lines(text)) {
    if (std::regex_search(line, tag_pair_regex())) {
      std::string candidate = strip_quotes(line);
      if (candidate.size() > best.size()) best = std::move(candidate);
    }
  }
  if (!best.empty()) return {Verdict::kAct, std::move(best)};
  return {Verdict::kUnparseable, {}};
}

ParsedOutput parse_tags(std::string_view tagged_text, const scheme::AnnotationScheme& scheme) {
  ParsedOutput out;
  const std::string text = text::fold_typography(tagged_text);

  auto fail = [&](std::string diagnostic) {
    out.verdict = Verdict::kUnparseable;
    out.raw_spans.clear();
    out.diagnostics.push_back(std::move(diagnostic));
    return out;
  };

  std::optional<scheme::TagSpan> open;
  auto add_words = [&](std::string_view chunk) {
    for (auto& w : corpus::split_whitespace(chunk)) out.output_tokens.push_back(std::move(w));
  };

  std::size_t cursor = 0;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), tag_regex()); it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    add_words(std::string_view(text).substr(cursor, static_cast<std::size_t>(m.position()) - cursor));
    cursor = static_cast<std::size_t>(m.position() + m.length());

    const bool closing = m[1].length() > 0;
    const std::string name = m[2].str();
    if (!scheme.find(name)) return fail("unknown tag <" + std::string(closing ? "/" : "") + name + ">");

    if (!closing) {
      if (open) return fail("nested tag <" + name + "> inside <" + open->tag + ">");
      open = scheme::TagSpan{name, out.output_tokens.size(), out.output_tokens.size()};
      continue;
    }
    if (!open) return fail("closing </" + name + "> without an open tag");
    if (open->tag != name) return fail("mismatched </" + name + "> closing <" + open->tag + ">");
    open->end = out.output_tokens.size();
    if (open->end == open->start) {
      out.diagnostics.push_back("empty <" + name + "> span dropped");
    } else {
      out.raw_spans.push_back(*open);
    }
    open.reset();
  }
  add_words(std::string_view(text).substr(cursor));
  if (open) return fail("unclosed <" + open->tag + ">");
  if (out.raw_spans.empty()) return fail("no tagged spans");
  out.verdict = Verdict::kAct;
  return out;
}

std::string normalize_token(std::string_view token) {
  const std::string lowered = text::to_lower_ascii(text::fold_typography(token));
  const std::string_view core = text::strip_punct(lowered);
  return core.empty() ? lowered : std::string(core);
}

namespace {

// Second pass over one unmatched region. Maximizes the number of source
// tokens covered using 1:k fusions and k:1 splits on character keys.
void align_region(const std::vector<std::string>& out_keys, const std::vector<std::string>& src_keys,
                  std::size_t ob, std::size_t oe, std::size_t sb, std::size_t se,
                  std::vector<std::optional<SourceRange>>& mapping) {
  constexpr std::size_t kMaxRun = 4;
  const std::size_t no = oe - ob;
  const std::size_t ns = se - sb;
  if (no == 0 || ns == 0) return;

  enum class Move { kNone, kSkipOut, kSkipSrc, kFuse, kSplit };
  struct Cell {
    std::size_t score = 0;
    Move move = Move::kNone;
    std::size_t run = 0;
  };
  std::vector<std::vector<Cell>> best(no + 1, std::vector<Cell>(ns + 1));

  auto concat = [](const std::vector<std::string>& keys, std::size_t from, std::size_t count) {
    std::string s;
    for (std::size_t k = 0; k < count; ++k) s += keys[from + k];
    return s;
  };
  auto edges_ok = [](const std::vector<std::string>& keys, std::size_t from, std::size_t count) {
    return !keys[from].empty() && !keys[from + count - 1].empty();
  };

  for (std::size_t i = no + 1; i-- > 0;) {
    for (std::size_t j = ns + 1; j-- > 0;) {
      Cell cell;
      if (i < no) cell = {best[i + 1][j].score, Move::kSkipOut, 0};
      if (j < ns && best[i][j + 1].score > cell.score) cell = {best[i][j + 1].score, Move::kSkipSrc, 0};
      if (i < no && j < ns) {
        const std::string& ok = out_keys[ob + i];
        for (std::size_t k = 1; k <= kMaxRun && j + k <= ns; ++k) {
          if (ok.empty() || !edges_ok(src_keys, sb + j, k)) continue;
          if (concat(src_keys, sb + j, k) != ok) continue;
          const std::size_t score = best[i + 1][j + k].score + k;
          if (score > cell.score) cell = {score, Move::kFuse, k};
        }
        const std::string& sk = src_keys[sb + j];
        for (std::size_t k = 2; k <= kMaxRun && i + k <= no; ++k) {
          if (sk.empty() || !edges_ok(out_keys, ob + i, k)) continue;
          if (concat(out_keys, ob + i, k) != sk) continue;
          const std::size_t score = best[i + k][j + 1].score + 1;
          if (score > cell.score) cell = {score, Move::kSplit, k};
        }
      }
      best[i][j] = cell;
    }
  }

  std::size_t i = 0, j = 0;
  while (i < no || j < ns) {
    const Cell& c = best[i][j];
    switch (c.move) {
      case Move::kSkipOut: ++i; break;
      case Move::kSkipSrc: ++j; break;
      case Move::kFuse:
        mapping[ob + i] = SourceRange{sb + j, sb + j + c.run};
        ++i;
        j += c.run;
        break;
      case Move::kSplit:
        for (std::size_t k = 0; k < c.run; ++k) mapping[ob + i + k] = SourceRange{sb + j, sb + j + 1};
        i += c.run;
        ++j;
        break;
      case Move::kNone: return;
    }
  }
}

}  // namespace

AlignmentResult align(const std::vector<std::string>& output_tokens,
                      const std::vector<std::string>& instance_tokens) {
  AlignmentResult result;
  const std::size_t n = output_tokens.size();
  const std::size_t m = instance_tokens.size();
  result.mapping.assign(n, std::nullopt);
  if (n == 0 || m == 0) return result;

  std::vector<std::string> out_norm, src_norm;
  for (const auto& t : output_tokens) out_norm.push_back(normalize_token(t));
  for (const auto& t : instance_tokens) src_norm.push_back(normalize_token(t));

  // Suffix LCS table.
  std::vector<std::vector<std::size_t>> lcs(n + 1, std::vector<std::size_t>(m + 1, 0));
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = m; j-- > 0;) {
      lcs[i][j] = out_norm[i] == src_norm[j] ? lcs[i + 1][j + 1] + 1 : std::max(lcs[i + 1][j], lcs[i][j + 1]);
    }
  }
  std::vector<std::pair<std::size_t, std::size_t>> anchors;
  for (std::size_t i = 0, j = 0; i < n && j < m;) {
    if (out_norm[i] == src_norm[j]) {
      anchors.emplace_back(i, j);
      result.mapping[i] = SourceRange{j, j + 1};
      ++i;
      ++j;
    } else if (lcs[i + 1][j] >= lcs[i][j + 1]) {
      ++i;
    } else {
      ++j;
    }
  }

  std::vector<std::string> out_keys, src_keys;
  for (const auto& t : output_tokens) out_keys.push_back(char_key(t));
  for (const auto& t : instance_tokens) src_keys.push_back(char_key(t));

  std::size_t prev_o = 0, prev_s = 0;
  for (const auto& [ai, aj] : anchors) {
    align_region(out_keys, src_keys, prev_o, ai, prev_s, aj, result.mapping);
    prev_o = ai + 1;
    prev_s = aj + 1;
  }
  align_region(out_keys, src_keys, prev_o, n, prev_s, m, result.mapping);

  std::vector<bool> covered(m, false);
  for (const auto& r : result.mapping) {
    if (!r) continue;
    for (std::size_t k = r->begin; k < r->end; ++k) covered[k] = true;
  }
  result.coverage = static_cast<double>(std::count(covered.begin(), covered.end(), true)) / static_cast<double>(m);
  return result;
}

Conversion project(const ParsedOutput& parsed, const AlignmentResult& alignment,
                   const corpus::CorpusInstance& instance, const scheme::Provenance& provenance) {
  Conversion conv;
  conv.coverage = alignment.coverage;
  scheme::Annotation ann;
  ann.instance_id = instance.id;
  ann.provenance = provenance;
  ann.act_present = parsed.verdict == Verdict::kAct;
  if (parsed.verdict == Verdict::kNoAct) conv.coverage = 1.0;

  for (const auto& span : parsed.raw_spans) {
    std::optional<std::size_t> lo, hi;
    for (std::size_t k = span.start; k < span.end && k < alignment.mapping.size(); ++k) {
      const auto& r = alignment.mapping[k];
      if (!r) continue;
      lo = lo ? std::min(*lo, r->begin) : r->begin;
      hi = hi ? std::max(*hi, r->end) : r->end;
    }
    if (!lo) {
      conv.diagnostics.push_back("dropped " + span.tag + "(" + std::to_string(span.start) + "," +
                                 std::to_string(span.end) + "): no source token matched");
      continue;
    }
    ann.spans.push_back({span.tag, *lo, *hi});
  }
  conv.annotation = std::move(ann);
  return conv;
}

Conversion to_annotation(const ParsedOutput& parsed, const AlignmentResult& alignment,
                         const corpus::CorpusInstance& instance, const scheme::AnnotationScheme& scheme,
                         const scheme::Provenance& provenance, double min_coverage) {
  if (parsed.verdict == Verdict::kUnparseable) throw_usage("to_annotation called on an unparseable output");

  Conversion conv = project(parsed, alignment, instance, provenance);
  auto fail = [&](std::string reason) {
    conv.annotation.reset();
    conv.failure = std::move(reason);
    return conv;
  };

  if (parsed.verdict == Verdict::kAct && alignment.coverage < min_coverage) {
    return fail("alignment coverage " + std::to_string(alignment.coverage) + " below " +
                std::to_string(min_coverage));
  }
  const auto& spans = conv.annotation->spans;
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (spans[i - 1].overlaps(spans[i]) || spans[i - 1].start > spans[i].start) {
      return fail("projected spans " + spans[i - 1].tag + " and " + spans[i].tag + " overlap");
    }
  }
  const auto violations = scheme::validate_annotation(*conv.annotation, scheme, instance);
  if (!violations.empty()) {
    std::vector<std::string> msgs;
    for (const auto& v : violations) msgs.push_back(v.message);
    return fail("invalid annotation: " + text::join(msgs, "; "));
  }
  return conv;
}

ResponseOutcome interpret_response(std::string_view response_text, const corpus::CorpusInstance& instance,
                                   const scheme::AnnotationScheme& scheme, const scheme::Provenance& provenance,
                                   double min_coverage) {
  ResponseOutcome outcome;
  const Payload payload = extract_payload(response_text, scheme.act_name);
  if (payload.verdict == Verdict::kUnparseable) {
    outcome.conversion.failure = "no annotation found in response";
    return outcome;
  }
  ParsedOutput parsed;
  AlignmentResult alignment;
  if (payload.verdict == Verdict::kAct) {
    parsed = parse_tags(payload.tagged_text, scheme);
    if (parsed.verdict == Verdict::kUnparseable) {
      outcome.conversion.failure = "unparseable mark-up";
      outcome.conversion.diagnostics = parsed.diagnostics;
      return outcome;
    }
    alignment = align(parsed.output_tokens, instance.tokens);
  } else {
    parsed.verdict = Verdict::kNoAct;
  }
  outcome.verdict = parsed.verdict;
  outcome.conversion = to_annotation(parsed, alignment, instance, scheme, provenance, min_coverage);
  for (const auto& d : parsed.diagnostics) outcome.conversion.diagnostics.push_back(d);
  return outcome;
}

std::string render_tagged(const scheme::Annotation& annotation, const std::vector<std::string>& tokens) {
  std::vector<std::string> parts;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    for (const auto& s : annotation.spans) {
      if (s.start == i) parts.push_back("<" + s.tag + ">");
    }
    parts.push_back(tokens[i]);
    for (const auto& s : annotation.spans) {
      if (s.end == i + 1) parts.push_back("</" + s.tag + ">");
    }
  }
  return text::join(parts, " ");
}

}  // namespace pragtag::tagparse
