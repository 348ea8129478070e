#include "pragtag/scheme.h"

#include <algorithm>
#include <set>

#include "pragtag/error.h"
#include "pragtag/text.h"

namespace pragtag::scheme {

const TagDef* AnnotationScheme::find(std::string_view tag_name) const {
  const auto it = std::find_if(tags.begin(), tags.end(), [&](const TagDef& t) { return t.name == tag_name; });
  return it == tags.end() ? nullptr : &*it;
}

const TagDef& AnnotationScheme::ifid() const {
  const auto it = std::find_if(tags.begin(), tags.end(), [](const TagDef& t) { return t.is_ifid; });
  if (it == tags.end()) throw_data("scheme has no ifid tag");
  return *it;
}

std::vector<std::string> AnnotationScheme::tag_names() const {
  std::vector<std::string> names;
  names.reserve(tags.size());
  for (const auto& t : tags) names.push_back(t.name);
  return names;
}

std::string Provenance::to_string() const {
  switch (kind) {
    case ProvenanceKind::kGold: return "gold";
    case ProvenanceKind::kLlmRun: return "llm-run:" + id;
    case ProvenanceKind::kHuman: return "human:" + id;
  }
  return "gold";
}

Provenance Provenance::parse(std::string_view s) {
  if (s == "gold") return gold();
  if (s.starts_with("llm-run:") && s.size() > 8) return llm_run(std::string(s.substr(8)));
  if (s.starts_with("human:") && s.size() > 6) return human(std::string(s.substr(6)));
  throw_data("invalid provenance '" + std::string(s) + "'");
}

bool is_valid_tag_name(std::string_view name) {
  return !name.empty() &&
         std::all_of(name.begin(), name.end(), [](char c) { return (c >= 'A' && c <= 'Z') || c == '_'; });
}

std::vector<std::string> check_scheme(const AnnotationScheme& scheme) {
  std::vector<std::string> problems;
  if (scheme.act_name.empty()) problems.emplace_back("act_name is empty");
  if (scheme.marker_lexemes.empty()) problems.emplace_back("marker_lexemes is empty");
  for (const auto& m : scheme.marker_lexemes) {
    if (m.empty()) problems.emplace_back("empty marker lexeme");
  }
  std::set<std::string> names;
  std::size_t ifids = 0;
  for (const auto& t : scheme.tags) {
    if (!is_valid_tag_name(t.name)) problems.push_back("invalid tag name '" + t.name + "'");
    if (!names.insert(t.name).second) problems.push_back("duplicate tag name '" + t.name + "'");
    if (t.is_ifid) ++ifids;
  }
  if (ifids != 1) problems.push_back("expected exactly one ifid tag, found " + std::to_string(ifids));
  if (scheme.no_act_label.empty()) problems.emplace_back("no_act_label is empty");
  if (names.count(scheme.no_act_label)) problems.emplace_back("no_act_label collides with a tag name");
  return problems;
}

AnnotationScheme default_apology_scheme() {
  AnnotationScheme s;
  s.act_name = "apology";
  s.marker_lexemes = {"sorry"};
  s.tags = {
      {"APOLOGISING", "the element that indicates the act of apologising", false, true},
      {"REASON", "the offense or the reason for the apology", true, false},
      {"APOLOGISER", "the person who apologises", false, false},
      {"APOLOGISEE", "the person to whom the apology is made", true, false},
      {"INTENSIFIER", "the element that upgrades the degree of apology", true, false},
  };
  s.no_act_label = "NO_APOLOGY";
  return s;
}

std::vector<Violation> validate_annotation(const Annotation& ann, const AnnotationScheme& scheme,
                                           const corpus::CorpusInstance& instance) {
  if (ann.instance_id != instance.id) {
    throw_usage("annotation for '" + ann.instance_id + "' checked against instance '" + instance.id + "'");
  }
  return validate_annotation(ann, scheme, instance.tokens);
}

std::vector<Violation> validate_annotation(const Annotation& ann, const AnnotationScheme& scheme,
                                           const std::vector<std::string>& tokens) {
  std::vector<Violation> out;
  if (!ann.act_present) {
    if (!ann.spans.empty()) out.push_back({"no_act_spans", "spans on NO_ACT annotation"});
    return out;
  }

  const TagDef* ifid = nullptr;
  for (const auto& t : scheme.tags) {
    if (t.is_ifid) ifid = &t;
  }

  bool has_ifid = false;
  for (std::size_t i = 0; i < ann.spans.size(); ++i) {
    const TagSpan& s = ann.spans[i];
    const std::string where = s.tag + "(" + std::to_string(s.start) + "," + std::to_string(s.end) + ")";
    const TagDef* def = scheme.find(s.tag);
    if (!def) out.push_back({"unknown_tag", "unknown tag " + where});
    if (!(s.start < s.end && s.end <= tokens.size())) {
      out.push_back({"range", "span " + where + " out of range for " + std::to_string(tokens.size()) +
                                  " tokens"});
      continue;
    }
    if (i > 0) {
      const TagSpan& prev = ann.spans[i - 1];
      if (prev.overlaps(s)) {
        out.push_back({"overlap", "overlap between " + prev.tag + "(" + std::to_string(prev.start) + "," +
                                      std::to_string(prev.end) + ") and " + where});
      } else if (prev.start > s.start) {
        out.push_back({"order", "spans not sorted by start at " + where});
      }
    }
    if (def && def->is_ifid) {
      has_ifid = true;
      bool covers_marker = false;
      for (std::size_t k = s.start; k < s.end && !covers_marker; ++k) {
        for (const auto& m : scheme.marker_lexemes) {
          if (corpus::matches_marker(tokens[k], m)) covers_marker = true;
        }
      }
      if (!covers_marker) out.push_back({"ifid_marker", where + " does not cover a marker lexeme"});
    }
  }
  // Overlap between non-adjacent spans when the list is unsorted.
  for (std::size_t i = 0; i < ann.spans.size(); ++i) {
    for (std::size_t j = i + 2; j < ann.spans.size(); ++j) {
      if (ann.spans[i].overlaps(ann.spans[j]) && ann.spans[i].end <= tokens.size() &&
          ann.spans[j].end <= tokens.size()) {
        out.push_back({"overlap", "overlap between spans " + std::to_string(i) + " and " + std::to_string(j)});
      }
    }
  }
  if (!has_ifid) {
    out.push_back({"missing_ifid", "act present but no " + (ifid ? ifid->name : std::string("ifid")) + " span"});
  }
  return out;
}

Json to_json(const AnnotationScheme& scheme) {
  Json j;
  j["act_name"] = scheme.act_name;
  j["marker_lexemes"] = scheme.marker_lexemes;
  Json tags = Json::array();
  for (const auto& t : scheme.tags) {
    Json tj;
    tj["name"] = t.name;
    tj["definition"] = t.definition;
    tj["open_class"] = t.open_class;
    tj["is_ifid"] = t.is_ifid;
    tags.push_back(std::move(tj));
  }
  j["tags"] = std::move(tags);
  j["no_act_label"] = scheme.no_act_label;
  return j;
}

AnnotationScheme scheme_from_json(const Json& j) {
  AnnotationScheme s;
  s.act_name = require_string(j, "act_name");
  const Json& markers = require(j, "marker_lexemes");
  if (!markers.is_array()) throw_data("'marker_lexemes' must be an array");
  for (const auto& m : markers) s.marker_lexemes.push_back(m.get<std::string>());
  const Json& tags = require(j, "tags");
  if (!tags.is_array()) throw_data("'tags' must be an array");
  for (const auto& tj : tags) {
    TagDef t;
    t.name = require_string(tj, "name");
    t.definition = require_string(tj, "definition");
    t.open_class = tj.value("open_class", false);
    t.is_ifid = tj.value("is_ifid", false);
    s.tags.push_back(std::move(t));
  }
  s.no_act_label = require_string(j, "no_act_label");
  if (auto problems = check_scheme(s); !problems.empty()) {
    throw_data("invalid scheme: " + text::join(problems, "; "));
  }
  return s;
}

std::string canonical_text(const AnnotationScheme& scheme) { return to_json(scheme).dump(2) + "\n"; }

AnnotationScheme load_scheme(const std::filesystem::path& path) {
  const std::string content = read_file(path);
  try {
    return scheme_from_json(Json::parse(content));
  } catch (const Json::exception& e) {
    throw_data(path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

void save_scheme(const AnnotationScheme& scheme, const std::filesystem::path& path) {
  write_file(path, canonical_text(scheme));
}

Json to_json(const TagSpan& span) {
  Json j;
  j["tag"] = span.tag;
  j["start"] = span.start;
  j["end"] = span.end;
  return j;
}

TagSpan span_from_json(const Json& j) {
  TagSpan s;
  s.tag = require_string(j, "tag");
  const long long start = require_int(j, "start");
  const long long end = require_int(j, "end");
  if (start < 0 || end < 0) throw_data("span bounds must be non-negative");
  s.start = static_cast<std::size_t>(start);
  s.end = static_cast<std::size_t>(end);
  return s;
}

Json to_json(const Annotation& ann) {
  Json j;
  j["instance_id"] = ann.instance_id;
  j["act_present"] = ann.act_present;
  Json spans = Json::array();
  for (const auto& s : ann.spans) spans.push_back(to_json(s));
  j["spans"] = std::move(spans);
  j["provenance"] = ann.provenance.to_string();
  return j;
}

Annotation annotation_from_json(const Json& j) {
  Annotation a;
  a.instance_id = require_string(j, "instance_id");
  a.act_present = require_bool(j, "act_present");
  const Json& spans = require(j, "spans");
  if (!spans.is_array()) throw_data("'spans' must be an array");
  for (const auto& s : spans) a.spans.push_back(span_from_json(s));
  a.provenance = Provenance::parse(require_string(j, "provenance"));
  return a;
}

std::string annotations_to_jsonl(const std::vector<Annotation>& anns) {
  return to_jsonl<Annotation>(anns, [](const Annotation& a) { return to_json(a); });
}

std::vector<Annotation> annotations_from_jsonl(std::string_view text, std::string_view origin) {
  return parse_jsonl<Annotation>(text, origin, annotation_from_json);
}

void write_annotations(const std::vector<Annotation>& anns, const std::filesystem::path& path) {
  write_file(path, annotations_to_jsonl(anns));
}

std::vector<Annotation> read_annotations(const std::filesystem::path& path) {
  return read_jsonl<Annotation>(path, annotation_from_json);
}

}  // namespace pragtag::scheme
