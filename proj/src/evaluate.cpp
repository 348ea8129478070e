#include "pragtag/evaluate.h"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

#include "pragtag/error.h"
#include "pragtag/text.h"

namespace pragtag::eval {

MatchPolicy MatchPolicy::overlap(double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw_usage("overlap threshold must be in (0, 1]");
  return {Mode::kOverlap, threshold};
}

MatchPolicy MatchPolicy::parse(std::string_view s) {
  if (s == "exact") return exact();
  if (s.starts_with("overlap:")) {
    const std::string num(s.substr(8));
    std::size_t used = 0;
    double t = 0;
    try {
      t = std::stod(num, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != num.size()) throw_usage("bad overlap threshold '" + num + "'");
    return overlap(t);
  }
  throw_usage("unknown match policy '" + std::string(s) + "' (expected exact or overlap:<t>)");
}

std::string MatchPolicy::to_string() const {
  if (mode == Mode::kExactSpan) return "exact";
  char buf[32];
  std::snprintf(buf, sizeof buf, "overlap:%g", overlap_threshold);
  return buf;
}

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kMissed: return "MISSED";
    case ErrorKind::kSpurious: return "SPURIOUS";
    case ErrorKind::kBoundary: return "BOUNDARY";
    case ErrorKind::kWrongLabel: return "WRONG_LABEL";
    case ErrorKind::kActDisagreement: return "ACT_DISAGREEMENT";
  }
  return "MISSED";
}

ErrorKind error_kind_from_string(std::string_view s) {
  for (auto k : {ErrorKind::kMissed, ErrorKind::kSpurious, ErrorKind::kBoundary, ErrorKind::kWrongLabel,
                 ErrorKind::kActDisagreement}) {
    if (to_string(k) == s) return k;
  }
  throw_data("unknown error kind '" + std::string(s) + "'");
}

namespace {

double jaccard(const scheme::TagSpan& a, const scheme::TagSpan& b) {
  const std::size_t lo = std::max(a.start, b.start);
  const std::size_t hi = std::min(a.end, b.end);
  if (hi <= lo) return 0.0;
  const std::size_t inter = hi - lo;
  const std::size_t uni = (a.end - a.start) + (b.end - b.start) - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// Index of the gold span matched by each predicted span.
std::vector<std::optional<std::size_t>> match_spans(const std::vector<scheme::TagSpan>& gold,
                                                    const std::vector<scheme::TagSpan>& pred,
                                                    const MatchPolicy& policy) {
  std::vector<std::optional<std::size_t>> match(pred.size());
  std::vector<bool> used(gold.size(), false);
  for (std::size_t p = 0; p < pred.size(); ++p) {
    std::optional<std::size_t> best;
    double best_score = 0;
    for (std::size_t g = 0; g < gold.size(); ++g) {
      if (used[g] || gold[g].tag != pred[p].tag) continue;
      if (policy.mode == MatchPolicy::Mode::kExactSpan) {
        if (gold[g].start == pred[p].start && gold[g].end == pred[p].end) {
          best = g;
          break;
        }
        continue;
      }
      const double score = jaccard(gold[g], pred[p]);
      if (score >= policy.overlap_threshold && score > best_score) {
        best = g;
        best_score = score;
      }
    }
    if (best) {
      used[*best] = true;
      match[p] = best;
    }
  }
  return match;
}

}  // namespace

InstanceComparison compare_instance(const scheme::Annotation& gold, const scheme::Annotation& pred,
                                    const MatchPolicy& policy) {
  if (gold.instance_id != pred.instance_id) {
    throw_usage("comparing '" + gold.instance_id + "' against '" + pred.instance_id + "'");
  }
  InstanceComparison out;
  const std::string& id = gold.instance_id;

  if (gold.act_present != pred.act_present) {
    for (const auto& g : gold.spans) ++out.per_tag[g.tag].fn;
    for (const auto& p : pred.spans) ++out.per_tag[p.tag].fp;
    out.errors.push_back({id, "", ErrorKind::kActDisagreement, 0, 0});
    out.instance_correct = false;
    return out;
  }

  const auto match = match_spans(gold.spans, pred.spans, policy);
  std::vector<bool> gold_matched(gold.spans.size(), false);
  for (std::size_t p = 0; p < pred.spans.size(); ++p) {
    if (match[p]) {
      gold_matched[*match[p]] = true;
      ++out.per_tag[pred.spans[p].tag].tp;
    }
  }
  for (std::size_t p = 0; p < pred.spans.size(); ++p) {
    if (match[p]) continue;
    const auto& ps = pred.spans[p];
    ++out.per_tag[ps.tag].fp;
    bool same_tag_overlap = false, other_tag_overlap = false;
    for (std::size_t g = 0; g < gold.spans.size(); ++g) {
      if (gold_matched[g] || !gold.spans[g].overlaps(ps)) continue;
      (gold.spans[g].tag == ps.tag ? same_tag_overlap : other_tag_overlap) = true;
    }
    if (same_tag_overlap) out.errors.push_back({id, ps.tag, ErrorKind::kBoundary, ps.start, ps.end});
    if (other_tag_overlap) out.errors.push_back({id, ps.tag, ErrorKind::kWrongLabel, ps.start, ps.end});
    if (!same_tag_overlap && !other_tag_overlap) {
      out.errors.push_back({id, ps.tag, ErrorKind::kSpurious, ps.start, ps.end});
    }
  }
  for (std::size_t g = 0; g < gold.spans.size(); ++g) {
    if (gold_matched[g]) continue;
    const auto& gs = gold.spans[g];
    ++out.per_tag[gs.tag].fn;
    bool overlapped = false;
    for (std::size_t p = 0; p < pred.spans.size(); ++p) {
      if (!match[p] && pred.spans[p].overlaps(gs)) overlapped = true;
    }
    if (!overlapped) out.errors.push_back({id, gs.tag, ErrorKind::kMissed, gs.start, gs.end});
  }

  out.instance_correct = std::all_of(out.per_tag.begin(), out.per_tag.end(),
                                     [](const auto& kv) { return kv.second.fp == 0 && kv.second.fn == 0; });
  return out;
}

ConfusionCounts aggregate(const std::vector<AnnotationPair>& pairs, const MatchPolicy& policy) {
  ConfusionCounts counts;
  std::set<std::string> seen;
  for (const auto& [gold, pred] : pairs) {
    if (!seen.insert(gold.instance_id).second) throw_data("duplicate instance id '" + gold.instance_id + "'");
    const InstanceComparison cmp = compare_instance(gold, pred, policy);
    if (gold.act_present) {
      for (const auto& [tag, c] : cmp.per_tag) counts.per_tag[tag] += c;
    }
    if (!gold.act_present && !pred.act_present) ++counts.no_act.tp;
    if (!gold.act_present && pred.act_present) ++counts.no_act.fn;
    if (gold.act_present && !pred.act_present) ++counts.no_act.fp;
    ++counts.n_instances;
    if (cmp.instance_correct) ++counts.n_correct;
  }
  return counts;
}

TagMetrics metrics(const Counts& c) {
  TagMetrics m;
  if (c.tp + c.fp > 0) m.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) m.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (m.precision && m.recall && (*m.precision + *m.recall) > 0) {
    m.f1 = 2 * *m.precision * *m.recall / (*m.precision + *m.recall);
  }
  return m;
}

std::vector<AnnotationPair> pair_by_id(const std::vector<scheme::Annotation>& gold,
                                       const std::vector<scheme::Annotation>& pred) {
  std::map<std::string, const scheme::Annotation*> by_id;
  for (const auto& p : pred) {
    if (!by_id.emplace(p.instance_id, &p).second) {
      throw_data("duplicate predicted instance id '" + p.instance_id + "'");
    }
  }
  std::vector<AnnotationPair> pairs;
  std::set<std::string> gold_ids;
  std::vector<std::string> missing;
  for (const auto& g : gold) {
    if (!gold_ids.insert(g.instance_id).second) throw_data("duplicate gold instance id '" + g.instance_id + "'");
    const auto it = by_id.find(g.instance_id);
    if (it == by_id.end()) {
      missing.push_back(g.instance_id);
      continue;
    }
    pairs.emplace_back(g, *it->second);
  }
  std::vector<std::string> extra;
  for (const auto& p : pred) {
    if (!gold_ids.count(p.instance_id)) extra.push_back(p.instance_id);
  }
  auto preview = [](const std::vector<std::string>& ids) {
    std::vector<std::string> head(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(ids.size(), 5)));
    return text::join(head, ", ") + (ids.size() > 5 ? ", ..." : "");
  };
  if (!missing.empty()) {
    throw_data(std::to_string(missing.size()) + " gold instance(s) have no prediction: " + preview(missing));
  }
  if (!extra.empty()) {
    throw_data(std::to_string(extra.size()) + " predicted instance(s) have no gold: " + preview(extra));
  }
  return pairs;
}

EvalReport make_report(const ConfusionCounts& counts, const scheme::AnnotationScheme& scheme,
                       std::vector<ErrorRecord> errors) {
  EvalReport r;
  r.n_instances = counts.n_instances;
  r.n_correct = counts.n_correct;
  if (counts.n_instances > 0) {
    r.instance_accuracy = static_cast<double>(counts.n_correct) / static_cast<double>(counts.n_instances);
  }
  r.rows.push_back({scheme.no_act_label, counts.no_act, metrics(counts.no_act)});
  std::set<std::string> listed;
  for (const auto& t : scheme.tags) {
    const auto it = counts.per_tag.find(t.name);
    const Counts c = it == counts.per_tag.end() ? Counts{} : it->second;
    r.rows.push_back({t.name, c, metrics(c)});
    listed.insert(t.name);
  }
  for (const auto& [tag, c] : counts.per_tag) {
    if (!listed.count(tag)) r.rows.push_back({tag, c, metrics(c)});
  }
  r.errors = std::move(errors);
  return r;
}

EvalReport evaluate(const std::vector<AnnotationPair>& pairs, const scheme::AnnotationScheme& scheme,
                    const MatchPolicy& policy) {
  const ConfusionCounts counts = aggregate(pairs, policy);
  std::vector<ErrorRecord> errors;
  for (const auto& [gold, pred] : pairs) {
    auto cmp = compare_instance(gold, pred, policy);
    for (auto& e : cmp.errors) errors.push_back(std::move(e));
  }
  return make_report(counts, scheme, std::move(errors));
}

std::string format_percent(const std::optional<double>& fraction) {
  if (!fraction) return "\xE2\x80\x94";  // em dash
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", *fraction * 100.0);
  return buf;
}

namespace {

std::size_t display_width(std::string_view s) {
  std::size_t n = 0;
  for (char c : s) {
    if ((static_cast<unsigned char>(c) & 0xC0) != 0x80) ++n;
  }
  return n;
}

std::string pad_left(std::string_view s, std::size_t width) {
  const std::size_t w = display_width(s);
  return std::string(w < width ? width - w : 0, ' ') + std::string(s);
}

std::string pad_right(std::string_view s, std::size_t width) {
  const std::size_t w = display_width(s);
  return std::string(s) + std::string(w < width ? width - w : 0, ' ');
}

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::optional<double> read_optional(const Json& j, const char* key) {
  const Json& v = require(j, key);
  if (v.is_null()) return std::nullopt;
  if (!v.is_number()) throw_data(std::string("field '") + key + "' must be a number or null");
  return v.get<double>();
}

}  // namespace

Json to_json(const EvalReport& report) {
  Json j;
  j["n_instances"] = report.n_instances;
  j["n_correct"] = report.n_correct;
  j["instance_accuracy"] = optional_number(report.instance_accuracy);
  Json rows = Json::array();
  for (const auto& row : report.rows) {
    Json rj;
    rj["category"] = row.category;
    rj["tp"] = row.counts.tp;
    rj["fp"] = row.counts.fp;
    rj["fn"] = row.counts.fn;
    rj["precision"] = optional_number(row.metrics.precision);
    rj["recall"] = optional_number(row.metrics.recall);
    rj["f1"] = optional_number(row.metrics.f1);
    rows.push_back(std::move(rj));
  }
  j["rows"] = std::move(rows);
  Json errors = Json::array();
  for (const auto& e : report.errors) {
    Json ej;
    ej["instance_id"] = e.instance_id;
    ej["tag"] = e.tag;
    ej["kind"] = std::string(to_string(e.kind));
    ej["start"] = e.start;
    ej["end"] = e.end;
    errors.push_back(std::move(ej));
  }
  j["errors"] = std::move(errors);
  return j;
}

EvalReport report_from_json(const Json& j) {
  EvalReport r;
  r.n_instances = static_cast<std::size_t>(require_int(j, "n_instances"));
  r.n_correct = static_cast<std::size_t>(require_int(j, "n_correct"));
  r.instance_accuracy = read_optional(j, "instance_accuracy");
  for (const auto& rj : require(j, "rows")) {
    ReportRow row;
    row.category = require_string(rj, "category");
    row.counts.tp = static_cast<std::size_t>(require_int(rj, "tp"));
    row.counts.fp = static_cast<std::size_t>(require_int(rj, "fp"));
    row.counts.fn = static_cast<std::size_t>(require_int(rj, "fn"));
    row.metrics.precision = read_optional(rj, "precision");
    row.metrics.recall = read_optional(rj, "recall");
    row.metrics.f1 = read_optional(rj, "f1");
    r.rows.push_back(std::move(row));
  }
  for (const auto& ej : require(j, "errors")) {
    ErrorRecord e;
    e.instance_id = require_string(ej, "instance_id");
    e.tag = require_string(ej, "tag");
    e.kind = error_kind_from_string(require_string(ej, "kind"));
    e.start = static_cast<std::size_t>(require_int(ej, "start"));
    e.end = static_cast<std::size_t>(require_int(ej, "end"));
    r.errors.push_back(std::move(e));
  }
  return r;
}

std::string render_report(const EvalReport& report, ReportFormat format) {
  if (format == ReportFormat::kStructured) return to_json(report).dump(2) + "\n";

  std::string out;
  out += "Instances                    " + std::to_string(report.n_instances) + "\n";
  out += "Correctly annotated          " + std::to_string(report.n_correct) + "\n";
  out += "Instance-level accuracy (%)  " + format_percent(report.instance_accuracy) + "\n\n";

  std::size_t cat_width = 8;
  for (const auto& row : report.rows) cat_width = std::max(cat_width, display_width(row.category));
  cat_width += 2;

  out += pad_right("Category", cat_width) + pad_left("TP", 6) + pad_left("FP", 6) + pad_left("FN", 6) +
         pad_left("Precision (%)", 15) + pad_left("Recall (%)", 12) + pad_left("F1 (%)", 9) + "\n";
  for (const auto& row : report.rows) {
    out += pad_right(row.category, cat_width) + pad_left(std::to_string(row.counts.tp), 6) +
           pad_left(std::to_string(row.counts.fp), 6) + pad_left(std::to_string(row.counts.fn), 6) +
           pad_left(format_percent(row.metrics.precision), 15) + pad_left(format_percent(row.metrics.recall), 12) +
           pad_left(format_percent(row.metrics.f1), 9) + "\n";
  }
  if (!report.errors.empty()) {
    std::map<std::string, std::size_t> by_kind;
    for (const auto& e : report.errors) ++by_kind[std::string(to_string(e.kind))];
    out += "\nErrors";
    for (const auto& [kind, n] : by_kind) out += "  " + kind + "=" + std::to_string(n);
    out += "\n";
  }
  return out;
}

}  // namespace pragtag::eval
