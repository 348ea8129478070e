#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pragtag/jsonl.h"
#include "pragtag/scheme.h"

namespace pragtag::eval {

struct MatchPolicy {
  enum class Mode { kExactSpan, kOverlap };

  Mode mode = Mode::kExactSpan;
  double overlap_threshold = 1.0;  // token Jaccard, overlap mode only

  static MatchPolicy exact() { return {}; }
  static MatchPolicy overlap(double threshold);
  /// "exact" or "overlap:<t>".
  static MatchPolicy parse(std::string_view text);
  std::string to_string() const;
};

struct Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const Counts&) const = default;
};

struct ConfusionCounts {
  std::map<std::string, Counts> per_tag;
  Counts no_act;
  std::size_t n_instances = 0;
  std::size_t n_correct = 0;

  bool operator==(const ConfusionCounts&) const = default;
};

/// precision, recall and f1 as fractions; nullopt means undefined (0/0).
struct TagMetrics {
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
};

enum class ErrorKind { kMissed, kSpurious, kBoundary, kWrongLabel, kActDisagreement };

std::string_view to_string(ErrorKind kind);
ErrorKind error_kind_from_string(std::string_view text);

struct ErrorRecord {
  std::string instance_id;
  std::string tag;
  ErrorKind kind = ErrorKind::kMissed;
  std::size_t start = 0;
  std::size_t end = 0;

  bool operator==(const ErrorRecord&) const = default;
};

struct InstanceComparison {
  std::map<std::string, Counts> per_tag;
  bool instance_correct = false;
  std::vector<ErrorRecord> errors;
};

/// Throws a usage error when the instance ids differ.
InstanceComparison compare_instance(const scheme::Annotation& gold, const scheme::Annotation& pred,
                                    const MatchPolicy& policy = {});

using AnnotationPair = std::pair<scheme::Annotation, scheme::Annotation>;  // gold, pred

/// Per-tag counts over gold act instances only; the no-act category is scored
/// as a binary decision over every instance. Duplicate ids are a data error.
ConfusionCounts aggregate(const std::vector<AnnotationPair>& pairs, const MatchPolicy& policy = {});

TagMetrics metrics(const Counts& counts);

struct ReportRow {
  std::string category;
  Counts counts;
  TagMetrics metrics;
};

struct EvalReport {
  std::size_t n_instances = 0;
  std::size_t n_correct = 0;
  std::optional<double> instance_accuracy;
  std::vector<ReportRow> rows;  // no-act row first, then tags in scheme order
  std::vector<ErrorRecord> errors;
};

/// Pairs gold and predicted annotations by instance id. Ids present on only
/// one side are a data error.
std::vector<AnnotationPair> pair_by_id(const std::vector<scheme::Annotation>& gold,
                                       const std::vector<scheme::Annotation>& pred);

EvalReport evaluate(const std::vector<AnnotationPair>& pairs, const scheme::AnnotationScheme& scheme,
                    const MatchPolicy& policy = {});

EvalReport make_report(const ConfusionCounts& counts, const scheme::AnnotationScheme& scheme,
                       std::vector<ErrorRecord> errors = {});

enum class ReportFormat { kTable, kStructured };

std::string render_report(const EvalReport& report, ReportFormat format);
Json to_json(const EvalReport& report);
EvalReport report_from_json(const Json& j);

/// Percentage with two decimals, or an em dash when undefined.
std::string format_percent(const std::optional<double>& fraction);

}  // namespace pragtag::eval
