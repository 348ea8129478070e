#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "pragtag/corpus.h"
#include "pragtag/error.h"
#include "pragtag/evaluate.h"
#include "pragtag/gateway.h"
#include "pragtag/jsonl.h"
#include "pragtag/prompting.h"
#include "pragtag/scheme.h"

namespace pragtag::runstore {

// File names inside a run directory.
inline constexpr std::string_view kManifestFile = "manifest.jsonl";
inline constexpr std::string_view kSchemeFile = "scheme.json";
inline constexpr std::string_view kPromptFile = "prompt.json";
inline constexpr std::string_view kInstancesFile = "instances.jsonl";
inline constexpr std::string_view kPredictionsFile = "predictions.jsonl";
inline constexpr std::string_view kOutcomesFile = "outcomes.jsonl";
inline constexpr std::string_view kTranscriptsFile = "transcripts.jsonl";
inline constexpr std::string_view kVerdictsFile = "verdicts.jsonl";
inline constexpr std::string_view kCheckpointFile = "checkpoint.jsonl";
inline constexpr std::string_view kTranscriptLogFile = "checkpoint_transcripts.jsonl";

struct RunManifest {
  std::string run_id;
  std::string created_at;
  std::string scheme_hash;
  std::string prompt_hash;
  std::string backend;  // descriptor, never a credential
  std::size_t instance_count = 0;
  std::map<std::string, std::size_t> status_counts;
  double min_coverage = 0;

  bool operator==(const RunManifest&) const = default;
};

Json to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const Json& j);

/// Per-instance pipeline outcome. status is a gateway status name or
/// PARSE_FAILURE.
struct InstanceOutcome {
  std::string instance_id;
  std::string status;
  double coverage = 0;
  std::string diagnostic;

  bool operator==(const InstanceOutcome&) const = default;
};

inline constexpr std::string_view kParseFailure = "PARSE_FAILURE";

Json to_json(const InstanceOutcome& outcome);
InstanceOutcome outcome_from_json(const Json& j);

struct RunData {
  RunManifest manifest;
  scheme::AnnotationScheme scheme;
  prompting::PromptSpec prompt;
  std::vector<corpus::CorpusInstance> instances;
  std::vector<scheme::Annotation> predictions;
  std::vector<InstanceOutcome> outcomes;
  std::optional<std::vector<gateway::Transcript>> transcripts;  // may be withheld
};

/// Writes the run files into `dir` (created if needed). Dangling instance
/// references are a data error and nothing is written.
void save_run(const std::filesystem::path& dir, const RunData& run);

/// Loads a run. Hash mismatches between the manifest and the stored scheme or
/// prompt are reported through `warnings`, not thrown.
RunData load_run(const std::filesystem::path& dir, std::vector<std::string>* warnings = nullptr);

std::vector<std::string> integrity_warnings(const std::filesystem::path& dir, const RunManifest& manifest);

// ---------------------------------------------------------------------------
// Verdicts

enum class VerdictAction { kAccept, kCorrect, kMarkNoAct };

std::string_view to_string(VerdictAction action);
VerdictAction verdict_action_from_string(std::string_view text);

struct Verdict {
  std::string instance_id;
  std::string reviewer_id;
  VerdictAction action = VerdictAction::kAccept;
  bool act_present = false;             // CORRECT only
  std::vector<scheme::TagSpan> spans;   // CORRECT only
  std::string submitted_at;
  long long sequence = 0;

  bool operator==(const Verdict&) const = default;
};

Json to_json(const Verdict& verdict);
Verdict verdict_from_json(const Json& j);

/// Raised when a corrected annotation breaks the annotation invariants.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<scheme::Violation> violations);
  const std::vector<scheme::Violation>& violations() const { return violations_; }

 private:
  std::vector<scheme::Violation> violations_;
};

enum class QueueFilter { kAll, kPending, kReviewed, kFailed };

QueueFilter queue_filter_from_string(std::string_view text);

struct QueueEntry {
  std::string instance_id;
  std::string status;
  double coverage = 0;
  bool reviewed = false;
};

/// One run opened for review. Readers may call any const member concurrently;
/// submit_verdict serializes appends to the verdict log.
class Run {
 public:
  Run(std::filesystem::path dir, RunData data, std::vector<std::string> warnings);

  static std::shared_ptr<Run> open(const std::filesystem::path& dir);

  const RunData& data() const { return data_; }
  const std::filesystem::path& dir() const { return dir_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  const corpus::CorpusInstance* instance(std::string_view id) const;
  const scheme::Annotation* prediction(std::string_view id) const;
  const InstanceOutcome* outcome(std::string_view id) const;
  const gateway::Transcript* transcript(std::string_view id) const;

  /// Assigns the next sequence number and appends. Throws kNotFound for an
  /// unknown instance and ValidationError for an invalid correction; in both
  /// cases the log is untouched.
  Verdict submit_verdict(Verdict verdict);

  std::vector<Verdict> verdicts() const;
  /// Highest-sequence verdict per instance, considering sequence <= up_to.
  std::map<std::string, Verdict> latest_verdicts(std::optional<long long> up_to = std::nullopt) const;
  std::optional<Verdict> latest_verdict(std::string_view instance_id) const;

  /// Effective gold for one instance under a verdict.
  std::optional<scheme::Annotation> effective_gold(const Verdict& verdict) const;

  /// Scores predictions against effective gold for reviewed instances that have
  /// a prediction.
  eval::EvalReport live_metrics(const eval::MatchPolicy& policy = {}) const;

  /// REFUSED and failed instances first, then ascending coverage, then input order.
  std::vector<QueueEntry> review_queue(QueueFilter filter) const;

 private:
  std::filesystem::path dir_;
  RunData data_;
  std::vector<std::string> warnings_;
  std::map<std::string, std::size_t, std::less<>> instance_index_;
  std::map<std::string, std::size_t, std::less<>> prediction_index_;
  std::map<std::string, std::size_t, std::less<>> outcome_index_;
  std::map<std::string, std::size_t, std::less<>> transcript_index_;

  mutable std::shared_mutex log_mu_;
  std::vector<Verdict> log_;
};

/// Directory of run directories, keyed by directory name.
class RunStore {
 public:
  explicit RunStore(std::filesystem::path root);

  std::vector<std::string> list_runs() const;
  /// Throws kNotFound for an unknown run id.
  std::shared_ptr<Run> open(const std::string& run_id);
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<Run>> cache_;
};

}  // namespace pragtag::runstore
