#include "pragtag/runstore.h"

#include <tuple>

#include <algorithm>
#include <set>

#include "pragtag/hash.h"
#include "pragtag/text.h"

namespace pragtag::runstore {

namespace fs = std::filesystem;

namespace {

fs::path file_in(const fs::path& dir, std::string_view name) { return dir / std::string(name); }

}  // namespace

Json to_json(const RunManifest& m) {
  Json j;
  j["run_id"] = m.run_id;
  j["created_at"] = m.created_at;
  j["scheme_hash"] = m.scheme_hash;
  j["prompt_hash"] = m.prompt_hash;
  j["backend"] = m.backend;
  j["instance_count"] = m.instance_count;
  Json counts = Json::object();
  for (const auto& [status, n] : m.status_counts) counts[status] = n;
  j["status_counts"] = std::move(counts);
  j["min_coverage"] = m.min_coverage;
  return j;
}

RunManifest manifest_from_json(const Json& j) {
  RunManifest m;
  m.run_id = require_string(j, "run_id");
  m.created_at = require_string(j, "created_at");
  m.scheme_hash = require_string(j, "scheme_hash");
  m.prompt_hash = require_string(j, "prompt_hash");
  m.backend = require_string(j, "backend");
  m.instance_count = static_cast<std::size_t>(require_int(j, "instance_count"));
  const Json& counts = require(j, "status_counts");
  if (!counts.is_object()) throw_data("status_counts must be an object");
  for (const auto& [status, n] : counts.items()) {
    if (!n.is_number_unsigned()) throw_data("status count for " + status + " must be a non-negative integer");
    m.status_counts[status] = n.get<std::size_t>();
  }
  const Json& cov = require(j, "min_coverage");
  if (!cov.is_number()) throw_data("min_coverage must be a number");
  m.min_coverage = cov.get<double>();
  return m;
}

Json to_json(const InstanceOutcome& o) {
  Json j;
  j["instance_id"] = o.instance_id;
  j["status"] = o.status;
  j["coverage"] = o.coverage;
  j["diagnostic"] = o.diagnostic;
  return j;
}

InstanceOutcome outcome_from_json(const Json& j) {
  InstanceOutcome o;
  o.instance_id = require_string(j, "instance_id");
  o.status = require_string(j, "status");
  if (o.status != kParseFailure) gateway::status_from_string(o.status);
  const Json& cov = require(j, "coverage");
  if (!cov.is_number()) throw_data("coverage must be a number");
  o.coverage = cov.get<double>();
  o.diagnostic = require_string(j, "diagnostic");
  return o;
}

namespace {

void check_references(const RunData& run) {
  std::set<std::string> ids;
  for (const auto& inst : run.instances) {
    if (!ids.insert(inst.id).second) throw_data("duplicate instance id '" + inst.id + "'");
  }
  auto check = [&](const std::string& id, const char* what, std::set<std::string>& seen) {
    if (!ids.count(id)) throw_data(std::string(what) + " references unknown instance '" + id + "'");
    if (!seen.insert(id).second) throw_data(std::string("duplicate ") + what + " for instance '" + id + "'");
  };
  std::set<std::string> seen_pred, seen_out, seen_tr;
  for (const auto& p : run.predictions) check(p.instance_id, "prediction", seen_pred);
  for (const auto& o : run.outcomes) check(o.instance_id, "outcome", seen_out);
  if (run.transcripts) {
    for (const auto& t : *run.transcripts) check(t.instance_id, "transcript", seen_tr);
  }
}

}  // namespace

void save_run(const fs::path& dir, const RunData& run) {
  check_references(run);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw_io("cannot create " + dir.string() + ": " + ec.message());

  write_file(file_in(dir, kSchemeFile), scheme::canonical_text(run.scheme));
  write_file(file_in(dir, kPromptFile), prompting::canonical_text(run.prompt));
  write_file(file_in(dir, kInstancesFile), corpus::instances_to_jsonl(run.instances));
  write_file(file_in(dir, kPredictionsFile), scheme::annotations_to_jsonl(run.predictions));
  write_file(file_in(dir, kOutcomesFile),
             to_jsonl<InstanceOutcome>(run.outcomes, [](const InstanceOutcome& o) { return to_json(o); }));
  if (run.transcripts) {
    write_file(file_in(dir, kTranscriptsFile),
               to_jsonl<gateway::Transcript>(*run.transcripts,
                                             [](const gateway::Transcript& t) { return gateway::to_json(t); }));
  } else {
    fs::remove(file_in(dir, kTranscriptsFile), ec);
  }
  write_file(file_in(dir, kManifestFile), to_json(run.manifest).dump() + "\n");
}

std::vector<std::string> integrity_warnings(const fs::path& dir, const RunManifest& manifest) {
  std::vector<std::string> out;
  auto check = [&](std::string_view name, const std::string& expected) {
    const fs::path p = file_in(dir, name);
    const std::string actual = sha256_hex(read_file(p));
    if (actual != expected) {
      out.push_back(p.filename().string() + " hash " + actual + " does not match manifest hash " + expected);
    }
  };
  check(kSchemeFile, manifest.scheme_hash);
  check(kPromptFile, manifest.prompt_hash);
  return out;
}

RunData load_run(const fs::path& dir, std::vector<std::string>* warnings) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::kNotFound, "no run directory at " + dir.string());
  RunData run;
  const auto manifests = read_jsonl<RunManifest>(file_in(dir, kManifestFile), manifest_from_json);
  if (manifests.size() != 1) throw_data(file_in(dir, kManifestFile).string() + ": expected exactly one record");
  run.manifest = manifests.front();
  run.scheme = scheme::load_scheme(file_in(dir, kSchemeFile));
  run.prompt = prompting::load_spec(file_in(dir, kPromptFile));
  run.instances = corpus::read_instances(file_in(dir, kInstancesFile));
  run.predictions = scheme::read_annotations(file_in(dir, kPredictionsFile));
  run.outcomes = read_jsonl<InstanceOutcome>(file_in(dir, kOutcomesFile), outcome_from_json);
  if (fs::exists(file_in(dir, kTranscriptsFile))) {
    run.transcripts =
        read_jsonl<gateway::Transcript>(file_in(dir, kTranscriptsFile), gateway::transcript_from_json);
  }
  check_references(run);
  if (warnings) *warnings = integrity_warnings(dir, run.manifest);
  return run;
}

// ---------------------------------------------------------------------------
// Verdicts

std::string_view to_string(VerdictAction a) {
  switch (a) {
    case VerdictAction::kAccept: return "ACCEPT";
    case VerdictAction::kCorrect: return "CORRECT";
    case VerdictAction::kMarkNoAct: return "MARK_NO_ACT";
  }
  return "ACCEPT";
}

VerdictAction verdict_action_from_string(std::string_view s) {
  for (auto a : {VerdictAction::kAccept, VerdictAction::kCorrect, VerdictAction::kMarkNoAct}) {
    if (to_string(a) == s) return a;
  }
  throw_data("unknown verdict action '" + std::string(s) + "' (expected ACCEPT, CORRECT or MARK_NO_ACT)");
}

Json to_json(const Verdict& v) {
  Json j;
  j["instance_id"] = v.instance_id;
  j["reviewer_id"] = v.reviewer_id;
  j["action"] = std::string(to_string(v.action));
  if (v.action == VerdictAction::kCorrect) {
    j["act_present"] = v.act_present;
    Json spans = Json::array();
    for (const auto& s : v.spans) spans.push_back(scheme::to_json(s));
    j["spans"] = std::move(spans);
  }
  j["submitted_at"] = v.submitted_at;
  j["sequence"] = v.sequence;
  return j;
}

Verdict verdict_from_json(const Json& j) {
  Verdict v;
  v.instance_id = require_string(j, "instance_id");
  v.reviewer_id = require_string(j, "reviewer_id");
  v.action = verdict_action_from_string(require_string(j, "action"));
  if (v.action == VerdictAction::kCorrect) {
    v.act_present = require_bool(j, "act_present");
    const Json& spans = require(j, "spans");
    if (!spans.is_array()) throw_data("spans must be an array");
    for (const auto& s : spans) v.spans.push_back(scheme::span_from_json(s));
  } else if (j.contains("spans") && !(j.at("spans").is_array() && j.at("spans").empty())) {
    throw_data(std::string(to_string(v.action)) + " verdicts carry no spans");
  }
  if (j.contains("submitted_at")) v.submitted_at = require_string(j, "submitted_at");
  if (j.contains("sequence")) v.sequence = require_int(j, "sequence");
  return v;
}

namespace {

std::string describe(const std::vector<scheme::Violation>& violations) {
  std::vector<std::string> parts;
  for (const auto& v : violations) parts.push_back(v.message);
  return "invalid annotation: " + text::join(parts, "; ");
}

}  // namespace

ValidationError::ValidationError(std::vector<scheme::Violation> violations)
    : Error(ErrorKind::kValidation, describe(violations)), violations_(std::move(violations)) {}

QueueFilter queue_filter_from_string(std::string_view s) {
  if (s.empty() || s == "all") return QueueFilter::kAll;
  if (s == "pending") return QueueFilter::kPending;
  if (s == "reviewed") return QueueFilter::kReviewed;
  if (s == "failed") return QueueFilter::kFailed;
  throw_usage("unknown status filter '" + std::string(s) + "' (expected pending, reviewed or failed)");
}

// ---------------------------------------------------------------------------
// Run

Run::Run(fs::path dir, RunData data, std::vector<std::string> warnings)
    : dir_(std::move(dir)), data_(std::move(data)), warnings_(std::move(warnings)) {
  for (std::size_t i = 0; i < data_.instances.size(); ++i) instance_index_.emplace(data_.instances[i].id, i);
  for (std::size_t i = 0; i < data_.predictions.size(); ++i) {
    prediction_index_.emplace(data_.predictions[i].instance_id, i);
  }
  for (std::size_t i = 0; i < data_.outcomes.size(); ++i) outcome_index_.emplace(data_.outcomes[i].instance_id, i);
  if (data_.transcripts) {
    for (std::size_t i = 0; i < data_.transcripts->size(); ++i) {
      transcript_index_.emplace((*data_.transcripts)[i].instance_id, i);
    }
  }
  const fs::path log = file_in(dir_, kVerdictsFile);
  if (fs::exists(log)) {
    log_ = read_jsonl<Verdict>(log, verdict_from_json);
    long long last = 0;
    for (const auto& v : log_) {
      if (!instance_index_.count(v.instance_id)) {
        throw_data(log.string() + ": verdict for unknown instance '" + v.instance_id + "'");
      }
      if (v.sequence <= last) throw_data(log.string() + ": sequence numbers must increase");
      last = v.sequence;
    }
  }
}

std::shared_ptr<Run> Run::open(const fs::path& dir) {
  std::vector<std::string> warnings;
  RunData data = load_run(dir, &warnings);
  return std::make_shared<Run>(dir, std::move(data), std::move(warnings));
}

namespace {

template <typename T>
const T* lookup(const std::map<std::string, std::size_t, std::less<>>& index, const std::vector<T>& items,
                std::string_view id) {
  const auto it = index.find(id);
  return it == index.end() ? nullptr : &items[it->second];
}

}  // namespace

const corpus::CorpusInstance* Run::instance(std::string_view id) const {
  return lookup(instance_index_, data_.instances, id);
}

const scheme::Annotation* Run::prediction(std::string_view id) const {
  return lookup(prediction_index_, data_.predictions, id);
}

const InstanceOutcome* Run::outcome(std::string_view id) const { return lookup(outcome_index_, data_.outcomes, id); }

const gateway::Transcript* Run::transcript(std::string_view id) const {
  return data_.transcripts ? lookup(transcript_index_, *data_.transcripts, id) : nullptr;
}

Verdict Run::submit_verdict(Verdict v) {
  const corpus::CorpusInstance* inst = instance(v.instance_id);
  if (!inst) throw Error(ErrorKind::kNotFound, "unknown instance '" + v.instance_id + "'");
  if (v.reviewer_id.empty()) throw_usage("reviewer_id must not be empty");

  switch (v.action) {
    case VerdictAction::kAccept:
      if (!prediction(v.instance_id)) {
        throw ValidationError({scheme::Violation{"no_prediction", "instance '" + v.instance_id +
                                                     "' has no prediction to accept; submit a correction"}});
      }
      v.act_present = false;
      v.spans.clear();
      break;
    case VerdictAction::kMarkNoAct:
      if (!v.spans.empty()) throw ValidationError({scheme::Violation{"no_act_spans", "MARK_NO_ACT verdicts carry no spans"}});
      v.act_present = false;
      break;
    case VerdictAction::kCorrect: {
      std::sort(v.spans.begin(), v.spans.end(), [](const scheme::TagSpan& a, const scheme::TagSpan& b) {
        return std::tie(a.start, a.end, a.tag) < std::tie(b.start, b.end, b.tag);
      });
      const scheme::Annotation ann{v.instance_id, v.act_present, v.spans, scheme::Provenance::human(v.reviewer_id)};
      auto violations = scheme::validate_annotation(ann, data_.scheme, *inst);
      if (!violations.empty()) throw ValidationError(std::move(violations));
      break;
    }
  }

  std::unique_lock lock(log_mu_);
  v.sequence = log_.empty() ? 1 : log_.back().sequence + 1;
  if (v.submitted_at.empty()) v.submitted_at = gateway::utc_timestamp();
  append_line(file_in(dir_, kVerdictsFile), to_json(v).dump());
  log_.push_back(v);
  return v;
}

std::vector<Verdict> Run::verdicts() const {
  std::shared_lock lock(log_mu_);
  return log_;
}

std::map<std::string, Verdict> Run::latest_verdicts(std::optional<long long> up_to) const {
  std::shared_lock lock(log_mu_);
  std::map<std::string, Verdict> out;
  for (const auto& v : log_) {
    if (up_to && v.sequence > *up_to) break;
    out[v.instance_id] = v;
  }
  return out;
}

std::optional<Verdict> Run::latest_verdict(std::string_view instance_id) const {
  std::shared_lock lock(log_mu_);
  for (auto it = log_.rbegin(); it != log_.rend(); ++it) {
    if (it->instance_id == instance_id) return *it;
  }
  return std::nullopt;
}

std::optional<scheme::Annotation> Run::effective_gold(const Verdict& v) const {
  const auto prov = scheme::Provenance::human(v.reviewer_id);
  switch (v.action) {
    case VerdictAction::kAccept: {
      const scheme::Annotation* pred = prediction(v.instance_id);
      if (!pred) return std::nullopt;
      scheme::Annotation gold = *pred;
      gold.provenance = prov;
      return gold;
    }
    case VerdictAction::kCorrect: return scheme::Annotation{v.instance_id, v.act_present, v.spans, prov};
    case VerdictAction::kMarkNoAct: return scheme::Annotation{v.instance_id, false, {}, prov};
  }
  return std::nullopt;
}

eval::EvalReport Run::live_metrics(const eval::MatchPolicy& policy) const {
  const auto latest = latest_verdicts();
  std::vector<eval::AnnotationPair> pairs;
  for (const auto& inst : data_.instances) {
    const auto v = latest.find(inst.id);
    const scheme::Annotation* pred = prediction(inst.id);
    if (v == latest.end() || !pred) continue;
    if (auto gold = effective_gold(v->second)) pairs.emplace_back(std::move(*gold), *pred);
  }
  return eval::evaluate(pairs, data_.scheme, policy);
}

std::vector<QueueEntry> Run::review_queue(QueueFilter filter) const {
  const auto latest = latest_verdicts();
  std::vector<QueueEntry> entries;
  for (const auto& inst : data_.instances) {
    QueueEntry e;
    e.instance_id = inst.id;
    const InstanceOutcome* o = outcome(inst.id);
    e.status = o ? o->status : (prediction(inst.id) ? "OK" : std::string(kParseFailure));
    e.coverage = o ? o->coverage : 0.0;
    e.reviewed = latest.count(inst.id) > 0;
    const bool failed = e.status != "OK";
    const bool keep = filter == QueueFilter::kAll || (filter == QueueFilter::kPending && !e.reviewed) ||
                      (filter == QueueFilter::kReviewed && e.reviewed) || (filter == QueueFilter::kFailed && failed);
    if (keep) entries.push_back(std::move(e));
  }
  std::stable_sort(entries.begin(), entries.end(), [](const QueueEntry& a, const QueueEntry& b) {
    const bool fa = a.status != "OK", fb = b.status != "OK";
    if (fa != fb) return fa;
    if (fa) return false;
    return a.coverage < b.coverage;
  });
  return entries;
}

// ---------------------------------------------------------------------------
// RunStore

RunStore::RunStore(fs::path root) : root_(std::move(root)) {
  if (!fs::is_directory(root_)) throw_io("run store " + root_.string() + " is not a directory");
}

std::vector<std::string> RunStore::list_runs() const {
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(root_)) {
    if (entry.is_directory() && fs::exists(entry.path() / std::string(kManifestFile))) {
      out.push_back(entry.path().filename().string());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::shared_ptr<Run> RunStore::open(const std::string& run_id) {
  const bool bad_name = run_id.empty() || run_id == "." || run_id == ".." ||
                        run_id.find_first_of("/\\") != std::string::npos;
  if (bad_name || !fs::exists(root_ / run_id / std::string(kManifestFile))) {
    throw Error(ErrorKind::kNotFound, "unknown run '" + run_id + "'");
  }
  std::lock_guard lock(mu_);
  auto& slot = cache_[run_id];
  if (!slot) slot = Run::open(root_ / run_id);
  return slot;
}

}  // namespace pragtag::runstore
