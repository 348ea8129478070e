#include "pragtag/pipeline.h"

#include "pragtag/error.h"
#include "pragtag/hash.h"
#include "pragtag/text.h"

namespace pragtag::pipeline {

namespace fs = std::filesystem;

runstore::InstanceOutcome interpret(const gateway::RawResult& result, const corpus::CorpusInstance& instance,
                                    const scheme::AnnotationScheme& scheme, const std::string& run_id,
                                    double min_coverage, std::optional<scheme::Annotation>* prediction) {
  runstore::InstanceOutcome out;
  out.instance_id = instance.id;
  prediction->reset();
  if (result.status != gateway::Status::kOk) {
    out.status = std::string(gateway::to_string(result.status));
    out.diagnostic = result.error;
    return out;
  }
  const auto response = tagparse::interpret_response(result.response_text, instance, scheme,
                                                     scheme::Provenance::llm_run(run_id), min_coverage);
  const auto& conv = response.conversion;
  out.coverage = conv.coverage;
  std::vector<std::string> notes;
  if (!conv.ok()) notes.push_back(conv.failure);
  notes.insert(notes.end(), conv.diagnostics.begin(), conv.diagnostics.end());
  out.diagnostic = text::join(notes, "; ");
  if (conv.ok()) {
    out.status = "OK";
    *prediction = *conv.annotation;
  } else {
    out.status = std::string(runstore::kParseFailure);
  }
  return out;
}

namespace {

// A run directory may only be resumed with the configuration it started with.
void check_resumable(const fs::path& dir, std::string_view name, const std::string& expected) {
  const fs::path p = dir / std::string(name);
  if (fs::exists(p) && read_file(p) != expected) {
    throw_data(p.string() + " differs from the requested configuration; use a fresh run directory");
  }
}

}  // namespace

AnnotateReport annotate(const std::vector<corpus::CorpusInstance>& instances, gateway::ChatBackend& backend,
                        const AnnotateOptions& options) {
  if (const auto problems = scheme::check_scheme(options.scheme); !problems.empty()) {
    throw_data("invalid scheme: " + text::join(problems, "; "));
  }
  if (const auto problems = prompting::check_spec(options.spec); !problems.empty()) {
    throw_data("invalid prompt spec: " + text::join(problems, "; "));
  }
  if (instances.empty()) throw_data("no instances to annotate");
  if (options.run_dir.empty()) throw_usage("a run directory is required");

  const fs::path dir = options.run_dir;
  AnnotateReport report;
  report.run_id = options.run_id.empty() ? fs::absolute(dir).lexically_normal().filename().string() : options.run_id;
  if (report.run_id.empty()) report.run_id = fs::absolute(dir).lexically_normal().parent_path().filename().string();

  const std::string scheme_text = scheme::canonical_text(options.scheme);
  const std::string prompt_text = prompting::canonical_text(options.spec);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw_io("cannot create " + dir.string() + ": " + ec.message());
  check_resumable(dir, runstore::kSchemeFile, scheme_text);
  check_resumable(dir, runstore::kPromptFile, prompt_text);
  write_file(dir / std::string(runstore::kSchemeFile), scheme_text);
  write_file(dir / std::string(runstore::kPromptFile), prompt_text);

  const auto parts = prompting::build_prompt(options.scheme, options.spec);

  gateway::Clock& clock = options.clock ? *options.clock : gateway::system_clock();
  std::optional<gateway::RateLimiter> limiter;
  if (options.backend.rate_limit > 0) limiter.emplace(options.backend.rate_limit, 1.0, clock);

  gateway::BatchOptions batch;
  batch.parallelism = options.backend.parallelism;
  batch.session.max_retries = options.backend.max_retries;
  batch.session.retry_backoff = std::chrono::milliseconds(options.backend.retry_backoff_ms);
  if (!options.backend.refusal_patterns.empty()) {
    batch.session.refusal = gateway::RefusalPolicy::with_patterns(options.backend.refusal_patterns);
  }
  batch.session.limiter = limiter ? &*limiter : nullptr;
  batch.session.clock = &clock;
  batch.checkpoint = dir / std::string(runstore::kCheckpointFile);
  batch.transcript_log = dir / std::string(runstore::kTranscriptLogFile);
  batch.cancel = options.cancel;
  batch.on_complete = options.on_complete;

  const gateway::BatchOutcome outcome = gateway::run_batch(backend, parts, options.spec, instances, batch);
  report.batch = outcome.summary;
  if (outcome.summary.skipped > 0) {
    report.cancelled = true;
    return report;
  }

  runstore::RunData run;
  run.scheme = options.scheme;
  run.prompt = options.spec;
  run.instances = instances;
  run.transcripts.emplace();
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const gateway::SessionResult& sr = *outcome.results[i];
    std::optional<scheme::Annotation> pred;
    run.outcomes.push_back(
        interpret(sr.result, instances[i], options.scheme, report.run_id, options.min_coverage, &pred));
    if (pred) run.predictions.push_back(std::move(*pred));
    if (run.outcomes.back().status == runstore::kParseFailure) ++report.parse_failures;
    if (sr.result.status == gateway::Status::kTimeout || sr.result.status == gateway::Status::kBackendError) {
      ++report.backend_failures;
    }
    run.transcripts->push_back(sr.transcript);
  }
  report.predictions = run.predictions.size();

  run.manifest.run_id = report.run_id;
  run.manifest.created_at = gateway::utc_timestamp();
  run.manifest.scheme_hash = sha256_hex(scheme_text);
  run.manifest.prompt_hash = sha256_hex(prompt_text);
  run.manifest.backend = backend.descriptor();
  run.manifest.instance_count = instances.size();
  for (const auto& [status, n] : outcome.summary.status_counts) {
    run.manifest.status_counts[std::string(gateway::to_string(status))] = n;
  }
  run.manifest.min_coverage = options.min_coverage;
  runstore::save_run(dir, run);
  return report;
}

}  // namespace pragtag::pipeline
