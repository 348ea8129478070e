#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pragtag/corpus.h"
#include "pragtag/gateway.h"
#include "pragtag/prompting.h"
#include "pragtag/runstore.h"
#include "pragtag/scheme.h"
#include "pragtag/tagparse.h"

namespace pragtag::pipeline {

struct AnnotateOptions {
  scheme::AnnotationScheme scheme = scheme::default_apology_scheme();
  prompting::PromptSpec spec = prompting::default_prompt_spec();
  gateway::BackendConfig backend;
  std::filesystem::path run_dir;
  std::string run_id;  // defaults to the run directory's name
  double min_coverage = tagparse::kDefaultMinCoverage;
  const std::atomic<bool>* cancel = nullptr;
  gateway::Clock* clock = nullptr;  // rate limiting and backoff; system clock when null
  std::function<void(const gateway::SessionResult&)> on_complete;
};

struct AnnotateReport {
  std::string run_id;
  gateway::BatchSummary batch;
  std::size_t predictions = 0;
  std::size_t parse_failures = 0;
  std::size_t backend_failures = 0;  // TIMEOUT and BACKEND_ERROR
  bool cancelled = false;            // run files not written; checkpoint kept
};

/// Queries `backend` for every instance and writes a complete run directory.
/// Rerunning on the same directory resumes from its checkpoint.
AnnotateReport annotate(const std::vector<corpus::CorpusInstance>& instances, gateway::ChatBackend& backend,
                        const AnnotateOptions& options);

/// Converts one gateway result into a run outcome and, when it parses, a prediction.
runstore::InstanceOutcome interpret(const gateway::RawResult& result, const corpus::CorpusInstance& instance,
                                    const scheme::AnnotationScheme& scheme, const std::string& run_id,
                                    double min_coverage, std::optional<scheme::Annotation>* prediction);

}  // namespace pragtag::pipeline
