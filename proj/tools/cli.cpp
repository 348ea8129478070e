#include "pragtag/cli.h"

#include <CLI11.hpp>

#include <chrono>
#include <optional>
#include <thread>

#include "pragtag/corpus.h"
#include "pragtag/evaluate.h"
#include "pragtag/gateway.h"
#include "pragtag/pipeline.h"
#include "pragtag/prompting.h"
#include "pragtag/runstore.h"
#include "pragtag/scheme.h"
#include "pragtag/service.h"
#include "pragtag/text.h"

namespace pragtag::cli {

namespace {

struct ExtractArgs {
  std::vector<std::string> corpora;
  std::vector<std::string> markers;
  std::size_t width = corpus::kDefaultWidth;
  std::string output;
  std::string format = "plain";
  std::optional<std::size_t> sample;
  unsigned long long seed = 0;
};

struct PromptArgs {
  std::string spec;
  std::string utterance;
};

struct AnnotateArgs {
  std::string instances;
  std::string backend;
  std::string run;
  std::string run_id;
  bool keep_going = false;
  double min_coverage = tagparse::kDefaultMinCoverage;
};

struct EvalArgs {
  std::string gold;
  std::string pred;
  std::string policy = "exact";
  std::string format = "table";
  std::string output;
};

struct ReportArgs {
  std::string run;
  std::string format = "table";
};

struct ServeArgs {
  std::string store;
  std::string addr = "127.0.0.1:8080";
  std::string static_dir;
};

scheme::AnnotationScheme scheme_or_default(const std::string& path) {
  return path.empty() ? scheme::default_apology_scheme() : scheme::load_scheme(path);
}

prompting::PromptSpec spec_or_default(const std::string& path) {
  return path.empty() ? prompting::default_prompt_spec() : prompting::load_spec(path);
}

eval::ReportFormat report_format(const std::string& name) {
  return name == "structured" ? eval::ReportFormat::kStructured : eval::ReportFormat::kTable;
}

int do_extract(const ExtractArgs& a, const std::string& scheme_path, std::ostream& out, std::ostream& err) {
  const auto fmt = a.format == "lines" ? corpus::CorpusFormat::kOneTokenPerLine : corpus::CorpusFormat::kPlain;
  const std::vector<std::string> markers =
      a.markers.empty() ? scheme_or_default(scheme_path).marker_lexemes : a.markers;
  std::vector<corpus::CorpusInstance> all;
  std::size_t tokens = 0;
  for (const auto& path : a.corpora) {
    const auto stream = corpus::load_corpus(path, fmt);
    tokens += stream.tokens.size();
    auto found = corpus::extract_instances(stream, markers, a.width);
    all.insert(all.end(), std::make_move_iterator(found.begin()), std::make_move_iterator(found.end()));
  }
  if (a.sample) all = corpus::sample_instances(all, *a.sample, a.seed);
  corpus::write_instances(all, a.output);
  err << "scanned " << tokens << " tokens in " << a.corpora.size() << " file(s)\n";
  out << all.size() << " instances written to " << a.output << "\n";
  return kExitOk;
}

int do_prompt_preview(const PromptArgs& a, const std::string& scheme_path, std::ostream& out) {
  const auto scheme = scheme_or_default(scheme_path);
  const auto spec = spec_or_default(a.spec);
  const auto parts = prompting::build_prompt(scheme, spec);
  const auto layout = prompting::part_layout(scheme, spec);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    out << "=== part " << i + 1 << "/" << parts.size() << ": " << layout[i] << " exemplars, " << parts[i].size()
        << " characters (budget " << spec.part_budget << ") ===\n"
        << parts[i] << "\n\n";
  }
  if (!a.utterance.empty()) {
    out << "=== question ===\n" << prompting::render_question(spec, corpus::split_whitespace(a.utterance)) << "\n";
  }
  return kExitOk;
}

int do_prompt_lint(const PromptArgs& a, const std::string& scheme_path, std::ostream& out) {
  const auto findings = prompting::lint_prompt(spec_or_default(a.spec), scheme_or_default(scheme_path));
  bool has_error = false;
  for (const auto& f : findings) {
    out << prompting::to_string(f.severity) << " (" << prompting::factor_label(f.factor) << ") " << f.code;
    if (!f.location.empty()) out << " [" << f.location << "]";
    out << ": " << f.message << "\n";
    has_error = has_error || f.severity == prompting::Severity::kError;
  }
  out << findings.size() << " finding(s)\n";
  return has_error ? kExitData : kExitOk;
}

int do_annotate(const AnnotateArgs& a, const std::string& scheme_path, const std::string& spec_path,
                bool quiet, std::ostream& out, std::ostream& err, const std::atomic<bool>* cancel) {
  const auto instances = corpus::read_instances(a.instances);
  pipeline::AnnotateOptions opt;
  opt.scheme = scheme_or_default(scheme_path);
  opt.spec = spec_or_default(spec_path);
  opt.backend = gateway::load_backend_config(a.backend);
  opt.run_dir = a.run;
  opt.run_id = a.run_id;
  opt.min_coverage = a.min_coverage;
  opt.cancel = cancel;
  std::size_t done = 0;
  if (!quiet) {
    opt.on_complete = [&](const gateway::SessionResult& sr) {
      ++done;
      err << "[" << done << "] " << sr.result.instance_id << " " << gateway::to_string(sr.result.status);
      if (!sr.result.error.empty()) err << " (" << sr.result.error << ")";
      err << "\n";
    };
  }
  const auto backend = gateway::make_backend(opt.backend);
  const auto report = pipeline::annotate(instances, *backend, opt);
  if (report.cancelled) {
    err << "interrupted: " << report.batch.queried << " queried this session, " << report.batch.skipped
        << " not started; rerun the same command to resume\n";
    return kExitInterrupted;
  }
  out << "run " << report.run_id << ": " << instances.size() << " instances, " << report.batch.resumed
      << " from checkpoint, " << report.predictions << " predictions, " << report.parse_failures
      << " parse failures";
  for (const auto& [status, n] : report.batch.status_counts) out << ", " << gateway::to_string(status) << "=" << n;
  out << "\n";
  if (report.backend_failures > 0 && !a.keep_going) {
    err << report.backend_failures << " instance(s) failed at the backend; rerun to retry them or pass --keep-going\n";
    return kExitBackend;
  }
  return kExitOk;
}

int do_eval(const EvalArgs& a, const std::string& scheme_path, std::ostream& out) {
  const auto policy = eval::MatchPolicy::parse(a.policy);
  const auto scheme = scheme_or_default(scheme_path);
  const auto gold = scheme::read_annotations(a.gold);
  const auto pred = scheme::read_annotations(a.pred);
  const auto report = eval::evaluate(eval::pair_by_id(gold, pred), scheme, policy);
  const std::string text = eval::render_report(report, report_format(a.format));
  if (a.output.empty()) out << text;
  else write_file(a.output, text);
  return kExitOk;
}

int do_report(const ReportArgs& a, std::ostream& out, std::ostream& err) {
  const auto run = runstore::Run::open(a.run);
  for (const auto& w : run->warnings()) err << "warning: " << w << "\n";
  const auto& m = run->data().manifest;
  const auto metrics = run->live_metrics();
  if (a.format == "structured") {
    Json j;
    j["manifest"] = runstore::to_json(m);
    j["warnings"] = run->warnings();
    j["reviewed"] = run->latest_verdicts().size();
    j["metrics"] = eval::to_json(metrics);
    out << j.dump(2) << "\n";
    return kExitOk;
  }
  out << "Run         " << m.run_id << "\n"
      << "Created     " << m.created_at << "\n"
      << "Backend     " << m.backend << "\n"
      << "Instances   " << m.instance_count << "\n"
      << "Predictions " << run->data().predictions.size() << "\n";
  std::size_t parse_failures = 0;
  for (const auto& o : run->data().outcomes) parse_failures += o.status == runstore::kParseFailure;
  out << "Statuses   ";
  for (const auto& [status, n] : m.status_counts) out << " " << status << "=" << n;
  out << " " << runstore::kParseFailure << "=" << parse_failures << "\n";
  out << "Reviewed    " << run->latest_verdicts().size() << "\n\n";
  out << eval::render_report(metrics, eval::ReportFormat::kTable);
  return kExitOk;
}

int do_serve(const ServeArgs& a, std::ostream& err, const std::atomic<bool>* cancel) {
  const auto colon = a.addr.rfind(':');
  if (colon == std::string::npos) throw_usage("--addr must be host:port");
  const std::string host = a.addr.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(a.addr.substr(colon + 1));
  } catch (const std::exception&) {
    throw_usage("--addr must be host:port");
  }
  if (port < 0 || port > 65535) throw_usage("port out of range");
  runstore::RunStore store(a.store);
  service::ReviewServer server(store, a.static_dir);
  const int bound = server.start(host, port);
  err << "serving " << store.list_runs().size() << " run(s) on http://" << host << ":" << bound << "/api\n";
  while (!(cancel && cancel->load())) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  err << "stopped\n";
  return kExitOk;
}

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::kUsage: return kExitUsage;
    case ErrorKind::kBackend: return kExitBackend;
    default: return kExitData;
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const std::atomic<bool>* cancel) {
  CLI::App app{"Speech-act annotation toolkit: extract instances, build prompts, query a chat backend, "
               "score annotations and serve runs for review."};
  app.name("pragtag");
  app.require_subcommand(1);
  app.fallthrough();
  std::string scheme_path, spec_path;
  bool quiet = false;
  app.add_option("--scheme", scheme_path, "Annotation scheme file (default: built-in apology scheme)")
      ->check(CLI::ExistingFile);
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "Cut marker-centred instances out of corpus files");
  extract->add_option("corpus", ex.corpora, "Corpus text file(s)")->required()->check(CLI::ExistingFile);
  extract->add_option("--marker", ex.markers, "Marker lexeme, repeatable (default: the scheme's markers)");
  extract->add_option("--width", ex.width, "Tokens per instance")->check(CLI::PositiveNumber);
  extract->add_option("-o,--output", ex.output, "Instances file to write")->required();
  extract->add_option("--format", ex.format, "Corpus layout")->check(CLI::IsMember({"plain", "lines"}));
  extract->add_option("--sample", ex.sample, "Keep a random sample of N instances");
  extract->add_option("--seed", ex.seed, "Seed for --sample");

  PromptArgs pa;
  auto* prompt = app.add_subcommand("prompt", "Inspect the few-shot prompt");
  prompt->require_subcommand(1);
  prompt->fallthrough();
  auto* preview = prompt->add_subcommand("preview", "Print the prompt parts as they will be sent");
  preview->add_option("--spec", pa.spec, "Prompt spec file (default: built-in)")->check(CLI::ExistingFile);
  preview->add_option("--utterance", pa.utterance, "Also render the question for this utterance");
  auto* lint = prompt->add_subcommand("lint", "Check the prompt against the design heuristics");
  lint->add_option("--spec", pa.spec, "Prompt spec file (default: built-in)")->check(CLI::ExistingFile);

  AnnotateArgs an;
  auto* annotate = app.add_subcommand("annotate", "Query a backend for every instance and write a run directory");
  annotate->add_option("--instances", an.instances, "Instances file")->required()->check(CLI::ExistingFile);
  annotate->add_option("--backend", an.backend, "Backend config file")->required()->check(CLI::ExistingFile);
  annotate->add_option("--run", an.run, "Run directory (resumed when it holds a checkpoint)")->required();
  annotate->add_option("--spec", spec_path, "Prompt spec file (default: built-in)")->check(CLI::ExistingFile);
  annotate->add_option("--run-id", an.run_id, "Run id (default: run directory name)");
  annotate->add_option("--min-coverage", an.min_coverage, "Minimum alignment coverage for a prediction")
      ->check(CLI::Range(0.0, 1.0));
  annotate->add_flag("--keep-going", an.keep_going, "Exit 0 even when some instances failed at the backend");

  EvalArgs ev;
  auto* evaluate = app.add_subcommand("eval", "Score predicted annotations against gold");
  evaluate->add_option("--gold", ev.gold, "Gold annotations file")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--pred", ev.pred, "Predicted annotations file")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--policy", ev.policy, "exact or overlap:<t>");
  evaluate->add_option("--format", ev.format, "Output format")->check(CLI::IsMember({"table", "structured"}));
  evaluate->add_option("-o,--output", ev.output, "Write the report here instead of standard output");

  ReportArgs rp;
  auto* report = app.add_subcommand("report", "Summarize a run and its review progress");
  report->add_option("--run", rp.run, "Run directory")->required()->check(CLI::ExistingDirectory);
  report->add_option("--format", rp.format, "Output format")->check(CLI::IsMember({"table", "structured"}));

  ServeArgs sv;
  auto* serve = app.add_subcommand("serve", "Serve the review API over HTTP");
  serve->add_option("--run-store", sv.store, "Directory of run directories")->required()->check(
      CLI::ExistingDirectory);
  serve->add_option("--addr", sv.addr, "host:port to listen on");
  serve->add_option("--static", sv.static_dir, "Directory of static files served at /")
      ->check(CLI::ExistingDirectory);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().back()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\nrun with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (*extract) return do_extract(ex, scheme_path, out, err);
    if (*preview) return do_prompt_preview(pa, scheme_path, out);
    if (*lint) return do_prompt_lint(pa, scheme_path, out);
    if (*annotate) return do_annotate(an, scheme_path, spec_path, quiet, out, err, cancel);
    if (*evaluate) return do_eval(ev, scheme_path, out);
    if (*report) return do_report(rp, out, err);
    if (*serve) return do_serve(sv, err, cancel);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace pragtag::cli
