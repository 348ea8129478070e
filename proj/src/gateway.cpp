#include "pragtag/gateway.h"

#include <httplib.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <set>
#include <thread>

#include "pragtag/error.h"
#include "pragtag/text.h"

namespace pragtag::gateway {

std::string_view to_string(Status status) {
  switch (status) {
    case Status::kOk: return "OK";
    case Status::kRefused: return "REFUSED";
    case Status::kTimeout: return "TIMEOUT";
    case Status::kBackendError: return "BACKEND_ERROR";
  }
  return "BACKEND_ERROR";
}

Status status_from_string(std::string_view s) {
  for (auto st : {Status::kOk, Status::kRefused, Status::kTimeout, Status::kBackendError}) {
    if (to_string(st) == s) return st;
  }
  throw_data("unknown status '" + std::string(s) + "'");
}

namespace {

std::string_view role_name(Role r) { return r == Role::kUser ? "user" : "assistant"; }

Role role_from_string(std::string_view s) {
  if (s == "user") return Role::kUser;
  if (s == "assistant") return Role::kAssistant;
  throw_data("unknown role '" + std::string(s) + "'");
}

}  // namespace

Json to_json(const RawResult& r) {
  Json j;
  j["instance_id"] = r.instance_id;
  j["status"] = std::string(to_string(r.status));
  j["response_text"] = r.response_text;
  j["attempt_count"] = r.attempt_count;
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

RawResult raw_result_from_json(const Json& j) {
  RawResult r;
  r.instance_id = require_string(j, "instance_id");
  r.status = status_from_string(require_string(j, "status"));
  r.response_text = require_string(j, "response_text");
  r.attempt_count = static_cast<int>(require_int(j, "attempt_count"));
  if (j.contains("error")) r.error = require_string(j, "error");
  if (r.status == Status::kOk && r.response_text.empty()) {
    throw_data("OK result for '" + r.instance_id + "' has empty response_text");
  }
  return r;
}

Json to_json(const Transcript& t) {
  Json j;
  j["instance_id"] = t.instance_id;
  Json turns = Json::array();
  for (const auto& turn : t.turns) {
    Json tj;
    tj["role"] = std::string(role_name(turn.role));
    tj["text"] = turn.text;
    turns.push_back(std::move(tj));
  }
  j["turns"] = std::move(turns);
  j["backend"] = t.backend;
  j["started_at"] = t.started_at;
  j["ended_at"] = t.ended_at;
  j["attempt_count"] = t.attempt_count;
  return j;
}

Transcript transcript_from_json(const Json& j) {
  Transcript t;
  t.instance_id = require_string(j, "instance_id");
  for (const auto& tj : require(j, "turns")) {
    t.turns.push_back({role_from_string(require_string(tj, "role")), require_string(tj, "text")});
  }
  t.backend = require_string(j, "backend");
  t.started_at = require_string(j, "started_at");
  t.ended_at = require_string(j, "ended_at");
  t.attempt_count = static_cast<int>(require_int(j, "attempt_count"));
  return t;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

// Drops user-info and query from a URL so descriptors never carry secrets.
std::string redact_url(const std::string& url) {
  std::string out = url;
  const auto q = out.find_first_of("?#");
  if (q != std::string::npos) out.erase(q);
  const auto scheme_end = out.find("://");
  const std::size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  const auto at = out.find('@', host_start);
  const auto slash = out.find('/', host_start);
  if (at != std::string::npos && (slash == std::string::npos || at < slash)) {
    out.erase(host_start, at + 1 - host_start);
  }
  return out;
}

}  // namespace

std::vector<std::string> BackendConfig::problems() const {
  std::vector<std::string> out;
  if (kind == BackendKind::kReplay && fixture.empty()) out.push_back("replay backend requires a fixture path");
  if (kind == BackendKind::kHttpChat) {
    if (endpoint.empty()) out.push_back("http-chat backend requires an endpoint");
    else if (!endpoint.starts_with("http://") && !endpoint.starts_with("https://")) {
      out.push_back("endpoint must start with http:// or https://");
    }
    if (model_name.empty()) out.push_back("http-chat backend requires model_name");
  }
  if (rate_limit < 0 || !std::isfinite(rate_limit)) out.push_back("rate_limit must be >= 0");
  if (max_retries < 0) out.push_back("max_retries must be >= 0");
  if (!(timeout_seconds > 0)) out.push_back("timeout must be > 0");
  if (parallelism < 1) out.push_back("parallelism must be >= 1");
  if (retry_backoff_ms < 0) out.push_back("retry_backoff_ms must be >= 0");
  return out;
}

std::string BackendConfig::descriptor() const {
  if (kind == BackendKind::kReplay) return "replay:" + fixture.filename().string();
  return "http-chat:" + model_name + "@" + redact_url(endpoint);
}

BackendConfig backend_config_from_json(const Json& j, const std::filesystem::path& base_dir) {
  static const std::set<std::string> kKnown = {
      "kind",    "fixture",     "endpoint",         "model_name",      "auth_env_var",    "rate_limit",
      "max_retries", "timeout", "parallelism",      "retry_backoff_ms", "refusal_patterns"};
  if (!j.is_object()) throw_data("backend config must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!kKnown.count(key)) throw_data("unknown backend config field '" + key + "'");
  }
  BackendConfig c;
  const std::string kind = require_string(j, "kind");
  if (kind == "replay") c.kind = BackendKind::kReplay;
  else if (kind == "http-chat") c.kind = BackendKind::kHttpChat;
  else throw_data("unknown backend kind '" + kind + "' (expected replay or http-chat)");

  auto number = [&](const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number()) throw_data(std::string("field '") + key + "' must be a number");
    return j.at(key).get<double>();
  };
  auto integer = [&](const char* key, long long fallback) {
    if (!j.contains(key)) return fallback;
    return require_int(j, key);
  };
  if (j.contains("fixture")) {
    std::filesystem::path p = require_string(j, "fixture");
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    c.fixture = p;
  }
  if (j.contains("endpoint")) c.endpoint = require_string(j, "endpoint");
  if (j.contains("model_name")) c.model_name = require_string(j, "model_name");
  if (j.contains("auth_env_var")) c.auth_env_var = require_string(j, "auth_env_var");
  c.rate_limit = number("rate_limit", c.rate_limit);
  c.max_retries = static_cast<int>(integer("max_retries", c.max_retries));
  c.timeout_seconds = number("timeout", c.timeout_seconds);
  const long long par = integer("parallelism", 1);
  if (par < 1) throw_data("parallelism must be >= 1");
  c.parallelism = static_cast<std::size_t>(par);
  c.retry_backoff_ms = static_cast<int>(integer("retry_backoff_ms", c.retry_backoff_ms));
  if (j.contains("refusal_patterns")) {
    for (const auto& p : j.at("refusal_patterns")) {
      if (!p.is_string()) throw_data("refusal_patterns must be strings");
      c.refusal_patterns.push_back(p.get<std::string>());
    }
  }
  const auto problems = c.problems();
  if (!problems.empty()) throw_data("invalid backend config: " + text::join(problems, "; "));
  return c;
}

BackendConfig load_backend_config(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::exception& e) {
    throw_data(path.string() + ": " + e.what());
  }
  try {
    return backend_config_from_json(j, path.parent_path());
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Replay

ReplayBackend::ReplayBackend(std::unordered_map<std::string, std::string> responses, std::string label)
    : responses_(std::move(responses)), label_(std::move(label)) {}

ChatReply ReplayBackend::send(const ChatRequest& request) {
  if (!request.is_question) return ChatReply::ok(std::string(kReplayAcknowledgement));
  const auto it = responses_.find(request.instance_id);
  if (it == responses_.end()) return ChatReply::fatal("no fixture response for '" + request.instance_id + "'");
  return ChatReply::ok(it->second);
}

std::string ReplayBackend::descriptor() const { return label_; }

std::unique_ptr<ReplayBackend> make_replay_backend(const std::filesystem::path& fixture) {
  using Entry = std::pair<std::string, std::string>;
  const auto entries = read_jsonl<Entry>(fixture, [](const Json& j) {
    return Entry{require_string(j, "instance_id"), require_string(j, "response_text")};
  });
  std::unordered_map<std::string, std::string> map;
  for (const auto& [id, text] : entries) {
    if (!map.emplace(id, text).second) throw_data(fixture.string() + ": duplicate instance_id '" + id + "'");
  }
  return std::make_unique<ReplayBackend>(std::move(map), "replay:" + fixture.filename().string());
}

// ---------------------------------------------------------------------------
// HTTP chat

HttpChatBackend::HttpChatBackend(BackendConfig config) : config_(std::move(config)) {
  const auto problems = config_.problems();
  if (!problems.empty()) throw_usage("invalid backend config: " + text::join(problems, "; "));
  const auto scheme_end = config_.endpoint.find("://");
  const auto slash = config_.endpoint.find('/', scheme_end + 3);
  scheme_host_port_ = config_.endpoint.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : config_.endpoint.substr(slash);
}

Json HttpChatBackend::request_body(const std::vector<Turn>& messages) const {
  Json body;
  body["model"] = config_.model_name;
  Json list = Json::array();
  for (const auto& m : messages) {
    Json mj;
    mj["role"] = std::string(role_name(m.role));
    mj["content"] = m.text;
    list.push_back(std::move(mj));
  }
  body["messages"] = std::move(list);
  body["temperature"] = 0;
  return body;
}

namespace {

std::string scrub(std::string text, const std::string& secret) {
  if (secret.empty()) return text;
  for (auto pos = text.find(secret); pos != std::string::npos; pos = text.find(secret, pos)) {
    text.replace(pos, secret.size(), "[redacted]");
  }
  return text;
}

std::string snippet(const std::string& body) {
  return body.size() > 200 ? body.substr(0, 200) + "..." : body;
}

}  // namespace

ChatReply HttpChatBackend::send(const ChatRequest& request) {
  std::string secret;
  if (!config_.auth_env_var.empty()) {
    const char* value = std::getenv(config_.auth_env_var.c_str());
    if (value == nullptr || *value == '\0') {
      return ChatReply::fatal("environment variable " + config_.auth_env_var + " is not set");
    }
    secret = value;
  }

  httplib::Client client(scheme_host_port_);
  const auto whole = std::chrono::duration<double>(config_.timeout_seconds);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(whole);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(whole - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  httplib::Headers headers;
  if (!secret.empty()) headers.emplace("Authorization", "Bearer " + secret);
  const auto res = client.Post(path_, headers, request_body(request.messages).dump(), "application/json");

  if (!res) {
    const auto err = res.error();
    const std::string what = httplib::to_string(err);
    if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout) {
      return ChatReply::timeout("request timed out (" + what + ")");
    }
    return ChatReply::retryable("transport error: " + what);
  }
  const std::string detail = scrub(snippet(res->body), secret);
  if (res->status == 429 || res->status >= 500) {
    return ChatReply::retryable("HTTP " + std::to_string(res->status) + ": " + detail);
  }
  if (res->status != 200) return ChatReply::fatal("HTTP " + std::to_string(res->status) + ": " + detail);

  try {
    const Json body = Json::parse(res->body);
    const Json& content = body.at("choices").at(0).at("message").at("content");
    if (!content.is_string() || content.get<std::string>().empty()) {
      return ChatReply::fatal("response carries no message content");
    }
    return ChatReply::ok(content.get<std::string>());
  } catch (const Json::exception&) {
    return ChatReply::fatal("malformed response body: " + detail);
  }
}

std::string HttpChatBackend::descriptor() const { return config_.descriptor(); }

std::unique_ptr<ChatBackend> make_backend(const BackendConfig& config) {
  const auto problems = config.problems();
  if (!problems.empty()) throw_usage("invalid backend config: " + text::join(problems, "; "));
  if (config.kind == BackendKind::kReplay) return make_replay_backend(config.fixture);
  return std::make_unique<HttpChatBackend>(config);
}

// ---------------------------------------------------------------------------
// Pacing

namespace {

class SteadyClock final : public Clock {
 public:
  TimePoint now() override { return std::chrono::steady_clock::now(); }
  void sleep_until(TimePoint t) override { std::this_thread::sleep_until(t); }
};

}  // namespace

Clock& system_clock() {
  static SteadyClock clock;
  return clock;
}

RateLimiter::RateLimiter(double per_minute, double burst, Clock& clock) : per_minute_(per_minute), clock_(clock) {
  if (per_minute < 0 || !std::isfinite(per_minute)) throw_usage("rate limit must be >= 0");
  if (burst < 1) throw_usage("burst must be >= 1");
  if (per_minute > 0) {
    interval_ = std::chrono::nanoseconds(static_cast<long long>(60e9 / per_minute));
    tolerance_ = std::chrono::nanoseconds(static_cast<long long>((burst - 1) * static_cast<double>(interval_.count())));
  }
}

void RateLimiter::acquire() {
  if (per_minute_ == 0) return;
  std::lock_guard lock(mu_);
  auto now = clock_.now();
  const auto tat = theoretical_arrival_ ? std::max(*theoretical_arrival_, now) : now;
  const auto allowed_at = tat - tolerance_;
  if (allowed_at > now) {
    clock_.sleep_until(allowed_at);
    now = clock_.now();
  }
  theoretical_arrival_ = tat + interval_;
}

// ---------------------------------------------------------------------------
// Sessions

RefusalPolicy RefusalPolicy::defaults() {
  return with_patterns({"unable to", "cannot", "can't", "can not", "not able to", "i'm sorry, but",
                        "i am sorry, but", "i apologize, but", "i won't", "not comfortable"});
}

RefusalPolicy RefusalPolicy::with_patterns(std::vector<std::string> patterns) {
  RefusalPolicy p;
  p.answer_markers = {"annotated version", "speech act of", "</"};
  p.patterns = std::move(patterns);
  return p;
}

bool RefusalPolicy::is_refusal(std::string_view response) const {
  const std::string folded = text::fold_typography(response);
  for (const auto& m : answer_markers) {
    if (text::contains_ci(folded, m)) return false;
  }
  return std::any_of(patterns.begin(), patterns.end(),
                     [&](const std::string& p) { return text::contains_ci(folded, text::fold_typography(p)); });
}

SessionResult annotate_instance(ChatBackend& backend, const std::vector<std::string>& prompt_parts,
                                const std::string& question, const std::string& instance_id,
                                const SessionOptions& options) {
  if (prompt_parts.empty()) throw_usage("annotate_instance needs at least one prompt part");
  Clock& clock = options.clock ? *options.clock : system_clock();

  SessionResult out;
  RawResult& result = out.result;
  Transcript& tr = out.transcript;
  result.instance_id = tr.instance_id = instance_id;
  tr.backend = backend.descriptor();
  tr.started_at = utc_timestamp();

  int retries = 0;
  auto finish = [&](Status status, std::string response, std::string error) {
    result.status = status;
    result.response_text = std::move(response);
    result.error = std::move(error);
    result.attempt_count = tr.attempt_count = 1 + retries;
    tr.ended_at = utc_timestamp();
    return out;
  };

  std::vector<std::string> messages = prompt_parts;
  messages.push_back(question);
  for (std::size_t m = 0; m < messages.size(); ++m) {
    const bool is_question = m + 1 == messages.size();
    tr.turns.push_back({Role::kUser, messages[m]});
    int tries_here = 0;
    while (true) {
      if (options.limiter) options.limiter->acquire();
      ChatReply reply;
      try {
        reply = backend.send({instance_id, tr.turns, is_question});
      } catch (const std::exception& e) {
        reply = ChatReply::fatal(std::string("backend raised: ") + e.what());
      }
      if (reply.outcome == ChatReply::Outcome::kOk) {
        tr.turns.push_back({Role::kAssistant, reply.text});
        break;
      }
      if (reply.outcome == ChatReply::Outcome::kFatal) return finish(Status::kBackendError, "", reply.error);
      if (tries_here >= options.max_retries) {
        const Status st = reply.outcome == ChatReply::Outcome::kTimeout ? Status::kTimeout : Status::kBackendError;
        return finish(st, "", reply.error);
      }
      ++tries_here;
      ++retries;
      if (options.retry_backoff.count() > 0) {
        clock.sleep_until(clock.now() + options.retry_backoff * (1 << std::min(tries_here - 1, 10)));
      }
    }
  }
  std::string response = tr.turns.back().text;
  const Status st = options.refusal.is_refusal(response) ? Status::kRefused : Status::kOk;
  return finish(st, std::move(response), "");
}

// ---------------------------------------------------------------------------
// Batches

std::map<std::string, RawResult> read_checkpoint(const std::filesystem::path& path) {
  std::map<std::string, RawResult> out;
  if (path.empty() || !std::filesystem::exists(path)) return out;
  const std::string text = read_file(path);
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const bool last = nl == std::string::npos;
    const std::string line = text.substr(pos, last ? std::string::npos : nl - pos);
    ++line_no;
    pos = last ? text.size() : nl + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      RawResult r = raw_result_from_json(Json::parse(line));
      out[r.instance_id] = std::move(r);
    } catch (const std::exception& e) {
      // A torn final line is what an interrupted append leaves behind.
      if (last) break;
      detail::throw_line_error(path.string(), line_no, e.what());
    }
  }
  return out;
}

namespace {

std::map<std::string, Transcript> read_transcript_log(const std::filesystem::path& path) {
  std::map<std::string, Transcript> out;
  if (path.empty() || !std::filesystem::exists(path)) return out;
  const std::string text = read_file(path);
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() : nl + 1;
    try {
      Transcript t = transcript_from_json(Json::parse(line));
      out[t.instance_id] = std::move(t);
    } catch (const std::exception&) {
      // transcripts are advisory; a damaged record just loses its history
    }
  }
  return out;
}

bool is_final(Status s) { return s == Status::kOk || s == Status::kRefused; }

}  // namespace

BatchOutcome run_batch(ChatBackend& backend, const std::vector<std::string>& prompt_parts,
                       const prompting::PromptSpec& spec, const std::vector<corpus::CorpusInstance>& instances,
                       const BatchOptions& options) {
  if (instances.empty()) throw_usage("run_batch needs at least one instance");
  if (options.parallelism < 1) throw_usage("parallelism must be >= 1");
  std::set<std::string> ids;
  for (const auto& inst : instances) {
    if (!ids.insert(inst.id).second) throw_data("duplicate instance id '" + inst.id + "'");
  }

  BatchOutcome outcome;
  outcome.results.resize(instances.size());
  outcome.summary.total = instances.size();

  const auto checkpoint = read_checkpoint(options.checkpoint);
  const auto transcripts = read_transcript_log(options.transcript_log);
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto it = checkpoint.find(instances[i].id);
    if (it != checkpoint.end() && is_final(it->second.status)) {
      SessionResult sr;
      sr.result = it->second;
      sr.from_checkpoint = true;
      const auto t = transcripts.find(instances[i].id);
      if (t != transcripts.end()) {
        sr.transcript = t->second;
      } else {
        sr.transcript.instance_id = instances[i].id;
        sr.transcript.backend = backend.descriptor();
        sr.transcript.attempt_count = it->second.attempt_count;
      }
      outcome.results[i] = std::move(sr);
      ++outcome.summary.resumed;
    } else {
      pending.push_back(i);
    }
  }

  std::mutex write_mu;
  std::atomic<std::size_t> next{0};
  auto cancelled = [&] { return options.cancel && options.cancel->load(); };
  auto worker = [&] {
    while (!cancelled()) {
      const std::size_t k = next.fetch_add(1);
      if (k >= pending.size()) return;
      const std::size_t i = pending[k];
      const auto& inst = instances[i];
      SessionResult sr =
          annotate_instance(backend, prompt_parts, prompting::render_question(spec, inst), inst.id, options.session);
      std::lock_guard lock(write_mu);
      if (!options.checkpoint.empty()) append_line(options.checkpoint, to_json(sr.result).dump());
      if (!options.transcript_log.empty()) append_line(options.transcript_log, to_json(sr.transcript).dump());
      ++outcome.summary.queried;
      if (options.on_complete) options.on_complete(sr);
      outcome.results[i] = std::move(sr);
    }
  };

  const std::size_t n_threads = std::min(options.parallelism, pending.size());
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  for (const auto& r : outcome.results) {
    if (r) ++outcome.summary.status_counts[r->result.status];
    else ++outcome.summary.skipped;
  }
  return outcome;
}

}  // namespace pragtag::gateway
