#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pragtag/corpus.h"
#include "pragtag/jsonl.h"
#include "pragtag/prompting.h"

namespace pragtag::gateway {

enum class Role { kUser, kAssistant };

struct Turn {
  Role role = Role::kUser;
  std::string text;

  bool operator==(const Turn&) const = default;
};

enum class Status { kOk, kRefused, kTimeout, kBackendError };

std::string_view to_string(Status status);
Status status_from_string(std::string_view text);

struct RawResult {
  std::string instance_id;
  Status status = Status::kBackendError;
  std::string response_text;  // empty unless OK or REFUSED
  int attempt_count = 0;
  std::string error;          // diagnostic for TIMEOUT / BACKEND_ERROR

  bool operator==(const RawResult&) const = default;
};

/// One fresh chat session per instance.
struct Transcript {
  std::string instance_id;
  std::vector<Turn> turns;
  std::string backend;
  std::string started_at;  // ISO-8601 UTC
  std::string ended_at;
  int attempt_count = 0;

  bool operator==(const Transcript&) const = default;
};

Json to_json(const RawResult& result);
RawResult raw_result_from_json(const Json& j);
Json to_json(const Transcript& transcript);
Transcript transcript_from_json(const Json& j);

std::string utc_timestamp();

// ---------------------------------------------------------------------------
// Backends

struct ChatRequest {
  std::string instance_id;
  std::vector<Turn> messages;  // full history, last entry is the new user turn
  bool is_question = false;    // false while priming with prompt parts
};

struct ChatReply {
  enum class Outcome { kOk, kRetryable, kTimeout, kFatal };

  Outcome outcome = Outcome::kOk;
  std::string text;
  std::string error;

  static ChatReply ok(std::string text) { return {Outcome::kOk, std::move(text), {}}; }
  static ChatReply retryable(std::string error) { return {Outcome::kRetryable, {}, std::move(error)}; }
  static ChatReply timeout(std::string error) { return {Outcome::kTimeout, {}, std::move(error)}; }
  static ChatReply fatal(std::string error) { return {Outcome::kFatal, {}, std::move(error)}; }
};

/// Implementations must tolerate concurrent send() calls.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ChatReply send(const ChatRequest& request) = 0;
  /// Credential-free description recorded in transcripts and manifests.
  virtual std::string descriptor() const = 0;
};

enum class BackendKind { kReplay, kHttpChat };

struct BackendConfig {
  BackendKind kind = BackendKind::kReplay;
  std::filesystem::path fixture;  // replay only
  std::string endpoint;           // http-chat only
  std::string model_name;
  std::string auth_env_var;
  double rate_limit = 0;          // requests per minute; 0 = unlimited
  int max_retries = 2;
  double timeout_seconds = 60;
  std::size_t parallelism = 1;
  int retry_backoff_ms = 1000;
  std::vector<std::string> refusal_patterns;  // empty = defaults

  /// Empty when the config is usable.
  std::vector<std::string> problems() const;
  std::string descriptor() const;
};

/// Relative fixture paths resolve against the config file's directory.
BackendConfig load_backend_config(const std::filesystem::path& path);
BackendConfig backend_config_from_json(const Json& j, const std::filesystem::path& base_dir = {});

/// Acknowledgement the replay backend gives to each priming part.
inline constexpr std::string_view kReplayAcknowledgement =
    "Thank you for sharing this information with me. I have learned the contents.";

class ReplayBackend final : public ChatBackend {
 public:
  explicit ReplayBackend(std::unordered_map<std::string, std::string> responses,
                         std::string label = "replay");
  ChatReply send(const ChatRequest& request) override;
  std::string descriptor() const override;

  std::size_t size() const { return responses_.size(); }

 private:
  std::unordered_map<std::string, std::string> responses_;
  std::string label_;
};

/// Fixture: line-delimited {instance_id, response_text}.
std::unique_ptr<ReplayBackend> make_replay_backend(const std::filesystem::path& fixture);

/// Chat-completions style client: POST {model, messages, temperature: 0} with
/// a bearer token read from the configured environment variable.
class HttpChatBackend final : public ChatBackend {
 public:
  explicit HttpChatBackend(BackendConfig config);
  ChatReply send(const ChatRequest& request) override;
  std::string descriptor() const override;

  /// Request body for a message history (exposed for conformance tests).
  Json request_body(const std::vector<Turn>& messages) const;

 private:
  BackendConfig config_;
  std::string scheme_host_port_;
  std::string path_;
};

std::unique_ptr<ChatBackend> make_backend(const BackendConfig& config);

// ---------------------------------------------------------------------------
// Pacing

class Clock {
 public:
  using TimePoint = std::chrono::steady_clock::time_point;
  virtual ~Clock() = default;
  virtual TimePoint now() = 0;
  virtual void sleep_until(TimePoint t) = 0;
};

Clock& system_clock();

/// Token bucket: over any interval of length T at most burst + T * rate
/// requests are admitted.
class RateLimiter {
 public:
  RateLimiter(double per_minute, double burst, Clock& clock);
  void acquire();

 private:
  double per_minute_;
  std::chrono::nanoseconds interval_{};
  std::chrono::nanoseconds tolerance_{};
  Clock& clock_;
  std::mutex mu_;
  std::optional<Clock::TimePoint> theoretical_arrival_;
};

// ---------------------------------------------------------------------------
// Sessions

struct RefusalPolicy {
  std::vector<std::string> answer_markers;
  std::vector<std::string> patterns;

  static RefusalPolicy defaults();
  static RefusalPolicy with_patterns(std::vector<std::string> patterns);
  bool is_refusal(std::string_view response) const;
};

struct SessionOptions {
  int max_retries = 2;
  std::chrono::milliseconds retry_backoff{0};
  RefusalPolicy refusal = RefusalPolicy::defaults();
  RateLimiter* limiter = nullptr;
  Clock* clock = nullptr;  // used for backoff sleeps; system clock when null
};

struct SessionResult {
  RawResult result;
  Transcript transcript;
  bool from_checkpoint = false;
};

/// Primes a fresh session with every prompt part, then asks the question.
SessionResult annotate_instance(ChatBackend& backend, const std::vector<std::string>& prompt_parts,
                                const std::string& question, const std::string& instance_id,
                                const SessionOptions& options = {});

struct BatchOptions {
  std::size_t parallelism = 1;
  SessionOptions session;
  std::filesystem::path checkpoint;      // RawResult log; empty disables resume
  std::filesystem::path transcript_log;  // optional companion log
  const std::atomic<bool>* cancel = nullptr;
  /// Called once per finished instance in completion order, serialized.
  std::function<void(const SessionResult&)> on_complete;
};

struct BatchSummary {
  std::size_t total = 0;
  std::size_t queried = 0;
  std::size_t resumed = 0;
  std::size_t skipped = 0;  // not started because of cancellation
  std::map<Status, std::size_t> status_counts;
};

struct BatchOutcome {
  std::vector<std::optional<SessionResult>> results;  // input order; empty if skipped
  BatchSummary summary;
};

/// Latest record per instance id in a checkpoint log.
std::map<std::string, RawResult> read_checkpoint(const std::filesystem::path& path);

/// At most `parallelism` sessions in flight; every request passes through the
/// session rate limiter. Instances whose checkpointed status is OK or REFUSED
/// are not re-queried.
BatchOutcome run_batch(ChatBackend& backend, const std::vector<std::string>& prompt_parts,
                       const prompting::PromptSpec& spec,
                       const std::vector<corpus::CorpusInstance>& instances, const BatchOptions& options);

}  // namespace pragtag::gateway
