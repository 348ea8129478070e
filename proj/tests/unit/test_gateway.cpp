#include <doctest.h>

#include <httplib.h>

#include <algorithm>
#include <cstdlib>
#include <thread>

#include "pragtag/error.h"
#include "pragtag/gateway.h"
#include "pragtag/jsonl.h"
#include "pragtag/prompting.h"
#include "support.h"

using namespace pragtag;
using namespace pragtag::gateway;
using namespace std::chrono_literals;
using pragtag::testing::data_path;
using pragtag::testing::TempDir;
using pragtag::testing::VirtualClock;

namespace {

const std::vector<std::string> kParts = {"part one", "part two"};

corpus::CorpusInstance inst(const std::string& id) {
  return {id, {"oh", "sorry", "mum"}, {1}, {"s", 0, 3}};
}

std::vector<corpus::CorpusInstance> instances(std::size_t n) {
  std::vector<corpus::CorpusInstance> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(inst("s:" + std::to_string(i)));
  return out;
}

std::unordered_map<std::string, std::string> canned(std::size_t n) {
  std::unordered_map<std::string, std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    out["s:" + std::to_string(i)] = "The annotated version is: oh <APOLOGISING> sorry </APOLOGISING> mum";
  }
  return out;
}

/// Replays answers from a script of replies, then delegates.
class ScriptedBackend : public ChatBackend {
 public:
  explicit ScriptedBackend(std::vector<ChatReply> script, std::string final_text = "The annotated version is: x")
      : script_(std::move(script)), final_(std::move(final_text)) {}
  ChatReply send(const ChatRequest& req) override {
    std::lock_guard lock(mu_);
    ++calls;
    if (next_ < script_.size()) return script_[next_++];
    return ChatReply::ok(req.is_question ? final_ : std::string(kReplayAcknowledgement));
  }
  std::string descriptor() const override { return "scripted"; }
  int calls = 0;

 private:
  std::mutex mu_;
  std::vector<ChatReply> script_;
  std::size_t next_ = 0;
  std::string final_;
};

/// Wraps a backend, counting questions and tracking concurrent calls.
class ProbeBackend : public ChatBackend {
 public:
  ProbeBackend(ChatBackend& inner, std::chrono::milliseconds delay = 0ms, Clock* clock = nullptr)
      : inner_(inner), delay_(delay), clock_(clock) {}
  ChatReply send(const ChatRequest& req) override {
    const int now = ++in_flight_;
    int seen = max_in_flight.load();
    while (now > seen && !max_in_flight.compare_exchange_weak(seen, now)) {
    }
    if (req.is_question) ++questions;
    if (clock_) {
      std::lock_guard lock(mu_);
      send_times.push_back(clock_->now());
    }
    if (delay_.count() > 0) std::this_thread::sleep_for(delay_);
    auto reply = inner_.send(req);
    --in_flight_;
    return reply;
  }
  std::string descriptor() const override { return inner_.descriptor(); }

  std::atomic<int> questions{0};
  std::atomic<int> max_in_flight{0};
  std::vector<Clock::TimePoint> send_times;

 private:
  ChatBackend& inner_;
  std::chrono::milliseconds delay_;
  Clock* clock_;
  std::atomic<int> in_flight_{0};
  std::mutex mu_;
};

}  // namespace

TEST_CASE("replay backend hit and miss") {
  ReplayBackend backend(canned(1));
  const auto hit = annotate_instance(backend, kParts, "q", "s:0");
  CHECK(hit.result.status == Status::kOk);
  CHECK(hit.result.response_text == canned(1)["s:0"]);
  CHECK(hit.result.attempt_count == 1);
  REQUIRE(hit.transcript.turns.size() == 6);
  CHECK(hit.transcript.turns[1].text == kReplayAcknowledgement);
  CHECK(hit.transcript.turns[4].text == "q");
  CHECK(hit.transcript.turns[5].role == Role::kAssistant);

  const auto miss = annotate_instance(backend, kParts, "q", "s:9");
  CHECK(miss.result.status == Status::kBackendError);
  CHECK(miss.result.response_text.empty());
  CHECK(miss.result.error.find("s:9") != std::string::npos);
}

TEST_CASE("replay fixture from file") {
  const auto backend = make_replay_backend(data_path("replay/fixture.jsonl"));
  CHECK(backend->size() == 61);
  const auto cfg = load_backend_config(data_path("backends/replay.json"));
  CHECK(cfg.kind == BackendKind::kReplay);
  CHECK(cfg.fixture.is_absolute());
  CHECK(cfg.descriptor() == "replay:fixture.jsonl");
  CHECK(make_backend(cfg)->descriptor() == backend->descriptor());
}

TEST_CASE("refusals") {
  ScriptedBackend backend({}, "I'm sorry, but I am unable to generate texts reproducing those words.");
  CHECK(annotate_instance(backend, kParts, "q", "s:0").result.status == Status::kRefused);

  const auto policy = RefusalPolicy::defaults();
  CHECK(policy.is_refusal("I cannot help with that."));
  CHECK(policy.is_refusal("I can\xE2\x80\x99t do this one."));
  CHECK_FALSE(policy.is_refusal("No speech act of apology is present in the utterance \"I can't stay\"."));
  CHECK_FALSE(policy.is_refusal("The annotated version is: I <APOLOGISING> cannot </APOLOGISING>"));
  CHECK_FALSE(policy.is_refusal("Sure, here it is."));
  CHECK(RefusalPolicy::with_patterns({"declined"}).is_refusal("Request declined."));
}

TEST_CASE("retry then succeed counts two attempts") {
  ScriptedBackend backend({ChatReply::retryable("HTTP 503")});
  SessionOptions opts;
  opts.max_retries = 2;
  const auto r = annotate_instance(backend, kParts, "q", "s:0", opts);
  CHECK(r.result.status == Status::kOk);
  CHECK(r.result.attempt_count == 2);
  CHECK(r.transcript.attempt_count == 2);
}

TEST_CASE("exhausted retries report the last failure kind") {
  ScriptedBackend timeouts({ChatReply::timeout("t1"), ChatReply::timeout("t2"), ChatReply::timeout("t3")});
  SessionOptions opts;
  opts.max_retries = 2;
  const auto r = annotate_instance(timeouts, kParts, "q", "s:0", opts);
  CHECK(r.result.status == Status::kTimeout);
  CHECK(r.result.attempt_count == 3);
  CHECK(r.result.error == "t3");
  CHECK(timeouts.calls == 3);

  ScriptedBackend fatal({ChatReply::fatal("HTTP 400")});
  const auto f = annotate_instance(fatal, kParts, "q", "s:0", opts);
  CHECK(f.result.status == Status::kBackendError);
  CHECK(f.result.attempt_count == 1);
  CHECK(fatal.calls == 1);
}

TEST_CASE("backoff doubles on the injected clock") {
  VirtualClock clock;
  ScriptedBackend backend({ChatReply::retryable("a"), ChatReply::retryable("b"), ChatReply::retryable("c")});
  SessionOptions opts;
  opts.max_retries = 3;
  opts.retry_backoff = 100ms;
  opts.clock = &clock;
  const auto start = clock.now();
  const auto r = annotate_instance(backend, kParts, "q", "s:0", opts);
  CHECK(r.result.status == Status::kOk);
  CHECK(clock.now() - start == 700ms);
}

TEST_CASE("batch results follow input order") {
  ReplayBackend replay(canned(10));
  const auto spec = prompting::default_prompt_spec();
  BatchOptions opts;
  opts.parallelism = 3;
  const auto out = run_batch(replay, kParts, spec, instances(10), opts);
  REQUIRE(out.results.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    REQUIRE(out.results[i]);
    CHECK(out.results[i]->result.instance_id == "s:" + std::to_string(i));
    CHECK(out.results[i]->result.status == Status::kOk);
  }
  CHECK(out.summary.status_counts.at(Status::kOk) == 10);

  const auto again = run_batch(replay, kParts, spec, instances(10), opts);
  for (std::size_t i = 0; i < 10; ++i) CHECK(again.results[i]->result == out.results[i]->result);
}

TEST_CASE("interrupted batch resumes from the checkpoint") {
  TempDir dir;
  ReplayBackend replay(canned(10));
  const auto spec = prompting::default_prompt_spec();
  std::atomic<bool> cancel{false};
  BatchOptions opts;
  opts.checkpoint = dir / "checkpoint.jsonl";
  opts.transcript_log = dir / "transcripts.jsonl";
  opts.cancel = &cancel;
  int done = 0;
  opts.on_complete = [&](const SessionResult&) {
    if (++done == 5) cancel = true;
  };

  ProbeBackend first(replay);
  const auto a = run_batch(first, kParts, spec, instances(10), opts);
  CHECK(a.summary.queried == 5);
  CHECK(a.summary.skipped == 5);
  CHECK(first.questions == 5);
  CHECK(read_checkpoint(opts.checkpoint).size() == 5);

  // A torn trailing record is ignored.
  std::ofstream(opts.checkpoint, std::ios::app) << "{\"instance_id\":\"s:5\",\"sta";

  cancel = false;
  opts.on_complete = nullptr;
  ProbeBackend second(replay);
  const auto b = run_batch(second, kParts, spec, instances(10), opts);
  CHECK(second.questions == 5);
  CHECK(b.summary.resumed == 5);
  CHECK(b.summary.queried == 5);
  CHECK(b.summary.skipped == 0);
  for (std::size_t i = 0; i < 10; ++i) {
    REQUIRE(b.results[i]);
    CHECK(b.results[i]->from_checkpoint == (i < 5));
    CHECK(b.results[i]->result.status == Status::kOk);
  }
  CHECK(b.results[0]->transcript.turns.size() == 6);
}

TEST_CASE("failed checkpoint records are queried again") {
  TempDir dir;
  const auto spec = prompting::default_prompt_spec();
  BatchOptions opts;
  opts.checkpoint = dir / "checkpoint.jsonl";
  ReplayBackend partial(canned(1));
  run_batch(partial, kParts, spec, instances(2), opts);
  CHECK(read_checkpoint(opts.checkpoint).at("s:1").status == Status::kBackendError);

  ReplayBackend full(canned(2));
  ProbeBackend probe(full);
  const auto out = run_batch(probe, kParts, spec, instances(2), opts);
  CHECK(probe.questions == 1);
  CHECK(out.results[1]->result.status == Status::kOk);
  CHECK(read_checkpoint(opts.checkpoint).at("s:1").status == Status::kOk);
}

TEST_CASE("no more sessions in flight than the parallelism") {
  VirtualClock clock;
  RateLimiter limiter(60, 1, clock);
  ReplayBackend replay(canned(8));
  ProbeBackend probe(replay, 15ms);
  BatchOptions opts;
  opts.parallelism = 4;
  opts.session.limiter = &limiter;
  opts.session.clock = &clock;
  const auto out = run_batch(probe, kParts, prompting::default_prompt_spec(), instances(8), opts);
  CHECK(out.summary.status_counts.at(Status::kOk) == 8);
  CHECK(probe.max_in_flight <= 4);
  CHECK(probe.max_in_flight >= 2);
}

TEST_CASE("rate limiter admits at most burst plus rate times elapsed") {
  for (double burst : {1.0, 3.0}) {
    CAPTURE(burst);
    VirtualClock clock;
    RateLimiter limiter(60, burst, clock);
    ReplayBackend replay(canned(6));
    ProbeBackend probe(replay, 0ms, &clock);
    BatchOptions opts;
    opts.parallelism = 1;
    opts.session.limiter = &limiter;
    const auto out = run_batch(probe, kParts, prompting::default_prompt_spec(), instances(6), opts);
    CHECK(out.summary.status_counts.at(Status::kOk) == 6);
    const auto& t = probe.send_times;
    REQUIRE(t.size() == 18);
    for (std::size_t i = 0; i < t.size(); ++i) {
      for (std::size_t j = i; j < t.size(); ++j) {
        const double secs = std::chrono::duration<double>(t[j] - t[i]).count();
        CHECK(static_cast<double>(j - i + 1) <= burst + secs * 1.0 + 1e-9);
      }
    }
    // Saturated: the last request goes out exactly when the budget allows.
    CHECK(std::chrono::duration<double>(t.back() - t.front()).count() == doctest::Approx(18 - burst));
  }
}

TEST_CASE("unlimited limiter never sleeps") {
  VirtualClock clock;
  RateLimiter limiter(0, 1, clock);
  const auto start = clock.now();
  for (int i = 0; i < 100; ++i) limiter.acquire();
  CHECK(clock.now() == start);
  CHECK_THROWS_AS(RateLimiter(-1, 1, clock), Error);
}

TEST_CASE("record formats round-trip") {
  RawResult r{"s:1", Status::kRefused, "no", 3, ""};
  CHECK(raw_result_from_json(to_json(r)) == r);
  RawResult e{"s:2", Status::kTimeout, "", 2, "read timeout"};
  CHECK(raw_result_from_json(to_json(e)) == e);
  CHECK_THROWS(raw_result_from_json(Json::parse(R"({"instance_id":"a","status":"OK","response_text":"","attempt_count":1})")));
  Transcript t{"s:1", {{Role::kUser, "a"}, {Role::kAssistant, "b"}}, "replay:x", "2026-01-01T00:00:00Z",
               "2026-01-01T00:00:01Z", 1};
  CHECK(transcript_from_json(to_json(t)) == t);
  CHECK(status_from_string("BACKEND_ERROR") == Status::kBackendError);
}

TEST_CASE("backend config validation") {
  auto parse = [](const std::string& text) { return backend_config_from_json(Json::parse(text), "/base"); };
  const auto ok = parse(R"({"kind":"http-chat","endpoint":"https://user:pw@api.example.com/v1/chat?key=abc",
                            "model_name":"m","auth_env_var":"K","rate_limit":30,"max_retries":1,"timeout":5,
                            "parallelism":2})");
  CHECK(ok.problems().empty());
  CHECK(ok.descriptor() == "http-chat:m@https://api.example.com/v1/chat");
  CHECK(parse(R"({"kind":"replay","fixture":"r.jsonl"})").fixture == std::filesystem::path("/base/r.jsonl"));

  CHECK_THROWS_AS(parse(R"({"kind":"replay","fixture":"r.jsonl","api_key":"x"})"), Error);
  CHECK_THROWS_AS(parse(R"({"kind":"carrier-pigeon"})"), Error);
  // parsing runs problems() and rejects on the first one
  CHECK_THROWS_AS(parse(R"({"kind":"replay"})"), Error);
  BackendConfig bare;
  bare.kind = BackendKind::kReplay;
  CHECK_FALSE(bare.problems().empty());
  CHECK_THROWS_AS(parse(R"({"kind":"http-chat","model_name":"m"})"), Error);
  CHECK_THROWS_AS(parse(R"({"kind":"http-chat","endpoint":"https://x/y"})"), Error);
  CHECK_THROWS_AS(parse(R"({"kind":"replay","fixture":"r","max_retries":-1})"), Error);
  CHECK_THROWS_AS(parse(R"({"kind":"replay","fixture":"r","parallelism":0})"), Error);
}

TEST_CASE("http-chat backend against a local endpoint") {
  constexpr const char* kSecret = "sk-test-5f0c9a1e";
  ::setenv("PRAGTAG_TEST_KEY", kSecret, 1);

  httplib::Server server;
  std::mutex mu;
  std::vector<Json> bodies;
  std::vector<std::string> auth;
  std::atomic<int> mode{0};  // 0 ok, 1 429-then-ok, 2 400 echoing the header, 3 slow
  std::atomic<int> hits{0};
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    const int n = ++hits;
    {
      std::lock_guard lock(mu);
      bodies.push_back(Json::parse(req.body));
      auth.push_back(req.get_header_value("Authorization"));
    }
    if (mode == 1 && n == 1) {
      res.status = 429;
      res.set_content("slow down", "text/plain");
      return;
    }
    if (mode == 2) {
      res.status = 400;
      res.set_content("bad request, header was " + req.get_header_value("Authorization"), "text/plain");
      return;
    }
    if (mode == 3) std::this_thread::sleep_for(800ms);
    const auto& msgs = bodies.back()["messages"];
    const bool question = msgs.back()["content"].get<std::string>().starts_with("Q:");
    Json out;
    out["choices"] = Json::array({{{"message", {{"role", "assistant"},
                                                {"content", question ? "The annotated version is: x" : "ok"}}}}});
    res.set_content(out.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { server.listen_after_bind(); });
  while (!server.is_running()) std::this_thread::sleep_for(1ms);

  BackendConfig cfg;
  cfg.kind = BackendKind::kHttpChat;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  cfg.model_name = "test-model";
  cfg.auth_env_var = "PRAGTAG_TEST_KEY";
  cfg.timeout_seconds = 0.3;
  HttpChatBackend backend(cfg);
  SessionOptions opts;
  opts.max_retries = 1;

  SUBCASE("request shape and bearer header") {
    const auto r = annotate_instance(backend, {"P1"}, "Q: x", "s:0", opts);
    CHECK(r.result.status == Status::kOk);
    REQUIRE(bodies.size() == 2);
    CHECK(bodies[1]["model"] == "test-model");
    CHECK(bodies[1]["temperature"] == 0);
    CHECK(bodies[1]["messages"].size() == 3);
    CHECK(bodies[1]["messages"][0] == Json({{"role", "user"}, {"content", "P1"}}));
    CHECK(bodies[1]["messages"][1] == Json({{"role", "assistant"}, {"content", "ok"}}));
    CHECK(auth[0] == std::string("Bearer ") + kSecret);
    CHECK(to_json(r.transcript).dump().find(kSecret) == std::string::npos);
    CHECK(r.transcript.backend.find(kSecret) == std::string::npos);
    CHECK(backend.request_body({{Role::kUser, "hi"}}).dump() ==
          R"({"model":"test-model","messages":[{"role":"user","content":"hi"}],"temperature":0})");
  }
  SUBCASE("429 is retried") {
    mode = 1;
    const auto r = annotate_instance(backend, {"P1"}, "Q: x", "s:0", opts);
    CHECK(r.result.status == Status::kOk);
    CHECK(r.result.attempt_count == 2);
  }
  SUBCASE("4xx fails without retry and never leaks the credential") {
    mode = 2;
    const auto r = annotate_instance(backend, {"P1"}, "Q: x", "s:0", opts);
    CHECK(r.result.status == Status::kBackendError);
    CHECK(hits == 1);
    CHECK(r.result.error.find("HTTP 400") != std::string::npos);
    CHECK(r.result.error.find(kSecret) == std::string::npos);
    CHECK(to_json(r.result).dump().find(kSecret) == std::string::npos);
  }
  SUBCASE("slow endpoint times out") {
    mode = 3;
    const auto r = annotate_instance(backend, {"P1"}, "Q: x", "s:0", opts);
    CHECK(r.result.status == Status::kTimeout);
    CHECK(r.result.attempt_count == 2);
  }
  SUBCASE("missing credential variable") {
    ::unsetenv("PRAGTAG_TEST_KEY");
    const auto r = annotate_instance(backend, {"P1"}, "Q: x", "s:0", opts);
    CHECK(r.result.status == Status::kBackendError);
    CHECK(hits == 0);
  }

  server.stop();
  th.join();
}
