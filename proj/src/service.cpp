#include "pragtag/service.h"

#include <httplib.h>

#include <charconv>
#include <thread>

#include "pragtag/text.h"

namespace pragtag::service {

using runstore::Run;

namespace {

ApiResponse reply(int status, const Json& body) { return {status, body.dump()}; }

ApiResponse error_reply(int status, const std::string& message) {
  Json j;
  j["error"] = message;
  return reply(status, j);
}

std::vector<std::string> split_path(std::string_view path) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= path.size()) {
    const auto slash = path.find('/', pos);
    const auto end = slash == std::string_view::npos ? path.size() : slash;
    if (end > pos) out.emplace_back(path.substr(pos, end - pos));
    if (slash == std::string_view::npos) break;
    pos = slash + 1;
  }
  return out;
}

Json spans_json(const std::vector<scheme::TagSpan>& spans) {
  Json arr = Json::array();
  for (const auto& s : spans) arr.push_back(scheme::to_json(s));
  return arr;
}

Json run_summary(const Run& run) {
  Json j = runstore::to_json(run.data().manifest);
  j["reviewed_count"] = run.latest_verdicts().size();
  return j;
}

Json instance_detail(const Run& run, const corpus::CorpusInstance& inst) {
  Json j;
  j["instance_id"] = inst.id;
  j["tokens"] = inst.tokens;
  j["marker_positions"] = inst.marker_positions;
  j["source_span"] = corpus::to_json(inst)["source_span"];
  if (const auto* pred = run.prediction(inst.id)) {
    Json p;
    p["act_present"] = pred->act_present;
    p["spans"] = spans_json(pred->spans);
    p["provenance"] = pred->provenance.to_string();
    j["prediction"] = std::move(p);
  } else {
    j["prediction"] = nullptr;
  }
  const auto* outcome = run.outcome(inst.id);
  j["status"] = outcome ? outcome->status : (run.prediction(inst.id) ? "OK" : std::string(runstore::kParseFailure));
  j["coverage"] = outcome ? outcome->coverage : 0.0;
  j["diagnostic"] = outcome ? outcome->diagnostic : "";
  if (const auto* tr = run.transcript(inst.id)) j["transcript"] = gateway::to_json(*tr);
  const auto latest = run.latest_verdict(inst.id);
  j["latest_verdict"] = latest ? runstore::to_json(*latest) : Json(nullptr);
  return j;
}

std::size_t parse_limit(const std::string& text) {
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || value == 0) {
    throw_usage("limit must be a positive integer");
  }
  return value;
}

ApiResponse list_instances(const Run& run, const std::map<std::string, std::string>& query) {
  const auto status_it = query.find("status");
  const std::string filter_name = status_it == query.end() ? "all" : status_it->second;
  const auto filter = runstore::queue_filter_from_string(filter_name);
  const auto queue = run.review_queue(filter);

  std::size_t begin = 0;
  if (const auto after = query.find("after"); after != query.end()) {
    const auto it = std::find_if(queue.begin(), queue.end(),
                                 [&](const runstore::QueueEntry& e) { return e.instance_id == after->second; });
    if (it == queue.end()) throw_usage("cursor '" + after->second + "' is not in this listing");
    begin = static_cast<std::size_t>(it - queue.begin()) + 1;
  }
  std::size_t end = queue.size();
  if (const auto limit = query.find("limit"); limit != query.end()) {
    end = std::min(end, begin + parse_limit(limit->second));
  }

  Json items = Json::array();
  for (std::size_t i = begin; i < end; ++i) {
    Json e;
    e["instance_id"] = queue[i].instance_id;
    e["status"] = queue[i].status;
    e["coverage"] = queue[i].coverage;
    e["reviewed"] = queue[i].reviewed;
    items.push_back(std::move(e));
  }
  Json j;
  j["run_id"] = run.data().manifest.run_id;
  j["status"] = filter_name;
  j["total"] = queue.size();
  j["instances"] = std::move(items);
  j["next_after"] = end < queue.size() ? Json(queue[end - 1].instance_id) : Json(nullptr);
  return reply(200, j);
}

ApiResponse post_verdict(Run& run, const std::string& instance_id, const std::string& body) {
  if (!run.instance(instance_id)) throw Error(ErrorKind::kNotFound, "unknown instance '" + instance_id + "'");
  Json j;
  try {
    j = Json::parse(body);
  } catch (const Json::exception&) {
    throw_usage("request body is not valid JSON");
  }
  if (!j.is_object()) throw_usage("request body must be an object");
  if (j.contains("instance_id") && j.at("instance_id") != instance_id) {
    throw_usage("instance_id in body does not match the path");
  }
  j["instance_id"] = instance_id;
  // Sequence and timestamp are assigned by the store.
  j.erase("sequence");
  j.erase("submitted_at");
  runstore::Verdict verdict;
  try {
    verdict = runstore::verdict_from_json(j);
  } catch (const Error& e) {
    throw_usage(e.what());
  }
  return reply(200, runstore::to_json(run.submit_verdict(std::move(verdict))));
}

}  // namespace

ReviewApi::ReviewApi(runstore::RunStore& store) : store_(store) {}

ApiResponse ReviewApi::handle(const ApiRequest& request) const {
  try {
    const auto seg = split_path(request.path);
    if (seg.empty() || seg[0] != "api" || seg.size() < 2 || seg[1] != "runs") {
      return error_reply(404, "no such endpoint: " + request.path);
    }
    const bool get = request.method == "GET";
    const bool post = request.method == "POST";
    auto wrong_method = [&] { return error_reply(405, request.method + " not allowed on " + request.path); };

    if (seg.size() == 2) {
      if (!get) return wrong_method();
      Json runs = Json::array();
      Json problems = Json::array();
      for (const auto& id : store_.list_runs()) {
        try {
          runs.push_back(run_summary(*store_.open(id)));
        } catch (const std::exception& e) {
          Json p;
          p["run_id"] = id;
          p["error"] = e.what();
          problems.push_back(std::move(p));
        }
      }
      Json j;
      j["runs"] = std::move(runs);
      j["unreadable"] = std::move(problems);
      return reply(200, j);
    }

    const auto run = store_.open(seg[2]);
    if (seg.size() == 3) {
      if (!get) return wrong_method();
      Json j;
      j["manifest"] = run_summary(*run);
      j["scheme"] = scheme::to_json(run->data().scheme);
      j["warnings"] = run->warnings();
      return reply(200, j);
    }
    if (seg.size() == 4 && seg[3] == "metrics") {
      if (!get) return wrong_method();
      return reply(200, eval::to_json(run->live_metrics()));
    }
    if (seg[3] != "instances") return error_reply(404, "no such endpoint: " + request.path);
    if (seg.size() == 4) {
      if (!get) return wrong_method();
      return list_instances(*run, request.query);
    }
    if (seg.size() == 5) {
      if (!get) return wrong_method();
      const auto* inst = run->instance(seg[4]);
      if (!inst) return error_reply(404, "unknown instance '" + seg[4] + "'");
      return reply(200, instance_detail(*run, *inst));
    }
    if (seg.size() == 6 && seg[5] == "verdict") {
      if (!post) return wrong_method();
      return post_verdict(*run, seg[4], request.body);
    }
    return error_reply(404, "no such endpoint: " + request.path);
  } catch (const runstore::ValidationError& e) {
    Json j;
    j["error"] = e.what();
    Json list = Json::array();
    for (const auto& v : e.violations()) {
      Json vj;
      vj["code"] = v.code;
      vj["message"] = v.message;
      list.push_back(std::move(vj));
    }
    j["violations"] = std::move(list);
    return reply(422, j);
  } catch (const Error& e) {
    switch (e.kind()) {
      case ErrorKind::kNotFound: return error_reply(404, e.what());
      case ErrorKind::kUsage:
      case ErrorKind::kData: return error_reply(400, e.what());
      case ErrorKind::kValidation: return error_reply(422, e.what());
      default: return error_reply(500, e.what());
    }
  } catch (const std::exception& e) {
    return error_reply(500, e.what());
  }
}

// ---------------------------------------------------------------------------

struct ReviewServer::Impl {
  explicit Impl(runstore::RunStore& store) : api(store) {}

  ReviewApi api;
  httplib::Server server;
  std::thread thread;
};

ReviewServer::ReviewServer(runstore::RunStore& store, std::filesystem::path static_dir)
    : impl_(std::make_unique<Impl>(store)) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    ApiRequest request;
    request.method = req.method;
    request.path = req.path;
    for (const auto& [key, value] : req.params) request.query.emplace(key, value);
    request.body = req.body;
    const ApiResponse out = impl_->api.handle(request);
    res.status = out.status;
    res.set_content(out.body, "application/json");
  };
  impl_->server.Get(R"(/api(/.*)?)", handler);
  impl_->server.Post(R"(/api(/.*)?)", handler);
  if (!static_dir.empty()) {
    if (!impl_->server.set_mount_point("/", static_dir.string())) {
      throw_io("static directory " + static_dir.string() + " is not readable");
    }
  }
}

ReviewServer::~ReviewServer() { stop(); }

int ReviewServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound <= 0) throw_io("cannot listen on " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  return bound;
}

void ReviewServer::wait() {
  if (impl_->thread.joinable()) impl_->thread.join();
}

void ReviewServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace pragtag::service
