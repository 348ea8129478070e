#include <doctest.h>

#include <fstream>

#include "pragtag/error.h"
#include "pragtag/evaluate.h"
#include "pragtag/hash.h"
#include "pragtag/jsonl.h"
#include "pragtag/runstore.h"
#include "run_fixture.h"
#include "support.h"

using namespace pragtag;
using namespace pragtag::runstore;
using pragtag::testing::data_path;
using pragtag::testing::TempDir;

namespace {

Verdict verdict(const std::string& id, VerdictAction action, bool act = false, std::vector<scheme::TagSpan> spans = {}) {
  Verdict v;
  v.instance_id = id;
  v.reviewer_id = "rev";
  v.action = action;
  v.act_present = act;
  v.spans = std::move(spans);
  return v;
}

const eval::ReportRow& row(const eval::EvalReport& r, const std::string& category) {
  for (const auto& x : r.rows) {
    if (x.category == category) return x;
  }
  FAIL("no row " << category);
  throw 0;
}

}  // namespace

TEST_CASE("save and load round-trip") {
  TempDir dir;
  pragtag::testing::make_fixture_run(dir / "r5", 5);
  std::vector<std::string> warnings;
  const auto run = load_run(dir / "r5", &warnings);
  CHECK(warnings.empty());
  CHECK(run.manifest.run_id == "r5");
  CHECK(run.manifest.instance_count == 5);
  CHECK(run.manifest.backend == "replay:fixture.jsonl");
  CHECK(run.manifest.scheme_hash == sha256_hex(scheme::canonical_text(scheme::default_apology_scheme())));
  CHECK(run.instances.size() == 5);
  REQUIRE(run.transcripts);
  CHECK(run.transcripts->size() == 5);

  save_run(dir / "copy", run);
  const auto again = load_run(dir / "copy");
  CHECK(again.manifest == run.manifest);
  CHECK(again.scheme == run.scheme);
  CHECK(again.prompt == run.prompt);
  CHECK(again.instances == run.instances);
  CHECK(again.predictions == run.predictions);
  CHECK(again.outcomes == run.outcomes);
  CHECK(*again.transcripts == *run.transcripts);
  for (const char* f : {"manifest.jsonl", "instances.jsonl", "predictions.jsonl", "outcomes.jsonl",
                        "transcripts.jsonl", "scheme.json", "prompt.json"}) {
    CHECK(read_file(dir / "r5" / f) == read_file(dir / "copy" / f));
  }
}

TEST_CASE("transcripts may be withheld") {
  TempDir dir;
  pragtag::testing::make_fixture_run(dir / "r", 3);
  auto run = load_run(dir / "r");
  run.transcripts.reset();
  save_run(dir / "r", run);
  CHECK_FALSE(std::filesystem::exists(dir / "r" / "transcripts.jsonl"));
  CHECK_FALSE(load_run(dir / "r").transcripts);
}

TEST_CASE("dangling references are rejected before writing") {
  TempDir dir;
  pragtag::testing::make_fixture_run(dir / "r", 3);
  auto run = load_run(dir / "r");
  run.predictions.push_back({"nowhere:0", false, {}, scheme::Provenance::llm_run("r")});
  try {
    save_run(dir / "bad", run);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kData);
  }
  CHECK_FALSE(std::filesystem::exists(dir / "bad" / "manifest.jsonl"));
}

TEST_CASE("missing file is named in the error") {
  TempDir dir;
  pragtag::testing::make_fixture_run(dir / "r", 3);
  std::filesystem::remove(dir / "r" / "predictions.jsonl");
  try {
    load_run(dir / "r");
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("predictions.jsonl") != std::string::npos);
  }
  try {
    load_run(dir / "absent");
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNotFound);
  }
}

TEST_CASE("a changed prompt byte raises an integrity warning") {
  TempDir dir;
  pragtag::testing::make_fixture_run(dir / "r", 3);
  std::string prompt = read_file(dir / "r" / "prompt.json");
  const auto pos = prompt.find("Please learn");
  REQUIRE(pos != std::string::npos);
  prompt[pos] = 'p';
  write_file(dir / "r" / "prompt.json", prompt);
  std::vector<std::string> warnings;
  load_run(dir / "r", &warnings);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("prompt.json") != std::string::npos);
}

TEST_CASE("verdicts: accept, latest wins, rejection leaves the log alone") {
  TempDir dir;
  pragtag::testing::make_fixture_run(dir / "r", 6);
  auto run = Run::open(dir / "r");
  const auto& first = run->data().instances[0];
  const auto* pred = run->prediction(first.id);
  REQUIRE(pred);

  const auto a = run->submit_verdict(verdict(first.id, VerdictAction::kAccept));
  CHECK(a.sequence == 1);
  CHECK_FALSE(a.submitted_at.empty());
  auto gold = run->effective_gold(a);
  REQUIRE(gold);
  CHECK(gold->spans == pred->spans);
  CHECK(gold->act_present == pred->act_present);
  CHECK(gold->provenance == scheme::Provenance::human("rev"));

  const auto b = run->submit_verdict(verdict(first.id, VerdictAction::kMarkNoAct));
  CHECK(b.sequence == 2);
  CHECK(run->latest_verdict(first.id)->action == VerdictAction::kMarkNoAct);
  CHECK(run->latest_verdicts(1).at(first.id).action == VerdictAction::kAccept);

  const std::string before = read_file(dir / "r" / "verdicts.jsonl");
  const auto marker = first.marker_positions.front();
  try {
    run->submit_verdict(verdict(first.id, VerdictAction::kCorrect, true,
                                {{"REASON", marker, marker + 1}, {"APOLOGISING", marker, marker + 1}}));
    FAIL("expected throw");
  } catch (const ValidationError& e) {
    CHECK_FALSE(e.violations().empty());
    CHECK(e.violations()[0].code == "overlap");
  }
  CHECK_THROWS_AS(run->submit_verdict(verdict("nope:0", VerdictAction::kAccept)), Error);
  CHECK_THROWS_AS(run->submit_verdict(verdict(first.id, VerdictAction::kMarkNoAct, false, {{"REASON", 0, 1}})),
                  ValidationError);
  CHECK(read_file(dir / "r" / "verdicts.jsonl") == before);
  CHECK(run->verdicts().size() == 2);
}

TEST_CASE("live metrics") {
  TempDir dir;
  pragtag::testing::make_fixture_run(dir / "r", 12);

  SUBCASE("no verdicts") {
    auto run = Run::open(dir / "r");
    const auto r = run->live_metrics();
    CHECK(r.n_instances == 0);
    CHECK_FALSE(r.instance_accuracy);
  }
  SUBCASE("accept everything") {
    auto run = Run::open(dir / "r");
    for (const auto& inst : run->data().instances) run->submit_verdict(verdict(inst.id, VerdictAction::kAccept));
    const auto r = run->live_metrics();
    CHECK(r.n_instances == 12);
    CHECK(*r.instance_accuracy == 1.0);
    for (const auto& x : r.rows) {
      if (x.metrics.f1) CHECK(*x.metrics.f1 == 1.0);
    }
  }
  SUBCASE("one act prediction marked as no act") {
    auto run = Run::open(dir / "r");
    const scheme::Annotation* act_pred = nullptr;
    for (const auto& p : run->data().predictions) {
      if (p.act_present) {
        act_pred = &p;
        break;
      }
    }
    REQUIRE(act_pred);
    run->submit_verdict(verdict(act_pred->instance_id, VerdictAction::kMarkNoAct));
    const auto r = run->live_metrics();
    CHECK(r.n_instances == 1);
    // gold no-act, predicted act: counted against no-act recall
    CHECK(row(r, "NO_APOLOGY").counts == eval::Counts{0, 0, 1});
    CHECK(*r.instance_accuracy == 0.0);
  }
}

TEST_CASE("live metrics equal aggregate over effective gold and survive reopening") {
  TempDir dir;
  pragtag::testing::make_fixture_run(dir / "r");
  const auto gold = scheme::read_annotations(data_path("gold/fixture.jsonl"));
  {
    auto run = Run::open(dir / "r");
    // Review two thirds of the instances with the fixture gold; some twice.
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (i % 3 == 2) continue;
      if (i % 5 == 0) run->submit_verdict(verdict(gold[i].instance_id, VerdictAction::kMarkNoAct));
      const auto& g = gold[i];
      const auto* p = run->prediction(g.instance_id);
      if (p && p->act_present == g.act_present && p->spans == g.spans) {
        run->submit_verdict(verdict(g.instance_id, VerdictAction::kAccept));
      } else if (!g.act_present) {
        run->submit_verdict(verdict(g.instance_id, VerdictAction::kMarkNoAct));
      } else {
        run->submit_verdict(verdict(g.instance_id, VerdictAction::kCorrect, true, g.spans));
      }
    }
    std::vector<eval::AnnotationPair> pairs;
    for (const auto& inst : run->data().instances) {
      const auto v = run->latest_verdict(inst.id);
      if (!v) continue;
      pairs.emplace_back(*run->effective_gold(*v), *run->prediction(inst.id));
    }
    const auto direct = eval::aggregate(pairs);
    const auto live = run->live_metrics();
    CHECK(live.n_instances == direct.n_instances);
    CHECK(live.n_correct == direct.n_correct);
    for (const auto& x : live.rows) {
      CAPTURE(x.category);
      if (x.category == "NO_APOLOGY") {
        CHECK(x.counts == direct.no_act);
      } else {
        const auto it = direct.per_tag.find(x.category);
        CHECK(x.counts == (it == direct.per_tag.end() ? eval::Counts{} : it->second));
      }
    }

    // Reviewed subset of the oracle report: gold equals pred wherever the
    // prediction was accepted.
    std::vector<eval::AnnotationPair> oracle;
    const auto preds = scheme::read_annotations(data_path("expected/fixture_predictions.jsonl"));
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (i % 3 != 2) oracle.emplace_back(gold[i], preds[i]);
    }
    CHECK(eval::aggregate(oracle).per_tag == direct.per_tag);
    CHECK(eval::aggregate(oracle).no_act == direct.no_act);
  }
  auto first = Run::open(dir / "r");
  auto second = Run::open(dir / "r");
  CHECK(eval::to_json(first->live_metrics()) == eval::to_json(second->live_metrics()));
  CHECK(first->verdicts().back().sequence == static_cast<long long>(first->verdicts().size()));
}

TEST_CASE("review queue ordering") {
  TempDir dir;
  const auto report = pragtag::testing::make_review_run(dir / "review");
  CHECK(report.backend_failures == 1);
  CHECK(report.parse_failures == 2);
  auto run = Run::open(dir / "review");
  const auto& inst = run->data().instances;
  const auto all = run->review_queue(QueueFilter::kAll);
  REQUIRE(all.size() == 8);
  CHECK(all[0].instance_id == inst[1].id);
  CHECK(all[0].status == "REFUSED");
  CHECK(all[1].instance_id == inst[2].id);
  CHECK(all[1].status == "PARSE_FAILURE");
  CHECK(all[2].instance_id == inst[3].id);
  CHECK(all[2].status == "PARSE_FAILURE");
  CHECK(all[3].instance_id == inst[4].id);
  CHECK(all[3].status == "BACKEND_ERROR");
  for (std::size_t i = 5; i < all.size(); ++i) CHECK(all[i - 1].coverage <= all[i].coverage);
  CHECK(run->review_queue(QueueFilter::kFailed).size() == 4);

  run->submit_verdict(verdict(inst[0].id, VerdictAction::kAccept));
  CHECK(run->review_queue(QueueFilter::kPending).size() == 7);
  CHECK(run->review_queue(QueueFilter::kReviewed).size() == 1);
  // A failed instance has nothing to accept.
  CHECK_THROWS_AS(run->submit_verdict(verdict(inst[4].id, VerdictAction::kAccept)), ValidationError);
  CHECK(queue_filter_from_string("pending") == QueueFilter::kPending);
  CHECK_THROWS(queue_filter_from_string("bogus"));
}

TEST_CASE("run store") {
  TempDir dir;
  pragtag::testing::make_fixture_run(dir / "b", 2);
  pragtag::testing::make_fixture_run(dir / "a", 2);
  std::filesystem::create_directories(dir / "not-a-run");
  RunStore store(dir.path());
  CHECK(store.list_runs() == std::vector<std::string>{"a", "b"});
  CHECK(store.open("a") == store.open("a"));
  CHECK_THROWS_AS(store.open("not-a-run"), Error);
  CHECK_THROWS_AS(store.open("../a"), Error);
}

TEST_CASE("verdict records") {
  Verdict v = verdict("x:1", VerdictAction::kCorrect, true, {{"APOLOGISING", 1, 2}});
  v.sequence = 4;
  v.submitted_at = "2026-01-01T00:00:00Z";
  CHECK(verdict_from_json(to_json(v)) == v);
  Verdict a = verdict("x:1", VerdictAction::kAccept);
  a.sequence = 1;
  a.submitted_at = "t";
  CHECK(to_json(a).contains("spans") == false);
  CHECK(verdict_from_json(to_json(a)) == a);
  CHECK_THROWS(verdict_from_json(Json::parse(R"({"instance_id":"x","reviewer_id":"r","action":"REJECT"})")));
}
