#include <doctest.h>

#include <cmath>

#include "oracles.h"
#include "pragtag/error.h"
#include "pragtag/evaluate.h"
#include "pragtag/jsonl.h"
#include "support.h"

using namespace pragtag;
using eval::AnnotationPair;
using eval::Counts;
using scheme::Annotation;
using pragtag::testing::data_path;

namespace {

const scheme::AnnotationScheme& apology() {
  static const auto s = scheme::default_apology_scheme();
  return s;
}

Annotation act(const std::string& id, std::vector<scheme::TagSpan> spans) { return {id, true, std::move(spans), {}}; }
Annotation none(const std::string& id) { return {id, false, {}, {}}; }

Counts tag_counts(const eval::ConfusionCounts& c, const std::string& tag) {
  const auto it = c.per_tag.find(tag);
  return it == c.per_tag.end() ? Counts{} : it->second;
}

std::vector<AnnotationPair> random_pairs(unsigned seed, std::size_t n) {
  std::mt19937 rng(seed);
  std::vector<AnnotationPair> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = "r:" + std::to_string(i);
    auto gold = pragtag::testing::random_annotation(rng, id, 20, 6, rng() % 6 != 0);
    auto pred = pragtag::testing::perturb(rng, gold, 20);
    pairs.emplace_back(std::move(gold), std::move(pred));
  }
  return pairs;
}

}  // namespace

TEST_CASE("metrics reproduce the published per-tag percentages") {
  for (const auto& row : pragtag::testing::published_rows()) {
    CAPTURE(row.category);
    const auto m = eval::metrics(row.counts);
    REQUIRE(m.f1.has_value());
    CHECK(std::fabs(*m.precision * 100 - row.precision) <= pragtag::testing::kPercentTolerance);
    CHECK(std::fabs(*m.recall * 100 - row.recall) <= pragtag::testing::kPercentTolerance);
    CHECK(std::fabs(*m.f1 * 100 - row.f1) <= pragtag::testing::kPercentTolerance);
  }
  const auto reason = eval::metrics({108, 6, 13});
  CHECK(eval::format_percent(reason.precision) == "94.74");
  CHECK(eval::format_percent(reason.recall) == "89.26");
  CHECK(eval::format_percent(reason.f1) == "91.91");
}

TEST_CASE("undefined metrics") {
  const auto m = eval::metrics({0, 0, 0});
  CHECK_FALSE(m.precision);
  CHECK_FALSE(m.recall);
  CHECK_FALSE(m.f1);
  CHECK(eval::format_percent(m.precision) == "\xE2\x80\x94");
  const auto zero = eval::metrics({0, 3, 2});
  CHECK(*zero.precision == 0.0);
  CHECK(*zero.recall == 0.0);
  CHECK_FALSE(zero.f1);
}

TEST_CASE("compare_instance examples") {
  const auto g = act("a:0", {{"APOLOGISING", 4, 5}, {"REASON", 5, 8}});
  auto same = eval::compare_instance(g, g);
  CHECK(same.instance_correct);
  CHECK(same.per_tag["REASON"] == Counts{1, 0, 0});
  CHECK(same.errors.empty());

  const auto p = act("a:0", {{"APOLOGISING", 4, 5}, {"REASON", 5, 7}});
  auto b = eval::compare_instance(g, p);
  CHECK_FALSE(b.instance_correct);
  CHECK(b.per_tag["REASON"] == Counts{0, 1, 1});
  REQUIRE(b.errors.size() == 1);
  CHECK(b.errors[0].kind == eval::ErrorKind::kBoundary);
  CHECK(b.errors[0].tag == "REASON");

  auto n = eval::compare_instance(none("a:1"), none("a:1"));
  CHECK(n.instance_correct);

  CHECK_THROWS_AS(eval::compare_instance(none("a:1"), none("a:2")), Error);
}

TEST_CASE("error taxonomy") {
  const auto g = act("e:0", {{"APOLOGISER", 0, 1}, {"APOLOGISING", 2, 3}, {"REASON", 3, 6}});
  const auto p = act("e:0", {{"APOLOGISEE", 0, 1}, {"APOLOGISING", 2, 3}, {"INTENSIFIER", 8, 9}});
  const auto cmp = eval::compare_instance(g, p);
  std::map<eval::ErrorKind, int> kinds;
  for (const auto& e : cmp.errors) ++kinds[e.kind];
  CHECK(kinds[eval::ErrorKind::kWrongLabel] == 1);
  CHECK(kinds[eval::ErrorKind::kSpurious] == 1);
  CHECK(kinds[eval::ErrorKind::kMissed] == 1);  // REASON; APOLOGISER was claimed by the wrong label

  const auto dis = eval::compare_instance(g, none("e:0"));
  REQUIRE(dis.errors.size() == 1);
  CHECK(dis.errors[0].kind == eval::ErrorKind::kActDisagreement);
  CHECK(dis.per_tag.at("REASON") == Counts{0, 0, 1});
}

TEST_CASE("no-act scoring over the recovered counts") {
  std::vector<AnnotationPair> pairs;
  for (int i = 0; i < 98; ++i) {
    const std::string id = "n:" + std::to_string(i);
    pairs.emplace_back(none(id), i < 70 ? none(id) : act(id, {{"APOLOGISING", 1, 2}}));
  }
  const auto c = eval::aggregate(pairs);
  CHECK(c.no_act == Counts{70, 0, 28});
  CHECK(c.per_tag.empty());
}

TEST_CASE("three hand-built instances") {
  std::vector<AnnotationPair> pairs = {
      {act("h:0", {{"APOLOGISER", 0, 1}, {"APOLOGISING", 2, 3}, {"REASON", 3, 8}}),
       act("h:0", {{"APOLOGISER", 0, 1}, {"APOLOGISING", 2, 3}, {"REASON", 3, 6}})},
      {act("h:1", {{"APOLOGISING", 1, 2}, {"APOLOGISEE", 2, 3}}), act("h:1", {{"APOLOGISING", 1, 2}})},
      {none("h:2"), act("h:2", {{"APOLOGISING", 4, 5}})},
  };
  const auto c = eval::aggregate(pairs);
  CHECK(tag_counts(c, "APOLOGISER") == Counts{1, 0, 0});
  CHECK(tag_counts(c, "APOLOGISING") == Counts{2, 0, 0});
  CHECK(tag_counts(c, "REASON") == Counts{0, 1, 1});
  CHECK(tag_counts(c, "APOLOGISEE") == Counts{0, 0, 1});
  CHECK(c.no_act == Counts{0, 0, 1});
  CHECK(c.n_correct == 0);
  const auto bf = pragtag::testing::brute_force_counts(pairs, apology().tag_names());
  for (const auto& t : apology().tag_names()) CHECK(tag_counts(c, t) == bf.per_tag.at(t));
}

TEST_CASE("aggregate equals the brute-force matcher on random data") {
  const auto pairs = random_pairs(11, 200);
  const auto c = eval::aggregate(pairs);
  const auto bf = pragtag::testing::brute_force_counts(pairs, apology().tag_names());
  for (const auto& t : apology().tag_names()) {
    CAPTURE(t);
    CHECK(tag_counts(c, t) == bf.per_tag.at(t));
  }
  CHECK(c.no_act == bf.no_act);
  CHECK(c.n_correct == bf.n_correct);
}

TEST_CASE("duplicate ids are a data error") {
  std::vector<AnnotationPair> pairs = {{none("d:0"), none("d:0")}, {none("d:0"), none("d:0")}};
  try {
    eval::aggregate(pairs);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == pragtag::ErrorKind::kData);
  }
}

TEST_CASE("adding correctly predicted no-act instances leaves tag metrics unchanged") {
  auto pairs = random_pairs(5, 80);
  const auto before = eval::aggregate(pairs);
  for (int i = 0; i < 40; ++i) pairs.emplace_back(none("x:" + std::to_string(i)), none("x:" + std::to_string(i)));
  const auto after = eval::aggregate(pairs);
  CHECK(after.per_tag == before.per_tag);
  CHECK(after.no_act.tp == before.no_act.tp + 40);
}

TEST_CASE("swapping gold and pred swaps precision and recall") {
  std::mt19937 rng(99);
  for (int i = 0; i < 100; ++i) {
    const std::string id = "s:" + std::to_string(i);
    const auto gold = pragtag::testing::random_annotation(rng, id, 20, 6, true);
    const auto pred = pragtag::testing::random_annotation(rng, id, 20, 6, true);
    const auto fwd = eval::aggregate({{gold, pred}});
    const auto rev = eval::aggregate({{pred, gold}});
    for (const auto& t : apology().tag_names()) {
      const auto a = eval::metrics(tag_counts(fwd, t));
      const auto b = eval::metrics(tag_counts(rev, t));
      CHECK(a.precision == b.recall);
      CHECK(a.recall == b.precision);
    }
  }
}

TEST_CASE("f1 lies between precision and recall") {
  std::mt19937 rng(3);
  for (int i = 0; i < 500; ++i) {
    const Counts c{rng() % 20, rng() % 20, rng() % 20};
    const auto m = eval::metrics(c);
    if (!m.f1) continue;
    CHECK(*m.f1 >= std::min(*m.precision, *m.recall) - 1e-12);
    CHECK(*m.f1 <= std::max(*m.precision, *m.recall) + 1e-12);
  }
}

TEST_CASE("perfect agreement") {
  std::vector<AnnotationPair> pairs;
  for (const auto& p : random_pairs(8, 60)) pairs.emplace_back(p.first, p.first);
  const auto r = eval::evaluate(pairs, apology());
  CHECK(*r.instance_accuracy == 1.0);
  for (const auto& row : r.rows) {
    if (row.metrics.f1) CHECK(*row.metrics.f1 == 1.0);
  }
  CHECK(r.errors.empty());
}

TEST_CASE("fifty instances with forty-two correct") {
  std::vector<AnnotationPair> pairs;
  for (int i = 0; i < 50; ++i) {
    const std::string id = "t:" + std::to_string(i);
    const auto g = act(id, {{"APOLOGISING", 2, 3}, {"REASON", 3, 6}});
    pairs.emplace_back(g, i < 42 ? g : act(id, {{"APOLOGISING", 2, 3}}));
  }
  const auto r = eval::evaluate(pairs, apology());
  CHECK(r.n_instances == 50);
  CHECK(r.n_correct == 42);
  CHECK(*r.instance_accuracy == doctest::Approx(0.84));
  const auto table = eval::render_report(r, eval::ReportFormat::kTable);
  CHECK(table.find("Instance-level accuracy (%)  84.00\n") != std::string::npos);
}

TEST_CASE("report layout") {
  std::vector<AnnotationPair> pairs = {{act("r:0", {{"APOLOGISING", 1, 2}}), act("r:0", {{"APOLOGISING", 1, 2}})},
                                       {none("r:1"), none("r:1")}};
  const auto r = eval::evaluate(pairs, apology());
  REQUIRE(r.rows.size() == 6);
  CHECK(r.rows[0].category == "NO_APOLOGY");
  CHECK(r.rows[1].category == "APOLOGISING");
  CHECK(r.rows[5].category == "INTENSIFIER");
  const auto table = eval::render_report(r, eval::ReportFormat::kTable);
  CHECK(table.find("Precision (%)") != std::string::npos);
  CHECK(table.find("\xE2\x80\x94") != std::string::npos);  // REASON has no counts
}

TEST_CASE("empty evaluation") {
  const auto r = eval::evaluate({}, apology());
  CHECK(r.n_instances == 0);
  CHECK_FALSE(r.instance_accuracy);
  for (const auto& row : r.rows) CHECK_FALSE(row.metrics.precision);
  const auto j = eval::to_json(r);
  CHECK(j["instance_accuracy"].is_null());
  CHECK(eval::render_report(r, eval::ReportFormat::kTable).find("Instances                    0") !=
        std::string::npos);
}

TEST_CASE("structured report round-trips") {
  const auto pairs = random_pairs(21, 50);
  const auto r = eval::evaluate(pairs, apology());
  const auto text = eval::render_report(r, eval::ReportFormat::kStructured);
  const auto back = eval::report_from_json(Json::parse(text));
  CHECK(back.n_instances == r.n_instances);
  CHECK(back.n_correct == r.n_correct);
  CHECK(back.instance_accuracy == r.instance_accuracy);
  REQUIRE(back.rows.size() == r.rows.size());
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    CHECK(back.rows[i].category == r.rows[i].category);
    CHECK(back.rows[i].counts == r.rows[i].counts);
    CHECK(back.rows[i].metrics.precision == r.rows[i].metrics.precision);
    CHECK(back.rows[i].metrics.recall == r.rows[i].metrics.recall);
    CHECK(back.rows[i].metrics.f1 == r.rows[i].metrics.f1);
  }
  CHECK(back.errors == r.errors);
  CHECK(eval::render_report(back, eval::ReportFormat::kStructured) == text);
}

TEST_CASE("pair_by_id rejects mismatched id sets") {
  CHECK(eval::pair_by_id({none("a"), none("b")}, {none("b"), none("a")}).size() == 2);
  CHECK_THROWS_AS(eval::pair_by_id({none("a"), none("b")}, {none("a")}), Error);
  CHECK_THROWS_AS(eval::pair_by_id({none("a")}, {none("a"), none("c")}), Error);
  CHECK_THROWS_AS(eval::pair_by_id({none("a")}, {none("a"), none("a")}), Error);
}

TEST_CASE("match policy") {
  CHECK(eval::MatchPolicy::parse("exact").mode == eval::MatchPolicy::Mode::kExactSpan);
  const auto p = eval::MatchPolicy::parse("overlap:0.5");
  CHECK(p.mode == eval::MatchPolicy::Mode::kOverlap);
  CHECK(p.overlap_threshold == 0.5);
  CHECK(p.to_string() == "overlap:0.5");
  CHECK_THROWS_AS(eval::MatchPolicy::parse("overlap:0"), Error);
  CHECK_THROWS_AS(eval::MatchPolicy::parse("overlap:1.5"), Error);
  CHECK_THROWS_AS(eval::MatchPolicy::parse("fuzzy"), Error);

  const auto g = act("o:0", {{"APOLOGISING", 4, 5}, {"REASON", 5, 9}});
  const auto pr = act("o:0", {{"APOLOGISING", 4, 5}, {"REASON", 5, 8}});
  CHECK(eval::compare_instance(g, pr, p).instance_correct);  // Jaccard 0.75
  CHECK_FALSE(eval::compare_instance(g, pr, eval::MatchPolicy::overlap(0.8)).instance_correct);
  CHECK_FALSE(eval::compare_instance(g, pr).instance_correct);
}

TEST_CASE("fixture predictions score to the frozen oracle report") {
  const auto gold = scheme::read_annotations(data_path("gold/fixture.jsonl"));
  const auto pred = scheme::read_annotations(data_path("expected/fixture_predictions.jsonl"));
  const auto r = eval::evaluate(eval::pair_by_id(gold, pred), apology());
  const auto expected = Json::parse(read_file(data_path("expected/fixture_eval.json")));
  CHECK(r.n_instances == expected["n_instances"].get<std::size_t>());
  CHECK(r.n_correct == expected["n_correct"].get<std::size_t>());
  REQUIRE(r.rows.size() == expected["rows"].size());
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const auto& row = r.rows[i];
    const auto& e = expected["rows"][i];
    CHECK(row.category == e["category"].get<std::string>());
    CHECK(row.counts == Counts{e["tp"].get<std::size_t>(), e["fp"].get<std::size_t>(), e["fn"].get<std::size_t>()});
  }
  std::map<std::string, std::size_t> kinds;
  for (const auto& e : r.errors) ++kinds[std::string(eval::to_string(e.kind))];
  for (const auto& [k, v] : expected["error_kinds"].items()) {
    CAPTURE(k);
    CHECK(kinds[k] == v.get<std::size_t>());
  }
}
