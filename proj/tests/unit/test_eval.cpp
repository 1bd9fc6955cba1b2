#include "doctest.h"

#include "bestview/eval/harness.hpp"
#include "bestview/rng.hpp"
#include "bestview/synthgen.hpp"

#include "../oracles/caption_fixture.hpp"
#include "../oracles/cider_oracle.hpp"
#include "../oracles/meteor_oracle.hpp"
#include "test_support.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <sstream>

using namespace bestview;
using namespace bestview::eval;

namespace {

const text::TermLexicon& lexicon() {
  static const text::TermLexicon lex = text::load_lexicon(text::default_lexicon_path());
  return lex;
}

// View 0 is the ego view; captions are given per view for captioner "k0".
Clip clip_with_captions(const std::string& id, const std::string& narration, const std::vector<std::string>& caps) {
  Clip c = testing::make_clip(id, caps.size(), 2, {"k0"}, narration, "");
  for (std::size_t v = 0; v < caps.size(); ++v) c.views[v].captions["k0"] = caps[v];
  return c;
}

MetricReport report_from(const std::string& name, const std::vector<double>& cider) {
  MetricReport r;
  r.policy_name = name;
  for (std::size_t i = 0; i < cider.size(); ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "c%03zu", i);
    r.per_clip[id] = {cider[i], 0, 0, 0, 0};
  }
  double s = 0;
  for (double x : cider) s += x;
  r.means[0] = s / static_cast<double>(cider.size());
  return r;
}

double set_iou(const std::set<std::string>& a, const std::set<std::string>& b) {
  std::vector<std::string> inter, uni;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(uni));
  return uni.empty() ? 1.0 : static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

}  // namespace

TEST_CASE("baseline selections") {
  const Corpus c({"k0"}, 2,
                 {clip_with_captions("a", "c cuts the onion", {"c cuts", "a man is cutting an onion now", "c cuts the onion"}),
                  clip_with_captions("b", "c opens the jar lid", {"x y z w v", "a b c d e f g h i", "c opens the jar"})});
  const auto idf = narration_idf(c, {});
  CHECK(baseline_select(c, BaselineKind::ego_only, 0, "k0", idf).choice == std::map<std::string, std::size_t>{{"a", 0}, {"b", 0}});
  CHECK(baseline_select(c, BaselineKind::longest_caption, 0, "k0", idf).choice.at("b") == 1);
  CHECK(baseline_select(c, BaselineKind::longest_caption, 0, "k0", idf).choice.at("a") == 1);
  const auto best = baseline_select(c, BaselineKind::oracle_best, 0, "k0", idf);
  CHECK(best.choice.at("a") == 2);
  CHECK(best.choice.at("b") == 2);
  CHECK(best.policy_name == "oracle_best");
  CHECK(baseline_select(c, BaselineKind::oracle_worst, 0, "k0", idf).choice.at("b") != 2);

  synth::SynthConfig cfg;
  cfg.n_clips = 40;
  const auto s = synth::generate(cfg);
  const auto sidf = narration_idf(s.corpus, {});
  const auto r1 = baseline_select(s.corpus, BaselineKind::random, 7, "cap0", sidf);
  CHECK(r1.choice == baseline_select(s.corpus, BaselineKind::random, 7, "cap0", sidf).choice);
  CHECK_FALSE(r1.choice == baseline_select(s.corpus, BaselineKind::random, 8, "cap0", sidf).choice);
  for (const auto& [id, v] : baseline_select(s.corpus, BaselineKind::random_exo, 7, "cap0", sidf).choice) CHECK(v != 0);

  CHECK_THROWS_AS(baseline_select(c, BaselineKind::oracle_best, 0, "nobody", idf), EvalError);
  CHECK(parse_baseline("oracle_second") == BaselineKind::oracle_second);
  CHECK_THROWS_AS(parse_baseline("detector"), EvalError);
}

TEST_CASE("longest caption with 5, 9 and 7 tokens picks view 1") {
  const Corpus c({"k0"}, 2,
                 {clip_with_captions("a", "n", {"one two three four five", "one two three four five six seven eight nine",
                                                "one two three four five six seven"})});
  const auto idf = narration_idf(c, {});
  CHECK(baseline_select(c, BaselineKind::longest_caption, 0, "k0", idf).choice.at("a") == 1);
}

TEST_CASE("evaluate reporting convention") {
  const Corpus c({"k0"}, 2,
                 {clip_with_captions("a", "c cuts the red onion", {"c cuts the red onion", "zz qq"}),
                  clip_with_captions("b", "c opens the blue jar", {"c opens the blue jar", "yy ww vv"})});
  const auto idf = narration_idf(c, {});
  EvalContext ctx{"k0", &idf, &lexicon(), {}, 1};
  const MetricReport same = evaluate({"same", {{"a", 0}, {"b", 0}}}, c, ctx);
  CHECK(same.mean(Metric::cider) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(same.mean(Metric::meteor) == doctest::Approx(100.0 * (1.0 - 0.5 / 125.0)));
  CHECK(same.mean(Metric::v_iou) == 100.0);
  const MetricReport half = evaluate({"half", {{"a", 0}, {"b", 1}}}, c, ctx);
  CHECK(half.per_clip.at("b")[0] == 0.0);
  CHECK(half.mean(Metric::cider) == doctest::Approx(50.0).epsilon(1e-12));

  CHECK_THROWS_AS(evaluate({"short", {{"a", 0}}}, c, ctx), EvalError);
  CHECK_THROWS_AS(evaluate({"bad", {{"a", 0}, {"b", 9}}}, c, ctx), EvalError);
  EvalContext other = ctx;
  other.eval_captioner = "k9";
  CHECK_THROWS_AS(evaluate({"x", {{"a", 0}, {"b", 0}}}, c, other), EvalError);
}

TEST_CASE("evaluate matches a per-clip loop oracle on the 20-pair fixture") {
  std::vector<Clip> clips;
  for (std::size_t i = 0; i < testing::kCaptionPairs.size(); ++i) {
    const auto& [cand, ref] = testing::kCaptionPairs[i];
    clips.push_back(clip_with_captions("p" + std::to_string(100 + i), std::string(ref),
                                       {std::string(ref), std::string(cand)}));
  }
  const Corpus corpus({"k0"}, 2, clips);
  const text::MetricConfig mcfg;
  const auto idf = narration_idf(corpus, mcfg);
  Selection sel{"fixture", {}};
  for (const auto& c : clips) sel.choice[c.clip_id] = 1;
  const MetricReport r = evaluate(sel, corpus, {"k0", &idf, &lexicon(), mcfg, 3});

  std::vector<testing::Doc> refs;
  for (const auto& c : clips) refs.push_back(text::prepare(c.narration, true));
  std::array<double, 5> sums{};
  for (const auto& c : clips) {
    const std::string& cap = c.views[1].captions.at("k0");
    const auto ct = text::tokenize(cap);
    const auto rt = text::tokenize(c.narration);
    const std::array<double, 5> want{
        10.0 * testing::oracle_cider_d(text::prepare(cap, true), text::prepare(c.narration, true), refs),
        100.0 * testing::oracle_meteor(ct, rt).score,
        100.0 * set_iou(text::extract_terms(ct, text::TermKind::verb, lexicon()),
                        text::extract_terms(rt, text::TermKind::verb, lexicon())),
        100.0 * set_iou(text::extract_terms(ct, text::TermKind::noun, lexicon()),
                        text::extract_terms(rt, text::TermKind::noun, lexicon())),
        100.0 * set_iou(text::extract_terms(ct, text::TermKind::noun_chunk, lexicon()),
                        text::extract_terms(rt, text::TermKind::noun_chunk, lexicon()))};
    for (std::size_t m = 0; m < 5; ++m) {
      CAPTURE(c.clip_id);
      CAPTURE(m);
      CHECK(std::abs(r.per_clip.at(c.clip_id)[m] - want[m]) < 1e-9);
      sums[m] += want[m];
    }
  }
  for (std::size_t m = 0; m < 5; ++m) CHECK(std::abs(r.means[m] - sums[m] / 20.0) < 1e-9);
}

TEST_CASE("evaluate is invariant to clip order and oracle_best dominates") {
  synth::SynthConfig cfg;
  cfg.n_clips = 60;
  cfg.seed = 4;
  const auto s = synth::generate(cfg);
  auto clips = s.corpus.clips();
  Rng rng(2);
  rng.shuffle(std::span<Clip>(clips));
  const Corpus shuffled(s.corpus.captioner_ids(), s.corpus.f_dim(), clips);
  const text::MetricConfig mcfg;
  const auto idf = narration_idf(s.corpus, mcfg);
  const EvalContext ctx{"cap0", &idf, &lexicon(), mcfg, 2};
  const auto sel = baseline_select(s.corpus, BaselineKind::random, 1, "cap0", idf);
  const auto a = evaluate(sel, s.corpus, ctx);
  const auto b = evaluate(sel, shuffled, ctx);
  CHECK(a.means == b.means);

  const auto best = evaluate(baseline_select(s.corpus, BaselineKind::oracle_best, 0, "cap0", idf), s.corpus, ctx);
  for (BaselineKind k : {BaselineKind::ego_only, BaselineKind::random, BaselineKind::random_exo,
                         BaselineKind::longest_caption, BaselineKind::oracle_second, BaselineKind::oracle_worst}) {
    const auto other = evaluate(baseline_select(s.corpus, k, 3, "cap0", idf), s.corpus, ctx);
    CAPTURE(to_string(k));
    CHECK(best.mean(Metric::cider) >= other.mean(Metric::cider));
    for (const auto& [id, scores] : other.per_clip) CHECK(best.per_clip.at(id)[0] >= scores[0]);
  }
}

TEST_CASE("permutation test") {
  Rng rng(9);
  std::vector<double> x(30), pos(30);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.uniform(0, 50);
    pos[i] = x[i] + rng.uniform(0.1, 2.0);
  }
  const auto a = report_from("a", x);
  CHECK(permutation_test(a, a, Metric::cider, 1000, 1) == 1.0);
  const auto b = report_from("b", pos);
  const double p = permutation_test(b, a, Metric::cider, 10000, 1);
  CHECK(p <= 0.001);
  CHECK(p == 1.0 / 10001.0);
  CHECK(permutation_test(a, b, Metric::cider, 10000, 1) == p);
  std::vector<double> noisy(30);
  for (std::size_t i = 0; i < x.size(); ++i) noisy[i] = x[i] + rng.normal();
  const auto c = report_from("c", noisy);
  const double p1 = permutation_test(a, c, Metric::cider, 2000, 5, 1);
  CHECK(p1 == permutation_test(a, c, Metric::cider, 2000, 5, 3));
  CHECK(p1 > 0.0);
  CHECK(p1 <= 1.0);
  const auto shorter = report_from("s", std::vector<double>(x.begin(), x.begin() + 10));
  CHECK_THROWS_AS(permutation_test(a, shorter, Metric::cider, 100, 1), EvalError);
}

TEST_CASE("render_report") {
  auto r = report_from("ours", {13.46, 13.46});
  r.means = {13.46, 48.44, 1.0, 2.25, 99.96};
  CHECK(format_value(13.46) == "13.5");
  CHECK(format_value(0.0) == "0.0");
  const std::vector<MetricReport> one{r};
  const std::string text = render_report(one, ReportFormat::text);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);  // convention, header, one row
  CHECK(text.find("13.5") != std::string::npos);
  CHECK(text.find("100.0") != std::string::npos);
  auto r2 = r;
  r2.policy_name = "random";
  const std::vector<MetricReport> two{r, r2};
  const std::string csv = render_report(two, ReportFormat::csv);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(csv.substr(0, csv.find('\n')) == "policy,CIDEr,METEOR,V-IoU,N-IoU,NC-IoU");
  CHECK(csv.find("ours,13.5,48.4,1.0,2.2,100.0") != std::string::npos);
  const auto j = nlohmann::json::parse(render_report(two, ReportFormat::json));
  CHECK(j.at("reports").size() == 2);
  CHECK(j.at("reports")[0].at("CIDEr").get<double>() == 13.5);
  CHECK_THROWS_AS(render_report(std::vector<MetricReport>{}, ReportFormat::csv), EvalError);
}

TEST_CASE("selection and report files round-trip") {
  Selection sel{"ours", {{"b", 2}, {"a", 0}, {"c", 1}}};
  const nlohmann::json meta{{"seed", 3}};
  std::stringstream s;
  write_selection(s, sel, &meta);
  const Selection back = read_selection(s);
  CHECK(back.policy_name == "ours");
  CHECK(back.choice == sel.choice);
  std::istringstream truncated("{\"policy\":\"x\",\"clips\":2}\n{\"clip_id\":\"a\",\"view\":0}\n");
  CHECK_THROWS_AS(read_selection(truncated), EvalError);
  std::istringstream dup("{\"policy\":\"x\",\"clips\":2}\n{\"clip_id\":\"a\",\"view\":0}\n{\"clip_id\":\"a\",\"view\":1}\n");
  CHECK_THROWS_AS(read_selection(dup), EvalError);

  Rng rng(4);
  std::vector<double> x(7);
  for (double& v : x) v = rng.uniform(0.0, 100.0) / 3.0;
  std::vector<MetricReport> reports{report_from("ours", x), report_from("random", std::vector<double>(7, 0.1))};
  std::stringstream r;
  write_reports(r, reports, &meta);
  const auto rb = read_reports(r);
  REQUIRE(rb.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(rb[i].policy_name == reports[i].policy_name);
    CHECK(rb[i].per_clip == reports[i].per_clip);
    CHECK(rb[i].means == reports[i].means);
  }
  std::istringstream empty("");
  CHECK_THROWS_AS(read_reports(empty), EvalError);
}
