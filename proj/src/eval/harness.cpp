#include "bestview/eval/harness.hpp"

#include "bestview/parallel.hpp"
#include "bestview/rng.hpp"
#include "bestview/text/meteor.hpp"
#include "bestview/text/scoring.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace bestview::eval {

namespace {

const std::array<std::pair<BaselineKind, const char*>, 7> kBaselineNames{{
    {BaselineKind::ego_only, "ego_only"},
    {BaselineKind::random, "random"},
    {BaselineKind::random_exo, "random_exo"},
    {BaselineKind::longest_caption, "longest_caption"},
    {BaselineKind::oracle_best, "oracle_best"},
    {BaselineKind::oracle_second, "oracle_second"},
    {BaselineKind::oracle_worst, "oracle_worst"},
}};

const std::array<const char*, 5> kMetricNames{"cider", "meteor", "v_iou", "n_iou", "nc_iou"};
const std::array<const char*, 5> kColumnNames{"CIDEr", "METEOR", "V-IoU", "N-IoU", "NC-IoU"};

const std::string& caption_of(const Clip& clip, std::size_t v, const std::string& captioner) {
  const auto it = clip.views[v].captions.find(captioner);
  if (it == clip.views[v].captions.end()) {
    throw EvalError("clip " + clip.clip_id + " view " + clip.views[v].view_id + ": no caption from captioner '" +
                    captioner + "'");
  }
  return it->second;
}

}  // namespace

BaselineKind parse_baseline(const std::string& s) {
  for (const auto& [k, name] : kBaselineNames) {
    if (s == name) return k;
  }
  throw EvalError("unknown baseline '" + s + "'");
}

std::string to_string(BaselineKind k) {
  for (const auto& [kind, name] : kBaselineNames) {
    if (kind == k) return name;
  }
  return "?";
}

Metric parse_metric(const std::string& s) {
  for (std::size_t k = 0; k < kMetricNames.size(); ++k) {
    if (s == kMetricNames[k]) return static_cast<Metric>(k);
  }
  throw EvalError("unknown metric '" + s + "'");
}

std::string to_string(Metric m) { return kMetricNames[static_cast<std::size_t>(m)]; }
std::string column_name(Metric m) { return kColumnNames[static_cast<std::size_t>(m)]; }

Selection baseline_select(const Corpus& corpus, BaselineKind kind, std::uint64_t seed,
                          const std::string& eval_captioner, const text::IdfTable& idf,
                          const text::MetricConfig& cfg) {
  Selection sel;
  sel.policy_name = to_string(kind);
  for (const Clip& clip : corpus.clips()) {
    const std::size_t n = clip.views.size();
    Rng rng(derive_seed(seed, stable_hash(clip.clip_id)));
    std::size_t pick = 0;
    switch (kind) {
      case BaselineKind::ego_only:
        pick = clip.ego_index();
        break;
      case BaselineKind::random:
        pick = rng.below(n);
        break;
      case BaselineKind::random_exo: {
        std::vector<std::size_t> exo;
        for (std::size_t v = 0; v < n; ++v) {
          if (!clip.views[v].is_ego) exo.push_back(v);
        }
        if (exo.empty()) throw EvalError("clip " + clip.clip_id + " has no exo views");
        pick = exo[rng.below(exo.size())];
        break;
      }
      case BaselineKind::longest_caption: {
        std::size_t best_len = 0;
        for (std::size_t v = 0; v < n; ++v) {
          const std::size_t len = text::tokenize(caption_of(clip, v, eval_captioner)).size();
          if (v == 0 || len > best_len) {
            best_len = len;
            pick = v;
          }
        }
        break;
      }
      case BaselineKind::oracle_best:
      case BaselineKind::oracle_second:
      case BaselineKind::oracle_worst: {
        for (std::size_t v = 0; v < n; ++v) caption_of(clip, v, eval_captioner);
        const ViewScores vs = score_and_rank(clip, eval_captioner, idf, cfg);
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return vs.scores[a] > vs.scores[b]; });
        const std::size_t pos = kind == BaselineKind::oracle_best ? 0 : kind == BaselineKind::oracle_second ? 1 : n - 1;
        pick = order[std::min(pos, n - 1)];
        break;
      }
    }
    sel.choice[clip.clip_id] = pick;
  }
  return sel;
}

Selection selector_select(const Corpus& corpus, const selector::SelectorParams& params,
                          const std::string& policy_name, std::size_t rank) {
  Selection sel;
  sel.policy_name = policy_name;
  for (const Clip& clip : corpus.clips()) {
    const auto s = selector::select(params, selector::clip_features(clip));
    if (rank >= s.order.size()) throw EvalError("rank " + std::to_string(rank) + " exceeds the view count");
    sel.choice[clip.clip_id] = s.order[rank];
  }
  return sel;
}

std::vector<double> MetricReport::values(Metric m) const {
  std::vector<double> out;
  out.reserve(per_clip.size());
  for (const auto& [id, scores] : per_clip) out.push_back(scores[static_cast<std::size_t>(m)]);
  return out;
}

MetricReport evaluate(const Selection& selection, const Corpus& corpus, const EvalContext& ctx) {
  if (!ctx.idf || !ctx.lexicon) throw EvalError("evaluate needs an IDF table and a lexicon");
  if (selection.choice.size() != corpus.size()) {
    throw EvalError("selection '" + selection.policy_name + "' covers " + std::to_string(selection.choice.size()) +
                    " clips, corpus has " + std::to_string(corpus.size()));
  }
  std::vector<std::array<double, 5>> rows(corpus.size());
  parallel_for(corpus.size(), ctx.jobs, [&](std::size_t i) {
    const Clip& clip = corpus.clip(i);
    const auto it = selection.choice.find(clip.clip_id);
    if (it == selection.choice.end()) throw EvalError("selection has no view for clip " + clip.clip_id);
    if (it->second >= clip.views.size()) throw EvalError("selected view out of range for clip " + clip.clip_id);
    const std::string& cap = caption_of(clip, it->second, ctx.eval_captioner);
    const text::TokenSeq ct = text::tokenize(cap);
    const text::TokenSeq rt = text::tokenize(clip.narration);
    auto iou = [&](text::TermKind k) {
      return text::term_iou(text::extract_terms(ct, k, *ctx.lexicon), text::extract_terms(rt, k, *ctx.lexicon));
    };
    text::MetricConfig cider_cfg = ctx.cider_cfg;
    cider_cfg.metric = text::ScoringMetric::cider;
    rows[i] = {10.0 * text::caption_score(cap, clip.narration, *ctx.idf, cider_cfg),
               100.0 * text::meteor_lite(ct, rt), 100.0 * iou(text::TermKind::verb),
               100.0 * iou(text::TermKind::noun), 100.0 * iou(text::TermKind::noun_chunk)};
  });
  MetricReport r;
  r.policy_name = selection.policy_name;
  for (std::size_t i = 0; i < corpus.size(); ++i) r.per_clip[corpus.clip(i).clip_id] = rows[i];
  r.recompute_means();
  return r;
}

void MetricReport::recompute_means() {
  // Sum in clip_id order so the means do not depend on corpus order.
  for (std::size_t m = 0; m < 5; ++m) {
    double s = 0.0;
    for (const auto& [id, scores] : per_clip) s += scores[m];
    means[m] = per_clip.empty() ? 0.0 : s / static_cast<double>(per_clip.size());
  }
}

void write_selection(std::ostream& out, const Selection& sel, const nlohmann::json* meta) {
  nlohmann::ordered_json header;
  header["policy"] = sel.policy_name;
  header["clips"] = sel.choice.size();
  if (meta) header["_meta"] = *meta;
  out << header.dump() << '\n';
  for (const auto& [clip_id, view] : sel.choice) {
    nlohmann::ordered_json row;
    row["clip_id"] = clip_id;
    row["view"] = view;
    out << row.dump() << '\n';
  }
}

Selection read_selection(std::istream& in) {
  Selection sel;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  std::size_t expected = 0;
  try {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const auto j = nlohmann::json::parse(line);
      if (!have_header) {
        sel.policy_name = j.at("policy").get<std::string>();
        expected = j.at("clips").get<std::size_t>();
        have_header = true;
        continue;
      }
      const auto id = j.at("clip_id").get<std::string>();
      if (!sel.choice.emplace(id, j.at("view").get<std::size_t>()).second) {
        throw EvalError("duplicate clip " + id);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw EvalError("selection line " + std::to_string(lineno) + ": " + e.what());
  } catch (const EvalError& e) {
    throw EvalError("selection line " + std::to_string(lineno) + ": " + e.what());
  }
  if (!have_header) throw EvalError("selection file is empty");
  if (sel.choice.size() != expected) {
    throw EvalError("selection header promises " + std::to_string(expected) + " clips, found " +
                    std::to_string(sel.choice.size()));
  }
  return sel;
}

void write_reports(std::ostream& out, std::span<const MetricReport> reports, const nlohmann::json* meta) {
  nlohmann::ordered_json header;
  header["convention"] = kReportConvention;
  header["reports"] = reports.size();
  if (meta) header["_meta"] = *meta;
  out << header.dump() << '\n';
  for (const auto& r : reports) {
    nlohmann::ordered_json row;
    row["policy"] = r.policy_name;
    nlohmann::ordered_json clips = nlohmann::ordered_json::object();
    for (const auto& [id, scores] : r.per_clip) clips[id] = scores;
    row["per_clip"] = clips;
    out << row.dump() << '\n';
  }
}

std::vector<MetricReport> read_reports(std::istream& in) {
  std::vector<MetricReport> out;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  std::size_t expected = 0;
  try {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const auto j = nlohmann::json::parse(line);
      if (!have_header) {
        expected = j.at("reports").get<std::size_t>();
        have_header = true;
        continue;
      }
      MetricReport r;
      r.policy_name = j.at("policy").get<std::string>();
      for (const auto& [id, v] : j.at("per_clip").items()) r.per_clip[id] = v.get<std::array<double, 5>>();
      r.recompute_means();
      out.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw EvalError("report line " + std::to_string(lineno) + ": " + e.what());
  }
  if (!have_header) throw EvalError("report file is empty");
  if (out.size() != expected) {
    throw EvalError("report header promises " + std::to_string(expected) + " reports, found " +
                    std::to_string(out.size()));
  }
  return out;
}

double permutation_test(const MetricReport& a, const MetricReport& b, Metric metric, std::size_t iterations,
                        std::uint64_t seed, std::size_t jobs) {
  if (a.per_clip.size() != b.per_clip.size() ||
      !std::equal(a.per_clip.begin(), a.per_clip.end(), b.per_clip.begin(),
                  [](const auto& x, const auto& y) { return x.first == y.first; })) {
    throw EvalError("permutation_test: reports cover different clips");
  }
  if (a.per_clip.empty()) throw EvalError("permutation_test: no clips");
  if (iterations == 0) throw EvalError("permutation_test: iterations must be positive");
  const auto va = a.values(metric);
  const auto vb = b.values(metric);
  std::vector<double> d(va.size());
  double abs_sum = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = va[i] - vb[i];
    abs_sum += std::abs(d[i]);
  }
  const double observed = std::abs(std::accumulate(d.begin(), d.end(), 0.0));
  // Flips that reproduce the observed magnitude must count even when their
  // floating-point sum differs in the last bits.
  const double slack = 1e-12 * abs_sum;
  std::vector<unsigned char> extreme(iterations, 0);
  parallel_for(iterations, jobs, [&](std::size_t it) {
    Rng rng(derive_seed(seed, it));
    double s = 0.0;
    for (double x : d) s += rng.coin(0.5) ? x : -x;
    extreme[it] = std::abs(s) >= observed - slack ? 1 : 0;
  });
  const std::size_t count = std::accumulate(extreme.begin(), extreme.end(), std::size_t{0});
  return static_cast<double>(1 + count) / static_cast<double>(1 + iterations);
}

ReportFormat parse_report_format(const std::string& s) {
  if (s == "text") return ReportFormat::text;
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  throw EvalError("unknown report format '" + s + "'");
}

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::string render_report(std::span<const MetricReport> reports, ReportFormat format) {
  if (reports.empty()) throw EvalError("render_report: no reports");
  std::ostringstream out;
  switch (format) {
    case ReportFormat::csv: {
      out << "policy";
      for (Metric m : kAllMetrics) out << ',' << column_name(m);
      out << '\n';
      for (const auto& r : reports) {
        out << r.policy_name;
        for (Metric m : kAllMetrics) out << ',' << format_value(r.mean(m));
        out << '\n';
      }
      break;
    }
    case ReportFormat::json: {
      nlohmann::ordered_json rows = nlohmann::ordered_json::array();
      for (const auto& r : reports) {
        nlohmann::ordered_json row;
        row["policy"] = r.policy_name;
        row["clips"] = r.per_clip.size();
        // Rendered strings parsed back, so JSON carries the same rounding as text.
        for (Metric m : kAllMetrics) row[column_name(m)] = std::stod(format_value(r.mean(m)));
        rows.push_back(row);
      }
      nlohmann::ordered_json doc;
      doc["convention"] = kReportConvention;
      doc["reports"] = rows;
      out << doc.dump(2) << '\n';
      break;
    }
    case ReportFormat::text: {
      std::size_t width = 6;
      for (const auto& r : reports) width = std::max(width, r.policy_name.size());
      out << "# " << kReportConvention << '\n';
      out << std::left << std::setw(static_cast<int>(width)) << "policy";
      for (Metric m : kAllMetrics) out << "  " << std::right << std::setw(7) << column_name(m);
      out << '\n';
      for (const auto& r : reports) {
        out << std::left << std::setw(static_cast<int>(width)) << r.policy_name;
        for (Metric m : kAllMetrics) out << "  " << std::right << std::setw(7) << format_value(r.mean(m));
        out << '\n';
      }
      break;
    }
  }
  return out.str();
}

}  // namespace bestview::eval
