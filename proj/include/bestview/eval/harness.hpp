#pragma once

#include "bestview/corpus.hpp"
#include "bestview/pseudolabel.hpp"
#include "bestview/selector/model.hpp"
#include "bestview/text/terms.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace bestview::eval {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class BaselineKind { ego_only, random, random_exo, longest_caption, oracle_best, oracle_second, oracle_worst };

BaselineKind parse_baseline(const std::string& s);
std::string to_string(BaselineKind k);

struct Selection {
  std::string policy_name;
  std::map<std::string, std::size_t> choice;  // clip_id -> view index
};

/// Oracles rank views by the eval captioner's caption score (cfg.metric)
/// against the narration; ties keep the lower view index first.
Selection baseline_select(const Corpus& corpus, BaselineKind kind, std::uint64_t seed,
                          const std::string& eval_captioner, const text::IdfTable& idf,
                          const text::MetricConfig& cfg = {});

/// Picks the view at position `rank` of the selector's descending logit order.
Selection selector_select(const Corpus& corpus, const selector::SelectorParams& params,
                          const std::string& policy_name, std::size_t rank = 0);

enum class Metric { cider, meteor, v_iou, n_iou, nc_iou };
inline constexpr std::array<Metric, 5> kAllMetrics{Metric::cider, Metric::meteor, Metric::v_iou, Metric::n_iou,
                                                   Metric::nc_iou};

Metric parse_metric(const std::string& s);
std::string to_string(Metric m);
/// Column heading used in rendered reports.
std::string column_name(Metric m);

/// Reported scale: CIDEr-D native [0, 10] times 10, the others times 100.
inline constexpr const char* kReportConvention =
    "CIDEr = mean CIDEr-D x 10 (identical captions -> 100.0); METEOR, V-IoU, N-IoU, NC-IoU = mean x 100";

struct MetricReport {
  std::string policy_name;
  std::map<std::string, std::array<double, 5>> per_clip;  // clip_id -> reported-scale scores
  std::array<double, 5> means{};

  double mean(Metric m) const { return means[static_cast<std::size_t>(m)]; }
  /// Per-clip values of one metric in clip_id order.
  std::vector<double> values(Metric m) const;
  void recompute_means();
};

struct EvalContext {
  std::string eval_captioner;
  const text::IdfTable* idf = nullptr;
  const text::TermLexicon* lexicon = nullptr;
  text::MetricConfig cider_cfg;
  std::size_t jobs = 1;
};

MetricReport evaluate(const Selection& selection, const Corpus& corpus, const EvalContext& ctx);

/// Two-sided paired sign-flip test on per-clip differences of one metric.
/// p = (1 + #{|flipped mean| >= |observed mean|}) / (1 + iterations).
double permutation_test(const MetricReport& a, const MetricReport& b, Metric metric, std::size_t iterations,
                        std::uint64_t seed, std::size_t jobs = 1);

/// JSON lines: a {"policy", "clips"} header (optional "_meta") then one
/// {"clip_id", "view"} row per clip in clip_id order.
void write_selection(std::ostream& out, const Selection& sel, const nlohmann::json* meta = nullptr);
Selection read_selection(std::istream& in);

/// JSON lines keeping per-clip scores, so reports can be re-rendered and
/// re-tested later: a header line then one {"policy", "per_clip"} row each.
void write_reports(std::ostream& out, std::span<const MetricReport> reports, const nlohmann::json* meta = nullptr);
std::vector<MetricReport> read_reports(std::istream& in);

enum class ReportFormat { text, csv, json };
ReportFormat parse_report_format(const std::string& s);

std::string render_report(std::span<const MetricReport> reports, ReportFormat format);

/// One-decimal fixed rendering used in every report format.
std::string format_value(double v);

}  // namespace bestview::eval
