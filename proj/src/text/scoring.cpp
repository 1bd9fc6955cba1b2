#include "bestview/text/scoring.hpp"

#include "bestview/text/meteor.hpp"

#include <stdexcept>

namespace bestview::text {

ScoringMetric parse_scoring_metric(const std::string& s) {
  if (s == "cider") return ScoringMetric::cider;
  if (s == "meteor") return ScoringMetric::meteor;
  throw std::invalid_argument("unknown metric '" + s + "' (expected cider or meteor)");
}

std::string to_string(ScoringMetric m) { return m == ScoringMetric::cider ? "cider" : "meteor"; }

TokenSeq cider_tokens(std::string_view text, const MetricConfig& cfg) { return prepare(text, cfg.stem); }

double caption_score(std::string_view candidate, std::string_view reference, const IdfTable& idf,
                     const MetricConfig& cfg) {
  if (cfg.metric == ScoringMetric::meteor) return meteor_lite(tokenize(candidate), tokenize(reference));
  return cider_d(cider_tokens(candidate, cfg), cider_tokens(reference, cfg), idf, cfg.sigma);
}

}  // namespace bestview::text
