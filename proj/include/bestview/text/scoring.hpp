#pragma once

#include "bestview/text/cider.hpp"
#include "bestview/text/tokenize.hpp"

#include <string>
#include <string_view>

namespace bestview::text {

enum class ScoringMetric { cider, meteor };

ScoringMetric parse_scoring_metric(const std::string& s);
std::string to_string(ScoringMetric m);

struct MetricConfig {
  ScoringMetric metric = ScoringMetric::cider;
  bool stem = true;  // stem tokens before CIDEr n-gram extraction
  double sigma = kCiderSigma;
};

/// Token preparation used for IDF tables and CIDEr; METEOR always sees raw tokens.
TokenSeq cider_tokens(std::string_view text, const MetricConfig& cfg);

/// Scores a predicted caption against the ground-truth narration under cfg.
double caption_score(std::string_view candidate, std::string_view reference, const IdfTable& idf,
                     const MetricConfig& cfg);

}  // namespace bestview::text
