#pragma once

#include "bestview/corpus.hpp"
#include "bestview/text/scoring.hpp"

#include <iosfwd>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace bestview {

class LabelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using ViewSet = std::set<std::size_t>;

/// One captioner's view scores with dense ranks (1 = best, ties share a rank).
struct ViewScores {
  std::string captioner_id;
  std::vector<double> scores;
  std::vector<int> ranks;
  ViewSet top_set;
};

enum class AggregationPolicy { union_all, intersection_fallback, majority };

AggregationPolicy parse_policy(const std::string& s);
std::string to_string(AggregationPolicy p);

struct PseudoLabelSet {
  std::string clip_id;
  ViewSet labels;
  std::vector<ViewScores> per_captioner;
  AggregationPolicy policy = AggregationPolicy::union_all;
};

/// Dense ranking of raw scores. Throws LabelError on an empty score list.
ViewScores rank_scores(std::string captioner_id, std::vector<double> scores);

/// Scores every view's caption from `captioner_id` against the clip narration.
ViewScores score_and_rank(const Clip& clip, const std::string& captioner_id, const text::IdfTable& idf,
                          const text::MetricConfig& cfg = {});

/// union: every captioner's top views. intersection_fallback: views top for
/// all captioners, else the majority rule. majority: views top for at least
/// ceil(K/2) captioners, else union. Never empty.
ViewSet aggregate_consensus(std::span<const ViewScores> per_captioner, AggregationPolicy policy);

/// IDF over the corpus narrations, tokenized the way cfg scores CIDEr.
text::IdfTable narration_idf(const Corpus& corpus, const text::MetricConfig& cfg);

struct LabelOptions {
  text::MetricConfig metric;
  AggregationPolicy policy = AggregationPolicy::union_all;
  std::vector<std::string> captioners;  // empty means every corpus captioner
  const text::IdfTable* idf = nullptr;  // defaults to narration_idf(corpus)
  std::size_t jobs = 1;
};

struct LabelSummary {
  std::size_t clips = 0;
  std::vector<double> view_frequency;    // fraction of clips whose label set contains view n
  std::vector<std::size_t> set_size_hist;  // index s = number of clips with |labels| == s
};

struct LabelingResult {
  std::vector<PseudoLabelSet> labels;  // corpus order
  LabelSummary summary;

  const PseudoLabelSet* find(const std::string& clip_id) const;
};

LabelingResult label_corpus(const Corpus& corpus, const LabelOptions& opts = {});

LabelSummary summarize_labels(std::span<const PseudoLabelSet> labels, std::size_t n_views);

/// JSON-lines label file, one clip per line. An optional leading
/// {"_meta": ...} line carries provenance and is skipped on read.
void write_labels(std::ostream& out, std::span<const PseudoLabelSet> labels, const nlohmann::json* meta = nullptr);
std::vector<PseudoLabelSet> read_labels(std::istream& in);

}  // namespace bestview
