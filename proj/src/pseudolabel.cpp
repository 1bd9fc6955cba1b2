#include "bestview/pseudolabel.hpp"

#include "bestview/parallel.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>

namespace bestview {

using nlohmann::json;

AggregationPolicy parse_policy(const std::string& s) {
  if (s == "union") return AggregationPolicy::union_all;
  if (s == "intersection_fallback") return AggregationPolicy::intersection_fallback;
  if (s == "majority") return AggregationPolicy::majority;
  throw std::invalid_argument("unknown policy '" + s + "' (expected union, intersection_fallback or majority)");
}

std::string to_string(AggregationPolicy p) {
  switch (p) {
    case AggregationPolicy::union_all: return "union";
    case AggregationPolicy::intersection_fallback: return "intersection_fallback";
    case AggregationPolicy::majority: return "majority";
  }
  return "union";
}

ViewScores rank_scores(std::string captioner_id, std::vector<double> scores) {
  if (scores.empty()) throw LabelError("rank_scores: no views to rank");
  std::vector<double> distinct = scores;
  std::sort(distinct.begin(), distinct.end(), std::greater<>());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  ViewScores vs;
  vs.captioner_id = std::move(captioner_id);
  vs.ranks.resize(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto pos = std::lower_bound(distinct.begin(), distinct.end(), scores[i], std::greater<>());
    vs.ranks[i] = static_cast<int>(pos - distinct.begin()) + 1;
    if (vs.ranks[i] == 1) vs.top_set.insert(i);
  }
  vs.scores = std::move(scores);
  return vs;
}

ViewScores score_and_rank(const Clip& clip, const std::string& captioner_id, const text::IdfTable& idf,
                          const text::MetricConfig& cfg) {
  std::vector<double> scores;
  scores.reserve(clip.views.size());
  for (const auto& v : clip.views) {
    const auto it = v.captions.find(captioner_id);
    if (it == v.captions.end()) {
      throw LabelError("clip " + clip.clip_id + " view " + v.view_id + ": missing caption for captioner " +
                       captioner_id);
    }
    scores.push_back(text::caption_score(it->second, clip.narration, idf, cfg));
  }
  return rank_scores(captioner_id, std::move(scores));
}

ViewSet aggregate_consensus(std::span<const ViewScores> per_captioner, AggregationPolicy policy) {
  if (per_captioner.empty()) throw LabelError("aggregate_consensus: no captioners");
  const std::size_t n = per_captioner.front().scores.size();
  std::vector<std::size_t> votes(n, 0);
  for (const auto& vs : per_captioner) {
    if (vs.scores.size() != n || vs.ranks.size() != n) {
      throw LabelError("aggregate_consensus: inconsistent view counts across captioners");
    }
    for (std::size_t v : vs.top_set) {
      if (v >= n) throw LabelError("aggregate_consensus: top view index out of range");
      ++votes[v];
    }
  }
  const std::size_t k = per_captioner.size();
  auto with_votes = [&](std::size_t min_votes) {
    ViewSet s;
    for (std::size_t v = 0; v < n; ++v) {
      if (votes[v] >= min_votes) s.insert(v);
    }
    return s;
  };
  const ViewSet all = with_votes(1);
  const ViewSet majority = with_votes((k + 1) / 2);
  switch (policy) {
    case AggregationPolicy::union_all:
      return all;
    case AggregationPolicy::intersection_fallback:
      if (auto inter = with_votes(k); !inter.empty()) return inter;
      return majority.empty() ? all : majority;
    case AggregationPolicy::majority:
      return majority.empty() ? all : majority;
  }
  return all;
}

text::IdfTable narration_idf(const Corpus& corpus, const text::MetricConfig& cfg) {
  std::vector<text::TokenSeq> refs;
  refs.reserve(corpus.size());
  for (const auto& clip : corpus.clips()) refs.push_back(text::cider_tokens(clip.narration, cfg));
  return text::build_idf(refs);
}

const PseudoLabelSet* LabelingResult::find(const std::string& clip_id) const {
  for (const auto& l : labels) {
    if (l.clip_id == clip_id) return &l;
  }
  return nullptr;
}

LabelSummary summarize_labels(std::span<const PseudoLabelSet> labels, std::size_t n_views) {
  LabelSummary s;
  s.clips = labels.size();
  s.view_frequency.assign(n_views, 0.0);
  s.set_size_hist.assign(n_views + 1, 0);
  for (const auto& l : labels) {
    for (std::size_t v : l.labels) {
      if (v < n_views) s.view_frequency[v] += 1.0;
    }
    if (l.labels.size() <= n_views) ++s.set_size_hist[l.labels.size()];
  }
  if (s.clips > 0) {
    for (auto& f : s.view_frequency) f /= static_cast<double>(s.clips);
  }
  return s;
}

LabelingResult label_corpus(const Corpus& corpus, const LabelOptions& opts) {
  if (corpus.empty()) throw LabelError("label_corpus: empty corpus");
  const std::vector<std::string>& captioners = opts.captioners.empty() ? corpus.captioner_ids() : opts.captioners;
  for (const auto& c : captioners) {
    if (std::find(corpus.captioner_ids().begin(), corpus.captioner_ids().end(), c) == corpus.captioner_ids().end()) {
      throw LabelError("label_corpus: unknown captioner " + c);
    }
  }
  text::IdfTable own;
  const text::IdfTable* idf = opts.idf;
  if (!idf) {
    own = narration_idf(corpus, opts.metric);
    idf = &own;
  }

  LabelingResult result;
  result.labels.resize(corpus.size());
  parallel_for(corpus.size(), opts.jobs, [&](std::size_t i) {
    const Clip& clip = corpus.clip(i);
    PseudoLabelSet& out = result.labels[i];
    out.clip_id = clip.clip_id;
    out.policy = opts.policy;
    for (const auto& c : captioners) out.per_captioner.push_back(score_and_rank(clip, c, *idf, opts.metric));
    out.labels = aggregate_consensus(out.per_captioner, opts.policy);
  });
  result.summary = summarize_labels(result.labels, corpus.view_count());
  return result;
}

void write_labels(std::ostream& out, std::span<const PseudoLabelSet> labels, const json* meta) {
  if (meta) out << json{{"_meta", *meta}}.dump() << '\n';
  for (const auto& l : labels) {
    json per = json::array();
    for (const auto& vs : l.per_captioner) {
      per.push_back({{"captioner_id", vs.captioner_id}, {"scores", vs.scores}, {"ranks", vs.ranks}});
    }
    json line{{"clip_id", l.clip_id},
              {"labels", std::vector<std::size_t>(l.labels.begin(), l.labels.end())},
              {"policy", to_string(l.policy)},
              {"per_captioner", std::move(per)}};
    out << line.dump() << '\n';
  }
}

std::vector<PseudoLabelSet> read_labels(std::istream& in) {
  std::vector<PseudoLabelSet> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (j.contains("_meta")) continue;
      PseudoLabelSet l;
      l.clip_id = j.at("clip_id").get<std::string>();
      for (auto v : j.at("labels").get<std::vector<std::size_t>>()) l.labels.insert(v);
      if (l.labels.empty()) throw LabelError("empty label set");
      if (j.contains("policy")) l.policy = parse_policy(j.at("policy").get<std::string>());
      if (j.contains("per_captioner")) {
        for (const auto& pc : j.at("per_captioner")) {
          ViewScores vs = rank_scores(pc.at("captioner_id").get<std::string>(),
                                      pc.at("scores").get<std::vector<double>>());
          if (pc.contains("ranks") && pc.at("ranks").get<std::vector<int>>() != vs.ranks) {
            throw LabelError("ranks inconsistent with scores");
          }
          l.per_captioner.push_back(std::move(vs));
        }
      }
      out.push_back(std::move(l));
    } catch (const json::exception& e) {
      throw LabelError("label file line " + std::to_string(lineno) + ": " + e.what());
    } catch (const std::exception& e) {
      throw LabelError("label file line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace bestview
