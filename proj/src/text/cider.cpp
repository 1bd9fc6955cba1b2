#include "bestview/text/cider.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bestview::text {

NgramCounts count_ngrams(const TokenSeq& tokens, std::size_t n) {
  NgramCounts counts;
  if (n == 0 || tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++counts[join(tokens, i, i + n)];
  return counts;
}

int IdfTable::df(std::size_t n, const std::string& ngram) const {
  const auto& t = df_.at(n - 1);
  const auto it = t.find(ngram);
  return it == t.end() ? 0 : it->second;
}

double IdfTable::idf(std::size_t n, const std::string& ngram) const {
  const int d = std::max(df(n, ngram), 1);
  return std::log(static_cast<double>(doc_count_) / static_cast<double>(d));
}

IdfTable build_idf(std::span<const TokenSeq> references) {
  if (references.empty()) throw std::invalid_argument("build_idf: empty reference list");
  IdfTable t;
  t.doc_count_ = references.size();
  for (const auto& ref : references) {
    for (std::size_t n = 1; n <= kMaxNgram; ++n) {
      for (const auto& [gram, count] : count_ngrams(ref, n)) ++t.df_[n - 1][gram];
    }
  }
  return t;
}

double cider_d(const TokenSeq& candidate, const TokenSeq& reference, const IdfTable& idf, double sigma) {
  const double delta = static_cast<double>(candidate.size()) - static_cast<double>(reference.size());
  const double penalty = std::exp(-(delta * delta) / (2.0 * sigma * sigma));

  double total = 0.0;
  for (std::size_t n = 1; n <= kMaxNgram; ++n) {
    const NgramCounts c = count_ngrams(candidate, n);
    const NgramCounts r = count_ngrams(reference, n);

    double norm_c = 0.0;
    double dot = 0.0;
    for (const auto& [gram, tf] : c) {
      const double w = idf.idf(n, gram);
      const double vc = tf * w;
      norm_c += vc * vc;
      if (const auto it = r.find(gram); it != r.end()) {
        const double vr = it->second * w;
        dot += std::min(vc, vr) * vr;
      }
    }
    double norm_r = 0.0;
    for (const auto& [gram, tf] : r) {
      const double vr = tf * idf.idf(n, gram);
      norm_r += vr * vr;
    }
    if (norm_c <= 0.0 || norm_r <= 0.0) continue;
    const double cosine = std::min(1.0, dot / (std::sqrt(norm_c) * std::sqrt(norm_r)));
    total += penalty * cosine;
  }
  return 10.0 * total / static_cast<double>(kMaxNgram);
}

}  // namespace bestview::text
