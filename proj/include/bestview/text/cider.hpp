#pragma once

#include "bestview/text/tokenize.hpp"

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>

namespace bestview::text {

inline constexpr std::size_t kMaxNgram = 4;
inline constexpr double kCiderSigma = 6.0;

using NgramCounts = std::unordered_map<std::string, int>;

/// Counts of every n-gram of exactly length n, keyed by the space-joined tokens.
NgramCounts count_ngrams(const TokenSeq& tokens, std::size_t n);

/// Document frequencies of 1..4-grams over a reference collection.
class IdfTable {
 public:
  IdfTable() = default;

  std::size_t doc_count() const { return doc_count_; }

  /// Stored document frequency, 0 when the n-gram never occurred.
  int df(std::size_t n, const std::string& ngram) const;

  /// ln(doc_count / df) with df clamped to at least 1 for unseen n-grams.
  double idf(std::size_t n, const std::string& ngram) const;

  const NgramCounts& table(std::size_t n) const { return df_.at(n - 1); }

 private:
  friend IdfTable build_idf(std::span<const TokenSeq> references);

  std::array<NgramCounts, kMaxNgram> df_{};
  std::size_t doc_count_ = 0;
};

/// Throws std::invalid_argument when references is empty.
IdfTable build_idf(std::span<const TokenSeq> references);

/// CIDEr-D of one candidate against one reference, in [0, 10].
///
/// For each n in 1..4 the candidate and reference become TF-IDF vectors over
/// their n-grams. The candidate's counts are clipped to the reference counts in
/// the dot product (norms use the unclipped vectors), and the cosine is scaled
/// by the Gaussian length penalty exp(-(|c| - |r|)^2 / (2 sigma^2)). The score
/// is 10 times the mean over n. A zero-norm side contributes 0 for that n.
double cider_d(const TokenSeq& candidate, const TokenSeq& reference, const IdfTable& idf,
               double sigma = kCiderSigma);

}  // namespace bestview::text
