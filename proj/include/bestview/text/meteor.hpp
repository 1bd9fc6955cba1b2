#pragma once

#include "bestview/text/tokenize.hpp"

#include <cstddef>
#include <optional>
#include <vector>

namespace bestview::text {

struct MeteorParams {
  double alpha = 0.9;
  double beta = 3.0;
  double gamma = 0.5;
};

/// Unigram alignment between candidate and reference. ref_of[i] is the
/// reference position aligned to candidate token i, if any.
struct MeteorAlignment {
  std::vector<std::optional<std::size_t>> ref_of;
  std::size_t matches = 0;
  std::size_t chunks = 0;
};

/// Two stages, exact surface match then Porter-stem match, each taking as many
/// matches as possible. Among those alignments the one with the fewest chunks
/// wins. A greedy left-to-right pass (extend the previous chunk, else the
/// leftmost free position) gives the starting bound for an exhaustive
/// branch-and-bound search; the search is capped at a fixed node budget, which
/// caption-length inputs never reach.
MeteorAlignment meteor_align(const TokenSeq& candidate, const TokenSeq& reference);

/// Counts maximal runs contiguous in both candidate and reference.
std::size_t count_chunks(const std::vector<std::optional<std::size_t>>& ref_of);

/// METEOR without synonym or paraphrase stages, in [0, 1]. Expects unstemmed tokens.
double meteor_lite(const TokenSeq& candidate, const TokenSeq& reference, const MeteorParams& params = {});

/// Score from alignment statistics: F-mean times (1 - fragmentation penalty).
double meteor_from_counts(std::size_t matches, std::size_t chunks, std::size_t candidate_len,
                          std::size_t reference_len, const MeteorParams& params = {});

}  // namespace bestview::text
