#include "bestview/text/meteor.hpp"

#include "bestview/text/stemmer.hpp"

#include <cmath>

namespace bestview::text {

namespace {

template <typename Eq>
void align_stage(MeteorAlignment& a, std::vector<bool>& ref_used, std::size_t ref_len, Eq eq) {
  for (std::size_t i = 0; i < a.ref_of.size(); ++i) {
    if (a.ref_of[i]) continue;
    std::optional<std::size_t> pick;
    if (i > 0 && a.ref_of[i - 1]) {
      const std::size_t next = *a.ref_of[i - 1] + 1;
      if (next < ref_len && !ref_used[next] && eq(i, next)) pick = next;
    }
    for (std::size_t j = 0; !pick && j < ref_len; ++j) {
      if (!ref_used[j] && eq(i, j)) pick = j;
    }
    if (pick) {
      a.ref_of[i] = pick;
      ref_used[*pick] = true;
      ++a.matches;
    }
  }
}

}  // namespace

std::size_t count_chunks(const std::vector<std::optional<std::size_t>>& ref_of) {
  std::size_t chunks = 0;
  for (std::size_t i = 0; i < ref_of.size(); ++i) {
    if (!ref_of[i]) continue;
    const bool continues = i > 0 && ref_of[i - 1] && *ref_of[i - 1] + 1 == *ref_of[i];
    if (!continues) ++chunks;
  }
  return chunks;
}

namespace {

// Depth-first search over candidate positions for the alignment with the
// fewest chunks among those with the maximum exact-match count and the
// maximum total match count. The greedy alignment seeds the bound.
class ChunkSearch {
 public:
  ChunkSearch(const TokenSeq& c, const TokenSeq& r, const TokenSeq& cs, const TokenSeq& rs,
              MeteorAlignment greedy, std::size_t exact_target)
      : c_(c), r_(r), cs_(cs), rs_(rs), best_(std::move(greedy)), exact_target_(exact_target),
        cur_(c.size()), used_(r.size(), false), can_match_(c.size() + 1, 0), can_exact_(c.size() + 1, 0) {
    for (std::size_t i = c.size(); i-- > 0;) {
      bool any = false;
      bool any_exact = false;
      for (std::size_t j = 0; j < r.size(); ++j) {
        any = any || cs[i] == rs[j];
        any_exact = any_exact || c[i] == r[j];
      }
      can_match_[i] = can_match_[i + 1] + (any ? 1 : 0);
      can_exact_[i] = can_exact_[i + 1] + (any_exact ? 1 : 0);
    }
  }

  MeteorAlignment run() {
    if (best_.chunks > 1) dfs(0, 0, 0, 0);
    return best_;
  }

 private:
  static constexpr std::size_t kNodeBudget = 2'000'000;

  void dfs(std::size_t i, std::size_t matched, std::size_t exact, std::size_t chunks) {
    if (chunks >= best_.chunks || ++nodes_ > kNodeBudget) return;
    if (matched + can_match_[i] < best_.matches || exact + can_exact_[i] < exact_target_) return;
    if (i == c_.size()) {
      best_.ref_of = cur_;
      best_.chunks = chunks;
      return;
    }
    const std::optional<std::size_t> extend =
        (i > 0 && cur_[i - 1]) ? std::optional<std::size_t>(*cur_[i - 1] + 1) : std::nullopt;
    auto try_ref = [&](std::size_t j) {
      if (j >= r_.size() || used_[j] || cs_[i] != rs_[j]) return;
      const bool is_exact = c_[i] == r_[j];
      used_[j] = true;
      cur_[i] = j;
      dfs(i + 1, matched + 1, exact + (is_exact ? 1 : 0), chunks + (extend == j ? 0 : 1));
      cur_[i].reset();
      used_[j] = false;
    };
    if (extend) try_ref(*extend);
    for (std::size_t j = 0; j < r_.size(); ++j) {
      if (extend != j) try_ref(j);
    }
    dfs(i + 1, matched, exact, chunks);
  }

  const TokenSeq& c_;
  const TokenSeq& r_;
  const TokenSeq& cs_;
  const TokenSeq& rs_;
  MeteorAlignment best_;
  std::size_t exact_target_;
  std::vector<std::optional<std::size_t>> cur_;
  std::vector<bool> used_;
  std::vector<std::size_t> can_match_;
  std::vector<std::size_t> can_exact_;
  std::size_t nodes_ = 0;
};

}  // namespace

MeteorAlignment meteor_align(const TokenSeq& candidate, const TokenSeq& reference) {
  MeteorAlignment a;
  a.ref_of.assign(candidate.size(), std::nullopt);
  std::vector<bool> ref_used(reference.size(), false);

  align_stage(a, ref_used, reference.size(),
              [&](std::size_t i, std::size_t j) { return candidate[i] == reference[j]; });
  const std::size_t exact_matches = a.matches;

  TokenSeq cs(candidate.size());
  TokenSeq rs(reference.size());
  for (std::size_t i = 0; i < candidate.size(); ++i) cs[i] = porter_stem(candidate[i]);
  for (std::size_t j = 0; j < reference.size(); ++j) rs[j] = porter_stem(reference[j]);
  align_stage(a, ref_used, reference.size(), [&](std::size_t i, std::size_t j) { return cs[i] == rs[j]; });

  a.chunks = count_chunks(a.ref_of);
  if (a.matches == 0) return a;
  return ChunkSearch(candidate, reference, cs, rs, std::move(a), exact_matches).run();
}

double meteor_from_counts(std::size_t matches, std::size_t chunks, std::size_t candidate_len,
                          std::size_t reference_len, const MeteorParams& params) {
  if (matches == 0 || candidate_len == 0 || reference_len == 0) return 0.0;
  const double m = static_cast<double>(matches);
  const double p = m / static_cast<double>(candidate_len);
  const double r = m / static_cast<double>(reference_len);
  const double f = p * r / (params.alpha * p + (1.0 - params.alpha) * r);
  const double penalty = params.gamma * std::pow(static_cast<double>(chunks) / m, params.beta);
  return f * (1.0 - penalty);
}

double meteor_lite(const TokenSeq& candidate, const TokenSeq& reference, const MeteorParams& params) {
  const MeteorAlignment a = meteor_align(candidate, reference);
  return meteor_from_counts(a.matches, a.chunks, candidate.size(), reference.size(), params);
}

}  // namespace bestview::text
