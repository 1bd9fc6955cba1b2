#pragma once

#include "bestview/text/tokenize.hpp"

#include <filesystem>
#include <iosfwd>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace bestview::text {

class LexiconError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PosTag { verb, noun, determiner, adjective, other };

enum class TermKind { verb, noun, noun_chunk };

PosTag parse_pos_tag(const std::string& s);
TermKind parse_term_kind(const std::string& s);

/// Closed word lists plus ordered suffix fallbacks. Verb, noun and adjective
/// entries are stored stemmed; determiners are matched on the surface form.
struct TermLexicon {
  std::unordered_set<std::string> verbs;
  std::unordered_set<std::string> nouns;
  std::unordered_set<std::string> determiners;
  std::unordered_set<std::string> adjectives;
  std::vector<std::pair<std::string, PosTag>> suffix_rules;

  /// Lookup order: determiners, verbs, nouns, adjectives, then the first
  /// matching suffix rule.
  PosTag tag(const std::string& token) const;
};

/// Sections [verbs] [nouns] [determiners] [adjectives] [suffix_rules], one
/// entry per line, '#' comments. Suffix rules are "suffix<TAB>tag". A stem
/// present in both verbs and nouns stays a verb.
TermLexicon parse_lexicon(std::istream& in);
TermLexicon load_lexicon(const std::filesystem::path& path);

/// Path of the lexicon shipped in data/.
std::filesystem::path default_lexicon_path();

/// Verb or noun sets hold stemmed tokens; noun chunks are maximal
/// (determiner? adjective* noun+) runs, emitted as space-joined stems.
std::set<std::string> extract_terms(const TokenSeq& tokens, TermKind kind, const TermLexicon& lexicon);

/// |a ∩ b| / |a ∪ b|, 1.0 when both are empty.
double term_iou(const std::set<std::string>& a, const std::set<std::string>& b);

}  // namespace bestview::text
