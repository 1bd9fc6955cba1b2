#include "bestview/text/terms.hpp"

#include "bestview/text/stemmer.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

#ifndef BESTVIEW_DATA_DIR
#define BESTVIEW_DATA_DIR "data"
#endif

namespace bestview::text {

PosTag parse_pos_tag(const std::string& s) {
  if (s == "verb") return PosTag::verb;
  if (s == "noun") return PosTag::noun;
  if (s == "determiner" || s == "det") return PosTag::determiner;
  if (s == "adjective" || s == "adj") return PosTag::adjective;
  if (s == "other") return PosTag::other;
  throw LexiconError("unknown tag '" + s + "'");
}

TermKind parse_term_kind(const std::string& s) {
  if (s == "verb") return TermKind::verb;
  if (s == "noun") return TermKind::noun;
  if (s == "noun_chunk") return TermKind::noun_chunk;
  throw std::invalid_argument("unknown term kind '" + s + "'");
}

PosTag TermLexicon::tag(const std::string& token) const {
  if (determiners.contains(token)) return PosTag::determiner;
  const std::string s = porter_stem(token);
  if (verbs.contains(s)) return PosTag::verb;
  if (nouns.contains(s)) return PosTag::noun;
  if (adjectives.contains(s)) return PosTag::adjective;
  for (const auto& [suffix, tag] : suffix_rules) {
    if (token.size() > suffix.size() && token.ends_with(suffix)) return tag;
  }
  return PosTag::other;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

TermLexicon parse_lexicon(std::istream& in) {
  enum class Section { none, verbs, nouns, determiners, adjectives, suffix_rules };
  TermLexicon lex;
  Section section = Section::none;
  std::vector<std::string> noun_stems;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      if (line == "[verbs]") section = Section::verbs;
      else if (line == "[nouns]") section = Section::nouns;
      else if (line == "[determiners]") section = Section::determiners;
      else if (line == "[adjectives]") section = Section::adjectives;
      else if (line == "[suffix_rules]") section = Section::suffix_rules;
      else throw LexiconError("lexicon line " + std::to_string(lineno) + ": unknown section " + line);
      continue;
    }
    switch (section) {
      case Section::none:
        throw LexiconError("lexicon line " + std::to_string(lineno) + ": entry outside a section");
      case Section::verbs: lex.verbs.insert(porter_stem(line)); break;
      case Section::nouns: noun_stems.push_back(porter_stem(line)); break;
      case Section::determiners: lex.determiners.insert(line); break;
      case Section::adjectives: lex.adjectives.insert(porter_stem(line)); break;
      case Section::suffix_rules: {
        const auto tab = raw.find('\t');
        if (tab == std::string::npos) {
          throw LexiconError("lexicon line " + std::to_string(lineno) + ": suffix rule needs suffix<TAB>tag");
        }
        try {
          lex.suffix_rules.emplace_back(trim(raw.substr(0, tab)), parse_pos_tag(trim(raw.substr(tab + 1))));
        } catch (const LexiconError& e) {
          throw LexiconError("lexicon line " + std::to_string(lineno) + ": " + e.what());
        }
        break;
      }
    }
  }
  for (auto& s : noun_stems) {
    if (!lex.verbs.contains(s)) lex.nouns.insert(std::move(s));
  }
  return lex;
}

TermLexicon load_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LexiconError("cannot open lexicon " + path.string());
  return parse_lexicon(in);
}

std::filesystem::path default_lexicon_path() {
  return std::filesystem::path(BESTVIEW_DATA_DIR) / "lexicon.txt";
}

std::set<std::string> extract_terms(const TokenSeq& tokens, TermKind kind, const TermLexicon& lexicon) {
  std::set<std::string> out;
  std::vector<PosTag> tags;
  tags.reserve(tokens.size());
  for (const auto& t : tokens) tags.push_back(lexicon.tag(t));

  if (kind != TermKind::noun_chunk) {
    const PosTag want = kind == TermKind::verb ? PosTag::verb : PosTag::noun;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tags[i] == want) out.insert(porter_stem(tokens[i]));
    }
    return out;
  }

  std::size_t i = 0;
  while (i < tokens.size()) {
    std::size_t j = i;
    if (tags[j] == PosTag::determiner) ++j;
    while (j < tokens.size() && tags[j] == PosTag::adjective) ++j;
    const std::size_t first_noun = j;
    while (j < tokens.size() && tags[j] == PosTag::noun) ++j;
    if (j == first_noun) {
      ++i;
      continue;
    }
    std::string chunk;
    for (std::size_t k = i; k < j; ++k) {
      if (k != i) chunk.push_back(' ');
      chunk += porter_stem(tokens[k]);
    }
    out.insert(std::move(chunk));
    i = j;
  }
  return out;
}

double term_iou(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::vector<std::string> inter;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
  const std::size_t uni = a.size() + b.size() - inter.size();
  return static_cast<double>(inter.size()) / static_cast<double>(uni);
}

}  // namespace bestview::text
