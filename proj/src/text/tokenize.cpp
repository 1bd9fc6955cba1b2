#include "bestview/text/tokenize.hpp"

#include "bestview/text/stemmer.hpp"

#include <cctype>

namespace bestview::text {

namespace {

bool is_stripped(char c) {
  switch (c) {
    case '.': case ',': case ';': case ':': case '!': case '?':
    case '"': case '(': case ')': case '[': case ']':
      return true;
    default:
      return false;
  }
}

}  // namespace

TokenSeq tokenize(std::string_view text) {
  TokenSeq out;
  std::string cur;
  for (char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isspace(uc)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (!is_stripped(ch)) {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

TokenSeq prepare(std::string_view text, bool stem) {
  TokenSeq toks = tokenize(text);
  if (stem) {
    for (auto& t : toks) t = porter_stem(t);
  }
  return toks;
}

std::string join(const TokenSeq& tokens, std::size_t begin, std::size_t end, char sep) {
  std::string s;
  for (std::size_t i = begin; i < end; ++i) {
    if (i != begin) s.push_back(sep);
    s += tokens[i];
  }
  return s;
}

}  // namespace bestview::text
