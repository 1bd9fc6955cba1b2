#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace bestview::text {

/// Lowercase tokens with no empty entries and no embedded whitespace.
using TokenSeq = std::vector<std::string>;

/// Lowercases, deletes the characters .,;:!?"()[] and splits on whitespace.
/// Apostrophes stay inside tokens.
TokenSeq tokenize(std::string_view text);

/// Tokenize, then optionally Porter-stem every token.
TokenSeq prepare(std::string_view text, bool stem);

std::string join(const TokenSeq& tokens, std::size_t begin, std::size_t end, char sep = ' ');

}  // namespace bestview::text
