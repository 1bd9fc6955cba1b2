#pragma once

#include <string>
#include <string_view>

namespace bestview::text {

/// Porter (1980) suffix-stripping stemmer. Expects a lowercase word; words of
/// two characters or fewer are returned unchanged.
std::string porter_stem(std::string_view word);

}  // namespace bestview::text
