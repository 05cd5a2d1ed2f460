#pragma once

#include <string>
#include <string_view>

namespace chitchat::unicode {

/// Decodes UTF-8 into code points. Invalid sequences decode to U+FFFD one
/// byte at a time, so decoding never fails.
std::u32string decode(std::string_view utf8);
std::string encode(std::u32string_view code_points);
void append_utf8(std::string& out, char32_t cp);

std::size_t length(std::string_view utf8);

bool is_hiragana(char32_t cp);
bool is_katakana(char32_t cp);
bool is_whitespace(char32_t cp);
/// Extended_Pictographic plus emoji modifiers, ZWJ and variation selectors.
bool is_emoji(char32_t cp);

}  // namespace chitchat::unicode
