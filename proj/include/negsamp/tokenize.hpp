#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace negsamp {

// The single tokenization rule shared by every module:
//
//   1. Text is decoded as UTF-8 (invalid bytes become U+FFFD) and lowercased
//      (ASCII, Latin-1, Latin Extended-A, Greek, Cyrillic, Armenian and
//      fullwidth Latin are mapped; other scripts pass through unchanged).
//   2. Whitespace separates tokens and is discarded.
//   3. Runs of word characters (letters, digits, underscore, combining marks)
//      form one token.
//   4. Every other code point (punctuation, symbols) is a token on its own.
//
// Character classes come from fixed code point ranges rather than a full
// Unicode database; anything non-ASCII that is not listed as whitespace or
// punctuation counts as a word character.

namespace unicode {

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

/// Decodes one code point starting at `pos`, advancing it. Malformed,
/// overlong and surrogate sequences yield U+FFFD and consume one byte.
inline char32_t next_code_point(std::string_view s, std::size_t& pos) {
  constexpr char32_t kReplacement = 0xFFFD;
  const auto b0 = static_cast<unsigned char>(s[pos]);
  if (b0 < 0x80) {
    ++pos;
    return b0;
  }
  std::size_t len = 0;
  char32_t cp = 0;
  char32_t min = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2, cp = b0 & 0x1F, min = 0x80;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3, cp = b0 & 0x0F, min = 0x800;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4, cp = b0 & 0x07, min = 0x10000;
  } else {
    ++pos;
    return kReplacement;
  }
  if (pos + len > s.size()) {
    ++pos;
    return kReplacement;
  }
  for (std::size_t i = 1; i < len; ++i) {
    const auto b = static_cast<unsigned char>(s[pos + i]);
    if ((b & 0xC0) != 0x80) {
      ++pos;
      return kReplacement;
    }
    cp = (cp << 6) | (b & 0x3F);
  }
  if (cp < min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
    ++pos;
    return kReplacement;
  }
  pos += len;
  return cp;
}

inline char32_t to_lower(char32_t c) {
  if (c < 0x80) return (c >= 'A' && c <= 'Z') ? c + 0x20 : c;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 0x20;
  if (c >= 0x100 && c <= 0x17F) {
    if (c == 0x130) return 'i';
    if (c == 0x178) return 0xFF;
    const bool even_upper = (c <= 0x137) || (c >= 0x14A && c <= 0x177);
    const bool odd_upper = (c >= 0x139 && c <= 0x148) || (c >= 0x179 && c <= 0x17E);
    if (even_upper && c % 2 == 0) return c + 1;
    if (odd_upper && c % 2 == 1) return c + 1;
    return c;
  }
  // Greek
  if (c == 0x386) return 0x3AC;
  if (c >= 0x388 && c <= 0x38A) return c + 0x25;
  if (c == 0x38C) return 0x3CC;
  if (c == 0x38E || c == 0x38F) return c + 0x3F;
  if (c >= 0x391 && c <= 0x3AB && c != 0x3A2) return c + 0x20;
  // Cyrillic
  if (c >= 0x400 && c <= 0x40F) return c + 0x50;
  if (c >= 0x410 && c <= 0x42F) return c + 0x20;
  if (((c >= 0x460 && c <= 0x481) || (c >= 0x48A && c <= 0x4BF) ||
       (c >= 0x4D0 && c <= 0x52F)) &&
      c % 2 == 0)
    return c + 1;
  if (c == 0x4C0) return 0x4CF;
  if (c >= 0x4C1 && c <= 0x4CE && c % 2 == 1) return c + 1;
  // Armenian
  if (c >= 0x531 && c <= 0x556) return c + 0x30;
  // Fullwidth Latin
  if (c >= 0xFF21 && c <= 0xFF3A) return c + 0x20;
  return c;
}

inline bool is_space(char32_t c) {
  if (c < 0x80) return c == ' ' || (c >= 0x09 && c <= 0x0D) || (c >= 0x1C && c <= 0x1F);
  return c == 0x85 || c == 0xA0 || c == 0x1680 || (c >= 0x2000 && c <= 0x200A) ||
         c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x205F || c == 0x3000;
}

inline bool is_word(char32_t c) {
  if (c < 0x80) {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
           c == '_';
  }
  if (is_space(c)) return false;
  if (c >= 0x80 && c <= 0xBF) {
    // Latin-1 block: only ordinal indicators, superscripts, micro and the
    // vulgar fractions are word characters; the rest is control or symbol.
    return c == 0xAA || c == 0xB2 || c == 0xB3 || c == 0xB5 || c == 0xB9 || c == 0xBA ||
           (c >= 0xBC && c <= 0xBE);
  }
  if (c == 0xD7 || c == 0xF7) return false;
  if (c == 0x37E || c == 0x387) return false;                   // Greek ; and ·
  if (c >= 0x55A && c <= 0x55F) return false;                   // Armenian punct
  if (c == 0x589 || c == 0x58A) return false;
  if (c >= 0x2010 && c <= 0x2027) return false;                 // dashes, quotes
  if (c >= 0x2030 && c <= 0x205E) return false;
  if (c >= 0x20A0 && c <= 0x20CF) return false;                 // currency
  if (c >= 0x2190 && c <= 0x23FF) return false;                 // arrows, math
  if (c >= 0x2500 && c <= 0x27BF) return false;                 // box, dingbats
  if (c >= 0x2E00 && c <= 0x2E7F) return false;                 // supplemental punct
  if (c >= 0x3001 && c <= 0x3003) return false;
  if (c >= 0x3008 && c <= 0x3011) return false;
  if (c >= 0x3014 && c <= 0x301F) return false;
  if (c >= 0xFE10 && c <= 0xFE19) return false;
  if (c >= 0xFE30 && c <= 0xFE4F) return false;
  if (c >= 0xFF01 && c <= 0xFF0F) return false;                 // fullwidth punct
  if (c >= 0xFF1A && c <= 0xFF20) return false;
  if (c >= 0xFF3B && c <= 0xFF40 && c != 0xFF3F) return false;
  if (c >= 0xFF5B && c <= 0xFF65) return false;
  if (c == 0xFFFD) return false;
  if (c >= 0x1F000 && c <= 0x1FAFF) return false;               // emoji, symbols
  return true;
}

}  // namespace unicode

inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string word;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const char32_t cp = unicode::to_lower(unicode::next_code_point(text, pos));
    if (unicode::is_word(cp)) {
      unicode::append_utf8(word, cp);
      continue;
    }
    if (!word.empty()) tokens.push_back(std::move(word)), word.clear();
    if (!unicode::is_space(cp)) {
      std::string punct;
      unicode::append_utf8(punct, cp);
      tokens.push_back(std::move(punct));
    }
  }
  if (!word.empty()) tokens.push_back(std::move(word));
  return tokens;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

/// Canonical form used for response equality: tokenize, then re-join with
/// single spaces.
inline std::string canonicalize(std::string_view text) {
  return join_tokens(tokenize(text));
}

}  // namespace negsamp
