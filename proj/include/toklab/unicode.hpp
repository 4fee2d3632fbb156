#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace toklab::unicode {

// UCD-derived tables, generated by scripts/gen_unicode_tables.py.
struct DecompEntry {
  char32_t cp;
  char32_t first;
  char32_t second;  // 0 for singleton decompositions
};
struct CccEntry {
  char32_t cp;
  std::uint8_t ccc;
};
struct CompEntry {
  char32_t first;
  char32_t second;
  char32_t composite;
};

extern const DecompEntry kDecompTable[];
extern const std::size_t kDecompTableSize;
extern const CccEntry kCccTable[];
extern const std::size_t kCccTableSize;
extern const CompEntry kCompTable[];
extern const std::size_t kCompTableSize;
extern const char32_t kWhitespaceTable[];
extern const std::size_t kWhitespaceTableSize;

inline constexpr char32_t kReplacementChar = 0xFFFD;
inline constexpr char32_t kMaxCodepoint = 0x10FFFF;

// Decodes UTF-8, replacing ill-formed sequences with U+FFFD.
std::vector<char32_t> decode_utf8(std::string_view text);

// True iff `text` is well-formed UTF-8 (no overlongs, surrogates, or
// out-of-range sequences).
bool is_valid_utf8(std::string_view text);

std::string encode_utf8(const std::vector<char32_t>& codepoints);
void append_utf8(std::string& out, char32_t cp);

std::uint8_t combining_class(char32_t cp);
bool is_whitespace(char32_t cp);

// Canonical composition / decomposition (NFC via UAX #15).
std::vector<char32_t> nfc(const std::vector<char32_t>& codepoints);
std::string nfc(std::string_view text);

}  // namespace toklab::unicode
