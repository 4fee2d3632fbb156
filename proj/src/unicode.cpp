#include "toklab/unicode.hpp"

#include <algorithm>

namespace toklab::unicode {

namespace {

// Hangul syllable composition is algorithmic (UAX #15 section 3.12).
constexpr char32_t kHangulSBase = 0xAC00;
constexpr char32_t kHangulLBase = 0x1100;
constexpr char32_t kHangulVBase = 0x1161;
constexpr char32_t kHangulTBase = 0x11A7;
constexpr int kHangulLCount = 19;
constexpr int kHangulVCount = 21;
constexpr int kHangulTCount = 28;
constexpr int kHangulNCount = kHangulVCount * kHangulTCount;
constexpr int kHangulSCount = kHangulLCount * kHangulNCount;

const DecompEntry* find_decomp(char32_t cp) {
  const DecompEntry* end = kDecompTable + kDecompTableSize;
  const DecompEntry* it = std::lower_bound(
      kDecompTable, end, cp,
      [](const DecompEntry& e, char32_t c) { return e.cp < c; });
  return (it != end && it->cp == cp) ? it : nullptr;
}

char32_t find_composite(char32_t a, char32_t b) {
  const CompEntry* end = kCompTable + kCompTableSize;
  const CompEntry* it = std::lower_bound(
      kCompTable, end, std::pair<char32_t, char32_t>{a, b},
      [](const CompEntry& e, const std::pair<char32_t, char32_t>& k) {
        return e.first != k.first ? e.first < k.first : e.second < k.second;
      });
  if (it != end && it->first == a && it->second == b) return it->composite;
  return 0;
}

void decompose_into(char32_t cp, std::vector<char32_t>& out) {
  if (cp >= kHangulSBase && cp < kHangulSBase + kHangulSCount) {
    int s = static_cast<int>(cp - kHangulSBase);
    out.push_back(kHangulLBase + s / kHangulNCount);
    out.push_back(kHangulVBase + (s % kHangulNCount) / kHangulTCount);
    int t = s % kHangulTCount;
    if (t != 0) out.push_back(kHangulTBase + t);
    return;
  }
  if (const DecompEntry* e = find_decomp(cp)) {
    decompose_into(e->first, out);
    if (e->second != 0) decompose_into(e->second, out);
    return;
  }
  out.push_back(cp);
}

// Stable sort of combining-mark runs by canonical combining class.
void canonical_order(std::vector<char32_t>& cps) {
  std::size_t i = 0;
  while (i < cps.size()) {
    if (combining_class(cps[i]) == 0) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < cps.size() && combining_class(cps[j]) != 0) ++j;
    std::stable_sort(cps.begin() + i, cps.begin() + j,
                     [](char32_t a, char32_t b) {
                       return combining_class(a) < combining_class(b);
                     });
    i = j;
  }
}

char32_t compose_pair(char32_t a, char32_t b) {
  // Hangul L+V and LV+T
  if (a >= kHangulLBase && a < kHangulLBase + kHangulLCount &&
      b >= kHangulVBase && b < kHangulVBase + kHangulVCount) {
    int l = static_cast<int>(a - kHangulLBase);
    int v = static_cast<int>(b - kHangulVBase);
    return kHangulSBase + (l * kHangulVCount + v) * kHangulTCount;
  }
  if (a >= kHangulSBase && a < kHangulSBase + kHangulSCount &&
      (a - kHangulSBase) % kHangulTCount == 0 && b > kHangulTBase &&
      b < kHangulTBase + kHangulTCount) {
    return a + (b - kHangulTBase);
  }
  return find_composite(a, b);
}

// Input must be fully decomposed and canonically ordered. A character is
// blocked from the last starter if anything sits between them with
// ccc >= its own ccc; with ordered marks, checking the previous character
// suffices.
void canonical_compose(std::vector<char32_t>& cps) {
  std::vector<char32_t> out;
  out.reserve(cps.size());
  std::ptrdiff_t last_starter = -1;
  for (char32_t cp : cps) {
    std::uint8_t cc = combining_class(cp);
    if (last_starter >= 0) {
      bool immediately_after =
          out.size() == static_cast<std::size_t>(last_starter) + 1;
      bool blocked = !immediately_after && combining_class(out.back()) >= cc;
      if (!blocked) {
        char32_t comp =
            compose_pair(out[static_cast<std::size_t>(last_starter)], cp);
        if (comp != 0) {
          out[static_cast<std::size_t>(last_starter)] = comp;
          continue;
        }
      }
    }
    if (cc == 0) last_starter = static_cast<std::ptrdiff_t>(out.size());
    out.push_back(cp);
  }
  cps = std::move(out);
}

}  // namespace

std::uint8_t combining_class(char32_t cp) {
  const CccEntry* end = kCccTable + kCccTableSize;
  const CccEntry* it = std::lower_bound(
      kCccTable, end, cp,
      [](const CccEntry& e, char32_t c) { return e.cp < c; });
  return (it != end && it->cp == cp) ? it->ccc : 0;
}

bool is_whitespace(char32_t cp) {
  const char32_t* end = kWhitespaceTable + kWhitespaceTableSize;
  return std::binary_search(kWhitespaceTable, end, cp);
}

namespace {

// Shared UTF-8 scanner. Returns the codepoint length at `i`, or 0 on an
// ill-formed sequence. On success stores the decoded codepoint in `cp`.
int decode_one(std::string_view text, std::size_t i, char32_t& cp) {
  unsigned char c = static_cast<unsigned char>(text[i]);
  int extra;
  char32_t min_cp;
  if (c < 0x80) {
    cp = c;
    return 1;
  } else if ((c & 0xE0) == 0xC0) {
    cp = c & 0x1F;
    extra = 1;
    min_cp = 0x80;
  } else if ((c & 0xF0) == 0xE0) {
    cp = c & 0x0F;
    extra = 2;
    min_cp = 0x800;
  } else if ((c & 0xF8) == 0xF0) {
    cp = c & 0x07;
    extra = 3;
    min_cp = 0x10000;
  } else {
    return 0;
  }
  if (i + static_cast<std::size_t>(extra) >= text.size()) return 0;
  for (int k = 1; k <= extra; ++k) {
    unsigned char cc = static_cast<unsigned char>(text[i + k]);
    if ((cc & 0xC0) != 0x80) return 0;
    cp = (cp << 6) | (cc & 0x3F);
  }
  if (cp < min_cp || cp > kMaxCodepoint || (cp >= 0xD800 && cp <= 0xDFFF))
    return 0;
  return 1 + extra;
}

}  // namespace

std::vector<char32_t> decode_utf8(std::string_view text) {
  std::vector<char32_t> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    char32_t cp;
    int len = decode_one(text, i, cp);
    if (len == 0) {
      out.push_back(kReplacementChar);
      ++i;
    } else {
      out.push_back(cp);
      i += static_cast<std::size_t>(len);
    }
  }
  return out;
}

bool is_valid_utf8(std::string_view text) {
  std::size_t i = 0;
  while (i < text.size()) {
    char32_t cp;
    int len = decode_one(text, i, cp);
    if (len == 0) return false;
    i += static_cast<std::size_t>(len);
  }
  return true;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp <= 0x7F) {
    out.push_back(static_cast<char>(cp));
  } else if (cp <= 0x7FF) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp <= 0xFFFF) {
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

std::string encode_utf8(const std::vector<char32_t>& codepoints) {
  std::string out;
  out.reserve(codepoints.size() * 3);
  for (char32_t cp : codepoints) append_utf8(out, cp);
  return out;
}

std::vector<char32_t> nfc(const std::vector<char32_t>& codepoints) {
  std::vector<char32_t> decomposed;
  decomposed.reserve(codepoints.size() + 8);
  for (char32_t cp : codepoints) decompose_into(cp, decomposed);
  canonical_order(decomposed);
  canonical_compose(decomposed);
  return decomposed;
}

std::string nfc(std::string_view text) {
  return encode_utf8(nfc(decode_utf8(text)));
}

}  // namespace toklab::unicode
