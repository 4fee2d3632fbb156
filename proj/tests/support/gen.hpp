#pragma once

// Deterministic random text generators shared by the fuzz-style tests.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "toklab/bpe.hpp"
#include "toklab/unicode.hpp"

namespace toklab::testing {

// Words drawn from a tiny alphabet so pair-count ties are frequent and the
// trainer's tie-break rule is really exercised.
inline SymbolCorpus random_symbol_corpus(std::mt19937_64& rng, std::size_t max_total_chars,
                                         int alphabet_size) {
  std::uniform_int_distribution<int> letter(0, alphabet_size - 1);
  std::uniform_int_distribution<int> word_len(1, 8);
  std::uniform_int_distribution<std::int64_t> mult(1, 5);
  SymbolCorpus corpus;
  std::size_t total = 0;
  while (total < max_total_chars) {
    int len = word_len(rng);
    SymbolSeq word;
    for (int i = 0; i < len; ++i)
      word.push_back(std::string(1, static_cast<char>('a' + letter(rng))));
    total += static_cast<std::size_t>(len);
    corpus.words.push_back(std::move(word));
    corpus.counts.push_back(mult(rng));
  }
  return corpus;
}

// Mixed Devanagari/Latin line: words of 1-10 characters, space separated.
inline std::string random_mixed_line(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_words(1, 10);
  std::uniform_int_distribution<int> n_chars(1, 10);
  std::uniform_int_distribution<int> which(0, 9);
  std::uniform_int_distribution<int> latin('a', 'z');
  std::uniform_int_distribution<int> deva(0x0905, 0x0939);
  std::uniform_int_distribution<int> matra(0x093E, 0x094D);
  std::string line;
  int words = n_words(rng);
  for (int w = 0; w < words; ++w) {
    if (w) line += ' ';
    int chars = n_chars(rng);
    for (int c = 0; c < chars; ++c) {
      int kind = which(rng);
      if (kind < 4)
        line += static_cast<char>(latin(rng));
      else if (kind < 8)
        unicode::append_utf8(line, static_cast<char32_t>(deva(rng)));
      else
        unicode::append_utf8(line, static_cast<char32_t>(matra(rng)));
    }
  }
  return line;
}

// Random well-formed UTF-8 drawn from a bounded set of ranges (ASCII
// punctuation/letters, Devanagari, some CJK, Cyrillic). The space marker
// codepoint U+2581 is excluded: it is the one character the char-level
// scheme cannot distinguish from an encoded space.
inline std::string random_utf8_string(std::mt19937_64& rng, int max_chars) {
  static const std::pair<char32_t, char32_t> kRanges[] = {
      {0x0021, 0x007E}, {0x00A1, 0x024F}, {0x0400, 0x045F}, {0x0900, 0x097F},
      {0x4E00, 0x4EFF}, {0x3040, 0x309F}, {0x0021, 0x007E}, {0x0905, 0x0939},
  };
  std::uniform_int_distribution<int> n_chars(0, max_chars);
  std::uniform_int_distribution<std::size_t> pick_range(0, std::size(kRanges) - 1);
  std::uniform_int_distribution<int> space(0, 6);
  std::string out;
  int chars = n_chars(rng);
  for (int i = 0; i < chars; ++i) {
    if (space(rng) == 0) {
      out += ' ';
      continue;
    }
    auto [lo, hi] = kRanges[pick_range(rng)];
    std::uniform_int_distribution<std::uint32_t> cp(lo, hi);
    unicode::append_utf8(out, static_cast<char32_t>(cp(rng)));
  }
  return out;
}

}  // namespace toklab::testing
