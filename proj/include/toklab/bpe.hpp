#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "toklab/errors.hpp"

namespace toklab {

// A word as a sequence of symbols. Symbols are byte strings: single UTF-8
// characters (optionally carrying a leading space marker), single raw bytes,
// or concatenations produced by merges.
using SymbolSeq = std::vector<std::string>;

struct MergeRule {
  std::string left;
  std::string right;

  bool operator==(const MergeRule& o) const {
    return left == o.left && right == o.right;
  }
};

// Distinct words with multiplicities, each already split into base symbols.
struct SymbolCorpus {
  std::vector<SymbolSeq> words;
  std::vector<std::int64_t> counts;
};

// The most frequent adjacent symbol pair, weighted by word counts. Ties break
// toward the lexicographically smallest (left, right). Throws NoPairs when no
// word has two or more symbols.
std::pair<std::string, std::string> most_frequent_pair(const SymbolCorpus& corpus);

// Applies merge rules to one symbol sequence, in rule order; each rule
// replaces every adjacent (left, right) occurrence left-to-right in one pass,
// so [a, a, a] under (a, a) becomes [aa, a].
SymbolSeq apply_merges(const SymbolSeq& symbols, const std::vector<MergeRule>& merges);

// One left-to-right pass of a single rule.
SymbolSeq apply_merge_once(const SymbolSeq& symbols, const std::string& left,
                           const std::string& right);

// Learns up to max_merges rules by iterating most_frequent_pair with
// incremental pair-count updates (only words containing the merged pair are
// revisited). Stops early when no adjacent pairs remain. The corpus is
// mutated to its final segmentation.
std::vector<MergeRule> train_bpe_merges(SymbolCorpus& corpus, std::size_t max_merges);

// Splits normalized text into per-word symbol sequences of single characters,
// with the space marker glued onto each word's first character ("ab c" with
// marker "▁" gives [▁a, b] [▁c]).
std::vector<SymbolSeq> char_pretokenize(const std::string& text, const std::string& marker);

// Flattened form of char_pretokenize.
std::vector<std::string> char_bpe_pretokenize(const std::string& text,
                                              const std::string& marker);

// Splits text into one symbol per UTF-8 byte ("क" gives its three bytes).
std::vector<std::string> byte_encode(const std::string& text);

// Per-word byte symbol sequences. Words after the first start with a 0x20
// byte symbol, making decode a plain concatenation; merges may then absorb
// the space into word-initial tokens.
std::vector<SymbolSeq> byte_pretokenize(const std::string& text);

// Bijection between raw bytes and printable codepoints so byte-level tokens
// can live inside UTF-8 JSON. Printable ASCII and most of Latin-1 map to
// themselves; the rest map to codepoints from U+0100 up.
std::string byte_symbol_to_printable(const std::string& raw);
std::string printable_to_byte_symbol(const std::string& printable);

// Fast exact encoder for a fixed rule list: per word, rules that cannot match
// (some byte of left+right absent from the word) are skipped via a 256-bit
// presence mask. Output is identical to apply_merges with the same rules.
class MergeApplier {
 public:
  explicit MergeApplier(const std::vector<MergeRule>& merges);
  SymbolSeq apply(const SymbolSeq& symbols) const;

 private:
  struct Entry {
    MergeRule rule;
    std::uint64_t mask[4];
  };
  std::vector<Entry> entries_;
};

}  // namespace toklab
