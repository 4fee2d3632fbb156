#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include "toklab/bpe.hpp"
#include "toklab/errors.hpp"

namespace toklab {

inline constexpr const char* kContinuationPrefix = "##";
inline constexpr std::size_t kMaxWordpieceWordLen = 100;

struct PairStats {
  std::int64_t f_pair = 0;
  std::int64_t f_first = 0;
  std::int64_t f_second = 0;
};

// Likelihood-gain score f_pair / (f_first * f_second). Throws InvalidStats on
// non-positive unigram counts or negative pair counts.
double wordpiece_score(const PairStats& stats);

// Greedy longest-prefix-match segmentation of a single word. Pieces after the
// first carry the continuation prefix. Returns an empty vector when the word
// cannot be covered (caller maps that, and over-long words, to the unknown
// token).
std::vector<std::string> wordpiece_encode(const std::unordered_set<std::string>& vocab,
                                          const std::string& word,
                                          const std::string& continuation_prefix);

// Splits a word into single-character pieces, continuation-prefixed after the
// first character.
SymbolSeq wordpiece_initial_split(const std::string& word,
                                  const std::string& continuation_prefix);

// Learns merges by repeatedly joining the adjacent pair with the highest
// likelihood-gain score (exact integer comparison; ties break toward the
// lexicographically smallest pair). Pairs never span word boundaries. The
// merged symbol is left + right-minus-prefix. The corpus is mutated to its
// final segmentation.
std::vector<MergeRule> train_wordpiece_merges(SymbolCorpus& corpus, std::size_t max_merges,
                                              const std::string& continuation_prefix);

// Joined form of a wordpiece merge: right side drops the continuation prefix.
std::string wordpiece_join(const MergeRule& rule, const std::string& continuation_prefix);

}  // namespace toklab
