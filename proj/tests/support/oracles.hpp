#pragma once

// Slow, transparent reference implementations used only by tests. Each one
// recomputes everything from scratch on every step so it cannot share a
// bookkeeping bug with the incremental production code.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "toklab/bpe.hpp"
#include "toklab/morfessor.hpp"
#include "toklab/unicode.hpp"

namespace toklab::testing {

using StrPair = std::pair<std::string, std::string>;

// Full recount of adjacent pair frequencies; std::map gives deterministic
// iteration so the lexicographic tie-break is explicit.
inline std::map<StrPair, std::int64_t> recount_pairs(const SymbolCorpus& corpus) {
  std::map<StrPair, std::int64_t> counts;
  for (std::size_t w = 0; w < corpus.words.size(); ++w) {
    const SymbolSeq& word = corpus.words[w];
    for (std::size_t i = 0; i + 1 < word.size(); ++i)
      counts[{word[i], word[i + 1]}] += corpus.counts[w];
  }
  return counts;
}

inline SymbolSeq merge_word_once(const SymbolSeq& word, const StrPair& pair) {
  SymbolSeq out;
  std::size_t i = 0;
  while (i < word.size()) {
    if (i + 1 < word.size() && word[i] == pair.first && word[i + 1] == pair.second) {
      out.push_back(pair.first + pair.second);
      i += 2;
    } else {
      out.push_back(word[i]);
      ++i;
    }
  }
  return out;
}

// Quadratic reference trainer: recount, scan for the max count (first in map
// order wins ties, i.e. lexicographically smallest pair), merge everywhere.
inline std::vector<MergeRule> naive_bpe_train(SymbolCorpus corpus, std::size_t max_merges) {
  std::vector<MergeRule> merges;
  while (merges.size() < max_merges) {
    std::map<StrPair, std::int64_t> counts = recount_pairs(corpus);
    bool found = false;
    StrPair best;
    std::int64_t best_count = 0;
    for (const auto& [pair, count] : counts) {
      if (count > best_count) {
        best = pair;
        best_count = count;
        found = true;
      }
    }
    if (!found) break;
    merges.push_back({best.first, best.second});
    for (auto& word : corpus.words) word = merge_word_once(word, best);
  }
  return merges;
}

// Reference likelihood-gain trainer: recount unigrams and pairs, pick the
// pair maximizing f_pair / (f_first * f_second) by exact cross
// multiplication, first in map order among exact ties.
inline std::vector<MergeRule> naive_wordpiece_train(SymbolCorpus corpus,
                                                    std::size_t max_merges,
                                                    const std::string& prefix) {
  auto strip = [&prefix](const std::string& s) {
    if (!prefix.empty() && s.rfind(prefix, 0) == 0) return s.substr(prefix.size());
    return s;
  };
  std::vector<MergeRule> merges;
  while (merges.size() < max_merges) {
    std::map<std::string, std::int64_t> unigram;
    for (std::size_t w = 0; w < corpus.words.size(); ++w)
      for (const auto& sym : corpus.words[w]) unigram[sym] += corpus.counts[w];
    std::map<StrPair, std::int64_t> pairs = recount_pairs(corpus);
    if (pairs.empty()) break;

    bool found = false;
    StrPair best;
    __int128 best_num = 0, best_den = 1;
    for (const auto& [pair, f_pair] : pairs) {
      __int128 num = f_pair;
      __int128 den =
          static_cast<__int128>(unigram.at(pair.first)) * unigram.at(pair.second);
      // num/den > best_num/best_den  <=>  num*best_den > best_num*den
      if (!found || num * best_den > best_num * den) {
        best = pair;
        best_num = num;
        best_den = den;
        found = true;
      }
    }
    if (!found) break;
    merges.push_back({best.first, best.second});
    std::string joined = best.first + strip(best.second);
    for (auto& word : corpus.words) {
      SymbolSeq out;
      std::size_t i = 0;
      while (i < word.size()) {
        if (i + 1 < word.size() && word[i] == best.first && word[i + 1] == best.second) {
          out.push_back(joined);
          i += 2;
        } else {
          out.push_back(word[i]);
          ++i;
        }
      }
      word = std::move(out);
    }
  }
  return merges;
}

// Every way to cut a word into non-empty contiguous pieces.
inline std::vector<std::vector<std::string>> all_segmentations(const std::string& word) {
  std::vector<char32_t> cps = unicode::decode_utf8(word);
  std::size_t n = cps.size();
  std::vector<std::vector<std::string>> out;
  if (n == 0) return out;
  for (std::uint32_t mask = 0; mask < (1u << (n - 1)); ++mask) {
    std::vector<std::string> seg;
    std::string cur;
    for (std::size_t i = 0; i < n; ++i) {
      unicode::append_utf8(cur, cps[i]);
      bool cut = i + 1 == n || (mask >> i) & 1u;
      if (cut) {
        seg.push_back(cur);
        cur.clear();
      }
    }
    out.push_back(std::move(seg));
  }
  return out;
}

// Global optimum of the description length over the joint segmentation space
// (exponential; keep corpora tiny).
inline double exhaustive_best_cost(const WordCounts& corpus, const CharCostTable& chars,
                                   double corpus_weight) {
  std::vector<std::string> words;
  std::vector<std::vector<std::vector<std::string>>> options;
  for (const auto& [word, count] : corpus) {
    words.push_back(word);
    options.push_back(all_segmentations(word));
  }
  double best = 1e300;
  std::vector<std::size_t> pick(words.size(), 0);
  while (true) {
    Segmentations seg;
    Lexicon lex;
    std::size_t wi = 0;
    for (const auto& [word, count] : corpus) {
      const auto& s = options[wi][pick[wi]];
      seg[word] = s;
      for (const auto& morph : s) lex[morph] += count;
      ++wi;
    }
    double cost = model_cost(lex, corpus, seg, chars, corpus_weight);
    if (cost < best) best = cost;

    std::size_t k = 0;
    while (k < pick.size()) {
      if (++pick[k] < options[k].size()) break;
      pick[k] = 0;
      ++k;
    }
    if (k == pick.size()) break;
  }
  return best;
}

}  // namespace toklab::testing
