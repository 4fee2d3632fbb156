#include "toklab/wordpiece.hpp"

#include <algorithm>

#include "toklab/unicode.hpp"

namespace toklab {

using unicode::append_utf8;
using unicode::decode_utf8;

double wordpiece_score(const PairStats& stats) {
  if (stats.f_first <= 0 || stats.f_second <= 0)
    throw InvalidStats("wordpiece score needs positive unigram counts");
  if (stats.f_pair < 0) throw InvalidStats("negative pair count");
  return static_cast<double>(stats.f_pair) /
         (static_cast<double>(stats.f_first) * static_cast<double>(stats.f_second));
}

SymbolSeq wordpiece_initial_split(const std::string& word,
                                  const std::string& continuation_prefix) {
  SymbolSeq out;
  bool first = true;
  for (char32_t cp : decode_utf8(word)) {
    std::string sym = first ? std::string() : continuation_prefix;
    append_utf8(sym, cp);
    out.push_back(std::move(sym));
    first = false;
  }
  return out;
}

std::string wordpiece_join(const MergeRule& rule, const std::string& continuation_prefix) {
  const std::string& r = rule.right;
  if (!continuation_prefix.empty() && r.size() >= continuation_prefix.size() &&
      r.compare(0, continuation_prefix.size(), continuation_prefix) == 0)
    return rule.left + r.substr(continuation_prefix.size());
  return rule.left + r;
}

std::vector<std::string> wordpiece_encode(const std::unordered_set<std::string>& vocab,
                                          const std::string& word,
                                          const std::string& continuation_prefix) {
  std::vector<char32_t> cps = decode_utf8(word);
  std::vector<std::string> pieces;
  std::size_t i = 0;
  while (i < cps.size()) {
    std::size_t end = cps.size();
    bool matched = false;
    while (end > i) {
      std::string candidate = i == 0 ? std::string() : continuation_prefix;
      for (std::size_t k = i; k < end; ++k) append_utf8(candidate, cps[k]);
      if (vocab.count(candidate)) {
        pieces.push_back(std::move(candidate));
        i = end;
        matched = true;
        break;
      }
      --end;
    }
    if (!matched) return {};
  }
  return pieces;
}

namespace {

using Pair = std::pair<std::string, std::string>;

struct PairHash {
  std::size_t operator()(const Pair& p) const {
    std::size_t h = 1469598103934665603ull;
    for (char c : p.first) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
    h = (h ^ 0x1f) * 1099511628211ull;
    for (char c : p.second) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
    return h;
  }
};

// Exact comparison of f_pair/(f_first*f_second) scores via cross
// multiplication in 128-bit integers.
int compare_scores(const PairStats& a, const PairStats& b) {
  __int128 lhs = static_cast<__int128>(a.f_pair) * b.f_first * b.f_second;
  __int128 rhs = static_cast<__int128>(b.f_pair) * a.f_first * a.f_second;
  if (lhs < rhs) return -1;
  if (lhs > rhs) return 1;
  return 0;
}

bool pair_less(const Pair& a, const Pair& b) {
  if (a.first != b.first) return a.first < b.first;
  return a.second < b.second;
}

}  // namespace

std::vector<MergeRule> train_wordpiece_merges(SymbolCorpus& corpus, std::size_t max_merges,
                                              const std::string& continuation_prefix) {
  if (corpus.words.size() != corpus.counts.size())
    throw LengthMismatch("symbol corpus words/counts size mismatch");

  std::vector<MergeRule> merges;
  merges.reserve(max_merges);
  while (merges.size() < max_merges) {
    std::unordered_map<std::string, std::int64_t> unigram;
    std::unordered_map<Pair, std::int64_t, PairHash> pair_counts;
    for (std::size_t w = 0; w < corpus.words.size(); ++w) {
      const SymbolSeq& word = corpus.words[w];
      std::int64_t count = corpus.counts[w];
      for (const auto& sym : word) unigram[sym] += count;
      for (std::size_t i = 0; i + 1 < word.size(); ++i)
        pair_counts[{word[i], word[i + 1]}] += count;
    }
    if (pair_counts.empty()) break;

    bool found = false;
    Pair best;
    PairStats best_stats;
    for (const auto& [pair, f_pair] : pair_counts) {
      if (f_pair <= 0) continue;
      PairStats stats{f_pair, unigram.at(pair.first), unigram.at(pair.second)};
      if (!found) {
        found = true;
        best = pair;
        best_stats = stats;
        continue;
      }
      int cmp = compare_scores(stats, best_stats);
      if (cmp > 0 || (cmp == 0 && pair_less(pair, best))) {
        best = pair;
        best_stats = stats;
      }
    }
    if (!found) break;

    MergeRule rule{best.first, best.second};
    std::string joined = wordpiece_join(rule, continuation_prefix);
    merges.push_back(rule);
    for (auto& word : corpus.words) {
      if (word.size() < 2) continue;
      SymbolSeq out;
      out.reserve(word.size());
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

}  // namespace toklab
