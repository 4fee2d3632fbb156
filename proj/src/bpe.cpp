#include "toklab/bpe.hpp"

#include <omp.h>

#include <algorithm>
#include <unordered_map>

#include "toklab/unicode.hpp"

namespace toklab {

using unicode::append_utf8;
using unicode::decode_utf8;

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

using PairCounts = std::unordered_map<Pair, std::int64_t, PairHash>;

void count_word_pairs(const SymbolSeq& word, std::int64_t count, PairCounts& out,
                      std::int64_t sign) {
  for (std::size_t i = 0; i + 1 < word.size(); ++i)
    out[{word[i], word[i + 1]}] += sign * count;
}

bool pair_less(const Pair& a, const Pair& b) {
  if (a.first != b.first) return a.first < b.first;
  return a.second < b.second;
}

}  // namespace

std::pair<std::string, std::string> most_frequent_pair(const SymbolCorpus& corpus) {
  PairCounts counts;
  for (std::size_t w = 0; w < corpus.words.size(); ++w)
    count_word_pairs(corpus.words[w], corpus.counts[w], counts, +1);

  bool found = false;
  Pair best;
  std::int64_t best_count = 0;
  for (const auto& [pair, count] : counts) {
    if (count <= 0) continue;
    if (!found || count > best_count || (count == best_count && pair_less(pair, best))) {
      found = true;
      best = pair;
      best_count = count;
    }
  }
  if (!found) throw NoPairs("no adjacent symbol pairs in corpus");
  return best;
}

SymbolSeq apply_merge_once(const SymbolSeq& symbols, const std::string& left,
                           const std::string& right) {
  SymbolSeq out;
  out.reserve(symbols.size());
  std::size_t i = 0;
  while (i < symbols.size()) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      out.push_back(left + right);
      i += 2;
    } else {
      out.push_back(symbols[i]);
      ++i;
    }
  }
  return out;
}

SymbolSeq apply_merges(const SymbolSeq& symbols, const std::vector<MergeRule>& merges) {
  SymbolSeq cur = symbols;
  for (const auto& rule : merges) {
    if (cur.size() < 2) break;
    cur = apply_merge_once(cur, rule.left, rule.right);
  }
  return cur;
}

std::vector<MergeRule> train_bpe_merges(SymbolCorpus& corpus, std::size_t max_merges) {
  if (corpus.words.size() != corpus.counts.size())
    throw LengthMismatch("symbol corpus words/counts size mismatch");

  PairCounts counts;
  std::unordered_map<Pair, std::vector<std::uint32_t>, PairHash> pair_words;

  // Initial tally: thread-local maps merged in thread order; addition is
  // commutative so the result is independent of scheduling.
  int n_threads = 1;
#pragma omp parallel
  {
#pragma omp single
    n_threads = omp_get_num_threads();
  }
  std::vector<PairCounts> local(static_cast<std::size_t>(n_threads));
#pragma omp parallel
  {
    PairCounts& mine = local[static_cast<std::size_t>(omp_get_thread_num())];
#pragma omp for schedule(static)
    for (std::int64_t w = 0; w < static_cast<std::int64_t>(corpus.words.size()); ++w)
      count_word_pairs(corpus.words[static_cast<std::size_t>(w)],
                       corpus.counts[static_cast<std::size_t>(w)], mine, +1);
  }
  for (auto& part : local)
    for (auto& [pair, count] : part) counts[pair] += count;

  for (std::uint32_t w = 0; w < corpus.words.size(); ++w) {
    const SymbolSeq& word = corpus.words[w];
    for (std::size_t i = 0; i + 1 < word.size(); ++i)
      pair_words[{word[i], word[i + 1]}].push_back(w);
  }

  std::vector<MergeRule> merges;
  merges.reserve(max_merges);
  while (merges.size() < max_merges) {
    bool found = false;
    Pair best;
    std::int64_t best_count = 0;
    for (auto it = counts.begin(); it != counts.end();) {
      if (it->second <= 0) {
        it = counts.erase(it);
        continue;
      }
      if (!found || it->second > best_count ||
          (it->second == best_count && pair_less(it->first, best))) {
        found = true;
        best = it->first;
        best_count = it->second;
      }
      ++it;
    }
    if (!found) break;

    merges.push_back({best.first, best.second});

    auto wl_it = pair_words.find(best);
    std::vector<std::uint32_t> affected;
    if (wl_it != pair_words.end()) {
      affected = std::move(wl_it->second);
      pair_words.erase(wl_it);
    }
    std::sort(affected.begin(), affected.end());
    affected.erase(std::unique(affected.begin(), affected.end()), affected.end());

    for (std::uint32_t w : affected) {
      SymbolSeq& word = corpus.words[w];
      SymbolSeq merged = apply_merge_once(word, best.first, best.second);
      if (merged.size() == word.size()) continue;  // stale index entry
      std::int64_t count = corpus.counts[w];
      count_word_pairs(word, count, counts, -1);
      count_word_pairs(merged, count, counts, +1);
      for (std::size_t i = 0; i + 1 < merged.size(); ++i)
        pair_words[{merged[i], merged[i + 1]}].push_back(w);
      word = std::move(merged);
    }
    counts.erase(best);
  }
  return merges;
}

std::vector<SymbolSeq> char_pretokenize(const std::string& text, const std::string& marker) {
  std::vector<SymbolSeq> words;
  SymbolSeq cur;
  bool word_start = true;
  std::vector<char32_t> cps = decode_utf8(text);
  for (char32_t cp : cps) {
    if (cp == U' ') {
      if (!cur.empty()) {
        words.push_back(std::move(cur));
        cur.clear();
      }
      word_start = true;
      continue;
    }
    std::string sym;
    if (word_start) sym = marker;
    append_utf8(sym, cp);
    cur.push_back(std::move(sym));
    word_start = false;
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::vector<std::string> char_bpe_pretokenize(const std::string& text,
                                              const std::string& marker) {
  std::vector<std::string> flat;
  for (auto& word : char_pretokenize(text, marker))
    for (auto& sym : word) flat.push_back(std::move(sym));
  return flat;
}

std::vector<std::string> byte_encode(const std::string& text) {
  std::vector<std::string> out;
  out.reserve(text.size());
  for (char c : text) out.emplace_back(1, c);
  return out;
}

std::vector<SymbolSeq> byte_pretokenize(const std::string& text) {
  std::vector<SymbolSeq> words;
  SymbolSeq cur;
  bool first_word = true;
  for (char c : text) {
    if (c == ' ') {
      if (!cur.empty()) {
        words.push_back(std::move(cur));
        cur.clear();
        first_word = false;
      }
      continue;
    }
    if (cur.empty() && !first_word) cur.emplace_back(1, ' ');
    cur.emplace_back(1, c);
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

namespace {

// GPT-2-style byte<->codepoint table: visible ASCII and upper Latin-1 keep
// their values, everything else is assigned from U+0100 upward.
struct ByteMap {
  char32_t to_cp[256];
  std::unordered_map<char32_t, unsigned char> from_cp;

  ByteMap() {
    bool direct[256] = {};
    for (int b = 0x21; b <= 0x7E; ++b) direct[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
    char32_t next = 0x100;
    for (int b = 0; b < 256; ++b) {
      char32_t cp = direct[b] ? static_cast<char32_t>(b) : next++;
      to_cp[b] = cp;
      from_cp[cp] = static_cast<unsigned char>(b);
    }
  }
};

const ByteMap& byte_map() {
  static const ByteMap map;
  return map;
}

}  // namespace

std::string byte_symbol_to_printable(const std::string& raw) {
  const ByteMap& map = byte_map();
  std::string out;
  out.reserve(raw.size() * 2);
  for (char c : raw) append_utf8(out, map.to_cp[static_cast<unsigned char>(c)]);
  return out;
}

std::string printable_to_byte_symbol(const std::string& printable) {
  const ByteMap& map = byte_map();
  std::string out;
  for (char32_t cp : decode_utf8(printable)) {
    auto it = map.from_cp.find(cp);
    if (it == map.from_cp.end())
      throw ParseError("codepoint U+" + std::to_string(static_cast<std::uint32_t>(cp)) +
                       " is not a byte-token character");
    out.push_back(static_cast<char>(it->second));
  }
  return out;
}

MergeApplier::MergeApplier(const std::vector<MergeRule>& merges) {
  entries_.reserve(merges.size());
  for (const auto& rule : merges) {
    Entry e;
    e.rule = rule;
    e.mask[0] = e.mask[1] = e.mask[2] = e.mask[3] = 0;
    auto mark = [&e](const std::string& s) {
      for (char c : s) {
        unsigned char b = static_cast<unsigned char>(c);
        e.mask[b >> 6] |= 1ull << (b & 63);
      }
    };
    mark(rule.left);
    mark(rule.right);
    entries_.push_back(std::move(e));
  }
}

SymbolSeq MergeApplier::apply(const SymbolSeq& symbols) const {
  SymbolSeq cur = symbols;
  if (cur.size() < 2) return cur;
  std::uint64_t have[4] = {0, 0, 0, 0};
  for (const auto& sym : cur)
    for (char c : sym) {
      unsigned char b = static_cast<unsigned char>(c);
      have[b >> 6] |= 1ull << (b & 63);
    }
  for (const auto& e : entries_) {
    if (cur.size() < 2) break;
    if ((e.mask[0] & ~have[0]) | (e.mask[1] & ~have[1]) | (e.mask[2] & ~have[2]) |
        (e.mask[3] & ~have[3]))
      continue;
    cur = apply_merge_once(cur, e.rule.left, e.rule.right);
  }
  return cur;
}

}  // namespace toklab
