// Acceptance gate: fourteen verifiable properties covering the whole
// toolkit — tokenizer round-trips, trainer/oracle equivalences, language
// model correctness, the downstream task harness, and end-to-end
// reproducibility. Each criterion prints one [PASS]/[FAIL] line; the
// process exits nonzero when any criterion fails.
//
// Full-scale results (the 1.2 GB corpus, multi-day training runs) are not
// reproducible here; criterion 1 records them as reference values and the
// remaining criteria check the properties that make the desk-scale build
// trustworthy.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "support/gen.hpp"
#include "support/oracles.hpp"
#include "toklab/analysis.hpp"
#include "toklab/corpus.hpp"
#include "toklab/errors.hpp"
#include "toklab/finetune.hpp"
#include "toklab/lm/checkpoint.hpp"
#include "toklab/lm/train.hpp"
#include "toklab/morfessor.hpp"
#include "toklab/pipeline.hpp"
#include "toklab/tokenizer.hpp"
#include "toklab/wordpiece.hpp"

namespace {

using namespace toklab;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

// ---------------------------------------------------------------------------
// Pinned tolerances and budgets
// ---------------------------------------------------------------------------
constexpr double kScoreRelTol = 1e-12;        // wordpiece score vs. rational
constexpr double kCostCacheTolNats = 1e-6;    // cached vs. recomputed MDL cost
constexpr double kMicroOptimumSlack = 0.05;   // trained cost within 5% of optimum
constexpr double kUniformPplRelTol = 1e-12;   // "exact" in 64-bit arithmetic
constexpr double kPplAccumulatorRelTol = 1e-6;
constexpr double kGradEpsilon = 1e-4;         // central-difference step
constexpr double kGradMaxRelErr = 1e-3;
constexpr double kParamCountSlack = 0.05;     // 24M +/- 5%
constexpr double kInitPplSlack = 0.20;        // initial ppl within +/-20% of V
constexpr double kMacroOracleTol = 1e-12;
constexpr double kCpsTargetF1 = 0.95;
constexpr double kCcTargetF1 = 0.90;
constexpr double kRoundTripBudgetSec = 60.0;
constexpr double kPretrainBudgetSec = 600.0;

struct AcceptanceFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool condition, const std::string& message) {
  if (!condition) throw AcceptanceFailure(message);
}

std::string fmt(double value) {
  std::ostringstream out;
  out.precision(6);
  out << value;
  return out.str();
}

// ---------------------------------------------------------------------------
// Criterion 1 — full-scale reference values, recorded (not reproducible at
// desk scale: they come from multi-day training on the full corpus).
// ---------------------------------------------------------------------------

struct ReferenceRow {
  const char* scheme;        // this library's scheme name
  double train_ppl, valid_ppl;  // end-of-training perplexities
  double top_token_freq;        // normalized frequency of the top token
  double cps, pos, ner, cc;     // downstream macro-F1
  double average;               // reported cross-task average
};

// Reference results at vocabulary 30000 on the full corpus.
constexpr ReferenceRow kReference[] = {
    // scheme              train    valid   top_f   cps    pos    ner    cc     avg
    {"morpheme_byte_bpe",  3.854,   3.677,  0.160,  0.86,  0.90,  0.72,  0.77,  0.81},
    {"byte_bpe",           6.328,   5.863,  0.121,  0.89,  0.87,  0.75,  0.81,  0.83},
    {"char_bpe",           134.0,   120.6,  0.047,  0.96,  0.89,  0.74,  0.91,  0.88},
    {"wordpiece",          125.6,   116.3,  0.168,  0.93,  0.71,  0.64,  0.85,  0.78},
    {"morpheme",           14.09,   13.71,  0.479,  0.94,  0.74,  0.76,  0.88,  0.83},
    {"word",               106.8,   97.08,  0.108,  0.96,  0.75,  0.72,  0.90,  0.83},
};
constexpr std::int64_t kReferenceWordBatches = 16791;  // full-corpus batch count

void criterion_1() {
  // The values are reference-only; what can be verified is their internal
  // consistency, so a transcription error cannot silently poison comparisons
  // made against them elsewhere.
  for (const ReferenceRow& row : kReference) {
    scheme_from_name(row.scheme);  // throws if the scheme name is wrong
    require(row.train_ppl > 1.0 && row.valid_ppl > 1.0,
            std::string(row.scheme) + ": perplexities must exceed 1");
    require(row.top_token_freq > 0.0 && row.top_token_freq < 1.0,
            std::string(row.scheme) + ": top-token frequency out of (0,1)");
    for (double f1 : {row.cps, row.pos, row.ner, row.cc, row.average})
      require(f1 >= 0.0 && f1 <= 1.0,
              std::string(row.scheme) + ": macro-F1 out of [0,1]");
    // The recorded average is the rounded mean of the four task scores.
    const double mean = (row.cps + row.pos + row.ner + row.cc) / 4.0;
    require(std::abs(mean - row.average) <= 0.005 + 1e-12,
            std::string(row.scheme) + ": average " + fmt(row.average) +
                " is not the rounded mean " + fmt(mean));
  }
  // Byte-level schemes report the lowest perplexities, morphemes next; the
  // downstream ranking does NOT follow perplexity (char_bpe wins on average).
  require(kReference[0].valid_ppl < kReference[1].valid_ppl &&
              kReference[1].valid_ppl < kReference[4].valid_ppl &&
              kReference[4].valid_ppl < kReference[5].valid_ppl,
          "perplexity ordering broken");
  const auto best_avg = std::max_element(
      std::begin(kReference), std::end(kReference),
      [](const ReferenceRow& a, const ReferenceRow& b) { return a.average < b.average; });
  require(std::string(best_avg->scheme) == "char_bpe",
          "best downstream average should be char_bpe");
  require(kReferenceWordBatches == 16791, "word-baseline batch count");
}

// ---------------------------------------------------------------------------
// Criteria 2 and 3 — round-trips and zero-OOV on shared fuzz inputs
// ---------------------------------------------------------------------------

struct FuzzData {
  Tokenizer byte_tok;
  Tokenizer char_tok;
  std::vector<std::string> mixed_lines;     // 10k Devanagari/Latin lines
  std::vector<std::string> random_strings;  // 100k random valid-UTF-8 strings
  double build_seconds = 0.0;
};

FuzzData& fuzz_data() {
  static FuzzData data = [] {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(20260819);
    RawCorpus train;
    for (int i = 0; i < 200; ++i)
      train.documents.push_back(testing::random_mixed_line(rng));
    TokenizerTrainConfig tc;
    tc.vocab_size = 600;
    FuzzData d{Tokenizer::train(Scheme::byte_bpe, train, tc),
               Tokenizer::train(Scheme::char_bpe, train, tc),
               {},
               {}};
    d.mixed_lines.reserve(10000);
    for (int i = 0; i < 10000; ++i)
      d.mixed_lines.push_back(testing::random_mixed_line(rng));
    d.random_strings.reserve(100000);
    for (int i = 0; i < 100000; ++i)
      d.random_strings.push_back(testing::random_utf8_string(rng, 48));
    d.build_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return d;
  }();
  return data;
}

void check_round_trips(const Tokenizer& tok, const std::vector<std::string>& inputs,
                       const char* label) {
  std::size_t failures = 0;
  std::string first_failure;
  for (const std::string& text : inputs) {
    const std::string norm = tok.normalize(text);
    if (tok.decode(tok.encode(norm)) != norm) {
      if (failures == 0) first_failure = text;
      ++failures;
    }
  }
  require(failures == 0, std::string(label) + ": " + std::to_string(failures) +
                             " round-trip failures, first input: " + first_failure);
}

void criterion_2() {
  const auto t0 = Clock::now();
  FuzzData& d = fuzz_data();
  check_round_trips(d.byte_tok, d.mixed_lines, "byte-BPE mixed corpus");
  check_round_trips(d.byte_tok, d.random_strings, "byte-BPE random UTF-8");
  check_round_trips(d.char_tok, d.mixed_lines, "char-BPE mixed corpus");
  check_round_trips(d.char_tok, d.random_strings, "char-BPE random UTF-8");
  const double elapsed =
      std::chrono::duration<double>(Clock::now() - t0).count() + d.build_seconds;
  require(elapsed < kRoundTripBudgetSec,
          "round trips took " + fmt(elapsed) + " s (budget " +
              fmt(kRoundTripBudgetSec) + " s)");
}

void criterion_3() {
  FuzzData& d = fuzz_data();
  const TokenId unk = *d.byte_tok.vocab().id("<unk>");
  std::size_t scanned = 0;
  for (const std::vector<std::string>* set : {&d.mixed_lines, &d.random_strings})
    for (const std::string& text : *set) {
      for (TokenId id : d.byte_tok.encode(text))
        require(id != unk, "byte-BPE emitted <unk> for input: " + text);
      ++scanned;
    }
  require(scanned == 110000, "expected to scan the full fuzz set");
}

// ---------------------------------------------------------------------------
// Criterion 4 — likelihood-gain score exactness and trainer argmax
// ---------------------------------------------------------------------------

void criterion_4() {
  std::mt19937_64 rng(40404);
  std::uniform_int_distribution<std::int64_t> unigram(1, 1000000);
  std::uniform_int_distribution<std::int64_t> pair_count(0, 1000000);
  PairStats prev{};
  bool have_prev = false;
  for (int i = 0; i < 10000; ++i) {
    PairStats s;
    s.f_first = unigram(rng);
    s.f_second = unigram(rng);
    s.f_pair = pair_count(rng);
    const double got = wordpiece_score(s);
    const long double exact = static_cast<long double>(s.f_pair) /
                              (static_cast<long double>(s.f_first) *
                               static_cast<long double>(s.f_second));
    const double want = static_cast<double>(exact);
    require(std::abs(got - want) <=
                kScoreRelTol * std::max(1.0, std::abs(want)),
            "score mismatch at triple " + std::to_string(i));
    if (have_prev) {
      // Ordering agrees with exact integer cross-multiplication.
      const __int128 lhs = static_cast<__int128>(s.f_pair) * prev.f_first * prev.f_second;
      const __int128 rhs = static_cast<__int128>(prev.f_pair) * s.f_first * s.f_second;
      const double prev_score = wordpiece_score(prev);
      if (lhs != rhs)
        require((lhs > rhs) == (got > prev_score) || got == prev_score,
                "score ordering disagrees with rational comparison at " +
                    std::to_string(i));
    }
    prev = s;
    have_prev = true;
  }

  // Trainer selections equal a brute-force argmax re-count on toy corpora.
  std::mt19937_64 corpus_rng(20260819);
  for (int trial = 0; trial < 50; ++trial) {
    SymbolCorpus raw =
        testing::random_symbol_corpus(corpus_rng, 200, trial % 2 ? 3 : 4);
    SymbolCorpus corpus;
    for (std::size_t w = 0; w < raw.words.size(); ++w) {
      SymbolSeq word;
      for (std::size_t i = 0; i < raw.words[w].size(); ++i)
        word.push_back(i == 0 ? raw.words[w][i] : "##" + raw.words[w][i]);
      corpus.words.push_back(std::move(word));
      corpus.counts.push_back(raw.counts[w]);
    }
    SymbolCorpus copy = corpus;
    const std::vector<MergeRule> fast = train_wordpiece_merges(corpus, 25, "##");
    const std::vector<MergeRule> slow = testing::naive_wordpiece_train(copy, 25, "##");
    require(fast == slow, "merge lists diverge on toy corpus " + std::to_string(trial));
  }
}

// ---------------------------------------------------------------------------
// Criterion 5 — BPE trainer equals the quadratic recount reference
// ---------------------------------------------------------------------------

void criterion_5() {
  std::mt19937_64 rng(20260819);
  for (int trial = 0; trial < 50; ++trial) {
    SymbolCorpus corpus =
        testing::random_symbol_corpus(rng, 1000, trial % 2 ? 3 : 5);
    SymbolCorpus copy = corpus;
    const std::vector<MergeRule> fast = train_bpe_merges(corpus, 40);
    const std::vector<MergeRule> slow = testing::naive_bpe_train(copy, 40);
    require(fast == slow,
            "merge lists diverge on random corpus " + std::to_string(trial));
  }
}

// ---------------------------------------------------------------------------
// Criterion 6 — segmentation trainer cost properties
// ---------------------------------------------------------------------------

WordCounts random_word_counts(std::mt19937_64& rng, int n_words, int alphabet,
                              int max_len) {
  std::uniform_int_distribution<int> letter(0, alphabet - 1);
  std::uniform_int_distribution<int> len(1, max_len);
  std::uniform_int_distribution<std::int64_t> count(1, 9);
  WordCounts corpus;
  for (int w = 0; w < n_words; ++w) {
    std::string word;
    const int l = len(rng);
    for (int i = 0; i < l; ++i)
      word += static_cast<char>('a' + letter(rng));
    corpus[word] += count(rng);
  }
  return corpus;
}

void criterion_6() {
  std::mt19937_64 rng(606060);
  for (int trial = 0; trial < 20; ++trial) {
    WordCounts corpus = random_word_counts(rng, 12, 4, 6);
    MorfessorConfig config;
    config.max_epochs = 6;
    config.seed = static_cast<std::uint64_t>(trial);
    const SegmentationModel model = SegmentationModel::train(corpus, config);

    const auto& costs = model.epoch_costs();
    require(!costs.empty(), "no epoch costs recorded");
    for (std::size_t e = 1; e < costs.size(); ++e)
      require(costs[e] <= costs[e - 1] + 1e-9,
              "cost increased at epoch " + std::to_string(e) + " of trial " +
                  std::to_string(trial));

    require(std::abs(model.cost() - model.recompute_cost()) <= kCostCacheTolNats,
            "cached cost drifted " +
                fmt(std::abs(model.cost() - model.recompute_cost())) +
                " nats on trial " + std::to_string(trial));

    for (const auto& [word, count] : corpus) {
      const auto morphs = model.segment(word);
      const std::string joined =
          std::accumulate(morphs.begin(), morphs.end(), std::string());
      require(joined == word,
              "segments of '" + word + "' rejoin to '" + joined + "'");
    }
  }

  // Micro corpora small enough to enumerate every joint segmentation.
  const std::vector<WordCounts> micro = {
      {{"abe", 8}, {"abi", 8}, {"ade", 8}, {"adi", 8}},
      {{"abcd", 6}, {"abce", 6}, {"fgcd", 6}, {"fgce", 6}},
      {{"ab", 9}, {"cb", 9}, {"abe", 4}, {"cbe", 4}, {"e", 6}},
      {{"ab", 20}, {"abc", 6}, {"abd", 6}},
  };
  for (std::size_t i = 0; i < micro.size(); ++i) {
    MorfessorConfig config;
    config.max_epochs = 20;
    config.seed = 5;
    const SegmentationModel model = SegmentationModel::train(micro[i], config);
    const CharCostTable chars = CharCostTable::from_corpus(micro[i], false);
    const double best = testing::exhaustive_best_cost(micro[i], chars, 1.0);
    require(model.cost() <= best * (1.0 + kMicroOptimumSlack) + 1e-9,
            "micro corpus " + std::to_string(i) + ": trained cost " +
                fmt(model.cost()) + " exceeds optimum " + fmt(best) + " by >5%");
    require(model.cost() >= best - kCostCacheTolNats,
            "micro corpus " + std::to_string(i) + ": cost below the optimum");
  }
}

// ---------------------------------------------------------------------------
// Criterion 7 — morph marker format and its inverse
// ---------------------------------------------------------------------------

void criterion_7() {
  // A corpus where "ab" reliably decomposes into the shared morphs a and b,
  // giving the worked example: "ab c" -> "a b * c".
  WordCounts corpus{{"a", 50}, {"b", 50}, {"c", 50}, {"ab", 2}};
  MorfessorConfig config;
  config.seed = 1;
  const SegmentationModel model = SegmentationModel::train(corpus, config);
  const auto ab = model.segment("ab");
  require(ab == std::vector<std::string>{"a", "b"},
          "expected 'ab' to segment as a + b");
  require(morphemize_line("ab c", model) == "a b * c",
          "marker format: got '" + morphemize_line("ab c", model) + "'");
  require(demorphemize("a b * c") == "ab c", "inverse of the worked example");

  std::mt19937_64 rng(70707);
  for (int i = 0; i < 10000; ++i) {
    const std::string line = testing::random_mixed_line(rng);
    const std::string morphed = morphemize_line(line, model);
    require(demorphemize(morphed) == line,
            "marker round trip failed on: " + line);
  }
}

// ---------------------------------------------------------------------------
// Criterion 8 — perplexity closed form and independent accumulation
// ---------------------------------------------------------------------------

lm::LMConfig tiny_lm(int vocab = 40, int seq = 12) {
  lm::LMConfig c;
  c.vocab_size = vocab;
  c.emsize = 24;
  c.dim_feedforward = 48;
  c.nlayers = 2;
  c.nhead = 3;
  c.dropout = 0.0;
  c.batch_size = 2;
  c.seq_len = seq;
  c.seed = 11;
  return c;
}

Batch random_batch(int vocab, int b, int t, std::uint64_t seed) {
  Batch batch;
  batch.batch_size = b;
  batch.seq_len = t;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> pick(0, vocab - 1);
  batch.ids.resize(static_cast<std::size_t>(b) * t);
  for (auto& id : batch.ids) id = pick(rng);
  return batch;
}

// exp(nll_sum/N) accumulated independently, in long double, straight from
// the logits.
template <typename T>
double accumulated_perplexity(lm::Transformer<T>& model,
                              const std::vector<Batch>& batches,
                              std::int64_t* n_out) {
  long double nll = 0.0L;
  std::int64_t n = 0;
  const int v = model.config().vocab_size;
  for (const Batch& batch : batches) {
    model.forward(batch);
    const auto& logits = model.logits();
    for (int b = 0; b < batch.batch_size; ++b)
      for (int t = 0; t + 1 < batch.seq_len; ++t) {
        const std::size_t off =
            (static_cast<std::size_t>(b) * batch.seq_len + t) * v;
        long double mx = logits[off];
        for (int j = 1; j < v; ++j)
          mx = std::max(mx, static_cast<long double>(logits[off + j]));
        long double z = 0.0L;
        for (int j = 0; j < v; ++j)
          z += std::exp(static_cast<long double>(logits[off + j]) - mx);
        nll += -(static_cast<long double>(logits[off + batch.at(b, t + 1)]) -
                 mx - std::log(z));
        ++n;
      }
  }
  if (n_out) *n_out = n;
  return std::exp(static_cast<double>(nll / n));
}

void criterion_8() {
  for (int v : {10, 100, 30000}) {
    const double ppl = lm::perplexity(std::vector<double>(16, 1.0 / v));
    require(std::abs(ppl - v) <= kUniformPplRelTol * v,
            "uniform distribution over " + std::to_string(v) + " scored " +
                fmt(ppl));
  }

  // Reported perplexity vs. an independent accumulator, every epoch, for
  // both the training records and a held-out evaluation.
  lm::LMConfig c = tiny_lm();
  lm::Transformer<double> model(c, lm::Backend::openmp);
  model.init_params(13);
  std::vector<Batch> train_batches, valid_batches;
  for (int i = 0; i < 4; ++i)
    train_batches.push_back(random_batch(c.vocab_size, 2, 12, 100 + i));
  for (int i = 0; i < 2; ++i)
    valid_batches.push_back(random_batch(c.vocab_size, 2, 12, 200 + i));

  lm::AdamState<double> state;
  for (int epoch = 0; epoch < 3; ++epoch) {
    const lm::EvalRecord train_record = lm::train_epoch(
        model, train_batches, state, static_cast<std::uint64_t>(epoch));
    // The training record accumulates nll over the same batches it steps on;
    // its perplexity must be the exact exp(nll_sum/n) of those sums.
    require(std::abs(train_record.perplexity() -
                     std::exp(train_record.nll_sum /
                              static_cast<double>(train_record.n))) <=
                kPplAccumulatorRelTol * train_record.perplexity(),
            "training record is not exp(nll/N) at epoch " + std::to_string(epoch));

    const lm::EvalRecord valid_record = lm::evaluate(model, valid_batches);
    std::int64_t n = 0;
    const double oracle = accumulated_perplexity(model, valid_batches, &n);
    require(n == valid_record.n, "token counts disagree");
    require(std::abs(valid_record.perplexity() - oracle) <=
                kPplAccumulatorRelTol * oracle,
            "validation perplexity " + fmt(valid_record.perplexity()) +
                " vs accumulator " + fmt(oracle) + " at epoch " +
                std::to_string(epoch));
  }
}

// ---------------------------------------------------------------------------
// Criterion 9 — gradient check and parameter-count formula
// ---------------------------------------------------------------------------

void criterion_9() {
  lm::LMConfig c;
  c.vocab_size = 50;
  c.emsize = 16;
  c.dim_feedforward = 32;
  c.nlayers = 2;
  c.nhead = 2;
  c.dropout = 0.0;
  c.seq_len = 8;
  lm::Transformer<double> model(c, lm::Backend::openmp);
  model.init_params(29);
  const Batch batch = random_batch(c.vocab_size, 2, 8, 41);
  const std::vector<double> analytic = lm::analytic_gradients(model, batch);
  const lm::GradCheckResult result =
      lm::finite_difference_check(model, batch, analytic, kGradEpsilon, 220, 101);
  require(result.checked >= 200, "too few coordinates checked");
  require(result.max_rel_error < kGradMaxRelErr,
          "max relative gradient error " + fmt(result.max_rel_error));

  // The analytic count matches the parameter vector, at several shapes.
  for (const lm::LMConfig& probe : {c, tiny_lm(), tiny_lm(100, 16)}) {
    lm::Transformer<float> m(probe, lm::Backend::openmp);
    require(lm::parameter_count(probe) ==
                static_cast<std::int64_t>(m.params().size()),
            "parameter_count formula disagrees with the layout");
  }

  // Full-scale configuration: about 24M parameters at a 30k vocabulary.
  const lm::LMConfig full;  // defaults are the full-scale setup
  const double count = static_cast<double>(lm::parameter_count(full));
  require(std::abs(count - 24e6) <= kParamCountSlack * 24e6,
          "full-scale parameter count " + fmt(count) + " not within 24M +/- 5%");
}

// ---------------------------------------------------------------------------
// Criterion 10 — causal masking
// ---------------------------------------------------------------------------

void criterion_10() {
  lm::LMConfig c = tiny_lm();
  lm::Transformer<float> model(c, lm::Backend::openmp);
  model.init_params(17);
  const Batch base = random_batch(c.vocab_size, 2, 12, 23);
  model.forward(base);
  const std::vector<float> reference = model.logits();
  std::mt19937_64 rng(99);
  const int v = c.vocab_size;
  for (int trial = 0; trial < 1000; ++trial) {
    Batch mutated = base;
    const int row = static_cast<int>(rng() % 2);
    const int pos = 1 + static_cast<int>(rng() % 11);
    TokenId replacement = static_cast<TokenId>(rng() % v);
    if (replacement == mutated.at(row, pos))
      replacement = static_cast<TokenId>((replacement + 1) % v);
    mutated.ids[static_cast<std::size_t>(row) * 12 + pos] = replacement;
    model.forward(mutated);
    const auto& changed = model.logits();
    for (int p = 0; p < pos; ++p) {
      const std::size_t off = (static_cast<std::size_t>(row) * 12 + p) * v;
      require(std::memcmp(reference.data() + off, changed.data() + off,
                          sizeof(float) * static_cast<std::size_t>(v)) == 0,
              "perturbing position " + std::to_string(pos) +
                  " changed logits at position " + std::to_string(p));
    }
  }
}

// ---------------------------------------------------------------------------
// Criterion 11 — desk-scale pretrain smoke test
// ---------------------------------------------------------------------------

void criterion_11() {
  const auto t0 = Clock::now();

  // 50k-token synthetic corpus over a 150-word vocabulary whose successor
  // structure is deterministic, so a tiny model can compress it quickly.
  RawCorpus corpus;
  int word = 0;
  for (int doc = 0; doc < 500; ++doc) {
    std::string line;
    for (int i = 0; i < 100; ++i) {
      if (i) line += ' ';
      line += "w" + std::to_string(word);
      word = (word + 7) % 150;
    }
    corpus.documents.push_back(std::move(line));
  }

  TokenizerTrainConfig tc;
  tc.vocab_size = 153;  // 150 words + specials
  const Tokenizer tok = Tokenizer::train(Scheme::word, corpus, tc);
  const std::vector<TokenId> stream = encode_corpus(tok, corpus);
  require(stream.size() >= 50000, "synthetic stream too short");

  const std::size_t split = stream.size() * 9 / 10;
  const std::vector<Batch> train = batchify(
      std::vector<TokenId>(stream.begin(), stream.begin() + split), 8, 32);
  const std::vector<Batch> valid = batchify(
      std::vector<TokenId>(stream.begin() + split, stream.end()), 8, 32);

  lm::LMConfig c;
  c.vocab_size = static_cast<int>(tok.vocab().size());
  c.emsize = 32;
  c.dim_feedforward = 64;
  c.nlayers = 1;
  c.nhead = 2;
  c.dropout = 0.1;
  c.batch_size = 8;
  c.seq_len = 32;
  c.seed = 5;
  c.optimizer.learning_rate = 3e-3;
  lm::Transformer<float> model(c, lm::Backend::openmp);
  model.init_params(c.seed);

  const double initial = lm::evaluate(model, valid).perplexity();
  const double vocab = static_cast<double>(c.vocab_size);
  require(std::abs(initial - vocab) <= kInitPplSlack * vocab,
          "initial perplexity " + fmt(initial) + " not within 20% of " +
              fmt(vocab));

  lm::AdamState<float> state;
  for (int epoch = 0; epoch < 5; ++epoch)
    lm::train_epoch(model, train, state, static_cast<std::uint64_t>(epoch));
  const double final_ppl = lm::evaluate(model, valid).perplexity();
  require(final_ppl < 0.5 * initial,
          "validation perplexity only reached " + fmt(final_ppl) + " from " +
              fmt(initial));

  const double elapsed = std::chrono::duration<double>(Clock::now() - t0).count();
  require(elapsed < kPretrainBudgetSec,
          "pretrain smoke took " + fmt(elapsed) + " s (budget " +
              fmt(kPretrainBudgetSec) + " s)");
}

// ---------------------------------------------------------------------------
// Criterion 12 — granularity monotonicity and batch inflation
// ---------------------------------------------------------------------------

void criterion_12() {
  std::mt19937_64 rng(121212);
  RawCorpus corpus;
  for (int i = 0; i < 300; ++i)
    corpus.documents.push_back(testing::random_mixed_line(rng));

  TokenizerTrainConfig tc;
  tc.vocab_size = 1000;
  std::vector<Tokenizer> models;
  for (Scheme scheme : all_schemes())
    models.push_back(Tokenizer::train(scheme, corpus, tc));

  const Tokenizer* word_tok = nullptr;
  const Tokenizer* char_tok = nullptr;
  const Tokenizer* byte_tok = nullptr;
  for (const Tokenizer& tok : models) {
    if (tok.scheme() == Scheme::word) word_tok = &tok;
    if (tok.scheme() == Scheme::char_bpe) char_tok = &tok;
    if (tok.scheme() == Scheme::byte_bpe) byte_tok = &tok;
  }
  require(word_tok && char_tok && byte_tok, "missing schemes");

  for (const std::string& line : corpus.documents) {
    const std::size_t w = word_tok->encode(line).size();
    const std::size_t ch = char_tok->encode(line).size();
    const std::size_t by = byte_tok->encode(line).size();
    require(by >= ch && ch >= w,
            "token counts " + std::to_string(by) + " >= " + std::to_string(ch) +
                " >= " + std::to_string(w) + " violated on: " + line);
  }

  const auto inflations = analysis::batch_inflation(corpus, models, "word", 2, 16);
  require(inflations.size() == models.size(), "one row per scheme expected");
  for (std::size_t i = 0; i < inflations.size(); ++i) {
    if (models[i].scheme() == Scheme::word) {
      require(inflations[i].percent_increase == 0.0, "baseline must sit at zero");
      continue;
    }
    require(inflations[i].percent_increase > 0.0,
            inflations[i].scheme + ": batch inflation " +
                fmt(inflations[i].percent_increase) + " is not positive");
  }
}

// ---------------------------------------------------------------------------
// Criterion 13 — downstream harness: decomposition, metric, separable tasks
// ---------------------------------------------------------------------------

double oracle_macro_f1(const std::vector<int>& preds, const std::vector<int>& golds,
                       int n_classes) {
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < n_classes; ++c) {
    long tp = 0, pred_n = 0, gold_n = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (preds[i] == c && golds[i] == c) ++tp;
      if (preds[i] == c) ++pred_n;
      if (golds[i] == c) ++gold_n;
    }
    if (pred_n == 0 && gold_n == 0) continue;
    ++present;
    const double p = pred_n > 0 ? double(tp) / double(pred_n) : 0.0;
    const double r = gold_n > 0 ? double(tp) / double(gold_n) : 0.0;
    sum += (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  return present > 0 ? sum / present : 0.0;
}

std::vector<TokenId> random_row(std::mt19937_64& rng, int lo, int hi, int min_len,
                                int max_len) {
  std::uniform_int_distribution<int> len(min_len, max_len);
  std::uniform_int_distribution<int> id(lo, hi - 1);
  std::vector<TokenId> row(static_cast<std::size_t>(len(rng)));
  for (auto& x : row) x = static_cast<TokenId>(id(rng));
  return row;
}

std::vector<EncodedExample> synthetic_cps(int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<EncodedExample> out;
  for (int i = 0; i < count; ++i) {
    const auto a = random_row(rng, 3, 50, 4, 8);
    EncodedExample ex;
    if (i % 2 == 0) {
      ex.segments = {a, a};
      ex.label = 1;
    } else {
      auto b = random_row(rng, 3, 50, 4, 8);
      while (b == a) b = random_row(rng, 3, 50, 4, 8);
      ex.segments = {a, b};
      ex.label = 0;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<EncodedExample> synthetic_cc(int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<EncodedExample> out;
  for (int i = 0; i < count; ++i) {
    const int cls = i % 3;
    EncodedExample ex;
    auto row = random_row(rng, 6, 50, 2, 9);
    row.push_back(static_cast<TokenId>(3 + cls));
    ex.segments = {std::move(row)};
    ex.label = cls;
    out.push_back(std::move(ex));
  }
  return out;
}

void criterion_13() {
  // Prefix decomposition of the worked three-token example.
  const auto items = decompose_sequence({"A", "B", "C"}, {"La", "Lb", "Lc"});
  require(items.size() == 3, "three prefixes expected");
  require(items[0].first == std::vector<std::string>{"A"} && items[0].second == "La",
          "first prefix is A / La");
  require(items[1].first == std::vector<std::string>{"A", "B"} &&
              items[1].second == "Lb",
          "second prefix is AB / Lb");
  require(items[2].first == std::vector<std::string>{"A", "B", "C"} &&
              items[2].second == "Lc",
          "third prefix is ABC / Lc");

  const std::vector<std::string> abc = {"A", "B", "C"};
  require(truncate(abc, 2, TruncateMode::end) ==
              std::vector<std::string>{"A", "B"},
          "end truncation keeps the leading tokens");
  require(truncate(abc, 2, TruncateMode::begin) ==
              std::vector<std::string>{"B", "C"},
          "begin truncation keeps the trailing tokens");
  require(truncate(abc, 3, TruncateMode::end) == abc, "no-op at full length");

  // Metric equals a brute-force confusion-matrix recount.
  std::mt19937_64 rng(131313);
  for (int trial = 0; trial < 1000; ++trial) {
    std::uniform_int_distribution<int> classes_dist(2, 7);
    std::uniform_int_distribution<int> n_dist(1, 40);
    const int n_classes = classes_dist(rng);
    const int n = n_dist(rng);
    std::uniform_int_distribution<int> label(0, n_classes - 1);
    std::vector<int> preds(n), golds(n);
    for (int i = 0; i < n; ++i) {
      preds[i] = label(rng) % std::max(1, n_classes - trial % 3);
      golds[i] = label(rng) % std::max(1, n_classes - trial % 2);
    }
    require(std::abs(macro_f1(preds, golds, n_classes) -
                     oracle_macro_f1(preds, golds, n_classes)) <= kMacroOracleTol,
            "macro-F1 diverged from the recount at trial " + std::to_string(trial));
  }

  // Worked binary example: golds 0,0,1,1 / preds 0,1,1,1 gives 11/15.
  const double worked = macro_f1({0, 1, 1, 1}, {0, 0, 1, 1}, 2);
  require(std::abs(worked - 11.0 / 15.0) <= kMacroOracleTol,
          "worked binary example scored " + fmt(worked));

  // Separable synthetic tasks on a frozen random-weight trunk.
  lm::LMConfig c = tiny_lm(50, 12);
  c.dropout = 0.2;  // representations are extracted in eval mode
  c.batch_size = 4;
  c.seed = 17;

  FinetuneConfig fc;
  fc.epochs = 20;
  fc.batch_size = 16;
  fc.hidden_dim = 64;
  fc.learning_rate = 3e-3;

  lm::Transformer<float> cps_model(c, lm::Backend::openmp);
  cps_model.init_params(100);
  fc.seed = 7;
  const auto cps = finetune_task(cps_model, "cps", 2, synthetic_cps(60, 11), {}, fc);
  require(cps.metrics.macro >= kCpsTargetF1,
          "pair task reached macro-F1 " + fmt(cps.metrics.macro) + " < " +
              fmt(kCpsTargetF1) + " within 20 epochs");

  lm::Transformer<float> cc_model(c, lm::Backend::openmp);
  cc_model.init_params(101);
  fc.seed = 3;
  const auto cc = finetune_task(cc_model, "cc", 3, synthetic_cc(60, 21), {}, fc);
  require(cc.metrics.macro >= kCcTargetF1,
          "classification task reached macro-F1 " + fmt(cc.metrics.macro) +
              " < " + fmt(kCcTargetF1) + " within 20 epochs");
}

// ---------------------------------------------------------------------------
// Criterion 14 — end-to-end determinism of the pipeline
// ---------------------------------------------------------------------------

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "missing file " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void criterion_14() {
  const fs::path ws =
      fs::temp_directory_path() /
      ("toklab_accept_" + std::to_string(std::random_device{}()));
  fs::create_directories(ws);

  {
    std::ofstream corpus(ws / "corpus.txt");
    std::mt19937_64 rng(1414);
    for (int i = 0; i < 80; ++i)
      corpus << testing::random_mixed_line(rng) << "\n";
    std::ofstream cc(ws / "cc.tsv");
    cc << "text\tlabel\n";
    for (int i = 0; i < 8; ++i)
      cc << "sample text " << i << "\t" << (i % 2 ? "one" : "two") << "\n";
  }

  pipeline::ExperimentConfig config;
  config.train_corpus = (ws / "corpus.txt").string();
  config.runs = {{Scheme::word, 120}, {Scheme::byte_bpe, 300}};
  config.lm.emsize = 32;
  config.lm.dim_feedforward = 48;
  config.lm.nlayers = 1;
  config.lm.nhead = 2;
  config.lm.dropout = 0.1;
  config.lm.batch_size = 2;
  config.lm.seq_len = 16;
  config.lm.optimizer.epochs = 2;
  config.finetune.config.epochs = 2;
  config.finetune.config.batch_size = 4;
  config.finetune.config.hidden_dim = 16;
  config.finetune.max_len = 12;
  config.finetune.tasks = {{"cc", (ws / "cc.tsv").string()}};
  config.analysis.top_k = {1, 5};
  config.seed = 9;

  const std::vector<std::string> reports = {
      "summary.json", "ppl_curves.csv", "token_frequencies.csv",
      "coverage.csv", "batch_inflation.csv"};

  config.output_dir = (ws / "out_a").string();
  pipeline::run_experiment(config);
  config.output_dir = (ws / "out_b").string();
  pipeline::run_experiment(config);
  for (const std::string& name : reports)
    require(slurp(ws / "out_a" / name) == slurp(ws / "out_b" / name),
            name + " differs between two cold runs");

  // Resume: wipe one stage's record and one report; the resumed run must
  // reproduce the cold bytes exactly.
  const std::string cold_summary = slurp(ws / "out_a" / "summary.json");
  fs::remove(ws / "out_a" / "summary.json");
  fs::remove(ws / "out_a" / "stage_records" / "finetune_word-120_cc.json");
  config.output_dir = (ws / "out_a").string();
  const pipeline::ExperimentResult resumed = pipeline::run_experiment(config);
  std::size_t reran = 0;
  for (const auto& outcome : resumed.stages) reran += !outcome.skipped;
  require(reran == 2, "expected exactly the wiped stages to re-run");
  require(pipeline::fnv1a64(slurp(ws / "out_a" / "summary.json")) ==
              pipeline::fnv1a64(cold_summary),
          "resumed summary hash differs from the cold run");
  for (const std::string& name : reports)
    require(slurp(ws / "out_a" / name) == slurp(ws / "out_b" / name),
            name + " differs after resume");
}

// ---------------------------------------------------------------------------

struct Criterion {
  int id;
  const char* title;
  std::function<void()> body;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "full-scale reference values recorded and internally consistent",
       criterion_1},
      {2, "byte/char round-trips over 10k mixed lines + 100k random UTF-8 in "
          "budget", criterion_2},
      {3, "byte-level scheme never emits <unk> on any fuzz input", criterion_3},
      {4, "likelihood-gain score exact vs rational; trainer equals argmax "
          "oracle", criterion_4},
      {5, "incremental BPE trainer equals the quadratic recount reference",
       criterion_5},
      {6, "segmentation cost: monotone epochs, exact cache, near-optimal on "
          "micro corpora", criterion_6},
      {7, "morph marker worked example and 10k-line inverse round trip",
       criterion_7},
      {8, "uniform perplexity closed form; reported ppl equals independent "
          "accumulator", criterion_8},
      {9, "analytic gradients pass central differences; ~24M parameters at "
          "full scale", criterion_9},
      {10, "1000 future-token perturbations never change past logits",
       criterion_10},
      {11, "50k-token pretrain halves validation perplexity within budget",
       criterion_11},
      {12, "per-sentence granularity byte >= char >= word; subword batch "
           "inflation positive", criterion_12},
      {13, "prefix decomposition, macro-F1 oracle, separable task thresholds",
       criterion_13},
      {14, "byte-identical reports across cold runs and resumes", criterion_14},
  };

  int failures = 0;
  for (const Criterion& criterion : criteria) {
    const auto t0 = Clock::now();
    std::string error;
    try {
      criterion.body();
    } catch (const std::exception& e) {
      error = e.what();
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (error.empty()) {
      std::printf("[PASS] %2d: %s (%.2fs)\n", criterion.id, criterion.title, secs);
    } else {
      std::printf("[FAIL] %2d: %s (%.2fs)\n           %s\n", criterion.id,
                  criterion.title, secs, error.c_str());
      ++failures;
    }
    std::fflush(stdout);
  }
  if (failures == 0) {
    std::printf("all 14 criteria passed\n");
    return 0;
  }
  std::printf("%d criteria FAILED\n", failures);
  return 1;
}
