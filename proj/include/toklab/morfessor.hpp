#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "toklab/corpus.hpp"
#include "toklab/errors.hpp"

namespace toklab {

// Word type -> occurrence count. Ordered so iteration is deterministic.
using WordCounts = std::map<std::string, std::int64_t>;

// Morph -> usage count across the segmented corpus.
using Lexicon = std::map<std::string, std::int64_t>;

// Word -> its current segmentation into morphs.
using Segmentations = std::map<std::string, std::vector<std::string>>;

struct MorfessorConfig {
  double corpus_weight = 1.0;
  double convergence_epsilon = 1e-3;  // nats; stop when an epoch improves less
  int max_epochs = 10;
  std::uint64_t seed = 0;
  bool uniform_char_cost = false;  // default: maximum-likelihood char distribution
};

// Per-character code lengths used to price lexicon entries: -log p(char) from
// the training corpus (token-weighted), plus an end-of-morph symbol whose
// count equals the total number of word tokens.
class CharCostTable {
 public:
  CharCostTable() = default;
  static CharCostTable from_corpus(const WordCounts& corpus, bool uniform);
  static CharCostTable from_parts(std::map<char32_t, double> costs, double end_cost,
                                  double unseen_cost);

  // Unseen characters price at -log(1/(total+1)).
  double char_cost(char32_t c) const;
  double end_cost() const { return end_cost_; }
  double unseen_cost() const { return unseen_cost_; }
  // Sum of char costs plus the end cost for one morph.
  double morph_cost(const std::u32string& morph) const;

  const std::map<char32_t, double>& costs() const { return costs_; }

 private:
  std::map<char32_t, double> costs_;
  double end_cost_ = 0.0;
  double unseen_cost_ = 0.0;
};

// Two-part description length: lexicon cost (each distinct in-use morph
// priced by CharCostTable) plus corpus cost (corpus_weight times the negative
// log-likelihood of the morph token stream under its own unigram counts).
// Throws InconsistentSegmentation when a segmentation uses a morph missing
// from the lexicon or the lexicon counts disagree with the segmentation.
double model_cost(const Lexicon& lexicon, const WordCounts& corpus,
                  const Segmentations& segmentation, const CharCostTable& chars,
                  double corpus_weight);

// Segmentation model trained by greedy description-length descent: epochs of
// per-word re-splitting (recursive binary splits, keeping a new split only if
// it is strictly cheaper), so the tracked cost never increases.
class SegmentationModel {
 public:
  SegmentationModel() = default;

  static SegmentationModel train(const WordCounts& corpus, const MorfessorConfig& config);

  // Cached result for trained words; best-path dynamic program over morph
  // costs for unseen words. Never mutates the model.
  std::vector<std::string> segment(const std::string& word) const;

  double cost() const;
  // Recomputed from scratch via model_cost; tests hold it within 1e-6 of cost().
  double recompute_cost() const;

  Lexicon lexicon() const;
  const Segmentations& segmentations() const { return segmentations_; }
  double corpus_weight() const { return config_.corpus_weight; }
  const std::vector<double>& epoch_costs() const { return epoch_costs_; }

  std::string to_json() const;
  static SegmentationModel from_json(const std::string& text);

 private:
  struct Stats {
    // Sufficient statistics for O(1) cost updates: total morph tokens, the
    // sum of c*ln(c) over morph counts, and the summed lexicon price of
    // in-use morphs.
    double n = 0.0;
    double s = 0.0;
    double lex_sum = 0.0;
  };

  double current_cost() const;
  void attach(const std::u32string& morph, std::int64_t k);
  void detach(const std::u32string& morph, std::int64_t k);
  std::vector<std::u32string> resplit(const std::u32string& word, std::int64_t mult);
  void rebuild_tracked_cost();

  MorfessorConfig config_;
  CharCostTable chars_;
  std::unordered_map<std::u32string, std::int64_t> counts_;
  Stats stats_;
  Segmentations segmentations_;
  WordCounts corpus_;
  double tracked_cost_ = 0.0;
  std::vector<double> epoch_costs_;
};

// Rewrites each document as morphs separated by spaces, with "*" between
// consecutive words ("AB C" -> "A B * C" when AB splits as A+B). Throws
// MarkerCollision if any input word is itself "*".
RawCorpus morphemize_corpus(const RawCorpus& corpus, const SegmentationModel& model);
std::string morphemize_line(const std::string& line, const SegmentationModel& model);

// Inverse of the marker scheme: concatenates morphs, turns "*" back into a
// space. A leading marker yields an empty first word.
std::string demorphemize(const std::string& text);

inline constexpr const char* kMorphemeMarker = "*";

}  // namespace toklab
