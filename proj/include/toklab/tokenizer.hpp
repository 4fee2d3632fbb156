#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "toklab/bpe.hpp"
#include "toklab/corpus.hpp"
#include "toklab/errors.hpp"
#include "toklab/morfessor.hpp"
#include "toklab/text_normalize.hpp"
#include "toklab/vocab.hpp"
#include "toklab/wordpiece.hpp"

namespace toklab {

enum class Scheme { word, wordpiece, char_bpe, byte_bpe, morpheme, morpheme_byte_bpe };

const char* scheme_name(Scheme scheme);
Scheme scheme_from_name(const std::string& name);  // throws ConfigInvalid
std::vector<Scheme> all_schemes();

struct SpecialTokens {
  std::string unk = "<unk>";
  std::string num = "<num>";
  std::string pad = "<pad>";
};

struct TokenizerTrainConfig {
  std::size_t vocab_size = 30000;
  PreprocessConfig preprocess;
  SpecialTokens specials;
  std::string space_marker = "\xE2\x96\x81";  // U+2581
  std::string continuation_prefix = kContinuationPrefix;
  MorfessorConfig morfessor;
};

// One trained subword model with a uniform encode/decode interface. Ids are
// dense in [0, vocab size); specials sit at the lowest ids and count against
// the vocabulary budget.
class Tokenizer {
 public:
  Tokenizer() = default;

  static Tokenizer train(Scheme scheme, const RawCorpus& corpus,
                         const TokenizerTrainConfig& config);

  // Applies the stored preprocessing profile (the same one used on the
  // training corpus) before segmenting.
  std::string normalize(const std::string& text) const;

  std::vector<TokenId> encode(const std::string& text) const;
  std::vector<std::string> encode_tokens(const std::string& text) const;
  std::string decode(const std::vector<TokenId>& ids) const;

  Scheme scheme() const { return scheme_; }
  const Vocab& vocab() const { return vocab_; }
  const std::vector<MergeRule>& merges() const { return merges_; }
  const SpecialTokens& specials() const { return specials_; }
  const PreprocessConfig& preprocess() const { return preprocess_; }
  TokenId unk_id() const { return unk_id_; }
  TokenId num_id() const { return num_id_; }
  TokenId pad_id() const { return pad_id_; }
  const SegmentationModel* segmenter() const { return segmenter_.get(); }

  std::string to_json() const;
  static Tokenizer from_json(const std::string& text);
  void save(const std::string& path) const;
  static Tokenizer load(const std::string& path);

 private:
  void finalize();  // rebuilds derived lookup structures after train/load
  std::vector<std::string> segment_normalized(const std::string& norm) const;

  Scheme scheme_ = Scheme::word;
  Vocab vocab_;
  std::vector<MergeRule> merges_;
  SpecialTokens specials_;
  PreprocessConfig preprocess_;
  std::string space_marker_;
  std::string continuation_prefix_;
  std::shared_ptr<SegmentationModel> segmenter_;

  TokenId unk_id_ = 0;
  TokenId num_id_ = 1;
  TokenId pad_id_ = 2;
  std::unique_ptr<MergeApplier> applier_;
  std::unordered_set<std::string> vocab_set_;  // wordpiece greedy lookup
};

// Token count after encoding every document; the raw material for the
// granularity and batch-inflation comparisons.
std::int64_t corpus_token_count(const Tokenizer& tokenizer, const RawCorpus& corpus);

// Encodes every document and concatenates the ids (document order preserved).
std::vector<TokenId> encode_corpus(const Tokenizer& tokenizer, const RawCorpus& corpus);

}  // namespace toklab
