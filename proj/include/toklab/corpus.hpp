#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "toklab/text_normalize.hpp"

namespace toklab {

using TokenId = std::int32_t;

// One paragraph per line, UTF-8. Documents are trimmed on load; empty
// lines are dropped.
struct RawCorpus {
  std::vector<std::string> documents;
  std::string source_id;

  bool empty() const { return documents.empty(); }
  std::size_t size() const { return documents.size(); }
};

RawCorpus load_corpus(const std::string& path);
void save_corpus(const RawCorpus& corpus, const std::string& path);

RawCorpus normalize_corpus(const RawCorpus& corpus, const PreprocessConfig& config);

// Fixed-shape block of token ids, batch_size rows of seq_len each.
struct Batch {
  std::vector<TokenId> ids;  // row-major batch_size x seq_len
  int batch_size = 0;
  int seq_len = 0;

  TokenId at(int row, int col) const { return ids[static_cast<std::size_t>(row) * seq_len + col]; }
};

// Deterministic seeded split; validation size = round(valid_fraction * N),
// half away from zero. Both halves keep document order. Throws EmptyCorpus
// when the corpus has fewer than 2 documents.
std::pair<RawCorpus, RawCorpus> split_corpus(const RawCorpus& corpus,
                                             double valid_fraction,
                                             std::uint64_t seed);

// Packs the id stream into full rows then full batches; trailing remainder
// tokens and rows are dropped. Rows preserve stream order.
std::vector<Batch> batchify(const std::vector<TokenId>& ids, int batch_size,
                            int seq_len);

}  // namespace toklab
