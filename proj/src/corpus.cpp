#include "toklab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "toklab/errors.hpp"
#include "toklab/unicode.hpp"

namespace toklab {

namespace {

std::string trim(const std::string& s) {
  auto cps = unicode::decode_utf8(s);
  std::size_t b = 0, e = cps.size();
  while (b < e && unicode::is_whitespace(cps[b])) ++b;
  while (e > b && unicode::is_whitespace(cps[e - 1])) --e;
  std::string out;
  for (std::size_t i = b; i < e; ++i) unicode::append_utf8(out, cps[i]);
  return out;
}

}  // namespace

RawCorpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOFailure("cannot open corpus: " + path);
  RawCorpus corpus;
  corpus.source_id = path;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string doc = trim(line);
    if (!doc.empty()) corpus.documents.push_back(std::move(doc));
  }
  return corpus;
}

void save_corpus(const RawCorpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOFailure("cannot write corpus: " + path);
  for (const auto& doc : corpus.documents) out << doc << '\n';
  if (!out) throw IOFailure("write failed: " + path);
}

RawCorpus normalize_corpus(const RawCorpus& corpus, const PreprocessConfig& config) {
  RawCorpus out;
  out.source_id = corpus.source_id;
  out.documents.reserve(corpus.documents.size());
  for (const auto& doc : corpus.documents) {
    std::string text = normalize_text(doc, config);
    if (config.transliterate && !config.diacritic_map.empty())
      text = transliterate_diacritics(text, config.diacritic_map, Direction::forward);
    if (!text.empty()) out.documents.push_back(std::move(text));
  }
  return out;
}

std::pair<RawCorpus, RawCorpus> split_corpus(const RawCorpus& corpus,
                                             double valid_fraction,
                                             std::uint64_t seed) {
  if (corpus.documents.size() < 2)
    throw EmptyCorpus("split requires at least 2 documents");
  if (!(valid_fraction > 0.0 && valid_fraction < 1.0))
    throw ConfigInvalid("valid_fraction must be in (0, 1)");

  const std::size_t n = corpus.documents.size();
  // round half away from zero
  const auto n_valid = static_cast<std::size_t>(
      std::floor(valid_fraction * static_cast<double>(n) + 0.5));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<bool> in_valid(n, false);
  for (std::size_t i = 0; i < n_valid; ++i) in_valid[order[i]] = true;

  RawCorpus train, valid;
  train.source_id = corpus.source_id + "#train";
  valid.source_id = corpus.source_id + "#valid";
  for (std::size_t i = 0; i < n; ++i) {
    (in_valid[i] ? valid : train).documents.push_back(corpus.documents[i]);
  }
  return {std::move(train), std::move(valid)};
}

std::vector<Batch> batchify(const std::vector<TokenId>& ids, int batch_size,
                            int seq_len) {
  if (batch_size < 1) throw ConfigInvalid("batch_size must be >= 1");
  if (seq_len < 2) throw ConfigInvalid("seq_len must be >= 2");

  const std::size_t rows = ids.size() / static_cast<std::size_t>(seq_len);
  const std::size_t n_batches = rows / static_cast<std::size_t>(batch_size);
  std::vector<Batch> batches;
  batches.reserve(n_batches);
  for (std::size_t b = 0; b < n_batches; ++b) {
    Batch batch;
    batch.batch_size = batch_size;
    batch.seq_len = seq_len;
    const std::size_t begin = b * batch_size * seq_len;
    batch.ids.assign(ids.begin() + begin,
                     ids.begin() + begin + static_cast<std::size_t>(batch_size) * seq_len);
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace toklab
