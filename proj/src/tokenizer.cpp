#include "toklab/tokenizer.hpp"

#include <omp.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "toklab/unicode.hpp"

namespace toklab {

using unicode::append_utf8;
using unicode::decode_utf8;

namespace {

const char* kSchemeNames[] = {"word",     "wordpiece", "char_bpe",
                              "byte_bpe", "morpheme",  "morpheme_byte_bpe"};

std::vector<std::string> split_on_space(const std::string& text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t j = text.find(' ', i);
    if (j == std::string::npos) j = text.size();
    if (j > i) words.push_back(text.substr(i, j - i));
    i = j + 1;
  }
  return words;
}

// Count of distinct pretokenized units, keyed by their joined string so the
// symbol decomposition is derived once per unit.
struct UnitCounts {
  std::unordered_map<std::string, std::int64_t> counts;
  std::unordered_map<std::string, SymbolSeq> reps;

  void add(SymbolSeq unit) {
    std::string key;
    for (const auto& sym : unit) key += sym;
    auto it = counts.find(key);
    if (it == counts.end()) {
      counts.emplace(key, 1);
      reps.emplace(std::move(key), std::move(unit));
    } else {
      ++it->second;
    }
  }

  SymbolCorpus to_corpus() const {
    // Sorted by key so trainer input order is reproducible.
    std::map<std::string, std::int64_t> ordered(counts.begin(), counts.end());
    SymbolCorpus corpus;
    corpus.words.reserve(ordered.size());
    corpus.counts.reserve(ordered.size());
    for (const auto& [key, count] : ordered) {
      corpus.words.push_back(reps.at(key));
      corpus.counts.push_back(count);
    }
    return corpus;
  }
};

std::map<std::string, std::int64_t> count_words(const RawCorpus& corpus) {
  std::map<std::string, std::int64_t> counts;
  for (const auto& doc : corpus.documents)
    for (const auto& word : split_on_space(doc)) ++counts[word];
  return counts;
}

// Top-k selection by count (descending), then token (ascending).
std::vector<std::string> top_tokens(const std::map<std::string, std::int64_t>& counts,
                                    std::size_t k) {
  std::vector<std::pair<std::string, std::int64_t>> items(counts.begin(), counts.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> out;
  out.reserve(std::min(k, items.size()));
  for (const auto& [token, count] : items) {
    if (out.size() >= k) break;
    out.push_back(token);
  }
  return out;
}

std::vector<std::string> sorted_alphabet(const SymbolCorpus& corpus) {
  std::map<std::string, int> seen;
  for (const auto& word : corpus.words)
    for (const auto& sym : word) seen[sym] = 1;
  std::vector<std::string> out;
  out.reserve(seen.size());
  for (const auto& [sym, flag] : seen) out.push_back(sym);
  return out;
}

void require_budget(std::size_t vocab_size, std::size_t needed, const char* what) {
  if (vocab_size < needed)
    throw VocabBudgetTooSmall(std::string(what) + " needs a vocabulary budget of at least " +
                              std::to_string(needed) + ", got " + std::to_string(vocab_size));
}

}  // namespace

const char* scheme_name(Scheme scheme) {
  return kSchemeNames[static_cast<int>(scheme)];
}

Scheme scheme_from_name(const std::string& name) {
  for (int i = 0; i < 6; ++i)
    if (name == kSchemeNames[i]) return static_cast<Scheme>(i);
  throw ConfigInvalid("unknown tokenizer scheme: " + name);
}

std::vector<Scheme> all_schemes() {
  return {Scheme::word,     Scheme::wordpiece, Scheme::char_bpe,
          Scheme::byte_bpe, Scheme::morpheme,  Scheme::morpheme_byte_bpe};
}

Tokenizer Tokenizer::train(Scheme scheme, const RawCorpus& corpus,
                           const TokenizerTrainConfig& config) {
  config.preprocess.validate();
  if (corpus.documents.empty()) throw EmptyCorpus("cannot train a tokenizer on no documents");

  const SpecialTokens& sp = config.specials;
  if (sp.unk.empty() || sp.num.empty() || sp.pad.empty() || sp.unk == sp.num ||
      sp.unk == sp.pad || sp.num == sp.pad)
    throw ConfigInvalid("special tokens must be non-empty and distinct");
  require_budget(config.vocab_size, 3, "any scheme");

  Tokenizer tok;
  tok.scheme_ = scheme;
  tok.specials_ = sp;
  tok.preprocess_ = config.preprocess;
  tok.space_marker_ = config.space_marker;
  tok.continuation_prefix_ = config.continuation_prefix;

  RawCorpus norm = normalize_corpus(corpus, config.preprocess);
  if (norm.documents.empty()) throw EmptyCorpus("corpus is empty after preprocessing");

  auto is_special = [&sp](const std::string& w) {
    return w == sp.unk || w == sp.num || w == sp.pad;
  };
  tok.vocab_.add(sp.unk);
  tok.vocab_.add(sp.num);
  tok.vocab_.add(sp.pad);

  switch (scheme) {
    case Scheme::word: {
      std::map<std::string, std::int64_t> counts = count_words(norm);
      for (const auto& s : {sp.unk, sp.num, sp.pad}) counts.erase(s);
      for (const auto& token : top_tokens(counts, config.vocab_size - 3))
        tok.vocab_.add(token);
      break;
    }
    case Scheme::wordpiece: {
      std::map<std::string, std::int64_t> counts = count_words(norm);
      for (const auto& s : {sp.unk, sp.num, sp.pad}) counts.erase(s);
      SymbolCorpus sc;
      for (const auto& [word, count] : counts) {
        sc.words.push_back(wordpiece_initial_split(word, config.continuation_prefix));
        sc.counts.push_back(count);
      }
      std::vector<std::string> alphabet = sorted_alphabet(sc);
      require_budget(config.vocab_size, 3 + alphabet.size(), "wordpiece");
      for (const auto& sym : alphabet) tok.vocab_.add(sym);
      std::size_t n_merges = config.vocab_size - 3 - alphabet.size();
      tok.merges_ = train_wordpiece_merges(sc, n_merges, config.continuation_prefix);
      for (const auto& rule : tok.merges_)
        tok.vocab_.add(wordpiece_join(rule, config.continuation_prefix));
      break;
    }
    case Scheme::char_bpe: {
      UnitCounts units;
      for (const auto& doc : norm.documents)
        for (auto& unit : char_pretokenize(doc, config.space_marker)) units.add(std::move(unit));
      SymbolCorpus sc = units.to_corpus();
      std::vector<std::string> alphabet = sorted_alphabet(sc);
      // Characters absent from the training corpus are encoded as their raw
      // UTF-8 bytes, so the 256 single-byte symbols are always seeded; this
      // keeps decode(encode(x)) = x for every input instead of only for
      // inputs whose characters were seen during training.
      std::set<std::string> base(alphabet.begin(), alphabet.end());
      for (int b = 0; b < 256; ++b) base.insert(std::string(1, static_cast<char>(b)));
      require_budget(config.vocab_size, 3 + base.size(), "char_bpe");
      for (const auto& sym : base) tok.vocab_.add(sym);
      std::size_t n_merges = config.vocab_size - 3 - base.size();
      tok.merges_ = train_bpe_merges(sc, n_merges);
      for (const auto& rule : tok.merges_) tok.vocab_.add(rule.left + rule.right);
      break;
    }
    case Scheme::byte_bpe: {
      UnitCounts units;
      for (const auto& doc : norm.documents)
        for (auto& unit : byte_pretokenize(doc)) units.add(std::move(unit));
      SymbolCorpus sc = units.to_corpus();
      require_budget(config.vocab_size, 3 + 256, "byte_bpe");
      for (int b = 0; b < 256; ++b) tok.vocab_.add(std::string(1, static_cast<char>(b)));
      std::size_t n_merges = config.vocab_size - 3 - 256;
      tok.merges_ = train_bpe_merges(sc, n_merges);
      for (const auto& rule : tok.merges_) tok.vocab_.add(rule.left + rule.right);
      break;
    }
    case Scheme::morpheme: {
      std::map<std::string, std::int64_t> word_counts = count_words(norm);
      for (const auto& s : {sp.unk, sp.num, sp.pad}) word_counts.erase(s);
      if (word_counts.empty()) throw EmptyCorpus("no words to train a segmenter on");
      WordCounts wc(word_counts.begin(), word_counts.end());
      tok.segmenter_ = std::make_shared<SegmentationModel>(
          SegmentationModel::train(wc, config.morfessor));

      // Morph token counts over the morphemized corpus; specials stay atomic.
      std::map<std::string, std::int64_t> morph_counts;
      for (const auto& doc : norm.documents) {
        std::vector<std::string> words = split_on_space(doc);
        for (std::size_t i = 0; i < words.size(); ++i) {
          if (is_special(words[i])) continue;
          for (const auto& morph : tok.segmenter_->segment(words[i])) ++morph_counts[morph];
        }
      }
      morph_counts.erase(kMorphemeMarker);
      for (const auto& s : {sp.unk, sp.num, sp.pad}) morph_counts.erase(s);
      // The separator must always be encodable or decoded word boundaries
      // are lost, so it is seated before the frequency-ranked morphs.
      require_budget(config.vocab_size, 4, "morpheme");
      tok.vocab_.add(kMorphemeMarker);
      for (const auto& token : top_tokens(morph_counts, config.vocab_size - 4))
        tok.vocab_.add(token);
      break;
    }
    case Scheme::morpheme_byte_bpe: {
      std::map<std::string, std::int64_t> word_counts = count_words(norm);
      if (word_counts.empty()) throw EmptyCorpus("no words to train a segmenter on");
      WordCounts wc(word_counts.begin(), word_counts.end());
      tok.segmenter_ = std::make_shared<SegmentationModel>(
          SegmentationModel::train(wc, config.morfessor));

      RawCorpus morphed = morphemize_corpus(norm, *tok.segmenter_);
      UnitCounts units;
      for (const auto& doc : morphed.documents)
        for (auto& unit : byte_pretokenize(doc)) units.add(std::move(unit));
      SymbolCorpus sc = units.to_corpus();
      require_budget(config.vocab_size, 3 + 256, "morpheme_byte_bpe");
      for (int b = 0; b < 256; ++b) tok.vocab_.add(std::string(1, static_cast<char>(b)));
      std::size_t n_merges = config.vocab_size - 3 - 256;
      tok.merges_ = train_bpe_merges(sc, n_merges);
      for (const auto& rule : tok.merges_) tok.vocab_.add(rule.left + rule.right);
      break;
    }
  }

  tok.finalize();
  return tok;
}

void Tokenizer::finalize() {
  auto must_id = [this](const std::string& token) {
    auto id = vocab_.id(token);
    if (!id) throw ConfigInvalid("special token missing from vocabulary: " + token);
    return *id;
  };
  unk_id_ = must_id(specials_.unk);
  num_id_ = must_id(specials_.num);
  pad_id_ = must_id(specials_.pad);
  applier_ = std::make_unique<MergeApplier>(merges_);
  vocab_set_.clear();
  for (const auto& token : vocab_.tokens()) vocab_set_.insert(token);
}

std::string Tokenizer::normalize(const std::string& text) const {
  std::string norm = normalize_text(text, preprocess_);
  if (preprocess_.transliterate)
    norm = transliterate_diacritics(norm, preprocess_.diacritic_map, Direction::forward);
  return norm;
}

std::vector<TokenId> Tokenizer::encode(const std::string& text) const {
  std::string norm = normalize(text);
  std::vector<TokenId> ids;

  auto lookup = [this](const std::string& token) {
    auto id = vocab_.id(token);
    return id ? *id : unk_id_;
  };
  auto is_special = [this](const std::string& w) {
    return w == specials_.unk || w == specials_.num || w == specials_.pad;
  };

  switch (scheme_) {
    case Scheme::word: {
      for (const auto& word : split_on_space(norm)) ids.push_back(lookup(word));
      break;
    }
    case Scheme::wordpiece: {
      for (const auto& word : split_on_space(norm)) {
        if (is_special(word)) {
          ids.push_back(lookup(word));
          continue;
        }
        if (decode_utf8(word).size() > kMaxWordpieceWordLen) {
          ids.push_back(unk_id_);
          continue;
        }
        std::vector<std::string> pieces =
            wordpiece_encode(vocab_set_, word, continuation_prefix_);
        if (pieces.empty()) {
          ids.push_back(unk_id_);
        } else {
          for (const auto& piece : pieces) ids.push_back(lookup(piece));
        }
      }
      break;
    }
    case Scheme::char_bpe: {
      for (const auto& unit : char_pretokenize(norm, space_marker_))
        for (const auto& sym : applier_->apply(unit)) {
          if (auto id = vocab_.id(sym)) {
            ids.push_back(*id);
          } else {
            // Unseen character: fall back to its raw bytes, which are always
            // in the vocabulary and concatenate back to the exact symbol.
            for (char c : sym) ids.push_back(lookup(std::string(1, c)));
          }
        }
      break;
    }
    case Scheme::byte_bpe: {
      for (const auto& unit : byte_pretokenize(norm))
        for (const auto& sym : applier_->apply(unit)) ids.push_back(lookup(sym));
      break;
    }
    case Scheme::morpheme: {
      std::vector<std::string> words = split_on_space(norm);
      TokenId marker_id = lookup(kMorphemeMarker);
      for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) ids.push_back(marker_id);
        if (words[i] == kMorphemeMarker)
          throw MarkerCollision("input word equals the morph separator \"*\"");
        if (is_special(words[i])) {
          ids.push_back(lookup(words[i]));
          continue;
        }
        for (const auto& morph : segmenter_->segment(words[i])) ids.push_back(lookup(morph));
      }
      break;
    }
    case Scheme::morpheme_byte_bpe: {
      std::string morphed = morphemize_line(norm, *segmenter_);
      for (const auto& unit : byte_pretokenize(morphed))
        for (const auto& sym : applier_->apply(unit)) ids.push_back(lookup(sym));
      break;
    }
  }
  return ids;
}

std::vector<std::string> Tokenizer::encode_tokens(const std::string& text) const {
  std::vector<std::string> tokens;
  for (TokenId id : encode(text)) tokens.push_back(vocab_.token(id));
  return tokens;
}

std::string Tokenizer::decode(const std::vector<TokenId>& ids) const {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (TokenId id : ids) tokens.push_back(vocab_.token(id));

  switch (scheme_) {
    case Scheme::word: {
      std::string out;
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
      }
      return out;
    }
    case Scheme::wordpiece: {
      std::string out;
      for (const auto& token : tokens) {
        bool cont = !continuation_prefix_.empty() &&
                    token.size() >= continuation_prefix_.size() &&
                    token.compare(0, continuation_prefix_.size(), continuation_prefix_) == 0;
        if (cont) {
          out += token.substr(continuation_prefix_.size());
        } else {
          if (!out.empty()) out += ' ';
          out += token;
        }
      }
      return out;
    }
    case Scheme::char_bpe: {
      std::string joined;
      for (const auto& token : tokens) joined += token;
      std::string out;
      std::size_t i = 0;
      while (i < joined.size()) {
        if (joined.compare(i, space_marker_.size(), space_marker_) == 0) {
          out += ' ';
          i += space_marker_.size();
        } else {
          out += joined[i];
          ++i;
        }
      }
      if (!out.empty() && out.front() == ' ') out.erase(out.begin());
      return out;
    }
    case Scheme::byte_bpe: {
      std::string out;
      for (const auto& token : tokens) out += token;
      return out;
    }
    case Scheme::morpheme: {
      std::string joined;
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) joined += ' ';
        joined += tokens[i];
      }
      return demorphemize(joined);
    }
    case Scheme::morpheme_byte_bpe: {
      std::string joined;
      for (const auto& token : tokens) joined += token;
      return demorphemize(joined);
    }
  }
  return {};
}

namespace {

bool scheme_uses_byte_symbols(Scheme scheme) {
  return scheme == Scheme::char_bpe || scheme == Scheme::byte_bpe ||
         scheme == Scheme::morpheme_byte_bpe;
}

}  // namespace

std::string Tokenizer::to_json() const {
  bool bytes = scheme_uses_byte_symbols(scheme_);
  nlohmann::ordered_json j;
  j["format"] = "toklab-tokenizer";
  j["version"] = 1;
  j["scheme"] = scheme_name(scheme_);
  j["specials"] = {{"unk", specials_.unk}, {"num", specials_.num}, {"pad", specials_.pad}};
  j["markers"] = {{"space_marker", space_marker_},
                  {"continuation_prefix", continuation_prefix_},
                  {"morph_marker", kMorphemeMarker}};

  nlohmann::ordered_json pp;
  pp["num_token"] = preprocess_.num_token;
  pp["unk_token"] = preprocess_.unk_token;
  pp["collapse_digits"] = preprocess_.collapse_digits;
  pp["unicode_nfc"] = preprocess_.unicode_nfc;
  pp["transliterate"] = preprocess_.transliterate;
  nlohmann::ordered_json dmap = nlohmann::ordered_json::array();
  for (const auto& [from, to] : preprocess_.diacritic_map) {
    std::string f, t;
    append_utf8(f, from);
    append_utf8(t, to);
    dmap.push_back({f, t});
  }
  pp["diacritic_map"] = std::move(dmap);
  j["preprocess"] = std::move(pp);

  nlohmann::ordered_json vocab = nlohmann::ordered_json::array();
  const auto& tokens = vocab_.tokens();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (bytes && i >= 3)
      vocab.push_back(byte_symbol_to_printable(tokens[i]));
    else
      vocab.push_back(tokens[i]);
  }
  j["vocab"] = std::move(vocab);

  nlohmann::ordered_json merges = nlohmann::ordered_json::array();
  for (const auto& rule : merges_) {
    if (bytes)
      merges.push_back({byte_symbol_to_printable(rule.left), byte_symbol_to_printable(rule.right)});
    else
      merges.push_back({rule.left, rule.right});
  }
  j["merges"] = std::move(merges);

  if (segmenter_)
    j["segmenter"] = nlohmann::ordered_json::parse(segmenter_->to_json());
  else
    j["segmenter"] = nullptr;
  return j.dump(2);
}

Tokenizer Tokenizer::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("tokenizer JSON: ") + e.what());
  }
  if (j.value("format", "") != "toklab-tokenizer") throw ParseError("not a tokenizer file");

  Tokenizer tok;
  tok.scheme_ = scheme_from_name(j.at("scheme").get<std::string>());
  bool bytes = scheme_uses_byte_symbols(tok.scheme_);

  const auto& sp = j.at("specials");
  tok.specials_.unk = sp.at("unk").get<std::string>();
  tok.specials_.num = sp.at("num").get<std::string>();
  tok.specials_.pad = sp.at("pad").get<std::string>();

  const auto& mk = j.at("markers");
  tok.space_marker_ = mk.at("space_marker").get<std::string>();
  tok.continuation_prefix_ = mk.at("continuation_prefix").get<std::string>();

  const auto& pp = j.at("preprocess");
  tok.preprocess_.num_token = pp.at("num_token").get<std::string>();
  tok.preprocess_.unk_token = pp.at("unk_token").get<std::string>();
  tok.preprocess_.collapse_digits = pp.at("collapse_digits").get<bool>();
  tok.preprocess_.unicode_nfc = pp.at("unicode_nfc").get<bool>();
  tok.preprocess_.transliterate = pp.at("transliterate").get<bool>();
  for (const auto& entry : pp.at("diacritic_map")) {
    std::vector<char32_t> f = decode_utf8(entry.at(0).get<std::string>());
    std::vector<char32_t> t = decode_utf8(entry.at(1).get<std::string>());
    if (f.size() != 1 || t.size() != 1)
      throw ParseError("diacritic map entries must be single characters");
    tok.preprocess_.diacritic_map[f[0]] = t[0];
  }

  std::size_t index = 0;
  for (const auto& entry : j.at("vocab")) {
    std::string token = entry.get<std::string>();
    if (bytes && index >= 3) token = printable_to_byte_symbol(token);
    TokenId id = tok.vocab_.add(token);
    if (static_cast<std::size_t>(id) != index)
      throw ParseError("duplicate vocabulary entry: " + entry.get<std::string>());
    ++index;
  }

  for (const auto& entry : j.at("merges")) {
    MergeRule rule{entry.at(0).get<std::string>(), entry.at(1).get<std::string>()};
    if (bytes) {
      rule.left = printable_to_byte_symbol(rule.left);
      rule.right = printable_to_byte_symbol(rule.right);
    }
    tok.merges_.push_back(std::move(rule));
  }

  if (!j.at("segmenter").is_null())
    tok.segmenter_ =
        std::make_shared<SegmentationModel>(SegmentationModel::from_json(j.at("segmenter").dump()));

  tok.finalize();
  return tok;
}

void Tokenizer::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOFailure("cannot open for writing: " + path);
  out << to_json() << '\n';
  if (!out) throw IOFailure("write failed: " + path);
}

Tokenizer Tokenizer::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOFailure("cannot open for reading: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

std::int64_t corpus_token_count(const Tokenizer& tokenizer, const RawCorpus& corpus) {
  std::int64_t total = 0;
  const auto& docs = corpus.documents;
#pragma omp parallel for schedule(static) reduction(+ : total)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(docs.size()); ++i)
    total += static_cast<std::int64_t>(tokenizer.encode(docs[static_cast<std::size_t>(i)]).size());
  return total;
}

std::vector<TokenId> encode_corpus(const Tokenizer& tokenizer, const RawCorpus& corpus) {
  std::vector<TokenId> ids;
  for (const auto& doc : corpus.documents) {
    std::vector<TokenId> doc_ids = tokenizer.encode(doc);
    ids.insert(ids.end(), doc_ids.begin(), doc_ids.end());
  }
  return ids;
}

}  // namespace toklab
