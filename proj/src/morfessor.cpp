#include "toklab/morfessor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "toklab/unicode.hpp"

namespace toklab {

using unicode::append_utf8;
using unicode::decode_utf8;

namespace {

std::u32string to_u32(const std::string& s) {
  std::vector<char32_t> cps = decode_utf8(s);
  return std::u32string(cps.begin(), cps.end());
}

std::string to_utf8(const std::u32string& s) {
  std::string out;
  for (char32_t cp : s) append_utf8(out, cp);
  return out;
}

double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

}  // namespace

CharCostTable CharCostTable::from_corpus(const WordCounts& corpus, bool uniform) {
  CharCostTable table;
  std::map<char32_t, std::int64_t> char_counts;
  std::int64_t end_count = 0;
  for (const auto& [word, count] : corpus) {
    if (count <= 0) throw InvalidStats("word count must be positive: " + word);
    for (char32_t cp : decode_utf8(word)) char_counts[cp] += count;
    end_count += count;
  }
  if (char_counts.empty()) throw EmptyCorpus("no characters to build a cost table from");

  if (uniform) {
    double cost = std::log(static_cast<double>(char_counts.size()) + 1.0);
    for (const auto& [cp, n] : char_counts) table.costs_[cp] = cost;
    table.end_cost_ = cost;
    table.unseen_cost_ = cost;
    return table;
  }

  std::int64_t total = end_count;
  for (const auto& [cp, n] : char_counts) total += n;
  double log_total = std::log(static_cast<double>(total));
  for (const auto& [cp, n] : char_counts)
    table.costs_[cp] = log_total - std::log(static_cast<double>(n));
  table.end_cost_ = log_total - std::log(static_cast<double>(end_count));
  table.unseen_cost_ = std::log(static_cast<double>(total) + 1.0);
  return table;
}

CharCostTable CharCostTable::from_parts(std::map<char32_t, double> costs, double end_cost,
                                        double unseen_cost) {
  CharCostTable table;
  table.costs_ = std::move(costs);
  table.end_cost_ = end_cost;
  table.unseen_cost_ = unseen_cost;
  return table;
}

double CharCostTable::char_cost(char32_t c) const {
  auto it = costs_.find(c);
  return it == costs_.end() ? unseen_cost_ : it->second;
}

double CharCostTable::morph_cost(const std::u32string& morph) const {
  double sum = end_cost_;
  for (char32_t c : morph) sum += char_cost(c);
  return sum;
}

double model_cost(const Lexicon& lexicon, const WordCounts& corpus,
                  const Segmentations& segmentation, const CharCostTable& chars,
                  double corpus_weight) {
  Lexicon expected;
  for (const auto& [word, count] : corpus) {
    auto it = segmentation.find(word);
    if (it == segmentation.end())
      throw InconsistentSegmentation("no segmentation for word: " + word);
    std::string rejoined;
    for (const auto& morph : it->second) {
      expected[morph] += count;
      rejoined += morph;
    }
    if (rejoined != word)
      throw InconsistentSegmentation("segmentation does not rejoin to word: " + word);
  }
  for (const auto& [morph, count] : expected) {
    auto it = lexicon.find(morph);
    if (it == lexicon.end() || it->second != count)
      throw InconsistentSegmentation("lexicon count mismatch for morph: " + morph);
  }
  for (const auto& [morph, count] : lexicon) {
    if (count == 0) continue;
    if (!expected.count(morph))
      throw InconsistentSegmentation("lexicon morph unused by segmentation: " + morph);
  }

  double n = 0.0;
  double s = 0.0;
  double lex = 0.0;
  for (const auto& [morph, count] : expected) {
    n += static_cast<double>(count);
    s += xlogx(static_cast<double>(count));
    lex += chars.morph_cost(to_u32(morph));
  }
  double corpus_cost = n > 0.0 ? n * std::log(n) - s : 0.0;
  return corpus_weight * corpus_cost + lex;
}

double SegmentationModel::cost() const { return current_cost(); }

double SegmentationModel::current_cost() const {
  double corpus_cost = stats_.n > 0.0 ? stats_.n * std::log(stats_.n) - stats_.s : 0.0;
  return config_.corpus_weight * corpus_cost + stats_.lex_sum;
}

void SegmentationModel::attach(const std::u32string& morph, std::int64_t k) {
  std::int64_t& c = counts_[morph];
  if (c > 0) stats_.s -= xlogx(static_cast<double>(c));
  std::int64_t before = c;
  c += k;
  if (c < 0) throw InvalidStats("morph count went negative");
  if (c > 0) stats_.s += xlogx(static_cast<double>(c));
  stats_.n += static_cast<double>(k);
  if (before == 0 && c > 0) stats_.lex_sum += chars_.morph_cost(morph);
  if (before > 0 && c == 0) stats_.lex_sum -= chars_.morph_cost(morph);
  if (c == 0) counts_.erase(morph);
}

void SegmentationModel::detach(const std::u32string& morph, std::int64_t k) {
  attach(morph, -k);
}

std::vector<std::u32string> SegmentationModel::resplit(const std::u32string& word,
                                                       std::int64_t mult) {
  attach(word, mult);
  double best = current_cost();
  detach(word, mult);
  std::size_t best_i = 0;

  for (std::size_t i = 1; i < word.size(); ++i) {
    std::u32string left = word.substr(0, i);
    std::u32string right = word.substr(i);
    attach(left, mult);
    attach(right, mult);
    double c = current_cost();
    detach(left, mult);
    detach(right, mult);
    if (c < best) {
      best = c;
      best_i = i;
    }
  }

  if (best_i == 0) {
    attach(word, mult);
    return {word};
  }
  std::vector<std::u32string> seg = resplit(word.substr(0, best_i), mult);
  std::vector<std::u32string> rest = resplit(word.substr(best_i), mult);
  seg.insert(seg.end(), std::make_move_iterator(rest.begin()),
             std::make_move_iterator(rest.end()));
  return seg;
}

SegmentationModel SegmentationModel::train(const WordCounts& corpus,
                                           const MorfessorConfig& config) {
  if (corpus.empty()) throw EmptyCorpus("cannot train a segmentation model on no words");
  for (const auto& [word, count] : corpus)
    if (word.empty()) throw ConfigInvalid("empty word in corpus");

  SegmentationModel model;
  model.config_ = config;
  model.chars_ = CharCostTable::from_corpus(corpus, config.uniform_char_cost);

  std::vector<std::u32string> words;
  std::vector<std::int64_t> counts;
  words.reserve(corpus.size());
  std::map<std::u32string, std::vector<std::u32string>> segs;
  for (const auto& [word, count] : corpus) {
    std::u32string w = to_u32(word);
    words.push_back(w);
    counts.push_back(count);
    segs[w] = {w};
    model.attach(w, count);
  }
  model.epoch_costs_.push_back(model.current_cost());

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(words.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      const std::u32string& word = words[idx];
      std::int64_t mult = counts[idx];
      std::vector<std::u32string> old_seg = segs[word];

      for (const auto& m : old_seg) model.detach(m, mult);
      std::vector<std::u32string> new_seg = model.resplit(word, mult);
      double cost_new = model.current_cost();
      for (const auto& m : new_seg) model.detach(m, mult);
      for (const auto& m : old_seg) model.attach(m, mult);
      double cost_old = model.current_cost();

      if (cost_new < cost_old) {
        for (const auto& m : old_seg) model.detach(m, mult);
        for (const auto& m : new_seg) model.attach(m, mult);
        segs[word] = std::move(new_seg);
      }
    }
    double prev = model.epoch_costs_.back();
    double now = model.current_cost();
    model.epoch_costs_.push_back(now);
    if (prev - now < config.convergence_epsilon) break;
  }

  for (const auto& [word, seg] : segs) {
    std::vector<std::string> out;
    out.reserve(seg.size());
    for (const auto& m : seg) out.push_back(to_utf8(m));
    model.segmentations_[to_utf8(word)] = std::move(out);
  }
  model.corpus_ = corpus;
  model.tracked_cost_ = model.current_cost();
  return model;
}

std::vector<std::string> SegmentationModel::segment(const std::string& word) const {
  if (word.empty()) return {};
  auto cached = segmentations_.find(word);
  if (cached != segmentations_.end()) return cached->second;

  std::u32string w = to_u32(word);
  std::size_t len = w.size();
  auto piece_cost = [&](const std::u32string& piece) {
    auto it = counts_.find(piece);
    if (it != counts_.end() && it->second > 0)
      return config_.corpus_weight *
             (std::log(stats_.n) - std::log(static_cast<double>(it->second)));
    // A new morph pays for its lexicon entry plus a low-count emission.
    return config_.corpus_weight * std::log(stats_.n + 1.0) + chars_.morph_cost(piece);
  };

  constexpr double kInf = 1e300;
  std::vector<double> best(len + 1, kInf);
  std::vector<std::size_t> parent(len + 1, 0);
  best[0] = 0.0;
  for (std::size_t j = 1; j <= len; ++j) {
    for (std::size_t i = 0; i < j; ++i) {
      if (best[i] >= kInf) continue;
      double cand = best[i] + piece_cost(w.substr(i, j - i));
      if (cand < best[j]) {
        best[j] = cand;
        parent[j] = i;
      }
    }
  }

  std::vector<std::u32string> rev;
  for (std::size_t j = len; j > 0; j = parent[j]) rev.push_back(w.substr(parent[j], j - parent[j]));
  std::vector<std::string> out;
  out.reserve(rev.size());
  for (auto it = rev.rbegin(); it != rev.rend(); ++it) out.push_back(to_utf8(*it));
  return out;
}

Lexicon SegmentationModel::lexicon() const {
  Lexicon out;
  for (const auto& [morph, count] : counts_) out[to_utf8(morph)] = count;
  return out;
}

double SegmentationModel::recompute_cost() const {
  return model_cost(lexicon(), corpus_, segmentations_, chars_, config_.corpus_weight);
}

void SegmentationModel::rebuild_tracked_cost() {
  stats_ = Stats{};
  for (const auto& [morph, count] : counts_) {
    stats_.n += static_cast<double>(count);
    stats_.s += xlogx(static_cast<double>(count));
    stats_.lex_sum += chars_.morph_cost(morph);
  }
  tracked_cost_ = current_cost();
}

std::string SegmentationModel::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = "toklab-morfessor";
  j["version"] = 1;
  j["corpus_weight"] = config_.corpus_weight;
  j["uniform_char_cost"] = config_.uniform_char_cost;

  nlohmann::ordered_json chars = nlohmann::ordered_json::array();
  for (const auto& [cp, cost] : chars_.costs()) {
    std::string key;
    append_utf8(key, cp);
    chars.push_back({key, cost});
  }
  j["char_costs"] = std::move(chars);
  j["end_cost"] = chars_.end_cost();
  j["unseen_cost"] = chars_.unseen_cost();

  nlohmann::ordered_json counts = nlohmann::ordered_json::array();
  for (const auto& [morph, count] : lexicon()) counts.push_back({morph, count});
  j["counts"] = std::move(counts);

  nlohmann::ordered_json segs = nlohmann::ordered_json::object();
  for (const auto& [word, seg] : segmentations_) segs[word] = seg;
  j["segmentations"] = std::move(segs);

  nlohmann::ordered_json corpus = nlohmann::ordered_json::array();
  for (const auto& [word, count] : corpus_) corpus.push_back({word, count});
  j["corpus"] = std::move(corpus);
  j["epoch_costs"] = epoch_costs_;
  return j.dump(2);
}

SegmentationModel SegmentationModel::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("segmentation model JSON: ") + e.what());
  }
  if (j.value("format", "") != "toklab-morfessor")
    throw ParseError("not a segmentation model file");

  SegmentationModel model;
  model.config_.corpus_weight = j.at("corpus_weight").get<double>();
  model.config_.uniform_char_cost = j.value("uniform_char_cost", false);

  std::map<char32_t, double> char_costs;
  for (const auto& entry : j.at("char_costs")) {
    std::vector<char32_t> cps = decode_utf8(entry.at(0).get<std::string>());
    if (cps.size() != 1) throw ParseError("char cost key must be one character");
    char_costs[cps[0]] = entry.at(1).get<double>();
  }
  model.chars_ = CharCostTable::from_parts(std::move(char_costs), j.at("end_cost").get<double>(),
                                           j.at("unseen_cost").get<double>());

  for (const auto& entry : j.at("counts"))
    model.counts_[to_u32(entry.at(0).get<std::string>())] = entry.at(1).get<std::int64_t>();
  for (const auto& [word, seg] : j.at("segmentations").items())
    model.segmentations_[word] = seg.get<std::vector<std::string>>();
  for (const auto& entry : j.at("corpus"))
    model.corpus_[entry.at(0).get<std::string>()] = entry.at(1).get<std::int64_t>();
  if (j.contains("epoch_costs"))
    model.epoch_costs_ = j.at("epoch_costs").get<std::vector<double>>();
  model.rebuild_tracked_cost();
  return model;
}

std::string morphemize_line(const std::string& line, const SegmentationModel& model) {
  std::string out;
  bool first_word = true;
  std::size_t i = 0;
  while (i < line.size()) {
    std::size_t j = line.find(' ', i);
    if (j == std::string::npos) j = line.size();
    if (j > i) {
      std::string word = line.substr(i, j - i);
      if (word == kMorphemeMarker)
        throw MarkerCollision("input word equals the morph separator \"*\"");
      if (!first_word) out += " * ";
      std::vector<std::string> morphs = model.segment(word);
      for (std::size_t m = 0; m < morphs.size(); ++m) {
        if (m) out += ' ';
        out += morphs[m];
      }
      first_word = false;
    }
    i = j + 1;
  }
  return out;
}

RawCorpus morphemize_corpus(const RawCorpus& corpus, const SegmentationModel& model) {
  RawCorpus out;
  out.source_id = corpus.source_id;
  out.documents.reserve(corpus.documents.size());
  for (const auto& doc : corpus.documents) out.documents.push_back(morphemize_line(doc, model));
  return out;
}

std::string demorphemize(const std::string& text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i <= text.size()) {
    std::size_t j = text.find(' ', i);
    if (j == std::string::npos) j = text.size();
    if (j > i) tokens.push_back(text.substr(i, j - i));
    if (j == text.size()) break;
    i = j + 1;
  }

  std::vector<std::string> words;
  std::string cur;
  for (const auto& tok : tokens) {
    if (tok == kMorphemeMarker) {
      words.push_back(cur);
      cur.clear();
    } else {
      cur += tok;
    }
  }
  if (!tokens.empty()) words.push_back(cur);

  std::string out;
  for (std::size_t k = 0; k < words.size(); ++k) {
    if (k) out += ' ';
    out += words[k];
  }
  return out;
}

}  // namespace toklab
