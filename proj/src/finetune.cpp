#include "toklab/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

namespace toklab {

using json = nlohmann::ordered_json;
using lm::Backend;
using Index = lm::kernels::Index;

// ---------------------------------------------------------------------------
// Pure helpers
// ---------------------------------------------------------------------------

const char* truncate_mode_name(TruncateMode mode) {
  return mode == TruncateMode::begin ? "begin" : "end";
}

TruncateMode truncate_mode_from_name(const std::string& name) {
  if (name == "begin") return TruncateMode::begin;
  if (name == "end") return TruncateMode::end;
  throw ConfigInvalid("unknown truncate mode '" + name +
                      "' (expected 'begin' or 'end')");
}

std::vector<std::pair<std::vector<std::string>, std::string>>
decompose_sequence(const std::vector<std::string>& tokens,
                   const std::vector<std::string>& tags) {
  if (tokens.size() != tags.size())
    throw LengthMismatch("decompose_sequence: " +
                         std::to_string(tokens.size()) + " tokens vs " +
                         std::to_string(tags.size()) + " tags");
  std::vector<std::pair<std::vector<std::string>, std::string>> out;
  out.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i)
    out.emplace_back(
        std::vector<std::string>(tokens.begin(),
                                 tokens.begin() + static_cast<std::ptrdiff_t>(i) + 1),
        tags[i]);
  return out;
}

namespace {

struct ClassCounts {
  std::vector<std::int64_t> tp, fp, fn;
};

ClassCounts confusion_counts(const std::vector<int>& preds,
                             const std::vector<int>& golds, int n_classes,
                             const char* caller) {
  if (preds.size() != golds.size() || preds.empty())
    throw LengthMismatch(std::string(caller) + ": " +
                         std::to_string(preds.size()) + " predictions vs " +
                         std::to_string(golds.size()) + " golds");
  if (n_classes < 1)
    throw ConfigInvalid(std::string(caller) + ": n_classes must be positive");
  ClassCounts c;
  c.tp.assign(static_cast<std::size_t>(n_classes), 0);
  c.fp.assign(static_cast<std::size_t>(n_classes), 0);
  c.fn.assign(static_cast<std::size_t>(n_classes), 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int p = preds[i], g = golds[i];
    if (p < 0 || p >= n_classes || g < 0 || g >= n_classes)
      throw ConfigInvalid(std::string(caller) + ": label outside [0, " +
                          std::to_string(n_classes) + ") at index " +
                          std::to_string(i));
    if (p == g) {
      ++c.tp[static_cast<std::size_t>(p)];
    } else {
      ++c.fp[static_cast<std::size_t>(p)];
      ++c.fn[static_cast<std::size_t>(g)];
    }
  }
  return c;
}

double f1_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
  const double denom_p = static_cast<double>(tp + fp);
  const double denom_r = static_cast<double>(tp + fn);
  const double precision = denom_p > 0 ? static_cast<double>(tp) / denom_p : 0.0;
  const double recall = denom_r > 0 ? static_cast<double>(tp) / denom_r : 0.0;
  const double denom = precision + recall;
  return denom > 0 ? 2.0 * precision * recall / denom : 0.0;
}

}  // namespace

std::vector<double> per_class_f1(const std::vector<int>& preds,
                                 const std::vector<int>& golds,
                                 int n_classes) {
  const ClassCounts c = confusion_counts(preds, golds, n_classes, "per_class_f1");
  std::vector<double> out(static_cast<std::size_t>(n_classes), 0.0);
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = f1_from_counts(c.tp[k], c.fp[k], c.fn[k]);
  return out;
}

double macro_f1(const std::vector<int>& preds, const std::vector<int>& golds,
                int n_classes) {
  const ClassCounts c = confusion_counts(preds, golds, n_classes, "macro_f1");
  // A class that never occurs in either list carries no signal and is left
  // out of the mean; a class that occurs but is never correct contributes 0.
  double sum = 0.0;
  std::int64_t present = 0;
  for (std::size_t k = 0; k < c.tp.size(); ++k) {
    if (c.tp[k] + c.fp[k] + c.fn[k] == 0) continue;
    sum += f1_from_counts(c.tp[k], c.fp[k], c.fn[k]);
    ++present;
  }
  return present > 0 ? sum / static_cast<double>(present) : 0.0;
}

// ---------------------------------------------------------------------------
// Representations
// ---------------------------------------------------------------------------

namespace {

// Rows [start, start + bn) padded to the group's longest row; pad positions
// sit after each row's last real token, where causal attention cannot see
// them, so any in-vocabulary id works as padding.
Batch make_padded_batch(const std::vector<std::vector<TokenId>>& rows,
                        std::size_t start, int bn) {
  int tmax = 0;
  for (int i = 0; i < bn; ++i) {
    const auto& row = rows[start + static_cast<std::size_t>(i)];
    if (row.empty())
      throw EmptySequence("extract_representations: row " +
                          std::to_string(start + static_cast<std::size_t>(i)) +
                          " is empty");
    tmax = std::max(tmax, static_cast<int>(row.size()));
  }
  Batch batch;
  batch.batch_size = bn;
  batch.seq_len = tmax;
  batch.ids.assign(static_cast<std::size_t>(bn) * tmax, 0);
  for (int i = 0; i < bn; ++i) {
    const auto& row = rows[start + static_cast<std::size_t>(i)];
    std::copy(row.begin(), row.end(),
              batch.ids.begin() + static_cast<std::ptrdiff_t>(i) * tmax);
  }
  return batch;
}

}  // namespace

template <typename T>
std::vector<T> extract_representations(
    lm::Transformer<T>& model, const std::vector<std::vector<TokenId>>& rows,
    Index batch_rows) {
  if (batch_rows < 1)
    throw ConfigInvalid("extract_representations: batch_rows must be positive");
  const Index e = model.config().emsize;
  std::vector<T> out(rows.size() * static_cast<std::size_t>(e));
  for (std::size_t start = 0; start < rows.size();
       start += static_cast<std::size_t>(batch_rows)) {
    const int bn = static_cast<int>(
        std::min<std::size_t>(static_cast<std::size_t>(batch_rows),
                              rows.size() - start));
    const Batch batch = make_padded_batch(rows, start, bn);
    model.forward(batch, /*train=*/false, /*dropout_key=*/0);
    const std::vector<T>& h = model.hidden();
    for (int i = 0; i < bn; ++i) {
      const std::size_t len = rows[start + static_cast<std::size_t>(i)].size();
      const T* src = h.data() +
                     (static_cast<std::size_t>(i) * batch.seq_len + len - 1) *
                         static_cast<std::size_t>(e);
      std::copy(src, src + e,
                out.begin() +
                    static_cast<std::ptrdiff_t>((start + static_cast<std::size_t>(i)) *
                                                static_cast<std::size_t>(e)));
    }
  }
  return out;
}

template <typename T>
std::vector<T> extract_representation(lm::Transformer<T>& model,
                                      const std::vector<TokenId>& ids) {
  if (ids.empty())
    throw EmptySequence("extract_representation: empty id sequence");
  return extract_representations(model, {ids}, 1);
}

// ---------------------------------------------------------------------------
// Classification head
// ---------------------------------------------------------------------------

void HeadConfig::validate() const {
  if (input_dim < 1) throw ConfigInvalid("head: input_dim must be positive");
  if (hidden_dim < 1) throw ConfigInvalid("head: hidden_dim must be positive");
  if (n_classes < 2)
    throw ConfigInvalid("head: n_classes must be at least 2");
}

template <typename T>
MlpHead<T>::MlpHead(HeadConfig config, Backend backend)
    : config_(config), backend_(backend) {
  config_.validate();
  const Index d = config_.input_dim, h = config_.hidden_dim,
              c = config_.n_classes;
  w1_ = 0;
  b1_ = w1_ + d * h;
  w2_ = b1_ + h;
  b2_ = w2_ + h * c;
  total_ = b2_ + c;
  params_.assign(static_cast<std::size_t>(total_), T(0));
  grads_.assign(static_cast<std::size_t>(total_), T(0));
}

template <typename T>
void MlpHead<T>::init_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.02);
  for (Index i = w1_; i < b1_; ++i) params_[static_cast<std::size_t>(i)] = static_cast<T>(dist(rng));
  for (Index i = b1_; i < w2_; ++i) params_[static_cast<std::size_t>(i)] = T(0);
  for (Index i = w2_; i < b2_; ++i) params_[static_cast<std::size_t>(i)] = static_cast<T>(dist(rng));
  for (Index i = b2_; i < total_; ++i) params_[static_cast<std::size_t>(i)] = T(0);
}

template <typename T>
void MlpHead<T>::zero_grads() {
  std::fill(grads_.begin(), grads_.end(), T(0));
}

template <typename T>
void MlpHead<T>::ensure_scratch(Index n) {
  if (n == scratch_rows_ && !z1_.empty()) return;
  const std::size_t nh = static_cast<std::size_t>(n) *
                         static_cast<std::size_t>(config_.hidden_dim);
  const std::size_t nc = static_cast<std::size_t>(n) *
                         static_cast<std::size_t>(config_.n_classes);
  z1_.assign(nh, T(0));
  a1_.assign(nh, T(0));
  da1_.assign(nh, T(0));
  logits_.assign(nc, T(0));
  dlogits_.assign(nc, T(0));
  row_nll_.assign(static_cast<std::size_t>(n), 0.0);
  scratch_rows_ = n;
}

template <typename T>
void MlpHead<T>::forward_rows(const T* features, Index n) {
  if (n < 1) throw EmptySequence("head: no feature rows");
  ensure_scratch(n);
  const Index d = config_.input_dim, h = config_.hidden_dim,
              c = config_.n_classes;
  lm::kernels::linear_forward(backend_, features, params_.data() + w1_,
                              params_.data() + b1_, z1_.data(), n, d, h);
  lm::kernels::relu_forward(backend_, z1_.data(), a1_.data(), n * h);
  lm::kernels::linear_forward(backend_, a1_.data(), params_.data() + w2_,
                              params_.data() + b2_, logits_.data(), n, h, c);
}

template <typename T>
std::vector<T> MlpHead<T>::logits(const T* features, Index n) {
  forward_rows(features, n);
  return logits_;
}

template <typename T>
std::vector<std::int32_t> MlpHead<T>::predict(const T* features, Index n) {
  forward_rows(features, n);
  const Index c = config_.n_classes;
  std::vector<std::int32_t> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const T* row = logits_.data() + i * c;
    Index best = 0;
    for (Index k = 1; k < c; ++k)
      if (row[k] > row[best]) best = k;
    out[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(best);
  }
  return out;
}

template <typename T>
double MlpHead<T>::loss_and_grad(const T* features,
                                 const std::int32_t* labels, Index n,
                                 T* dfeatures) {
  if (n < 1) throw EmptySequence("head: no feature rows");
  const Index c = config_.n_classes;
  for (Index i = 0; i < n; ++i)
    if (labels[i] < 0 || labels[i] >= c)
      throw ConfigInvalid("head: label " + std::to_string(labels[i]) +
                          " outside [0, " + std::to_string(c) + ")");
  forward_rows(features, n);  // fills z1_, a1_, logits_
  const Index d = config_.input_dim, h = config_.hidden_dim;
  const double nll_sum = lm::kernels::softmax_xent(
      backend_, logits_.data(), labels, dlogits_.data(), row_nll_.data(), n, c,
      1.0 / static_cast<double>(n));
  lm::kernels::linear_backward(backend_, a1_.data(), params_.data() + w2_,
                               dlogits_.data(), da1_.data(),
                               grads_.data() + w2_, grads_.data() + b2_, n, h,
                               c);
  lm::kernels::relu_backward(backend_, z1_.data(), da1_.data(), da1_.data(),
                             n * h);
  lm::kernels::linear_backward(backend_, features, params_.data() + w1_,
                               da1_.data(), dfeatures, grads_.data() + w1_,
                               grads_.data() + b1_, n, d, h);
  return nll_sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Finetuning driver
// ---------------------------------------------------------------------------

void FinetuneConfig::validate() const {
  if (epochs < 1) throw ConfigInvalid("finetune: epochs must be at least 1");
  if (batch_size < 1)
    throw ConfigInvalid("finetune: batch_size must be positive");
  if (hidden_dim < 1)
    throw ConfigInvalid("finetune: hidden_dim must be positive");
  if (!(learning_rate > 0))
    throw ConfigInvalid("finetune: learning_rate must be positive");
  if (!(valid_fraction > 0.0) || !(valid_fraction < 1.0))
    throw ConfigInvalid("finetune: valid_fraction must be inside (0, 1)");
}

std::pair<std::vector<EncodedExample>, std::vector<EncodedExample>>
split_examples(const std::vector<EncodedExample>& examples,
               double valid_fraction, std::uint64_t seed) {
  if (examples.empty()) throw EmptyCorpus("split_examples: no examples");
  if (!(valid_fraction > 0.0) || !(valid_fraction < 1.0))
    throw ConfigInvalid("split_examples: valid_fraction must be inside (0, 1)");
  const std::size_t n = examples.size();
  if (n == 1) return {examples, {}};
  std::size_t n_valid = static_cast<std::size_t>(
      std::llround(valid_fraction * static_cast<double>(n)));
  n_valid = std::clamp<std::size_t>(n_valid, 1, n - 1);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> valid_idx(order.begin(),
                                     order.begin() + static_cast<std::ptrdiff_t>(n_valid));
  std::sort(valid_idx.begin(), valid_idx.end());
  std::vector<bool> is_valid(n, false);
  for (std::size_t i : valid_idx) is_valid[i] = true;
  std::pair<std::vector<EncodedExample>, std::vector<EncodedExample>> out;
  for (std::size_t i = 0; i < n; ++i)
    (is_valid[i] ? out.second : out.first).push_back(examples[i]);
  return out;
}

namespace {

// Segment id rows of the given examples, example-major: with s segments per
// example the representation matrix extracted from this list, read with rows
// of s*emsize, is exactly the per-example feature matrix (the pair features
// [rep_a || rep_b] are adjacent by construction).
std::vector<std::vector<TokenId>> segment_rows(
    const std::vector<EncodedExample>& examples) {
  std::vector<std::vector<TokenId>> rows;
  rows.reserve(examples.size() * (examples.empty() ? 1 : examples.front().segments.size()));
  for (const auto& ex : examples)
    for (const auto& seg : ex.segments) rows.push_back(seg);
  return rows;
}

std::vector<std::int32_t> label_column(
    const std::vector<EncodedExample>& examples) {
  std::vector<std::int32_t> out(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) out[i] = examples[i].label;
  return out;
}

void check_examples(const std::vector<EncodedExample>& examples,
                    std::size_t n_seg, int n_classes, int seq_cap,
                    const char* which) {
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    if (ex.segments.size() != n_seg)
      throw ConfigInvalid("finetune: " + std::string(which) + " example " +
                          std::to_string(i) + " has " +
                          std::to_string(ex.segments.size()) +
                          " segments; expected " + std::to_string(n_seg));
    if (ex.label < 0 || ex.label >= n_classes)
      throw ConfigInvalid("finetune: " + std::string(which) + " example " +
                          std::to_string(i) + " label " +
                          std::to_string(ex.label) + " outside [0, " +
                          std::to_string(n_classes) + ")");
    for (const auto& seg : ex.segments) {
      if (seg.empty())
        throw EmptySequence("finetune: " + std::string(which) + " example " +
                            std::to_string(i) + " has an empty segment");
      if (static_cast<int>(seg.size()) > seq_cap)
        throw ShapeMismatch("finetune: " + std::string(which) + " example " +
                            std::to_string(i) + " segment of length " +
                            std::to_string(seg.size()) +
                            " exceeds the model's sequence capacity " +
                            std::to_string(seq_cap));
    }
  }
}

template <typename T>
void adam_update(Backend backend, std::vector<T>& params,
                 const std::vector<T>& grads, lm::AdamState<T>& state,
                 double learning_rate, double grad_scale) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), T(0));
    state.v.assign(params.size(), T(0));
    state.step = 0;
  }
  ++state.step;
  lm::kernels::AdamStepParams s{learning_rate, 0.9, 0.999, 1e-8, grad_scale,
                                state.step};
  lm::kernels::adam_step(backend, params.data(), grads.data(), state.m.data(),
                         state.v.data(), static_cast<Index>(params.size()), s);
}

}  // namespace

// For each group: rebuild the forward activations, place each row's gradient
// at its last real position, and run the trunk backward.
template <typename T>
void backprop_representations(lm::Transformer<T>& model,
                              const std::vector<std::vector<TokenId>>& rows,
                              const std::vector<T>& dreps, Index batch_rows) {
  if (batch_rows < 1)
    throw ConfigInvalid("backprop_representations: batch_rows must be positive");
  if (dreps.size() != rows.size() * static_cast<std::size_t>(model.config().emsize))
    throw ShapeMismatch("backprop_representations: expected " +
                        std::to_string(rows.size()) + " gradient rows of " +
                        std::to_string(model.config().emsize) + " columns");
  const Index e = model.config().emsize;
  for (std::size_t start = 0; start < rows.size();
       start += static_cast<std::size_t>(batch_rows)) {
    const int bn = static_cast<int>(
        std::min<std::size_t>(static_cast<std::size_t>(batch_rows),
                              rows.size() - start));
    const Batch batch = make_padded_batch(rows, start, bn);
    model.forward(batch, /*train=*/false, /*dropout_key=*/0);
    std::vector<T>& dh = model.dhidden();
    dh.assign(static_cast<std::size_t>(bn) * batch.seq_len *
                  static_cast<std::size_t>(e),
              T(0));
    for (int i = 0; i < bn; ++i) {
      const std::size_t len = rows[start + static_cast<std::size_t>(i)].size();
      const T* src = dreps.data() +
                     (start + static_cast<std::size_t>(i)) *
                         static_cast<std::size_t>(e);
      std::copy(src, src + e,
                dh.begin() + static_cast<std::ptrdiff_t>(
                                 (static_cast<std::size_t>(i) * batch.seq_len +
                                  len - 1) *
                                 static_cast<std::size_t>(e)));
    }
    model.backward_from_dhidden(batch);
  }
}

template <typename T>
FinetuneResult<T> finetune_task(lm::Transformer<T>& model,
                                const std::string& task_name, int n_classes,
                                const std::vector<EncodedExample>& train_in,
                                const std::vector<EncodedExample>& valid_in,
                                const FinetuneConfig& config) {
  config.validate();
  if (n_classes < 2)
    throw ConfigInvalid("finetune: n_classes must be at least 2");
  if (train_in.empty()) throw EmptyCorpus("finetune: empty training set");

  std::vector<EncodedExample> train = train_in;
  std::vector<EncodedExample> valid = valid_in;
  if (valid.empty()) {
    auto parts = split_examples(train_in, config.valid_fraction, config.seed);
    train = std::move(parts.first);
    valid = std::move(parts.second);
    if (valid.empty()) valid = train;  // single-example degenerate case
  }

  const std::size_t n_seg = train.front().segments.size();
  if (n_seg != 1 && n_seg != 2)
    throw ConfigInvalid("finetune: examples must carry 1 or 2 segments, got " +
                        std::to_string(n_seg));
  const int seq_cap = model.config().seq_len;
  check_examples(train, n_seg, n_classes, seq_cap, "train");
  check_examples(valid, n_seg, n_classes, seq_cap, "held-out");

  const Index e = model.config().emsize;
  const Index batch_rows = config.batch_size;
  HeadConfig head_config{static_cast<int>(n_seg) * model.config().emsize,
                         config.hidden_dim, n_classes};
  MlpHead<T> head(head_config, model.backend());
  head.init_params(lm::mix_seed(config.seed, 1));

  const std::vector<std::vector<TokenId>> train_rows = segment_rows(train);
  const std::vector<std::vector<TokenId>> valid_rows = segment_rows(valid);
  const std::vector<std::int32_t> train_labels = label_column(train);
  const std::vector<std::int32_t> valid_labels = label_column(valid);
  std::vector<int> valid_golds(valid_labels.begin(), valid_labels.end());

  // Frozen mode never touches the model again after these two passes.
  std::vector<T> train_feats, valid_feats;
  if (!config.joint) {
    train_feats = extract_representations(model, train_rows, batch_rows);
    valid_feats = extract_representations(model, valid_rows, batch_rows);
  }

  const Index feat_dim = static_cast<Index>(n_seg) * e;
  lm::AdamState<T> head_state, model_state;
  TaskMetrics metrics;
  metrics.task = task_name;
  metrics.n_classes = n_classes;
  metrics.epochs = config.epochs;
  metrics.n_train = train.size();
  metrics.n_valid = valid.size();

  std::vector<int> final_preds;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(
        lm::mix_seed(config.seed, static_cast<std::uint64_t>(epoch) + 2));
    std::shuffle(order.begin(), order.end(), rng);

    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const Index bn = static_cast<Index>(
          std::min<std::size_t>(static_cast<std::size_t>(config.batch_size),
                                order.size() - start));
      std::vector<std::int32_t> labels(static_cast<std::size_t>(bn));
      std::vector<T> feats(static_cast<std::size_t>(bn * feat_dim));
      std::vector<std::vector<TokenId>> batch_segment_rows;
      if (config.joint) {
        std::vector<EncodedExample> chunk;
        chunk.reserve(static_cast<std::size_t>(bn));
        for (Index i = 0; i < bn; ++i)
          chunk.push_back(train[order[start + static_cast<std::size_t>(i)]]);
        batch_segment_rows = segment_rows(chunk);
        feats = extract_representations(model, batch_segment_rows, batch_rows);
      } else {
        for (Index i = 0; i < bn; ++i) {
          const std::size_t src = order[start + static_cast<std::size_t>(i)];
          std::copy(train_feats.begin() +
                        static_cast<std::ptrdiff_t>(src * static_cast<std::size_t>(feat_dim)),
                    train_feats.begin() +
                        static_cast<std::ptrdiff_t>((src + 1) * static_cast<std::size_t>(feat_dim)),
                    feats.begin() + static_cast<std::ptrdiff_t>(i * feat_dim));
        }
      }
      for (Index i = 0; i < bn; ++i)
        labels[static_cast<std::size_t>(i)] =
            train_labels[order[start + static_cast<std::size_t>(i)]];

      head.zero_grads();
      std::vector<T> dfeats;
      if (config.joint) {
        model.zero_grads();
        dfeats.assign(feats.size(), T(0));
      }
      const double loss = head.loss_and_grad(
          feats.data(), labels.data(), bn,
          config.joint ? dfeats.data() : nullptr);
      if (!std::isfinite(loss))
        throw NonFiniteLoss("finetune epoch " + std::to_string(epoch) +
                            " batch " + std::to_string(start / static_cast<std::size_t>(config.batch_size)) +
                            ": loss " + std::to_string(loss));
      if (config.joint)
        backprop_representations(model, batch_segment_rows, dfeats,
                                 batch_rows);

      double sq = lm::kernels::sum_squares(
          head.backend(), head.grads().data(),
          static_cast<Index>(head.grads().size()));
      if (config.joint)
        sq += lm::kernels::sum_squares(
            model.backend(), model.grads().data(),
            static_cast<Index>(model.grads().size()));
      const double gnorm = std::sqrt(sq);
      if (!std::isfinite(gnorm))
        throw NonFiniteLoss("finetune epoch " + std::to_string(epoch) +
                            ": non-finite gradient norm");
      const double scale =
          (config.clip_norm > 0 && gnorm > config.clip_norm)
              ? config.clip_norm / gnorm
              : 1.0;
      adam_update(head.backend(), head.params(), head.grads(), head_state,
                  config.learning_rate, scale);
      if (config.joint)
        adam_update(model.backend(), model.params(), model.grads(),
                    model_state, config.learning_rate, scale);
    }

    // Held-out score after this epoch.
    if (config.joint)
      valid_feats = extract_representations(model, valid_rows, batch_rows);
    const std::vector<std::int32_t> preds = head.predict(
        valid_feats.data(), static_cast<Index>(valid.size()));
    final_preds.assign(preds.begin(), preds.end());
    metrics.epoch_macro.push_back(macro_f1(final_preds, valid_golds, n_classes));
  }

  metrics.macro = metrics.epoch_macro.back();
  metrics.per_class = per_class_f1(final_preds, valid_golds, n_classes);

  FinetuneResult<T> result;
  result.head_config = head_config;
  result.head_params = head.params();
  result.metrics = std::move(metrics);
  return result;
}

// ---------------------------------------------------------------------------
// Dataset loading and encoding
// ---------------------------------------------------------------------------

LabelMap LabelMap::from_names(const std::vector<std::string>& raw) {
  LabelMap map;
  map.names = raw;
  std::sort(map.names.begin(), map.names.end());
  map.names.erase(std::unique(map.names.begin(), map.names.end()),
                  map.names.end());
  for (const auto& name : map.names)
    if (name.empty()) throw ConfigInvalid("label names must be nonempty");
  return map;
}

int LabelMap::id(const std::string& name) const {
  const auto it = std::lower_bound(names.begin(), names.end(), name);
  if (it == names.end() || *it != name)
    throw ConfigInvalid("unknown label '" + name + "'");
  return static_cast<int>(it - names.begin());
}

namespace {

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      cols.push_back(line.substr(start));
      return cols;
    }
    cols.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOFailure("cannot open '" + path + "' for reading");
  return in;
}

[[noreturn]] void row_error(const std::string& path, std::size_t lineno,
                            const std::string& what) {
  throw ParseError(path + ":" + std::to_string(lineno) + ": " + what);
}

}  // namespace

std::vector<SeqLabelExample> load_conll(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  std::vector<SeqLabelExample> out;
  SeqLabelExample current;
  auto flush = [&] {
    if (!current.tokens.empty()) {
      out.push_back(std::move(current));
      current = SeqLabelExample{};
    }
  };
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) {
      flush();
      continue;
    }
    const std::vector<std::string> cols = split_tabs(line);
    if (cols.size() != 2)
      row_error(path, lineno,
                "expected 'token<TAB>tag', found " +
                    std::to_string(cols.size()) + " columns");
    if (cols[0].empty() || cols[1].empty())
      row_error(path, lineno, "empty token or tag");
    current.tokens.push_back(cols[0]);
    current.tags.push_back(cols[1]);
  }
  flush();
  return out;
}

std::vector<CpsExample> load_cps_tsv(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  std::string line;
  if (!std::getline(in, line))
    throw ParseError(path + ": empty file (expected a header row)");
  if (split_tabs(strip_cr(line)) !=
      std::vector<std::string>{"text", "text_b", "label"})
    row_error(path, 1, "expected header 'text<TAB>text_b<TAB>label'");
  std::vector<CpsExample> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    const std::vector<std::string> cols = split_tabs(line);
    if (cols.size() != 3)
      row_error(path, lineno,
                "expected 3 columns, found " + std::to_string(cols.size()));
    if (cols[0].empty() || cols[1].empty())
      row_error(path, lineno, "empty text field");
    if (cols[2] != "0" && cols[2] != "1")
      row_error(path, lineno, "label must be 0 or 1, found '" + cols[2] + "'");
    out.push_back({cols[0], cols[1], cols[2] == "1" ? 1 : 0});
  }
  return out;
}

std::vector<CcExample> load_cc_tsv(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  std::string line;
  if (!std::getline(in, line))
    throw ParseError(path + ": empty file (expected a header row)");
  if (split_tabs(strip_cr(line)) != std::vector<std::string>{"text", "label"})
    row_error(path, 1, "expected header 'text<TAB>label'");
  std::vector<CcExample> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    const std::vector<std::string> cols = split_tabs(line);
    if (cols.size() != 2)
      row_error(path, lineno,
                "expected 2 columns, found " + std::to_string(cols.size()));
    if (cols[0].empty() || cols[1].empty())
      row_error(path, lineno, "empty text or label field");
    out.push_back({cols[0], cols[1]});
  }
  return out;
}

namespace {

std::vector<TokenId> encode_or_throw(const Tokenizer& tokenizer,
                                     const std::string& text,
                                     const char* task) {
  std::vector<TokenId> ids = tokenizer.encode(text);
  if (ids.empty())
    throw EmptySequence(std::string(task) +
                        ": text produced no tokens: '" + text + "'");
  return ids;
}

}  // namespace

EncodedTask encode_cps_task(const Tokenizer& tokenizer,
                            const std::vector<CpsExample>& rows,
                            std::size_t max_len) {
  if (rows.empty()) throw EmptyCorpus("encode_cps_task: no examples");
  EncodedTask task;
  task.task = "cps";
  task.n_classes = 2;
  task.examples.reserve(rows.size());
  for (const auto& row : rows) {
    EncodedExample ex;
    ex.segments.push_back(truncate(encode_or_throw(tokenizer, row.text_a, "cps"),
                                   max_len, TruncateMode::end));
    ex.segments.push_back(truncate(encode_or_throw(tokenizer, row.text_b, "cps"),
                                   max_len, TruncateMode::end));
    ex.label = row.label;
    task.examples.push_back(std::move(ex));
  }
  return task;
}

EncodedTask encode_cc_task(const Tokenizer& tokenizer,
                           const std::vector<CcExample>& rows,
                           std::size_t max_len) {
  if (rows.empty()) throw EmptyCorpus("encode_cc_task: no examples");
  std::vector<std::string> cats;
  cats.reserve(rows.size());
  for (const auto& row : rows) cats.push_back(row.category);
  EncodedTask task;
  task.task = "cc";
  task.labels = LabelMap::from_names(cats);
  task.n_classes = task.labels.size();
  task.examples.reserve(rows.size());
  for (const auto& row : rows) {
    EncodedExample ex;
    ex.segments.push_back(truncate(encode_or_throw(tokenizer, row.text, "cc"),
                                   max_len, TruncateMode::end));
    ex.label = task.labels.id(row.category);
    task.examples.push_back(std::move(ex));
  }
  return task;
}

EncodedTask encode_seq_label_task(const Tokenizer& tokenizer,
                                  const std::vector<SeqLabelExample>& rows,
                                  std::size_t max_len,
                                  const std::string& task_name) {
  if (rows.empty())
    throw EmptyCorpus("encode_seq_label_task: no sentences");
  std::vector<std::string> tags;
  for (const auto& row : rows)
    tags.insert(tags.end(), row.tags.begin(), row.tags.end());
  EncodedTask task;
  task.task = task_name;
  task.labels = LabelMap::from_names(tags);
  task.n_classes = task.labels.size();
  for (const auto& row : rows) {
    for (const auto& [prefix, tag] : decompose_sequence(row.tokens, row.tags)) {
      std::string text;
      for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (i) text += ' ';
        text += prefix[i];
      }
      EncodedExample ex;
      ex.segments.push_back(
          truncate(encode_or_throw(tokenizer, text, task_name.c_str()),
                   max_len, TruncateMode::begin));
      ex.label = task.labels.id(tag);
      task.examples.push_back(std::move(ex));
    }
  }
  return task;
}

// ---------------------------------------------------------------------------
// Metrics serialization
// ---------------------------------------------------------------------------

namespace {

json task_metrics_json(const TaskMetrics& m) {
  return json{{"task", m.task},
              {"scheme", m.scheme},
              {"n_classes", m.n_classes},
              {"per_class_f1", m.per_class},
              {"macro_f1", m.macro},
              {"epoch_macro_f1", m.epoch_macro},
              {"epochs", m.epochs},
              {"n_train", m.n_train},
              {"n_valid", m.n_valid}};
}

}  // namespace

std::string task_metrics_to_json(const TaskMetrics& metrics) {
  return task_metrics_json(metrics).dump(2);
}

std::string metrics_collection_to_json(const std::vector<TaskMetrics>& all) {
  if (all.empty())
    throw EmptyCorpus("metrics_collection_to_json: no task metrics");
  json tasks = json::array();
  double sum = 0.0;
  for (const auto& m : all) {
    tasks.push_back(task_metrics_json(m));
    sum += m.macro;
  }
  json doc{{"format_version", 1},
           {"tasks", std::move(tasks)},
           {"average_macro_f1", sum / static_cast<double>(all.size())}};
  return doc.dump(2);
}

TaskMetrics task_metrics_from_json(const std::string& text) {
  try {
    const json doc = json::parse(text);
    TaskMetrics metrics;
    metrics.task = doc.at("task").get<std::string>();
    metrics.scheme = doc.at("scheme").get<std::string>();
    metrics.n_classes = doc.at("n_classes").get<int>();
    metrics.per_class = doc.at("per_class_f1").get<std::vector<double>>();
    metrics.macro = doc.at("macro_f1").get<double>();
    metrics.epoch_macro = doc.at("epoch_macro_f1").get<std::vector<double>>();
    metrics.epochs = doc.at("epochs").get<int>();
    metrics.n_train = doc.at("n_train").get<std::size_t>();
    metrics.n_valid = doc.at("n_valid").get<std::size_t>();
    return metrics;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("task metrics JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

template std::vector<float> extract_representation<float>(
    lm::Transformer<float>&, const std::vector<TokenId>&);
template std::vector<double> extract_representation<double>(
    lm::Transformer<double>&, const std::vector<TokenId>&);
template std::vector<float> extract_representations<float>(
    lm::Transformer<float>&, const std::vector<std::vector<TokenId>>&, Index);
template std::vector<double> extract_representations<double>(
    lm::Transformer<double>&, const std::vector<std::vector<TokenId>>&, Index);
template void backprop_representations<float>(
    lm::Transformer<float>&, const std::vector<std::vector<TokenId>>&,
    const std::vector<float>&, Index);
template void backprop_representations<double>(
    lm::Transformer<double>&, const std::vector<std::vector<TokenId>>&,
    const std::vector<double>&, Index);
template class MlpHead<float>;
template class MlpHead<double>;
template FinetuneResult<float> finetune_task<float>(
    lm::Transformer<float>&, const std::string&, int,
    const std::vector<EncodedExample>&, const std::vector<EncodedExample>&,
    const FinetuneConfig&);
template FinetuneResult<double> finetune_task<double>(
    lm::Transformer<double>&, const std::string&, int,
    const std::vector<EncodedExample>&, const std::vector<EncodedExample>&,
    const FinetuneConfig&);

}  // namespace toklab
