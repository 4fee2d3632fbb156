#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "toklab/corpus.hpp"
#include "toklab/errors.hpp"
#include "toklab/lm/kernels.hpp"
#include "toklab/lm/model.hpp"
#include "toklab/lm/train.hpp"
#include "toklab/tokenizer.hpp"

namespace toklab {

// ---------------------------------------------------------------------------
// Task examples
// ---------------------------------------------------------------------------

// Sentence-pair classification: label 1 for a similar pair, 0 for dissimilar.
struct CpsExample {
  std::string text_a;
  std::string text_b;
  int label = 0;
};

// Per-word labeling (part-of-speech tags, entity classes, ...).
struct SeqLabelExample {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;
};

// Whole-text classification into one named category.
struct CcExample {
  std::string text;
  std::string category;
};

using TaskExample = std::variant<CpsExample, SeqLabelExample, CcExample>;

// ---------------------------------------------------------------------------
// Pure helpers
// ---------------------------------------------------------------------------

// begin: drop from the front, keeping the last max_len items.
// end:   drop from the back, keeping the first max_len items.
enum class TruncateMode { begin, end };

const char* truncate_mode_name(TruncateMode mode);
TruncateMode truncate_mode_from_name(const std::string& name);  // ConfigInvalid

template <typename T>
std::vector<T> truncate(const std::vector<T>& seq, std::size_t max_len,
                        TruncateMode mode) {
  if (max_len < 1)
    throw ConfigInvalid("truncate: max_len must be at least 1");
  if (seq.size() <= max_len) return seq;
  if (mode == TruncateMode::begin)
    return std::vector<T>(seq.end() - static_cast<std::ptrdiff_t>(max_len),
                          seq.end());
  return std::vector<T>(seq.begin(),
                        seq.begin() + static_cast<std::ptrdiff_t>(max_len));
}

// [A,B,C] with tags [La,Lb,Lc] -> [(A,La), (AB,Lb), (ABC,Lc)]: each word is
// labeled from the prefix that ends with it. Throws LengthMismatch when the
// token and tag lists disagree.
std::vector<std::pair<std::vector<std::string>, std::string>>
decompose_sequence(const std::vector<std::string>& tokens,
                   const std::vector<std::string>& tags);

// Per-class F1 (2PR/(P+R), 0 when the denominator is 0) for every class id in
// [0, n_classes). Classes with neither gold nor predicted occurrences also
// report 0 here but are excluded from macro_f1's average.
std::vector<double> per_class_f1(const std::vector<int>& preds,
                                 const std::vector<int>& golds, int n_classes);

// Unweighted mean of per-class F1 over the classes that occur in golds or
// preds. Throws LengthMismatch when sizes differ or both lists are empty, and
// ConfigInvalid for labels outside [0, n_classes).
double macro_f1(const std::vector<int>& preds, const std::vector<int>& golds,
                int n_classes);

// [rep_a || rep_b]; throws DimMismatch when the halves disagree in size.
template <typename T>
std::vector<T> cps_features(const std::vector<T>& rep_a,
                            const std::vector<T>& rep_b) {
  if (rep_a.size() != rep_b.size())
    throw DimMismatch("cps_features: representation sizes " +
                      std::to_string(rep_a.size()) + " and " +
                      std::to_string(rep_b.size()) + " differ");
  std::vector<T> out;
  out.reserve(rep_a.size() * 2);
  out.insert(out.end(), rep_a.begin(), rep_a.end());
  out.insert(out.end(), rep_b.begin(), rep_b.end());
  return out;
}

// ---------------------------------------------------------------------------
// Representations
// ---------------------------------------------------------------------------

// Final-layer (post final layernorm) hidden state at the last position of ids,
// from a dropout-free forward pass. Throws EmptySequence for empty ids and
// ShapeMismatch when ids exceeds the model's sequence capacity.
template <typename T>
std::vector<T> extract_representation(lm::Transformer<T>& model,
                                      const std::vector<TokenId>& ids);

// Batched variant: one representation row (emsize wide) per input row,
// processed in groups of batch_rows. Rows inside a group are padded to the
// group's longest row; the pad positions sit after each row's last real token
// and cannot influence it.
template <typename T>
std::vector<T> extract_representations(
    lm::Transformer<T>& model, const std::vector<std::vector<TokenId>>& rows,
    lm::kernels::Index batch_rows = 32);

// Adjoint of extract_representations: dreps holds one emsize-wide gradient
// row per input row; each is placed at its row's last real position and
// pushed back through the network, accumulating into model.grads() (call
// model.zero_grads() first). Used when the base model is tuned jointly with
// a task head.
template <typename T>
void backprop_representations(lm::Transformer<T>& model,
                              const std::vector<std::vector<TokenId>>& rows,
                              const std::vector<T>& dreps,
                              lm::kernels::Index batch_rows = 32);

// ---------------------------------------------------------------------------
// Classification head
// ---------------------------------------------------------------------------

struct HeadConfig {
  int input_dim = 0;    // emsize, or 2*emsize for pair features
  int hidden_dim = 1024;
  int n_classes = 0;
  void validate() const;  // ConfigInvalid
};

// hidden(hidden_dim, rectified) -> output(n_classes), on feature rows.
template <typename T>
class MlpHead {
 public:
  explicit MlpHead(HeadConfig config,
                   lm::Backend backend = lm::Backend::openmp);

  void init_params(std::uint64_t seed);

  const HeadConfig& config() const { return config_; }
  lm::Backend backend() const { return backend_; }
  std::vector<T>& params() { return params_; }
  const std::vector<T>& params() const { return params_; }
  std::vector<T>& grads() { return grads_; }
  const std::vector<T>& grads() const { return grads_; }

  // Logits for n feature rows (n x input_dim, row major) -> n x n_classes.
  std::vector<T> logits(const T* features, lm::kernels::Index n);

  // Argmax class per feature row (first index wins ties).
  std::vector<std::int32_t> predict(const T* features, lm::kernels::Index n);

  // Mean cross entropy over the n rows; accumulates parameter gradients into
  // grads() (call zero_grads first) and, when dfeatures is non-null, writes
  // the gradient w.r.t. the features (n x input_dim, overwritten).
  double loss_and_grad(const T* features, const std::int32_t* labels,
                       lm::kernels::Index n, T* dfeatures = nullptr);

  void zero_grads();

 private:
  void ensure_scratch(lm::kernels::Index n);
  void forward_rows(const T* features, lm::kernels::Index n);

  HeadConfig config_;
  lm::Backend backend_;
  std::vector<T> params_, grads_;
  lm::kernels::Index w1_ = 0, b1_ = 0, w2_ = 0, b2_ = 0, total_ = 0;
  lm::kernels::Index scratch_rows_ = 0;
  std::vector<T> z1_, a1_, da1_, logits_, dlogits_;
  std::vector<double> row_nll_;
};

// ---------------------------------------------------------------------------
// Finetuning driver
// ---------------------------------------------------------------------------

// One training example after tokenization: one id row for single-text tasks,
// two rows (text_a, text_b) for pair classification. Rows must already be
// truncated to the model's sequence capacity.
struct EncodedExample {
  std::vector<std::vector<TokenId>> segments;
  std::int32_t label = 0;
};

struct FinetuneConfig {
  int epochs = 20;
  int batch_size = 32;
  int hidden_dim = 1024;
  double learning_rate = 1e-3;
  double clip_norm = 1.0;       // <= 0 disables clipping
  double valid_fraction = 0.1;  // used only when no held-out set is supplied
  std::uint64_t seed = 0;
  bool joint = false;  // also update the language model's weights
  void validate() const;  // ConfigInvalid
};

struct TaskMetrics {
  std::string task;
  std::string scheme;
  int n_classes = 0;
  std::vector<double> per_class;   // per-class F1 on the held-out split
  double macro = 0.0;              // final-epoch held-out macro F1
  std::vector<double> epoch_macro; // held-out macro F1 after each epoch
  int epochs = 0;
  std::size_t n_train = 0;
  std::size_t n_valid = 0;
};

template <typename T>
struct FinetuneResult {
  HeadConfig head_config;
  std::vector<T> head_params;
  TaskMetrics metrics;
};

// Deterministic 90/10-style split: shuffles indices with the seed and moves
// round(valid_fraction * n) examples (at least 1, at most n-1 when n >= 2)
// into the held-out part.
std::pair<std::vector<EncodedExample>, std::vector<EncodedExample>>
split_examples(const std::vector<EncodedExample>& examples,
               double valid_fraction, std::uint64_t seed);

// Trains the two-layer head on representations from model. The model's
// weights stay untouched unless config.joint is set, in which case gradients
// flow through the representation positions into the full network. Evaluates
// the held-out split after every epoch. valid may be empty, in which case a
// seeded split of train is used. Throws EmptyCorpus for an empty train set,
// ConfigInvalid for label/segment-count violations, and NonFiniteLoss with
// the epoch/batch position when training degenerates.
template <typename T>
FinetuneResult<T> finetune_task(lm::Transformer<T>& model,
                                const std::string& task_name, int n_classes,
                                const std::vector<EncodedExample>& train,
                                const std::vector<EncodedExample>& valid,
                                const FinetuneConfig& config);

// ---------------------------------------------------------------------------
// Dataset loading and encoding
// ---------------------------------------------------------------------------

// Stable name <-> id mapping: names are kept sorted so the same label set
// always yields the same ids.
struct LabelMap {
  std::vector<std::string> names;
  int id(const std::string& name) const;  // ConfigInvalid on unknown name
  int size() const { return static_cast<int>(names.size()); }
  static LabelMap from_names(const std::vector<std::string>& raw);
};

// Two tab-separated columns (token, tag); a blank line closes a sentence.
// Throws IOFailure when unreadable and ParseError (with the line number) on
// malformed rows.
std::vector<SeqLabelExample> load_conll(const std::string& path);

// Tab-separated with header "text<TAB>text_b<TAB>label"; label must be 0 or 1.
std::vector<CpsExample> load_cps_tsv(const std::string& path);

// Tab-separated with header "text<TAB>label".
std::vector<CcExample> load_cc_tsv(const std::string& path);

// Tokenized, truncated id rows plus dense labels, ready for finetune_task.
struct EncodedTask {
  std::string task;
  int n_classes = 0;
  LabelMap labels;  // empty for pair classification (labels are already 0/1)
  std::vector<EncodedExample> examples;
};

// Pair task: each half is encoded separately and truncated from the end
// (keeping the leading tokens) to max_len.
EncodedTask encode_cps_task(const Tokenizer& tokenizer,
                            const std::vector<CpsExample>& rows,
                            std::size_t max_len);

// Classification: the text is truncated from the end; the label set is the
// sorted set of categories in rows.
EncodedTask encode_cc_task(const Tokenizer& tokenizer,
                           const std::vector<CcExample>& rows,
                           std::size_t max_len);

// Word labeling: every sentence is decomposed into prefixes, each prefix is
// encoded and truncated from the beginning (keeping the trailing tokens, which
// carry the word being labeled). task_name is recorded in the result
// ("pos", "ner", ...).
EncodedTask encode_seq_label_task(const Tokenizer& tokenizer,
                                  const std::vector<SeqLabelExample>& rows,
                                  std::size_t max_len,
                                  const std::string& task_name);

// ---------------------------------------------------------------------------
// Metrics serialization
// ---------------------------------------------------------------------------

// {"task", "scheme", "n_classes", "per_class_f1", "macro_f1", "epoch_macro_f1",
//  "epochs", "n_train", "n_valid"}
std::string task_metrics_to_json(const TaskMetrics& metrics);

// {"format_version", "tasks": [...], "average_macro_f1"} - the cross-task
// average row reported alongside the individual scores.
std::string metrics_collection_to_json(const std::vector<TaskMetrics>& all);

// Inverse of task_metrics_to_json. Throws ParseError on malformed input.
TaskMetrics task_metrics_from_json(const std::string& text);

// ---------------------------------------------------------------------------

extern template std::vector<float> extract_representation<float>(
    lm::Transformer<float>&, const std::vector<TokenId>&);
extern template std::vector<double> extract_representation<double>(
    lm::Transformer<double>&, const std::vector<TokenId>&);
extern template std::vector<float> extract_representations<float>(
    lm::Transformer<float>&, const std::vector<std::vector<TokenId>>&,
    lm::kernels::Index);
extern template std::vector<double> extract_representations<double>(
    lm::Transformer<double>&, const std::vector<std::vector<TokenId>>&,
    lm::kernels::Index);
extern template void backprop_representations<float>(
    lm::Transformer<float>&, const std::vector<std::vector<TokenId>>&,
    const std::vector<float>&, lm::kernels::Index);
extern template void backprop_representations<double>(
    lm::Transformer<double>&, const std::vector<std::vector<TokenId>>&,
    const std::vector<double>&, lm::kernels::Index);
extern template class MlpHead<float>;
extern template class MlpHead<double>;
extern template FinetuneResult<float> finetune_task<float>(
    lm::Transformer<float>&, const std::string&, int,
    const std::vector<EncodedExample>&, const std::vector<EncodedExample>&,
    const FinetuneConfig&);
extern template FinetuneResult<double> finetune_task<double>(
    lm::Transformer<double>&, const std::string&, int,
    const std::vector<EncodedExample>&, const std::vector<EncodedExample>&,
    const FinetuneConfig&);

}  // namespace toklab
