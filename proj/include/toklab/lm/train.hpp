#pragma once

#include <cstdint>
#include <vector>

#include "toklab/corpus.hpp"
#include "toklab/lm/model.hpp"

namespace toklab::lm {

// Token count plus 64-bit accumulated negative log likelihood for one split.
struct EvalRecord {
  std::int64_t n = 0;
  double nll_sum = 0.0;
  double perplexity() const;  // exp(nll_sum / n); throws EmptySequence on n < 1
};

// exp of the mean negative log probability. Throws InvalidProbability for
// p <= 0 or p > 1 and EmptySequence when empty.
double perplexity(const std::vector<double>& probs);

template <typename T>
struct AdamState {
  std::vector<T> m, v;
  std::int64_t step = 0;
};

// One pass over the batches in order: forward with dropout, backward, global
// gradient-norm clip, adaptive-moment update. The dropout key for batch i is
// mix_seed(mix_seed(config.seed, epoch_index), i). Returns the accumulated
// training perplexity record. Throws NonFiniteLoss with the epoch/batch
// position when the loss or gradient norm degenerates.
template <typename T>
EvalRecord train_epoch(Transformer<T>& model, const std::vector<Batch>& batches,
                       AdamState<T>& state, std::uint64_t epoch_index);

// Dropout-free forward passes; accumulates nll over all next-token targets.
template <typename T>
EvalRecord evaluate(Transformer<T>& model, const std::vector<Batch>& batches);

// Mean next-token loss of one batch in eval mode (no parameter update).
template <typename T>
double batch_loss(Transformer<T>& model, const Batch& batch);

// Analytic gradient of batch_loss w.r.t. every parameter.
template <typename T>
std::vector<T> analytic_gradients(Transformer<T>& model, const Batch& batch);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Central finite differences on a seeded sample of n_coords distinct
// parameter coordinates, compared against the supplied gradient vector.
// Relative error uses max(|analytic|, |numeric|, 1e-10) as denominator.
GradCheckResult finite_difference_check(Transformer<double>& model,
                                        const Batch& batch,
                                        const std::vector<double>& analytic,
                                        double epsilon, std::size_t n_coords,
                                        std::uint64_t seed);

extern template EvalRecord train_epoch<float>(Transformer<float>&,
                                              const std::vector<Batch>&,
                                              AdamState<float>&, std::uint64_t);
extern template EvalRecord train_epoch<double>(Transformer<double>&,
                                               const std::vector<Batch>&,
                                               AdamState<double>&,
                                               std::uint64_t);
extern template EvalRecord evaluate<float>(Transformer<float>&,
                                           const std::vector<Batch>&);
extern template EvalRecord evaluate<double>(Transformer<double>&,
                                            const std::vector<Batch>&);
extern template double batch_loss<float>(Transformer<float>&, const Batch&);
extern template double batch_loss<double>(Transformer<double>&, const Batch&);
extern template std::vector<float> analytic_gradients<float>(
    Transformer<float>&, const Batch&);
extern template std::vector<double> analytic_gradients<double>(
    Transformer<double>&, const Batch&);

}  // namespace toklab::lm
