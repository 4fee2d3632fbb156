#include "toklab/lm/train.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <unordered_set>

#include "toklab/errors.hpp"

namespace toklab::lm {

double EvalRecord::perplexity() const {
  if (n < 1) throw EmptySequence("perplexity over zero tokens");
  return std::exp(nll_sum / static_cast<double>(n));
}

double perplexity(const std::vector<double>& probs) {
  if (probs.empty()) throw EmptySequence("perplexity of an empty sample");
  double nll = 0.0;
  for (double p : probs) {
    if (!(p > 0.0) || p > 1.0)
      throw InvalidProbability("probability " + std::to_string(p) +
                               " outside (0, 1]");
    nll += -std::log(p);
  }
  return std::exp(nll / static_cast<double>(probs.size()));
}

namespace {

template <typename T>
void ensure_state(AdamState<T>& state, std::size_t n) {
  if (state.m.size() != n) {
    state.m.assign(n, T(0));
    state.v.assign(n, T(0));
    state.step = 0;
  }
}

}  // namespace

template <typename T>
EvalRecord train_epoch(Transformer<T>& model, const std::vector<Batch>& batches,
                       AdamState<T>& state, std::uint64_t epoch_index) {
  const LMConfig& config = model.config();
  const OptimizerConfig& opt = config.optimizer;
  ensure_state(state, model.layout().total);
  const auto total = static_cast<kernels::Index>(model.layout().total);
  EvalRecord record;
  const std::uint64_t epoch_key = mix_seed(config.seed, epoch_index);
  for (std::size_t bi = 0; bi < batches.size(); ++bi) {
    const std::uint64_t key = mix_seed(epoch_key, bi);
    model.forward(batches[bi], /*train=*/true, key);
    const auto stats = model.loss_and_dlogits(batches[bi]);
    const double mean_loss =
        stats.nll_sum / static_cast<double>(stats.tokens);
    if (!std::isfinite(mean_loss))
      throw NonFiniteLoss("epoch " + std::to_string(epoch_index) + " batch " +
                          std::to_string(bi) + ": loss " +
                          std::to_string(mean_loss));
    model.zero_grads();
    model.backward(batches[bi]);
    const double sq =
        kernels::sum_squares(model.backend(), model.grads().data(), total);
    const double gnorm = std::sqrt(sq);
    if (!std::isfinite(gnorm))
      throw NonFiniteLoss("epoch " + std::to_string(epoch_index) + " batch " +
                          std::to_string(bi) + ": gradient norm " +
                          std::to_string(gnorm));
    const double scale = (opt.clip_norm > 0.0 && gnorm > opt.clip_norm)
                             ? opt.clip_norm / gnorm
                             : 1.0;
    ++state.step;
    kernels::adam_step(model.backend(), model.params().data(),
                       model.grads().data(), state.m.data(), state.v.data(),
                       total,
                       {opt.learning_rate, opt.beta1, opt.beta2, opt.eps,
                        scale, state.step});
    record.nll_sum += stats.nll_sum;
    record.n += stats.tokens;
  }
  if (record.n == 0) throw EmptyCorpus("train_epoch received no batches");
  return record;
}

template <typename T>
EvalRecord evaluate(Transformer<T>& model, const std::vector<Batch>& batches) {
  EvalRecord record;
  for (const Batch& batch : batches) {
    model.forward(batch, /*train=*/false);
    const auto stats = model.loss_and_dlogits(batch);
    if (!std::isfinite(stats.nll_sum))
      throw NonFiniteLoss("evaluation nll " + std::to_string(stats.nll_sum));
    record.nll_sum += stats.nll_sum;
    record.n += stats.tokens;
  }
  if (record.n == 0) throw EmptyCorpus("evaluate received no batches");
  return record;
}

template <typename T>
double batch_loss(Transformer<T>& model, const Batch& batch) {
  model.forward(batch, /*train=*/false);
  const auto stats = model.loss_and_dlogits(batch);
  return stats.nll_sum / static_cast<double>(stats.tokens);
}

template <typename T>
std::vector<T> analytic_gradients(Transformer<T>& model, const Batch& batch) {
  model.forward(batch, /*train=*/false);
  model.loss_and_dlogits(batch);
  model.zero_grads();
  model.backward(batch);
  return model.grads();
}

GradCheckResult finite_difference_check(Transformer<double>& model,
                                        const Batch& batch,
                                        const std::vector<double>& analytic,
                                        double epsilon, std::size_t n_coords,
                                        std::uint64_t seed) {
  const std::size_t total = model.layout().total;
  if (analytic.size() != total)
    throw ShapeMismatch("gradient vector size does not match the layout");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  std::unordered_set<std::size_t> chosen;
  if (n_coords >= total) {
    for (std::size_t i = 0; i < total; ++i) chosen.insert(i);
  } else {
    while (chosen.size() < n_coords) chosen.insert(pick(rng));
  }
  GradCheckResult result;
  for (std::size_t idx : chosen) {
    const double saved = model.params()[idx];
    model.params()[idx] = saved + epsilon;
    const double up = batch_loss(model, batch);
    model.params()[idx] = saved - epsilon;
    const double down = batch_loss(model, batch);
    model.params()[idx] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = analytic[idx];
    const double denom =
        std::max(std::max(std::fabs(a), std::fabs(numeric)), 1e-10);
    result.max_rel_error =
        std::max(result.max_rel_error, std::fabs(a - numeric) / denom);
    ++result.checked;
  }
  return result;
}

template EvalRecord train_epoch<float>(Transformer<float>&,
                                       const std::vector<Batch>&,
                                       AdamState<float>&, std::uint64_t);
template EvalRecord train_epoch<double>(Transformer<double>&,
                                        const std::vector<Batch>&,
                                        AdamState<double>&, std::uint64_t);
template EvalRecord evaluate<float>(Transformer<float>&,
                                    const std::vector<Batch>&);
template EvalRecord evaluate<double>(Transformer<double>&,
                                     const std::vector<Batch>&);
template double batch_loss<float>(Transformer<float>&, const Batch&);
template double batch_loss<double>(Transformer<double>&, const Batch&);
template std::vector<float> analytic_gradients<float>(Transformer<float>&,
                                                      const Batch&);
template std::vector<double> analytic_gradients<double>(Transformer<double>&,
                                                        const Batch&);

}  // namespace toklab::lm
