#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "toklab/corpus.hpp"
#include "toklab/lm/config.hpp"
#include "toklab/lm/kernels.hpp"

namespace toklab::lm {

struct TensorInfo {
  std::string name;
  std::vector<std::int64_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Offsets of every tensor inside the flat parameter vector. Tensor order is
// fixed and shared by initialization and checkpoints.
struct LMLayout {
  struct Layer {
    std::size_t ln1_g, ln1_b;
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln2_g, ln2_b;
    std::size_t w1, b1, w2, b2;
  };

  LMLayout() = default;
  explicit LMLayout(const LMConfig& config);

  std::size_t tok_emb = 0;
  std::vector<Layer> layers;
  std::size_t lnf_g = 0, lnf_b = 0;
  std::size_t wout = 0, bout = 0;
  std::vector<TensorInfo> tensors;
  std::size_t total = 0;
};

// Activation storage for one forward/backward pass; resized on demand.
template <typename T>
struct Workspace {
  int batch = 0, seq = 0;
  bool train = false;
  std::uint64_t dropout_key = 0;

  // stream[l] is the residual stream entering block l; stream.back() is the
  // final block output (input of the last normalization).
  std::vector<std::vector<T>> stream;

  struct LayerActs {
    std::vector<T> ln1_out, ln1_mean, ln1_invstd;
    std::vector<T> q, k, v, probs, ctx;
    std::vector<T> h_mid;
    std::vector<T> ln2_out, ln2_mean, ln2_invstd;
    std::vector<T> z1, a1;
  };
  std::vector<LayerActs> layers;

  std::vector<T> lnf_out, lnf_mean, lnf_invstd;
  std::vector<T> logits, dlogits;
  std::vector<T> dhidden;  // gradient w.r.t. lnf_out, filled by the caller
                           // (or by backward()) before the trunk pass
  std::vector<T> dh, g1, g2, g3, dq, dk, dv;  // (m, e) scratch
  std::vector<T> f1, f2;                      // (m, f) scratch
  std::vector<std::int32_t> targets;
  std::vector<double> row_nll;

  void ensure(const LMConfig& config, int b, int t);
};

template <typename T>
class Transformer {
 public:
  explicit Transformer(const LMConfig& config,
                       Backend backend = Backend::openmp);

  // Deterministic initialization in tensor-layout order: weights and the
  // embedding ~ N(0, 0.02), biases 0, norm scales 1.
  void init_params(std::uint64_t seed);

  // Computes logits for the batch. Train mode applies dropout keyed by
  // dropout_key; eval mode ignores the key and is fully deterministic.
  void forward(const Batch& batch, bool train = false,
               std::uint64_t dropout_key = 0);

  struct LossStats {
    double nll_sum = 0.0;
    std::int64_t tokens = 0;
  };

  // Next-token cross entropy inside each row: position t is scored against
  // ids[t+1]; the final column has no target. Fills workspace dlogits with
  // the gradient of the mean loss. Requires forward() on the same batch.
  LossStats loss_and_dlogits(const Batch& batch);

  void zero_grads();

  // Backpropagates workspace dlogits through the whole model.
  void backward(const Batch& batch);

  // Backpropagates workspace dhidden (gradient w.r.t. the final normalized
  // states) through the trunk, skipping the output projection. Used when a
  // task head sits on top of the representations.
  void backward_from_dhidden(const Batch& batch);

  const std::vector<T>& logits() const { return ws_.logits; }
  // Final normalized hidden states, (batch*seq, emsize) row-major.
  const std::vector<T>& hidden() const { return ws_.lnf_out; }
  std::vector<T>& dhidden() { return ws_.dhidden; }

  std::vector<T>& params() { return params_; }
  const std::vector<T>& params() const { return params_; }
  std::vector<T>& grads() { return grads_; }
  const std::vector<T>& grads() const { return grads_; }

  const LMConfig& config() const { return config_; }
  const LMLayout& layout() const { return layout_; }
  Backend backend() const { return backend_; }
  void set_backend(Backend backend) { backend_ = backend; }

 private:
  void check_batch(const Batch& batch) const;

  LMConfig config_;
  LMLayout layout_;
  Backend backend_;
  T emb_scale_;
  std::vector<T> pos_;  // sinusoidal table, (seq_len, emsize)
  std::vector<T> params_;
  std::vector<T> grads_;
  Workspace<T> ws_;
};

extern template class Transformer<float>;
extern template class Transformer<double>;

}  // namespace toklab::lm
