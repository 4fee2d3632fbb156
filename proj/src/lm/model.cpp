#include "toklab/lm/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "toklab/errors.hpp"

namespace toklab::lm {

namespace {

// Dropout site ids: 0 after the embedding, then per layer one for the
// attention output and one for the feedforward output.
std::uint32_t attn_site(int layer) { return 1 + 2 * static_cast<std::uint32_t>(layer); }
std::uint32_t ffn_site(int layer) { return 2 + 2 * static_cast<std::uint32_t>(layer); }

}  // namespace

LMLayout::LMLayout(const LMConfig& config) {
  const auto v = static_cast<std::int64_t>(config.vocab_size);
  const auto e = static_cast<std::int64_t>(config.emsize);
  const auto f = static_cast<std::int64_t>(config.dim_feedforward);
  auto claim = [this](const std::string& name,
                      std::vector<std::int64_t> shape) {
    std::size_t count = 1;
    for (std::int64_t d : shape) count *= static_cast<std::size_t>(d);
    const std::size_t offset = total;
    tensors.push_back({name, std::move(shape), offset, count});
    total += count;
    return offset;
  };

  tok_emb = claim("tok_emb", {v, e});
  layers.resize(static_cast<std::size_t>(config.nlayers));
  for (int l = 0; l < config.nlayers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Layer& lo = layers[static_cast<std::size_t>(l)];
    lo.ln1_g = claim(p + "ln1_g", {e});
    lo.ln1_b = claim(p + "ln1_b", {e});
    lo.wq = claim(p + "wq", {e, e});
    lo.bq = claim(p + "bq", {e});
    lo.wk = claim(p + "wk", {e, e});
    lo.bk = claim(p + "bk", {e});
    lo.wv = claim(p + "wv", {e, e});
    lo.bv = claim(p + "bv", {e});
    lo.wo = claim(p + "wo", {e, e});
    lo.bo = claim(p + "bo", {e});
    lo.ln2_g = claim(p + "ln2_g", {e});
    lo.ln2_b = claim(p + "ln2_b", {e});
    lo.w1 = claim(p + "w1", {e, f});
    lo.b1 = claim(p + "b1", {f});
    lo.w2 = claim(p + "w2", {f, e});
    lo.b2 = claim(p + "b2", {e});
  }
  lnf_g = claim("final_ln_g", {e});
  lnf_b = claim("final_ln_b", {e});
  wout = claim("out_w", {e, v});
  bout = claim("out_b", {v});
}

template <typename T>
void Workspace<T>::ensure(const LMConfig& config, int b, int t) {
  if (batch == b && seq == t && !stream.empty()) return;
  batch = b;
  seq = t;
  const std::size_t m = static_cast<std::size_t>(b) * t;
  const std::size_t e = static_cast<std::size_t>(config.emsize);
  const std::size_t f = static_cast<std::size_t>(config.dim_feedforward);
  const std::size_t v = static_cast<std::size_t>(config.vocab_size);
  const std::size_t h = static_cast<std::size_t>(config.nhead);

  stream.assign(static_cast<std::size_t>(config.nlayers) + 1,
                std::vector<T>(m * e));
  layers.assign(static_cast<std::size_t>(config.nlayers), LayerActs{});
  for (auto& lw : layers) {
    lw.ln1_out.assign(m * e, T(0));
    lw.ln1_mean.assign(m, T(0));
    lw.ln1_invstd.assign(m, T(0));
    lw.q.assign(m * e, T(0));
    lw.k.assign(m * e, T(0));
    lw.v.assign(m * e, T(0));
    lw.probs.assign(static_cast<std::size_t>(b) * h * t * t, T(0));
    lw.ctx.assign(m * e, T(0));
    lw.h_mid.assign(m * e, T(0));
    lw.ln2_out.assign(m * e, T(0));
    lw.ln2_mean.assign(m, T(0));
    lw.ln2_invstd.assign(m, T(0));
    lw.z1.assign(m * f, T(0));
    lw.a1.assign(m * f, T(0));
  }
  lnf_out.assign(m * e, T(0));
  lnf_mean.assign(m, T(0));
  lnf_invstd.assign(m, T(0));
  logits.assign(m * v, T(0));
  dlogits.assign(m * v, T(0));
  dhidden.assign(m * e, T(0));
  dh.assign(m * e, T(0));
  g1.assign(m * e, T(0));
  g2.assign(m * e, T(0));
  g3.assign(m * e, T(0));
  dq.assign(m * e, T(0));
  dk.assign(m * e, T(0));
  dv.assign(m * e, T(0));
  f1.assign(m * f, T(0));
  f2.assign(m * f, T(0));
  targets.assign(m, -1);
  row_nll.assign(m, 0.0);
}

template <typename T>
Transformer<T>::Transformer(const LMConfig& config, Backend backend)
    : config_(config), backend_(backend) {
  config_.validate();
  layout_ = LMLayout(config_);
  emb_scale_ = static_cast<T>(std::sqrt(static_cast<double>(config_.emsize)));
  params_.assign(layout_.total, T(0));
  grads_.assign(layout_.total, T(0));
  // Fixed sinusoidal position table for all positions up to seq_len.
  const int e = config_.emsize;
  pos_.assign(static_cast<std::size_t>(config_.seq_len) * e, T(0));
  for (int t = 0; t < config_.seq_len; ++t) {
    for (int j = 0; j < e; ++j) {
      const int pair = j / 2;
      const double rate =
          std::pow(10000.0, -2.0 * pair / static_cast<double>(e));
      const double angle = t * rate;
      pos_[static_cast<std::size_t>(t) * e + j] = static_cast<T>(
          j % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
}

template <typename T>
void Transformer<T>::init_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  for (const TensorInfo& info : layout_.tensors) {
    T* data = params_.data() + info.offset;
    const bool is_matrix = info.shape.size() == 2;
    const bool is_scale = info.name.size() >= 2 &&
                          info.name.compare(info.name.size() - 2, 2, "_g") == 0;
    if (is_matrix) {
      for (std::size_t i = 0; i < info.size; ++i)
        data[i] = static_cast<T>(normal(rng));
    } else {
      std::fill(data, data + info.size, is_scale ? T(1) : T(0));
    }
  }
}

template <typename T>
void Transformer<T>::check_batch(const Batch& batch) const {
  if (batch.batch_size < 1 || batch.seq_len < 1)
    throw ShapeMismatch("batch must be at least 1x1");
  if (batch.seq_len > config_.seq_len)
    throw ShapeMismatch("batch seq_len " + std::to_string(batch.seq_len) +
                        " exceeds model seq_len " +
                        std::to_string(config_.seq_len));
  const std::size_t expect = static_cast<std::size_t>(batch.batch_size) *
                             static_cast<std::size_t>(batch.seq_len);
  if (batch.ids.size() != expect)
    throw ShapeMismatch("batch id buffer has " +
                        std::to_string(batch.ids.size()) + " entries, want " +
                        std::to_string(expect));
  for (TokenId id : batch.ids)
    if (id < 0 || id >= config_.vocab_size)
      throw ShapeMismatch("token id " + std::to_string(id) +
                          " outside vocabulary of size " +
                          std::to_string(config_.vocab_size));
}

template <typename T>
void Transformer<T>::forward(const Batch& batch, bool train,
                             std::uint64_t dropout_key) {
  check_batch(batch);
  const int b = batch.batch_size;
  const int t = batch.seq_len;
  ws_.ensure(config_, b, t);
  ws_.train = train;
  ws_.dropout_key = dropout_key;

  using kernels::Index;
  const Index m = static_cast<Index>(b) * t;
  const Index e = config_.emsize;
  const Index f = config_.dim_feedforward;
  const Index v = config_.vocab_size;
  const Index h = config_.nhead;
  const Index dh = config_.head_dim();
  const double p = config_.dropout;
  const bool drop = train && p > 0.0;
  const T* P = params_.data();

  kernels::embedding_forward(backend_, P + layout_.tok_emb, pos_.data(),
                             batch.ids.data(), ws_.stream[0].data(), b, t, e,
                             emb_scale_);
  if (drop)
    kernels::dropout_forward(backend_, ws_.stream[0].data(),
                             ws_.stream[0].data(), m * e, p, dropout_key, 0);

  for (int l = 0; l < config_.nlayers; ++l) {
    const auto& lo = layout_.layers[static_cast<std::size_t>(l)];
    auto& lw = ws_.layers[static_cast<std::size_t>(l)];
    const T* x = ws_.stream[static_cast<std::size_t>(l)].data();

    kernels::layernorm_forward(backend_, x, P + lo.ln1_g, P + lo.ln1_b,
                               lw.ln1_out.data(), lw.ln1_mean.data(),
                               lw.ln1_invstd.data(), m, e);
    kernels::linear_forward(backend_, lw.ln1_out.data(), P + lo.wq, P + lo.bq,
                            lw.q.data(), m, e, e);
    kernels::linear_forward(backend_, lw.ln1_out.data(), P + lo.wk, P + lo.bk,
                            lw.k.data(), m, e, e);
    kernels::linear_forward(backend_, lw.ln1_out.data(), P + lo.wv, P + lo.bv,
                            lw.v.data(), m, e, e);
    kernels::attention_forward(backend_, lw.q.data(), lw.k.data(), lw.v.data(),
                               lw.probs.data(), lw.ctx.data(), b, h, t, dh);
    kernels::linear_forward(backend_, lw.ctx.data(), P + lo.wo, P + lo.bo,
                            ws_.g1.data(), m, e, e);
    if (drop)
      kernels::dropout_forward(backend_, ws_.g1.data(), ws_.g1.data(), m * e,
                               p, dropout_key, attn_site(l));
    kernels::add(backend_, x, ws_.g1.data(), lw.h_mid.data(), m * e);

    kernels::layernorm_forward(backend_, lw.h_mid.data(), P + lo.ln2_g,
                               P + lo.ln2_b, lw.ln2_out.data(),
                               lw.ln2_mean.data(), lw.ln2_invstd.data(), m, e);
    kernels::linear_forward(backend_, lw.ln2_out.data(), P + lo.w1, P + lo.b1,
                            lw.z1.data(), m, e, f);
    kernels::relu_forward(backend_, lw.z1.data(), lw.a1.data(), m * f);
    kernels::linear_forward(backend_, lw.a1.data(), P + lo.w2, P + lo.b2,
                            ws_.g1.data(), m, f, e);
    if (drop)
      kernels::dropout_forward(backend_, ws_.g1.data(), ws_.g1.data(), m * e,
                               p, dropout_key, ffn_site(l));
    kernels::add(backend_, lw.h_mid.data(), ws_.g1.data(),
                 ws_.stream[static_cast<std::size_t>(l) + 1].data(), m * e);
  }

  kernels::layernorm_forward(backend_, ws_.stream.back().data(),
                             P + layout_.lnf_g, P + layout_.lnf_b,
                             ws_.lnf_out.data(), ws_.lnf_mean.data(),
                             ws_.lnf_invstd.data(), m, e);
  kernels::linear_forward(backend_, ws_.lnf_out.data(), P + layout_.wout,
                          P + layout_.bout, ws_.logits.data(), m, e, v);
}

template <typename T>
typename Transformer<T>::LossStats Transformer<T>::loss_and_dlogits(
    const Batch& batch) {
  check_batch(batch);
  if (batch.seq_len < 2)
    throw ShapeMismatch("next-token loss needs seq_len >= 2");
  if (ws_.batch != batch.batch_size || ws_.seq != batch.seq_len)
    throw ShapeMismatch("loss_and_dlogits requires a prior forward pass");
  const int b = batch.batch_size;
  const int t = batch.seq_len;
  for (int bi = 0; bi < b; ++bi)
    for (int ti = 0; ti < t; ++ti)
      ws_.targets[static_cast<std::size_t>(bi) * t + ti] =
          ti + 1 < t ? batch.at(bi, ti + 1) : -1;
  const std::int64_t active = static_cast<std::int64_t>(b) * (t - 1);
  const double nll = kernels::softmax_xent(
      backend_, ws_.logits.data(), ws_.targets.data(), ws_.dlogits.data(),
      ws_.row_nll.data(), static_cast<kernels::Index>(b) * t,
      config_.vocab_size, 1.0 / static_cast<double>(active));
  return LossStats{nll, active};
}

template <typename T>
void Transformer<T>::zero_grads() {
  std::fill(grads_.begin(), grads_.end(), T(0));
}

template <typename T>
void Transformer<T>::backward(const Batch& batch) {
  using kernels::Index;
  const Index m = static_cast<Index>(ws_.batch) * ws_.seq;
  const Index e = config_.emsize;
  const Index v = config_.vocab_size;
  kernels::linear_backward(backend_, ws_.lnf_out.data(),
                           params_.data() + layout_.wout, ws_.dlogits.data(),
                           ws_.dhidden.data(), grads_.data() + layout_.wout,
                           grads_.data() + layout_.bout, m, e, v);
  backward_from_dhidden(batch);
}

template <typename T>
void Transformer<T>::backward_from_dhidden(const Batch& batch) {
  if (ws_.batch != batch.batch_size || ws_.seq != batch.seq_len)
    throw ShapeMismatch("backward requires a prior forward pass");
  using kernels::Index;
  const int b = ws_.batch;
  const int t = ws_.seq;
  const Index m = static_cast<Index>(b) * t;
  const Index e = config_.emsize;
  const Index f = config_.dim_feedforward;
  const Index h = config_.nhead;
  const Index dh = config_.head_dim();
  const double p = config_.dropout;
  const bool drop = ws_.train && p > 0.0;
  const std::uint64_t key = ws_.dropout_key;
  const T* P = params_.data();
  T* G = grads_.data();

  kernels::layernorm_backward(backend_, ws_.stream.back().data(),
                              P + layout_.lnf_g, ws_.lnf_mean.data(),
                              ws_.lnf_invstd.data(), ws_.dhidden.data(),
                              ws_.dh.data(), G + layout_.lnf_g,
                              G + layout_.lnf_b, m, e);

  for (int l = config_.nlayers - 1; l >= 0; --l) {
    const auto& lo = layout_.layers[static_cast<std::size_t>(l)];
    auto& lw = ws_.layers[static_cast<std::size_t>(l)];
    const T* x = ws_.stream[static_cast<std::size_t>(l)].data();

    // Feedforward branch; ws_.dh holds the gradient w.r.t. the block output.
    if (drop)
      kernels::dropout_backward(backend_, ws_.dh.data(), ws_.g1.data(), m * e,
                                p, key, ffn_site(l));
    else
      std::copy(ws_.dh.begin(), ws_.dh.end(), ws_.g1.begin());
    kernels::linear_backward(backend_, lw.a1.data(), P + lo.w2, ws_.g1.data(),
                             ws_.f1.data(), G + lo.w2, G + lo.b2, m, f, e);
    kernels::relu_backward(backend_, lw.z1.data(), ws_.f1.data(),
                           ws_.f2.data(), m * f);
    kernels::linear_backward(backend_, lw.ln2_out.data(), P + lo.w1,
                             ws_.f2.data(), ws_.g2.data(), G + lo.w1,
                             G + lo.b1, m, e, f);
    kernels::layernorm_backward(backend_, lw.h_mid.data(), P + lo.ln2_g,
                                lw.ln2_mean.data(), lw.ln2_invstd.data(),
                                ws_.g2.data(), ws_.g3.data(), G + lo.ln2_g,
                                G + lo.ln2_b, m, e);
    kernels::add(backend_, ws_.dh.data(), ws_.g3.data(), ws_.dh.data(), m * e);

    // Attention branch; ws_.dh now holds the gradient w.r.t. h_mid.
    if (drop)
      kernels::dropout_backward(backend_, ws_.dh.data(), ws_.g1.data(), m * e,
                                p, key, attn_site(l));
    else
      std::copy(ws_.dh.begin(), ws_.dh.end(), ws_.g1.begin());
    kernels::linear_backward(backend_, lw.ctx.data(), P + lo.wo, ws_.g1.data(),
                             ws_.g2.data(), G + lo.wo, G + lo.bo, m, e, e);
    kernels::attention_backward(backend_, lw.q.data(), lw.k.data(),
                                lw.v.data(), lw.probs.data(), ws_.g2.data(),
                                ws_.dq.data(), ws_.dk.data(), ws_.dv.data(), b,
                                h, t, dh);
    kernels::linear_backward(backend_, lw.ln1_out.data(), P + lo.wq,
                             ws_.dq.data(), ws_.g1.data(), G + lo.wq,
                             G + lo.bq, m, e, e);
    kernels::linear_backward(backend_, lw.ln1_out.data(), P + lo.wk,
                             ws_.dk.data(), ws_.g2.data(), G + lo.wk,
                             G + lo.bk, m, e, e);
    kernels::add(backend_, ws_.g1.data(), ws_.g2.data(), ws_.g1.data(), m * e);
    kernels::linear_backward(backend_, lw.ln1_out.data(), P + lo.wv,
                             ws_.dv.data(), ws_.g2.data(), G + lo.wv,
                             G + lo.bv, m, e, e);
    kernels::add(backend_, ws_.g1.data(), ws_.g2.data(), ws_.g1.data(), m * e);
    kernels::layernorm_backward(backend_, x, P + lo.ln1_g, lw.ln1_mean.data(),
                                lw.ln1_invstd.data(), ws_.g1.data(),
                                ws_.g2.data(), G + lo.ln1_g, G + lo.ln1_b, m,
                                e);
    kernels::add(backend_, ws_.dh.data(), ws_.g2.data(), ws_.dh.data(), m * e);
  }

  if (drop)
    kernels::dropout_backward(backend_, ws_.dh.data(), ws_.g1.data(), m * e, p,
                              key, 0);
  else
    std::copy(ws_.dh.begin(), ws_.dh.end(), ws_.g1.begin());
  kernels::embedding_backward(backend_, batch.ids.data(), ws_.g1.data(),
                              G + layout_.tok_emb, m, e, emb_scale_);
}

template struct Workspace<float>;
template struct Workspace<double>;
template class Transformer<float>;
template class Transformer<double>;

}  // namespace toklab::lm
