#pragma once

#include <cstdint>
#include <string>

namespace toklab::lm {

// Every kernel exists twice: a plain serial reference and an OpenMP version
// that distributes independent output elements across threads. Both compute
// each output element with the same serial reduction order, so results are
// bitwise identical regardless of backend or thread count.
enum class Backend { serial, openmp };

const char* backend_name(Backend backend);
Backend backend_from_name(const std::string& name);

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// Stateless per-element dropout decision; identical on every backend.
bool dropout_keep(std::uint64_t key, std::uint32_t site, std::uint64_t index,
                  double p);

namespace kernels {

using Index = std::int64_t;

// y = x * w + b;  x: (m,k), w: (k,n), b: (n), y: (m,n), all row-major.
template <typename T>
void linear_forward(Backend backend, const T* x, const T* w, const T* b, T* y,
                    Index m, Index k, Index n);

// dx (m,k) is overwritten (skipped when null); dw (k,n) and db (n) are
// accumulated into.
template <typename T>
void linear_backward(Backend backend, const T* x, const T* w, const T* dy,
                     T* dx, T* dw, T* db, Index m, Index k, Index n);

// out[m] = emb[ids[m]] * emb_scale + pos[m % t]; out: (b*t, e).
template <typename T>
void embedding_forward(Backend backend, const T* emb, const T* pos,
                       const std::int32_t* ids, T* out, Index b, Index t,
                       Index e, T emb_scale);

// demb[ids[m]] += emb_scale * dout[m]; parallelized over columns so repeated
// ids never race and the row accumulation order is fixed.
template <typename T>
void embedding_backward(Backend backend, const std::int32_t* ids,
                        const T* dout, T* demb, Index m, Index e, T emb_scale);

template <typename T>
void layernorm_forward(Backend backend, const T* x, const T* gamma,
                       const T* beta, T* y, T* mean, T* invstd, Index rows,
                       Index e);

// dx is overwritten; dgamma/dbeta are accumulated into.
template <typename T>
void layernorm_backward(Backend backend, const T* x, const T* gamma,
                        const T* mean, const T* invstd, const T* dy, T* dx,
                        T* dgamma, T* dbeta, Index rows, Index e);

// Causal scaled-dot attention. q,k,v,ctx are (b*t, h*dh) row-major with head
// hi occupying columns [hi*dh, (hi+1)*dh); probs is (b,h,t,t) with entries
// above the diagonal set to zero. Work is independent per (batch, head).
template <typename T>
void attention_forward(Backend backend, const T* q, const T* k, const T* v,
                       T* probs, T* ctx, Index b, Index h, Index t, Index dh);

// dq,dk,dv head slices are overwritten.
template <typename T>
void attention_backward(Backend backend, const T* q, const T* k, const T* v,
                        const T* probs, const T* dctx, T* dq, T* dk, T* dv,
                        Index b, Index h, Index t, Index dh);

template <typename T>
void relu_forward(Backend backend, const T* x, T* y, Index n);

template <typename T>
void relu_backward(Backend backend, const T* x, const T* dy, T* dx, Index n);

// Inverted dropout: kept elements are scaled by 1/(1-p). In-place safe.
template <typename T>
void dropout_forward(Backend backend, const T* x, T* y, Index n, double p,
                     std::uint64_t key, std::uint32_t site);

template <typename T>
void dropout_backward(Backend backend, const T* dy, T* dx, Index n, double p,
                      std::uint64_t key, std::uint32_t site);

// y = a + b, elementwise. In-place safe.
template <typename T>
void add(Backend backend, const T* a, const T* b, T* y, Index n);

// Softmax cross entropy per row; targets[i] < 0 marks an ignored row.
// row_nll[i] = -log P(target) (0 when ignored); when dlogits is non-null it
// receives (softmax - onehot) * dl_scale (zero rows when ignored). Returns
// the sum of row_nll accumulated serially in row order, in 64-bit.
template <typename T>
double softmax_xent(Backend backend, const T* logits,
                    const std::int32_t* targets, T* dlogits, double* row_nll,
                    Index rows, Index v, double dl_scale);

// Deterministic 64-bit sum of squares: fixed 4096-element blocks are reduced
// independently, then combined serially in block order.
template <typename T>
double sum_squares(Backend backend, const T* x, Index n);

struct AdamStepParams {
  double learning_rate;
  double beta1;
  double beta2;
  double eps;
  double grad_scale;       // gradient-clip factor applied on read
  std::int64_t step;       // 1-based, for bias correction
};

template <typename T>
void adam_step(Backend backend, T* param, const T* grad, T* m, T* v, Index n,
               const AdamStepParams& s);

}  // namespace kernels

}  // namespace toklab::lm
