#include "toklab/lm/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "toklab/errors.hpp"

namespace toklab::lm {

const char* backend_name(Backend backend) {
  return backend == Backend::serial ? "serial" : "openmp";
}

Backend backend_from_name(const std::string& name) {
  if (name == "serial") return Backend::serial;
  if (name == "openmp") return Backend::openmp;
  throw ConfigInvalid("unknown backend '" + name + "' (serial|openmp)");
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(a) ^ (b + 0x9E3779B97F4A7C15ULL));
}

bool dropout_keep(std::uint64_t key, std::uint32_t site, std::uint64_t index,
                  double p) {
  std::uint64_t word = key ^ (static_cast<std::uint64_t>(site) *
                              0xFF51AFD7ED558CCDULL) ^
                       (index * 0xC4CEB9FE1A85EC53ULL);
  std::uint64_t h = splitmix64(word);
  double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return u >= p;
}

namespace kernels {

namespace {

// ---- per-output workers; both backends run exactly this code ----

template <typename T>
inline void linear_forward_row(const T* x_row, const T* w, const T* b,
                               T* y_row, Index k, Index n) {
  for (Index j = 0; j < n; ++j) y_row[j] = b[j];
  for (Index kk = 0; kk < k; ++kk) {
    const T xv = x_row[kk];
    const T* w_row = w + kk * n;
    for (Index j = 0; j < n; ++j) y_row[j] += xv * w_row[j];
  }
}

template <typename T>
inline void linear_backward_dx_row(const T* dy_row, const T* w, T* dx_row,
                                   Index k, Index n) {
  for (Index kk = 0; kk < k; ++kk) {
    const T* w_row = w + kk * n;
    T acc = 0;
    for (Index j = 0; j < n; ++j) acc += dy_row[j] * w_row[j];
    dx_row[kk] = acc;
  }
}

template <typename T>
inline void linear_backward_dw_row(const T* x, const T* dy, T* dw_row,
                                   Index kk, Index m, Index k, Index n) {
  for (Index i = 0; i < m; ++i) {
    const T xv = x[i * k + kk];
    const T* dy_row = dy + i * n;
    for (Index j = 0; j < n; ++j) dw_row[j] += xv * dy_row[j];
  }
}

template <typename T>
inline void linear_backward_db_col(const T* dy, T* db, Index j, Index m,
                                   Index n) {
  T acc = 0;
  for (Index i = 0; i < m; ++i) acc += dy[i * n + j];
  db[j] += acc;
}

template <typename T>
inline void embedding_forward_row(const T* emb, const T* pos,
                                  const std::int32_t* ids, T* out, Index row,
                                  Index t, Index e, T emb_scale) {
  const T* emb_row = emb + static_cast<Index>(ids[row]) * e;
  const T* pos_row = pos + (row % t) * e;
  T* out_row = out + row * e;
  for (Index j = 0; j < e; ++j)
    out_row[j] = emb_row[j] * emb_scale + pos_row[j];
}

template <typename T>
inline void embedding_backward_col(const std::int32_t* ids, const T* dout,
                                   T* demb, Index col, Index m, Index e,
                                   T emb_scale) {
  for (Index row = 0; row < m; ++row)
    demb[static_cast<Index>(ids[row]) * e + col] +=
        emb_scale * dout[row * e + col];
}

constexpr double kLnEps = 1e-5;

template <typename T>
inline void layernorm_forward_row(const T* x, const T* gamma, const T* beta,
                                  T* y, T* mean, T* invstd, Index row,
                                  Index e) {
  const T* xr = x + row * e;
  T* yr = y + row * e;
  T mu = 0;
  for (Index j = 0; j < e; ++j) mu += xr[j];
  mu /= static_cast<T>(e);
  T var = 0;
  for (Index j = 0; j < e; ++j) {
    const T d = xr[j] - mu;
    var += d * d;
  }
  var /= static_cast<T>(e);
  const T is = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
  mean[row] = mu;
  invstd[row] = is;
  for (Index j = 0; j < e; ++j)
    yr[j] = (xr[j] - mu) * is * gamma[j] + beta[j];
}

template <typename T>
inline void layernorm_backward_dx_row(const T* x, const T* gamma,
                                      const T* mean, const T* invstd,
                                      const T* dy, T* dx, Index row, Index e) {
  const T* xr = x + row * e;
  const T* dyr = dy + row * e;
  T* dxr = dx + row * e;
  const T mu = mean[row];
  const T is = invstd[row];
  T sum_g = 0, sum_gx = 0;
  for (Index j = 0; j < e; ++j) {
    const T g = dyr[j] * gamma[j];
    sum_g += g;
    sum_gx += g * (xr[j] - mu) * is;
  }
  const T inv_e = T(1) / static_cast<T>(e);
  for (Index j = 0; j < e; ++j) {
    const T g = dyr[j] * gamma[j];
    const T xh = (xr[j] - mu) * is;
    dxr[j] = is * (g - sum_g * inv_e - xh * sum_gx * inv_e);
  }
}

template <typename T>
inline void layernorm_backward_param_col(const T* x, const T* mean,
                                         const T* invstd, const T* dy,
                                         T* dgamma, T* dbeta, Index col,
                                         Index rows, Index e) {
  T dg = 0, db = 0;
  for (Index row = 0; row < rows; ++row) {
    const T xh = (x[row * e + col] - mean[row]) * invstd[row];
    const T d = dy[row * e + col];
    dg += d * xh;
    db += d;
  }
  dgamma[col] += dg;
  dbeta[col] += db;
}

template <typename T>
inline void attention_forward_bh(const T* q, const T* k, const T* v, T* probs,
                                 T* ctx, Index bi, Index hi, Index h, Index t,
                                 Index dh) {
  const Index e = h * dh;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  T* pbh = probs + ((bi * h + hi) * t) * t;
  for (Index ti = 0; ti < t; ++ti) {
    const T* qrow = q + (bi * t + ti) * e + hi * dh;
    T* prow = pbh + ti * t;
    T mx = -std::numeric_limits<T>::infinity();
    for (Index j = 0; j <= ti; ++j) {
      const T* krow = k + (bi * t + j) * e + hi * dh;
      T s = 0;
      for (Index d = 0; d < dh; ++d) s += qrow[d] * krow[d];
      s *= scale;
      prow[j] = s;
      mx = std::max(mx, s);
    }
    T z = 0;
    for (Index j = 0; j <= ti; ++j) {
      const T w = std::exp(prow[j] - mx);
      prow[j] = w;
      z += w;
    }
    const T inv = T(1) / z;
    for (Index j = 0; j <= ti; ++j) prow[j] *= inv;
    for (Index j = ti + 1; j < t; ++j) prow[j] = 0;
    T* crow = ctx + (bi * t + ti) * e + hi * dh;
    for (Index d = 0; d < dh; ++d) crow[d] = 0;
    for (Index j = 0; j <= ti; ++j) {
      const T p = prow[j];
      const T* vrow = v + (bi * t + j) * e + hi * dh;
      for (Index d = 0; d < dh; ++d) crow[d] += p * vrow[d];
    }
  }
}

template <typename T>
inline void attention_backward_bh(const T* q, const T* k, const T* v,
                                  const T* probs, const T* dctx, T* dq, T* dk,
                                  T* dv, Index bi, Index hi, Index h, Index t,
                                  Index dh) {
  const Index e = h * dh;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const T* pbh = probs + ((bi * h + hi) * t) * t;
  for (Index ti = 0; ti < t; ++ti) {
    T* slice = dq + (bi * t + ti) * e + hi * dh;
    for (Index d = 0; d < dh; ++d) slice[d] = 0;
    slice = dk + (bi * t + ti) * e + hi * dh;
    for (Index d = 0; d < dh; ++d) slice[d] = 0;
    slice = dv + (bi * t + ti) * e + hi * dh;
    for (Index d = 0; d < dh; ++d) slice[d] = 0;
  }
  std::vector<T> dp(static_cast<std::size_t>(t));
  for (Index ti = 0; ti < t; ++ti) {
    const T* prow = pbh + ti * t;
    const T* dcrow = dctx + (bi * t + ti) * e + hi * dh;
    for (Index j = 0; j <= ti; ++j) {
      const T* vrow = v + (bi * t + j) * e + hi * dh;
      T* dvrow = dv + (bi * t + j) * e + hi * dh;
      T acc = 0;
      const T p = prow[j];
      for (Index d = 0; d < dh; ++d) {
        acc += dcrow[d] * vrow[d];
        dvrow[d] += p * dcrow[d];
      }
      dp[static_cast<std::size_t>(j)] = acc;
    }
    T s = 0;
    for (Index j = 0; j <= ti; ++j)
      s += prow[j] * dp[static_cast<std::size_t>(j)];
    const T* qrow = q + (bi * t + ti) * e + hi * dh;
    T* dqrow = dq + (bi * t + ti) * e + hi * dh;
    for (Index j = 0; j <= ti; ++j) {
      const T ds = prow[j] * (dp[static_cast<std::size_t>(j)] - s) * scale;
      const T* krow = k + (bi * t + j) * e + hi * dh;
      T* dkrow = dk + (bi * t + j) * e + hi * dh;
      for (Index d = 0; d < dh; ++d) {
        dqrow[d] += ds * krow[d];
        dkrow[d] += ds * qrow[d];
      }
    }
  }
}

template <typename T>
inline double softmax_xent_row(const T* logits, const std::int32_t* targets,
                               T* dlogits, double* row_nll, Index row, Index v,
                               double dl_scale) {
  const T* lr = logits + row * v;
  T* dr = dlogits ? dlogits + row * v : nullptr;
  if (targets[row] < 0) {
    row_nll[row] = 0.0;
    if (dr)
      for (Index j = 0; j < v; ++j) dr[j] = 0;
    return 0.0;
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (Index j = 0; j < v; ++j)
    mx = std::max(mx, static_cast<double>(lr[j]));
  double z = 0.0;
  for (Index j = 0; j < v; ++j)
    z += std::exp(static_cast<double>(lr[j]) - mx);
  const double lse = mx + std::log(z);
  const double nll = lse - static_cast<double>(lr[targets[row]]);
  row_nll[row] = nll;
  if (dr) {
    const double inv_z = 1.0 / z;
    for (Index j = 0; j < v; ++j) {
      double p = std::exp(static_cast<double>(lr[j]) - mx) * inv_z;
      if (j == targets[row]) p -= 1.0;
      dr[j] = static_cast<T>(p * dl_scale);
    }
  }
  return nll;
}

constexpr Index kSumBlock = 4096;

template <typename T>
inline double sum_squares_block(const T* x, Index begin, Index end) {
  double acc = 0.0;
  for (Index i = begin; i < end; ++i) {
    const double d = static_cast<double>(x[i]);
    acc += d * d;
  }
  return acc;
}

template <typename T>
inline void adam_step_element(T* param, const T* grad, T* m, T* v, Index i,
                              const AdamStepParams& s, double bc1, double bc2) {
  const double g = static_cast<double>(grad[i]) * s.grad_scale;
  const double mi = s.beta1 * static_cast<double>(m[i]) + (1.0 - s.beta1) * g;
  const double vi =
      s.beta2 * static_cast<double>(v[i]) + (1.0 - s.beta2) * g * g;
  m[i] = static_cast<T>(mi);
  v[i] = static_cast<T>(vi);
  const double mhat = mi / bc1;
  const double vhat = vi / bc2;
  param[i] = static_cast<T>(static_cast<double>(param[i]) -
                            s.learning_rate * mhat /
                                (std::sqrt(vhat) + s.eps));
}

}  // namespace

// ---- serial reference drivers ----

namespace serial {

template <typename T>
void linear_forward(const T* x, const T* w, const T* b, T* y, Index m, Index k,
                    Index n) {
  for (Index i = 0; i < m; ++i)
    linear_forward_row(x + i * k, w, b, y + i * n, k, n);
}

template <typename T>
void linear_backward(const T* x, const T* w, const T* dy, T* dx, T* dw, T* db,
                     Index m, Index k, Index n) {
  if (dx)
    for (Index i = 0; i < m; ++i)
      linear_backward_dx_row(dy + i * n, w, dx + i * k, k, n);
  for (Index kk = 0; kk < k; ++kk)
    linear_backward_dw_row(x, dy, dw + kk * n, kk, m, k, n);
  for (Index j = 0; j < n; ++j) linear_backward_db_col(dy, db, j, m, n);
}

template <typename T>
void embedding_forward(const T* emb, const T* pos, const std::int32_t* ids,
                       T* out, Index b, Index t, Index e, T emb_scale) {
  for (Index row = 0; row < b * t; ++row)
    embedding_forward_row(emb, pos, ids, out, row, t, e, emb_scale);
}

template <typename T>
void embedding_backward(const std::int32_t* ids, const T* dout, T* demb,
                        Index m, Index e, T emb_scale) {
  for (Index col = 0; col < e; ++col)
    embedding_backward_col(ids, dout, demb, col, m, e, emb_scale);
}

template <typename T>
void layernorm_forward(const T* x, const T* gamma, const T* beta, T* y,
                       T* mean, T* invstd, Index rows, Index e) {
  for (Index row = 0; row < rows; ++row)
    layernorm_forward_row(x, gamma, beta, y, mean, invstd, row, e);
}

template <typename T>
void layernorm_backward(const T* x, const T* gamma, const T* mean,
                        const T* invstd, const T* dy, T* dx, T* dgamma,
                        T* dbeta, Index rows, Index e) {
  for (Index row = 0; row < rows; ++row)
    layernorm_backward_dx_row(x, gamma, mean, invstd, dy, dx, row, e);
  for (Index col = 0; col < e; ++col)
    layernorm_backward_param_col(x, mean, invstd, dy, dgamma, dbeta, col, rows,
                                 e);
}

template <typename T>
void attention_forward(const T* q, const T* k, const T* v, T* probs, T* ctx,
                       Index b, Index h, Index t, Index dh) {
  for (Index bi = 0; bi < b; ++bi)
    for (Index hi = 0; hi < h; ++hi)
      attention_forward_bh(q, k, v, probs, ctx, bi, hi, h, t, dh);
}

template <typename T>
void attention_backward(const T* q, const T* k, const T* v, const T* probs,
                        const T* dctx, T* dq, T* dk, T* dv, Index b, Index h,
                        Index t, Index dh) {
  for (Index bi = 0; bi < b; ++bi)
    for (Index hi = 0; hi < h; ++hi)
      attention_backward_bh(q, k, v, probs, dctx, dq, dk, dv, bi, hi, h, t,
                            dh);
}

template <typename T>
void relu_forward(const T* x, T* y, Index n) {
  for (Index i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward(const T* x, const T* dy, T* dx, Index n) {
  for (Index i = 0; i < n; ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
}

template <typename T>
void dropout_forward(const T* x, T* y, Index n, double p, std::uint64_t key,
                     std::uint32_t site) {
  const T inv = static_cast<T>(1.0 / (1.0 - p));
  for (Index i = 0; i < n; ++i)
    y[i] = dropout_keep(key, site, static_cast<std::uint64_t>(i), p)
               ? x[i] * inv
               : T(0);
}

template <typename T>
void add(const T* a, const T* b, T* y, Index n) {
  for (Index i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

template <typename T>
void softmax_xent_rows(const T* logits, const std::int32_t* targets,
                       T* dlogits, double* row_nll, Index rows, Index v,
                       double dl_scale) {
  for (Index row = 0; row < rows; ++row)
    softmax_xent_row(logits, targets, dlogits, row_nll, row, v, dl_scale);
}

template <typename T>
void sum_squares_blocks(const T* x, Index n, double* partial, Index nblocks) {
  for (Index bi = 0; bi < nblocks; ++bi)
    partial[bi] =
        sum_squares_block(x, bi * kSumBlock, std::min(n, (bi + 1) * kSumBlock));
}

template <typename T>
void adam_step(T* param, const T* grad, T* m, T* v, Index n,
               const AdamStepParams& s, double bc1, double bc2) {
  for (Index i = 0; i < n; ++i)
    adam_step_element(param, grad, m, v, i, s, bc1, bc2);
}

}  // namespace serial

// ---- OpenMP drivers: same workers, outer loop distributed ----

namespace openmp {

template <typename T>
void linear_forward(const T* x, const T* w, const T* b, T* y, Index m, Index k,
                    Index n) {
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < m; ++i)
    linear_forward_row(x + i * k, w, b, y + i * n, k, n);
}

template <typename T>
void linear_backward(const T* x, const T* w, const T* dy, T* dx, T* dw, T* db,
                     Index m, Index k, Index n) {
  if (dx) {
#pragma omp parallel for schedule(static)
    for (Index i = 0; i < m; ++i)
      linear_backward_dx_row(dy + i * n, w, dx + i * k, k, n);
  }
#pragma omp parallel for schedule(static)
  for (Index kk = 0; kk < k; ++kk)
    linear_backward_dw_row(x, dy, dw + kk * n, kk, m, k, n);
#pragma omp parallel for schedule(static)
  for (Index j = 0; j < n; ++j) linear_backward_db_col(dy, db, j, m, n);
}

template <typename T>
void embedding_forward(const T* emb, const T* pos, const std::int32_t* ids,
                       T* out, Index b, Index t, Index e, T emb_scale) {
  const Index m = b * t;
#pragma omp parallel for schedule(static)
  for (Index row = 0; row < m; ++row)
    embedding_forward_row(emb, pos, ids, out, row, t, e, emb_scale);
}

template <typename T>
void embedding_backward(const std::int32_t* ids, const T* dout, T* demb,
                        Index m, Index e, T emb_scale) {
#pragma omp parallel for schedule(static)
  for (Index col = 0; col < e; ++col)
    embedding_backward_col(ids, dout, demb, col, m, e, emb_scale);
}

template <typename T>
void layernorm_forward(const T* x, const T* gamma, const T* beta, T* y,
                       T* mean, T* invstd, Index rows, Index e) {
#pragma omp parallel for schedule(static)
  for (Index row = 0; row < rows; ++row)
    layernorm_forward_row(x, gamma, beta, y, mean, invstd, row, e);
}

template <typename T>
void layernorm_backward(const T* x, const T* gamma, const T* mean,
                        const T* invstd, const T* dy, T* dx, T* dgamma,
                        T* dbeta, Index rows, Index e) {
#pragma omp parallel for schedule(static)
  for (Index row = 0; row < rows; ++row)
    layernorm_backward_dx_row(x, gamma, mean, invstd, dy, dx, row, e);
#pragma omp parallel for schedule(static)
  for (Index col = 0; col < e; ++col)
    layernorm_backward_param_col(x, mean, invstd, dy, dgamma, dbeta, col, rows,
                                 e);
}

template <typename T>
void attention_forward(const T* q, const T* k, const T* v, T* probs, T* ctx,
                       Index b, Index h, Index t, Index dh) {
#pragma omp parallel for collapse(2) schedule(static)
  for (Index bi = 0; bi < b; ++bi)
    for (Index hi = 0; hi < h; ++hi)
      attention_forward_bh(q, k, v, probs, ctx, bi, hi, h, t, dh);
}

template <typename T>
void attention_backward(const T* q, const T* k, const T* v, const T* probs,
                        const T* dctx, T* dq, T* dk, T* dv, Index b, Index h,
                        Index t, Index dh) {
#pragma omp parallel for collapse(2) schedule(static)
  for (Index bi = 0; bi < b; ++bi)
    for (Index hi = 0; hi < h; ++hi)
      attention_backward_bh(q, k, v, probs, dctx, dq, dk, dv, bi, hi, h, t,
                            dh);
}

template <typename T>
void relu_forward(const T* x, T* y, Index n) {
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward(const T* x, const T* dy, T* dx, Index n) {
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
}

template <typename T>
void dropout_forward(const T* x, T* y, Index n, double p, std::uint64_t key,
                     std::uint32_t site) {
  const T inv = static_cast<T>(1.0 / (1.0 - p));
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i)
    y[i] = dropout_keep(key, site, static_cast<std::uint64_t>(i), p)
               ? x[i] * inv
               : T(0);
}

template <typename T>
void add(const T* a, const T* b, T* y, Index n) {
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

template <typename T>
void softmax_xent_rows(const T* logits, const std::int32_t* targets,
                       T* dlogits, double* row_nll, Index rows, Index v,
                       double dl_scale) {
#pragma omp parallel for schedule(static)
  for (Index row = 0; row < rows; ++row)
    softmax_xent_row(logits, targets, dlogits, row_nll, row, v, dl_scale);
}

template <typename T>
void sum_squares_blocks(const T* x, Index n, double* partial, Index nblocks) {
#pragma omp parallel for schedule(static)
  for (Index bi = 0; bi < nblocks; ++bi)
    partial[bi] =
        sum_squares_block(x, bi * kSumBlock, std::min(n, (bi + 1) * kSumBlock));
}

template <typename T>
void adam_step(T* param, const T* grad, T* m, T* v, Index n,
               const AdamStepParams& s, double bc1, double bc2) {
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i)
    adam_step_element(param, grad, m, v, i, s, bc1, bc2);
}

}  // namespace openmp

// ---- public dispatch ----

template <typename T>
void linear_forward(Backend backend, const T* x, const T* w, const T* b, T* y,
                    Index m, Index k, Index n) {
  if (backend == Backend::serial)
    serial::linear_forward(x, w, b, y, m, k, n);
  else
    openmp::linear_forward(x, w, b, y, m, k, n);
}

template <typename T>
void linear_backward(Backend backend, const T* x, const T* w, const T* dy,
                     T* dx, T* dw, T* db, Index m, Index k, Index n) {
  if (backend == Backend::serial)
    serial::linear_backward(x, w, dy, dx, dw, db, m, k, n);
  else
    openmp::linear_backward(x, w, dy, dx, dw, db, m, k, n);
}

template <typename T>
void embedding_forward(Backend backend, const T* emb, const T* pos,
                       const std::int32_t* ids, T* out, Index b, Index t,
                       Index e, T emb_scale) {
  if (backend == Backend::serial)
    serial::embedding_forward(emb, pos, ids, out, b, t, e, emb_scale);
  else
    openmp::embedding_forward(emb, pos, ids, out, b, t, e, emb_scale);
}

template <typename T>
void embedding_backward(Backend backend, const std::int32_t* ids,
                        const T* dout, T* demb, Index m, Index e,
                        T emb_scale) {
  if (backend == Backend::serial)
    serial::embedding_backward(ids, dout, demb, m, e, emb_scale);
  else
    openmp::embedding_backward(ids, dout, demb, m, e, emb_scale);
}

template <typename T>
void layernorm_forward(Backend backend, const T* x, const T* gamma,
                       const T* beta, T* y, T* mean, T* invstd, Index rows,
                       Index e) {
  if (backend == Backend::serial)
    serial::layernorm_forward(x, gamma, beta, y, mean, invstd, rows, e);
  else
    openmp::layernorm_forward(x, gamma, beta, y, mean, invstd, rows, e);
}

template <typename T>
void layernorm_backward(Backend backend, const T* x, const T* gamma,
                        const T* mean, const T* invstd, const T* dy, T* dx,
                        T* dgamma, T* dbeta, Index rows, Index e) {
  if (backend == Backend::serial)
    serial::layernorm_backward(x, gamma, mean, invstd, dy, dx, dgamma, dbeta,
                               rows, e);
  else
    openmp::layernorm_backward(x, gamma, mean, invstd, dy, dx, dgamma, dbeta,
                               rows, e);
}

template <typename T>
void attention_forward(Backend backend, const T* q, const T* k, const T* v,
                       T* probs, T* ctx, Index b, Index h, Index t, Index dh) {
  if (backend == Backend::serial)
    serial::attention_forward(q, k, v, probs, ctx, b, h, t, dh);
  else
    openmp::attention_forward(q, k, v, probs, ctx, b, h, t, dh);
}

template <typename T>
void attention_backward(Backend backend, const T* q, const T* k, const T* v,
                        const T* probs, const T* dctx, T* dq, T* dk, T* dv,
                        Index b, Index h, Index t, Index dh) {
  if (backend == Backend::serial)
    serial::attention_backward(q, k, v, probs, dctx, dq, dk, dv, b, h, t, dh);
  else
    openmp::attention_backward(q, k, v, probs, dctx, dq, dk, dv, b, h, t, dh);
}

template <typename T>
void relu_forward(Backend backend, const T* x, T* y, Index n) {
  if (backend == Backend::serial)
    serial::relu_forward(x, y, n);
  else
    openmp::relu_forward(x, y, n);
}

template <typename T>
void relu_backward(Backend backend, const T* x, const T* dy, T* dx, Index n) {
  if (backend == Backend::serial)
    serial::relu_backward(x, dy, dx, n);
  else
    openmp::relu_backward(x, dy, dx, n);
}

template <typename T>
void dropout_forward(Backend backend, const T* x, T* y, Index n, double p,
                     std::uint64_t key, std::uint32_t site) {
  if (backend == Backend::serial)
    serial::dropout_forward(x, y, n, p, key, site);
  else
    openmp::dropout_forward(x, y, n, p, key, site);
}

template <typename T>
void dropout_backward(Backend backend, const T* dy, T* dx, Index n, double p,
                      std::uint64_t key, std::uint32_t site) {
  // The mask is stateless, so the backward pass is the forward pass applied
  // to the incoming gradient.
  dropout_forward(backend, dy, dx, n, p, key, site);
}

template <typename T>
void add(Backend backend, const T* a, const T* b, T* y, Index n) {
  if (backend == Backend::serial)
    serial::add(a, b, y, n);
  else
    openmp::add(a, b, y, n);
}

template <typename T>
double softmax_xent(Backend backend, const T* logits,
                    const std::int32_t* targets, T* dlogits, double* row_nll,
                    Index rows, Index v, double dl_scale) {
  if (backend == Backend::serial)
    serial::softmax_xent_rows(logits, targets, dlogits, row_nll, rows, v,
                              dl_scale);
  else
    openmp::softmax_xent_rows(logits, targets, dlogits, row_nll, rows, v,
                              dl_scale);
  double total = 0.0;
  for (Index row = 0; row < rows; ++row) total += row_nll[row];
  return total;
}

template <typename T>
double sum_squares(Backend backend, const T* x, Index n) {
  if (n == 0) return 0.0;
  const Index nblocks = (n + kSumBlock - 1) / kSumBlock;
  std::vector<double> partial(static_cast<std::size_t>(nblocks));
  if (backend == Backend::serial)
    serial::sum_squares_blocks(x, n, partial.data(), nblocks);
  else
    openmp::sum_squares_blocks(x, n, partial.data(), nblocks);
  double total = 0.0;
  for (Index bi = 0; bi < nblocks; ++bi)
    total += partial[static_cast<std::size_t>(bi)];
  return total;
}

template <typename T>
void adam_step(Backend backend, T* param, const T* grad, T* m, T* v, Index n,
               const AdamStepParams& s) {
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  if (backend == Backend::serial)
    serial::adam_step(param, grad, m, v, n, s, bc1, bc2);
  else
    openmp::adam_step(param, grad, m, v, n, s, bc1, bc2);
}

#define TOKLAB_INSTANTIATE_KERNELS(T)                                         \
  template void linear_forward<T>(Backend, const T*, const T*, const T*, T*,  \
                                  Index, Index, Index);                       \
  template void linear_backward<T>(Backend, const T*, const T*, const T*,    \
                                   T*, T*, T*, Index, Index, Index);         \
  template void embedding_forward<T>(Backend, const T*, const T*,            \
                                     const std::int32_t*, T*, Index, Index,  \
                                     Index, T);                               \
  template void embedding_backward<T>(Backend, const std::int32_t*,          \
                                      const T*, T*, Index, Index, T);        \
  template void layernorm_forward<T>(Backend, const T*, const T*, const T*,  \
                                     T*, T*, T*, Index, Index);              \
  template void layernorm_backward<T>(Backend, const T*, const T*, const T*, \
                                      const T*, const T*, T*, T*, T*, Index, \
                                      Index);                                 \
  template void attention_forward<T>(Backend, const T*, const T*, const T*,  \
                                     T*, T*, Index, Index, Index, Index);    \
  template void attention_backward<T>(Backend, const T*, const T*, const T*, \
                                      const T*, const T*, T*, T*, T*, Index, \
                                      Index, Index, Index);                   \
  template void relu_forward<T>(Backend, const T*, T*, Index);               \
  template void relu_backward<T>(Backend, const T*, const T*, T*, Index);    \
  template void dropout_forward<T>(Backend, const T*, T*, Index, double,     \
                                   std::uint64_t, std::uint32_t);            \
  template void dropout_backward<T>(Backend, const T*, T*, Index, double,    \
                                    std::uint64_t, std::uint32_t);           \
  template void add<T>(Backend, const T*, const T*, T*, Index);              \
  template double softmax_xent<T>(Backend, const T*, const std::int32_t*,    \
                                  T*, double*, Index, Index, double);        \
  template double sum_squares<T>(Backend, const T*, Index);                  \
  template void adam_step<T>(Backend, T*, const T*, T*, T*, Index,           \
                             const AdamStepParams&)

TOKLAB_INSTANTIATE_KERNELS(float);
TOKLAB_INSTANTIATE_KERNELS(double);

#undef TOKLAB_INSTANTIATE_KERNELS

}  // namespace kernels

}  // namespace toklab::lm
