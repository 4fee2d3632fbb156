// Times the serial reference kernels against their OpenMP counterparts and
// verifies that both produce bitwise-identical results while doing so.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "toklab/lm/train.hpp"

using namespace toklab;
using namespace toklab::lm;
using kernels::Index;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Row {
  std::string name;
  double serial_s = 0;
  double openmp_s = 0;
  bool identical = true;
};

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  std::vector<float> v(n);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (auto& x : v) x = normal(rng);
  return v;
}

template <typename Fn>
double time_best_of(int reps, Fn&& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto start = Clock::now();
    fn();
    best = std::min(best, seconds_since(start));
  }
  return best;
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

void print_row(const Row& row) {
  const double speedup =
      row.openmp_s > 0 ? row.serial_s / row.openmp_s : 0.0;
  std::printf("%-24s %10.4f ms %10.4f ms %8.2fx   %s\n", row.name.c_str(),
              row.serial_s * 1e3, row.openmp_s * 1e3, speedup,
              row.identical ? "bitwise-equal" : "MISMATCH");
}

}  // namespace

int main() {
  std::printf("threads available: %d\n\n", omp_get_max_threads());
  std::printf("%-24s %13s %13s %9s\n", "kernel", "serial", "openmp",
              "speedup");

  const Index m = 2048, k = 256, n = 256;
  const int reps = 5;
  std::vector<Row> rows;

  {
    Row row{"linear_forward"};
    const auto x = random_vec(static_cast<std::size_t>(m * k), 1);
    const auto w = random_vec(static_cast<std::size_t>(k * n), 2);
    const auto b = random_vec(static_cast<std::size_t>(n), 3);
    std::vector<float> ys(static_cast<std::size_t>(m * n));
    std::vector<float> yp(ys.size());
    row.serial_s = time_best_of(reps, [&] {
      kernels::linear_forward(Backend::serial, x.data(), w.data(), b.data(),
                              ys.data(), m, k, n);
    });
    row.openmp_s = time_best_of(reps, [&] {
      kernels::linear_forward(Backend::openmp, x.data(), w.data(), b.data(),
                              yp.data(), m, k, n);
    });
    row.identical = same_bits(ys, yp);
    rows.push_back(row);
    print_row(row);
  }

  {
    Row row{"linear_backward"};
    const auto x = random_vec(static_cast<std::size_t>(m * k), 4);
    const auto w = random_vec(static_cast<std::size_t>(k * n), 5);
    const auto dy = random_vec(static_cast<std::size_t>(m * n), 6);
    std::vector<float> dxs(static_cast<std::size_t>(m * k)), dxp(dxs.size());
    std::vector<float> dws(static_cast<std::size_t>(k * n)), dwp(dws.size());
    std::vector<float> dbs(static_cast<std::size_t>(n)), dbp(dbs.size());
    row.serial_s = time_best_of(reps, [&] {
      std::fill(dws.begin(), dws.end(), 0.0f);
      std::fill(dbs.begin(), dbs.end(), 0.0f);
      kernels::linear_backward(Backend::serial, x.data(), w.data(), dy.data(),
                               dxs.data(), dws.data(), dbs.data(), m, k, n);
    });
    row.openmp_s = time_best_of(reps, [&] {
      std::fill(dwp.begin(), dwp.end(), 0.0f);
      std::fill(dbp.begin(), dbp.end(), 0.0f);
      kernels::linear_backward(Backend::openmp, x.data(), w.data(), dy.data(),
                               dxp.data(), dwp.data(), dbp.data(), m, k, n);
    });
    row.identical =
        same_bits(dxs, dxp) && same_bits(dws, dwp) && same_bits(dbs, dbp);
    rows.push_back(row);
    print_row(row);
  }

  {
    const Index b = 8, h = 6, t = 128, dh = 32;
    const std::size_t sz = static_cast<std::size_t>(b * t * h * dh);
    Row row{"attention_forward"};
    const auto q = random_vec(sz, 7);
    const auto kk = random_vec(sz, 8);
    const auto v = random_vec(sz, 9);
    std::vector<float> ps(static_cast<std::size_t>(b * h * t * t)),
        pp(ps.size());
    std::vector<float> cs(sz), cp(sz);
    row.serial_s = time_best_of(reps, [&] {
      kernels::attention_forward(Backend::serial, q.data(), kk.data(),
                                 v.data(), ps.data(), cs.data(), b, h, t, dh);
    });
    row.openmp_s = time_best_of(reps, [&] {
      kernels::attention_forward(Backend::openmp, q.data(), kk.data(),
                                 v.data(), pp.data(), cp.data(), b, h, t, dh);
    });
    row.identical = same_bits(ps, pp) && same_bits(cs, cp);
    rows.push_back(row);
    print_row(row);

    Row brow{"attention_backward"};
    const auto dctx = random_vec(sz, 10);
    std::vector<float> dqs(sz), dks(sz), dvs(sz), dqp(sz), dkp(sz), dvp(sz);
    brow.serial_s = time_best_of(reps, [&] {
      kernels::attention_backward(Backend::serial, q.data(), kk.data(),
                                  v.data(), ps.data(), dctx.data(), dqs.data(),
                                  dks.data(), dvs.data(), b, h, t, dh);
    });
    brow.openmp_s = time_best_of(reps, [&] {
      kernels::attention_backward(Backend::openmp, q.data(), kk.data(),
                                  v.data(), pp.data(), dctx.data(), dqp.data(),
                                  dkp.data(), dvp.data(), b, h, t, dh);
    });
    brow.identical =
        same_bits(dqs, dqp) && same_bits(dks, dkp) && same_bits(dvs, dvp);
    rows.push_back(brow);
    print_row(brow);
  }

  {
    Row row{"layernorm_forward"};
    const Index rows_n = 4096, e = 300;
    const auto x = random_vec(static_cast<std::size_t>(rows_n * e), 11);
    const auto g = random_vec(static_cast<std::size_t>(e), 12);
    const auto bb = random_vec(static_cast<std::size_t>(e), 13);
    std::vector<float> ys(x.size()), yp(x.size());
    std::vector<float> ms(static_cast<std::size_t>(rows_n)), mp(ms.size());
    std::vector<float> is(ms.size()), ip(ms.size());
    row.serial_s = time_best_of(reps, [&] {
      kernels::layernorm_forward(Backend::serial, x.data(), g.data(),
                                 bb.data(), ys.data(), ms.data(), is.data(),
                                 rows_n, e);
    });
    row.openmp_s = time_best_of(reps, [&] {
      kernels::layernorm_forward(Backend::openmp, x.data(), g.data(),
                                 bb.data(), yp.data(), mp.data(), ip.data(),
                                 rows_n, e);
    });
    row.identical = same_bits(ys, yp) && same_bits(ms, mp) && same_bits(is, ip);
    rows.push_back(row);
    print_row(row);
  }

  {
    Row row{"softmax_xent"};
    const Index rows_n = 2048, v = 2000;
    const auto logits = random_vec(static_cast<std::size_t>(rows_n * v), 14);
    std::vector<std::int32_t> targets(static_cast<std::size_t>(rows_n));
    std::mt19937_64 rng(15);
    for (auto& t : targets) t = static_cast<std::int32_t>(rng() % v);
    std::vector<float> dls(logits.size()), dlp(logits.size());
    std::vector<double> nls(static_cast<std::size_t>(rows_n)), nlp(nls.size());
    double sum_s = 0, sum_p = 0;
    row.serial_s = time_best_of(reps, [&] {
      sum_s = kernels::softmax_xent(Backend::serial, logits.data(),
                                    targets.data(), dls.data(), nls.data(),
                                    rows_n, v, 1.0 / rows_n);
    });
    row.openmp_s = time_best_of(reps, [&] {
      sum_p = kernels::softmax_xent(Backend::openmp, logits.data(),
                                    targets.data(), dlp.data(), nlp.data(),
                                    rows_n, v, 1.0 / rows_n);
    });
    row.identical = same_bits(dls, dlp) && sum_s == sum_p;
    rows.push_back(row);
    print_row(row);
  }

  {
    Row row{"model fwd+bwd"};
    LMConfig c;
    c.vocab_size = 2000;
    c.emsize = 120;
    c.dim_feedforward = 256;
    c.nlayers = 3;
    c.nhead = 6;
    c.dropout = 0.0;
    c.seq_len = 64;
    Transformer<float> serial_model(c, Backend::serial);
    Transformer<float> openmp_model(c, Backend::openmp);
    serial_model.init_params(1);
    openmp_model.init_params(1);
    Batch batch;
    batch.batch_size = 8;
    batch.seq_len = 64;
    std::mt19937_64 rng(16);
    batch.ids.resize(8 * 64);
    for (auto& id : batch.ids)
      id = static_cast<TokenId>(rng() % static_cast<std::uint64_t>(c.vocab_size));
    auto run = [&](Transformer<float>& model) {
      model.forward(batch);
      model.loss_and_dlogits(batch);
      model.zero_grads();
      model.backward(batch);
    };
    row.serial_s = time_best_of(3, [&] { run(serial_model); });
    row.openmp_s = time_best_of(3, [&] { run(openmp_model); });
    row.identical = same_bits(serial_model.grads(), openmp_model.grads());
    rows.push_back(row);
    print_row(row);
  }

  bool all_same = true;
  for (const Row& row : rows) all_same = all_same && row.identical;
  std::printf("\n%s\n", all_same
                            ? "all kernels bitwise-identical across backends"
                            : "BACKEND MISMATCH DETECTED");
  return all_same ? 0 : 1;
}
