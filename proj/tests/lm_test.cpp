#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "toklab/errors.hpp"
#include "toklab/lm/checkpoint.hpp"
#include "toklab/lm/train.hpp"

using namespace toklab;
using namespace toklab::lm;

namespace {

LMConfig tiny_config(int vocab = 40, int seq = 12) {
  LMConfig c;
  c.vocab_size = vocab;
  c.emsize = 24;
  c.dim_feedforward = 48;
  c.nlayers = 2;
  c.nhead = 3;
  c.dropout = 0.0;
  c.batch_size = 2;
  c.seq_len = seq;
  c.seed = 11;
  return c;
}

Batch random_batch(const LMConfig& c, int b, int t, std::uint64_t seed) {
  Batch batch;
  batch.batch_size = b;
  batch.seq_len = t;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> pick(0, c.vocab_size - 1);
  batch.ids.resize(static_cast<std::size_t>(b) * t);
  for (auto& id : batch.ids) id = pick(rng);
  return batch;
}

}  // namespace

TEST_CASE("config validation rejects bad shapes") {
  LMConfig c = tiny_config();
  CHECK_NOTHROW(c.validate());
  c.emsize = 25;  // not divisible by nhead=3... 25 % 3 != 0
  CHECK_THROWS_AS(c.validate(), ConfigInvalid);
  c = tiny_config();
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigInvalid);
  c = tiny_config();
  c.dropout = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigInvalid);
  c = tiny_config();
  c.seq_len = 1;
  CHECK_THROWS_AS(c.validate(), ConfigInvalid);
  c = tiny_config();
  c.nlayers = 0;
  CHECK_THROWS_AS(c.validate(), ConfigInvalid);
}

TEST_CASE("config json round trip") {
  LMConfig c = tiny_config();
  c.optimizer.learning_rate = 0.00125;
  c.optimizer.epochs = 9;
  c.seed = 987654321;
  LMConfig back = lm_config_from_json(lm_config_to_json(c));
  CHECK(back.vocab_size == c.vocab_size);
  CHECK(back.emsize == c.emsize);
  CHECK(back.dim_feedforward == c.dim_feedforward);
  CHECK(back.nlayers == c.nlayers);
  CHECK(back.nhead == c.nhead);
  CHECK(back.dropout == c.dropout);
  CHECK(back.seq_len == c.seq_len);
  CHECK(back.seed == c.seed);
  CHECK(back.optimizer.learning_rate == c.optimizer.learning_rate);
  CHECK(back.optimizer.epochs == c.optimizer.epochs);
  CHECK_THROWS_AS(lm_config_from_json("{"), ParseError);
  CHECK_THROWS_AS(lm_config_from_json("{\"emsize\": \"wide\"}"), ParseError);
}

TEST_CASE("parameter count matches the layout and a hand count") {
  LMConfig c;
  c.vocab_size = 10;
  c.emsize = 4;
  c.dim_feedforward = 8;
  c.nlayers = 1;
  c.nhead = 2;
  c.seq_len = 4;
  // emb 40; per layer: norms 16, qkvo 80, expand 40, contract 36; final norm
  // 8; output projection 50.
  CHECK(parameter_count(c) == 270);
  CHECK(LMLayout(c).total == 270);

  for (std::uint64_t s = 0; s < 5; ++s) {
    LMConfig r;
    std::mt19937_64 rng(s);
    r.nhead = 1 + static_cast<int>(rng() % 4);
    r.emsize = r.nhead * (1 + static_cast<int>(rng() % 8));
    r.dim_feedforward = 1 + static_cast<int>(rng() % 50);
    r.nlayers = 1 + static_cast<int>(rng() % 5);
    r.vocab_size = 2 + static_cast<int>(rng() % 500);
    CHECK(LMLayout(r).total == static_cast<std::size_t>(parameter_count(r)));
  }
}

TEST_CASE("full-scale configuration lands on about 24M parameters") {
  LMConfig full;  // defaults are the full-scale setup
  const std::int64_t count = parameter_count(full);
  CHECK(count == 23899344);
  CHECK(LMLayout(full).total == static_cast<std::size_t>(count));
  CHECK(std::fabs(static_cast<double>(count) / 24.0e6 - 1.0) <= 0.05);
}

TEST_CASE("forward produces normalized rows of the right shape") {
  LMConfig c = tiny_config();
  Transformer<double> model(c);
  model.init_params(3);
  Batch batch = random_batch(c, 2, 12, 5);
  model.forward(batch);
  const auto& logits = model.logits();
  REQUIRE(logits.size() == static_cast<std::size_t>(2 * 12 * c.vocab_size));
  for (int row = 0; row < 24; ++row) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c.vocab_size; ++j)
      mx = std::max(mx, logits[static_cast<std::size_t>(row) * c.vocab_size + j]);
    double z = 0;
    for (int j = 0; j < c.vocab_size; ++j)
      z += std::exp(logits[static_cast<std::size_t>(row) * c.vocab_size + j] - mx);
    // softmax normalization: sum of probabilities is 1
    double sum = 0;
    for (int j = 0; j < c.vocab_size; ++j)
      sum += std::exp(logits[static_cast<std::size_t>(row) * c.vocab_size + j] - mx) / z;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(model.hidden().size() == static_cast<std::size_t>(2 * 12 * c.emsize));
}

TEST_CASE("future tokens never influence past logits") {
  LMConfig c = tiny_config();
  Transformer<float> model(c);
  model.init_params(17);
  Batch base = random_batch(c, 2, 12, 23);
  model.forward(base);
  std::vector<float> reference = model.logits();
  std::mt19937_64 rng(99);
  const int v = c.vocab_size;
  for (int trial = 0; trial < 100; ++trial) {
    Batch mutated = base;
    const int row = static_cast<int>(rng() % 2);
    const int pos = 1 + static_cast<int>(rng() % 11);
    TokenId replacement = static_cast<TokenId>(rng() % v);
    if (replacement == mutated.at(row, pos))
      replacement = static_cast<TokenId>((replacement + 1) % v);
    mutated.ids[static_cast<std::size_t>(row) * 12 + pos] = replacement;
    model.forward(mutated);
    const auto& changed = model.logits();
    for (int p = 0; p < pos; ++p) {
      const std::size_t off = (static_cast<std::size_t>(row) * 12 + p) * v;
      CHECK(std::memcmp(reference.data() + off, changed.data() + off,
                        sizeof(float) * static_cast<std::size_t>(v)) == 0);
    }
    // The untouched batch row is independent of the mutated one.
    const std::size_t other = (static_cast<std::size_t>(1 - row) * 12) * v;
    CHECK(std::memcmp(reference.data() + other, changed.data() + other,
                      sizeof(float) * static_cast<std::size_t>(12 * v)) == 0);
  }
}

TEST_CASE("serial and openmp backends agree bitwise") {
  LMConfig c = tiny_config();
  c.dropout = 0.2;
  Transformer<float> a(c, Backend::serial);
  Transformer<float> b(c, Backend::openmp);
  a.init_params(7);
  b.init_params(7);
  REQUIRE(a.params() == b.params());
  Batch batch = random_batch(c, 3, 12, 31);

  a.forward(batch, true, 555);
  b.forward(batch, true, 555);
  CHECK(std::memcmp(a.logits().data(), b.logits().data(),
                    a.logits().size() * sizeof(float)) == 0);

  const auto la = a.loss_and_dlogits(batch);
  const auto lb = b.loss_and_dlogits(batch);
  CHECK(la.nll_sum == lb.nll_sum);
  a.zero_grads();
  b.zero_grads();
  a.backward(batch);
  b.backward(batch);
  CHECK(std::memcmp(a.grads().data(), b.grads().data(),
                    a.grads().size() * sizeof(float)) == 0);

  AdamState<float> sa, sb;
  std::vector<Batch> batches = {batch, random_batch(c, 3, 12, 32)};
  const EvalRecord ra = train_epoch(a, batches, sa, 0);
  const EvalRecord rb = train_epoch(b, batches, sb, 0);
  CHECK(ra.nll_sum == rb.nll_sum);
  CHECK(std::memcmp(a.params().data(), b.params().data(),
                    a.params().size() * sizeof(float)) == 0);
}

TEST_CASE("same seed gives identical models and logits") {
  LMConfig c = tiny_config();
  Transformer<float> a(c), b(c);
  a.init_params(42);
  b.init_params(42);
  CHECK(a.params() == b.params());
  b.init_params(43);
  CHECK(a.params() != b.params());
}

TEST_CASE("perplexity closed forms") {
  for (int v : {10, 100, 30000}) {
    std::vector<double> probs(16, 1.0 / v);
    CHECK(perplexity(probs) ==
          doctest::Approx(static_cast<double>(v)).epsilon(1e-12));
  }
  CHECK(perplexity(std::vector<double>(7, 1.0)) == 1.0);
  CHECK(perplexity({0.5, 0.25}) ==
        doctest::Approx(2.0 * std::sqrt(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(perplexity({}), EmptySequence);
  CHECK_THROWS_AS(perplexity({0.5, 0.0}), InvalidProbability);
  CHECK_THROWS_AS(perplexity({-0.5}), InvalidProbability);
  CHECK_THROWS_AS(perplexity({1.0000001}), InvalidProbability);
  EvalRecord r{4, 4.0 * std::log(7.0)};
  CHECK(r.perplexity() == doctest::Approx(7.0).epsilon(1e-12));
  EvalRecord empty;
  CHECK_THROWS_AS(empty.perplexity(), EmptySequence);
}

TEST_CASE("reported perplexity equals an independent per-token accumulation") {
  LMConfig c = tiny_config();
  Transformer<double> model(c);
  model.init_params(13);
  std::vector<Batch> batches = {random_batch(c, 2, 12, 1),
                                random_batch(c, 2, 12, 2)};
  const EvalRecord record = evaluate(model, batches);

  long double nll = 0.0L;
  std::int64_t n = 0;
  const int v = c.vocab_size;
  for (const Batch& batch : batches) {
    model.forward(batch);
    const auto& logits = model.logits();
    for (int b = 0; b < batch.batch_size; ++b) {
      for (int t = 0; t + 1 < batch.seq_len; ++t) {
        const std::size_t off =
            (static_cast<std::size_t>(b) * batch.seq_len + t) * v;
        long double mx = logits[off];
        for (int j = 1; j < v; ++j)
          mx = std::max(mx, static_cast<long double>(logits[off + j]));
        long double z = 0.0L;
        for (int j = 0; j < v; ++j)
          z += std::exp(static_cast<long double>(logits[off + j]) - mx);
        const long double p =
            std::exp(static_cast<long double>(logits[off + batch.at(b, t + 1)]) -
                     mx) /
            z;
        nll += -std::log(p);
        ++n;
      }
    }
  }
  REQUIRE(n == record.n);
  const double oracle = std::exp(static_cast<double>(nll / n));
  CHECK(record.perplexity() == doctest::Approx(oracle).epsilon(1e-6));
}

TEST_CASE("a randomly initialized model starts near vocab-size perplexity") {
  for (int v : {50, 150}) {
    LMConfig c = tiny_config(v, 12);
    Transformer<float> model(c);
    model.init_params(19);
    std::vector<Batch> batches = {random_batch(c, 4, 12, 3),
                                  random_batch(c, 4, 12, 4)};
    const double ppl = evaluate(model, batches).perplexity();
    CHECK(ppl > 0.8 * v);
    CHECK(ppl < 1.2 * v);
  }
}

TEST_CASE("the model memorizes a single repeated batch") {
  LMConfig c = tiny_config(30, 8);
  c.emsize = 32;
  c.nhead = 2;
  c.dim_feedforward = 64;
  c.seq_len = 8;
  c.optimizer.learning_rate = 1e-2;
  Transformer<float> model(c);
  model.init_params(5);
  std::vector<Batch> batches = {random_batch(c, 2, 8, 77)};
  AdamState<float> state;
  double ppl = 0;
  for (int step = 0; step < 200; ++step)
    ppl = train_epoch(model, batches, state, static_cast<std::uint64_t>(step))
              .perplexity();
  CHECK(ppl < 1.5);
}

TEST_CASE("training lowers validation perplexity on predictable data") {
  LMConfig c = tiny_config(50, 16);
  c.emsize = 32;
  c.nhead = 2;
  c.dim_feedforward = 64;
  c.seq_len = 16;
  c.optimizer.learning_rate = 3e-3;
  std::vector<TokenId> stream(5000);
  for (std::size_t i = 0; i < stream.size(); ++i)
    stream[i] = static_cast<TokenId>((i * 7) % 50);
  std::vector<Batch> train = batchify(
      {stream.begin(), stream.begin() + 4000}, 8, 16);
  std::vector<Batch> valid = batchify(
      {stream.begin() + 4000, stream.end()}, 8, 16);
  Transformer<float> model(c);
  model.init_params(21);
  const double before = evaluate(model, valid).perplexity();
  AdamState<float> state;
  for (int epoch = 0; epoch < 2; ++epoch)
    train_epoch(model, train, state, static_cast<std::uint64_t>(epoch));
  const double after = evaluate(model, valid).perplexity();
  CHECK(after < before);
  CHECK(after < 0.5 * before);
}

TEST_CASE("analytic gradients match central finite differences") {
  LMConfig c;
  c.vocab_size = 50;
  c.emsize = 16;
  c.dim_feedforward = 32;
  c.nlayers = 2;
  c.nhead = 2;
  c.dropout = 0.0;
  c.seq_len = 8;
  Transformer<double> model(c);
  model.init_params(29);
  Batch batch = random_batch(c, 2, 8, 41);
  const std::vector<double> analytic = analytic_gradients(model, batch);
  const GradCheckResult result =
      finite_difference_check(model, batch, analytic, 1e-4, 220, 101);
  CHECK(result.checked >= 200);
  CHECK(result.max_rel_error < 1e-3);

  // Checker self-test: an all-zero "gradient" is maximally wrong.
  const std::vector<double> zeros(analytic.size(), 0.0);
  const GradCheckResult broken =
      finite_difference_check(model, batch, zeros, 1e-4, 50, 102);
  CHECK(broken.max_rel_error > 0.5);

  // Finite differences bracket the directional derivative sign.
  std::mt19937_64 rng(7);
  int tested = 0;
  while (tested < 20) {
    const std::size_t idx = rng() % analytic.size();
    if (std::fabs(analytic[idx]) < 1e-6) continue;
    const double saved = model.params()[idx];
    model.params()[idx] = saved + 1e-4;
    const double up = batch_loss(model, batch);
    model.params()[idx] = saved - 1e-4;
    const double down = batch_loss(model, batch);
    model.params()[idx] = saved;
    CHECK((up - down > 0) == (analytic[idx] > 0));
    ++tested;
  }
}

TEST_CASE("dropout is keyed, scaled, and off at evaluation") {
  LMConfig c = tiny_config();
  c.dropout = 0.5;
  Transformer<float> model(c);
  model.init_params(9);
  Batch batch = random_batch(c, 2, 12, 15);

  model.forward(batch, false);
  const std::vector<float> eval1 = model.logits();
  model.forward(batch, false, 123);  // key ignored in eval mode
  CHECK(eval1 == model.logits());

  model.forward(batch, true, 1000);
  const std::vector<float> train_a = model.logits();
  model.forward(batch, true, 1000);
  CHECK(train_a == model.logits());
  model.forward(batch, true, 1001);
  CHECK(train_a != model.logits());
  CHECK(eval1 != train_a);

  // Mask statistics and forward/backward agreement.
  std::size_t kept = 0;
  const std::size_t n = 100000;
  for (std::size_t i = 0; i < n; ++i)
    kept += dropout_keep(42, 3, i, 0.5) ? 1 : 0;
  CHECK(std::fabs(static_cast<double>(kept) / n - 0.5) < 0.02);

  std::vector<float> x(512, 1.0f), y(512), dy(512, 2.0f), dx(512);
  kernels::dropout_forward(Backend::serial, x.data(), y.data(), 512, 0.25, 7,
                           1);
  kernels::dropout_backward(Backend::openmp, dy.data(), dx.data(), 512, 0.25,
                            7, 1);
  for (std::size_t i = 0; i < 512; ++i) {
    if (y[i] == 0.0f)
      CHECK(dx[i] == 0.0f);
    else
      CHECK(dx[i] == doctest::Approx(2.0f / 0.75f));
  }
}

TEST_CASE("shape violations are rejected") {
  LMConfig c = tiny_config();
  Transformer<float> model(c);
  model.init_params(1);
  Batch bad = random_batch(c, 2, 12, 1);
  bad.ids[0] = static_cast<TokenId>(c.vocab_size);
  CHECK_THROWS_AS(model.forward(bad), ShapeMismatch);
  bad.ids[0] = -1;
  CHECK_THROWS_AS(model.forward(bad), ShapeMismatch);
  Batch wide = random_batch(c, 1, 12, 2);
  wide.seq_len = 24;
  wide.ids.resize(24, 0);
  CHECK_THROWS_AS(model.forward(wide), ShapeMismatch);
  Batch shrunk = random_batch(c, 2, 12, 3);
  shrunk.ids.pop_back();
  CHECK_THROWS_AS(model.forward(shrunk), ShapeMismatch);
  Batch single = random_batch(c, 2, 1, 4);
  model.forward(single);  // a one-column forward is fine...
  CHECK_THROWS_AS(model.loss_and_dlogits(single), ShapeMismatch);  // ...loss is not
}

TEST_CASE("non-finite losses abort training with diagnostics") {
  LMConfig c = tiny_config();
  Transformer<float> model(c);
  model.init_params(2);
  model.params()[0] = std::numeric_limits<float>::quiet_NaN();
  Batch batch;
  batch.batch_size = 1;
  batch.seq_len = 4;
  batch.ids = {0, 0, 0, 0};
  AdamState<float> state;
  std::vector<Batch> batches = {batch};
  CHECK_THROWS_AS(train_epoch(model, batches, state, 0), NonFiniteLoss);
}

TEST_CASE("checkpoints round trip exactly") {
  LMConfig c = tiny_config();
  c.dropout = 0.1;
  Transformer<float> model(c);
  model.init_params(33);
  const auto dir = std::filesystem::temp_directory_path();
  const std::string path = (dir / "toklab_lm_ckpt.bin").string();
  save_model(path, model, R"({"scheme":"byte_bpe","stage":"pretrain"})");

  const Checkpoint ckpt = load_checkpoint(path);
  CHECK(ckpt.config.vocab_size == c.vocab_size);
  CHECK(ckpt.config.emsize == c.emsize);
  CHECK(ckpt.config.dropout == c.dropout);
  CHECK(ckpt.params.size() == model.params().size());
  CHECK(ckpt.params == model.params());
  CHECK(ckpt.extra.find("byte_bpe") != std::string::npos);

  Transformer<float> back = model_from_checkpoint<float>(ckpt, Backend::serial);
  Batch batch = random_batch(c, 2, 12, 8);
  model.forward(batch);
  const std::vector<float> want = model.logits();
  back.forward(batch);
  CHECK(want == back.logits());
  std::filesystem::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto dir = std::filesystem::temp_directory_path();
  const std::string path = (dir / "toklab_lm_bad.bin").string();
  {
    std::ofstream out(path, std::ios::binary);
    out << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(load_checkpoint(path), ParseError);
  CHECK_THROWS_AS(load_checkpoint((dir / "toklab_absent.bin").string()),
                  IOFailure);

  LMConfig c = tiny_config();
  Transformer<float> model(c);
  model.init_params(3);
  save_model(path, model);
  // Truncate the parameter section.
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 16);
  CHECK_THROWS_AS(load_checkpoint(path), ParseError);
  std::filesystem::remove(path);
}

TEST_CASE("perplexity logs round trip through csv") {
  const auto dir = std::filesystem::temp_directory_path();
  const std::string path = (dir / "toklab_ppl.csv").string();
  std::vector<PplRow> rows = {{0, "train", 123.456789012345678},
                              {0, "valid", 1.0 / 3.0},
                              {1, "train", 98.7},
                              {1, "valid", 97.2}};
  write_ppl_csv(path, rows);
  const std::vector<PplRow> back = read_ppl_csv(path);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].epoch == rows[i].epoch);
    CHECK(back[i].split == rows[i].split);
    CHECK(back[i].ppl == rows[i].ppl);  // exact: %.17g survives the round trip
  }
  std::filesystem::remove(path);
}

TEST_CASE("hidden states share prefixes with shared inputs") {
  LMConfig c = tiny_config();
  Transformer<double> model(c);
  model.init_params(12);
  Batch a = random_batch(c, 1, 10, 61);
  Batch b = a;
  b.ids[9] = static_cast<TokenId>((b.ids[9] + 1) % c.vocab_size);
  model.forward(a);
  const std::vector<double> ha = model.hidden();
  model.forward(b);
  const std::vector<double>& hb = model.hidden();
  const std::size_t e = static_cast<std::size_t>(c.emsize);
  for (int t = 0; t < 9; ++t)
    for (std::size_t j = 0; j < e; ++j)
      CHECK(ha[static_cast<std::size_t>(t) * e + j] ==
            hb[static_cast<std::size_t>(t) * e + j]);
}
