#pragma once

#include <cstdint>
#include <string>

namespace toklab::lm {

struct OptimizerConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
  int epochs = 5;
};

// Miniature causal transformer LM. Defaults are the full-scale reference
// setup; tests and desk runs shrink everything through the same struct.
struct LMConfig {
  int vocab_size = 30000;
  int emsize = 300;
  int dim_feedforward = 1024;
  int nlayers = 6;
  int nhead = 6;
  double dropout = 0.2;
  int batch_size = 64;
  int seq_len = 64;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;

  int head_dim() const { return emsize / nhead; }
  void validate() const;  // throws ConfigInvalid
};

// Analytic size of the flat parameter vector: token embedding, per-layer
// norms + attention + feedforward, final norm, untied output projection.
std::int64_t parameter_count(const LMConfig& config);

std::string lm_config_to_json(const LMConfig& config);
LMConfig lm_config_from_json(const std::string& text);

}  // namespace toklab::lm
