#pragma once

#include <string>
#include <vector>

#include "toklab/lm/model.hpp"

namespace toklab::lm {

// Binary model container: "TLMC" magic, format version, a JSON header with
// the config plus tensor table, then all parameters as row-major 32-bit
// little-endian floats in layout order.
struct Checkpoint {
  LMConfig config;
  std::vector<float> params;
  std::string extra;  // free-form JSON object carried in the header
};

void save_checkpoint(const std::string& path, const LMConfig& config,
                     const std::vector<float>& params,
                     const std::string& extra_json = "{}");

Checkpoint load_checkpoint(const std::string& path);

template <typename T>
void save_model(const std::string& path, const Transformer<T>& model,
                const std::string& extra_json = "{}") {
  std::vector<float> params(model.params().begin(), model.params().end());
  save_checkpoint(path, model.config(), params, extra_json);
}

template <typename T>
Transformer<T> model_from_checkpoint(const Checkpoint& ckpt, Backend backend) {
  Transformer<T> model(ckpt.config, backend);
  std::copy(ckpt.params.begin(), ckpt.params.end(), model.params().begin());
  return model;
}

// Perplexity curve log, one row per (epoch, split) measurement.
struct PplRow {
  int epoch = 0;
  std::string split;
  double ppl = 0.0;
};

// CSV with header "epoch,split,ppl"; doubles printed with %.17g so the file
// re-parses to the exact in-memory values.
void write_ppl_csv(const std::string& path, const std::vector<PplRow>& rows);
std::vector<PplRow> read_ppl_csv(const std::string& path);

}  // namespace toklab::lm
