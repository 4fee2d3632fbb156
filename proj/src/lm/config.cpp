#include "toklab/lm/config.hpp"

#include <nlohmann/json.hpp>

#include "toklab/errors.hpp"

namespace toklab::lm {

using json = nlohmann::ordered_json;

void LMConfig::validate() const {
  if (vocab_size < 1) throw ConfigInvalid("lm.vocab_size must be >= 1");
  if (emsize < 1) throw ConfigInvalid("lm.emsize must be >= 1");
  if (dim_feedforward < 1)
    throw ConfigInvalid("lm.dim_feedforward must be >= 1");
  if (nlayers < 1) throw ConfigInvalid("lm.nlayers must be >= 1");
  if (nhead < 1) throw ConfigInvalid("lm.nhead must be >= 1");
  if (emsize % nhead != 0)
    throw ConfigInvalid("lm.emsize must be divisible by lm.nhead");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw ConfigInvalid("lm.dropout must lie in [0, 1)");
  if (batch_size < 1) throw ConfigInvalid("lm.batch_size must be >= 1");
  if (seq_len < 2) throw ConfigInvalid("lm.seq_len must be >= 2");
  if (optimizer.learning_rate <= 0.0)
    throw ConfigInvalid("lm.optimizer.learning_rate must be positive");
  if (optimizer.epochs < 0)
    throw ConfigInvalid("lm.optimizer.epochs must be >= 0");
}

std::int64_t parameter_count(const LMConfig& config) {
  const std::int64_t v = config.vocab_size;
  const std::int64_t e = config.emsize;
  const std::int64_t f = config.dim_feedforward;
  const std::int64_t l = config.nlayers;
  const std::int64_t per_layer = 2 * e                 // first norm
                                 + 4 * e * e + 4 * e   // q,k,v,o projections
                                 + 2 * e               // second norm
                                 + e * f + f           // expand
                                 + f * e + e;          // contract
  return v * e + l * per_layer + 2 * e + e * v + v;
}

std::string lm_config_to_json(const LMConfig& config) {
  json j;
  j["vocab_size"] = config.vocab_size;
  j["emsize"] = config.emsize;
  j["dim_feedforward"] = config.dim_feedforward;
  j["nlayers"] = config.nlayers;
  j["nhead"] = config.nhead;
  j["dropout"] = config.dropout;
  j["batch_size"] = config.batch_size;
  j["seq_len"] = config.seq_len;
  j["seed"] = config.seed;
  j["optimizer"] = {{"learning_rate", config.optimizer.learning_rate},
                    {"beta1", config.optimizer.beta1},
                    {"beta2", config.optimizer.beta2},
                    {"eps", config.optimizer.eps},
                    {"clip_norm", config.optimizer.clip_norm},
                    {"epochs", config.optimizer.epochs}};
  return j.dump();
}

namespace {

template <typename V>
void read_field(const json& j, const char* name, V& out) {
  auto it = j.find(name);
  if (it == j.end()) return;
  try {
    out = it->get<V>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("lm config field '") + name +
                     "': " + e.what());
  }
}

}  // namespace

LMConfig lm_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("lm config: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("lm config must be a JSON object");
  LMConfig config;
  read_field(j, "vocab_size", config.vocab_size);
  read_field(j, "emsize", config.emsize);
  read_field(j, "dim_feedforward", config.dim_feedforward);
  read_field(j, "nlayers", config.nlayers);
  read_field(j, "nhead", config.nhead);
  read_field(j, "dropout", config.dropout);
  read_field(j, "batch_size", config.batch_size);
  read_field(j, "seq_len", config.seq_len);
  read_field(j, "seed", config.seed);
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    if (!o.is_object())
      throw ParseError("lm config field 'optimizer' must be an object");
    read_field(o, "learning_rate", config.optimizer.learning_rate);
    read_field(o, "beta1", config.optimizer.beta1);
    read_field(o, "beta2", config.optimizer.beta2);
    read_field(o, "eps", config.optimizer.eps);
    read_field(o, "clip_norm", config.optimizer.clip_norm);
    read_field(o, "epochs", config.optimizer.epochs);
  }
  return config;
}

}  // namespace toklab::lm
