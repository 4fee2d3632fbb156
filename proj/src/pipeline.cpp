#include "toklab/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <map>
#include <system_error>
#include <utility>

#include <nlohmann/json.hpp>

#include "toklab/analysis.hpp"
#include "toklab/corpus.hpp"
#include "toklab/lm/checkpoint.hpp"
#include "toklab/lm/kernels.hpp"
#include "toklab/lm/train.hpp"

namespace toklab::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string SchemeRun::label() const {
  return std::string(scheme_name(scheme)) + "-" + std::to_string(vocab_size);
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ull;
  }
  return hash;
}

std::uint64_t stage_seed(std::uint64_t global_seed, std::string_view stage_key) {
  return lm::mix_seed(global_seed, fnv1a64(stage_key));
}

// ---------------------------------------------------------------------------
// Canonical form
// ---------------------------------------------------------------------------

namespace {

// The per-segment token cap; a zero max_len inherits the LM's window so the
// extracted representation position always exists.
std::size_t effective_max_len(const ExperimentConfig& config) {
  return config.finetune.max_len > 0
             ? config.finetune.max_len
             : static_cast<std::size_t>(config.lm.seq_len);
}

std::string resolved_baseline(const ExperimentConfig& config) {
  if (!config.analysis.baseline_scheme.empty())
    return config.analysis.baseline_scheme;
  for (const SchemeRun& run : config.runs)
    if (run.scheme == Scheme::word) return scheme_name(Scheme::word);
  return config.runs.empty() ? std::string()
                             : scheme_name(config.runs.front().scheme);
}

json config_to_ordered_json(const ExperimentConfig& c) {
  json root;
  root["corpus"] = json{{"train", c.train_corpus},
                        {"valid", c.valid_corpus},
                        {"valid_fraction", c.valid_fraction}};

  json prep;
  prep["unicode_nfc"] = c.preprocess.unicode_nfc;
  prep["collapse_digits"] = c.preprocess.collapse_digits;
  prep["transliterate"] = c.preprocess.transliterate;
  auto map_entries = json::array();
  for (const auto& [from, to] : c.preprocess.diacritic_map)
    map_entries.push_back(json::array({static_cast<std::uint32_t>(from),
                                       static_cast<std::uint32_t>(to)}));
  prep["diacritic_map"] = std::move(map_entries);
  root["preprocess"] = std::move(prep);

  auto runs = json::array();
  for (const SchemeRun& run : c.runs)
    runs.push_back(json{{"scheme", scheme_name(run.scheme)},
                        {"vocab_size", run.vocab_size}});
  root["runs"] = std::move(runs);

  json lmj;
  lmj["emsize"] = c.lm.emsize;
  lmj["dim_feedforward"] = c.lm.dim_feedforward;
  lmj["nlayers"] = c.lm.nlayers;
  lmj["nhead"] = c.lm.nhead;
  lmj["dropout"] = c.lm.dropout;
  lmj["batch_size"] = c.lm.batch_size;
  lmj["seq_len"] = c.lm.seq_len;
  lmj["optimizer"] = json{{"learning_rate", c.lm.optimizer.learning_rate},
                          {"beta1", c.lm.optimizer.beta1},
                          {"beta2", c.lm.optimizer.beta2},
                          {"eps", c.lm.optimizer.eps},
                          {"clip_norm", c.lm.optimizer.clip_norm},
                          {"epochs", c.lm.optimizer.epochs}};
  root["lm"] = std::move(lmj);

  json ft;
  ft["epochs"] = c.finetune.config.epochs;
  ft["batch_size"] = c.finetune.config.batch_size;
  ft["hidden_dim"] = c.finetune.config.hidden_dim;
  ft["learning_rate"] = c.finetune.config.learning_rate;
  ft["clip_norm"] = c.finetune.config.clip_norm;
  ft["valid_fraction"] = c.finetune.config.valid_fraction;
  ft["joint"] = c.finetune.config.joint;
  ft["max_len"] = effective_max_len(c);
  auto tasks = json::array();
  for (const TaskSpec& task : c.finetune.tasks)
    tasks.push_back(json{{"task", task.task}, {"path", task.path}});
  ft["tasks"] = std::move(tasks);
  root["finetune"] = std::move(ft);

  root["analysis"] = json{{"top_k", c.analysis.top_k},
                          {"baseline_scheme", resolved_baseline(c)}};
  root["output_dir"] = c.output_dir;
  root["seed"] = c.seed;
  return root;
}

}  // namespace

std::string experiment_config_to_json(const ExperimentConfig& config) {
  return config_to_ordered_json(config).dump(2) + "\n";
}

std::uint64_t config_hash(const ExperimentConfig& config) {
  json canonical = config_to_ordered_json(config);
  canonical.erase("output_dir");
  return fnv1a64(canonical.dump());
}

// ---------------------------------------------------------------------------
// Parsing and validation
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void fail_field(const std::string& path, const std::string& msg) {
  throw ConfigInvalid(path + ": " + msg);
}

json parse_json_source(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // nlohmann reports a 1-based byte offset; convert it to line:column.
    std::size_t pos = e.byte > 0 ? e.byte - 1 : 0;
    pos = std::min(pos, text.size());
    std::size_t line = 1, column = 1;
    for (std::size_t i = 0; i < pos; ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw ParseError(source + ":" + std::to_string(line) + ":" +
                     std::to_string(column) + ": " + e.what());
  }
}

const json* find(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* k) {
          return it.key() == k;
        }) != allowed.end())
      continue;
    std::string list;
    for (const char* k : allowed) {
      if (!list.empty()) list += ", ";
      list += k;
    }
    fail_field(path + "." + it.key(), "unknown field (allowed: " + list + ")");
  }
}

const json& as_object(const json& node, const std::string& path) {
  if (!node.is_object()) fail_field(path, "expected an object");
  return node;
}

std::string as_string(const json& node, const std::string& path) {
  if (!node.is_string()) fail_field(path, "expected a string");
  return node.get<std::string>();
}

bool as_bool(const json& node, const std::string& path) {
  if (!node.is_boolean()) fail_field(path, "expected true or false");
  return node.get<bool>();
}

double as_double(const json& node, const std::string& path) {
  if (!node.is_number()) fail_field(path, "expected a number");
  return node.get<double>();
}

std::int64_t as_int(const json& node, const std::string& path) {
  if (!node.is_number_integer() && !node.is_number_unsigned())
    fail_field(path, "expected an integer");
  return node.get<std::int64_t>();
}

std::uint64_t as_uint(const json& node, const std::string& path) {
  if (node.is_number_unsigned()) return node.get<std::uint64_t>();
  const std::int64_t value = as_int(node, path);
  if (value < 0) fail_field(path, "expected a non-negative integer");
  return static_cast<std::uint64_t>(value);
}

std::size_t as_size(const json& node, const std::string& path) {
  return static_cast<std::size_t>(as_uint(node, path));
}

int as_positive_int(const json& node, const std::string& path) {
  const std::int64_t value = as_int(node, path);
  if (value < 1) fail_field(path, "expected a positive integer");
  return static_cast<int>(value);
}

std::string resolve_path(const std::string& base_dir, const std::string& path) {
  if (path.empty() || base_dir.empty()) return path;
  fs::path p(path);
  if (p.is_absolute()) return p.lexically_normal().string();
  return (fs::path(base_dir) / p).lexically_normal().string();
}

std::string allowed_schemes() {
  std::string list;
  for (Scheme scheme : all_schemes()) {
    if (!list.empty()) list += ", ";
    list += scheme_name(scheme);
  }
  return list;
}

// Byte-level schemes must fit all 256 byte symbols plus the three specials;
// every scheme needs the specials plus at least one real token.
std::size_t scheme_min_vocab(Scheme scheme) {
  return scheme == Scheme::byte_bpe || scheme == Scheme::morpheme_byte_bpe
             ? 259
             : 4;
}

const std::vector<std::string>& allowed_tasks() {
  static const std::vector<std::string> tasks = {"cc", "cps", "ner", "pos"};
  return tasks;
}

void require_file(const std::string& path, const std::string& field) {
  if (path.empty()) fail_field(field, "path must not be empty");
  if (!fs::exists(path)) fail_field(field, "file not found: " + path);
}

}  // namespace

void ExperimentConfig::validate(bool check_paths) const {
  if (train_corpus.empty()) fail_field("corpus.train", "path must not be empty");
  if (check_paths) require_file(train_corpus, "corpus.train");
  if (!valid_corpus.empty() && check_paths)
    require_file(valid_corpus, "corpus.valid");
  if (!(valid_fraction > 0.0 && valid_fraction < 1.0))
    fail_field("corpus.valid_fraction", "must be in (0, 1)");
  try {
    preprocess.validate();
  } catch (const Error& e) {
    fail_field("preprocess", e.what());
  }

  if (runs.empty()) fail_field("runs", "at least one scheme run is required");
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const std::string field = "runs[" + std::to_string(i) + "].vocab_size";
    const std::size_t minimum = scheme_min_vocab(runs[i].scheme);
    if (runs[i].vocab_size < minimum)
      fail_field(field, std::string(scheme_name(runs[i].scheme)) +
                            " requires a vocabulary of at least " +
                            std::to_string(minimum) + ", got " +
                            std::to_string(runs[i].vocab_size));
    for (std::size_t j = 0; j < i; ++j)
      if (runs[j].label() == runs[i].label())
        fail_field("runs[" + std::to_string(i) + "]",
                   "duplicate run '" + runs[i].label() + "'");
  }

  lm::LMConfig lm_probe = lm;
  lm_probe.vocab_size = 1000;  // the real value comes from each tokenizer
  try {
    lm_probe.validate();
  } catch (const Error& e) {
    fail_field("lm", e.what());
  }

  try {
    finetune.config.validate();
  } catch (const Error& e) {
    fail_field("finetune", e.what());
  }
  if (effective_max_len(*this) > static_cast<std::size_t>(lm.seq_len))
    fail_field("finetune.max_len",
               "must not exceed lm.seq_len (" + std::to_string(lm.seq_len) +
                   "), got " + std::to_string(effective_max_len(*this)));
  for (std::size_t i = 0; i < finetune.tasks.size(); ++i) {
    const std::string base = "finetune.tasks[" + std::to_string(i) + "]";
    const TaskSpec& task = finetune.tasks[i];
    if (std::find(allowed_tasks().begin(), allowed_tasks().end(), task.task) ==
        allowed_tasks().end())
      fail_field(base + ".task",
                 "unknown task '" + task.task + "' (allowed: cc, cps, ner, pos)");
    if (check_paths) require_file(task.path, base + ".path");
    for (std::size_t j = 0; j < i; ++j)
      if (finetune.tasks[j].task == task.task)
        fail_field(base + ".task", "duplicate task '" + task.task + "'");
  }

  if (analysis.top_k.empty())
    fail_field("analysis.top_k", "at least one k is required");
  for (std::size_t i = 0; i < analysis.top_k.size(); ++i)
    if (analysis.top_k[i] < 1)
      fail_field("analysis.top_k[" + std::to_string(i) + "]",
                 "k must be at least 1");
  const std::string baseline = resolved_baseline(*this);
  const bool baseline_present =
      std::any_of(runs.begin(), runs.end(), [&](const SchemeRun& run) {
        return scheme_name(run.scheme) == baseline;
      });
  if (!baseline_present)
    fail_field("analysis.baseline_scheme",
               "'" + baseline + "' does not match any configured run");

  if (output_dir.empty()) fail_field("output_dir", "path must not be empty");
}

ExperimentConfig experiment_config_from_json(const std::string& text,
                                             const std::string& base_dir,
                                             const std::string& source_name) {
  const json root_node = parse_json_source(text, source_name);
  const json& root = as_object(root_node, "config");
  check_keys(root, "config",
             {"corpus", "preprocess", "runs", "lm", "finetune", "analysis",
              "output_dir", "seed"});

  ExperimentConfig config;

  const json* corpus = find(root, "corpus");
  if (!corpus) fail_field("corpus", "section is required");
  as_object(*corpus, "corpus");
  check_keys(*corpus, "corpus", {"train", "valid", "valid_fraction"});
  const json* train = find(*corpus, "train");
  if (!train) fail_field("corpus.train", "field is required");
  config.train_corpus = resolve_path(base_dir, as_string(*train, "corpus.train"));
  if (const json* valid = find(*corpus, "valid"))
    config.valid_corpus = resolve_path(base_dir, as_string(*valid, "corpus.valid"));
  if (const json* frac = find(*corpus, "valid_fraction"))
    config.valid_fraction = as_double(*frac, "corpus.valid_fraction");

  if (const json* prep = find(root, "preprocess")) {
    as_object(*prep, "preprocess");
    check_keys(*prep, "preprocess",
               {"unicode_nfc", "collapse_digits", "transliterate",
                "diacritic_map"});
    if (const json* v = find(*prep, "unicode_nfc"))
      config.preprocess.unicode_nfc = as_bool(*v, "preprocess.unicode_nfc");
    if (const json* v = find(*prep, "collapse_digits"))
      config.preprocess.collapse_digits =
          as_bool(*v, "preprocess.collapse_digits");
    if (const json* v = find(*prep, "transliterate"))
      config.preprocess.transliterate = as_bool(*v, "preprocess.transliterate");
    if (const json* v = find(*prep, "diacritic_map")) {
      // Either a path to a mapping file or the inline [[from, to], ...]
      // codepoint pairs the canonical form uses.
      if (v->is_array()) {
        for (std::size_t i = 0; i < v->size(); ++i) {
          const std::string entry =
              "preprocess.diacritic_map[" + std::to_string(i) + "]";
          const json& pair = (*v)[i];
          if (!pair.is_array() || pair.size() != 2)
            fail_field(entry, "expected a [from, to] codepoint pair");
          config.preprocess.diacritic_map
              [static_cast<char32_t>(as_uint(pair[0], entry + "[0]"))] =
              static_cast<char32_t>(as_uint(pair[1], entry + "[1]"));
        }
      } else {
        const std::string path =
            resolve_path(base_dir, as_string(*v, "preprocess.diacritic_map"));
        require_file(path, "preprocess.diacritic_map");
        try {
          config.preprocess.diacritic_map = load_diacritic_map(path);
        } catch (const Error& e) {
          fail_field("preprocess.diacritic_map", e.what());
        }
      }
    }
  }

  const json* runs = find(root, "runs");
  if (!runs) fail_field("runs", "section is required");
  if (!runs->is_array()) fail_field("runs", "expected an array");
  for (std::size_t i = 0; i < runs->size(); ++i) {
    const std::string base = "runs[" + std::to_string(i) + "]";
    const json& entry = as_object((*runs)[i], base);
    check_keys(entry, base, {"scheme", "vocab_size"});
    const json* scheme = find(entry, "scheme");
    const json* vocab = find(entry, "vocab_size");
    if (!scheme) fail_field(base + ".scheme", "field is required");
    if (!vocab) fail_field(base + ".vocab_size", "field is required");
    SchemeRun run;
    const std::string scheme_text = as_string(*scheme, base + ".scheme");
    try {
      run.scheme = scheme_from_name(scheme_text);
    } catch (const Error&) {
      fail_field(base + ".scheme", "unknown scheme '" + scheme_text +
                                       "' (allowed: " + allowed_schemes() + ")");
    }
    run.vocab_size = as_size(*vocab, base + ".vocab_size");
    config.runs.push_back(run);
  }

  if (const json* lmj = find(root, "lm")) {
    as_object(*lmj, "lm");
    check_keys(*lmj, "lm",
               {"emsize", "dim_feedforward", "nlayers", "nhead", "dropout",
                "batch_size", "seq_len", "optimizer"});
    if (const json* v = find(*lmj, "emsize"))
      config.lm.emsize = as_positive_int(*v, "lm.emsize");
    if (const json* v = find(*lmj, "dim_feedforward"))
      config.lm.dim_feedforward = as_positive_int(*v, "lm.dim_feedforward");
    if (const json* v = find(*lmj, "nlayers"))
      config.lm.nlayers = as_positive_int(*v, "lm.nlayers");
    if (const json* v = find(*lmj, "nhead"))
      config.lm.nhead = as_positive_int(*v, "lm.nhead");
    if (const json* v = find(*lmj, "dropout"))
      config.lm.dropout = as_double(*v, "lm.dropout");
    if (const json* v = find(*lmj, "batch_size"))
      config.lm.batch_size = as_positive_int(*v, "lm.batch_size");
    if (const json* v = find(*lmj, "seq_len"))
      config.lm.seq_len = as_positive_int(*v, "lm.seq_len");
    if (const json* opt = find(*lmj, "optimizer")) {
      as_object(*opt, "lm.optimizer");
      check_keys(*opt, "lm.optimizer",
                 {"learning_rate", "beta1", "beta2", "eps", "clip_norm",
                  "epochs"});
      if (const json* v = find(*opt, "learning_rate"))
        config.lm.optimizer.learning_rate =
            as_double(*v, "lm.optimizer.learning_rate");
      if (const json* v = find(*opt, "beta1"))
        config.lm.optimizer.beta1 = as_double(*v, "lm.optimizer.beta1");
      if (const json* v = find(*opt, "beta2"))
        config.lm.optimizer.beta2 = as_double(*v, "lm.optimizer.beta2");
      if (const json* v = find(*opt, "eps"))
        config.lm.optimizer.eps = as_double(*v, "lm.optimizer.eps");
      if (const json* v = find(*opt, "clip_norm"))
        config.lm.optimizer.clip_norm =
            as_double(*v, "lm.optimizer.clip_norm");
      if (const json* v = find(*opt, "epochs"))
        config.lm.optimizer.epochs = as_positive_int(*v, "lm.optimizer.epochs");
    }
  }

  if (const json* ft = find(root, "finetune")) {
    as_object(*ft, "finetune");
    check_keys(*ft, "finetune",
               {"epochs", "batch_size", "hidden_dim", "learning_rate",
                "clip_norm", "valid_fraction", "joint", "max_len", "tasks"});
    if (const json* v = find(*ft, "epochs"))
      config.finetune.config.epochs = as_positive_int(*v, "finetune.epochs");
    if (const json* v = find(*ft, "batch_size"))
      config.finetune.config.batch_size =
          as_positive_int(*v, "finetune.batch_size");
    if (const json* v = find(*ft, "hidden_dim"))
      config.finetune.config.hidden_dim =
          as_positive_int(*v, "finetune.hidden_dim");
    if (const json* v = find(*ft, "learning_rate"))
      config.finetune.config.learning_rate =
          as_double(*v, "finetune.learning_rate");
    if (const json* v = find(*ft, "clip_norm"))
      config.finetune.config.clip_norm = as_double(*v, "finetune.clip_norm");
    if (const json* v = find(*ft, "valid_fraction"))
      config.finetune.config.valid_fraction =
          as_double(*v, "finetune.valid_fraction");
    if (const json* v = find(*ft, "joint"))
      config.finetune.config.joint = as_bool(*v, "finetune.joint");
    if (const json* v = find(*ft, "max_len"))
      config.finetune.max_len = as_size(*v, "finetune.max_len");
    if (const json* tasks = find(*ft, "tasks")) {
      if (!tasks->is_array()) fail_field("finetune.tasks", "expected an array");
      for (std::size_t i = 0; i < tasks->size(); ++i) {
        const std::string base = "finetune.tasks[" + std::to_string(i) + "]";
        const json& entry = as_object((*tasks)[i], base);
        check_keys(entry, base, {"task", "path"});
        const json* name = find(entry, "task");
        const json* path = find(entry, "path");
        if (!name) fail_field(base + ".task", "field is required");
        if (!path) fail_field(base + ".path", "field is required");
        TaskSpec spec;
        spec.task = as_string(*name, base + ".task");
        spec.path = resolve_path(base_dir, as_string(*path, base + ".path"));
        config.finetune.tasks.push_back(std::move(spec));
      }
    }
  }

  if (const json* an = find(root, "analysis")) {
    as_object(*an, "analysis");
    check_keys(*an, "analysis", {"top_k", "baseline_scheme"});
    if (const json* v = find(*an, "top_k")) {
      if (!v->is_array()) fail_field("analysis.top_k", "expected an array");
      config.analysis.top_k.clear();
      for (std::size_t i = 0; i < v->size(); ++i)
        config.analysis.top_k.push_back(
            as_size((*v)[i], "analysis.top_k[" + std::to_string(i) + "]"));
    }
    if (const json* v = find(*an, "baseline_scheme")) {
      const std::string name = as_string(*v, "analysis.baseline_scheme");
      try {
        scheme_from_name(name);
      } catch (const Error&) {
        fail_field("analysis.baseline_scheme",
                   "unknown scheme '" + name + "' (allowed: " +
                       allowed_schemes() + ")");
      }
      config.analysis.baseline_scheme = name;
    }
  }

  if (const json* v = find(root, "output_dir"))
    config.output_dir = resolve_path(base_dir, as_string(*v, "output_dir"));
  if (const json* v = find(root, "seed")) config.seed = as_uint(*v, "seed");

  config.validate(true);
  return config;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOFailure("cannot read config file " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return experiment_config_from_json(
      text, fs::path(path).parent_path().string(), path);
}

// ---------------------------------------------------------------------------
// Stage execution
// ---------------------------------------------------------------------------

namespace {

std::string hash_hex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(hash));
  return std::string(buf);
}

std::string slurp_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOFailure("cannot read " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void write_text(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IOFailure("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IOFailure("failed writing " + path.string());
}

std::string record_file_name(const std::string& stage_key) {
  std::string name = stage_key;
  std::replace(name.begin(), name.end(), '/', '_');
  return name + ".json";
}

// A stage is current when its record carries the active config hash and all
// recorded outputs still exist.
bool stage_current(const fs::path& out_dir, const std::string& stage_key,
                   const std::string& hash,
                   const std::vector<std::string>& outputs) {
  const fs::path record =
      out_dir / "stage_records" / record_file_name(stage_key);
  if (!fs::exists(record)) return false;
  try {
    const json doc = json::parse(slurp_file(record));
    if (doc.at("stage") != stage_key || doc.at("config_hash") != hash)
      return false;
  } catch (...) {
    return false;
  }
  for (const std::string& output : outputs)
    if (!fs::exists(out_dir / output)) return false;
  return true;
}

void write_stage_record(const fs::path& out_dir, const std::string& stage_key,
                        const std::string& hash,
                        const std::vector<std::string>& outputs) {
  json doc;
  doc["stage"] = stage_key;
  doc["config_hash"] = hash;
  doc["outputs"] = outputs;
  write_text(out_dir / "stage_records" / record_file_name(stage_key),
             doc.dump(2) + "\n");
}

// Exclusive advisory lock: created O_EXCL, removed on scope exit, so two
// concurrent runs can never interleave writes under one output directory.
class LockFile {
 public:
  explicit LockFile(const fs::path& path) : path_(path.string()) {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw StageFailure("output directory is locked by another run (" +
                         path_ + " exists; delete it if stale)");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto written = ::write(fd_, pid.data(), pid.size());
  }
  ~LockFile() {
    if (fd_ >= 0) {
      ::close(fd_);
      ::unlink(path_.c_str());
    }
  }
  LockFile(const LockFile&) = delete;
  LockFile& operator=(const LockFile&) = delete;

 private:
  std::string path_;
  int fd_ = -1;
};

RawCorpus load_saved_corpus(const fs::path& out_dir, const char* which) {
  return load_corpus((out_dir / "corpus" / which).string());
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, Stage last) {
  config.validate(true);

  const fs::path out_dir(config.output_dir);
  std::error_code ec;
  fs::create_directories(out_dir / "stage_records", ec);
  fs::create_directories(out_dir / "corpus", ec);
  if (!fs::is_directory(out_dir))
    throw StageFailure("cannot create output directory " + config.output_dir);
  LockFile lock(out_dir / ".lock");

  const std::string hash = hash_hex(config_hash(config));
  ExperimentResult result;

  const auto run_stage = [&](const std::string& key,
                             const std::vector<std::string>& outputs,
                             const auto& body) {
    if (stage_current(out_dir, key, hash, outputs)) {
      result.stages.push_back({key, true});
      return;
    }
    try {
      body();
    } catch (const std::exception& e) {
      throw StageFailure(key + ": " + e.what());
    }
    write_stage_record(out_dir, key, hash, outputs);
    result.stages.push_back({key, false});
  };
  const auto wants = [&](Stage stage) {
    return static_cast<int>(last) >= static_cast<int>(stage);
  };

  run_stage("preprocess", {"corpus/train.txt", "corpus/valid.txt"}, [&] {
    RawCorpus train =
        normalize_corpus(load_corpus(config.train_corpus), config.preprocess);
    RawCorpus valid;
    if (!config.valid_corpus.empty()) {
      valid =
          normalize_corpus(load_corpus(config.valid_corpus), config.preprocess);
    } else {
      auto split = split_corpus(train, config.valid_fraction,
                                stage_seed(config.seed, "preprocess"));
      train = std::move(split.first);
      valid = std::move(split.second);
    }
    save_corpus(train, (out_dir / "corpus" / "train.txt").string());
    save_corpus(valid, (out_dir / "corpus" / "valid.txt").string());
  });
  if (!wants(Stage::tokenizers)) return result;

  for (const SchemeRun& run : config.runs) {
    const std::string key = "tokenizer/" + run.label();
    const std::string model_rel = "runs/" + run.label() + "/model.json";
    run_stage(key, {model_rel}, [&] {
      fs::create_directories(out_dir / "runs" / run.label());
      const RawCorpus train = load_saved_corpus(out_dir, "train.txt");
      TokenizerTrainConfig tc;
      tc.vocab_size = run.vocab_size;
      tc.preprocess = config.preprocess;
      Tokenizer::train(run.scheme, train, tc)
          .save((out_dir / model_rel).string());
    });
  }
  if (!wants(Stage::pretrain)) return result;

  for (const SchemeRun& run : config.runs) {
    const std::string key = "pretrain/" + run.label();
    const std::string run_rel = "runs/" + run.label();
    run_stage(key, {run_rel + "/checkpoint.bin", run_rel + "/ppl.csv"}, [&] {
      const Tokenizer tok =
          Tokenizer::load((out_dir / run_rel / "model.json").string());
      const auto train_batches =
          batchify(encode_corpus(tok, load_saved_corpus(out_dir, "train.txt")),
                   config.lm.batch_size, config.lm.seq_len);
      const auto valid_batches =
          batchify(encode_corpus(tok, load_saved_corpus(out_dir, "valid.txt")),
                   config.lm.batch_size, config.lm.seq_len);

      lm::LMConfig lm_config = config.lm;
      lm_config.vocab_size = static_cast<int>(tok.vocab().size());
      lm_config.seed = stage_seed(config.seed, key);
      lm_config.validate();

      lm::Transformer<float> model(lm_config, lm::Backend::openmp);
      lm::AdamState<float> state;
      std::vector<lm::PplRow> rows;
      for (int epoch = 0; epoch < lm_config.optimizer.epochs; ++epoch) {
        const auto train_record = lm::train_epoch(
            model, train_batches, state, static_cast<std::uint64_t>(epoch));
        const auto valid_record = lm::evaluate(model, valid_batches);
        rows.push_back({epoch + 1, "train", train_record.perplexity()});
        rows.push_back({epoch + 1, "valid", valid_record.perplexity()});
      }
      lm::save_model((out_dir / run_rel / "checkpoint.bin").string(), model,
                     json{{"run", run.label()}}.dump());
      lm::write_ppl_csv((out_dir / run_rel / "ppl.csv").string(), rows);
    });
  }
  if (!wants(Stage::finetune)) return result;

  for (const SchemeRun& run : config.runs) {
    const std::string run_rel = "runs/" + run.label();
    for (const TaskSpec& task : config.finetune.tasks) {
      const std::string key = "finetune/" + run.label() + "/" + task.task;
      const std::string metrics_rel = run_rel + "/metrics_" + task.task + ".json";
      run_stage(key, {metrics_rel}, [&] {
        const Tokenizer tok =
            Tokenizer::load((out_dir / run_rel / "model.json").string());
        auto model = lm::model_from_checkpoint<float>(
            lm::load_checkpoint((out_dir / run_rel / "checkpoint.bin").string()),
            lm::Backend::openmp);

        const std::size_t cap = effective_max_len(config);
        EncodedTask encoded;
        if (task.task == "cps")
          encoded = encode_cps_task(tok, load_cps_tsv(task.path), cap);
        else if (task.task == "cc")
          encoded = encode_cc_task(tok, load_cc_tsv(task.path), cap);
        else
          encoded =
              encode_seq_label_task(tok, load_conll(task.path), cap, task.task);

        FinetuneConfig ft = config.finetune.config;
        ft.seed = stage_seed(config.seed, key);
        auto finetuned = finetune_task<float>(model, task.task,
                                              encoded.n_classes,
                                              encoded.examples, {}, ft);
        finetuned.metrics.scheme = run.label();
        write_text(out_dir / metrics_rel,
                   task_metrics_to_json(finetuned.metrics) + "\n");
      });
    }
  }
  if (!wants(Stage::analyze)) return result;

  run_stage("analyze",
            {"ppl_curves.csv", "token_frequencies.csv", "coverage.csv",
             "batch_inflation.csv", "summary.json"},
            [&] {
              const RawCorpus train = load_saved_corpus(out_dir, "train.txt");
              std::vector<Tokenizer> models;
              models.reserve(config.runs.size());
              for (const SchemeRun& run : config.runs)
                models.push_back(Tokenizer::load(
                    (out_dir / "runs" / run.label() / "model.json").string()));

              analysis::ReportInputs inputs;
              inputs.frequencies =
                  analysis::token_frequency_reports(train, models);
              for (std::size_t i = 0; i < inputs.frequencies.size(); ++i)
                inputs.frequencies[i].scheme = config.runs[i].label();
              for (const auto& report : inputs.frequencies)
                for (std::size_t k : config.analysis.top_k)
                  inputs.coverages.push_back(
                      analysis::top_token_coverage(report, k));

              inputs.inflations = analysis::batch_inflation(
                  train, models, resolved_baseline(config),
                  config.lm.batch_size, config.lm.seq_len);
              for (std::size_t i = 0; i < inputs.inflations.size(); ++i)
                inputs.inflations[i].scheme = config.runs[i].label();

              for (const SchemeRun& run : config.runs) {
                const auto rows = lm::read_ppl_csv(
                    (out_dir / "runs" / run.label() / "ppl.csv").string());
                std::map<int, analysis::PerplexityPoint> by_epoch;
                for (const auto& row : rows) {
                  auto& point = by_epoch[row.epoch];
                  point.epoch = row.epoch;
                  if (row.split == "train") point.train_ppl = row.ppl;
                  if (row.split == "valid") point.valid_ppl = row.ppl;
                }
                analysis::PerplexityCurve curve;
                curve.scheme = run.label();
                for (const auto& [epoch, point] : by_epoch)
                  curve.points.push_back(point);
                inputs.curves.push_back(std::move(curve));
              }

              for (const SchemeRun& run : config.runs)
                for (const TaskSpec& task : config.finetune.tasks)
                  inputs.metrics.push_back(task_metrics_from_json(
                      slurp_file(out_dir / "runs" / run.label() /
                                 ("metrics_" + task.task + ".json"))));

              analysis::emit_reports(inputs, out_dir.string());
            });
  result.summary_path = (out_dir / "summary.json").string();
  return result;
}

}  // namespace toklab::pipeline
