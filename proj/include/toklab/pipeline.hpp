#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "toklab/finetune.hpp"
#include "toklab/lm/config.hpp"
#include "toklab/text_normalize.hpp"
#include "toklab/tokenizer.hpp"

namespace toklab::pipeline {

// One tokenizer-training run of the experiment grid.
struct SchemeRun {
  Scheme scheme = Scheme::word;
  std::size_t vocab_size = 30000;

  // Directory name of the run's artifacts, e.g. "word-30000".
  std::string label() const;
};

// One downstream evaluation dataset.
struct TaskSpec {
  std::string task;  // cc | cps | ner | pos
  std::string path;  // TSV for cc/cps, two-column token/tag rows for ner/pos
};

struct FinetuneSettings {
  FinetuneConfig config;
  std::size_t max_len = 0;  // token cap per segment; 0 means the LM's seq_len
  std::vector<TaskSpec> tasks;
};

struct AnalysisSettings {
  std::vector<std::size_t> top_k = {1};
  // Scheme the batch-inflation percentages are measured against. Empty picks
  // "word" when present among the runs, otherwise the first run's scheme.
  std::string baseline_scheme;
};

struct ExperimentConfig {
  std::string train_corpus;
  std::string valid_corpus;      // empty: hold out valid_fraction of train
  double valid_fraction = 0.05;
  PreprocessConfig preprocess;
  std::vector<SchemeRun> runs;   // at least one
  lm::LMConfig lm;               // vocab_size & seed are set per run
  FinetuneSettings finetune;
  AnalysisSettings analysis;
  std::string output_dir = "out";
  std::uint64_t seed = 0;

  // Field-by-field schema validation with diagnostics that name the field;
  // check_paths additionally requires every referenced input file to exist.
  // Throws ConfigInvalid. Never touches the output directory.
  void validate(bool check_paths) const;
};

// Canonical form: every field explicit, resolved defaults, fixed key order.
// Identical configurations always produce identical bytes.
std::string experiment_config_to_json(const ExperimentConfig& config);

// Parses and fully validates. Relative paths resolve against base_dir.
// Malformed JSON raises ParseError("<source>:<line>:<column>: ...");
// schema violations raise ConfigInvalid naming the field.
ExperimentConfig experiment_config_from_json(const std::string& text,
                                             const std::string& base_dir,
                                             const std::string& source_name);

// Reads the file and delegates to experiment_config_from_json with the
// file's directory as base_dir. Throws IOFailure when unreadable.
ExperimentConfig load_experiment_config(const std::string& path);

// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes);

// Per-stage seed derived from the global seed and the stage key, so every
// stage is independently reproducible no matter which stages ran before it.
std::uint64_t stage_seed(std::uint64_t global_seed, std::string_view stage_key);

// Hash of the canonical config with output_dir removed: relocating the
// output directory never invalidates previously computed artifacts.
std::uint64_t config_hash(const ExperimentConfig& config);

// Pipeline stages in execution order. Selecting a stage runs everything up
// to and including it (earlier stages skip when their artifacts are current).
enum class Stage { preprocess, tokenizers, pretrain, finetune, analyze };

struct StageOutcome {
  std::string stage;     // e.g. "pretrain/word-3000"
  bool skipped = false;  // artifacts existed with a matching config hash
};

struct ExperimentResult {
  std::vector<StageOutcome> stages;
  std::string summary_path;  // set once the analyze stage has run
};

// Executes the stages in order under config.output_dir:
//   preprocess           normalized + split corpus files
//   tokenizers           one trained model.json per run
//   pretrain             checkpoint.bin + ppl.csv per run
//   finetune             metrics_<task>.json per run x task
//   analyze              report CSVs + consolidated summary.json
// A stage whose record matches the current config hash and whose outputs all
// exist is skipped; everything else is recomputed. A lock file in the output
// directory rejects concurrent runs. Stage errors are rethrown as
// StageFailure prefixed with the stage key.
ExperimentResult run_experiment(const ExperimentConfig& config,
                                Stage last = Stage::analyze);

}  // namespace toklab::pipeline
