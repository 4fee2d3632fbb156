// Command-line front end: config-driven experiment stages plus small
// utilities for applying a trained subword model by hand.
//
// Exit codes: 0 success, 2 bad usage or invalid config/input format,
// 3 runtime failure (I/O, stage errors).

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "toklab/corpus.hpp"
#include "toklab/errors.hpp"
#include "toklab/lm/checkpoint.hpp"
#include "toklab/lm/train.hpp"
#include "toklab/pipeline.hpp"
#include "toklab/tokenizer.hpp"

namespace {

using toklab::Tokenizer;
using toklab::TokenId;
namespace pipeline = toklab::pipeline;

struct StageCommand {
  std::string config_path;
  std::string output_dir;  // optional override
  std::optional<std::uint64_t> seed;
};

pipeline::ExperimentConfig load_with_overrides(const StageCommand& cmd) {
  pipeline::ExperimentConfig config =
      pipeline::load_experiment_config(cmd.config_path);
  if (!cmd.output_dir.empty()) config.output_dir = cmd.output_dir;
  if (cmd.seed) config.seed = *cmd.seed;
  return config;
}

void report_stages(const pipeline::ExperimentResult& result) {
  for (const auto& outcome : result.stages)
    std::cout << (outcome.skipped ? "skip " : "run  ") << outcome.stage << "\n";
  if (!result.summary_path.empty())
    std::cout << "summary: " << result.summary_path << "\n";
}

// Registers one stage-limited variant of `run`; they share flags so every
// stage command accepts the same config + overrides.
StageCommand* add_stage_command(CLI::App& app, const std::string& name,
                                const std::string& description) {
  auto cmd = std::make_shared<StageCommand>();
  CLI::App* sub = app.add_subcommand(name, description);
  sub->add_option("--config", cmd->config_path, "experiment config JSON")
      ->required();
  sub->add_option("--output-dir", cmd->output_dir,
                  "override the config's output directory");
  sub->add_option("--seed", cmd->seed, "override the config's global seed");
  // Keep the shared_ptr alive for the app's lifetime.
  sub->parse_complete_callback([cmd] {});
  return cmd.get();
}

std::vector<std::string> read_lines(const std::string& path) {
  std::istream* in = &std::cin;
  std::ifstream file;
  if (path != "-") {
    file.open(path, std::ios::binary);
    if (!file) throw toklab::IOFailure("cannot read " + path);
    in = &file;
  }
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(*in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ostream* out = &std::cout;
  std::ofstream file;
  if (path != "-") {
    file.open(path, std::ios::binary | std::ios::trunc);
    if (!file) throw toklab::IOFailure("cannot write " + path);
    out = &file;
  }
  for (const std::string& line : lines) *out << line << "\n";
  out->flush();
  if (!*out) throw toklab::IOFailure("failed writing output");
}

int parse_id(const std::string& field) {
  int value = 0;
  const auto [ptr, err] =
      std::from_chars(field.data(), field.data() + field.size(), value);
  if (err != std::errc() || ptr != field.data() + field.size())
    throw toklab::ParseError("not a token id: '" + field + "'");
  return value;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"subword tokenization toolkit: train tokenizers, probe them "
               "with a small causal LM, and compare schemes"};
  app.require_subcommand(1);

  // --- config-driven stages -------------------------------------------------
  StageCommand* validate_cmd =
      add_stage_command(app, "validate", "parse a config and echo its canonical form");
  StageCommand* preprocess_cmd =
      add_stage_command(app, "preprocess", "normalize the corpus and write train/valid splits");
  StageCommand* tokenizer_cmd =
      add_stage_command(app, "train-tokenizer", "train the configured subword models");
  StageCommand* pretrain_cmd =
      add_stage_command(app, "pretrain", "train the language model for every run");
  StageCommand* finetune_cmd =
      add_stage_command(app, "finetune", "run the configured classification tasks");
  StageCommand* analyze_cmd =
      add_stage_command(app, "analyze", "emit comparison reports and the summary");
  StageCommand* run_cmd =
      add_stage_command(app, "run", "execute all stages in order (same as analyze)");

  // --- utilities --------------------------------------------------------------
  struct CodecCommand {
    std::string model, input = "-", output = "-";
    bool tokens = false;
  } encode_args, decode_args;

  CLI::App* encode_sub = app.add_subcommand(
      "encode", "encode text lines with a trained subword model");
  encode_sub->add_option("--model", encode_args.model, "tokenizer model JSON")
      ->required();
  encode_sub->add_option("--input", encode_args.input, "text file, one line per document ('-' = stdin)");
  encode_sub->add_option("--output", encode_args.output, "destination ('-' = stdout)");
  encode_sub->add_flag("--tokens", encode_args.tokens,
                       "print token strings instead of ids");

  CLI::App* decode_sub = app.add_subcommand(
      "decode", "decode lines of space-separated token ids back to text");
  decode_sub->add_option("--model", decode_args.model, "tokenizer model JSON")
      ->required();
  decode_sub->add_option("--input", decode_args.input, "id file ('-' = stdin)");
  decode_sub->add_option("--output", decode_args.output, "destination ('-' = stdout)");

  struct EvalCommand {
    std::string checkpoint, model, corpus;
    int batch_size = 0, seq_len = 0;  // 0 = take from the checkpoint config
  } eval_args;
  CLI::App* eval_sub = app.add_subcommand(
      "eval-ppl", "evaluate a saved checkpoint's perplexity on a corpus");
  eval_sub->add_option("--checkpoint", eval_args.checkpoint, "model checkpoint")
      ->required();
  eval_sub->add_option("--model", eval_args.model, "tokenizer model JSON")
      ->required();
  eval_sub->add_option("--corpus", eval_args.corpus, "text corpus to score")
      ->required();
  eval_sub->add_option("--batch-size", eval_args.batch_size,
                       "override the checkpoint's batch size");
  eval_sub->add_option("--seq-len", eval_args.seq_len,
                       "override the checkpoint's sequence length");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const auto run_to_stage = [](const StageCommand& cmd, pipeline::Stage last) {
    report_stages(pipeline::run_experiment(load_with_overrides(cmd), last));
    return 0;
  };

  try {
    if (app.got_subcommand("validate")) {
      pipeline::ExperimentConfig config = load_with_overrides(*validate_cmd);
      std::cout << pipeline::experiment_config_to_json(config);
      return 0;
    }
    if (app.got_subcommand("preprocess"))
      return run_to_stage(*preprocess_cmd, pipeline::Stage::preprocess);
    if (app.got_subcommand("train-tokenizer"))
      return run_to_stage(*tokenizer_cmd, pipeline::Stage::tokenizers);
    if (app.got_subcommand("pretrain"))
      return run_to_stage(*pretrain_cmd, pipeline::Stage::pretrain);
    if (app.got_subcommand("finetune"))
      return run_to_stage(*finetune_cmd, pipeline::Stage::finetune);
    if (app.got_subcommand("analyze"))
      return run_to_stage(*analyze_cmd, pipeline::Stage::analyze);
    if (app.got_subcommand("run"))
      return run_to_stage(*run_cmd, pipeline::Stage::analyze);

    if (app.got_subcommand("encode")) {
      const Tokenizer tok = Tokenizer::load(encode_args.model);
      std::vector<std::string> out;
      for (const std::string& line : read_lines(encode_args.input)) {
        std::string row;
        if (encode_args.tokens) {
          for (const std::string& token : tok.encode_tokens(line)) {
            if (!row.empty()) row += ' ';
            row += token;
          }
        } else {
          for (TokenId id : tok.encode(line)) {
            if (!row.empty()) row += ' ';
            row += std::to_string(id);
          }
        }
        out.push_back(std::move(row));
      }
      write_lines(encode_args.output, out);
      return 0;
    }

    if (app.got_subcommand("decode")) {
      const Tokenizer tok = Tokenizer::load(decode_args.model);
      std::vector<std::string> out;
      for (const std::string& line : read_lines(decode_args.input)) {
        std::vector<TokenId> ids;
        std::size_t start = 0;
        while (start < line.size()) {
          std::size_t end = line.find(' ', start);
          if (end == std::string::npos) end = line.size();
          if (end > start) ids.push_back(parse_id(line.substr(start, end - start)));
          start = end + 1;
        }
        out.push_back(tok.decode(ids));
      }
      write_lines(decode_args.output, out);
      return 0;
    }

    if (app.got_subcommand("eval-ppl")) {
      namespace lm = toklab::lm;
      const lm::Checkpoint ckpt = lm::load_checkpoint(eval_args.checkpoint);
      auto model = lm::model_from_checkpoint<float>(ckpt, lm::Backend::openmp);
      const Tokenizer tok = Tokenizer::load(eval_args.model);
      const toklab::RawCorpus corpus = toklab::load_corpus(eval_args.corpus);
      const int batch_size = eval_args.batch_size > 0 ? eval_args.batch_size
                                                      : ckpt.config.batch_size;
      const int seq_len =
          eval_args.seq_len > 0 ? eval_args.seq_len : ckpt.config.seq_len;
      const auto batches =
          toklab::batchify(encode_corpus(tok, corpus), batch_size, seq_len);
      if (batches.empty())
        throw toklab::EmptyCorpus("corpus too small for one batch at batch_size " +
                                  std::to_string(batch_size) + ", seq_len " +
                                  std::to_string(seq_len));
      const lm::EvalRecord record = lm::evaluate(model, batches);
      std::printf("tokens: %lld\nppl: %.6f\n",
                  static_cast<long long>(record.n), record.perplexity());
      return 0;
    }
  } catch (const toklab::ConfigInvalid& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const toklab::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
