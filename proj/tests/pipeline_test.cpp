// End-to-end coverage for the config-driven experiment pipeline: config
// parsing diagnostics, canonical serialization, hashing, stage execution,
// artifact layout, resumability, locking, and the command-line front end.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <nlohmann/json.hpp>

#include "toklab/errors.hpp"
#include "toklab/finetune.hpp"
#include "toklab/lm/checkpoint.hpp"
#include "toklab/lm/kernels.hpp"
#include "toklab/pipeline.hpp"
#include "toklab/text_normalize.hpp"
#include "toklab/tokenizer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace toklab;
using namespace toklab::pipeline;

namespace {

fs::path temp_dir() {
  static std::atomic<int> counter{0};
  static std::mt19937_64 rng(std::random_device{}());
  fs::path dir = fs::temp_directory_path() /
                 ("toklab_pipe_" + std::to_string(rng()) + "_" +
                  std::to_string(counter++));
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  REQUIRE(out.good());
  out << text;
  REQUIRE(out.good());
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "missing file " << path.string());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

std::string corpus_text() {
  // Deterministic lowercase sentences built from a small closed vocabulary so
  // every scheme trains quickly and the word model covers the corpus.
  const std::vector<std::string> subjects = {
      "the harbor", "a fisher", "the market", "an old sailor",
      "the lighthouse", "a small boat", "the tide", "a grey gull"};
  const std::vector<std::string> verbs = {"watches", "follows", "passes",
                                          "greets", "remembers", "crosses"};
  const std::vector<std::string> objects = {
      "the quiet pier", "a wooden crate", "the morning fog",
      "a rusty anchor", "the salted rope", "a distant sail"};
  std::string text;
  for (std::size_t i = 0; i < 60; ++i) {
    text += subjects[i % subjects.size()] + " " + verbs[(i / 3) % verbs.size()] +
            " " + objects[(i * 5 + i / 7) % objects.size()] + " near the shore\n";
  }
  return text;
}

std::string cc_tsv() {
  return "text\tlabel\n"
         "the harbor feels calm\tcalm\n"
         "a quiet pier at dawn\tcalm\n"
         "the tide rests tonight\tcalm\n"
         "soft fog over water\tcalm\n"
         "the storm breaks loud\tstorm\n"
         "waves crash on rocks\tstorm\n"
         "wind tears the sail\tstorm\n"
         "thunder over the bay\tstorm\n";
}

std::string cps_tsv() {
  return "text\ttext_b\tlabel\n"
         "the harbor lights\tthe harbor lights\t1\n"
         "a small boat\ta small boat\t1\n"
         "the morning fog\tthe morning fog\t1\n"
         "a rusty anchor\ta rusty anchor\t1\n"
         "the harbor lights\ta distant sail\t0\n"
         "a small boat\tthe salted rope\t0\n"
         "the morning fog\ta wooden crate\t0\n"
         "a rusty anchor\tthe quiet pier\t0\n";
}

// Config JSON with relative paths; exercised both through files on disk and
// through experiment_config_from_json directly.
std::string config_json(const std::string& output_dir = "out") {
  return R"({
  "corpus": { "train": "corpus.txt", "valid_fraction": 0.25 },
  "runs": [
    { "scheme": "word", "vocab_size": 120 },
    { "scheme": "char_bpe", "vocab_size": 80 }
  ],
  "lm": {
    "emsize": 32, "dim_feedforward": 48, "nlayers": 1, "nhead": 2,
    "dropout": 0.1, "batch_size": 2, "seq_len": 16,
    "optimizer": { "learning_rate": 0.001, "epochs": 2 }
  },
  "finetune": {
    "epochs": 2, "batch_size": 4, "hidden_dim": 16,
    "learning_rate": 0.003, "valid_fraction": 0.25, "max_len": 12,
    "tasks": [
      { "task": "cc", "path": "cc.tsv" },
      { "task": "cps", "path": "cps.tsv" }
    ]
  },
  "analysis": { "top_k": [1, 5] },
  "output_dir": ")" +
         output_dir + R"(",
  "seed": 7
})";
}

// Creates corpus + task files + config.json under a fresh directory.
fs::path make_workspace(const std::string& config = config_json()) {
  fs::path ws = temp_dir();
  write_file(ws / "corpus.txt", corpus_text());
  write_file(ws / "cc.tsv", cc_tsv());
  write_file(ws / "cps.tsv", cps_tsv());
  write_file(ws / "config.json", config);
  return ws;
}

void check_field_error(const std::string& mutated_config, const fs::path& ws,
                       const std::string& expected_fragment) {
  try {
    experiment_config_from_json(mutated_config, ws.string(), "cfg.json");
    FAIL_CHECK("expected ConfigInvalid mentioning '" << expected_fragment
                                                     << "'");
  } catch (const ConfigInvalid& e) {
    CHECK_MESSAGE(std::string(e.what()).find(expected_fragment) !=
                      std::string::npos,
                  "message '" << e.what() << "' lacks '" << expected_fragment
                              << "'");
  }
}

std::string replace_once(std::string text, const std::string& from,
                         const std::string& to) {
  const auto pos = text.find(from);
  REQUIRE(pos != std::string::npos);
  return text.replace(pos, from.size(), to);
}

std::vector<std::string> stage_names(const ExperimentResult& result) {
  std::vector<std::string> names;
  for (const auto& outcome : result.stages) names.push_back(outcome.stage);
  return names;
}

bool all_skipped(const ExperimentResult& result) {
  for (const auto& outcome : result.stages)
    if (!outcome.skipped) return false;
  return !result.stages.empty();
}

bool none_skipped(const ExperimentResult& result) {
  for (const auto& outcome : result.stages)
    if (outcome.skipped) return false;
  return !result.stages.empty();
}

int run_cli(const std::string& args, const fs::path& dir,
            std::string* stdout_text = nullptr) {
  const fs::path out_file = dir / "cli_stdout.txt";
  const std::string command = std::string(TOKLAB_CLI_PATH) + " " + args + " >" +
                              out_file.string() + " 2>" +
                              (dir / "cli_stderr.txt").string();
  const int raw = std::system(command.c_str());
  REQUIRE(raw != -1);
  if (stdout_text) *stdout_text = slurp(out_file);
  REQUIRE(WIFEXITED(raw));
  return WEXITSTATUS(raw);
}

}  // namespace

TEST_CASE("config loading resolves paths and echoes canonically") {
  const fs::path ws = make_workspace();
  const ExperimentConfig config =
      load_experiment_config((ws / "config.json").string());

  CHECK(config.train_corpus == (ws / "corpus.txt").string());
  CHECK(config.valid_corpus.empty());
  CHECK(config.output_dir == (ws / "out").string());
  CHECK(config.seed == 7);
  CHECK(config.runs.size() == 2);
  CHECK(config.runs[0].label() == "word-120");
  CHECK(config.runs[1].label() == "char_bpe-80");
  CHECK(config.lm.emsize == 32);
  CHECK(config.lm.optimizer.epochs == 2);
  CHECK(config.finetune.max_len == 12);
  CHECK(config.finetune.tasks.size() == 2);
  CHECK(config.finetune.tasks[1].path == (ws / "cps.tsv").string());
  CHECK(config.analysis.top_k == std::vector<std::size_t>{1, 5});

  const std::string canonical = experiment_config_to_json(config);
  // The canonical form resolves the baseline and every untouched default.
  const json doc = json::parse(canonical);
  CHECK(doc.at("analysis").at("baseline_scheme") == "word");
  CHECK(doc.at("finetune").at("max_len") == 12);
  CHECK(doc.at("lm").at("optimizer").at("beta1") == 0.9);
  CHECK(doc.at("corpus").at("valid_fraction") == 0.25);

  // Parsing the canonical text back yields the identical canonical text.
  const ExperimentConfig echoed =
      experiment_config_from_json(canonical, "", "echo");
  CHECK(experiment_config_to_json(echoed) == canonical);
  CHECK(config_hash(echoed) == config_hash(config));
}

TEST_CASE("preprocess settings accept inline and file-based character maps") {
  const fs::path ws = make_workspace();
  const std::string with_inline = replace_once(
      config_json(), "\"corpus\"",
      "\"preprocess\": { \"transliterate\": true,"
      " \"diacritic_map\": [[2366, 65], [2367, 73]] },\n  \"corpus\"");
  const ExperimentConfig inline_config =
      experiment_config_from_json(with_inline, ws.string(), "cfg.json");
  CHECK(inline_config.preprocess.transliterate);
  REQUIRE(inline_config.preprocess.diacritic_map.size() == 2);
  CHECK(inline_config.preprocess.diacritic_map.at(0x93E) == U'A');
  CHECK(inline_config.preprocess.diacritic_map.at(0x93F) == U'I');

  // The canonical form carries the pairs inline, so it re-parses to the
  // same configuration wherever the original map file lives.
  const std::string canonical = experiment_config_to_json(inline_config);
  const ExperimentConfig echoed =
      experiment_config_from_json(canonical, "", "echo");
  CHECK(echoed.preprocess.diacritic_map ==
        inline_config.preprocess.diacritic_map);
  CHECK(config_hash(echoed) == config_hash(inline_config));

  save_diacritic_map(inline_config.preprocess.diacritic_map,
                     (ws / "map.tsv").string());
  const std::string with_file = replace_once(
      config_json(), "\"corpus\"",
      "\"preprocess\": { \"diacritic_map\": \"map.tsv\" },\n  \"corpus\"");
  const ExperimentConfig file_config =
      experiment_config_from_json(with_file, ws.string(), "cfg.json");
  CHECK(file_config.preprocess.diacritic_map ==
        inline_config.preprocess.diacritic_map);

  check_field_error(
      replace_once(with_file, "\"map.tsv\"", "\"missing.tsv\""), ws,
      "preprocess.diacritic_map");
  check_field_error(
      replace_once(with_inline, "[[2366, 65], [2367, 73]]", "[[2366]]"), ws,
      "preprocess.diacritic_map[0]");
}

TEST_CASE("config diagnostics name the failing field") {
  const fs::path ws = make_workspace();
  const std::string base = config_json();

  SUBCASE("unknown scheme lists the alternatives") {
    const std::string bad = replace_once(base, "\"char_bpe\"", "\"syllable\"");
    check_field_error(bad, ws, "runs[1].scheme");
    check_field_error(bad, ws, "byte_bpe");  // allowed list is spelled out
  }
  SUBCASE("byte-level runs need room for all byte symbols") {
    const std::string bad = replace_once(
        base, "{ \"scheme\": \"word\", \"vocab_size\": 120 }",
        "{ \"scheme\": \"byte_bpe\", \"vocab_size\": 100 }");
    check_field_error(bad, ws, "runs[0].vocab_size");
    check_field_error(bad, ws, "259");
  }
  SUBCASE("unknown keys are rejected with their path") {
    check_field_error(replace_once(base, "\"seed\": 7", "\"sead\": 7"), ws,
                      "config.sead");
    check_field_error(
        replace_once(base, "\"learning_rate\": 0.001", "\"momentum\": 0.9"), ws,
        "lm.optimizer.momentum");
  }
  SUBCASE("missing sections") {
    std::string no_train = replace_once(base, "\"train\": \"corpus.txt\", ", "");
    check_field_error(no_train, ws, "corpus.train");
    check_field_error(R"({ "corpus": { "train": "corpus.txt" } })", ws, "runs");
  }
  SUBCASE("range checks") {
    check_field_error(
        replace_once(base, "\"valid_fraction\": 0.25 }", "\"valid_fraction\": 1.5 }"),
        ws, "corpus.valid_fraction");
    check_field_error(replace_once(base, "\"top_k\": [1, 5]", "\"top_k\": [0]"),
                      ws, "analysis.top_k[0]");
    check_field_error(replace_once(base, "\"seed\": 7", "\"seed\": -3"), ws,
                      "seed");
    check_field_error(replace_once(base, "\"max_len\": 12", "\"max_len\": 64"),
                      ws, "finetune.max_len");
  }
  SUBCASE("duplicates") {
    check_field_error(
        replace_once(base, "{ \"scheme\": \"char_bpe\", \"vocab_size\": 80 }",
                     "{ \"scheme\": \"word\", \"vocab_size\": 120 }"),
        ws, "duplicate run 'word-120'");
    check_field_error(
        replace_once(base, "{ \"task\": \"cps\", \"path\": \"cps.tsv\" }",
                     "{ \"task\": \"cc\", \"path\": \"cps.tsv\" }"),
        ws, "duplicate task 'cc'");
  }
  SUBCASE("unknown task and missing file") {
    check_field_error(replace_once(base, "\"task\": \"cc\"", "\"task\": \"ccc\""),
                      ws, "finetune.tasks[0].task");
    check_field_error(
        replace_once(base, "\"path\": \"cc.tsv\"", "\"path\": \"nope.tsv\""), ws,
        "file not found");
  }
  SUBCASE("baseline must match a configured run") {
    const std::string bad = replace_once(
        base, "\"analysis\": { \"top_k\": [1, 5] }",
        "\"analysis\": { \"top_k\": [1], \"baseline_scheme\": \"morpheme\" }");
    check_field_error(bad, ws, "analysis.baseline_scheme");
  }
  SUBCASE("type errors") {
    check_field_error(replace_once(base, "\"seq_len\": 16", "\"seq_len\": \"16\""),
                      ws, "lm.seq_len");
    check_field_error(replace_once(base, "\"epochs\": 2 }", "\"epochs\": 0 }"),
                      ws, "lm.optimizer.epochs");
  }
}

TEST_CASE("malformed JSON reports file, line, and column") {
  const fs::path ws = make_workspace();
  const std::string broken = "{\n  \"corpus\": {\n    \"train\" \"x\"\n}\n}";
  try {
    experiment_config_from_json(broken, ws.string(), "cfg.json");
    FAIL_CHECK("expected ParseError");
  } catch (const ParseError& e) {
    const std::string message = e.what();
    CHECK(message.find("cfg.json:3:") != std::string::npos);
  }

  // And via the file loader, using the config path as the source name.
  write_file(ws / "broken.json", broken);
  try {
    load_experiment_config((ws / "broken.json").string());
    FAIL_CHECK("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("broken.json:3:") != std::string::npos);
  }

  CHECK_THROWS_AS(load_experiment_config((ws / "absent.json").string()),
                  IOFailure);
}

TEST_CASE("hashing is stable, seed-sensitive, and relocation-invariant") {
  // Standard 64-bit FNV-1a reference vectors.
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);

  CHECK(stage_seed(7, "pretrain/word-120") ==
        lm::mix_seed(7, fnv1a64("pretrain/word-120")));
  CHECK(stage_seed(7, "pretrain/word-120") != stage_seed(7, "pretrain/char_bpe-80"));
  CHECK(stage_seed(7, "pretrain/word-120") != stage_seed(8, "pretrain/word-120"));

  const fs::path ws = make_workspace();
  const ExperimentConfig config =
      load_experiment_config((ws / "config.json").string());

  ExperimentConfig moved = config;
  moved.output_dir = (ws / "elsewhere").string();
  CHECK(config_hash(moved) == config_hash(config));
  CHECK(experiment_config_to_json(moved) != experiment_config_to_json(config));

  ExperimentConfig reseeded = config;
  reseeded.seed = 8;
  CHECK(config_hash(reseeded) != config_hash(config));

  ExperimentConfig regrown = config;
  regrown.runs[0].vocab_size = 121;
  CHECK(config_hash(regrown) != config_hash(config));
}

TEST_CASE("experiment runs, resumes, and reproduces byte-identical reports") {
  const fs::path ws = make_workspace();
  const ExperimentConfig config =
      load_experiment_config((ws / "config.json").string());
  const fs::path out = config.output_dir;

  const ExperimentResult cold = run_experiment(config);
  CHECK(none_skipped(cold));
  const std::vector<std::string> expected_stages = {
      "preprocess",
      "tokenizer/word-120",
      "tokenizer/char_bpe-80",
      "pretrain/word-120",
      "pretrain/char_bpe-80",
      "finetune/word-120/cc",
      "finetune/word-120/cps",
      "finetune/char_bpe-80/cc",
      "finetune/char_bpe-80/cps",
      "analyze",
  };
  CHECK(stage_names(cold) == expected_stages);
  CHECK(cold.summary_path == (out / "summary.json").string());

  // Every artifact the stages promise is on disk.
  for (const char* rel :
       {"corpus/train.txt", "corpus/valid.txt", "ppl_curves.csv",
        "token_frequencies.csv", "coverage.csv", "batch_inflation.csv",
        "summary.json"})
    CHECK_MESSAGE(fs::exists(out / rel), "missing " << rel);
  for (const char* run : {"word-120", "char_bpe-80"})
    for (const char* rel : {"model.json", "checkpoint.bin", "ppl.csv",
                            "metrics_cc.json", "metrics_cps.json"})
      CHECK_MESSAGE(fs::exists(out / "runs" / run / rel),
                    "missing runs/" << run << "/" << rel);

  // Artifacts carry the run, not placeholders: metrics name the run label,
  // perplexity files hold one train and one valid row per epoch.
  const TaskMetrics cc_metrics = task_metrics_from_json(
      slurp(out / "runs" / "word-120" / "metrics_cc.json"));
  CHECK(cc_metrics.task == "cc");
  CHECK(cc_metrics.scheme == "word-120");
  CHECK(cc_metrics.n_classes == 2);
  CHECK(cc_metrics.epochs == 2);
  const auto ppl_rows =
      lm::read_ppl_csv((out / "runs" / "word-120" / "ppl.csv").string());
  REQUIRE(ppl_rows.size() == 4);
  CHECK(ppl_rows[0].epoch == 1);
  CHECK(ppl_rows[0].split == "train");
  CHECK(ppl_rows[1].split == "valid");
  CHECK(ppl_rows[3].epoch == 2);
  for (const auto& row : ppl_rows) CHECK(row.ppl > 1.0);

  const json summary = json::parse(slurp(out / "summary.json"));
  CHECK(summary.at("perplexity").size() == 2);
  CHECK(summary.at("perplexity")[0].at("scheme") == "word-120");
  CHECK(summary.at("perplexity")[0].at("epochs") == 2);
  CHECK(summary.at("frequency").size() == 2);
  CHECK(summary.at("coverage").size() == 4);  // 2 runs x k in {1, 5}
  CHECK(summary.at("batch_inflation").size() == 2);
  CHECK(summary.at("batch_inflation")[0].at("scheme") == "word-120");
  CHECK(summary.at("batch_inflation")[0].at("percent_increase") == 0.0);
  CHECK(summary.at("tasks").size() == 4);
  CHECK(summary.at("average_macro_f1").is_number());

  const std::string summary_bytes = slurp(out / "summary.json");
  const std::string curves_bytes = slurp(out / "ppl_curves.csv");

  SUBCASE("rerunning skips every stage and leaves reports untouched") {
    const ExperimentResult warm = run_experiment(config);
    CHECK(all_skipped(warm));
    CHECK(stage_names(warm) == expected_stages);
    CHECK(warm.summary_path == cold.summary_path);
    CHECK(slurp(out / "summary.json") == summary_bytes);
  }

  SUBCASE("a deleted report re-runs only the analyze stage") {
    fs::remove(out / "summary.json");
    const ExperimentResult resumed = run_experiment(config);
    REQUIRE(stage_names(resumed) == expected_stages);
    for (const auto& outcome : resumed.stages)
      CHECK(outcome.skipped == (outcome.stage != "analyze"));
    CHECK(slurp(out / "summary.json") == summary_bytes);
    CHECK(slurp(out / "ppl_curves.csv") == curves_bytes);
  }

  SUBCASE("a stale stage record re-runs that stage") {
    fs::remove(out / "stage_records" / "finetune_word-120_cc.json");
    const ExperimentResult resumed = run_experiment(config);
    int reran = 0;
    for (const auto& outcome : resumed.stages)
      if (!outcome.skipped) {
        ++reran;
        CHECK(outcome.stage == "finetune/word-120/cc");
      }
    CHECK(reran == 1);
    // The finetune stage seed depends only on config + stage key, so the
    // regenerated metrics file matches the original byte for byte.
    CHECK(task_metrics_from_json(
              slurp(out / "runs" / "word-120" / "metrics_cc.json"))
              .macro == cc_metrics.macro);
  }

  SUBCASE("a second cold run elsewhere reproduces the reports byte for byte") {
    ExperimentConfig elsewhere = config;
    elsewhere.output_dir = (ws / "out2").string();
    const ExperimentResult second = run_experiment(elsewhere);
    CHECK(none_skipped(second));
    CHECK(slurp(ws / "out2" / "summary.json") == summary_bytes);
    CHECK(slurp(ws / "out2" / "ppl_curves.csv") == curves_bytes);
    CHECK(slurp(ws / "out2" / "token_frequencies.csv") ==
          slurp(out / "token_frequencies.csv"));
    CHECK(slurp(ws / "out2" / "coverage.csv") == slurp(out / "coverage.csv"));
    CHECK(slurp(ws / "out2" / "batch_inflation.csv") ==
          slurp(out / "batch_inflation.csv"));
  }

  SUBCASE("a reseeded config invalidates prior stage records") {
    ExperimentConfig reseeded = config;
    reseeded.seed = 8;
    const ExperimentResult redo =
        run_experiment(reseeded, Stage::preprocess);
    REQUIRE(redo.stages.size() == 1);
    CHECK(redo.stages[0].stage == "preprocess");
    CHECK_FALSE(redo.stages[0].skipped);
  }
}

TEST_CASE("stage-limited execution stops where asked") {
  const fs::path ws = make_workspace();
  const ExperimentConfig config =
      load_experiment_config((ws / "config.json").string());
  const fs::path out = config.output_dir;

  const ExperimentResult prep = run_experiment(config, Stage::preprocess);
  CHECK(stage_names(prep) == std::vector<std::string>{"preprocess"});
  CHECK(prep.summary_path.empty());
  CHECK(fs::exists(out / "corpus" / "train.txt"));
  CHECK(fs::exists(out / "corpus" / "valid.txt"));
  CHECK_FALSE(fs::exists(out / "runs"));

  const ExperimentResult toks = run_experiment(config, Stage::tokenizers);
  REQUIRE(toks.stages.size() == 3);
  CHECK(toks.stages[0].skipped);  // preprocess artifacts already current
  CHECK_FALSE(toks.stages[1].skipped);
  CHECK(fs::exists(out / "runs" / "word-120" / "model.json"));
  CHECK_FALSE(fs::exists(out / "runs" / "word-120" / "checkpoint.bin"));

  // The trained tokenizer loads and round-trips corpus vocabulary.
  const Tokenizer tok =
      Tokenizer::load((out / "runs" / "word-120" / "model.json").string());
  CHECK(tok.scheme() == Scheme::word);
  CHECK(tok.decode(tok.encode("the harbor watches the morning fog")) ==
        "the harbor watches the morning fog");

  const ExperimentResult full = run_experiment(config, Stage::analyze);
  CHECK(full.stages.size() == 10);
  CHECK(full.stages[0].skipped);
  CHECK(full.stages[1].skipped);
  CHECK_FALSE(full.stages[3].skipped);  // pretrain had not run yet
  CHECK(fs::exists(out / "summary.json"));
}

TEST_CASE("concurrent runs are rejected by the output-directory lock") {
  const fs::path ws = make_workspace();
  const ExperimentConfig config =
      load_experiment_config((ws / "config.json").string());

  fs::create_directories(config.output_dir);
  write_file(fs::path(config.output_dir) / ".lock", "12345\n");
  CHECK_THROWS_AS(run_experiment(config, Stage::preprocess), StageFailure);
  try {
    run_experiment(config, Stage::preprocess);
  } catch (const StageFailure& e) {
    CHECK(std::string(e.what()).find(".lock") != std::string::npos);
  }

  fs::remove(fs::path(config.output_dir) / ".lock");
  const ExperimentResult result = run_experiment(config, Stage::preprocess);
  CHECK(result.stages.size() == 1);
  // The lock is released afterwards.
  CHECK_FALSE(fs::exists(fs::path(config.output_dir) / ".lock"));
}

TEST_CASE("stage failures carry the stage key and do not poison resumes") {
  // Single run + single task keeps the prelude cheap.
  std::string cfg = config_json();
  cfg = replace_once(cfg, ",\n    { \"scheme\": \"char_bpe\", \"vocab_size\": 80 }", "");
  cfg = replace_once(cfg, ",\n      { \"task\": \"cps\", \"path\": \"cps.tsv\" }", "");
  const fs::path ws = make_workspace(cfg);
  write_file(ws / "cc.tsv", "text\tlabel\nonly half a row");  // malformed: no tab

  const ExperimentConfig config =
      load_experiment_config((ws / "config.json").string());
  try {
    run_experiment(config);
    FAIL_CHECK("expected StageFailure");
  } catch (const StageFailure& e) {
    const std::string message = e.what();
    CHECK(message.rfind("finetune/word-120/cc:", 0) == 0);
  }

  // Earlier stages completed and recorded; fixing the input resumes cleanly
  // without retraining.
  write_file(ws / "cc.tsv", cc_tsv());
  const ExperimentResult resumed = run_experiment(config);
  REQUIRE(resumed.stages.size() == 5);
  CHECK(resumed.stages[0].skipped);   // preprocess
  CHECK(resumed.stages[1].skipped);   // tokenizer
  CHECK(resumed.stages[2].skipped);   // pretrain
  CHECK_FALSE(resumed.stages[3].skipped);  // finetune/word-120/cc
  CHECK_FALSE(resumed.stages[4].skipped);  // analyze
  CHECK(fs::exists(fs::path(config.output_dir) / "summary.json"));

  // A failed run must not leave the lock behind.
  CHECK_FALSE(fs::exists(fs::path(config.output_dir) / ".lock"));
}

TEST_CASE("command line: stages, utilities, and exit codes") {
  const fs::path ws = make_workspace();

  SUBCASE("validate echoes the canonical config") {
    std::string stdout_text;
    const int code = run_cli(
        "validate --config " + (ws / "config.json").string(), ws, &stdout_text);
    CHECK(code == 0);
    const json echoed = json::parse(stdout_text);
    CHECK(echoed.at("runs").size() == 2);
    CHECK(echoed.at("analysis").at("baseline_scheme") == "word");
  }

  SUBCASE("invalid configs exit with status 2") {
    write_file(ws / "bad.json",
               replace_once(config_json(), "\"vocab_size\": 120",
                            "\"vocab_size\": 2"));
    CHECK(run_cli("validate --config " + (ws / "bad.json").string(), ws) == 2);
    write_file(ws / "broken.json", "{ not json");
    CHECK(run_cli("validate --config " + (ws / "broken.json").string(), ws) ==
          2);
    CHECK(run_cli("validate --config " + (ws / "absent.json").string(), ws) ==
          3);
    CHECK(run_cli("validate", ws) == 2);           // missing required --config
    CHECK(run_cli("no-such-command", ws) == 2);    // unknown subcommand
  }

  SUBCASE("stage commands, overrides, and the apply utilities") {
    // Run only the cheap stages via the CLI, overriding the output directory.
    const fs::path out = ws / "cli_out";
    const std::string common = " --config " + (ws / "config.json").string() +
                               " --output-dir " + out.string();
    std::string stdout_text;
    CHECK(run_cli("train-tokenizer" + common, ws, &stdout_text) == 0);
    CHECK(stdout_text.find("run  tokenizer/word-120") != std::string::npos);
    CHECK(fs::exists(out / "runs" / "word-120" / "model.json"));
    CHECK_FALSE(fs::exists(out / "runs" / "word-120" / "checkpoint.bin"));

    // Re-invocation reports skips.
    CHECK(run_cli("train-tokenizer" + common, ws, &stdout_text) == 0);
    CHECK(stdout_text.find("skip tokenizer/word-120") != std::string::npos);

    // encode/decode round-trip through files.
    const std::string model =
        (out / "runs" / "word-120" / "model.json").string();
    write_file(ws / "plain.txt", "the harbor watches a distant sail\n");
    CHECK(run_cli("encode --model " + model + " --input " +
                      (ws / "plain.txt").string() + " --output " +
                      (ws / "ids.txt").string(),
                  ws) == 0);
    const std::string ids = slurp(ws / "ids.txt");
    CHECK(ids.find_first_not_of("0123456789 \n") == std::string::npos);
    CHECK(run_cli("decode --model " + model + " --input " +
                      (ws / "ids.txt").string() + " --output " +
                      (ws / "text.txt").string(),
                  ws) == 0);
    CHECK(slurp(ws / "text.txt") == "the harbor watches a distant sail\n");

    // Token strings instead of ids.
    CHECK(run_cli("encode --tokens --model " + model + " --input " +
                      (ws / "plain.txt").string() + " --output " +
                      (ws / "tokens.txt").string(),
                  ws) == 0);
    CHECK(slurp(ws / "tokens.txt") ==
          "the harbor watches a distant sail\n");

    // Bad id streams are a usage error (exit 2), not a crash.
    write_file(ws / "bad_ids.txt", "12 potato\n");
    CHECK(run_cli("decode --model " + model + " --input " +
                      (ws / "bad_ids.txt").string(),
                  ws) == 2);

    // pretrain picks up from the recorded tokenizer stage, then the saved
    // checkpoint scores a corpus directly.
    CHECK(run_cli("pretrain" + common, ws, &stdout_text) == 0);
    CHECK(stdout_text.find("skip tokenizer/word-120") != std::string::npos);
    CHECK(stdout_text.find("run  pretrain/word-120") != std::string::npos);
    const std::string checkpoint =
        (out / "runs" / "word-120" / "checkpoint.bin").string();
    CHECK(run_cli("eval-ppl --checkpoint " + checkpoint + " --model " + model +
                      " --corpus " + (ws / "corpus.txt").string(),
                  ws, &stdout_text) == 0);
    CHECK(stdout_text.find("ppl: ") != std::string::npos);
    CHECK(stdout_text.find("tokens: ") != std::string::npos);
  }
}
