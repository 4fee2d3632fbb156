#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "toklab/corpus.hpp"
#include "toklab/errors.hpp"
#include "toklab/finetune.hpp"
#include "toklab/tokenizer.hpp"

namespace toklab::analysis {

// Normalized token-frequency distribution of one tokenizer over one corpus.
struct FrequencyReport {
  std::string scheme;
  // Sorted by non-increasing frequency; equal frequencies break ties by
  // lexicographic token order. Only tokens that actually occur are listed.
  std::vector<std::pair<std::string, double>> freqs;
  std::uint64_t total_tokens = 0;
};

// Encodes every document with the trained tokenizer, counts occurrences per
// vocab entry, and normalizes by the total token count. Throws EmptyCorpus
// when the corpus has no documents or encodes to zero tokens.
FrequencyReport token_frequencies(const RawCorpus& corpus,
                                  const Tokenizer& tokenizer);

// One report per tokenizer. Each report is an independent pure computation,
// so they run in parallel; the output order mirrors the input order.
std::vector<FrequencyReport> token_frequency_reports(
    const RawCorpus& corpus, const std::vector<Tokenizer>& tokenizers);

// Fraction of all corpus tokens accounted for by the k most frequent entries.
struct CoverageStat {
  std::string scheme;
  std::size_t k = 0;
  double coverage = 0.0;
};

// Sum of the first min(k, |freqs|) normalized frequencies; monotone
// non-decreasing in k. Throws ConfigInvalid for k < 1.
CoverageStat top_token_coverage(const FrequencyReport& report, std::size_t k);

// Batch-count change of one scheme relative to the baseline scheme.
struct BatchInflation {
  std::string scheme;
  std::uint64_t n_batches = 0;
  double percent_increase = 0.0;  // baseline row is exactly 0
};

// Encodes the corpus with every model, packs each id stream with batchify,
// and reports 100 * (batches(scheme) - batches(baseline)) / batches(baseline)
// per model, in input order. The baseline is the first model whose scheme
// name equals baseline_scheme. Throws BaselineMissing when no model matches,
// ConfigInvalid for non-positive batch_size/seq_len, and EmptyCorpus when the
// baseline stream packs into zero batches.
std::vector<BatchInflation> batch_inflation(const RawCorpus& corpus,
                                            const std::vector<Tokenizer>& models,
                                            const std::string& baseline_scheme,
                                            int batch_size, int seq_len);

// One evaluation point of a language-model training run.
struct PerplexityPoint {
  int epoch = 0;  // 1-based
  double train_ppl = 0.0;
  double valid_ppl = 0.0;
};

struct PerplexityCurve {
  std::string scheme;
  std::vector<PerplexityPoint> points;
  // Display hint recorded in the summary metadata: perplexity curves are
  // conventionally plotted on a log axis.
  bool log_scale = true;
};

// Everything the report writer serializes. Any section may be empty.
struct ReportInputs {
  std::vector<PerplexityCurve> curves;
  std::vector<FrequencyReport> frequencies;
  std::vector<CoverageStat> coverages;
  std::vector<BatchInflation> inflations;
  std::vector<TaskMetrics> metrics;
};

struct EmittedReports {
  std::vector<std::string> files;  // CSV paths, in emission order
  std::string summary_path;        // consolidated JSON
};

// Writes one CSV per report family (perplexity curves, token frequencies,
// coverage, batch inflation) plus a consolidated summary.json into out_dir,
// creating the directory when needed. Output bytes are a pure function of
// the inputs: fixed column order, shortest round-trip number formatting,
// "\n" line ends. Empty sections produce header-only CSVs and empty JSON
// arrays. Throws IOFailure when a file cannot be created or written.
EmittedReports emit_reports(const ReportInputs& inputs,
                            const std::string& out_dir);

// Shortest decimal string that parses back to exactly the same double.
std::string format_double(double value);

// Quotes a field when it contains a comma, double quote, or line break;
// embedded quotes are doubled (RFC 4180).
std::string csv_escape(const std::string& field);

// Parses a CSV file written by emit_reports back into rows of fields,
// undoing csv_escape. Throws IOFailure when the file cannot be read and
// ParseError on malformed quoting.
std::vector<std::vector<std::string>> read_csv(const std::string& path);

}  // namespace toklab::analysis
