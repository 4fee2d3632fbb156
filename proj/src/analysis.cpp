#include "toklab/analysis.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <exception>
#include <filesystem>
#include <fstream>
#include <system_error>

#include <nlohmann/json.hpp>

namespace toklab::analysis {

namespace {

using ordered_json = nlohmann::ordered_json;

// Runs fn(i) for every index in [0, n) in parallel, surfacing the first
// exception after the region ends (throwing across an OpenMP boundary is
// undefined behavior, so each iteration traps its own).
template <typename Fn>
void parallel_indexed(std::size_t n, Fn&& fn) {
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(toklab_analysis_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

FrequencyReport token_frequencies(const RawCorpus& corpus,
                                  const Tokenizer& tokenizer) {
  if (corpus.empty())
    throw EmptyCorpus("token_frequencies: corpus has no documents");

  std::vector<std::uint64_t> counts(tokenizer.vocab().size(), 0);
  std::uint64_t total = 0;
  for (const std::string& doc : corpus.documents) {
    for (TokenId id : tokenizer.encode(doc)) {
      ++counts[static_cast<std::size_t>(id)];
      ++total;
    }
  }
  if (total == 0)
    throw EmptyCorpus("token_frequencies: corpus encodes to zero tokens");

  FrequencyReport report;
  report.scheme = scheme_name(tokenizer.scheme());
  report.total_tokens = total;
  for (std::size_t id = 0; id < counts.size(); ++id) {
    if (counts[id] == 0) continue;
    report.freqs.emplace_back(tokenizer.vocab().token(static_cast<TokenId>(id)),
                              static_cast<double>(counts[id]) /
                                  static_cast<double>(total));
  }
  // Equal counts divide to bitwise-equal doubles, so the tie-break is exact.
  std::sort(report.freqs.begin(), report.freqs.end(),
            [](const auto& a, const auto& b) {
              if (a.second != b.second) return a.second > b.second;
              return a.first < b.first;
            });
  return report;
}

std::vector<FrequencyReport> token_frequency_reports(
    const RawCorpus& corpus, const std::vector<Tokenizer>& tokenizers) {
  std::vector<FrequencyReport> reports(tokenizers.size());
  parallel_indexed(tokenizers.size(), [&](std::size_t i) {
    reports[i] = token_frequencies(corpus, tokenizers[i]);
  });
  return reports;
}

CoverageStat top_token_coverage(const FrequencyReport& report, std::size_t k) {
  if (k < 1) throw ConfigInvalid("top_token_coverage: k must be at least 1");
  CoverageStat stat;
  stat.scheme = report.scheme;
  stat.k = k;
  const std::size_t take = std::min(k, report.freqs.size());
  for (std::size_t i = 0; i < take; ++i) stat.coverage += report.freqs[i].second;
  return stat;
}

std::vector<BatchInflation> batch_inflation(const RawCorpus& corpus,
                                            const std::vector<Tokenizer>& models,
                                            const std::string& baseline_scheme,
                                            int batch_size, int seq_len) {
  if (batch_size < 1 || seq_len < 1)
    throw ConfigInvalid("batch_inflation: batch_size and seq_len must be positive");

  std::size_t baseline = models.size();
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (scheme_name(models[i].scheme()) == baseline_scheme) {
      baseline = i;
      break;
    }
  }
  if (baseline == models.size())
    throw BaselineMissing("batch_inflation: no model uses baseline scheme '" +
                          baseline_scheme + "'");

  std::vector<std::uint64_t> n_batches(models.size(), 0);
  parallel_indexed(models.size(), [&](std::size_t i) {
    n_batches[i] =
        batchify(encode_corpus(models[i], corpus), batch_size, seq_len).size();
  });
  if (n_batches[baseline] == 0)
    throw EmptyCorpus(
        "batch_inflation: baseline scheme packs into zero batches; corpus is "
        "smaller than one batch");

  const double base = static_cast<double>(n_batches[baseline]);
  std::vector<BatchInflation> rows(models.size());
  for (std::size_t i = 0; i < models.size(); ++i) {
    rows[i].scheme = scheme_name(models[i].scheme());
    rows[i].n_batches = n_batches[i];
    rows[i].percent_increase =
        i == baseline
            ? 0.0
            : 100.0 * (static_cast<double>(n_batches[i]) - base) / base;
  }
  return rows;
}

std::string format_double(double value) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc{})
    throw ConfigInvalid("format_double: value does not fit the buffer");
  return std::string(buf.data(), end);
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string quoted = "\"";
  for (char c : field) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  quoted += '"';
  return quoted;
}

namespace {

std::string csv_row(const std::vector<std::string>& fields) {
  std::string row;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i > 0) row += ',';
    row += csv_escape(fields[i]);
  }
  row += '\n';
  return row;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IOFailure("emit_reports: cannot open " + path.string() +
                    " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IOFailure("emit_reports: failed writing " + path.string());
}

ordered_json summary_json(const ReportInputs& inputs) {
  ordered_json summary;
  summary["format_version"] = 1;
  summary["files"] = ordered_json::array(
      {ordered_json{{"name", "ppl_curves.csv"}, {"kind", "curves"}},
       ordered_json{{"name", "token_frequencies.csv"}, {"kind", "distribution"}},
       ordered_json{{"name", "coverage.csv"}, {"kind", "table"}},
       ordered_json{{"name", "batch_inflation.csv"}, {"kind", "table"}}});

  auto perplexity = ordered_json::array();
  for (const PerplexityCurve& curve : inputs.curves) {
    ordered_json row;
    row["scheme"] = curve.scheme;
    row["epochs"] = curve.points.size();
    row["log_scale"] = curve.log_scale;
    if (curve.points.empty()) {
      row["final_train_ppl"] = nullptr;
      row["final_valid_ppl"] = nullptr;
    } else {
      row["final_train_ppl"] = curve.points.back().train_ppl;
      row["final_valid_ppl"] = curve.points.back().valid_ppl;
    }
    perplexity.push_back(std::move(row));
  }
  summary["perplexity"] = std::move(perplexity);

  auto frequency = ordered_json::array();
  for (const FrequencyReport& report : inputs.frequencies) {
    ordered_json row;
    row["scheme"] = report.scheme;
    row["total_tokens"] = report.total_tokens;
    row["distinct_tokens"] = report.freqs.size();
    if (report.freqs.empty()) {
      row["top_token"] = nullptr;
      row["top_frequency"] = nullptr;
    } else {
      row["top_token"] = report.freqs.front().first;
      row["top_frequency"] = report.freqs.front().second;
    }
    frequency.push_back(std::move(row));
  }
  summary["frequency"] = std::move(frequency);

  auto coverage = ordered_json::array();
  for (const CoverageStat& stat : inputs.coverages) {
    coverage.push_back(ordered_json{
        {"scheme", stat.scheme}, {"k", stat.k}, {"coverage", stat.coverage}});
  }
  summary["coverage"] = std::move(coverage);

  auto inflation = ordered_json::array();
  for (const BatchInflation& row : inputs.inflations) {
    inflation.push_back(ordered_json{{"scheme", row.scheme},
                                     {"n_batches", row.n_batches},
                                     {"percent_increase", row.percent_increase}});
  }
  summary["batch_inflation"] = std::move(inflation);

  auto tasks = ordered_json::array();
  double macro_sum = 0.0;
  for (const TaskMetrics& metrics : inputs.metrics) {
    tasks.push_back(ordered_json::parse(task_metrics_to_json(metrics)));
    macro_sum += metrics.macro;
  }
  summary["tasks"] = std::move(tasks);
  if (inputs.metrics.empty())
    summary["average_macro_f1"] = nullptr;
  else
    summary["average_macro_f1"] =
        macro_sum / static_cast<double>(inputs.metrics.size());
  return summary;
}

}  // namespace

EmittedReports emit_reports(const ReportInputs& inputs,
                            const std::string& out_dir) {
  const std::filesystem::path dir(out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw IOFailure("emit_reports: cannot create output directory " + out_dir);

  std::string curves = csv_row({"scheme", "epoch", "train_ppl", "valid_ppl"});
  for (const PerplexityCurve& curve : inputs.curves) {
    for (const PerplexityPoint& point : curve.points) {
      curves += csv_row({curve.scheme, std::to_string(point.epoch),
                         format_double(point.train_ppl),
                         format_double(point.valid_ppl)});
    }
  }

  std::string freqs = csv_row({"scheme", "rank", "token", "normalized_frequency"});
  for (const FrequencyReport& report : inputs.frequencies) {
    for (std::size_t rank = 0; rank < report.freqs.size(); ++rank) {
      freqs += csv_row({report.scheme, std::to_string(rank + 1),
                        report.freqs[rank].first,
                        format_double(report.freqs[rank].second)});
    }
  }

  std::string coverage = csv_row({"scheme", "k", "coverage"});
  for (const CoverageStat& stat : inputs.coverages) {
    coverage += csv_row(
        {stat.scheme, std::to_string(stat.k), format_double(stat.coverage)});
  }

  std::string inflation = csv_row({"scheme", "n_batches", "percent_increase"});
  for (const BatchInflation& row : inputs.inflations) {
    inflation += csv_row({row.scheme, std::to_string(row.n_batches),
                          format_double(row.percent_increase)});
  }

  EmittedReports emitted;
  const std::array<std::pair<const char*, const std::string*>, 4> csvs = {
      {{"ppl_curves.csv", &curves},
       {"token_frequencies.csv", &freqs},
       {"coverage.csv", &coverage},
       {"batch_inflation.csv", &inflation}}};
  for (const auto& [name, bytes] : csvs) {
    const std::filesystem::path path = dir / name;
    write_file(path, *bytes);
    emitted.files.push_back(path.string());
  }

  const std::filesystem::path summary_path = dir / "summary.json";
  write_file(summary_path, summary_json(inputs).dump(2) + "\n");
  emitted.summary_path = summary_path.string();
  return emitted;
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOFailure("read_csv: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());

  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool field_started = false;

  const auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  const auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
  };

  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const char c = bytes[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < bytes.size() && bytes[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started && !field.empty())
          throw ParseError("read_csv: " + path +
                           ": quote inside unquoted field");
        quoted = true;
        field_started = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        if (i + 1 < bytes.size() && bytes[i + 1] == '\n') ++i;
        end_row();
        break;
      case '\n':
        end_row();
        break;
      default:
        field += c;
        field_started = true;
        break;
    }
  }
  if (quoted) throw ParseError("read_csv: " + path + ": unterminated quote");
  // A trailing field without a final newline still counts as a row.
  if (field_started || !row.empty()) end_row();
  return rows;
}

}  // namespace toklab::analysis
