#include "toklab/lm/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "toklab/errors.hpp"

namespace toklab::lm {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

using json = nlohmann::ordered_json;

namespace {

constexpr char kMagic[4] = {'T', 'L', 'M', 'C'};
constexpr std::uint32_t kVersion = 1;

void write_bytes(std::ofstream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void read_bytes(std::ifstream& in, void* data, std::size_t n,
                const std::string& what) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw ParseError("checkpoint truncated while reading " + what);
}

std::string format_double(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

}  // namespace

void save_checkpoint(const std::string& path, const LMConfig& config,
                     const std::vector<float>& params,
                     const std::string& extra_json) {
  const LMLayout layout(config);
  if (params.size() != layout.total)
    throw ShapeMismatch("checkpoint parameter vector has " +
                        std::to_string(params.size()) + " entries, layout " +
                        std::to_string(layout.total));
  json header;
  header["format_version"] = kVersion;
  header["scalar"] = "f32";
  header["config"] = json::parse(lm_config_to_json(config));
  json tensors = json::array();
  for (const TensorInfo& info : layout.tensors)
    tensors.push_back({{"name", info.name},
                       {"shape", info.shape},
                       {"offset", info.offset},
                       {"size", info.size}});
  header["tensors"] = std::move(tensors);
  try {
    header["extra"] = json::parse(extra_json);
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint extra metadata: ") + e.what());
  }
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IOFailure("cannot open checkpoint for writing: " + path);
  write_bytes(out, kMagic, sizeof kMagic);
  const std::uint32_t version = kVersion;
  write_bytes(out, &version, sizeof version);
  const std::uint64_t header_len = header_text.size();
  write_bytes(out, &header_len, sizeof header_len);
  write_bytes(out, header_text.data(), header_text.size());
  write_bytes(out, params.data(), params.size() * sizeof(float));
  out.flush();
  if (!out) throw IOFailure("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOFailure("cannot open checkpoint: " + path);
  char magic[4];
  read_bytes(in, magic, sizeof magic, "magic");
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw ParseError("not a model checkpoint: " + path);
  std::uint32_t version = 0;
  read_bytes(in, &version, sizeof version, "version");
  if (version != kVersion)
    throw ParseError("unsupported checkpoint version " +
                     std::to_string(version));
  std::uint64_t header_len = 0;
  read_bytes(in, &header_len, sizeof header_len, "header length");
  if (header_len > (1ull << 30))
    throw ParseError("implausible checkpoint header length");
  std::string header_text(static_cast<std::size_t>(header_len), '\0');
  read_bytes(in, header_text.data(), header_text.size(), "header");

  Checkpoint ckpt;
  try {
    json header = json::parse(header_text);
    ckpt.config = lm_config_from_json(header.at("config").dump());
    ckpt.extra = header.contains("extra") ? header["extra"].dump()
                                          : std::string("{}");
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what());
  }
  ckpt.config.validate();
  const LMLayout layout(ckpt.config);
  ckpt.params.resize(layout.total);
  read_bytes(in, ckpt.params.data(), layout.total * sizeof(float),
             "parameters");
  // Trailing garbage means the file does not match its own header.
  char probe;
  in.read(&probe, 1);
  if (in.gcount() != 0)
    throw ParseError("checkpoint has trailing bytes: " + path);
  return ckpt;
}

void write_ppl_csv(const std::string& path, const std::vector<PplRow>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IOFailure("cannot open perplexity log for writing: " + path);
  out << "epoch,split,ppl\n";
  for (const PplRow& row : rows)
    out << row.epoch << ',' << row.split << ',' << format_double(row.ppl)
        << '\n';
  out.flush();
  if (!out) throw IOFailure("failed writing perplexity log: " + path);
}

std::vector<PplRow> read_ppl_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOFailure("cannot open perplexity log: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw ParseError("empty perplexity log: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "epoch,split,ppl")
    throw ParseError("unexpected perplexity log header: " + line);
  std::vector<PplRow> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t c1 = line.find(',');
    const std::size_t c2 = line.find(',', c1 == std::string::npos ? 0 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw ParseError("malformed perplexity row: " + line);
    PplRow row;
    try {
      row.epoch = std::stoi(line.substr(0, c1));
      row.split = line.substr(c1 + 1, c2 - c1 - 1);
      row.ppl = std::stod(line.substr(c2 + 1));
    } catch (const std::exception&) {
      throw ParseError("malformed perplexity row: " + line);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace toklab::lm
