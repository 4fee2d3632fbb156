#include "toklab/text_normalize.hpp"

#include <fstream>
#include <set>

#include "toklab/errors.hpp"
#include "toklab/unicode.hpp"

namespace toklab {

namespace {

bool is_digit_cp(char32_t cp) {
  return (cp >= U'0' && cp <= U'9') || (cp >= 0x0966 && cp <= 0x096F);
}

}  // namespace

void PreprocessConfig::validate() const {
  if (num_token.empty() || unk_token.empty())
    throw ConfigInvalid("num_token and unk_token must be nonempty");
  if (num_token == unk_token)
    throw ConfigInvalid("num_token and unk_token must be distinct");
  std::set<char32_t> values;
  for (const auto& [from, to] : diacritic_map) {
    if (!values.insert(to).second)
      throw ConfigInvalid("diacritic_map values must be distinct");
    if (from == to) throw ConfigInvalid("diacritic_map maps a character to itself");
  }
}

std::string normalize_text(std::string_view text, const PreprocessConfig& config) {
  std::vector<char32_t> cps = unicode::decode_utf8(text);
  if (config.unicode_nfc) cps = unicode::nfc(cps);

  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  bool at_start = true;
  std::size_t i = 0;
  while (i < cps.size()) {
    if (unicode::is_whitespace(cps[i])) {
      pending_space = !at_start;
      ++i;
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    if (config.collapse_digits && is_digit_cp(cps[i])) {
      while (i < cps.size() && is_digit_cp(cps[i])) ++i;
      out += config.num_token;
    } else {
      unicode::append_utf8(out, cps[i]);
      ++i;
    }
    at_start = false;
  }
  return out;
}

std::string transliterate_diacritics(std::string_view text,
                                     const std::map<char32_t, char32_t>& map,
                                     Direction direction) {
  std::vector<char32_t> cps = unicode::decode_utf8(text);
  if (direction == Direction::forward) {
    std::set<char32_t> values;
    for (const auto& [from, to] : map) values.insert(to);
    for (char32_t& cp : cps) {
      if (values.count(cp))
        throw AmbiguousSubstitution(
            "input already contains substitution letter U+" +
            std::to_string(static_cast<unsigned>(cp)));
      auto it = map.find(cp);
      if (it != map.end()) cp = it->second;
    }
  } else {
    std::map<char32_t, char32_t> inverse;
    for (const auto& [from, to] : map) inverse.emplace(to, from);
    for (char32_t& cp : cps) {
      auto it = inverse.find(cp);
      if (it != inverse.end()) cp = it->second;
    }
  }
  return unicode::encode_utf8(cps);
}

std::map<char32_t, char32_t> load_diacritic_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IOFailure("cannot open diacritic map: " + path);
  std::map<char32_t, char32_t> map;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError("diacritic map line missing tab: " + line);
    auto from = unicode::decode_utf8(line.substr(0, tab));
    auto to = unicode::decode_utf8(line.substr(tab + 1));
    if (from.size() != 1 || to.size() != 1)
      throw ParseError("diacritic map columns must be single characters: " + line);
    map[from[0]] = to[0];
  }
  return map;
}

void save_diacritic_map(const std::map<char32_t, char32_t>& map,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IOFailure("cannot write diacritic map: " + path);
  for (const auto& [from, to] : map) {
    std::string line;
    unicode::append_utf8(line, from);
    line.push_back('\t');
    unicode::append_utf8(line, to);
    line.push_back('\n');
    out << line;
  }
}

}  // namespace toklab
