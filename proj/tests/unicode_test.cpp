#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "toklab/unicode.hpp"

using namespace toklab;
using namespace toklab::unicode;

namespace {

std::vector<char32_t> parse_hex_cps(const std::string& field) {
  std::vector<char32_t> cps;
  std::istringstream in(field);
  std::string tok;
  while (in >> tok) cps.push_back(static_cast<char32_t>(std::stoul(tok, nullptr, 16)));
  return cps;
}

std::string cps_to_utf8(const std::vector<char32_t>& cps) {
  std::string out;
  for (char32_t cp : cps) append_utf8(out, cp);
  return out;
}

}  // namespace

TEST_CASE("utf8 round trip for representative codepoints") {
  std::vector<char32_t> cps = {0x24,   0xA2,    0x939,   0x20AC,
                               0xD55C, 0x10348, 0x10FFFF, 0x7F};
  for (char32_t cp : cps) {
    std::string s;
    append_utf8(s, cp);
    std::vector<char32_t> back = decode_utf8(s);
    REQUIRE(back.size() == 1);
    CHECK(back[0] == cp);
  }
}

TEST_CASE("utf8 decoding replaces malformed input") {
  // Lone continuation byte, overlong encoding, surrogate, truncated sequence.
  CHECK(decode_utf8(std::string("\x80")) == std::vector<char32_t>{0xFFFD});
  CHECK(decode_utf8(std::string("\xC0\xAF")) ==
        std::vector<char32_t>({0xFFFD, 0xFFFD}));
  CHECK(decode_utf8(std::string("\xED\xA0\x80")) ==
        std::vector<char32_t>({0xFFFD, 0xFFFD, 0xFFFD}));
  CHECK(decode_utf8(std::string("\xE0\xA4")) ==
        std::vector<char32_t>({0xFFFD, 0xFFFD}));
  CHECK_FALSE(is_valid_utf8(std::string("\xC0\xAF")));
  CHECK(is_valid_utf8(std::string("\xE0\xA4\x95")));
}

TEST_CASE("devanagari ka encodes to three bytes") {
  std::string s;
  append_utf8(s, 0x915);
  REQUIRE(s.size() == 3);
  CHECK(static_cast<unsigned char>(s[0]) == 0xE0);
  CHECK(static_cast<unsigned char>(s[1]) == 0xA4);
  CHECK(static_cast<unsigned char>(s[2]) == 0x95);
}

TEST_CASE("whitespace classification matches the frozen set") {
  for (char32_t cp : {U' ', U'\t', U'\n', U'\r', char32_t{0xA0}, char32_t{0x2028},
                      char32_t{0x3000}, char32_t{0x1C}})
    CHECK(is_whitespace(cp));
  for (char32_t cp : {U'a', U'.', char32_t{0x200B}, char32_t{0x915}})
    CHECK_FALSE(is_whitespace(cp));
}

TEST_CASE("nfc matches frozen reference cases") {
  std::ifstream in("tests/data/nfc_cases.tsv");
  REQUIRE_MESSAGE(in.good(), "run tests from the repository root");
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    REQUIRE(tab != std::string::npos);
    std::vector<char32_t> input = parse_hex_cps(line.substr(0, tab));
    std::vector<char32_t> expected = parse_hex_cps(line.substr(tab + 1));
    std::vector<char32_t> got = nfc(input);
    CAPTURE(cps_to_utf8(input));
    CHECK(got == expected);
    // Idempotence on the composed form.
    CHECK(nfc(got) == got);
    ++n;
  }
  CHECK(n > 400);
}

TEST_CASE("nfc string interface") {
  CHECK(nfc(std::string("e\xCC\x81")) == std::string("\xC3\xA9"));  // e + acute
  CHECK(nfc(std::string("\xC3\xA9")) == std::string("\xC3\xA9"));
}
