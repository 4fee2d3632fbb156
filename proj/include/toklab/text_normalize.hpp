#pragma once

#include <map>
#include <string>
#include <string_view>

namespace toklab {

enum class Direction { forward, reverse };

// Normalization profile applied before tokenization. The diacritic map
// substitutes combining modifier characters with ASCII letters; it must be
// injective so the reverse direction is unambiguous.
struct PreprocessConfig {
  std::string num_token = "<num>";
  std::string unk_token = "<unk>";
  std::map<char32_t, char32_t> diacritic_map;
  bool collapse_digits = false;
  bool unicode_nfc = true;
  bool transliterate = false;

  void validate() const;  // throws ConfigInvalid
};

// NFC (if enabled), digit-run collapsing to num_token (if enabled),
// whitespace-run collapsing and trimming. Total on valid UTF-8; idempotent.
std::string normalize_text(std::string_view text, const PreprocessConfig& config);

// Replaces mapped modifier characters with their ASCII letters (forward)
// or applies the inverse map (reverse). Forward throws AmbiguousSubstitution
// when the input already contains a mapped ASCII letter.
std::string transliterate_diacritics(std::string_view text,
                                     const std::map<char32_t, char32_t>& map,
                                     Direction direction);

// Two-column TSV: modifier character, ASCII letter. '#' lines are comments.
std::map<char32_t, char32_t> load_diacritic_map(const std::string& path);
void save_diacritic_map(const std::map<char32_t, char32_t>& map,
                        const std::string& path);

}  // namespace toklab
