#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace speechlm {

// One transcript file. Country/session/year come from the filename
// pattern COUNTRY_SESSION_YEAR.txt.
struct RawSpeech {
  std::string country;
  int session = 0;
  int year = 0;
  std::string text;
};

struct Corpus {
  std::vector<RawSpeech> speeches;
  // One entry per skipped or suspicious file, in scan order.
  std::vector<std::string> warnings;
};

// Recursively scans root for COUNTRY_SESSION_YEAR.txt files, lexicographic
// by path. Files whose names do not match are skipped with a warning.
// Throws Error(no_speeches_found) when nothing matches.
Corpus ingest_dataset(const std::filesystem::path& root);

// Splits a speech on newlines, strips leading enumeration markers like
// "12. " or "12.\t", collapses runs of whitespace, drops empties.
std::vector<std::string> split_and_clean(std::string_view speech_text);

// Rule-based word tokenizer:
//   - split on whitespace
//   - detach leading/trailing punctuation .,;:!?()"' one char at a time
//   - detach a trailing 's clitic ("1970's" -> "1970", "'s")
//   - split a hyphen that sits between two alphabetic characters
//   - everything else (numbers, internal punctuation) is kept whole
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kPad = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kNumSpecials = 4;

  // Specials only.
  Vocabulary();

  // Counts token frequencies over the corpus, keeps tokens with
  // frequency >= min_freq ranked by (frequency desc, token asc), and
  // truncates so the total size never exceeds max_size.
  static Vocabulary build(const std::vector<std::vector<std::string>>& paragraph_tokens,
                          std::size_t max_size, std::size_t min_freq);

  std::size_t size() const { return tokens_.size(); }

  // Returns kUnk for out-of-vocabulary tokens.
  int id_or_unk(std::string_view token) const;

  // -1 when absent.
  int find(std::string_view token) const;

  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // One token per line, line number = id. The same bytes are hashed into
  // checkpoints, so this must stay stable.
  std::string serialize() const;
  static Vocabulary deserialize(std::string_view bytes);

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;

  void append(std::string token);
};

// Paragraph-wrapped id stream: each paragraph is <bos> tokens... <eos>.
struct TokenStream {
  std::vector<std::uint32_t> ids;
  // Offset of each paragraph's <bos> within ids.
  std::vector<std::size_t> boundaries;
};

TokenStream numericalize(const std::vector<std::vector<std::string>>& paragraph_tokens,
                         const Vocabulary& vocab);

// Inverse of numericalize for display: strips <bos>/<eos>, maps ids back
// to token strings (<unk> stays "<unk>").
std::vector<std::vector<std::string>> denumericalize(const TokenStream& stream,
                                                     const Vocabulary& vocab);

// Binary cache: "ULMVOCS" + version byte 1, then 32-bit little-endian ids.
void save_token_stream(const TokenStream& stream, const std::filesystem::path& path);
TokenStream load_token_stream(const std::filesystem::path& path);

// 64-bit FNV-1a, used to fingerprint vocabulary files in checkpoints.
std::uint64_t fnv1a64(std::string_view bytes);
std::string fnv1a64_hex(std::string_view bytes);

}  // namespace speechlm
