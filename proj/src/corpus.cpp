#include "speechlm/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>

#include "speechlm/errors.hpp"

namespace speechlm {

namespace {

bool is_detachable_punct(char c) {
  static const std::string punct = ".,;:!?()\"'";
  return punct.find(c) != std::string::npos;
}

bool is_ascii_alpha(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_failure, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

Corpus ingest_dataset(const std::filesystem::path& root) {
  if (!std::filesystem::exists(root) || !std::filesystem::is_directory(root)) {
    throw Error(ErrorCode::io_failure, "not a readable directory: " + root.string());
  }

  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.generic_string() < b.generic_string(); });

  static const std::regex name_re(R"(^([A-Z]{3})_(\d+)_(\d{4})\.txt$)");

  Corpus corpus;
  for (const auto& path : files) {
    const std::string name = path.filename().string();
    std::smatch m;
    if (!std::regex_match(name, m, name_re)) {
      corpus.warnings.push_back("malformed filename, skipped: " + name);
      continue;
    }
    RawSpeech speech;
    speech.country = m[1].str();
    speech.session = std::stoi(m[2].str());
    speech.year = std::stoi(m[3].str());
    speech.text = read_file(path);
    if (trim(speech.text).empty()) {
      corpus.warnings.push_back("empty file, skipped: " + name);
      continue;
    }
    // UNGA session n convenes in year 1945+n; a resumed session may spill
    // into the next calendar year.
    const int expected_year = 1945 + speech.session;
    if (speech.year < expected_year - 1 || speech.year > expected_year + 1) {
      corpus.warnings.push_back("session/year mismatch in " + name);
    }
    corpus.speeches.push_back(std::move(speech));
  }

  if (corpus.speeches.empty()) {
    throw Error(ErrorCode::no_speeches_found,
                "no files matching COUNTRY_SESSION_YEAR.txt under " + root.string());
  }
  return corpus;
}

std::vector<std::string> split_and_clean(std::string_view speech_text) {
  static const std::regex enum_marker(R"(^\d{1,3}\.[ \t])");

  std::vector<std::string> paragraphs;
  std::size_t pos = 0;
  while (pos <= speech_text.size()) {
    std::size_t nl = speech_text.find('\n', pos);
    std::string_view raw = speech_text.substr(pos, nl == std::string_view::npos ? nl : nl - pos);
    pos = (nl == std::string_view::npos) ? speech_text.size() + 1 : nl + 1;

    std::string line(raw);
    std::smatch m;
    if (std::regex_search(line, m, enum_marker)) {
      line.erase(0, static_cast<std::size_t>(m.length(0)));
    }

    // Collapse whitespace runs to single spaces and trim.
    std::string cleaned;
    cleaned.reserve(line.size());
    bool in_space = true;  // swallows leading whitespace
    for (char c : line) {
      if (std::isspace(static_cast<unsigned char>(c))) {
        in_space = true;
      } else {
        if (in_space && !cleaned.empty()) cleaned.push_back(' ');
        in_space = false;
        cleaned.push_back(c);
      }
    }
    if (!cleaned.empty()) paragraphs.push_back(std::move(cleaned));
  }
  return paragraphs;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;

  // Splits one internal chunk on hyphens flanked by alphabetic characters.
  auto emit_core = [&tokens](std::string_view core) {
    std::size_t start = 0;
    for (std::size_t i = 1; i + 1 < core.size(); ++i) {
      if (core[i] == '-' && is_ascii_alpha(core[i - 1]) && is_ascii_alpha(core[i + 1])) {
        tokens.emplace_back(core.substr(start, i - start));
        tokens.emplace_back("-");
        start = i + 1;
      }
    }
    tokens.emplace_back(core.substr(start));
  };

  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    while (i < n && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= n) break;
    std::size_t j = i;
    while (j < n && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::string_view chunk = text.substr(i, j - i);
    i = j;

    // Leading punctuation.
    std::size_t b = 0, e = chunk.size();
    while (b < e && is_detachable_punct(chunk[b])) {
      tokens.emplace_back(1, chunk[b]);
      ++b;
    }
    // Trailing punctuation, detached outside-in.
    std::vector<std::string> trailing;
    while (e > b && is_detachable_punct(chunk[e - 1])) {
      trailing.emplace_back(1, chunk[e - 1]);
      --e;
    }
    std::string_view core = chunk.substr(b, e - b);
    if (!core.empty()) {
      // Possessive clitic: "1970's" -> "1970" "'s".
      if (core.size() > 2 && core[core.size() - 2] == '\'' &&
          (core.back() == 's' || core.back() == 'S')) {
        emit_core(core.substr(0, core.size() - 2));
        tokens.emplace_back(core.substr(core.size() - 2));
      } else {
        emit_core(core);
      }
    }
    for (auto it = trailing.rbegin(); it != trailing.rend(); ++it) {
      tokens.push_back(std::move(*it));
    }
  }
  return tokens;
}

Vocabulary::Vocabulary() {
  append("<unk>");
  append("<pad>");
  append("<bos>");
  append("<eos>");
}

void Vocabulary::append(std::string token) {
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& paragraph_tokens,
                             std::size_t max_size, std::size_t min_freq) {
  if (max_size < kNumSpecials) {
    throw Error(ErrorCode::invalid_config, "vocabulary max_size must be >= 4");
  }
  if (min_freq < 1) {
    throw Error(ErrorCode::invalid_config, "vocabulary min_freq must be >= 1");
  }

  std::unordered_map<std::string, std::size_t> freq;
  for (const auto& paragraph : paragraph_tokens) {
    for (const auto& token : paragraph) ++freq[token];
  }

  Vocabulary vocab;
  std::vector<std::pair<std::string, std::size_t>> ranked;
  ranked.reserve(freq.size());
  for (auto& [token, count] : freq) {
    if (count < min_freq) continue;
    if (vocab.index_.count(token)) continue;  // literal special strings in text
    ranked.emplace_back(token, count);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  const std::size_t budget = max_size - kNumSpecials;
  if (ranked.size() > budget) ranked.resize(budget);
  for (auto& [token, count] : ranked) vocab.append(std::move(token));
  return vocab;
}

int Vocabulary::id_or_unk(std::string_view token) const {
  int id = find(token);
  return id < 0 ? kUnk : id;
}

int Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? -1 : it->second;
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (const auto& token : tokens_) {
    out += token;
    out += '\n';
  }
  return out;
}

Vocabulary Vocabulary::deserialize(std::string_view bytes) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string_view::npos) {
      lines.emplace_back(bytes.substr(pos));
      break;
    }
    lines.emplace_back(bytes.substr(pos, nl - pos));
    pos = nl + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();

  static const char* kSpecials[] = {"<unk>", "<pad>", "<bos>", "<eos>"};
  if (lines.size() < kNumSpecials) {
    throw Error(ErrorCode::corrupt_table, "vocabulary file shorter than the 4 specials");
  }
  for (int s = 0; s < kNumSpecials; ++s) {
    if (lines[static_cast<std::size_t>(s)] != kSpecials[s]) {
      throw Error(ErrorCode::corrupt_table, "vocabulary specials malformed at line " + std::to_string(s));
    }
  }
  Vocabulary vocab;
  for (std::size_t k = kNumSpecials; k < lines.size(); ++k) {
    if (vocab.index_.count(lines[k])) {
      throw Error(ErrorCode::corrupt_table, "duplicate vocabulary token: " + lines[k]);
    }
    vocab.append(std::move(lines[k]));
  }
  return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_failure, "cannot write " + path.string());
  const std::string bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::io_failure, "short write to " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  return deserialize(read_file(path));
}

TokenStream numericalize(const std::vector<std::vector<std::string>>& paragraph_tokens,
                         const Vocabulary& vocab) {
  TokenStream stream;
  for (const auto& paragraph : paragraph_tokens) {
    stream.boundaries.push_back(stream.ids.size());
    stream.ids.push_back(Vocabulary::kBos);
    for (const auto& token : paragraph) {
      stream.ids.push_back(static_cast<std::uint32_t>(vocab.id_or_unk(token)));
    }
    stream.ids.push_back(Vocabulary::kEos);
  }
  return stream;
}

std::vector<std::vector<std::string>> denumericalize(const TokenStream& stream,
                                                     const Vocabulary& vocab) {
  std::vector<std::vector<std::string>> paragraphs;
  for (std::size_t p = 0; p < stream.boundaries.size(); ++p) {
    const std::size_t begin = stream.boundaries[p];
    const std::size_t end =
        (p + 1 < stream.boundaries.size()) ? stream.boundaries[p + 1] : stream.ids.size();
    std::vector<std::string> tokens;
    for (std::size_t k = begin; k < end; ++k) {
      const auto id = static_cast<int>(stream.ids[k]);
      if (id == Vocabulary::kBos || id == Vocabulary::kEos) continue;
      tokens.push_back(vocab.token(id));
    }
    paragraphs.push_back(std::move(tokens));
  }
  return paragraphs;
}

namespace {
constexpr char kStreamMagic[7] = {'U', 'L', 'M', 'V', 'O', 'C', 'S'};
constexpr std::uint8_t kStreamVersion = 1;
}  // namespace

void save_token_stream(const TokenStream& stream, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_failure, "cannot write " + path.string());
  out.write(kStreamMagic, sizeof(kStreamMagic));
  out.put(static_cast<char>(kStreamVersion));
  for (std::uint32_t id : stream.ids) {
    char le[4] = {static_cast<char>(id & 0xff), static_cast<char>((id >> 8) & 0xff),
                  static_cast<char>((id >> 16) & 0xff), static_cast<char>((id >> 24) & 0xff)};
    out.write(le, 4);
  }
  if (!out) throw Error(ErrorCode::io_failure, "short write to " + path.string());
}

TokenStream load_token_stream(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < sizeof(kStreamMagic) + 1 ||
      std::memcmp(bytes.data(), kStreamMagic, sizeof(kStreamMagic)) != 0) {
    throw Error(ErrorCode::bad_magic, "not a token stream cache: " + path.string());
  }
  if (static_cast<std::uint8_t>(bytes[sizeof(kStreamMagic)]) != kStreamVersion) {
    throw Error(ErrorCode::unsupported_version, "unsupported token stream version");
  }
  const std::size_t payload = bytes.size() - sizeof(kStreamMagic) - 1;
  if (payload % 4 != 0) {
    throw Error(ErrorCode::corrupt_table, "token stream payload truncated");
  }
  TokenStream stream;
  stream.ids.reserve(payload / 4);
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data()) + sizeof(kStreamMagic) + 1;
  for (std::size_t k = 0; k < payload; k += 4) {
    std::uint32_t id = static_cast<std::uint32_t>(data[k]) |
                       (static_cast<std::uint32_t>(data[k + 1]) << 8) |
                       (static_cast<std::uint32_t>(data[k + 2]) << 16) |
                       (static_cast<std::uint32_t>(data[k + 3]) << 24);
    stream.ids.push_back(id);
  }
  for (std::size_t k = 0; k < stream.ids.size(); ++k) {
    if (stream.ids[k] == Vocabulary::kBos) stream.boundaries.push_back(k);
  }
  return stream;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t hash = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 1099511628211ull;
  }
  return hash;
}

std::string fnv1a64_hex(std::string_view bytes) {
  static const char* digits = "0123456789abcdef";
  std::uint64_t h = fnv1a64(bytes);
  std::string out(16, '0');
  for (int k = 15; k >= 0; --k) {
    out[static_cast<std::size_t>(k)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace speechlm
