#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "speechlm/corpus.hpp"
#include "speechlm/model.hpp"

namespace speechlm {

struct GenerationConfig {
  std::string seed_text;
  double temperature = 0.8;
  int top_k = 40;  // <= 0 means the whole vocabulary
  int min_words = 50;
  int max_words = 100;
  int min_sentences = 2;
  int max_sentences = 5;
  std::uint64_t rng_seed = 0;
  int max_tokens_hard_cap = 400;
  // Specials are never sampled; this opt-in lets <eos> end a sample early.
  bool allow_eos = false;

  void validate() const;  // throws Error(invalid_config)
};

enum class StopReason { sentence_bound, word_bound, hard_cap, eos };

std::string_view stop_reason_name(StopReason reason);

struct GeneratedSample {
  std::vector<std::string> tokens;  // generated only, after truncation
  std::string text;                 // starts with the seed text
  int word_count = 0;
  int sentence_count = 0;
  StopReason stop_reason = StopReason::hard_cap;
};

// A word is any token containing an alphanumeric character; a sentence
// ends at a bare ".", "!" or "?".
bool is_word_token(std::string_view token);
bool is_sentence_end(std::string_view token);

struct StopDecision {
  bool stop = false;
  bool truncate = false;  // cut back to the last sentence end if one exists
  StopReason reason = StopReason::hard_cap;
};

// Applies the stop rules one generated token at a time:
//   (a) at a sentence end with both minimums met, stop cleanly;
//   (b) at either maximum, stop and truncate to the last sentence end;
//   (c) at the hard cap, stop as-is.
// Kept model-free so the rules can be tested exhaustively.
class StopTracker {
 public:
  explicit StopTracker(const GenerationConfig& config);

  StopDecision observe(std::string_view token);

  int word_count() const { return words_; }
  int sentence_count() const { return sentences_; }
  int tokens_seen() const { return tokens_; }
  // Index into the observed sequence of the last sentence end, -1 if none.
  int last_sentence_end() const { return last_end_; }
  int words_at_last_sentence_end() const { return words_at_end_; }
  int sentences_at_last_sentence_end() const { return sentences_at_end_; }

 private:
  GenerationConfig config_;
  int words_ = 0;
  int sentences_ = 0;
  int tokens_ = 0;
  int last_end_ = -1;
  int words_at_end_ = 0;
  int sentences_at_end_ = 0;
};

// Temperature + top-k sampling over one logit row. Temperature 0 is argmax
// with ties broken toward the lowest id; otherwise the logits are divided
// by the temperature, restricted to the top_k highest (ties toward the
// lowest id), and sampled from the renormalized softmax. banned ids are
// excluded before the top-k cut.
int sample_next(const Vec& logits, double temperature, int top_k,
                const std::vector<int>& banned, std::mt19937_64& rng);

// Primes the state with <bos> plus the tokenized seed, then samples until a
// stop rule fires. Deterministic at temperature 0. Throws Error(empty_seed)
// when the seed tokenizes to nothing.
GeneratedSample generate(const Parameters& params, const ModelConfig& model_config,
                         const Vocabulary& vocab, const GenerationConfig& config);

// Joins tokens with single spaces, attaches . , ; : ! ? ) to the preceding
// token and ( to the following one, and uppercases the first letter of the
// output and of each sentence.
std::string detokenize(const std::vector<std::string>& tokens);

}  // namespace speechlm
