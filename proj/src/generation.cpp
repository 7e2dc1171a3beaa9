#include "speechlm/generation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "speechlm/errors.hpp"

namespace speechlm {

void GenerationConfig::validate() const {
  if (min_words > max_words || min_sentences > max_sentences) {
    throw Error(ErrorCode::invalid_config, "generation minimums must not exceed maximums");
  }
  if (min_words < 1 || min_sentences < 1) {
    throw Error(ErrorCode::invalid_config, "generation minimums must be at least 1");
  }
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorCode::invalid_config, "temperature must be a finite value >= 0");
  }
  if (max_tokens_hard_cap < 1) {
    throw Error(ErrorCode::invalid_config, "max_tokens_hard_cap must be positive");
  }
}

std::string_view stop_reason_name(StopReason reason) {
  switch (reason) {
    case StopReason::sentence_bound: return "sentence-bound";
    case StopReason::word_bound: return "word-bound";
    case StopReason::hard_cap: return "hard-cap";
    case StopReason::eos: return "eos";
  }
  return "unknown";
}

bool is_word_token(std::string_view token) {
  return std::any_of(token.begin(), token.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0;
  });
}

bool is_sentence_end(std::string_view token) {
  return token == "." || token == "!" || token == "?";
}

StopTracker::StopTracker(const GenerationConfig& config) : config_(config) {
  config_.validate();
}

StopDecision StopTracker::observe(std::string_view token) {
  ++tokens_;
  if (is_word_token(token)) ++words_;
  const bool ends_sentence = is_sentence_end(token);
  if (ends_sentence) {
    ++sentences_;
    last_end_ = tokens_ - 1;
    words_at_end_ = words_;
    sentences_at_end_ = sentences_;
  }

  StopDecision decision;
  if (ends_sentence && sentences_ >= config_.min_sentences && words_ >= config_.min_words) {
    decision.stop = true;
    decision.reason = StopReason::sentence_bound;
    return decision;
  }
  if (words_ >= config_.max_words) {
    decision.stop = true;
    decision.truncate = true;
    decision.reason = StopReason::word_bound;
    return decision;
  }
  if (sentences_ >= config_.max_sentences) {
    decision.stop = true;
    decision.truncate = true;
    decision.reason = StopReason::sentence_bound;
    return decision;
  }
  if (tokens_ >= config_.max_tokens_hard_cap) {
    decision.stop = true;
    decision.reason = StopReason::hard_cap;
    return decision;
  }
  return decision;
}

int sample_next(const Vec& logits, double temperature, int top_k,
                const std::vector<int>& banned, std::mt19937_64& rng) {
  if (!logits.allFinite()) {
    throw Error(ErrorCode::invalid_config, "sample_next needs finite logits");
  }
  if (!(temperature >= 0.0)) {
    throw Error(ErrorCode::invalid_config, "temperature must be >= 0");
  }

  std::vector<bool> is_banned(static_cast<std::size_t>(logits.size()), false);
  for (int id : banned) {
    if (id >= 0 && id < logits.size()) is_banned[static_cast<std::size_t>(id)] = true;
  }
  std::vector<int> allowed;
  allowed.reserve(static_cast<std::size_t>(logits.size()));
  for (int id = 0; id < logits.size(); ++id) {
    if (!is_banned[static_cast<std::size_t>(id)]) allowed.push_back(id);
  }
  if (allowed.empty()) {
    throw Error(ErrorCode::invalid_config, "every token is banned from sampling");
  }

  // Highest logit first, ties toward the lowest id.
  std::stable_sort(allowed.begin(), allowed.end(),
                   [&](int a, int b) { return logits(a) > logits(b); });

  if (temperature == 0.0 || top_k == 1) {
    return allowed.front();
  }

  const std::size_t keep = top_k <= 0
                               ? allowed.size()
                               : std::min(allowed.size(), static_cast<std::size_t>(top_k));
  allowed.resize(keep);

  const double max_logit = logits(allowed.front());
  std::vector<double> weights(keep);
  double total = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    weights[i] = std::exp((logits(allowed[i]) - max_logit) / temperature);
    total += weights[i];
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng) * total;
  double cumulative = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    cumulative += weights[i];
    if (u < cumulative) return allowed[i];
  }
  return allowed.back();
}

std::string detokenize(const std::vector<std::string>& tokens) {
  static const std::vector<std::string> attach_left = {".", ",", ";", ":", "!", "?", ")"};
  std::string out;
  bool capitalize = true;
  bool suppress_space = false;
  for (const std::string& token : tokens) {
    if (token.empty()) continue;
    const bool attaches = std::find(attach_left.begin(), attach_left.end(), token) !=
                          attach_left.end();
    if (!out.empty() && !attaches && !suppress_space) out += ' ';

    std::string piece = token;
    if (capitalize && is_word_token(piece)) {
      piece[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(piece[0])));
      capitalize = false;
    }
    out += piece;

    suppress_space = token == "(";
    if (is_sentence_end(token)) capitalize = true;
  }
  return out;
}

GeneratedSample generate(const Parameters& params, const ModelConfig& model_config,
                         const Vocabulary& vocab, const GenerationConfig& config) {
  config.validate();
  model_config.validate();
  if (static_cast<int>(vocab.size()) != model_config.vocab_size) {
    throw Error(ErrorCode::vocab_mismatch, "vocabulary size disagrees with the model config");
  }

  const std::vector<std::string> seed_tokens = tokenize(config.seed_text);
  if (seed_tokens.empty()) {
    throw Error(ErrorCode::empty_seed, "seed text tokenizes to nothing");
  }

  IdMatrix prime(1, static_cast<long>(seed_tokens.size()) + 1);
  prime(0, 0) = Vocabulary::kBos;
  for (std::size_t i = 0; i < seed_tokens.size(); ++i) {
    prime(0, static_cast<long>(i) + 1) = vocab.id_or_unk(seed_tokens[i]);
  }

  const DropoutMasks no_masks;
  ForwardResult fwd =
      forward_sequence(params, model_config, prime, HiddenState::zeros(model_config, 1), no_masks,
                       RunMode::eval);

  std::vector<int> banned = {Vocabulary::kUnk, Vocabulary::kPad, Vocabulary::kBos};
  if (!config.allow_eos) banned.push_back(Vocabulary::kEos);

  std::mt19937_64 rng(config.rng_seed);
  StopTracker tracker(config);
  GeneratedSample sample;

  while (true) {
    const Vec logits = fwd.logits.back().row(0).transpose();
    const int id = sample_next(logits, config.temperature, config.top_k, banned, rng);
    if (config.allow_eos && id == Vocabulary::kEos) {
      sample.stop_reason = StopReason::eos;
      sample.word_count = tracker.word_count();
      sample.sentence_count = tracker.sentence_count();
      break;
    }

    sample.tokens.push_back(vocab.token(id));
    const StopDecision decision = tracker.observe(sample.tokens.back());
    if (decision.stop) {
      sample.stop_reason = decision.reason;
      if (decision.truncate && tracker.last_sentence_end() >= 0) {
        sample.tokens.resize(static_cast<std::size_t>(tracker.last_sentence_end()) + 1);
        sample.word_count = tracker.words_at_last_sentence_end();
        sample.sentence_count = tracker.sentences_at_last_sentence_end();
      } else {
        sample.word_count = tracker.word_count();
        sample.sentence_count = tracker.sentence_count();
      }
      break;
    }

    IdMatrix step(1, 1);
    step(0, 0) = id;
    fwd = forward_sequence(params, model_config, step, fwd.state, no_masks, RunMode::eval);
  }

  std::vector<std::string> full = seed_tokens;
  full.insert(full.end(), sample.tokens.begin(), sample.tokens.end());
  const std::string seed_detok = detokenize(seed_tokens);
  const std::string full_detok = detokenize(full);
  sample.text = config.seed_text + full_detok.substr(seed_detok.size());
  return sample;
}

}  // namespace speechlm
