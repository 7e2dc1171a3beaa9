#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "speechlm/errors.hpp"
#include "speechlm/generation.hpp"
#include "speechlm/transfer.hpp"
#include "support/fixtures.hpp"

using namespace speechlm;

namespace {

GenerationConfig bounds_config(int min_w, int max_w, int min_s, int max_s, int cap = 400) {
  GenerationConfig cfg;
  cfg.seed_text = "The assembly";
  cfg.min_words = min_w;
  cfg.max_words = max_w;
  cfg.min_sentences = min_s;
  cfg.max_sentences = max_s;
  cfg.max_tokens_hard_cap = cap;
  return cfg;
}

Vec logits_of(std::initializer_list<double> values) {
  Vec v(static_cast<long>(values.size()));
  long i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

}  // namespace

TEST_CASE("word and sentence-end classification") {
  CHECK(is_word_token("hello"));
  CHECK(is_word_token("1970"));
  CHECK(is_word_token("non-proliferation"));
  CHECK(is_word_token("'s"));  // contains a letter
  CHECK(!is_word_token("."));
  CHECK(!is_word_token(","));
  CHECK(!is_word_token("("));
  CHECK(!is_word_token("\""));

  CHECK(is_sentence_end("."));
  CHECK(is_sentence_end("!"));
  CHECK(is_sentence_end("?"));
  CHECK(!is_sentence_end(","));
  CHECK(!is_sentence_end("etc."));
  CHECK(!is_sentence_end("hello"));
}

TEST_CASE("clean stop fires at a sentence end once both minimums are met") {
  // Minimums of 4 words / 2 sentences for a compact walkthrough.
  StopTracker tracker(bounds_config(4, 100, 2, 5));

  // Sentence one: 3 words. Ends below both minimums -> keep going.
  for (const char* t : {"we", "affirm", "peace"}) {
    CHECK(!tracker.observe(t).stop);
  }
  StopDecision d = tracker.observe(".");
  CHECK(!d.stop);
  CHECK(tracker.sentence_count() == 1);
  CHECK(tracker.word_count() == 3);
  CHECK(tracker.last_sentence_end() == 3);
  CHECK(tracker.words_at_last_sentence_end() == 3);

  // Sentence two: crosses 4 words, and the sentence count reaches 2.
  CHECK(!tracker.observe("we").stop);
  CHECK(!tracker.observe("agree").stop);
  d = tracker.observe(".");
  CHECK(d.stop);
  CHECK(!d.truncate);
  CHECK(d.reason == StopReason::sentence_bound);
  CHECK(tracker.word_count() == 5);
  CHECK(tracker.sentence_count() == 2);
}

TEST_CASE("a sentence end below the word minimum does not stop") {
  StopTracker tracker(bounds_config(10, 100, 1, 5));
  tracker.observe("one");
  tracker.observe("two");
  const StopDecision d = tracker.observe(".");
  CHECK(!d.stop);  // sentences >= 1 but words < 10
}

TEST_CASE("hitting the word maximum truncates to the last sentence end") {
  StopTracker tracker(bounds_config(4, 6, 2, 9));
  for (const char* t : {"a1", "b2", "c3"}) tracker.observe(t);
  tracker.observe(",");  // punctuation never counts as a word
  CHECK(tracker.word_count() == 3);
  tracker.observe(".");
  CHECK(tracker.sentence_count() == 1);

  tracker.observe("d4");
  tracker.observe("e5");
  const StopDecision d = tracker.observe("f6");  // word 6 == max_words
  CHECK(d.stop);
  CHECK(d.truncate);
  CHECK(d.reason == StopReason::word_bound);
  CHECK(tracker.last_sentence_end() == 4);
  CHECK(tracker.words_at_last_sentence_end() == 3);
  CHECK(tracker.sentences_at_last_sentence_end() == 1);
}

TEST_CASE("hitting the sentence maximum truncates and reports sentence_bound") {
  StopTracker tracker(bounds_config(50, 100, 1, 2));
  tracker.observe("one");
  tracker.observe(".");
  tracker.observe("two");
  const StopDecision d = tracker.observe(".");  // sentence 2 == max, words < min
  CHECK(d.stop);
  CHECK(d.truncate);
  CHECK(d.reason == StopReason::sentence_bound);
  CHECK(tracker.last_sentence_end() == 3);
}

TEST_CASE("the hard cap stops without truncation") {
  StopTracker tracker(bounds_config(50, 100, 2, 5, 3));
  CHECK(!tracker.observe("a").stop);
  CHECK(!tracker.observe("b").stop);
  const StopDecision d = tracker.observe("c");
  CHECK(d.stop);
  CHECK(!d.truncate);
  CHECK(d.reason == StopReason::hard_cap);
  CHECK(tracker.tokens_seen() == 3);
}

TEST_CASE("clean stop wins over the maximums on the same token") {
  // The 4th word is also a sentence end candidate path: minimums already
  // met, maximum reached on the same "." -> rule (a) applies first.
  StopTracker tracker(bounds_config(1, 100, 2, 2));
  tracker.observe("one");
  tracker.observe(".");
  tracker.observe("two");
  const StopDecision d = tracker.observe(".");
  CHECK(d.stop);
  CHECK(!d.truncate);  // clean sentence-bound stop, not a truncation
  CHECK(d.reason == StopReason::sentence_bound);
}

TEST_CASE("argmax sampling breaks ties toward the lowest id") {
  std::mt19937_64 rng(1);
  CHECK(sample_next(logits_of({0.0, 3.0, 3.0, -1.0}), 0.0, 0, {}, rng) == 1);
  CHECK(sample_next(logits_of({5.0, 3.0, 3.0, -1.0}), 0.0, 40, {}, rng) == 0);
  // top_k == 1 is argmax regardless of temperature.
  CHECK(sample_next(logits_of({0.0, 3.0, 2.0, -1.0}), 2.0, 1, {}, rng) == 1);
}

TEST_CASE("banned ids are never sampled") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int pick = sample_next(logits_of({10.0, 9.0, -2.0, -3.0}), 1.0, 0, {0, 1}, rng);
    CHECK(pick >= 2);
  }
  // Argmax also respects the ban.
  CHECK(sample_next(logits_of({10.0, 9.0, -2.0, -3.0}), 0.0, 0, {0, 1}, rng) == 2);
}

TEST_CASE("top-k restricts sampling to the k best logits") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int pick = sample_next(logits_of({1.0, 5.0, 4.0, 0.5}), 1.5, 2, {}, rng);
    CHECK((pick == 1 || pick == 2));
  }
}

TEST_CASE("sampling frequencies match softmax probabilities") {
  // logits [ln 2, 0, 0] at temperature 1: p = [0.5, 0.25, 0.25].
  std::mt19937_64 rng(123);
  const Vec logits = logits_of({std::log(2.0), 0.0, 0.0});
  std::map<int, int> counts;
  const int n = 10000;
  for (int i = 0; i < n; ++i) counts[sample_next(logits, 1.0, 0, {}, rng)]++;
  CHECK(counts[0] / static_cast<double>(n) == doctest::Approx(0.5).epsilon(0.04));
  CHECK(counts[1] / static_cast<double>(n) == doctest::Approx(0.25).epsilon(0.08));
  CHECK(counts[2] / static_cast<double>(n) == doctest::Approx(0.25).epsilon(0.08));
}

TEST_CASE("temperature sharpens the distribution") {
  std::mt19937_64 rng(9);
  const Vec logits = logits_of({2.0, 0.0, 0.0});
  int hot_top = 0;
  int cold_top = 0;
  for (int i = 0; i < 4000; ++i) {
    if (sample_next(logits, 2.0, 0, {}, rng) == 0) ++hot_top;
    if (sample_next(logits, 0.4, 0, {}, rng) == 0) ++cold_top;
  }
  CHECK(cold_top > hot_top);
}

TEST_CASE("sampling with every id banned is an error") {
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(sample_next(logits_of({1.0, 2.0}), 1.0, 0, {0, 1}, rng), Error);
}

TEST_CASE("detokenization follows the punctuation attachment rules") {
  CHECK(detokenize({"we", "affirm", "peace", "."}) == "We affirm peace.");
  CHECK(detokenize({"peace", ",", "security", "and", "rights"}) ==
        "Peace, security and rights");
  CHECK(detokenize({"the", "charter", "(", "as", "amended", ")", "stands", "."}) ==
        "The charter (as amended) stands.");
  CHECK(detokenize({"why", "?", "because", "we", "must", "."}) == "Why? Because we must.");
  CHECK(detokenize({"costs", ";", "benefits", ":", "both", "!"}) == "Costs; benefits: both!");
  CHECK(detokenize({"the", "1970", "'s", "agenda"}) == "The 1970 's agenda");
  CHECK(detokenize({}) == "");
  CHECK(detokenize({"."}) == ".");
  // Capitalization only touches word tokens; an already-capital token stays.
  CHECK(detokenize({"UN", "matters", "."}) == "UN matters.");
}

TEST_CASE("generation configs validate their bounds") {
  GenerationConfig cfg = bounds_config(50, 100, 2, 5);
  CHECK_NOTHROW(cfg.validate());

  GenerationConfig bad = cfg;
  bad.min_words = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.max_words = 40;  // below min_words
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.max_sentences = 1;  // below min_sentences
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.temperature = -0.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.max_tokens_hard_cap = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("stop reasons have stable names") {
  CHECK(stop_reason_name(StopReason::sentence_bound) == "sentence-bound");
  CHECK(stop_reason_name(StopReason::word_bound) == "word-bound");
  CHECK(stop_reason_name(StopReason::hard_cap) == "hard-cap");
  CHECK(stop_reason_name(StopReason::eos) == "eos");
}

namespace {

// A small model trained just enough to produce sentence-shaped output,
// shared by the end-to-end generation cases.
struct GenFixture {
  Vocabulary vocab;
  ModelConfig config;
  Parameters params;

  GenFixture() {
    const auto all = testfix::target_paragraphs();
    const std::vector<std::string> subset(all.begin(), all.begin() + 60);
    const auto tokens = testfix::tokenized(subset);
    vocab = Vocabulary::build(tokens, 60000, 1);
    config.vocab_size = static_cast<int>(vocab.size());
    config.embedding_dim = 24;
    config.hidden_dim = 32;
    config.num_layers = 2;
    config.weight_drop_p = 0.0;
    config.embedding_drop_p = 0.0;
    config.input_drop_p = 0.0;
    config.hidden_drop_p = 0.0;
    config.output_drop_p = 0.0;
    config.ar_alpha = 0.0;
    config.tar_beta = 0.0;

    PipelineOptions opts;
    opts.train.batch_size = 8;
    opts.train.bptt_len = 20;
    opts.epochs = 48;
    opts.lr_top = 3.0;
    opts.discriminative_factor = 1.0;  // uniform rates; this trains from scratch
    opts.seed = 21;
    opts.val_every = 0;
    params = pretrain_pipeline(tokens, vocab, config, opts).checkpoint.params;
  }
};

const GenFixture& gen_fixture() {
  static GenFixture fixture;
  return fixture;
}

}  // namespace

TEST_CASE("generated samples respect the requested bounds") {
  const GenFixture& fx = gen_fixture();
  GenerationConfig cfg = bounds_config(50, 100, 2, 5);
  cfg.seed_text = "The general assembly";

  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    cfg.rng_seed = seed;
    const GeneratedSample sample = generate(fx.params, fx.config, fx.vocab, cfg);
    CAPTURE(seed);
    CAPTURE(sample.text);
    if (sample.stop_reason != StopReason::hard_cap) {
      CHECK(sample.word_count >= 50);
      CHECK(sample.word_count <= 100);
      CHECK(sample.sentence_count >= 2);
      CHECK(sample.sentence_count <= 5);
      CHECK(is_sentence_end(sample.tokens.back()));
    }
    CHECK(sample.text.rfind(cfg.seed_text, 0) == 0);

    // The reported counts match a recount over the returned tokens.
    int words = 0;
    int sentences = 0;
    for (const auto& tok : sample.tokens) {
      if (is_word_token(tok)) ++words;
      if (is_sentence_end(tok)) ++sentences;
    }
    CHECK(sample.word_count == words);
    CHECK(sample.sentence_count == sentences);
  }
}

TEST_CASE("generation is deterministic for a fixed rng seed") {
  const GenFixture& fx = gen_fixture();
  GenerationConfig cfg = bounds_config(50, 100, 2, 5);
  cfg.seed_text = "Our delegation";
  cfg.rng_seed = 7;

  const GeneratedSample a = generate(fx.params, fx.config, fx.vocab, cfg);
  const GeneratedSample b = generate(fx.params, fx.config, fx.vocab, cfg);
  CHECK(a.text == b.text);
  CHECK(a.tokens == b.tokens);
  CHECK(a.stop_reason == b.stop_reason);

  cfg.rng_seed = 8;
  const GeneratedSample c = generate(fx.params, fx.config, fx.vocab, cfg);
  CHECK(a.text != c.text);
}

TEST_CASE("temperature zero is greedy and reproducible") {
  const GenFixture& fx = gen_fixture();
  GenerationConfig cfg = bounds_config(50, 100, 2, 5);
  cfg.seed_text = "We believe";
  cfg.temperature = 0.0;
  cfg.rng_seed = 1;
  const GeneratedSample a = generate(fx.params, fx.config, fx.vocab, cfg);
  cfg.rng_seed = 2;  // irrelevant at temperature 0
  const GeneratedSample b = generate(fx.params, fx.config, fx.vocab, cfg);
  CHECK(a.text == b.text);
}

TEST_CASE("specials never appear in generated output") {
  const GenFixture& fx = gen_fixture();
  GenerationConfig cfg = bounds_config(50, 100, 2, 5);
  cfg.seed_text = "The permanent mission";
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    cfg.rng_seed = seed;
    const GeneratedSample sample = generate(fx.params, fx.config, fx.vocab, cfg);
    for (const auto& tok : sample.tokens) {
      CHECK(tok != "<unk>");
      CHECK(tok != "<pad>");
      CHECK(tok != "<bos>");
      CHECK(tok != "<eos>");
    }
  }
}

TEST_CASE("an empty or whitespace seed is rejected") {
  const GenFixture& fx = gen_fixture();
  GenerationConfig cfg = bounds_config(50, 100, 2, 5);
  cfg.seed_text = "   ";
  try {
    generate(fx.params, fx.config, fx.vocab, cfg);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::empty_seed);
  }
}

TEST_CASE("a mismatched vocabulary is rejected") {
  const GenFixture& fx = gen_fixture();
  const Vocabulary tiny = Vocabulary::build({{"peace", "peace"}}, 60000, 1);
  GenerationConfig cfg = bounds_config(50, 100, 2, 5);
  cfg.seed_text = "peace";
  try {
    generate(fx.params, fx.config, tiny, cfg);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::vocab_mismatch);
  }
}

TEST_CASE("the hard cap bounds pathological requests") {
  const GenFixture& fx = gen_fixture();
  GenerationConfig cfg = bounds_config(5000, 9000, 200, 500, 40);
  cfg.seed_text = "The assembly";
  cfg.rng_seed = 3;
  const GeneratedSample sample = generate(fx.params, fx.config, fx.vocab, cfg);
  CHECK(sample.stop_reason == StopReason::hard_cap);
  CHECK(sample.tokens.size() == 40);
}
