#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "speechlm/corpus.hpp"
#include "speechlm/model.hpp"
#include "speechlm/training.hpp"

namespace speechlm {

// Binary container: "ULMF" magic, u32 LE format version, u32 LE metadata
// length, JSON metadata (config, dtype, tensor manifest, vocab fingerprint),
// then the tensors row-major little-endian in manifest order. dtype "f64"
// stores the weights exactly; "f32" narrows on save and widens on load.
struct Checkpoint {
  ModelConfig config;
  Parameters params;
  std::string vocab_hash;
  std::string dtype = "f64";
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Fingerprint of the serialized vocabulary, stored inside checkpoints so a
// model is never paired with the wrong token table.
std::string vocab_fingerprint(const Vocabulary& vocab);

// Rebuilds the vocabulary-indexed tensors for a new token table: rows for
// tokens the old vocabulary knows (including the specials) are copied, novel
// tokens get the mean over all old rows. Other tensors transfer verbatim.
// Throws Error(vocab_mismatch) if old_vocab does not match ckpt.vocab_hash.
Checkpoint remap_vocabulary(const Checkpoint& ckpt, const Vocabulary& old_vocab,
                            const Vocabulary& new_vocab);

struct PipelineOptions {
  TrainOptions train;
  int epochs = 1;
  double lr_top = 0.004;
  double cut_frac = 0.1;
  double ratio = 32.0;
  double discriminative_factor = 2.6;
  double clip_threshold = 0.25;
  double momentum = 0.9;
  bool gradual_unfreeze = true;  // fine-tuning only
  std::uint64_t seed = 42;
  // Every val_every-th paragraph (0-based indices val_every-1, 2*val_every-1,
  // ...) is held out for validation; 0 disables the split.
  int val_every = 10;
};

struct PipelineResult {
  Checkpoint checkpoint;
  TrainReport report;
};

void split_paragraphs(const std::vector<std::vector<std::string>>& paragraphs, int val_every,
                      std::vector<std::vector<std::string>>& train_out,
                      std::vector<std::vector<std::string>>& val_out);

// Trains from random initialization, all groups unfrozen, slanted-triangular
// schedule over epochs * windows steps. Deterministic for a fixed seed.
PipelineResult pretrain_pipeline(const std::vector<std::vector<std::string>>& paragraphs,
                                 const Vocabulary& vocab, const ModelConfig& config,
                                 const PipelineOptions& opts);

// Remaps the base checkpoint onto the new vocabulary and fine-tunes with
// discriminative rates plus (optionally) gradual unfreezing. epochs == 0
// returns the remapped model untouched. Never mutates the base checkpoint.
PipelineResult finetune_pipeline(const Checkpoint& base, const Vocabulary& base_vocab,
                                 const std::vector<std::vector<std::string>>& paragraphs,
                                 const Vocabulary& vocab, const PipelineOptions& opts);

}  // namespace speechlm
