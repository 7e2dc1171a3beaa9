#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "speechlm/corpus.hpp"
#include "speechlm/model.hpp"

namespace speechlm {

// Slanted-triangular learning rate plus the fine-tuning knobs: a
// discriminative per-group factor and an unfreeze plan of
// (epoch, group) pairs saying when each layer group becomes trainable.
// An empty plan trains everything from the start.
struct ScheduleConfig {
  double lr_max = 0.0;
  double cut_frac = 0.1;
  double ratio = 32.0;
  long total_steps = 0;
  double discriminative_factor = 2.6;
  std::vector<std::pair<int, int>> unfreeze_plan;

  long cut() const;
  void validate() const;  // throws Error(invalid_schedule)

  // Normalizes cut_frac so the decay leg ends exactly at total_steps.
  static ScheduleConfig stlr(double lr_max, long total_steps, double cut_frac = 0.1,
                             double ratio = 32.0);
};

// lr(t) rises linearly to lr_max at t = cut, then decays linearly back to
// lr_max/ratio. Throws Error(invalid_schedule) outside [0, total_steps].
double stlr_learning_rate(long t, const ScheduleConfig& sched);

// Per-group learning rates, lowest group first: lr_top / factor^(L-1-g).
std::vector<double> discriminative_lrs(double lr_top, int num_groups, double factor);

// Unfreeze the top group in epoch 1, one more group per subsequent epoch.
std::vector<std::pair<int, int>> gradual_unfreeze_plan(int num_groups);

// true = frozen at the given 1-based epoch.
std::vector<bool> frozen_groups_at(int epoch, int num_groups,
                                   const std::vector<std::pair<int, int>>& plan);

// Layer groups: 0 = embedding + decoder, 1..L = LSTM layers bottom-up.
int layer_group_of(const std::string& tensor_name);
int num_layer_groups(const ModelConfig& config);

struct OptimState {
  Parameters momentum;
  long step = 0;
  double momentum_coef = 0.9;
  double clip_threshold = 0.25;

  static OptimState create(const ModelConfig& config, double clip_threshold = 0.25,
                           double momentum_coef = 0.9);
};

// Loss and full parameter gradients for one BPTT window. Pure given fixed
// masks, which is what the finite-difference check relies on.
struct WindowGradients {
  double loss = 0.0;
  Parameters grads;
  HiddenState state;  // carried state after the window
};

WindowGradients backward_window(const Parameters& params, const ModelConfig& config,
                                const IdMatrix& inputs, const IdMatrix& targets,
                                const HiddenState& state, const DropoutMasks& masks,
                                RunMode mode = RunMode::train);

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;          // before clipping, over unfrozen tensors
  double clipped_grad_norm = 0.0;  // after clipping
  HiddenState state;
};

// One truncated-BPTT training step: backward, global-norm clip, SGD with
// momentum at the scheduled per-group rates. Frozen groups are untouched.
// Throws Error(non_finite_gradient) before any mutation if gradients blow up.
StepResult backward_and_step(Parameters& params, const ModelConfig& config, OptimState& optim,
                             const IdMatrix& inputs, const IdMatrix& targets,
                             const HiddenState& state, const DropoutMasks& masks,
                             const ScheduleConfig& sched, const std::vector<bool>& frozen_groups);

struct TrainOptions {
  int batch_size = 16;
  int bptt_len = 70;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_ppl = 0.0;
  double tokens_per_sec = 0.0;
  long tokens_seen = 0;
  std::vector<double> group_lrs;  // at the first step of the epoch
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::string resolved_config;  // echoed verbatim into the report file

  std::string to_jsonl() const;
  void save(const std::filesystem::path& path) const;
};

// Reshapes stream ids into batch_size parallel contiguous rows.
// Throws Error(stream_too_short) when no full window fits.
IdMatrix batchify(const TokenStream& stream, int batch_size, int bptt_len);

long windows_per_epoch(const TokenStream& stream, const TrainOptions& opts);

// One pass over the stream in bptt windows with state carried across
// windows. Fresh dropout masks per window come from rng, so a fixed seed
// reproduces the epoch exactly.
EpochRecord train_epoch(Parameters& params, const ModelConfig& config, OptimState& optim,
                        const TokenStream& stream, const TrainOptions& opts,
                        const ScheduleConfig& sched, int epoch, std::mt19937_64& rng);

// exp(mean eval-mode cross-entropy) over all predicted positions.
double perplexity(const Parameters& params, const ModelConfig& config, const TokenStream& stream,
                  int bptt_len = 70);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  long worst_index = -1;
  bool pass = false;
};

// Compares analytic BPTT gradients against central finite differences
// (eps = 1e-5) on a randomly initialized model in train mode with fixed
// masks. corrupt_for_test injects a deliberate error so tests can verify
// the check actually fails.
GradCheckReport gradient_check(const ModelConfig& config, std::uint64_t rng_seed,
                               bool corrupt_for_test = false);

}  // namespace speechlm
