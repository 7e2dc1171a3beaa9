#include "speechlm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "speechlm/errors.hpp"

namespace speechlm {

long ScheduleConfig::cut() const {
  return static_cast<long>(std::floor(static_cast<double>(total_steps) * cut_frac));
}

void ScheduleConfig::validate() const {
  if (!(lr_max > 0.0) || !std::isfinite(lr_max)) {
    throw Error(ErrorCode::invalid_schedule, "lr_max must be positive");
  }
  if (!(ratio >= 1.0) || !std::isfinite(ratio)) {
    throw Error(ErrorCode::invalid_schedule, "ratio must be at least 1");
  }
  if (total_steps < 1) {
    throw Error(ErrorCode::invalid_schedule, "total_steps must be positive");
  }
  if (!(cut_frac > 0.0 && cut_frac < 1.0)) {
    throw Error(ErrorCode::invalid_schedule, "cut_frac must lie in (0,1)");
  }
  const long c = cut();
  if (c < 1) {
    throw Error(ErrorCode::invalid_schedule, "cut = floor(total_steps * cut_frac) must be >= 1");
  }
  const double denom = static_cast<double>(c) * (1.0 / cut_frac - 1.0);
  const double p_end = 1.0 - static_cast<double>(total_steps - c) / denom;
  if (!(1.0 + p_end * (ratio - 1.0) > 0.0)) {
    throw Error(ErrorCode::invalid_schedule, "schedule decays below zero before total_steps");
  }
  if (!(discriminative_factor > 0.0)) {
    throw Error(ErrorCode::invalid_schedule, "discriminative_factor must be positive");
  }
}

ScheduleConfig ScheduleConfig::stlr(double lr_max, long total_steps, double cut_frac,
                                    double ratio) {
  if (total_steps < 2) {
    throw Error(ErrorCode::invalid_schedule, "a slanted schedule needs at least 2 steps");
  }
  if (!(cut_frac > 0.0 && cut_frac < 1.0)) {
    throw Error(ErrorCode::invalid_schedule, "cut_frac must lie in (0,1)");
  }
  ScheduleConfig sched;
  sched.lr_max = lr_max;
  sched.total_steps = total_steps;
  sched.ratio = ratio;
  // Snap the cut to a whole step so the decay leg reaches exactly
  // lr_max/ratio at total_steps instead of undershooting past zero.
  const long raw_cut = static_cast<long>(std::floor(static_cast<double>(total_steps) * cut_frac));
  const long c = std::clamp(raw_cut, 1L, total_steps - 1);
  sched.cut_frac = static_cast<double>(c) / static_cast<double>(total_steps);
  sched.validate();
  return sched;
}

double stlr_learning_rate(long t, const ScheduleConfig& sched) {
  sched.validate();
  if (t < 0 || t > sched.total_steps) {
    throw Error(ErrorCode::invalid_schedule,
                "step " + std::to_string(t) + " outside schedule of " +
                    std::to_string(sched.total_steps) + " steps");
  }
  const double c = static_cast<double>(sched.cut());
  double p;
  if (t < c) {
    p = static_cast<double>(t) / c;
  } else {
    p = 1.0 - (static_cast<double>(t) - c) / (c * (1.0 / sched.cut_frac - 1.0));
  }
  return sched.lr_max * (1.0 + p * (sched.ratio - 1.0)) / sched.ratio;
}

std::vector<double> discriminative_lrs(double lr_top, int num_groups, double factor) {
  if (num_groups < 1 || !(factor > 0.0)) {
    throw Error(ErrorCode::invalid_schedule, "need at least one group and a positive factor");
  }
  std::vector<double> lrs(static_cast<std::size_t>(num_groups));
  for (int g = 0; g < num_groups; ++g) {
    lrs[static_cast<std::size_t>(g)] = lr_top / std::pow(factor, num_groups - 1 - g);
  }
  return lrs;
}

std::vector<std::pair<int, int>> gradual_unfreeze_plan(int num_groups) {
  std::vector<std::pair<int, int>> plan;
  for (int g = num_groups - 1; g >= 0; --g) {
    plan.emplace_back(num_groups - g, g);
  }
  return plan;
}

std::vector<bool> frozen_groups_at(int epoch, int num_groups,
                                   const std::vector<std::pair<int, int>>& plan) {
  if (plan.empty()) return std::vector<bool>(static_cast<std::size_t>(num_groups), false);
  std::vector<bool> frozen(static_cast<std::size_t>(num_groups), true);
  for (const auto& [from_epoch, group] : plan) {
    if (group < 0 || group >= num_groups) {
      throw Error(ErrorCode::invalid_schedule, "unfreeze plan names a group that does not exist");
    }
    if (epoch >= from_epoch) frozen[static_cast<std::size_t>(group)] = false;
  }
  return frozen;
}

int layer_group_of(const std::string& tensor_name) {
  if (tensor_name == "embedding" || tensor_name.rfind("decoder", 0) == 0) return 0;
  if (tensor_name.rfind("lstm", 0) == 0) {
    const auto dot = tensor_name.find('.');
    const std::string digits = tensor_name.substr(4, dot - 4);
    if (!digits.empty() && digits.find_first_not_of("0123456789") == std::string::npos) {
      return std::stoi(digits) + 1;
    }
  }
  throw Error(ErrorCode::invalid_config, "unknown tensor name: " + tensor_name);
}

int num_layer_groups(const ModelConfig& config) { return config.num_layers + 1; }

OptimState OptimState::create(const ModelConfig& config, double clip_threshold,
                              double momentum_coef) {
  OptimState s;
  s.momentum = Parameters::zeros_like(config);
  s.clip_threshold = clip_threshold;
  s.momentum_coef = momentum_coef;
  return s;
}

WindowGradients backward_window(const Parameters& params, const ModelConfig& config,
                                const IdMatrix& inputs, const IdMatrix& targets,
                                const HiddenState& state, const DropoutMasks& masks,
                                RunMode mode) {
  if (targets.rows() != inputs.rows() || targets.cols() != inputs.cols()) {
    throw Error(ErrorCode::shape_mismatch, "inputs and targets must have the same shape");
  }
  for (int b = 0; b < targets.rows(); ++b) {
    for (int t = 0; t < targets.cols(); ++t) {
      if (targets(b, t) < 0 || targets(b, t) >= config.vocab_size) {
        throw Error(ErrorCode::shape_mismatch, "target id out of vocabulary range");
      }
    }
  }

  ForwardResult fwd = forward_sequence(params, config, inputs, state, masks, mode);
  const ForwardCache& cache = fwd.cache;
  const int batch = cache.batch;
  const int steps = cache.steps;
  const bool train = mode == RunMode::train;
  const double inv_bt = 1.0 / (static_cast<double>(batch) * steps);

  WindowGradients out;
  out.loss = sequence_loss(fwd.logits, targets, cache, config);
  out.grads = Parameters::zeros_like(config);
  out.state = fwd.state;

  const Mat& dec_w = config.tie_weights ? params.embedding : params.decoder_weight;
  Mat& dec_w_grad = config.tie_weights ? out.grads.embedding : out.grads.decoder_weight;

  // Decoder and cross-entropy: dlogits = (softmax - onehot) / (batch * steps).
  std::vector<Mat> dh(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    const auto tu = static_cast<std::size_t>(t);
    Mat dlogits = log_softmax_rows(fwd.logits[tu]).array().exp().matrix();
    for (int b = 0; b < batch; ++b) dlogits(b, targets(b, t)) -= 1.0;
    dlogits *= inv_bt;

    dec_w_grad.noalias() += dlogits.transpose() * cache.decoder_input[tu];
    out.grads.decoder_bias.col(0).noalias() += dlogits.colwise().sum().transpose();

    Mat dy = dlogits * dec_w;
    dh[tu] = train ? Mat((dy.array() * masks.output.array()).matrix()) : std::move(dy);
  }

  // Activation regularization terms act on the raw top-layer activations.
  const auto& top = cache.hidden.back();
  const double width_out = static_cast<double>(top[0].cols());
  if (config.ar_alpha > 0.0) {
    const double coeff = 2.0 * config.ar_alpha / (batch * steps * width_out);
    for (int t = 0; t < steps; ++t) {
      dh[static_cast<std::size_t>(t)] += coeff * top[static_cast<std::size_t>(t)];
    }
  }
  if (config.tar_beta > 0.0 && steps > 1) {
    const double coeff = 2.0 * config.tar_beta / (batch * (steps - 1) * width_out);
    for (int t = 1; t < steps; ++t) {
      const Mat diff = coeff * (top[static_cast<std::size_t>(t)] - top[static_cast<std::size_t>(t - 1)]);
      dh[static_cast<std::size_t>(t)] += diff;
      dh[static_cast<std::size_t>(t - 1)] -= diff;
    }
  }

  // Backward through the stack, top layer first; dh holds the gradient
  // flowing into each layer's raw hidden outputs.
  for (int l = config.num_layers - 1; l >= 0; --l) {
    const auto lu = static_cast<std::size_t>(l);
    const int width = config.layer_width(l);
    const auto& layer = params.layers[lu];
    const Mat u_eff = train ? Mat((layer.w_recurrent.array() * masks.recurrent[lu].array()))
                            : layer.w_recurrent;

    Mat dh_carry = Mat::Zero(batch, width);
    Mat dc_carry = Mat::Zero(batch, width);
    Mat g_w = Mat::Zero(4 * width, config.layer_input_width(l));
    Mat g_u_eff = Mat::Zero(4 * width, width);
    Vec g_b = Vec::Zero(4 * width);
    std::vector<Mat> dx(static_cast<std::size_t>(steps));

    for (int t = steps - 1; t >= 0; --t) {
      const auto tu = static_cast<std::size_t>(t);
      const Mat& gate = cache.gates[lu][tu];
      const auto i = gate.leftCols(width).array();
      const auto f = gate.middleCols(width, width).array();
      const auto o = gate.middleCols(2 * width, width).array();
      const auto g = gate.rightCols(width).array();
      const Mat tanh_c = cache.cell[lu][tu].array().tanh().matrix();
      const Mat& c_prev = t > 0 ? cache.cell[lu][tu - 1] : cache.state0.c[lu];
      const Mat& h_prev = t > 0 ? cache.hidden[lu][tu - 1] : cache.state0.h[lu];

      const Mat dht = dh[tu] + dh_carry;
      const Mat dc =
          (dc_carry.array() + dht.array() * o * (1.0 - tanh_c.array().square())).matrix();
      const Mat do_ = (dht.array() * tanh_c.array()).matrix();

      Mat da(batch, 4 * width);
      da.leftCols(width) = (dc.array() * g * i * (1.0 - i)).matrix();
      da.middleCols(width, width) = (dc.array() * c_prev.array() * f * (1.0 - f)).matrix();
      da.middleCols(2 * width, width) = (do_.array() * o * (1.0 - o)).matrix();
      da.rightCols(width) = (dc.array() * i * (1.0 - g.square())).matrix();

      g_w.noalias() += da.transpose() * cache.inputs[lu][tu];
      g_u_eff.noalias() += da.transpose() * h_prev;
      g_b.noalias() += da.colwise().sum().transpose();
      dx[tu] = da * layer.w_input;
      dh_carry.noalias() = da * u_eff;
      dc_carry = (dc.array() * f).matrix();
    }

    out.grads.layers[lu].w_input = std::move(g_w);
    out.grads.layers[lu].w_recurrent =
        train ? Mat((g_u_eff.array() * masks.recurrent[lu].array()).matrix()) : std::move(g_u_eff);
    out.grads.layers[lu].bias.col(0) = g_b;

    if (l > 0) {
      // dx is the gradient at the dropped output of the layer below.
      for (int t = 0; t < steps; ++t) {
        const auto tu = static_cast<std::size_t>(t);
        dh[tu] = train ? Mat((dx[tu].array() * masks.between[lu - 1].array()).matrix())
                       : std::move(dx[tu]);
      }
    } else {
      for (int t = 0; t < steps; ++t) {
        const auto tu = static_cast<std::size_t>(t);
        const Mat d = train ? Mat((dx[tu].array() * masks.input.array()).matrix())
                            : std::move(dx[tu]);
        for (int b = 0; b < batch; ++b) {
          const int id = cache.ids(b, t);
          const double scale = train ? masks.embedding_scale(id) : 1.0;
          out.grads.embedding.row(id) += d.row(b) * scale;
        }
      }
    }
  }
  return out;
}

StepResult backward_and_step(Parameters& params, const ModelConfig& config, OptimState& optim,
                             const IdMatrix& inputs, const IdMatrix& targets,
                             const HiddenState& state, const DropoutMasks& masks,
                             const ScheduleConfig& sched, const std::vector<bool>& frozen_groups) {
  const int groups = num_layer_groups(config);
  if (static_cast<int>(frozen_groups.size()) != groups) {
    throw Error(ErrorCode::invalid_config, "frozen_groups must name every layer group");
  }

  WindowGradients win =
      backward_window(params, config, inputs, targets, state, masks, RunMode::train);
  if (!win.grads.all_finite()) {
    throw Error(ErrorCode::non_finite_gradient, "non-finite gradient; step aborted");
  }

  auto param_tensors = params.tensors();
  auto grad_tensors = win.grads.tensors();
  auto mom_tensors = optim.momentum.tensors();

  double sq_norm = 0.0;
  std::vector<int> group_of(param_tensors.size());
  for (std::size_t i = 0; i < param_tensors.size(); ++i) {
    group_of[i] = layer_group_of(param_tensors[i].first);
    if (!frozen_groups[static_cast<std::size_t>(group_of[i])]) {
      sq_norm += grad_tensors[i].second->squaredNorm();
    }
  }
  const double norm = std::sqrt(sq_norm);
  const double scale = norm > optim.clip_threshold ? optim.clip_threshold / norm : 1.0;

  const double lr_top = stlr_learning_rate(optim.step, sched);
  const std::vector<double> lrs = discriminative_lrs(lr_top, groups, sched.discriminative_factor);

  for (std::size_t i = 0; i < param_tensors.size(); ++i) {
    if (frozen_groups[static_cast<std::size_t>(group_of[i])]) continue;
    Mat& grad = *grad_tensors[i].second;
    if (scale != 1.0) grad *= scale;
    Mat& vel = *mom_tensors[i].second;
    vel = optim.momentum_coef * vel + grad;
    param_tensors[i].second->noalias() -= lrs[static_cast<std::size_t>(group_of[i])] * vel;
  }
  ++optim.step;

  StepResult res;
  res.loss = win.loss;
  res.grad_norm = norm;
  res.clipped_grad_norm = norm * scale;
  res.state = std::move(win.state);
  return res;
}

IdMatrix batchify(const TokenStream& stream, int batch_size, int bptt_len) {
  if (batch_size < 1 || bptt_len < 1) {
    throw Error(ErrorCode::invalid_config, "batch_size and bptt_len must be positive");
  }
  const long n = static_cast<long>(stream.ids.size());
  const long cols = n / batch_size;
  if (n < static_cast<long>(batch_size) * bptt_len || cols < 2) {
    throw Error(ErrorCode::stream_too_short,
                "stream of " + std::to_string(n) + " tokens cannot fill one " +
                    std::to_string(batch_size) + "x" + std::to_string(bptt_len) + " window");
  }
  IdMatrix data(batch_size, cols);
  for (int b = 0; b < batch_size; ++b) {
    for (long t = 0; t < cols; ++t) {
      data(b, t) = static_cast<int>(stream.ids[static_cast<std::size_t>(b * cols + t)]);
    }
  }
  return data;
}

long windows_per_epoch(const TokenStream& stream, const TrainOptions& opts) {
  const long cols = static_cast<long>(stream.ids.size()) / opts.batch_size;
  if (cols < 2) return 0;
  return (cols - 2) / opts.bptt_len + 1;
}

EpochRecord train_epoch(Parameters& params, const ModelConfig& config, OptimState& optim,
                        const TokenStream& stream, const TrainOptions& opts,
                        const ScheduleConfig& sched, int epoch, std::mt19937_64& rng) {
  const IdMatrix data = batchify(stream, opts.batch_size, opts.bptt_len);
  const long cols = data.cols();
  const std::vector<bool> frozen =
      frozen_groups_at(epoch, num_layer_groups(config), sched.unfreeze_plan);

  EpochRecord rec;
  rec.epoch = epoch;
  rec.group_lrs = discriminative_lrs(stlr_learning_rate(optim.step, sched),
                                     num_layer_groups(config), sched.discriminative_factor);

  HiddenState state = HiddenState::zeros(config, opts.batch_size);
  double loss_sum = 0.0;
  long token_count = 0;
  const auto started = std::chrono::steady_clock::now();

  for (long off = 0; off + 1 < cols; off += opts.bptt_len) {
    const long len = std::min<long>(opts.bptt_len, cols - 1 - off);
    const IdMatrix inputs = data.middleCols(off, len);
    const IdMatrix targets = data.middleCols(off + 1, len);
    const DropoutMasks masks = DropoutMasks::sample(config, opts.batch_size, rng);
    StepResult step =
        backward_and_step(params, config, optim, inputs, targets, state, masks, sched, frozen);
    state = std::move(step.state);
    loss_sum += step.loss * static_cast<double>(opts.batch_size * len);
    token_count += opts.batch_size * len;
  }

  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;
  rec.train_loss = token_count > 0 ? loss_sum / static_cast<double>(token_count) : 0.0;
  rec.tokens_seen = token_count;
  rec.tokens_per_sec =
      elapsed.count() > 0.0 ? static_cast<double>(token_count) / elapsed.count() : 0.0;
  return rec;
}

double perplexity(const Parameters& params, const ModelConfig& config, const TokenStream& stream,
                  int bptt_len) {
  const long n = static_cast<long>(stream.ids.size());
  if (n < 2) {
    throw Error(ErrorCode::empty_stream, "perplexity needs at least two tokens");
  }
  if (bptt_len < 1) {
    throw Error(ErrorCode::invalid_config, "bptt_len must be positive");
  }

  IdMatrix row(1, n);
  for (long t = 0; t < n; ++t) row(0, t) = static_cast<int>(stream.ids[static_cast<std::size_t>(t)]);

  const DropoutMasks no_masks;
  HiddenState state = HiddenState::zeros(config, 1);
  double total = 0.0;
  for (long off = 0; off + 1 < n; off += bptt_len) {
    const long len = std::min<long>(bptt_len, n - 1 - off);
    const IdMatrix inputs = row.middleCols(off, len);
    ForwardResult fwd = forward_sequence(params, config, inputs, state, no_masks, RunMode::eval);
    state = std::move(fwd.state);
    for (long t = 0; t < len; ++t) {
      const Mat logp = log_softmax_rows(fwd.logits[static_cast<std::size_t>(t)]);
      total -= logp(0, row(0, off + 1 + t));
    }
  }
  return std::exp(total / static_cast<double>(n - 1));
}

std::string TrainReport::to_jsonl() const {
  std::ostringstream out;
  if (!resolved_config.empty()) {
    nlohmann::json head;
    head["type"] = "run";
    head["resolved_config"] = resolved_config;
    out << head.dump() << '\n';
  }
  for (const EpochRecord& rec : epochs) {
    nlohmann::json line;
    line["type"] = "epoch";
    line["epoch"] = rec.epoch;
    line["train_loss"] = rec.train_loss;
    line["val_loss"] = rec.val_loss;
    line["val_ppl"] = rec.val_ppl;
    line["tokens_per_sec"] = rec.tokens_per_sec;
    line["tokens_seen"] = rec.tokens_seen;
    line["group_lrs"] = rec.group_lrs;
    out << line.dump() << '\n';
  }
  return out.str();
}

void TrainReport::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::io_failure, "cannot open " + path.string() + " for writing");
  }
  out << to_jsonl();
  if (!out) {
    throw Error(ErrorCode::io_failure, "failed writing " + path.string());
  }
}

GradCheckReport gradient_check(const ModelConfig& config, std::uint64_t rng_seed,
                               bool corrupt_for_test) {
  config.validate();
  const int batch = 2;
  const int steps = 4;

  std::mt19937_64 rng(rng_seed);
  Parameters params = init_parameters(config, rng_seed);
  const DropoutMasks masks = DropoutMasks::sample(config, batch, rng);

  std::uniform_int_distribution<int> pick(0, config.vocab_size - 1);
  IdMatrix inputs(batch, steps);
  IdMatrix targets(batch, steps);
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < steps; ++t) {
      inputs(b, t) = pick(rng);
      targets(b, t) = pick(rng);
    }
  }

  HiddenState state = HiddenState::zeros(config, batch);
  std::uniform_real_distribution<double> unit(-0.5, 0.5);
  for (int l = 0; l < config.num_layers; ++l) {
    const auto lu = static_cast<std::size_t>(l);
    for (int b = 0; b < batch; ++b) {
      for (int j = 0; j < state.h[lu].cols(); ++j) {
        state.h[lu](b, j) = unit(rng);
        state.c[lu](b, j) = unit(rng);
      }
    }
  }

  WindowGradients analytic =
      backward_window(params, config, inputs, targets, state, masks, RunMode::train);
  if (corrupt_for_test) analytic.grads.embedding(0, 0) += 1e-3;

  const double eps = 1e-5;
  auto loss_at = [&]() {
    const ForwardResult fwd =
        forward_sequence(params, config, inputs, state, masks, RunMode::train);
    return sequence_loss(fwd.logits, targets, fwd.cache, config);
  };

  GradCheckReport report;
  auto param_tensors = params.tensors();
  auto grad_tensors = analytic.grads.tensors();
  for (std::size_t i = 0; i < param_tensors.size(); ++i) {
    Mat& theta = *param_tensors[i].second;
    const Mat& grad = *grad_tensors[i].second;
    for (long k = 0; k < theta.size(); ++k) {
      const double saved = theta.data()[k];
      theta.data()[k] = saved + eps;
      const double up = loss_at();
      theta.data()[k] = saved - eps;
      const double down = loss_at();
      theta.data()[k] = saved;

      const double numeric = (up - down) / (2.0 * eps);
      const double ga = grad.data()[k];
      const double rel = std::abs(ga - numeric) /
                         std::max({std::abs(ga), std::abs(numeric), 1e-4});
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_tensor = param_tensors[i].first;
        report.worst_index = k;
      }
    }
  }
  report.pass = report.max_rel_error <= 1e-4;
  return report;
}

}  // namespace speechlm
