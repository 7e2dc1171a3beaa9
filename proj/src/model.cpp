#include "speechlm/model.hpp"

#include <cmath>

#include "speechlm/errors.hpp"

namespace speechlm {

namespace {

inline Mat sigmoid(const Mat& x) {
  return ((-x.array()).exp() + 1.0).inverse().matrix();
}

Mat bernoulli_mask(int rows, int cols, double p, std::mt19937_64& rng) {
  Mat mask(rows, cols);
  if (p <= 0.0) {
    mask.setOnes();
    return mask;
  }
  const double keep_scale = 1.0 / (1.0 - p);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      mask(i, j) = unit(rng) < p ? 0.0 : keep_scale;
    }
  }
  return mask;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size <= 0 || embedding_dim <= 0 || hidden_dim <= 0 || num_layers < 1) {
    throw Error(ErrorCode::invalid_config, "model dimensions must be positive");
  }
  for (double p : {weight_drop_p, embedding_drop_p, input_drop_p, hidden_drop_p, output_drop_p}) {
    if (!(p >= 0.0 && p < 1.0)) {
      throw Error(ErrorCode::invalid_config, "dropout probabilities must lie in [0,1)");
    }
  }
  if (ar_alpha < 0.0 || tar_beta < 0.0) {
    throw Error(ErrorCode::invalid_config, "ar_alpha and tar_beta must be nonnegative");
  }
}

ModelConfig ModelConfig::desk(int vocab_size) {
  ModelConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.embedding_dim = 64;
  cfg.hidden_dim = 128;
  cfg.num_layers = 2;
  return cfg;
}

ModelConfig ModelConfig::reference(int vocab_size) {
  ModelConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.embedding_dim = 400;
  cfg.hidden_dim = 1150;
  cfg.num_layers = 3;
  return cfg;
}

Parameters Parameters::zeros_like(const ModelConfig& config) {
  Parameters p;
  p.embedding = Mat::Zero(config.vocab_size, config.embedding_dim);
  for (int l = 0; l < config.num_layers; ++l) {
    const int in = config.layer_input_width(l);
    const int width = config.layer_width(l);
    p.layers.push_back(
        {Mat::Zero(4 * width, in), Mat::Zero(4 * width, width), Mat::Zero(4 * width, 1)});
  }
  if (!config.tie_weights) {
    p.decoder_weight = Mat::Zero(config.vocab_size, config.output_width());
  }
  p.decoder_bias = Mat::Zero(config.vocab_size, 1);
  return p;
}

std::vector<std::pair<std::string, Mat*>> Parameters::tensors() {
  std::vector<std::pair<std::string, Mat*>> out;
  out.emplace_back("embedding", &embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string prefix = "lstm" + std::to_string(l);
    out.emplace_back(prefix + ".w_input", &layers[l].w_input);
    out.emplace_back(prefix + ".w_recurrent", &layers[l].w_recurrent);
    out.emplace_back(prefix + ".bias", &layers[l].bias);
  }
  if (decoder_weight.size() > 0) out.emplace_back("decoder.weight", &decoder_weight);
  out.emplace_back("decoder.bias", &decoder_bias);
  return out;
}

std::vector<std::pair<std::string, const Mat*>> Parameters::tensors() const {
  std::vector<std::pair<std::string, const Mat*>> out;
  for (auto& [name, mat] : const_cast<Parameters*>(this)->tensors()) {
    out.emplace_back(name, mat);
  }
  return out;
}

bool Parameters::all_finite() const {
  for (const auto& [name, mat] : tensors()) {
    if (!mat->allFinite()) return false;
  }
  return true;
}

Parameters init_parameters(const ModelConfig& config, std::uint64_t rng_seed) {
  config.validate();
  std::mt19937_64 rng(rng_seed);
  std::uniform_real_distribution<double> emb_dist(-0.1, 0.1);
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.hidden_dim));
  std::uniform_real_distribution<double> lstm_dist(-bound, bound);

  auto fill = [&rng](Mat& m, std::uniform_real_distribution<double>& dist) {
    for (int i = 0; i < m.rows(); ++i) {
      for (int j = 0; j < m.cols(); ++j) m(i, j) = dist(rng);
    }
  };

  Parameters p = Parameters::zeros_like(config);
  fill(p.embedding, emb_dist);
  for (auto& layer : p.layers) {
    fill(layer.w_input, lstm_dist);
    fill(layer.w_recurrent, lstm_dist);
    // Biases stay zero except the forget gate, which starts open.
    const int width = static_cast<int>(layer.bias.rows()) / 4;
    layer.bias.block(width, 0, width, 1).setOnes();
  }
  if (p.decoder_weight.size() > 0) fill(p.decoder_weight, lstm_dist);
  return p;
}

HiddenState HiddenState::zeros(const ModelConfig& config, int batch) {
  HiddenState s;
  for (int l = 0; l < config.num_layers; ++l) {
    s.h.push_back(Mat::Zero(batch, config.layer_width(l)));
    s.c.push_back(Mat::Zero(batch, config.layer_width(l)));
  }
  return s;
}

DropoutMasks DropoutMasks::ones(const ModelConfig& config, int batch) {
  DropoutMasks m;
  m.embedding_scale = Vec::Ones(config.vocab_size);
  m.input = Mat::Ones(batch, config.embedding_dim);
  for (int l = 0; l < config.num_layers; ++l) {
    m.recurrent.push_back(Mat::Ones(4 * config.layer_width(l), config.layer_width(l)));
    if (l + 1 < config.num_layers) m.between.push_back(Mat::Ones(batch, config.layer_width(l)));
  }
  m.output = Mat::Ones(batch, config.output_width());
  return m;
}

DropoutMasks DropoutMasks::sample(const ModelConfig& config, int batch, std::mt19937_64& rng) {
  DropoutMasks m;
  m.embedding_scale = bernoulli_mask(config.vocab_size, 1, config.embedding_drop_p, rng).col(0);
  m.input = bernoulli_mask(batch, config.embedding_dim, config.input_drop_p, rng);
  for (int l = 0; l < config.num_layers; ++l) {
    const int width = config.layer_width(l);
    m.recurrent.push_back(bernoulli_mask(4 * width, width, config.weight_drop_p, rng));
    if (l + 1 < config.num_layers) {
      m.between.push_back(bernoulli_mask(batch, width, config.hidden_drop_p, rng));
    }
  }
  m.output = bernoulli_mask(batch, config.output_width(), config.output_drop_p, rng);
  return m;
}

void lstm_cell(const Mat& x, const Mat& h, const Mat& c, const Mat& w, const Mat& u,
               const Vec& b, Mat& h_out, Mat& c_out) {
  const Eigen::Index width4 = w.rows();
  if (width4 % 4 != 0 || u.rows() != width4 || b.size() != width4 || w.cols() != x.cols() ||
      u.cols() != h.cols() || h.rows() != x.rows() || c.rows() != x.rows() ||
      c.cols() != h.cols() || h.cols() * 4 != width4) {
    throw Error(ErrorCode::shape_mismatch, "lstm_cell operand shapes disagree");
  }
  const Eigen::Index width = width4 / 4;

  Mat a = x * w.transpose() + h * u.transpose();
  a.rowwise() += b.transpose();

  const Mat i = sigmoid(a.leftCols(width));
  const Mat f = sigmoid(a.middleCols(width, width));
  const Mat o = sigmoid(a.middleCols(2 * width, width));
  const Mat g = a.rightCols(width).array().tanh().matrix();

  c_out = (f.array() * c.array() + i.array() * g.array()).matrix();
  h_out = (o.array() * c_out.array().tanh()).matrix();
}

ForwardResult forward_sequence(const Parameters& params, const ModelConfig& config,
                               const IdMatrix& ids, const HiddenState& state,
                               const DropoutMasks& masks, RunMode mode) {
  const int batch = static_cast<int>(ids.rows());
  const int steps = static_cast<int>(ids.cols());
  if (batch <= 0 || steps <= 0) {
    throw Error(ErrorCode::shape_mismatch, "forward_sequence needs a nonempty id batch");
  }
  if (static_cast<int>(state.h.size()) != config.num_layers) {
    throw Error(ErrorCode::shape_mismatch, "hidden state layer count mismatch");
  }
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < steps; ++t) {
      if (ids(b, t) < 0 || ids(b, t) >= config.vocab_size) {
        throw Error(ErrorCode::shape_mismatch, "token id out of vocabulary range");
      }
    }
  }

  const bool train = mode == RunMode::train;
  if (train && (masks.input.rows() != batch ||
                masks.embedding_scale.size() != config.vocab_size ||
                static_cast<int>(masks.recurrent.size()) != config.num_layers)) {
    throw Error(ErrorCode::shape_mismatch, "dropout masks do not match batch/config");
  }

  ForwardResult result;
  ForwardCache& cache = result.cache;
  cache.batch = batch;
  cache.steps = steps;
  cache.ids = ids;
  cache.state0 = state;
  cache.gates.resize(static_cast<std::size_t>(config.num_layers));
  cache.cell.resize(static_cast<std::size_t>(config.num_layers));
  cache.hidden.resize(static_cast<std::size_t>(config.num_layers));
  cache.inputs.resize(static_cast<std::size_t>(config.num_layers));

  // Embedding lookup with whole-row dropout, then the variational input mask.
  std::vector<Mat> x(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    Mat e(batch, config.embedding_dim);
    for (int b = 0; b < batch; ++b) {
      const int id = ids(b, t);
      const double scale = train ? masks.embedding_scale(id) : 1.0;
      e.row(b) = params.embedding.row(id) * scale;
    }
    if (train) e.array() *= masks.input.array();
    x[static_cast<std::size_t>(t)] = std::move(e);
  }

  result.state = state;
  for (int l = 0; l < config.num_layers; ++l) {
    const auto lu = static_cast<std::size_t>(l);
    const int width = config.layer_width(l);
    const Mat u_eff =
        train ? Mat((params.layers[lu].w_recurrent.array() * masks.recurrent[lu].array()))
              : params.layers[lu].w_recurrent;
    const Mat& w = params.layers[lu].w_input;
    const auto bias_row = params.layers[lu].bias.col(0).transpose();

    Mat h = state.h[lu];
    Mat c = state.c[lu];
    for (int t = 0; t < steps; ++t) {
      const auto tu = static_cast<std::size_t>(t);
      Mat a = x[tu] * w.transpose() + h * u_eff.transpose();
      a.rowwise() += bias_row;

      Mat gate(batch, 4 * width);
      gate.leftCols(width) = sigmoid(a.leftCols(width));
      gate.middleCols(width, width) = sigmoid(a.middleCols(width, width));
      gate.middleCols(2 * width, width) = sigmoid(a.middleCols(2 * width, width));
      gate.rightCols(width) = a.rightCols(width).array().tanh().matrix();

      Mat c_next = (gate.middleCols(width, width).array() * c.array() +
                    gate.leftCols(width).array() * gate.rightCols(width).array())
                       .matrix();
      Mat h_next = (gate.middleCols(2 * width, width).array() * c_next.array().tanh()).matrix();
      if (!h_next.allFinite() || !c_next.allFinite()) {
        throw Error(ErrorCode::non_finite_activation,
                    "non-finite LSTM activation at layer " + std::to_string(l));
      }

      cache.inputs[lu].push_back(x[tu]);
      cache.gates[lu].push_back(std::move(gate));
      c = std::move(c_next);
      h = std::move(h_next);
      cache.cell[lu].push_back(c);
      cache.hidden[lu].push_back(h);

      // Feed the next layer (or the decoder) through this layer's output.
      if (l + 1 < config.num_layers) {
        x[tu] = train ? Mat((h.array() * masks.between[lu].array()).matrix()) : h;
      }
    }
    result.state.h[lu] = h;
    result.state.c[lu] = c;
  }

  const auto top = static_cast<std::size_t>(config.num_layers - 1);
  const Mat& dec_w = config.tie_weights ? params.embedding : params.decoder_weight;
  result.logits.resize(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    const auto tu = static_cast<std::size_t>(t);
    Mat y = train ? Mat((cache.hidden[top][tu].array() * masks.output.array()).matrix())
                  : cache.hidden[top][tu];
    Mat logits = y * dec_w.transpose();
    logits.rowwise() += params.decoder_bias.col(0).transpose();
    if (!logits.allFinite()) {
      throw Error(ErrorCode::non_finite_activation, "non-finite decoder logits");
    }
    cache.decoder_input.push_back(std::move(y));
    result.logits[tu] = std::move(logits);
  }
  return result;
}

Mat log_softmax_rows(const Mat& logits) {
  Mat shifted = logits;
  const Vec row_max = logits.rowwise().maxCoeff();
  shifted.colwise() -= row_max;
  const Vec log_norm = shifted.array().exp().rowwise().sum().log().matrix();
  shifted.colwise() -= log_norm;
  return shifted;
}

double sequence_loss(const std::vector<Mat>& logits, const IdMatrix& targets,
                     const ForwardCache& cache, const ModelConfig& config) {
  const int batch = cache.batch;
  const int steps = cache.steps;
  if (static_cast<int>(logits.size()) != steps || targets.rows() != batch ||
      targets.cols() != steps) {
    throw Error(ErrorCode::shape_mismatch, "loss operand shapes disagree");
  }

  double ce = 0.0;
  for (int t = 0; t < steps; ++t) {
    const Mat logp = log_softmax_rows(logits[static_cast<std::size_t>(t)]);
    for (int b = 0; b < batch; ++b) {
      ce -= logp(b, targets(b, t));
    }
  }
  ce /= static_cast<double>(batch) * steps;

  const auto& top = cache.hidden.back();
  const double width = static_cast<double>(top[0].cols());
  double ar = 0.0;
  if (config.ar_alpha > 0.0) {
    for (const Mat& h : top) ar += h.array().square().sum();
    ar *= config.ar_alpha / (static_cast<double>(batch) * steps * width);
  }
  double tar = 0.0;
  if (config.tar_beta > 0.0 && steps > 1) {
    for (int t = 1; t < steps; ++t) {
      tar += (top[static_cast<std::size_t>(t)] - top[static_cast<std::size_t>(t - 1)])
                 .array()
                 .square()
                 .sum();
    }
    tar *= config.tar_beta / (static_cast<double>(batch) * (steps - 1) * width);
  }
  return ce + ar + tar;
}

}  // namespace speechlm
