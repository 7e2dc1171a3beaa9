#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace speechlm {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using IdMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;  // batch x T

enum class RunMode { train, eval };

struct ModelConfig {
  int vocab_size = 0;
  int embedding_dim = 64;
  int hidden_dim = 128;
  int num_layers = 2;
  double weight_drop_p = 0.2;
  double embedding_drop_p = 0.05;
  double input_drop_p = 0.25;
  double hidden_drop_p = 0.15;
  double output_drop_p = 0.2;
  double ar_alpha = 2.0;
  double tar_beta = 1.0;
  bool tie_weights = true;

  // Output width of LSTM layer l; the top layer is embedding-sized when
  // the decoder is tied.
  int layer_width(int layer) const {
    return (tie_weights && layer == num_layers - 1) ? embedding_dim : hidden_dim;
  }
  int layer_input_width(int layer) const {
    return layer == 0 ? embedding_dim : layer_width(layer - 1);
  }
  int output_width() const { return layer_width(num_layers - 1); }

  void validate() const;  // throws Error(invalid_config)

  static ModelConfig desk(int vocab_size);
  static ModelConfig reference(int vocab_size);
};

// Gate packing order inside the 4H-row weight/bias blocks: input, forget,
// output, candidate.
struct LstmLayerParams {
  Mat w_input;      // 4H x in
  Mat w_recurrent;  // 4H x H
  Mat bias;         // 4H x 1
};

struct Parameters {
  Mat embedding;       // vocab x emb
  std::vector<LstmLayerParams> layers;
  Mat decoder_weight;  // vocab x output_width; empty when tied
  Mat decoder_bias;    // vocab x 1

  static Parameters zeros_like(const ModelConfig& config);

  // Named tensors in a fixed order; the order defines checkpoint layout
  // and lets optimizer state zip against parameters.
  std::vector<std::pair<std::string, Mat*>> tensors();
  std::vector<std::pair<std::string, const Mat*>> tensors() const;

  bool all_finite() const;
};

Parameters init_parameters(const ModelConfig& config, std::uint64_t rng_seed);

struct HiddenState {
  std::vector<Mat> h;  // per layer: batch x width
  std::vector<Mat> c;

  static HiddenState zeros(const ModelConfig& config, int batch);
};

// Variational dropout masks, fixed for the duration of one sequence.
// Entries are 0 or 1/(1-p); eval mode and p=0 give all-ones.
struct DropoutMasks {
  Vec embedding_scale;         // vocab (whole-row embedding dropout)
  Mat input;                   // batch x emb
  std::vector<Mat> recurrent;  // per layer: 4H x H, applied to w_recurrent
  std::vector<Mat> between;    // per layer < L-1: batch x width (fed to the next layer)
  Mat output;                  // batch x output_width

  static DropoutMasks ones(const ModelConfig& config, int batch);
  static DropoutMasks sample(const ModelConfig& config, int batch, std::mt19937_64& rng);
};

// Single LSTM cell step over a batch. w: 4H x in, u: 4H x H, b: 4H.
// Gates: i = sigma(a_i), f = sigma(a_f), o = sigma(a_o), g = tanh(a_g);
// c' = f*c + i*g; h' = o*tanh(c').
void lstm_cell(const Mat& x, const Mat& h, const Mat& c, const Mat& w, const Mat& u,
               const Vec& b, Mat& h_out, Mat& c_out);

// Everything the backward pass and the regularization terms need.
struct ForwardCache {
  int batch = 0;
  int steps = 0;
  IdMatrix ids;
  // [layer][t]: batch x 4H gate activations (i,f,o,g after nonlinearity).
  std::vector<std::vector<Mat>> gates;
  // [layer][t]: batch x width.
  std::vector<std::vector<Mat>> cell;
  std::vector<std::vector<Mat>> hidden;
  // [layer][t]: layer input after dropout, batch x in.
  std::vector<std::vector<Mat>> inputs;
  // [t]: final-layer output after output dropout, batch x output_width.
  std::vector<Mat> decoder_input;
  // State the window started from.
  HiddenState state0;
};

struct ForwardResult {
  std::vector<Mat> logits;  // [t]: batch x vocab
  HiddenState state;
  ForwardCache cache;
};

// ids must all be < vocab_size. Train mode applies the given masks;
// eval mode ignores them and is deterministic.
ForwardResult forward_sequence(const Parameters& params, const ModelConfig& config,
                               const IdMatrix& ids, const HiddenState& state,
                               const DropoutMasks& masks, RunMode mode);

// Mean token cross-entropy (natural log) plus activation regularization
// (ar_alpha * mean squared final-layer activation) and temporal activation
// regularization (tar_beta * mean squared step-to-step difference).
double sequence_loss(const std::vector<Mat>& logits, const IdMatrix& targets,
                     const ForwardCache& cache, const ModelConfig& config);

// Row-wise stable log-softmax helper shared with the backward pass.
Mat log_softmax_rows(const Mat& logits);

}  // namespace speechlm
