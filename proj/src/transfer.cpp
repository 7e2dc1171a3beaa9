#include "speechlm/transfer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "speechlm/errors.hpp"

namespace speechlm {

namespace {

constexpr char kMagic[4] = {'U', 'L', 'M', 'F'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const std::string& bytes, std::size_t off) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 3])) << 24;
}

nlohmann::json config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["vocab_size"] = c.vocab_size;
  j["embedding_dim"] = c.embedding_dim;
  j["hidden_dim"] = c.hidden_dim;
  j["num_layers"] = c.num_layers;
  j["weight_drop_p"] = c.weight_drop_p;
  j["embedding_drop_p"] = c.embedding_drop_p;
  j["input_drop_p"] = c.input_drop_p;
  j["hidden_drop_p"] = c.hidden_drop_p;
  j["output_drop_p"] = c.output_drop_p;
  j["ar_alpha"] = c.ar_alpha;
  j["tar_beta"] = c.tar_beta;
  j["tie_weights"] = c.tie_weights;
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.embedding_dim = j.at("embedding_dim").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.num_layers = j.at("num_layers").get<int>();
  c.weight_drop_p = j.at("weight_drop_p").get<double>();
  c.embedding_drop_p = j.at("embedding_drop_p").get<double>();
  c.input_drop_p = j.at("input_drop_p").get<double>();
  c.hidden_drop_p = j.at("hidden_drop_p").get<double>();
  c.output_drop_p = j.at("output_drop_p").get<double>();
  c.ar_alpha = j.at("ar_alpha").get<double>();
  c.tar_beta = j.at("tar_beta").get<double>();
  c.tie_weights = j.at("tie_weights").get<bool>();
  return c;
}

void append_tensor(std::string& out, const Mat& m, bool f32) {
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) {
      if (f32) {
        const float v = static_cast<float>(m(r, c));
        char buf[sizeof v];
        std::memcpy(buf, &v, sizeof v);
        out.append(buf, sizeof v);
      } else {
        const double v = m(r, c);
        char buf[sizeof v];
        std::memcpy(buf, &v, sizeof v);
        out.append(buf, sizeof v);
      }
    }
  }
}

void read_tensor(const std::string& bytes, std::size_t& off, Mat& m, bool f32) {
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) {
      if (f32) {
        float v;
        std::memcpy(&v, bytes.data() + off, sizeof v);
        off += sizeof v;
        m(r, c) = static_cast<double>(v);
      } else {
        double v;
        std::memcpy(&v, bytes.data() + off, sizeof v);
        off += sizeof v;
        m(r, c) = v;
      }
    }
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::io_failure, "cannot open " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

}  // namespace

std::string vocab_fingerprint(const Vocabulary& vocab) {
  return fnv1a64_hex(vocab.serialize());
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  ckpt.config.validate();
  if (ckpt.dtype != "f64" && ckpt.dtype != "f32") {
    throw Error(ErrorCode::invalid_config, "checkpoint dtype must be f64 or f32");
  }
  if (!ckpt.params.all_finite()) {
    throw Error(ErrorCode::non_finite_tensor, "refusing to save non-finite weights");
  }
  const bool f32 = ckpt.dtype == "f32";

  nlohmann::json meta;
  meta["config"] = config_to_json(ckpt.config);
  meta["dtype"] = ckpt.dtype;
  meta["vocab_hash"] = ckpt.vocab_hash;
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& [name, tensor] : ckpt.params.tensors()) {
    manifest.push_back({{"name", name}, {"rows", tensor->rows()}, {"cols", tensor->cols()}});
  }
  meta["tensors"] = manifest;
  const std::string meta_bytes = meta.dump();

  std::string out;
  out.append(kMagic, sizeof kMagic);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(meta_bytes.size()));
  out += meta_bytes;
  for (const auto& [name, tensor] : ckpt.params.tensors()) {
    append_tensor(out, *tensor, f32);
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) {
    throw Error(ErrorCode::io_failure, "cannot open " + path.string() + " for writing");
  }
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) {
    throw Error(ErrorCode::io_failure, "failed writing " + path.string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < sizeof kMagic + 8) {
    throw Error(ErrorCode::bad_magic, path.string() + " is too short to be a checkpoint");
  }
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw Error(ErrorCode::bad_magic, path.string() + " has the wrong magic bytes");
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kFormatVersion) {
    throw Error(ErrorCode::unsupported_version,
                "checkpoint format version " + std::to_string(version) + " is not supported");
  }
  const std::uint32_t meta_len = get_u32(bytes, 8);
  std::size_t off = 12;
  if (bytes.size() < off + meta_len) {
    throw Error(ErrorCode::corrupt_table, "metadata block truncated");
  }

  Checkpoint ckpt;
  nlohmann::json manifest;
  try {
    const nlohmann::json meta = nlohmann::json::parse(bytes.substr(off, meta_len));
    ckpt.config = config_from_json(meta.at("config"));
    ckpt.dtype = meta.at("dtype").get<std::string>();
    ckpt.vocab_hash = meta.at("vocab_hash").get<std::string>();
    manifest = meta.at("tensors");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::corrupt_table, std::string("bad checkpoint metadata: ") + e.what());
  }
  if (ckpt.dtype != "f64" && ckpt.dtype != "f32") {
    throw Error(ErrorCode::corrupt_table, "unknown dtype " + ckpt.dtype);
  }
  try {
    ckpt.config.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::corrupt_table, std::string("bad checkpoint config: ") + e.what());
  }
  off += meta_len;

  ckpt.params = Parameters::zeros_like(ckpt.config);
  auto tensors = ckpt.params.tensors();
  if (!manifest.is_array() || manifest.size() != tensors.size()) {
    throw Error(ErrorCode::corrupt_table, "tensor manifest does not match the config");
  }
  const std::size_t elem = ckpt.dtype == "f32" ? 4 : 8;
  std::size_t payload = 0;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& entry = manifest[i];
    try {
      if (entry.at("name").get<std::string>() != tensors[i].first ||
          entry.at("rows").get<long>() != tensors[i].second->rows() ||
          entry.at("cols").get<long>() != tensors[i].second->cols()) {
        throw Error(ErrorCode::corrupt_table,
                    "tensor manifest entry " + std::to_string(i) + " does not match the config");
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::corrupt_table, std::string("bad tensor manifest: ") + e.what());
    }
    payload += static_cast<std::size_t>(tensors[i].second->size()) * elem;
  }
  if (bytes.size() - off != payload) {
    throw Error(ErrorCode::corrupt_table,
                "payload holds " + std::to_string(bytes.size() - off) + " bytes, expected " +
                    std::to_string(payload));
  }

  for (auto& [name, tensor] : tensors) {
    read_tensor(bytes, off, *tensor, ckpt.dtype == "f32");
    if (!tensor->allFinite()) {
      throw Error(ErrorCode::non_finite_tensor, "tensor " + name + " holds non-finite values");
    }
  }
  return ckpt;
}

Checkpoint remap_vocabulary(const Checkpoint& ckpt, const Vocabulary& old_vocab,
                            const Vocabulary& new_vocab) {
  if (vocab_fingerprint(old_vocab) != ckpt.vocab_hash) {
    throw Error(ErrorCode::vocab_mismatch,
                "old vocabulary does not match the checkpoint fingerprint");
  }
  if (static_cast<int>(old_vocab.size()) != ckpt.config.vocab_size) {
    throw Error(ErrorCode::vocab_mismatch, "old vocabulary size disagrees with the config");
  }

  Checkpoint out;
  out.config = ckpt.config;
  out.config.vocab_size = static_cast<int>(new_vocab.size());
  out.dtype = ckpt.dtype;
  out.vocab_hash = vocab_fingerprint(new_vocab);
  out.params = Parameters::zeros_like(out.config);
  out.params.layers = ckpt.params.layers;

  const Mat emb_mean = ckpt.params.embedding.colwise().mean();
  const double bias_mean = ckpt.params.decoder_bias.col(0).mean();
  Mat dec_mean;
  if (!ckpt.config.tie_weights) {
    dec_mean = ckpt.params.decoder_weight.colwise().mean();
  }

  for (int id = 0; id < out.config.vocab_size; ++id) {
    const int old_id = old_vocab.find(new_vocab.token(id));
    if (old_id >= 0) {
      out.params.embedding.row(id) = ckpt.params.embedding.row(old_id);
      out.params.decoder_bias(id, 0) = ckpt.params.decoder_bias(old_id, 0);
      if (!ckpt.config.tie_weights) {
        out.params.decoder_weight.row(id) = ckpt.params.decoder_weight.row(old_id);
      }
    } else {
      out.params.embedding.row(id) = emb_mean;
      out.params.decoder_bias(id, 0) = bias_mean;
      if (!ckpt.config.tie_weights) {
        out.params.decoder_weight.row(id) = dec_mean;
      }
    }
  }
  return out;
}

void split_paragraphs(const std::vector<std::vector<std::string>>& paragraphs, int val_every,
                      std::vector<std::vector<std::string>>& train_out,
                      std::vector<std::vector<std::string>>& val_out) {
  if (val_every < 0) {
    throw Error(ErrorCode::invalid_config, "val_every must be nonnegative");
  }
  train_out.clear();
  val_out.clear();
  for (std::size_t i = 0; i < paragraphs.size(); ++i) {
    if (val_every > 0 && (i + 1) % static_cast<std::size_t>(val_every) == 0) {
      val_out.push_back(paragraphs[i]);
    } else {
      train_out.push_back(paragraphs[i]);
    }
  }
}

namespace {

PipelineResult run_pipeline(Parameters params, const ModelConfig& config,
                            const std::vector<std::vector<std::string>>& paragraphs,
                            const Vocabulary& vocab, const PipelineOptions& opts,
                            bool gradual_unfreeze) {
  config.validate();
  PipelineResult result;
  result.checkpoint.config = config;
  result.checkpoint.vocab_hash = vocab_fingerprint(vocab);

  if (opts.epochs < 0) {
    throw Error(ErrorCode::invalid_config, "epochs must be nonnegative");
  }
  if (opts.epochs == 0) {
    result.checkpoint.params = std::move(params);
    return result;
  }

  std::vector<std::vector<std::string>> train_paras;
  std::vector<std::vector<std::string>> val_paras;
  split_paragraphs(paragraphs, opts.val_every, train_paras, val_paras);
  const TokenStream train_stream = numericalize(train_paras, vocab);
  const TokenStream val_stream = numericalize(val_paras, vocab);

  const long windows = windows_per_epoch(train_stream, opts.train);
  if (windows < 1) {
    throw Error(ErrorCode::stream_too_short, "training split cannot fill one window");
  }

  ScheduleConfig sched =
      ScheduleConfig::stlr(opts.lr_top, static_cast<long>(opts.epochs) * windows, opts.cut_frac,
                           opts.ratio);
  sched.discriminative_factor = opts.discriminative_factor;
  if (gradual_unfreeze) {
    sched.unfreeze_plan = gradual_unfreeze_plan(num_layer_groups(config));
  }

  OptimState optim = OptimState::create(config, opts.clip_threshold, opts.momentum);
  std::mt19937_64 rng(opts.seed);

  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    EpochRecord rec = train_epoch(params, config, optim, train_stream, opts.train, sched, epoch,
                                  rng);
    if (!val_stream.ids.empty()) {
      rec.val_ppl = perplexity(params, config, val_stream, opts.train.bptt_len);
      rec.val_loss = std::log(rec.val_ppl);
    }
    result.report.epochs.push_back(std::move(rec));
  }

  result.checkpoint.params = std::move(params);
  return result;
}

}  // namespace

PipelineResult pretrain_pipeline(const std::vector<std::vector<std::string>>& paragraphs,
                                 const Vocabulary& vocab, const ModelConfig& config,
                                 const PipelineOptions& opts) {
  ModelConfig cfg = config;
  cfg.vocab_size = static_cast<int>(vocab.size());
  Parameters params = init_parameters(cfg, opts.seed);
  return run_pipeline(std::move(params), cfg, paragraphs, vocab, opts, false);
}

PipelineResult finetune_pipeline(const Checkpoint& base, const Vocabulary& base_vocab,
                                 const std::vector<std::vector<std::string>>& paragraphs,
                                 const Vocabulary& vocab, const PipelineOptions& opts) {
  Checkpoint remapped = remap_vocabulary(base, base_vocab, vocab);
  return run_pipeline(std::move(remapped.params), remapped.config, paragraphs, vocab, opts,
                      opts.gradual_unfreeze);
}

}  // namespace speechlm
