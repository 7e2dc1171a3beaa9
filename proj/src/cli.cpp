#include "speechlm/cli.hpp"

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "speechlm/corpus.hpp"
#include "speechlm/errors.hpp"
#include "speechlm/generation.hpp"
#include "speechlm/model.hpp"
#include "speechlm/training.hpp"
#include "speechlm/transfer.hpp"

namespace speechlm {

namespace {

std::vector<std::vector<std::string>> load_paragraph_tokens(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::io_failure, "cannot open " + path.string());
  }
  std::vector<std::vector<std::string>> paragraphs;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> tokens = tokenize(line);
    if (!tokens.empty()) paragraphs.push_back(std::move(tokens));
  }
  if (paragraphs.empty()) {
    throw Error(ErrorCode::empty_stream, path.string() + " holds no paragraphs");
  }
  return paragraphs;
}

Vocabulary load_vocab_checked(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Vocabulary vocab = Vocabulary::load(path);
  if (vocab_fingerprint(vocab) != ckpt.vocab_hash) {
    throw Error(ErrorCode::vocab_mismatch,
                path.string() + " does not match the checkpoint's vocabulary fingerprint");
  }
  if (static_cast<int>(vocab.size()) != ckpt.config.vocab_size) {
    throw Error(ErrorCode::vocab_mismatch,
                path.string() + " size disagrees with the checkpoint config");
  }
  return vocab;
}

// Common knobs shared by pretrain and finetune.
struct TrainFlags {
  std::string profile = "desk";
  int emb_dim = 0;
  int hidden_dim = 0;
  int num_layers = 0;
  double weight_drop = -1.0;
  double emb_drop = -1.0;
  double input_drop = -1.0;
  double hidden_drop = -1.0;
  double output_drop = -1.0;
  double ar_alpha = -1.0;
  double tar_beta = -1.0;

  int epochs = 1;
  int batch = 16;
  int bptt = 70;
  double lr = 0.004;
  double cut_frac = 0.1;
  double ratio = 32.0;
  double disc_factor = 2.6;
  double clip = 0.25;
  double momentum = 0.9;
  std::uint64_t seed = 42;
  int val_every = 10;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool with_profile) {
  if (with_profile) {
    cmd->add_option("--profile", f.profile, "Model size profile")
        ->check(CLI::IsMember({"desk", "reference"}))
        ->capture_default_str();
    cmd->add_option("--emb-dim", f.emb_dim, "Embedding width override");
    cmd->add_option("--hidden-dim", f.hidden_dim, "Hidden width override");
    cmd->add_option("--num-layers", f.num_layers, "LSTM layer count override");
  }
  cmd->add_option("--weight-drop", f.weight_drop, "Recurrent weight drop probability");
  cmd->add_option("--emb-drop", f.emb_drop, "Embedding row dropout probability");
  cmd->add_option("--input-drop", f.input_drop, "Input dropout probability");
  cmd->add_option("--hidden-drop", f.hidden_drop, "Between-layer dropout probability");
  cmd->add_option("--output-drop", f.output_drop, "Output dropout probability");
  cmd->add_option("--ar-alpha", f.ar_alpha, "Activation regularization weight");
  cmd->add_option("--tar-beta", f.tar_beta, "Temporal activation regularization weight");

  cmd->add_option("--epochs", f.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--batch", f.batch, "Batch size")->capture_default_str();
  cmd->add_option("--bptt", f.bptt, "BPTT window length")->capture_default_str();
  cmd->add_option("--lr", f.lr, "Peak learning rate")->capture_default_str();
  cmd->add_option("--cut-frac", f.cut_frac, "Warm-up fraction")->capture_default_str();
  cmd->add_option("--ratio", f.ratio, "Peak to floor learning-rate ratio")
      ->capture_default_str();
  cmd->add_option("--disc-factor", f.disc_factor, "Discriminative per-group factor")
      ->capture_default_str();
  cmd->add_option("--clip", f.clip, "Gradient norm clip")->capture_default_str();
  cmd->add_option("--momentum", f.momentum, "SGD momentum")->capture_default_str();
  cmd->add_option("--seed", f.seed, "Run seed")->capture_default_str();
  cmd->add_option("--val-every", f.val_every, "Hold out every n-th paragraph (0 = none)")
      ->capture_default_str();
}

ModelConfig model_config_from_flags(const CLI::App* cmd, const TrainFlags& f) {
  ModelConfig cfg = f.profile == "reference" ? ModelConfig::reference(4) : ModelConfig::desk(4);
  if (cmd->count("--emb-dim")) cfg.embedding_dim = f.emb_dim;
  if (cmd->count("--hidden-dim")) cfg.hidden_dim = f.hidden_dim;
  if (cmd->count("--num-layers")) cfg.num_layers = f.num_layers;
  if (cmd->count("--weight-drop")) cfg.weight_drop_p = f.weight_drop;
  if (cmd->count("--emb-drop")) cfg.embedding_drop_p = f.emb_drop;
  if (cmd->count("--input-drop")) cfg.input_drop_p = f.input_drop;
  if (cmd->count("--hidden-drop")) cfg.hidden_drop_p = f.hidden_drop;
  if (cmd->count("--output-drop")) cfg.output_drop_p = f.output_drop;
  if (cmd->count("--ar-alpha")) cfg.ar_alpha = f.ar_alpha;
  if (cmd->count("--tar-beta")) cfg.tar_beta = f.tar_beta;
  return cfg;
}

void apply_dropout_overrides(const CLI::App* cmd, const TrainFlags& f, ModelConfig& cfg) {
  if (cmd->count("--weight-drop")) cfg.weight_drop_p = f.weight_drop;
  if (cmd->count("--emb-drop")) cfg.embedding_drop_p = f.emb_drop;
  if (cmd->count("--input-drop")) cfg.input_drop_p = f.input_drop;
  if (cmd->count("--hidden-drop")) cfg.hidden_drop_p = f.hidden_drop;
  if (cmd->count("--output-drop")) cfg.output_drop_p = f.output_drop;
  if (cmd->count("--ar-alpha")) cfg.ar_alpha = f.ar_alpha;
  if (cmd->count("--tar-beta")) cfg.tar_beta = f.tar_beta;
}

PipelineOptions pipeline_options_from_flags(const TrainFlags& f) {
  PipelineOptions opts;
  opts.train.batch_size = f.batch;
  opts.train.bptt_len = f.bptt;
  opts.epochs = f.epochs;
  opts.lr_top = f.lr;
  opts.cut_frac = f.cut_frac;
  opts.ratio = f.ratio;
  opts.discriminative_factor = f.disc_factor;
  opts.clip_threshold = f.clip;
  opts.momentum = f.momentum;
  opts.seed = f.seed;
  opts.val_every = f.val_every;
  return opts;
}

void finish_training_command(const CLI::App& app, const PipelineOptions& opts,
                             PipelineResult& result, const std::string& ckpt_out,
                             const std::string& report_out, std::ostream& out) {
  save_checkpoint(ckpt_out, result.checkpoint);
  result.report.resolved_config = app.config_to_str(true, false);
  if (!report_out.empty()) result.report.save(report_out);

  nlohmann::json summary;
  summary["checkpoint"] = ckpt_out;
  summary["epochs"] = opts.epochs;
  summary["vocab_hash"] = result.checkpoint.vocab_hash;
  if (!result.report.epochs.empty()) {
    summary["final_train_loss"] = result.report.epochs.back().train_loss;
    if (opts.val_every > 0) summary["final_val_ppl"] = result.report.epochs.back().val_ppl;
  }
  out << summary.dump() << "\n";
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Word-level LSTM language model toolkit for speech corpora"};
  app.name("speechlm");
  app.require_subcommand(1);
  app.set_config("--config", "", "Flat key = value config file; flags override it");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Scan a transcript tree into a paragraph file");
  std::string ingest_dir;
  std::string ingest_out;
  ingest->add_option("dir", ingest_dir, "Root directory of COUNTRY_SESSION_YEAR.txt files")
      ->required();
  ingest->add_option("--out", ingest_out, "Paragraph file to write, one per line")->required();

  // vocab
  auto* vocab_cmd = app.add_subcommand("vocab", "Build a vocabulary from a paragraph file");
  std::string vocab_in;
  std::string vocab_out;
  std::size_t vocab_max = 60000;
  std::size_t vocab_min_freq = 2;
  vocab_cmd->add_option("paragraphs", vocab_in, "Paragraph file")->required();
  vocab_cmd->add_option("--out", vocab_out, "Vocabulary file to write")->required();
  vocab_cmd->add_option("--max-size", vocab_max, "Vocabulary size cap")->capture_default_str();
  vocab_cmd->add_option("--min-freq", vocab_min_freq, "Minimum token frequency")
      ->capture_default_str();

  // pretrain
  auto* pretrain = app.add_subcommand("pretrain", "Train from scratch on a generic corpus");
  std::string pre_corpus;
  std::string pre_vocab;
  std::string pre_out;
  std::string pre_report;
  TrainFlags pre_flags;
  pretrain->add_option("corpus", pre_corpus, "Paragraph file")->required();
  pretrain->add_option("--vocab", pre_vocab, "Vocabulary file")->required();
  pretrain->add_option("--out", pre_out, "Checkpoint to write")->required();
  pretrain->add_option("--report", pre_report, "Training report (JSON lines)");
  add_train_flags(pretrain, pre_flags, true);

  // finetune
  auto* finetune = app.add_subcommand("finetune", "Fine-tune a checkpoint on a target corpus");
  std::string ft_corpus;
  std::string ft_from;
  std::string ft_base_vocab;
  std::string ft_vocab;
  std::string ft_out;
  std::string ft_report;
  bool ft_no_unfreeze = false;
  TrainFlags ft_flags;
  finetune->add_option("corpus", ft_corpus, "Paragraph file")->required();
  finetune->add_option("--from", ft_from, "Base checkpoint")->required();
  finetune->add_option("--base-vocab", ft_base_vocab, "Vocabulary the base was trained with")
      ->required();
  finetune->add_option("--vocab", ft_vocab, "Target vocabulary file")->required();
  finetune->add_option("--out", ft_out, "Checkpoint to write")->required();
  finetune->add_option("--report", ft_report, "Training report (JSON lines)");
  finetune->add_flag("--no-gradual-unfreeze", ft_no_unfreeze,
                     "Train all layer groups from the first epoch");
  add_train_flags(finetune, ft_flags, false);

  // generate
  auto* gen = app.add_subcommand("generate", "Sample seeded text from a checkpoint");
  std::string gen_ckpt;
  std::string gen_vocab;
  GenerationConfig gen_cfg;
  int gen_samples = 1;
  gen->add_option("--ckpt", gen_ckpt, "Checkpoint")->required();
  gen->add_option("--vocab", gen_vocab, "Vocabulary file")->required();
  gen->add_option("--seed", gen_cfg.seed_text, "Seed text")->required();
  gen->add_option("--temperature", gen_cfg.temperature, "Sampling temperature")
      ->capture_default_str();
  gen->add_option("--top-k", gen_cfg.top_k, "Top-k cutoff (0 = whole vocabulary)")
      ->capture_default_str();
  gen->add_option("--samples", gen_samples, "Number of samples")->capture_default_str();
  gen->add_option("--rng-seed", gen_cfg.rng_seed, "Base sampling seed")->capture_default_str();
  gen->add_option("--min-words", gen_cfg.min_words, "Word minimum")->capture_default_str();
  gen->add_option("--max-words", gen_cfg.max_words, "Word maximum")->capture_default_str();
  gen->add_option("--min-sentences", gen_cfg.min_sentences, "Sentence minimum")
      ->capture_default_str();
  gen->add_option("--max-sentences", gen_cfg.max_sentences, "Sentence maximum")
      ->capture_default_str();
  gen->add_option("--hard-cap", gen_cfg.max_tokens_hard_cap, "Token hard cap")
      ->capture_default_str();
  gen->add_flag("--allow-eos", gen_cfg.allow_eos, "Let <eos> end a sample early");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Perplexity of a checkpoint on a paragraph file");
  std::string eval_ckpt;
  std::string eval_vocab;
  std::string eval_split;
  int eval_bptt = 70;
  eval_cmd->add_option("--ckpt", eval_ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--vocab", eval_vocab, "Vocabulary file")->required();
  eval_cmd->add_option("--split", eval_split, "Paragraph file to score")->required();
  eval_cmd->add_option("--bptt", eval_bptt, "Evaluation window length")->capture_default_str();

  // gradcheck
  auto* gradcheck_cmd =
      app.add_subcommand("gradcheck", "Finite-difference check of the BPTT gradients");
  std::uint64_t gc_seed = 1;
  gradcheck_cmd->add_option("--seed", gc_seed, "Seed for weights, masks and data")
      ->capture_default_str();

  // rate
  auto* rate_cmd = app.add_subcommand("rate", "Acceptance rate from a human label file");
  std::string rate_labels;
  rate_cmd->add_option("--labels", rate_labels, "Lines of <sample-id> <0|1>")->required();

  try {
    std::vector<const char*> argv;
    argv.push_back("speechlm");
    for (const std::string& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    err << app.help();
    return 1;
  }

  if (*ingest) {
    const Corpus corpus = ingest_dataset(ingest_dir);
    for (const std::string& w : corpus.warnings) err << "warning: " << w << "\n";

    std::ofstream file(ingest_out, std::ios::binary | std::ios::trunc);
    if (!file) {
      throw Error(ErrorCode::io_failure, "cannot open " + ingest_out + " for writing");
    }
    std::size_t paragraphs = 0;
    for (const RawSpeech& speech : corpus.speeches) {
      for (const std::string& para : split_and_clean(speech.text)) {
        file << para << "\n";
        ++paragraphs;
      }
    }
    if (!file.flush()) {
      throw Error(ErrorCode::io_failure, "failed writing " + ingest_out);
    }

    nlohmann::json summary;
    summary["speeches"] = corpus.speeches.size();
    summary["paragraphs"] = paragraphs;
    summary["warnings"] = corpus.warnings.size();
    out << summary.dump() << "\n";
    return 0;
  }

  if (*vocab_cmd) {
    const auto paragraphs = load_paragraph_tokens(vocab_in);
    const Vocabulary vocab = Vocabulary::build(paragraphs, vocab_max, vocab_min_freq);
    vocab.save(vocab_out);
    nlohmann::json summary;
    summary["size"] = vocab.size();
    summary["hash"] = vocab_fingerprint(vocab);
    out << summary.dump() << "\n";
    return 0;
  }

  if (*pretrain) {
    const auto paragraphs = load_paragraph_tokens(pre_corpus);
    const Vocabulary vocab = Vocabulary::load(pre_vocab);
    const ModelConfig cfg = model_config_from_flags(pretrain, pre_flags);
    const PipelineOptions opts = pipeline_options_from_flags(pre_flags);
    PipelineResult result = pretrain_pipeline(paragraphs, vocab, cfg, opts);
    finish_training_command(app, opts, result, pre_out, pre_report, out);
    return 0;
  }

  if (*finetune) {
    const auto paragraphs = load_paragraph_tokens(ft_corpus);
    const Checkpoint base = load_checkpoint(ft_from);
    const Vocabulary base_vocab = load_vocab_checked(ft_base_vocab, base);
    const Vocabulary vocab = Vocabulary::load(ft_vocab);
    ModelConfig cfg = base.config;
    apply_dropout_overrides(finetune, ft_flags, cfg);
    Checkpoint adjusted = base;
    adjusted.config = cfg;

    PipelineOptions opts = pipeline_options_from_flags(ft_flags);
    opts.gradual_unfreeze = !ft_no_unfreeze;
    PipelineResult result = finetune_pipeline(adjusted, base_vocab, paragraphs, vocab, opts);
    finish_training_command(app, opts, result, ft_out, ft_report, out);
    return 0;
  }

  if (*gen) {
    const Checkpoint ckpt = load_checkpoint(gen_ckpt);
    const Vocabulary vocab = load_vocab_checked(gen_vocab, ckpt);
    if (gen_samples < 1) {
      throw Error(ErrorCode::invalid_config, "--samples must be positive");
    }
    for (int i = 0; i < gen_samples; ++i) {
      GenerationConfig cfg = gen_cfg;
      cfg.rng_seed = gen_cfg.rng_seed + static_cast<std::uint64_t>(i);
      const GeneratedSample sample = generate(ckpt.params, ckpt.config, vocab, cfg);
      nlohmann::json record;
      record["seed"] = cfg.seed_text;
      record["text"] = sample.text;
      record["word_count"] = sample.word_count;
      record["sentence_count"] = sample.sentence_count;
      record["stop_reason"] = stop_reason_name(sample.stop_reason);
      record["rng_seed"] = cfg.rng_seed;
      out << record.dump() << "\n";
    }
    return 0;
  }

  if (*eval_cmd) {
    const Checkpoint ckpt = load_checkpoint(eval_ckpt);
    const Vocabulary vocab = load_vocab_checked(eval_vocab, ckpt);
    const auto paragraphs = load_paragraph_tokens(eval_split);
    const TokenStream stream = numericalize(paragraphs, vocab);
    const double ppl = perplexity(ckpt.params, ckpt.config, stream, eval_bptt);
    nlohmann::json summary;
    summary["perplexity"] = ppl;
    summary["tokens"] = stream.ids.size();
    out << summary.dump() << "\n";
    return 0;
  }

  if (*gradcheck_cmd) {
    ModelConfig cfg;
    cfg.vocab_size = 20;
    cfg.embedding_dim = 8;
    cfg.hidden_dim = 8;
    cfg.num_layers = 2;
    const GradCheckReport report = gradient_check(cfg, gc_seed);
    nlohmann::json summary;
    summary["max_rel_error"] = report.max_rel_error;
    summary["worst_tensor"] = report.worst_tensor;
    summary["pass"] = report.pass;
    out << summary.dump() << "\n";
    return report.pass ? 0 : 3;
  }

  if (*rate_cmd) {
    std::ifstream in(rate_labels, std::ios::binary);
    if (!in) {
      throw Error(ErrorCode::io_failure, "cannot open " + rate_labels);
    }
    long total = 0;
    long accepted = 0;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      std::istringstream fields(line);
      std::string id;
      int label = -1;
      fields >> id >> label;
      if (fields.fail() || (label != 0 && label != 1)) {
        throw Error(ErrorCode::corrupt_table,
                    rate_labels + ":" + std::to_string(line_no) + " is not <sample-id> <0|1>");
      }
      ++total;
      accepted += label;
    }
    if (total == 0) {
      throw Error(ErrorCode::empty_stream, rate_labels + " holds no labels");
    }
    out << std::fixed << std::setprecision(2)
        << static_cast<double>(accepted) / static_cast<double>(total) << "\n";
    return 0;
  }

  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(args, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace speechlm
