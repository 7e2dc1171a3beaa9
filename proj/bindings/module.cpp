// Python bindings for the speechlm core. The surface mirrors the CLI:
// tokenize/vocab/numericalize, the two training pipelines, checkpoint
// I/O with vocabulary remapping, generation, and the numeric helpers.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "speechlm/corpus.hpp"
#include "speechlm/errors.hpp"
#include "speechlm/generation.hpp"
#include "speechlm/model.hpp"
#include "speechlm/training.hpp"
#include "speechlm/transfer.hpp"

namespace py = pybind11;
using namespace speechlm;

namespace {

// Tokenized paragraphs in, perplexity out. Saves Python callers from
// touching TokenStream for the common evaluation path.
double eval_perplexity(const Checkpoint& ckpt, const Vocabulary& vocab,
                       const std::vector<std::vector<std::string>>& paragraphs, int bptt_len) {
  if (vocab_fingerprint(vocab) != ckpt.vocab_hash) {
    throw Error(ErrorCode::vocab_mismatch,
                "vocabulary fingerprint does not match the checkpoint");
  }
  TokenStream stream = numericalize(paragraphs, vocab);
  return perplexity(ckpt.params, ckpt.config, stream, bptt_len);
}

GeneratedSample generate_from(const Checkpoint& ckpt, const Vocabulary& vocab,
                              const GenerationConfig& config) {
  if (vocab_fingerprint(vocab) != ckpt.vocab_hash) {
    throw Error(ErrorCode::vocab_mismatch,
                "vocabulary fingerprint does not match the checkpoint");
  }
  return generate(ckpt.params, ckpt.config, vocab, config);
}

py::dict tensor_dict(const Checkpoint& ckpt) {
  py::dict out;
  for (const auto& [name, mat] : ckpt.params.tensors()) {
    out[py::str(name)] = *mat;  // copies into a numpy array
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Word-level LSTM language modeling: corpus tools, training, "
            "transfer, and constrained generation.";

  static py::exception<Error> error_type(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      std::string msg = std::string(error_code_name(e.code())) + ": " + e.what();
      py::set_error(error_type, msg.c_str());
    }
  });

  // ---- corpus ----

  m.def("tokenize", [](std::string_view text) { return tokenize(text); }, py::arg("text"),
        "Rule-based word tokenizer (punctuation detached, 's split, "
        "intra-word hyphens split).");
  m.def("split_and_clean", [](std::string_view text) { return split_and_clean(text); },
        py::arg("text"),
        "Split a transcript into cleaned paragraphs (enumeration markers "
        "stripped, whitespace collapsed).");
  m.def("detokenize", &detokenize, py::arg("tokens"),
        "Join tokens back into display text with punctuation attached and "
        "sentence-initial capitalization.");

  py::class_<RawSpeech>(m, "RawSpeech")
      .def_readonly("country", &RawSpeech::country)
      .def_readonly("session", &RawSpeech::session)
      .def_readonly("year", &RawSpeech::year)
      .def_readonly("text", &RawSpeech::text);

  py::class_<Corpus>(m, "Corpus")
      .def_readonly("speeches", &Corpus::speeches)
      .def_readonly("warnings", &Corpus::warnings);

  m.def("ingest_dataset", &ingest_dataset, py::arg("root"),
        "Recursively scan root for COUNTRY_SESSION_YEAR.txt transcripts.");

  py::class_<Vocabulary>(m, "Vocabulary")
      .def(py::init<>())
      .def_static("build", &Vocabulary::build, py::arg("paragraph_tokens"),
                  py::arg("max_size"), py::arg("min_freq"),
                  "Frequency-ranked vocabulary over tokenized paragraphs; "
                  "ids 0-3 are <unk>/<pad>/<bos>/<eos>.")
      .def("__len__", &Vocabulary::size)
      .def("id_or_unk", [](const Vocabulary& v, std::string_view t) { return v.id_or_unk(t); },
           py::arg("token"))
      .def("find", [](const Vocabulary& v, std::string_view t) { return v.find(t); },
           py::arg("token"))
      .def("token", &Vocabulary::token, py::arg("id"))
      .def("tokens", &Vocabulary::tokens)
      .def("serialize", &Vocabulary::serialize)
      .def("save", &Vocabulary::save, py::arg("path"))
      .def_static("load", &Vocabulary::load, py::arg("path"))
      .def("__eq__",
           [](const Vocabulary& a, const Vocabulary& b) { return a == b; },
           py::is_operator());

  m.def("vocab_fingerprint", &vocab_fingerprint, py::arg("vocab"),
        "FNV-1a hash of the serialized vocabulary, as stored in checkpoints.");

  // ---- model configuration ----

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("embedding_dim", &ModelConfig::embedding_dim)
      .def_readwrite("hidden_dim", &ModelConfig::hidden_dim)
      .def_readwrite("num_layers", &ModelConfig::num_layers)
      .def_readwrite("weight_drop_p", &ModelConfig::weight_drop_p)
      .def_readwrite("embedding_drop_p", &ModelConfig::embedding_drop_p)
      .def_readwrite("input_drop_p", &ModelConfig::input_drop_p)
      .def_readwrite("hidden_drop_p", &ModelConfig::hidden_drop_p)
      .def_readwrite("output_drop_p", &ModelConfig::output_drop_p)
      .def_readwrite("ar_alpha", &ModelConfig::ar_alpha)
      .def_readwrite("tar_beta", &ModelConfig::tar_beta)
      .def_readwrite("tie_weights", &ModelConfig::tie_weights)
      .def("validate", &ModelConfig::validate)
      .def_static("desk", &ModelConfig::desk, py::arg("vocab_size"),
                  "Small profile for laptop-scale experiments.")
      .def_static("reference", &ModelConfig::reference, py::arg("vocab_size"),
                  "Full-size profile (400-dim embeddings, 1150-dim hidden).");

  // ---- schedules ----

  m.def(
      "stlr_learning_rate",
      [](long t, double lr_max, long total_steps, double cut_frac, double ratio) {
        return stlr_learning_rate(t, ScheduleConfig::stlr(lr_max, total_steps, cut_frac, ratio));
      },
      py::arg("t"), py::arg("lr_max"), py::arg("total_steps"), py::arg("cut_frac") = 0.1,
      py::arg("ratio") = 32.0,
      "Slanted-triangular learning rate at step t.");
  m.def("discriminative_lrs", &discriminative_lrs, py::arg("lr_top"), py::arg("num_groups"),
        py::arg("factor") = 2.6,
        "Per-group learning rates, lowest group first: lr_top / factor^(L-1-g).");

  // ---- checkpoints ----

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_readwrite("config", &Checkpoint::config)
      .def_readonly("vocab_hash", &Checkpoint::vocab_hash)
      .def_readwrite("dtype", &Checkpoint::dtype)
      .def("tensors", &tensor_dict,
           "Copies of all parameter tensors as a name -> numpy array dict.");

  m.def("save_checkpoint", &save_checkpoint, py::arg("path"), py::arg("checkpoint"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
  m.def("remap_vocabulary", &remap_vocabulary, py::arg("checkpoint"), py::arg("old_vocab"),
        py::arg("new_vocab"),
        "Rebuild vocabulary-indexed tensors for a new token table; novel "
        "tokens start from the mean embedding.");

  // ---- training pipelines ----

  py::class_<EpochRecord>(m, "EpochRecord")
      .def_readonly("epoch", &EpochRecord::epoch)
      .def_readonly("train_loss", &EpochRecord::train_loss)
      .def_readonly("val_loss", &EpochRecord::val_loss)
      .def_readonly("val_ppl", &EpochRecord::val_ppl)
      .def_readonly("tokens_per_sec", &EpochRecord::tokens_per_sec)
      .def_readonly("tokens_seen", &EpochRecord::tokens_seen)
      .def_readonly("group_lrs", &EpochRecord::group_lrs);

  py::class_<TrainReport>(m, "TrainReport")
      .def_readonly("epochs", &TrainReport::epochs)
      .def("to_jsonl", &TrainReport::to_jsonl)
      .def("save", &TrainReport::save, py::arg("path"));

  py::class_<PipelineOptions>(m, "PipelineOptions")
      .def(py::init<>())
      .def_property(
          "batch_size", [](const PipelineOptions& o) { return o.train.batch_size; },
          [](PipelineOptions& o, int v) { o.train.batch_size = v; })
      .def_property(
          "bptt_len", [](const PipelineOptions& o) { return o.train.bptt_len; },
          [](PipelineOptions& o, int v) { o.train.bptt_len = v; })
      .def_readwrite("epochs", &PipelineOptions::epochs)
      .def_readwrite("lr_top", &PipelineOptions::lr_top)
      .def_readwrite("cut_frac", &PipelineOptions::cut_frac)
      .def_readwrite("ratio", &PipelineOptions::ratio)
      .def_readwrite("discriminative_factor", &PipelineOptions::discriminative_factor)
      .def_readwrite("clip_threshold", &PipelineOptions::clip_threshold)
      .def_readwrite("momentum", &PipelineOptions::momentum)
      .def_readwrite("gradual_unfreeze", &PipelineOptions::gradual_unfreeze)
      .def_readwrite("seed", &PipelineOptions::seed)
      .def_readwrite("val_every", &PipelineOptions::val_every);

  py::class_<PipelineResult>(m, "PipelineResult")
      .def_readonly("checkpoint", &PipelineResult::checkpoint)
      .def_readonly("report", &PipelineResult::report);

  m.def("pretrain", &pretrain_pipeline, py::arg("paragraph_tokens"), py::arg("vocab"),
        py::arg("config"), py::arg("options"),
        "Train from random initialization with a slanted-triangular schedule.");
  m.def("finetune", &finetune_pipeline, py::arg("base"), py::arg("base_vocab"),
        py::arg("paragraph_tokens"), py::arg("vocab"), py::arg("options"),
        "Remap a base checkpoint onto a new vocabulary and fine-tune with "
        "discriminative rates and optional gradual unfreezing.");

  m.def("perplexity", &eval_perplexity, py::arg("checkpoint"), py::arg("vocab"),
        py::arg("paragraph_tokens"), py::arg("bptt_len") = 70,
        "exp(mean eval-mode cross-entropy) of the model on tokenized paragraphs.");

  py::class_<GradCheckReport>(m, "GradCheckReport")
      .def_readonly("max_rel_error", &GradCheckReport::max_rel_error)
      .def_readonly("worst_tensor", &GradCheckReport::worst_tensor)
      .def_readonly("worst_index", &GradCheckReport::worst_index)
      .def_property_readonly("passed", [](const GradCheckReport& r) { return r.pass; });

  m.def("gradient_check", &gradient_check, py::arg("config"), py::arg("rng_seed"),
        py::arg("corrupt_for_test") = false,
        "Analytic BPTT gradients vs central finite differences on a random model.");

  // ---- generation ----

  py::class_<GenerationConfig>(m, "GenerationConfig")
      .def(py::init<>())
      .def_readwrite("seed_text", &GenerationConfig::seed_text)
      .def_readwrite("temperature", &GenerationConfig::temperature)
      .def_readwrite("top_k", &GenerationConfig::top_k)
      .def_readwrite("min_words", &GenerationConfig::min_words)
      .def_readwrite("max_words", &GenerationConfig::max_words)
      .def_readwrite("min_sentences", &GenerationConfig::min_sentences)
      .def_readwrite("max_sentences", &GenerationConfig::max_sentences)
      .def_readwrite("rng_seed", &GenerationConfig::rng_seed)
      .def_readwrite("max_tokens_hard_cap", &GenerationConfig::max_tokens_hard_cap)
      .def_readwrite("allow_eos", &GenerationConfig::allow_eos)
      .def("validate", &GenerationConfig::validate);

  py::class_<GeneratedSample>(m, "GeneratedSample")
      .def_readonly("tokens", &GeneratedSample::tokens)
      .def_readonly("text", &GeneratedSample::text)
      .def_readonly("word_count", &GeneratedSample::word_count)
      .def_readonly("sentence_count", &GeneratedSample::sentence_count)
      .def_property_readonly("stop_reason", [](const GeneratedSample& s) {
        return std::string(stop_reason_name(s.stop_reason));
      });

  m.def("generate", &generate_from, py::arg("checkpoint"), py::arg("vocab"), py::arg("config"),
        "Sample one bounded passage from the model, primed with config.seed_text.");
}
