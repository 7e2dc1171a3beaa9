"""Word-level LSTM language modeling toolkit.

Thin re-export of the compiled core: corpus ingest and tokenization,
regularized LSTM training with slanted-triangular schedules, checkpoint
transfer across vocabularies, and length-constrained text generation.
"""

from ._core import (
    Checkpoint,
    Corpus,
    EpochRecord,
    Error,
    GenerationConfig,
    GeneratedSample,
    GradCheckReport,
    ModelConfig,
    PipelineOptions,
    PipelineResult,
    RawSpeech,
    TrainReport,
    Vocabulary,
    detokenize,
    discriminative_lrs,
    finetune,
    generate,
    gradient_check,
    ingest_dataset,
    load_checkpoint,
    perplexity,
    pretrain,
    remap_vocabulary,
    save_checkpoint,
    split_and_clean,
    stlr_learning_rate,
    tokenize,
    vocab_fingerprint,
)

__all__ = [
    "Checkpoint",
    "Corpus",
    "EpochRecord",
    "Error",
    "GenerationConfig",
    "GeneratedSample",
    "GradCheckReport",
    "ModelConfig",
    "PipelineOptions",
    "PipelineResult",
    "RawSpeech",
    "TrainReport",
    "Vocabulary",
    "detokenize",
    "discriminative_lrs",
    "finetune",
    "generate",
    "gradient_check",
    "ingest_dataset",
    "load_checkpoint",
    "perplexity",
    "pretrain",
    "remap_vocabulary",
    "save_checkpoint",
    "split_and_clean",
    "stlr_learning_rate",
    "tokenize",
    "vocab_fingerprint",
]

__version__ = "0.1.0"
