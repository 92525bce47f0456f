"""LSTM encoder-decoder with Lexicon and Lexicon-Adversary units."""

from .data import DatasetSplit, ParallelPair, Vocabulary, build_vocab, colors_corpus, load_split, load_tsv, tokenize
from .metrics import MetricsReport, corpus_bleu, pair_scores
from .model import ModelConfig, ModelVariant, Seq2SeqModel
from .training import TrainSchedule, Translator, evaluate_checkpoint, train

__all__ = [
    "DatasetSplit", "ParallelPair", "Vocabulary", "build_vocab", "colors_corpus", "load_split",
    "load_tsv", "tokenize", "MetricsReport", "corpus_bleu", "pair_scores", "ModelConfig",
    "ModelVariant", "Seq2SeqModel", "TrainSchedule", "Translator", "evaluate_checkpoint", "train",
]
__version__ = "0.1.0"
