"""Sentiment-conditioned diverse comment generation over video frames and surrounding comments."""

from .config import Config, VARIANTS, ABLATION_GRIDS, apply_variant
from .data import (Corpus, CommentSample, SentimentLexicon, SynthConfig, Vocabulary, label_sentiment,
                   load_corpus_dir, save_corpus_dir, split_corpus, synth_corpus)
from .model import Batch, SoTVAE, make_batch
from .trainer import Adam, adam_step, load_model, lr_at_epoch, train

__version__ = "0.1.0"

__all__ = [
    "Config", "VARIANTS", "ABLATION_GRIDS", "apply_variant", "Corpus", "CommentSample",
    "SentimentLexicon", "SynthConfig", "Vocabulary", "label_sentiment", "load_corpus_dir",
    "save_corpus_dir", "split_corpus", "synth_corpus", "Batch", "SoTVAE", "make_batch", "Adam",
    "adam_step", "load_model", "lr_at_epoch", "train",
]
