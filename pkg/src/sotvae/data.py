"""Corpus types, tokenization, the lexicon sentiment labeler and the synthetic corpus generator.

Corpus file format: UTF-8, one sample per line, seven tab-separated fields::

    sample_id  sentiment_label  frames  surrounding  target  references  title

``frames`` holds k comma-separated float vectors joined by ``|``; token fields
are space-separated token strings; ``references`` joins token sequences with
``||``. Lines starting with ``#`` are provenance comments and are skipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, ParseError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")
SEP = "<sep>"


class Vocabulary:
    """Bijective token <-> id map with PAD/BOS/EOS/UNK at ids 0-3."""

    def __init__(self, tokens: Iterable[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            tokens = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.tokens = tokens
        self.index = {tok: i for i, tok in enumerate(tokens)}
        if len(self.index) != len(tokens):
            raise ConfigError("vocabulary contains duplicate tokens")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token: str):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id(self, token: str) -> int:
        return self.index.get(token, UNK)

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    @property
    def sep(self) -> int:
        return self.index.get(SEP, UNK)

    def save(self, path):
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    return [vocab.id(tok) for tok in text.split()]


def detokenize(ids: Sequence[int], vocab: Vocabulary) -> str:
    return " ".join(vocab.token(i) for i in ids)


class SentimentLexicon:
    """Disjoint per-class token sets; every token of class c scores at the centre of bin c."""

    def __init__(self, class_tokens: Sequence[Sequence[str]], vocab: Vocabulary,
                 weights: dict[str, float] | None = None):
        self.n_classes = len(class_tokens)
        self.class_tokens = [list(ts) for ts in class_tokens]
        flat = [t for ts in self.class_tokens for t in ts]
        if len(set(flat)) != len(flat):
            raise ConfigError("sentiment lexicon classes overlap")
        missing = [t for t in flat if t not in vocab]
        if missing:
            raise ConfigError(f"lexicon tokens missing from vocabulary: {missing[:5]}")
        if weights is None:
            weights = {t: bin_center(c, self.n_classes)
                       for c, ts in enumerate(self.class_tokens) for t in ts}
        self.weights = dict(weights)
        self.weight_by_id = {vocab.id(t): w for t, w in self.weights.items()}

    def save(self, path):
        lines = [f"{t}\t{c}\t{self.weights[t]!r}\n"
                 for c, ts in enumerate(self.class_tokens) for t in ts]
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, path, vocab: Vocabulary) -> "SentimentLexicon":
        classes: dict[int, list[str]] = {}
        weights = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError("expected token<TAB>class<TAB>weight", line=lineno)
            tok, c, w = parts
            classes.setdefault(int(c), []).append(tok)
            weights[tok] = float(w)
        n = max(classes) + 1 if classes else 0
        return cls([classes.get(c, []) for c in range(n)], vocab, weights)


def bin_center(c: int, n_classes: int) -> float:
    """Centre of the c-th of ``n_classes`` equal-width bins spanning [-1, 1]."""
    return -1.0 + (2 * c + 1) / n_classes


def label_sentiment(tokens: Sequence[int], lexicon: SentimentLexicon, n_classes: int) -> int:
    """Mean lexicon weight over hits, binned into ``n_classes`` equal-width bins over [-1, 1].

    No hits scores 0, i.e. the neutral (middle) bin.
    """
    hits = [lexicon.weight_by_id[t] for t in tokens if t in lexicon.weight_by_id]
    score = math.fsum(hits) / len(hits) if hits else 0.0
    return min(n_classes - 1, max(0, int(math.floor((score + 1.0) / 2.0 * n_classes))))


@dataclass
class CommentSample:
    sample_id: str
    frames: np.ndarray
    surrounding_tokens: list[int]
    target_tokens: list[int]
    sentiment_label: int
    references: list[list[int]]
    video_title_tokens: list[int]

    def validate(self, vocab_size: int, n_classes: int):
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ContractError(f"{self.sample_id}: need at least one frame vector")
        if not 0 <= self.sentiment_label < n_classes:
            raise ContractError(f"{self.sample_id}: label {self.sentiment_label} not in [0, {n_classes})")
        seqs = [self.surrounding_tokens, self.target_tokens, self.video_title_tokens, *self.references]
        for seq in seqs:
            if any(not 0 <= t < vocab_size for t in seq):
                raise ContractError(f"{self.sample_id}: token id outside vocabulary")
        if not self.references:
            raise ContractError(f"{self.sample_id}: no references")
        if self.target_tokens not in self.references:
            raise ContractError(f"{self.sample_id}: target missing from references")

    def __eq__(self, other):
        return (isinstance(other, CommentSample)
                and self.sample_id == other.sample_id
                and np.array_equal(self.frames, other.frames)
                and self.surrounding_tokens == other.surrounding_tokens
                and self.target_tokens == other.target_tokens
                and self.sentiment_label == other.sentiment_label
                and self.references == other.references
                and self.video_title_tokens == other.video_title_tokens)


@dataclass
class Corpus:
    samples: list[CommentSample]
    vocab: Vocabulary
    n_classes: int = 3
    layout: "SynthLayout | None" = field(default=None, compare=False, repr=False)

    def __len__(self):
        return len(self.samples)

    def subset(self, indices) -> "Corpus":
        return Corpus([self.samples[i] for i in indices], self.vocab, self.n_classes)


# -- serialization -------------------------------------------------------------


def _tokens_str(ids, vocab):
    return " ".join(vocab.token(i) for i in ids)


def format_sample(s: CommentSample, vocab: Vocabulary) -> str:
    frames = "|".join(",".join(repr(float(x)) for x in row) for row in s.frames)
    refs = "||".join(_tokens_str(r, vocab) for r in s.references)
    return "\t".join([
        s.sample_id, str(s.sentiment_label), frames,
        _tokens_str(s.surrounding_tokens, vocab), _tokens_str(s.target_tokens, vocab),
        refs, _tokens_str(s.video_title_tokens, vocab),
    ])


def save_corpus(corpus: Corpus, path, header: dict | None = None):
    lines = [f"# {k}={v}" for k, v in (header or {}).items()]
    lines += [format_sample(s, corpus.vocab) for s in corpus.samples]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def parse_sample(line: str, vocab: Vocabulary, lineno: int) -> CommentSample:
    parts = line.split("\t")
    if len(parts) != 7:
        raise ParseError(f"expected 7 tab-separated fields, found {len(parts)}", line=lineno, field="record")
    sid, label, frames, sur, tgt, refs, title = parts
    if not sid:
        raise ParseError("empty sample id", line=lineno, field="sample_id")
    try:
        label_i = int(label)
    except ValueError:
        raise ParseError(f"not an integer: {label!r}", line=lineno, field="sentiment_label") from None
    try:
        rows = [[float(x) for x in vec.split(",")] for vec in frames.split("|")]
    except ValueError:
        raise ParseError("unparseable float", line=lineno, field="frames") from None
    if len({len(r) for r in rows}) != 1:
        raise ParseError("frame vectors differ in length", line=lineno, field="frames")
    return CommentSample(
        sample_id=sid,
        frames=np.array(rows, dtype=np.float64),
        surrounding_tokens=tokenize(sur, vocab),
        target_tokens=tokenize(tgt, vocab),
        sentiment_label=label_i,
        references=[tokenize(r, vocab) for r in refs.split("||")],
        video_title_tokens=tokenize(title, vocab),
    )


def load_corpus(path, vocab: Vocabulary, n_classes: int = 3) -> Corpus:
    samples = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.split("\n"), 1):
        if not line or line.startswith("#"):
            continue
        samples.append(parse_sample(line, vocab, lineno))
    return Corpus(samples, vocab, n_classes)


def save_corpus_dir(out_dir, corpus: Corpus, lexicon: SentimentLexicon, header: dict | None = None):
    """Write ``corpus.tsv``, ``vocab.txt`` and ``lexicon.tsv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(corpus, out / "corpus.tsv", header)
    corpus.vocab.save(out / "vocab.txt")
    lexicon.save(out / "lexicon.tsv")


def load_corpus_dir(path, n_classes: int | None = None) -> tuple[Corpus, SentimentLexicon]:
    path = Path(path)
    for name in ("corpus.tsv", "vocab.txt", "lexicon.tsv"):
        if not (path / name).exists():
            raise FileNotFoundError(f"missing {path / name}")
    vocab = Vocabulary.load(path / "vocab.txt")
    lexicon = SentimentLexicon.load(path / "lexicon.tsv", vocab)
    n = lexicon.n_classes if n_classes is None else n_classes
    return load_corpus(path / "corpus.tsv", vocab, n), lexicon


def split_corpus(corpus: Corpus, test_fraction: float = 0.1, seed: int = 0) -> tuple[Corpus, Corpus]:
    """Deterministic shuffled train/test split."""
    n = len(corpus)
    order = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(n * test_fraction))) if n > 1 else 0
    test_idx = sorted(order[:n_test].tolist())
    train_idx = sorted(order[n_test:].tolist())
    return corpus.subset(train_idx), corpus.subset(test_idx)


# -- synthetic generator -------------------------------------------------------


@dataclass
class SynthConfig:
    vocab_size: int = 200
    n_samples: int = 2000
    k: int = 5
    m: int = 5
    d_in: int = 32
    n_classes: int = 3
    sentiment_mixture: tuple[float, ...] | None = None
    imbalance_ratio: float = 1.0
    starved_class: int = 0
    n_references: int = 5
    p_max: int = 60
    topic_size: int = 6
    frame_noise: float = 0.5
    empty_rate: float = 0.0   # fraction of target comments that are empty (meaningless)
    seed: int = 0

    def class_weights(self) -> np.ndarray:
        mix = self.sentiment_mixture
        w = np.full(self.n_classes, 1.0 / self.n_classes) if mix is None else np.array(mix, dtype=float)
        if w.shape != (self.n_classes,):
            raise ConfigError(f"mixture has {w.size} weights for {self.n_classes} classes")
        if (w < 0).any() or self.imbalance_ratio < 0:
            raise ConfigError("sentiment mixture weights must be nonnegative")
        w = w.copy()
        w[self.starved_class] *= self.imbalance_ratio
        if w.sum() <= 0:
            raise ConfigError("sentiment mixture sums to zero")
        return w / w.sum()


@dataclass
class SynthLayout:
    """Which vocabulary ids play which role in a generated corpus."""

    sentiment: list[list[int]]
    topics: list[list[int]]
    fillers: list[int]
    prototypes: np.ndarray = field(repr=False)


def _build_vocab(cfg: SynthConfig):
    if cfg.vocab_size < 50:
        raise ConfigError(f"vocab_size must be >= 50, got {cfg.vocab_size}")
    if cfg.n_classes < 2:
        raise ConfigError("need at least two sentiment classes")
    budget = cfg.vocab_size - len(RESERVED) - 1
    n_lex = max(2, min(8, budget // (4 * cfg.n_classes)))
    n_fill = max(4, budget // 10)
    n_topic_words = budget - n_lex * cfg.n_classes - n_fill
    n_topics = n_topic_words // cfg.topic_size
    if n_topics < 2:
        raise ConfigError("vocabulary too small for the requested number of sentiment classes")
    n_fill += n_topic_words - n_topics * cfg.topic_size

    names = {3: ("neg", "neu", "pos")}.get(cfg.n_classes)
    sent_tokens = [[f"{names[c] if names else f's{c}'}_{i}" for i in range(n_lex)]
                   for c in range(cfg.n_classes)]
    topic_tokens = [[f"t{t}_{i}" for i in range(cfg.topic_size)] for t in range(n_topics)]
    filler_tokens = [f"w{i}" for i in range(n_fill)]
    tokens = list(RESERVED) + [SEP] + [t for ts in sent_tokens for t in ts] \
        + [t for ts in topic_tokens for t in ts] + filler_tokens
    vocab = Vocabulary(tokens)
    assert len(vocab) == cfg.vocab_size
    return vocab, sent_tokens, topic_tokens, filler_tokens


def _comment(rng, topic: list[int], sentiment: list[int], fillers: list[int]) -> list[int]:
    a, b = rng.choice(topic, size=2, replace=False).tolist()
    s1, s2 = rng.choice(sentiment, size=2, replace=False).tolist()
    f = int(rng.choice(fillers))
    template = int(rng.integers(4))
    if template == 0:
        return [a, s1, b]
    if template == 1:
        return [s1, a, b, f]
    if template == 2:
        return [a, b, s1, s2]
    return [f, a, s1]


def synth_corpus(cfg: SynthConfig) -> tuple[Corpus, Vocabulary, SentimentLexicon]:
    """Generate a seeded corpus where frames and context encode a topic and targets
    are sentiment-templated comments about it."""
    weights = cfg.class_weights()
    if cfg.n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    vocab, sent_tok, topic_tok, fill_tok = _build_vocab(cfg)
    lexicon = SentimentLexicon(sent_tok, vocab)
    sent = [[vocab.id(t) for t in ts] for ts in sent_tok]
    topics = [[vocab.id(t) for t in ts] for ts in topic_tok]
    fillers = [vocab.id(t) for t in fill_tok]
    all_sent = [t for ts in sent for t in ts]

    rng = np.random.default_rng(cfg.seed)
    prototypes = rng.normal(0.0, 1.0, size=(len(topics), cfg.d_in))
    samples = []
    for idx in range(cfg.n_samples):
        t = int(rng.integers(len(topics)))
        frames = prototypes[t] + cfg.frame_noise * rng.normal(size=(cfg.k, cfg.d_in))
        context: list[int] = []
        for j in range(cfg.m):
            words = rng.choice(topics[t], size=2, replace=False).tolist() + [int(rng.choice(fillers))]
            if rng.random() < 0.5:
                words.append(int(rng.choice(all_sent)))
            rng.shuffle(words)
            context += ([vocab.sep] if j else []) + words
        context = context[-cfg.p_max:]
        label = int(rng.choice(cfg.n_classes, p=weights))
        target = _comment(rng, topics[t], sent[label], fillers)
        if cfg.empty_rate and rng.random() < cfg.empty_rate:
            target = []
        refs = [target]
        for _ in range(cfg.n_references - 1):
            c = int(rng.choice(cfg.n_classes, p=weights))
            refs.append(_comment(rng, topics[t], sent[c], fillers))
        title = rng.choice(topics[t], size=3, replace=False).tolist()
        samples.append(CommentSample(
            sample_id=f"s{idx:06d}", frames=frames, surrounding_tokens=context,
            target_tokens=target, sentiment_label=label, references=refs,
            video_title_tokens=title))
    corpus = Corpus(samples, vocab, cfg.n_classes, SynthLayout(sent, topics, fillers, prototypes))
    return corpus, vocab, lexicon
