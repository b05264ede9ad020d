"""End-to-end evaluation: ranking, diversity, controllability and non-empty generation counts."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, fields

import numpy as np

from ..data import Corpus, SentimentLexicon, label_sentiment
from ..model import make_batch
from ..numerics import no_grad
from .bleu import bleu_ref, bleu_self
from .ranking import (TfIdfIndex, aggregate_metrics, build_candidate_set, rank_candidates,
                      ranking_metrics)


@dataclass
class EvalReport:
    n_samples: int = 0
    n_ranked: int = 0
    recall_at_1: float = 0.0
    recall_at_5: float = 0.0
    recall_at_10: float = 0.0
    mean_rank: float = 0.0
    mrr: float = 0.0
    bleu_ref_at_1: float = 0.0
    bleu_ref_at_4: float = 0.0
    bleu_self_at_1: float = 0.0
    bleu_self_at_4: float = 0.0
    sentiment_match_rate: float = 0.0
    match_rate_by_class: list = field(default_factory=list)
    nonempty_by_class: list = field(default_factory=list)
    empty_generations: int = 0
    meaningful_counts: list = field(default_factory=list)
    backfilled_candidates: int = 0

    def items(self):
        for f in fields(self):
            yield f.name, getattr(self, f.name)

    def to_text(self, config_text: str | None = None) -> str:
        lines = []
        if config_text:
            lines += [f"# {line}" for line in config_text.strip().splitlines()]
        lines += [f"{k}={_fmt(v)}" for k, v in self.items()]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = [k for k, _ in self.items()]
        w.writerow(names)
        w.writerow([_fmt(v) for _, v in self.items()])
        return buf.getvalue()

    def write(self, out_dir, config_text: str | None = None):
        from pathlib import Path
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(self.to_text(config_text), encoding="utf-8")
        (out / "report.csv").write_text(self.to_csv(), encoding="utf-8")

    def finite(self) -> bool:
        vals = []
        for _, v in self.items():
            vals += list(v) if isinstance(v, list) else [v]
        return bool(np.isfinite(np.asarray(vals, dtype=np.float64)).all())


def _fmt(v) -> str:
    if isinstance(v, list):
        return ";".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def controllability(generations, lexicon: SentimentLexicon, n_classes: int) -> dict:
    """Match rate of the labeler's verdict against the conditioning sentiment, empties excluded."""
    hits = np.zeros(n_classes)
    seen = np.zeros(n_classes)
    empty = 0
    for sample_gens in generations:
        for g in sample_gens:
            if g.empty:
                empty += 1
                continue
            seen[g.sentiment] += 1
            hits[g.sentiment] += label_sentiment(g.tokens, lexicon, n_classes) == g.sentiment
    by_class = [float(h / s) if s else 0.0 for h, s in zip(hits, seen)]
    overall = float(hits.sum() / seen.sum()) if seen.sum() else 0.0
    return {"sentiment_match_rate": overall, "match_rate_by_class": by_class, "empty_generations": empty}


def meaningful_counts(generations, n_per_sample: int) -> list:
    """Histogram: entry k = number of samples with exactly k non-empty generations."""
    hist = [0] * (n_per_sample + 1)
    for sample_gens in generations:
        hist[sum(not g.empty for g in sample_gens)] += 1
    return hist


def nonempty_by_class(generations, n_classes: int) -> list:
    out = [0] * n_classes
    for sample_gens in generations:
        for g in sample_gens:
            out[g.sentiment] += not g.empty
    return out


def generate_for_eval(model, corpus: Corpus, seed: int = 0, batch_size: int = 64):
    rng = np.random.default_rng([seed, 2])
    gens = []
    for start in range(0, len(corpus), batch_size):
        batch = make_batch(corpus.samples[start:start + batch_size], model.cfg)
        gens += model.generate_diverse(batch, model.cfg.n_classes, 1, rng=rng)
    return gens


def evaluate(model, train: Corpus, test: Corpus, lexicon: SentimentLexicon, seed: int = 0,
             max_ranked: int | None = None, batch_size: int = 64) -> tuple[EvalReport, list]:
    """Run the whole protocol on ``test``; candidate statistics come from ``train`` only.

    Returns the report and the per-sample generations.
    """
    model.eval()
    report = EvalReport(n_samples=len(test))
    n = model.cfg.n_classes

    index = TfIdfIndex(train)
    rng = np.random.default_rng([seed, 3])
    rows = []
    ranked_samples = test.samples if max_ranked is None else test.samples[:max_ranked]
    with no_grad():
        for s in ranked_samples:
            cset = build_candidate_set(s, index, rng)
            report.backfilled_candidates += cset.backfilled
            scores = model.score_candidates(make_batch([s], model.cfg), cset.candidates)
            rows.append(ranking_metrics(rank_candidates(scores), cset.correct_indices))
    agg = aggregate_metrics(rows)
    report.n_ranked = len(rows)
    report.recall_at_1, report.recall_at_5, report.recall_at_10 = agg["recall@1"], agg["recall@5"], agg["recall@10"]
    report.mean_rank, report.mrr = agg["mean_rank"], agg["mrr"]

    gens = generate_for_eval(model, test, seed, batch_size)
    toks = [[g.tokens for g in sample] for sample in gens]
    refs = [s.references for s in test.samples]
    report.bleu_ref_at_1 = bleu_ref(toks, refs, 1)
    report.bleu_ref_at_4 = bleu_ref(toks, refs, 4)
    if n >= 2:
        report.bleu_self_at_1 = bleu_self(toks, 1)
        report.bleu_self_at_4 = bleu_self(toks, 4)
    ctrl = controllability(gens, lexicon, n)
    report.sentiment_match_rate = ctrl["sentiment_match_rate"]
    report.match_rate_by_class = ctrl["match_rate_by_class"]
    report.empty_generations = ctrl["empty_generations"]
    report.nonempty_by_class = nonempty_by_class(gens, n)
    report.meaningful_counts = meaningful_counts(gens, n)
    return report, gens
