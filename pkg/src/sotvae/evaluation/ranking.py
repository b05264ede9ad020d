"""Candidate-set construction and log-likelihood ranking metrics."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from sklearn.feature_extraction.text import TfidfVectorizer

from ..data import Corpus
from ..errors import ContractError, CorpusTooSmallError

N_CANDIDATES, N_PLAUSIBLE, N_POPULAR = 100, 50, 20


def _identity(doc):
    return doc


class TfIdfIndex:
    """TF-IDF vectors over the distinct comments of a (training) corpus.

    idf(t) = ln((1 + D) / (1 + df(t))) + 1, raw term counts, L2-normalised rows.
    """

    def __init__(self, corpus: Corpus):
        counts: Counter = Counter()
        first_seen: dict = {}
        for s in corpus.samples:
            for ref in s.references:
                key = tuple(ref)
                if not key:
                    continue
                counts[key] += 1
                first_seen.setdefault(key, len(first_seen))
        self.comments: list[tuple] = sorted(first_seen, key=first_seen.__getitem__)
        self.popularity = np.array([counts[c] for c in self.comments])
        self.vectorizer = TfidfVectorizer(analyzer=_identity, lowercase=False, smooth_idf=True,
                                          sublinear_tf=False, norm="l2")
        self.matrix = self.vectorizer.fit_transform([[str(t) for t in c] for c in self.comments])  # (D, V)

    def __len__(self):
        return len(self.comments)

    def idf(self, token: int) -> float:
        j = self.vectorizer.vocabulary_.get(str(token))
        return float(self.vectorizer.idf_[j]) if j is not None else float("nan")

    def vector(self, tokens: Sequence[int]):
        return self.vectorizer.transform([[str(t) for t in tokens]])

    def title_similarity(self, title: Sequence[int]) -> np.ndarray:
        """Cosine similarity of every indexed comment to the title."""
        return np.asarray((self.matrix @ self.vector(title).T).todense()).ravel()

    def popular_order(self) -> np.ndarray:
        """Indices by descending frequency, earlier first occurrence winning ties."""
        return np.lexsort((np.arange(len(self.comments)), -self.popularity))


@dataclass
class CandidateSet:
    candidates: list             # token tuples
    tags: list                   # "correct" / "plausible" / "popular" / "random"
    correct_indices: list
    backfilled: int = 0          # slots meant for plausible/popular that random comments filled

    def __len__(self):
        return len(self.candidates)

    def counts(self) -> dict:
        return dict(Counter(self.tags))


def build_candidate_set(sample, index: TfIdfIndex, rng: np.random.Generator, size: int = N_CANDIDATES,
                        n_plausible: int = N_PLAUSIBLE, n_popular: int = N_POPULAR) -> CandidateSet:
    correct = list(dict.fromkeys(tuple(r) for r in sample.references if len(r)))
    if not correct:
        raise ContractError(f"sample {sample.sample_id} has no non-empty reference")
    used = set(correct)
    chosen: list[tuple[tuple, str]] = [(c, "correct") for c in correct]

    def take(order, limit, tag):
        got = 0
        for i in order:
            if got >= limit or len(chosen) >= size:
                break
            c = index.comments[i]
            if c not in used:
                used.add(c)
                chosen.append((c, tag))
                got += 1
        return got

    sims = index.title_similarity(sample.video_title_tokens)
    # only comments that share a title term count as plausible
    plausible_order = [i for i in np.lexsort((np.arange(len(sims)), -sims)) if sims[i] > 0]
    want = min(n_plausible, size - len(chosen))
    short = want - take(plausible_order, want, "plausible")
    want = min(n_popular, size - len(chosen))
    short += want - take(index.popular_order(), want, "popular")
    take(rng.permutation(len(index)), size - len(chosen), "random")
    if len(chosen) < size:
        raise CorpusTooSmallError(
            f"candidate set for {sample.sample_id} needs {size} distinct comments; the corpus supplies "
            f"{len(chosen)} (shortfall {size - len(chosen)})")
    perm = rng.permutation(size)
    cands = [chosen[i][0] for i in perm]
    tags = [chosen[i][1] for i in perm]
    return CandidateSet(cands, tags, [i for i, t in enumerate(tags) if t == "correct"], short)


def rank_candidates(scores: np.ndarray) -> np.ndarray:
    """Candidate indices by descending score; equal scores keep index order."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(scores.size), -scores))


def rank_with(scorer: Callable, sample, cset: CandidateSet) -> np.ndarray:
    return rank_candidates(scorer(sample, cset.candidates))


def ranking_metrics(ranked: Sequence[int], correct_indices: Sequence[int]) -> dict:
    correct = set(int(i) for i in correct_indices)
    if not correct:
        raise ContractError("ranking metrics need at least one correct candidate")
    ranked = [int(i) for i in ranked]
    position = {c: r + 1 for r, c in enumerate(ranked)}
    missing = correct - set(position)
    if missing:
        raise ContractError(f"correct indices {sorted(missing)} are not in the ranking")
    ranks = np.array(sorted(position[c] for c in correct), dtype=np.float64)
    out = {}
    for k in (1, 5, 10):
        out[f"recall@{k}"] = float((ranks <= k).sum()) / min(len(correct), k)
    out["mean_rank"] = float(ranks.mean())
    out["mrr"] = float((1.0 / ranks).mean())
    return out


def aggregate_metrics(rows: Sequence[dict]) -> dict:
    if not rows:
        raise ContractError("no ranking rows to aggregate")
    return {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
