"""Corpus-level BLEU against reference sets, and self-BLEU among a sample's generations.

Frozen formula (so numbers stay comparable between runs):

* clipped n-gram matches: each hypothesis n-gram count is clipped by its
  maximum count over that hypothesis's references;
* p_1 = matches_1 / total_1 (no smoothing), p_n = (matches_n + 1) / (total_n + 1) for n >= 2;
* brevity penalty ``exp(1 - r/c)`` when ``c <= r``, with ``r`` the sum of closest
  reference lengths (ties go to the shorter reference);
* BLEU@n = BP * exp(mean_{k<=n} log p_k), reported in percent; 0 when c = 0 or p_1 = 0.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

from ..errors import ContractError


def ngram_counts(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def closest_ref_length(hyp_len: int, refs: Sequence[Sequence]) -> int:
    return min((abs(len(r) - hyp_len), len(r)) for r in refs)[1]


def corpus_bleu(hypotheses: Sequence[Sequence], references: Sequence[Sequence[Sequence]], max_n: int = 4) -> float:
    if len(hypotheses) != len(references):
        raise ContractError(f"{len(hypotheses)} hypotheses but {len(references)} reference sets")
    matches = [0] * max_n
    totals = [0] * max_n
    c = r = 0
    for hyp, refs in zip(hypotheses, references):
        if not refs:
            raise ContractError("every hypothesis needs at least one reference")
        hyp = list(hyp)
        c += len(hyp)
        r += closest_ref_length(len(hyp), refs)
        for n in range(1, max_n + 1):
            h = ngram_counts(hyp, n)
            if not h:
                continue
            best: Counter = Counter()
            for ref in refs:
                best |= ngram_counts(list(ref), n)
            matches[n - 1] += sum(min(k, best[g]) for g, k in h.items())
            totals[n - 1] += sum(h.values())
    if c == 0 or matches[0] == 0:
        return 0.0
    log_p = math.log(matches[0] / totals[0])
    for n in range(2, max_n + 1):
        log_p += math.log((matches[n - 1] + 1) / (totals[n - 1] + 1))
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_p / max_n)


def bleu_ref(generations: Sequence[Sequence[Sequence]], references: Sequence[Sequence[Sequence]],
             n: int = 4) -> float:
    """Every generation of sample i is scored against sample i's full reference set."""
    hyps, refs = [], []
    for gens, ref_set in zip(generations, references):
        if not gens:
            raise ContractError("every sample needs at least one generation")
        for g in gens:
            hyps.append(g)
            refs.append(ref_set)
    return corpus_bleu(hyps, refs, n)


def bleu_self(generations: Sequence[Sequence[Sequence]], n: int = 4) -> float:
    """Every generation is scored against the other generations of its own sample (lower = more diverse)."""
    hyps, refs = [], []
    for gens in generations:
        if len(gens) < 2:
            raise ContractError("self-BLEU needs at least two generations per sample")
        for j, g in enumerate(gens):
            hyps.append(g)
            refs.append([o for k, o in enumerate(gens) if k != j])
    return corpus_bleu(hyps, refs, n)
