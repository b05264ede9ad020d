from .bleu import bleu_ref, bleu_self, corpus_bleu, ngram_counts
from .protocol import (EvalReport, controllability, evaluate, generate_for_eval, meaningful_counts,
                       nonempty_by_class)
from .ranking import (CandidateSet, TfIdfIndex, aggregate_metrics, build_candidate_set,
                      rank_candidates, rank_with, ranking_metrics)

__all__ = [
    "bleu_ref", "bleu_self", "corpus_bleu", "ngram_counts", "EvalReport", "controllability",
    "evaluate", "generate_for_eval", "meaningful_counts", "nonempty_by_class", "CandidateSet",
    "TfIdfIndex", "aggregate_metrics", "build_candidate_set", "rank_candidates", "rank_with",
    "ranking_metrics",
]
