"""Precision, recall, accuracy, exact match and corpus BLEU.

Per-pair scores are fractions in ``[0, 1]``; :class:`MetricsReport` holds
corpus means as percentages.  Stop tokens must be stripped by the caller
(see :func:`strip_stop`).
"""

import math
from collections import Counter
from dataclasses import dataclass

from .errors import PreconditionError


def strip_stop(tokens, stop="<s>"):
    return [t for t in tokens if t != stop]


def pair_scores(pred, gold):
    """Return ``(precision, recall, accuracy, exact)`` for one prediction.

    Precision and recall use the multiset intersection of tokens; accuracy
    counts position-wise agreement over the longer of the two sequences.
    """
    pred, gold = list(pred), list(gold)
    overlap = sum((Counter(pred) & Counter(gold)).values())
    if not pred:
        precision = 1.0 if not gold else 0.0
    else:
        precision = overlap / len(pred)
    recall = overlap / len(gold) if gold else (1.0 if not pred else 0.0)
    longest = max(len(pred), len(gold))
    if longest == 0:
        accuracy = 1.0
    else:
        accuracy = sum(p == g for p, g in zip(pred, gold)) / longest
    exact = 1.0 if pred == gold else 0.0
    return precision, recall, accuracy, exact


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(preds, golds, max_n=4):
    """Corpus-level BLEU (x100) with one reference per prediction, no smoothing."""
    if len(preds) != len(golds):
        raise PreconditionError(f"corpus_bleu: {len(preds)} predictions vs {len(golds)} references")
    if not preds:
        raise PreconditionError("corpus_bleu: empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    pred_len = gold_len = 0
    for pred, gold in zip(preds, golds):
        pred_len += len(pred)
        gold_len += len(gold)
        for n in range(1, max_n + 1):
            p_counts = _ngrams(pred, n)
            g_counts = _ngrams(gold, n)
            matches[n - 1] += sum(min(c, g_counts[g]) for g, c in p_counts.items())
            totals[n - 1] += max(len(pred) - n + 1, 0)
    if pred_len == 0 or any(m == 0 for m in matches):
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    brevity = 1.0 if pred_len >= gold_len else math.exp(1.0 - gold_len / pred_len)
    return 100.0 * brevity * math.exp(log_precision)


@dataclass
class MetricsReport:
    mean_precision: float
    mean_recall: float
    mean_accuracy: float
    mean_exact: float
    corpus_bleu: float = None
    n_pairs: int = 0

    HEADER = ("Prec.", "Rec.", "Acc.", "Exact", "BLEU")

    def row(self, with_bleu=None):
        """Tab-separated percentages with two decimals: Prec., Rec., Acc., Exact[, BLEU]."""
        if with_bleu is None:
            with_bleu = self.corpus_bleu is not None
        values = [self.mean_precision, self.mean_recall, self.mean_accuracy, self.mean_exact]
        if with_bleu:
            values.append(self.corpus_bleu)
        return "\t".join(f"{v:.2f}" for v in values)

    def header(self, with_bleu=None):
        if with_bleu is None:
            with_bleu = self.corpus_bleu is not None
        return "\t".join(self.HEADER if with_bleu else self.HEADER[:4])


def score_corpus(preds, golds, bleu=False):
    """Average :func:`pair_scores` over a corpus (percentages)."""
    if len(preds) != len(golds):
        raise PreconditionError(f"{len(preds)} predictions vs {len(golds)} references")
    if not preds:
        raise PreconditionError("cannot score an empty corpus")
    sums = [0.0, 0.0, 0.0, 0.0]
    for pred, gold in zip(preds, golds):
        for i, s in enumerate(pair_scores(pred, gold)):
            sums[i] += s
    n = len(preds)
    means = [100.0 * s / n for s in sums]
    return MetricsReport(*means, corpus_bleu=corpus_bleu(preds, golds) if bleu else None, n_pairs=n)
