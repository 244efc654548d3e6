"""Subtoken-level evaluation metrics.

Precision/recall/F1 treat a name as a set of subtokens; exact match keeps
order. Corpus-level numbers are macro averages, with a secondary F1 computed
from the aggregated precision and recall.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass


def prf1(target: Sequence[str], pred: Sequence[str]) -> tuple[float, float, float]:
    """Set-overlap precision, recall and F1 between subtoken sequences.

    An empty prediction scores (0, 0, 0); an empty target is a caller bug.
    """
    if not target:
        raise ValueError("target subtokens must be nonempty")
    if not pred:
        return 0.0, 0.0, 0.0
    t, p = set(target), set(pred)
    hit = len(t & p)
    precision = hit / len(p)
    recall = hit / len(t)
    if precision + recall == 0.0:
        return precision, recall, 0.0
    f1 = 2.0 * precision * recall / (precision + recall)
    return precision, recall, f1


def exact_match(target: Sequence[str], pred: Sequence[str]) -> bool:
    """Order-sensitive equality of subtoken sequences."""
    return list(target) == list(pred)


@dataclass
class EvalResult:
    precision: float
    recall: float
    f1: float
    f1_aggregate: float
    em: float
    n: int
    pearson_pcs_f1: float | None = None

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "f1_aggregate": self.f1_aggregate,
            "em": self.em,
            "n": self.n,
            "pearson_pcs_f1": self.pearson_pcs_f1,
        }

    def summary_line(self) -> str:
        parts = [
            f"n={self.n}",
            f"precision={self.precision:.4f}",
            f"recall={self.recall:.4f}",
            f"f1={self.f1:.4f}",
            f"f1_aggregate={self.f1_aggregate:.4f}",
            f"em={self.em:.4f}",
        ]
        if self.pearson_pcs_f1 is not None:
            parts.append(f"pearson_pcs_f1={self.pearson_pcs_f1:.4f}")
        return " ".join(parts)


def evaluate_corpus(pairs: Sequence[tuple[Sequence[str], Sequence[str]]]) -> EvalResult:
    """Macro-average metrics over (target, prediction) pairs.

    The per-example F1 mean is the headline number; f1_aggregate is the
    harmonic mean of the macro precision and macro recall.
    """
    if not pairs:
        raise ValueError("cannot evaluate an empty corpus")
    ps, rs, fs, ems = [], [], [], []
    for target, pred in pairs:
        p, r, f = prf1(target, pred)
        ps.append(p)
        rs.append(r)
        fs.append(f)
        ems.append(1.0 if exact_match(target, pred) else 0.0)
    n = len(pairs)
    macro_p = sum(ps) / n
    macro_r = sum(rs) / n
    if macro_p + macro_r == 0.0:
        f1_agg = 0.0
    else:
        f1_agg = 2.0 * macro_p * macro_r / (macro_p + macro_r)
    return EvalResult(
        precision=macro_p,
        recall=macro_r,
        f1=sum(fs) / n,
        f1_aggregate=f1_agg,
        em=sum(ems) / n,
        n=n,
    )


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Pearson correlation coefficient; requires two points and nonzero variance."""
    if len(xs) != len(ys):
        raise ValueError("series lengths differ")
    if len(xs) < 2:
        raise ValueError("need at least two points")
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    dx = [x - mx for x in xs]
    dy = [y - my for y in ys]
    sxx = sum(d * d for d in dx)
    syy = sum(d * d for d in dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("zero variance series has no correlation")
    sxy = sum(a * b for a, b in zip(dx, dy))
    return sxy / math.sqrt(sxx * syy)
