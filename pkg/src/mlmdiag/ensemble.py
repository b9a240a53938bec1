"""Ensemble of Conditionals: max-pool argmax over the score matrix.

The winning (pattern, candidate) pair is the argmax of log p_ij over the
included rows and all columns; ties break to the lowest row index, then the
lowest column index.  Average pooling is available behind a flag for
comparison but is not the default (max-pooling won the paper's pilots).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CandidateScores, MaskPattern, TaskInstance
from .metrics import _check_m_values, matrices_for_tasks


@dataclass(frozen=True)
class EocPrediction:
    """The winning row (pattern index), column (candidate index), and score."""

    winning_pattern: int
    winning_candidate: int
    winning_log_p: float


def eoc_predict(
    scores: CandidateScores, subset: Sequence[int], pooling: str = "max"
) -> EocPrediction:
    """Ensemble prediction over the given pattern subset."""
    subset = sorted(set(subset))
    if not subset:
        raise ValueError("subset must be nonempty")
    rows = np.stack([scores.row(i) for i in subset])
    if pooling == "max":
        flat = int(np.argmax(rows))
        r, c = divmod(flat, rows.shape[1])
        return EocPrediction(
            winning_pattern=subset[r],
            winning_candidate=int(c),
            winning_log_p=float(rows[r, c]),
        )
    if pooling == "mean":
        pooled = np.mean(np.exp(rows), axis=0)
        c = int(np.argmax(pooled))
        r = int(np.argmax(rows[:, c]))
        return EocPrediction(
            winning_pattern=subset[r],
            winning_candidate=c,
            winning_log_p=float(math.log(pooled[c])) if pooled[c] > 0 else -math.inf,
        )
    raise ValueError(f"pooling must be 'max' or 'mean', got {pooling!r}")


@dataclass(frozen=True)
class AccuracyPoint:
    m: int
    mean_accuracy: float  # nan when no subset had any evaluable instance
    min_accuracy: float
    max_accuracy: float
    subsets_evaluated: int
    subsets_total: int
    instances_counted: int
    instances_dropped: int


@dataclass(frozen=True)
class AccuracyCurve:
    points: tuple[AccuracyPoint, ...]
    baseline_accuracy: float
    instances_total: int
    instances_errored: int

    def mean(self, m: int) -> float:
        for pt in self.points:
            if pt.m == m:
                return pt.mean_accuracy
        raise KeyError(m)


def eoc_from_matrices(
    matrices: Sequence[CandidateScores],
    golds: Sequence[int],
    m_values: Sequence[int],
    instances_errored: int = 0,
    pooling: str = "max",
) -> AccuracyCurve:
    """Mean/min/max EOC accuracy over every size-m subset, plus Baseline row.

    The Baseline reference is the accuracy of pattern index 0 alone (preset
    lists put Baseline first).  Instances missing a subset row are dropped
    from that subset's denominator.
    """
    if len(matrices) != len(golds):
        raise ValueError("one gold index per matrix required")
    n_patterns = {m.n_patterns for m in matrices}
    if len(n_patterns) != 1:
        raise ValueError("matrices disagree on pattern count")
    p = n_patterns.pop()
    golds_arr = np.asarray(golds, dtype=np.int64)

    points = []
    for m in _check_m_values(m_values, p):
        accs = []
        counted = 0
        dropped = 0
        for subset in itertools.combinations(range(p), m):
            if pooling == "max":
                col, ok = _winner_max_pool(matrices, subset)
            else:
                col, ok = _winner_columns_pooling(matrices, subset, pooling)
            n_ok = int(ok.sum())
            dropped += len(matrices) - n_ok
            if n_ok == 0:
                continue
            accs.append(float((col[ok] == golds_arr[ok]).mean()))
            counted += n_ok
        points.append(
            AccuracyPoint(
                m=m,
                mean_accuracy=float(np.mean(accs)) if accs else math.nan,
                min_accuracy=float(np.min(accs)) if accs else math.nan,
                max_accuracy=float(np.max(accs)) if accs else math.nan,
                subsets_evaluated=len(accs),
                subsets_total=math.comb(p, m),
                instances_counted=counted,
                instances_dropped=dropped,
            )
        )

    base_col, base_ok = _winner_max_pool(matrices, (0,))
    baseline = (
        float((base_col[base_ok] == golds_arr[base_ok]).mean())
        if base_ok.any()
        else math.nan
    )
    return AccuracyCurve(
        points=tuple(points),
        baseline_accuracy=baseline,
        instances_total=len(matrices),
        instances_errored=instances_errored,
    )


def _winner_max_pool(
    matrices: Sequence[CandidateScores], subset: tuple[int, ...]
) -> tuple[np.ndarray, np.ndarray]:
    ok = np.zeros(len(matrices), dtype=bool)
    col = np.zeros(len(matrices), dtype=np.int64)
    for i, scores in enumerate(matrices):
        try:
            rows = [scores._row_of[pat] for pat in subset]
        except KeyError:
            continue
        ok[i] = True
        block = scores.log_p[rows]
        flat = int(np.argmax(block))
        col[i] = flat % block.shape[1]
    return col, ok


def _winner_columns_pooling(
    matrices: Sequence[CandidateScores], subset: tuple[int, ...], pooling: str
) -> tuple[np.ndarray, np.ndarray]:
    ok = np.zeros(len(matrices), dtype=bool)
    col = np.zeros(len(matrices), dtype=np.int64)
    for i, scores in enumerate(matrices):
        if not all(scores.is_scored(p) for p in subset):
            continue
        ok[i] = True
        col[i] = eoc_predict(scores, subset, pooling=pooling).winning_candidate
    return col, ok


def eoc_accuracy_curve(
    tasks: Sequence[TaskInstance],
    provider,
    patterns: Sequence[MaskPattern],
    m_values: Sequence[int],
    seed: int = 0,
    jobs: int = 1,
    length_normalize: bool = False,
    pooling: str = "max",
) -> AccuracyCurve:
    """Score tasks under every pattern and aggregate EOC accuracy per m."""
    matrices, errors = matrices_for_tasks(
        tasks, provider, patterns, seed=seed, jobs=jobs, length_normalize=length_normalize
    )
    keep = [(m, t.gold) for m, t in zip(matrices, tasks) if m is not None]
    if not keep:
        raise ValueError("no task could be scored: " + "; ".join(e for _, e in errors[:5]))
    good, golds = zip(*keep)
    return eoc_from_matrices(
        good, golds, m_values, instances_errored=len(errors), pooling=pooling
    )
