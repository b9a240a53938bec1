"""Disagreement across conditionals, and the log-probability-gap statistic.

A set of conditionals disagrees on an instance when their per-row argmax
candidates are not all identical (ties always break to the lowest candidate
index).  Curves aggregate over every size-m subset of the pattern list,
exhaustively; with 10 patterns the largest level has C(10,5) = 252 subsets.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import CandidateScores, MaskPattern, SkippedRowError, TaskInstance, TokenSeq
from .patterns import derive_task_seed

MAX_PATTERNS = 16


def log_prob_gap(p_solved: float, p_inferred: float) -> float:
    """|log p_solved - log p_inferred|; inputs must be positive.

    p_solved may exceed 1: a value reconstructed from incompatible
    conditionals is not itself a probability.
    """
    if not p_solved > 0.0 or not p_inferred > 0.0:
        raise ValueError(f"inputs must be positive, got ({p_solved}, {p_inferred})")
    return abs(math.log(p_solved) - math.log(p_inferred))


def instance_disagrees(scores: CandidateScores, subset: Sequence[int]) -> bool:
    """True iff the patterns in ``subset`` do not share an argmax candidate.

    Raises :class:`SkippedRowError` when the subset references a skipped row.
    """
    subset = sorted(set(subset))
    if not subset:
        raise ValueError("subset must be nonempty")
    winners = {scores.argmax_candidate(i) for i in subset}
    return len(winners) > 1


@dataclass(frozen=True)
class DisagreementPoint:
    m: int
    rate: float  # nan when no subset had any evaluable instance
    subsets_evaluated: int
    subsets_total: int
    instances_counted: int  # (subset, instance) pairs in denominators
    instances_dropped: int  # pairs dropped because a subset row was skipped


@dataclass(frozen=True)
class DisagreementCurve:
    points: tuple[DisagreementPoint, ...]
    instances_total: int
    instances_errored: int

    def rate(self, m: int) -> float:
        for pt in self.points:
            if pt.m == m:
                return pt.rate
        raise KeyError(m)

    def assert_monotone(self) -> None:
        """Exact subset-monotonicity: rates never decrease with m.

        Guaranteed when skips are uniform across instances; per-instance skip
        variation is the only legitimate way this can fail, and then the data
        is not measuring a fixed conditional set.
        """
        defined = [(p.m, p.rate) for p in self.points if not math.isnan(p.rate)]
        for (m0, r0), (m1, r1) in zip(defined, defined[1:]):
            if r1 < r0 - 1e-12:
                raise AssertionError(
                    f"disagreement rate decreased from {r0} (m={m0}) to {r1} (m={m1}); "
                    "per-instance skip variation is the only legitimate cause"
                )


def _subset_tables(
    matrices: Sequence[CandidateScores],
) -> tuple[np.ndarray, np.ndarray, int]:
    """Stack per-instance argmaxes: (argmax[i, p], present[i, p], P)."""
    n_patterns = {m.n_patterns for m in matrices}
    if len(n_patterns) != 1:
        raise ValueError("matrices disagree on pattern count")
    p = n_patterns.pop()
    if p > MAX_PATTERNS:
        raise ValueError(f"at most {MAX_PATTERNS} patterns, got {p}")
    argmax = np.zeros((len(matrices), p), dtype=np.int64)
    present = np.zeros((len(matrices), p), dtype=bool)
    for i, scores in enumerate(matrices):
        for row, pat in enumerate(scores.scored_rows):
            present[i, pat] = True
            argmax[i, pat] = int(np.argmax(scores.log_p[row]))
    return argmax, present, p


def _check_m_values(m_values: Sequence[int], p: int) -> list[int]:
    out = sorted(set(int(m) for m in m_values))
    for m in out:
        if not 1 <= m <= p:
            raise ValueError(f"m must be in [1, {p}], got {m}")
    return out


def disagreement_from_matrices(
    matrices: Sequence[CandidateScores],
    m_values: Sequence[int],
    instances_errored: int = 0,
) -> DisagreementCurve:
    """Exhaustive all-subsets disagreement over precomputed score matrices.

    Instances missing any row of a subset are dropped from that subset's
    denominator; the rate at each m is the mean of per-subset rates over
    subsets with nonempty denominators.
    """
    argmax, present, p = _subset_tables(matrices)
    points = []
    for m in _check_m_values(m_values, p):
        rates = []
        counted = 0
        dropped = 0
        total = math.comb(p, m)
        for subset in itertools.combinations(range(p), m):
            cols = list(subset)
            ok = present[:, cols].all(axis=1)
            n_ok = int(ok.sum())
            dropped += len(matrices) - n_ok
            if n_ok == 0:
                continue
            sub = argmax[ok][:, cols]
            disagree = (sub != sub[:, :1]).any(axis=1)
            rates.append(float(disagree.mean()))
            counted += n_ok
        rate = float(np.mean(rates)) if rates else math.nan
        points.append(
            DisagreementPoint(
                m=m,
                rate=rate,
                subsets_evaluated=len(rates),
                subsets_total=total,
                instances_counted=counted,
                instances_dropped=dropped,
            )
        )
    curve = DisagreementCurve(
        points=tuple(points),
        instances_total=len(matrices),
        instances_errored=instances_errored,
    )
    curve.assert_monotone()
    return curve


def matrices_for_tasks(
    tasks: Sequence[TaskInstance],
    provider,
    patterns: Sequence[MaskPattern],
    seed: int = 0,
    jobs: int = 1,
    length_normalize: bool = False,
) -> tuple[list[CandidateScores | None], list[tuple[str, str]]]:
    """Score every task; failures are recorded per instance, not raised.

    Returns (per-task matrices with None for failures, error records of
    (task id, message)).  Reduction order is task order regardless of jobs.
    """
    from concurrent.futures import ThreadPoolExecutor

    from .providers import score_matrix

    def one(task: TaskInstance) -> CandidateScores:
        return score_matrix(
            provider,
            task.context,
            patterns,
            task.candidates,
            seed=derive_task_seed(seed, task.id),
            length_normalize=length_normalize,
        )

    results: list[CandidateScores | None] = []
    errors: list[tuple[str, str]] = []
    if jobs <= 1:
        raw = []
        for task in tasks:
            try:
                raw.append(one(task))
            except Exception as err:  # noqa: BLE001 - per-instance error budget
                raw.append(err)
    else:
        def safe(task: TaskInstance):
            try:
                return one(task)
            except Exception as err:  # noqa: BLE001
                return err

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            raw = list(pool.map(safe, tasks))
    for task, item in zip(tasks, raw):
        if isinstance(item, Exception):
            errors.append((task.id, f"{type(item).__name__}: {item}"))
            results.append(None)
        else:
            results.append(item)
    return results, errors


def disagreement_curve(
    tasks: Sequence[TaskInstance],
    provider,
    patterns: Sequence[MaskPattern],
    m_values: Sequence[int],
    seed: int = 0,
    jobs: int = 1,
    length_normalize: bool = False,
) -> DisagreementCurve:
    """Score tasks under every pattern and aggregate disagreement per m."""
    matrices, errors = matrices_for_tasks(
        tasks, provider, patterns, seed=seed, jobs=jobs, length_normalize=length_normalize
    )
    good = [m for m in matrices if m is not None]
    if not good:
        raise ValueError("no task could be scored: " + "; ".join(e for _, e in errors[:5]))
    return disagreement_from_matrices(good, m_values, instances_errored=len(errors))
