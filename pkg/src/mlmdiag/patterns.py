"""Mask patterns: building masked queries, preset lists, validation selection.

The three pattern families ask a model for the same target distribution via
different masked views of one context:

* Baseline: one mask appended after the context, nothing given.
* K-offset: the last k context tokens are masked out and handed back as given
  output, so the conditioning set is unchanged.
* Multimask: n extra spans of length s (gaps >= g between consecutive spans)
  are masked and their tokens handed back as given output; the target mask is
  appended at the end.

Every variant conditions on exactly the full context, which is what makes
cross-pattern disagreement a pure self-consistency measure.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Sequence

from .core import (
    Baseline,
    KOffset,
    MaskedQuery,
    MaskPattern,
    Multimask,
    TaskInstance,
    TokenSeq,
)
from .seeding import derive_seed


class PatternDoesNotFit(ValueError):
    """The context is too short for the pattern; carries the minimum length."""

    def __init__(self, pattern: MaskPattern, context_len: int, required_min: int):
        self.pattern = pattern
        self.context_len = context_len
        self.required_min = required_min
        super().__init__(
            f"{pattern} needs a context of at least {required_min} tokens, got {context_len}"
        )


# ---------------------------------------------------------------------------
# Span placement for Multimask
# ---------------------------------------------------------------------------


def multimask_placement_count(context_len: int, n: int, s: int, g: int) -> int:
    """Number of ways to place n non-overlapping length-s spans with gaps >= g."""
    slack = context_len - n * s - (n - 1) * g
    if slack < 0:
        return 0
    return math.comb(slack + n, n)


def _unrank_combination(rank: int, m: int, n: int) -> list[int]:
    """The rank-th (lexicographic) n-subset of range(m)."""
    out = []
    low = 0
    for remaining in range(n, 0, -1):
        for value in range(low, m):
            block = math.comb(m - value - 1, remaining - 1)
            if rank < block:
                out.append(value)
                low = value + 1
                break
            rank -= block
    return out


def _placement_starts(rank: int, context_len: int, n: int, s: int, g: int) -> list[int]:
    """Start positions of the rank-th feasible placement, ascending."""
    slack = context_len - n * s - (n - 1) * g
    # Bijection: placements <-> n-subsets of range(slack + n), via
    # start_i = subset_i + i * (s + g) - i ... recovered below.
    subset = _unrank_combination(rank, slack + n, n)
    return [d - i + i * (s + g) for i, d in enumerate(subset)]


def enumerate_placements(context_len: int, n: int, s: int, g: int) -> list[tuple[int, ...]]:
    """All feasible placements by direct recursion; test oracle for unranking."""
    out: list[tuple[int, ...]] = []

    def rec(prefix: list[int], low: int) -> None:
        if len(prefix) == n:
            out.append(tuple(prefix))
            return
        for a in range(low, context_len - s + 1):
            rec(prefix + [a], a + s + g)

    rec([], 0)
    return out


# ---------------------------------------------------------------------------
# Query construction
# ---------------------------------------------------------------------------


def apply_pattern(context: TokenSeq, pattern: MaskPattern, seed: int = 0) -> MaskedQuery:
    """Turn (context, pattern) into a masked query; deterministic given seed."""
    ids = context.ids
    n_ctx = len(ids)
    if isinstance(pattern, Baseline):
        return MaskedQuery(encoder_tokens=ids + (-1,), decoder_prefix=(), target_slot=0)
    if isinstance(pattern, KOffset):
        k = pattern.k
        if k >= n_ctx:
            raise PatternDoesNotFit(pattern, n_ctx, required_min=k + 1)
        return MaskedQuery(
            encoder_tokens=ids[: n_ctx - k] + (-1, -2),
            decoder_prefix=(-1,) + ids[n_ctx - k :],
            target_slot=1,
        )
    if isinstance(pattern, Multimask):
        n, s, g = pattern.n, pattern.s, pattern.g
        count = multimask_placement_count(n_ctx, n, s, g)
        if count == 0:
            raise PatternDoesNotFit(pattern, n_ctx, required_min=n * s + (n - 1) * g)
        rank = random.Random(seed).randrange(count)
        starts = _placement_starts(rank, n_ctx, n, s, g)
        encoder: list[int] = []
        prefix: list[int] = []
        pos = 0
        for i, a in enumerate(starts):
            encoder.extend(ids[pos:a])
            encoder.append(-(i + 1))
            prefix.append(-(i + 1))
            prefix.extend(ids[a : a + s])
            pos = a + s
        encoder.extend(ids[pos:])
        encoder.append(-(n + 1))
        return MaskedQuery(
            encoder_tokens=tuple(encoder),
            decoder_prefix=tuple(prefix),
            target_slot=n,
        )
    raise TypeError(f"not a mask pattern: {pattern!r}")


# ---------------------------------------------------------------------------
# Preset pattern lists
# ---------------------------------------------------------------------------

MODEL_KINDS = ("ul2", "t5")
TASK_KINDS = ("mmlu", "lambada", "bigbench")


@dataclass(frozen=True)
class PresetKey:
    model_kind: str
    task_kind: str

    def __post_init__(self) -> None:
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"model_kind must be one of {MODEL_KINDS}")
        if self.task_kind not in TASK_KINDS:
            raise ValueError(f"task_kind must be one of {TASK_KINDS}")

    @property
    def name(self) -> str:
        return f"{self.model_kind}-{self.task_kind}"


def parse_preset_key(name: str) -> PresetKey:
    model, _, task = name.partition("-")
    return PresetKey(model_kind=model, task_kind=task)


_SHORT_MULTIMASK = [(3, 5, 1), (3, 5, 2), (3, 10, 1)]
_LONG_MULTIMASK = [(3, 5, 1), (3, 5, 2), (3, 3, 1), (3, 3, 2), (3, 4, 1), (3, 4, 2)]

_PRESETS: dict[tuple[str, str], tuple[int, list[tuple[int, int, int]]]] = {
    ("ul2", "mmlu"): (6, _SHORT_MULTIMASK),
    ("ul2", "lambada"): (6, _SHORT_MULTIMASK),
    ("ul2", "bigbench"): (3, _LONG_MULTIMASK),
    ("t5", "mmlu"): (3, _LONG_MULTIMASK),
    ("t5", "lambada"): (6, _SHORT_MULTIMASK),
    ("t5", "bigbench"): (3, _LONG_MULTIMASK),
}


def preset_patterns(key: PresetKey) -> list[MaskPattern]:
    """The fixed 10-pattern list for one (model kind, task kind) pair."""
    k_max, multimasks = _PRESETS[(key.model_kind, key.task_kind)]
    out: list[MaskPattern] = [Baseline()]
    out.extend(KOffset(k) for k in range(1, k_max + 1))
    out.extend(Multimask(n, s, g) for (n, s, g) in multimasks)
    return out


# ---------------------------------------------------------------------------
# Validation-set pattern selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SelectionResult:
    """Chosen patterns plus per-pattern validation accuracies and exclusions."""

    selected: tuple[MaskPattern, ...]
    accuracies: tuple[float, ...]
    excluded: tuple[tuple[MaskPattern, str], ...]


def select_patterns(
    validation: Sequence[TaskInstance],
    candidates: Sequence[MaskPattern],
    provider,
    top: int,
    seed: int = 0,
) -> SelectionResult:
    """Keep the ``top`` candidate patterns by single-conditional accuracy.

    Accuracy is measured per pattern over the validation tasks it applies to;
    ties break by candidate-list order, and a Baseline pattern present in the
    candidate list is always retained.  Patterns applicable to no validation
    task are excluded with a warning record.
    """
    from .providers import score_matrix

    if not validation:
        raise ValueError("validation set must be nonempty")
    candidates = list(candidates)
    if not 1 <= top <= len(candidates):
        raise ValueError(f"top must be in [1, {len(candidates)}], got {top}")

    hits = [0] * len(candidates)
    applicable = [0] * len(candidates)
    for task in validation:
        scores = score_matrix(
            provider, task.context, candidates, task.candidates,
            seed=derive_task_seed(seed, task.id),
        )
        for i in scores.scored_rows:
            applicable[i] += 1
            if scores.argmax_candidate(i) == task.gold:
                hits[i] += 1

    accuracies = [h / a if a else float("nan") for h, a in zip(hits, applicable)]
    usable = [i for i in range(len(candidates)) if applicable[i] > 0]
    excluded = tuple(
        (candidates[i], "inapplicable to every validation item")
        for i in range(len(candidates))
        if applicable[i] == 0
    )
    ranked = sorted(usable, key=lambda i: (-accuracies[i], i))
    chosen = ranked[: min(top, len(ranked))]
    baseline_idx = next(
        (i for i in usable if isinstance(candidates[i], Baseline)), None
    )
    if baseline_idx is not None and baseline_idx not in chosen:
        chosen = chosen[:-1] + [baseline_idx]
    chosen.sort()
    return SelectionResult(
        selected=tuple(candidates[i] for i in chosen),
        accuracies=tuple(accuracies[i] for i in chosen),
        excluded=excluded,
    )


def derive_task_seed(seed: int, task_id: str) -> int:
    """Per-question seed for span placement: default policy, keyed by task id."""
    return derive_seed("task", seed, task_id)
