"""Bigram quadruple diagnostics: infer eight conditionals, solve one from seven.

For four bigrams {x11,x12} x {x21,x22} at adjacent positions in a shared
context, any coherent set of the eight conditionals p(x2.|x1.) and p(x1.|x2.)
satisfies the cross-ratio identity

    p(x21|x11)/p(x22|x11) * p(x11|x22)/p(x12|x22)
      = p(x11|x21)/p(x12|x21) * p(x21|x12)/p(x22|x12)

so any one conditional is determined by the other seven.  The gap between a
model's inferred value and the solved value measures self-inconsistency.

Canonical conditional order used throughout (index -> meaning):

    0: p(x21|x11)   1: p(x22|x11)   2: p(x21|x12)   3: p(x22|x12)
    4: p(x11|x21)   5: p(x12|x21)   6: p(x11|x22)   7: p(x12|x22)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .core import BigramQuadruple, MaskedQuery, TokenSeq
from .metrics import log_prob_gap
from .oracle import CROSS_RATIO_SIGNS, DegenerateQuadrupleError
from .providers import Provider

CONDITIONAL_LABELS = (
    "p(x21|x11)",
    "p(x22|x11)",
    "p(x21|x12)",
    "p(x22|x12)",
    "p(x11|x21)",
    "p(x12|x21)",
    "p(x11|x22)",
    "p(x12|x22)",
)

MIN_PROB = 1e-12


def _single_mask_query(
    context: TokenSeq, fixed_pos: int, fixed_tok: int, target_pos: int
) -> MaskedQuery:
    """Mask the target position, fix the other designated position's token."""
    encoder = list(context.ids)
    encoder[fixed_pos] = fixed_tok
    encoder[target_pos] = -1
    return MaskedQuery(encoder_tokens=tuple(encoder), decoder_prefix=(), target_slot=0)


def _both_masked_query(context: TokenSeq, slot: int, target_pos: int) -> MaskedQuery:
    """Mask both designated positions; the conditioning token goes unused.

    Literal reading of feeding the model two masks: the value read at the
    target no longer depends on the conditioning token at all, so the eight
    values collapse pairwise and the cross-ratio identity holds vacuously.
    Kept as a comparison mode; the single-mask reading is the default.
    """
    encoder = list(context.ids)
    encoder[slot] = -1
    encoder[slot + 1] = -2
    target_slot = 0 if target_pos == slot else 1
    return MaskedQuery(encoder_tokens=tuple(encoder), decoder_prefix=(), target_slot=target_slot)


def infer_eight(
    provider: Provider,
    quad: BigramQuadruple,
    pairwise_normalize: bool = False,
    both_masked: bool = False,
    min_prob: float = MIN_PROB,
) -> tuple[float, ...]:
    """The provider's eight conditionals for a quadruple, canonical order.

    Raises :class:`DegenerateQuadrupleError` when any required probability
    falls below ``min_prob`` (degenerate quadruples are skipped, never
    clamped).
    """
    a, b = quad.slot, quad.slot + 1
    out: list[float] = []

    def score_pair(query: MaskedQuery, first: int, second: int) -> tuple[float, float]:
        logs = provider.score_candidates(query, [TokenSeq((first,)), TokenSeq((second,))])
        p = [math.exp(x) for x in logs]
        if pairwise_normalize:
            total = p[0] + p[1]
            if total <= 0.0:
                raise DegenerateQuadrupleError("both pairwise candidates have zero mass")
            p = [x / total for x in p]
        return p[0], p[1]

    for x1 in (quad.x11, quad.x12):
        query = (
            _both_masked_query(quad.context, quad.slot, b)
            if both_masked
            else _single_mask_query(quad.context, a, x1, b)
        )
        out.extend(score_pair(query, quad.x21, quad.x22))
    for x2 in (quad.x21, quad.x22):
        query = (
            _both_masked_query(quad.context, quad.slot, a)
            if both_masked
            else _single_mask_query(quad.context, b, x2, a)
        )
        out.extend(score_pair(query, quad.x11, quad.x12))

    if any(p < min_prob for p in out):
        raise DegenerateQuadrupleError(
            f"a required conditional is below {min_prob}: "
            + ", ".join(f"{l}={p:.3g}" for l, p in zip(CONDITIONAL_LABELS, out) if p < min_prob)
        )
    return tuple(out)


def solve_one(inferred: Sequence[float], index: int) -> float:
    """Solve conditional ``index`` from the other seven via the identity.

    Computed in log space; the result may exceed 1 when the seven inputs are
    not mutually coherent.
    """
    if not 0 <= index < 8:
        raise ValueError(f"index must be in [0, 8), got {index}")
    if len(inferred) != 8:
        raise ValueError("need all 8 conditionals (the one being solved is ignored)")
    acc = 0.0
    for j, (sign, value) in enumerate(zip(CROSS_RATIO_SIGNS, inferred)):
        if j == index:
            continue
        if not value > 0.0:
            raise DegenerateQuadrupleError(f"conditional {CONDITIONAL_LABELS[j]} is not positive")
        acc += sign * math.log(value)
    return math.exp(-CROSS_RATIO_SIGNS[index] * acc)


def solve_all(inferred: Sequence[float]) -> tuple[float, ...]:
    return tuple(solve_one(inferred, i) for i in range(8))


@dataclass(frozen=True)
class QuadrupleResult:
    quadruple: BigramQuadruple
    inferred: tuple[float, ...] | None
    solved: tuple[float, ...] | None
    gaps: tuple[float, ...] | None
    skipped_reason: str | None = None

    @property
    def mean_gap(self) -> float:
        if self.gaps is None:
            raise ValueError("quadruple was skipped")
        return float(np.mean(self.gaps))


@dataclass(frozen=True)
class BigramStats:
    """Distribution of per-quadruple mean gaps between solved and inferred."""

    mean: float
    median: float
    q25: float
    q75: float
    n: int
    skipped: int
    solve_first_mean: float  # averaging only the index-0 gap per quadruple
    results: tuple[QuadrupleResult, ...] = ()

    def to_json(self) -> dict[str, Any]:
        return {
            "mean": self.mean,
            "median": self.median,
            "q25": self.q25,
            "q75": self.q75,
            "n": self.n,
            "skipped": self.skipped,
            "solve_first_mean": self.solve_first_mean,
        }


def evaluate_quadruple(
    provider: Provider,
    quad: BigramQuadruple,
    pairwise_normalize: bool = False,
    both_masked: bool = False,
    min_prob: float = MIN_PROB,
) -> QuadrupleResult:
    """Infer (or reuse stored) conditionals, solve all eight, compute gaps."""
    try:
        if quad.inferred is not None:
            inferred = quad.inferred
            if any(p < min_prob for p in inferred):
                raise DegenerateQuadrupleError(f"a stored conditional is below {min_prob}")
        else:
            inferred = infer_eight(
                provider,
                quad,
                pairwise_normalize=pairwise_normalize,
                both_masked=both_masked,
                min_prob=min_prob,
            )
        solved = solve_all(inferred)
    except DegenerateQuadrupleError as err:
        return QuadrupleResult(
            quadruple=quad, inferred=None, solved=None, gaps=None, skipped_reason=str(err)
        )
    gaps = tuple(log_prob_gap(s, p) for s, p in zip(solved, inferred))
    return QuadrupleResult(quadruple=quad, inferred=inferred, solved=solved, gaps=gaps)


def quadruple_stats(
    quadruples: Sequence[BigramQuadruple],
    provider: Provider,
    pairwise_normalize: bool = False,
    both_masked: bool = False,
    min_prob: float = MIN_PROB,
    keep_results: bool = False,
) -> BigramStats:
    """Gap statistics over a quadruple set; degenerate quadruples are counted."""
    results = [
        evaluate_quadruple(
            provider,
            q,
            pairwise_normalize=pairwise_normalize,
            both_masked=both_masked,
            min_prob=min_prob,
        )
        for q in quadruples
    ]
    means = [r.mean_gap for r in results if r.gaps is not None]
    firsts = [r.gaps[0] for r in results if r.gaps is not None]
    skipped = sum(1 for r in results if r.gaps is None)
    if not means:
        raise DegenerateQuadrupleError("every quadruple was degenerate")
    arr = np.asarray(means)
    return BigramStats(
        mean=float(arr.mean()),
        median=float(np.median(arr)),
        q25=float(np.percentile(arr, 25)),
        q75=float(np.percentile(arr, 75)),
        n=len(means),
        skipped=skipped,
        solve_first_mean=float(np.mean(firsts)),
        results=tuple(results) if keep_results else (),
    )


# ---------------------------------------------------------------------------
# Quadruple generation (pluggable stand-in for the mined diagnostics data)
# ---------------------------------------------------------------------------

# A generator proposes alternative bigrams for (sequence, first position).
BigramGenerator = Callable[[TokenSeq, int], Iterable[tuple[int, int]]]


def corpus_generator(corpus: Sequence[TokenSeq]) -> BigramGenerator:
    """Propose every bigram observed in the corpus at the same masked context."""
    seen: dict[tuple[tuple[int, ...], int], set[tuple[int, int]]] = {}
    for seq in corpus:
        for slot in range(len(seq) - 1):
            key = (_masked_key(seq, slot), slot)
            seen.setdefault(key, set()).add((seq[slot], seq[slot + 1]))

    def propose(seq: TokenSeq, slot: int) -> Iterable[tuple[int, int]]:
        return sorted(seen.get((_masked_key(seq, slot), slot), ()))

    return propose


def _masked_key(seq: TokenSeq, slot: int) -> tuple[int, ...]:
    ids = list(seq.ids)
    ids[slot] = -1
    ids[slot + 1] = -1
    return tuple(ids)


def provider_topk_generator(
    provider: Provider, vocab_size: int, k: int = 3
) -> BigramGenerator:
    """Propose the cross product of each position's top-k tokens.

    Each position's distribution is read with both designated positions
    masked, so proposals depend only on the surrounding context.
    """

    def propose(seq: TokenSeq, slot: int) -> Iterable[tuple[int, int]]:
        tops = []
        for target in (slot, slot + 1):
            query = _both_masked_query(seq, slot, target)
            singles = [TokenSeq((t,)) for t in range(vocab_size)]
            logs = np.asarray(provider.score_candidates(query, singles))
            order = np.argsort(-logs, kind="stable")
            tops.append([int(t) for t in order[:k]])
        return [(t1, t2) for t1 in tops[0] for t2 in tops[1]]

    return propose


def generate_quadruples(
    corpus: Sequence[TokenSeq],
    generator: BigramGenerator,
    max_count: int | None = None,
    seed: int = 0,
) -> list[BigramQuadruple]:
    """Sweep every adjacent bigram; emit quadruples completed by the generator.

    The original bigram is always included; a quadruple is emitted whenever
    alternatives x12 != x11 and x22 != x21 exist such that all four
    combinations are proposed.  Quadruples identical up to designation order
    are deduplicated.  When more than ``max_count`` are found, a seeded
    uniform subsample is returned in scan order.
    """
    found: list[BigramQuadruple] = []
    seen: set[tuple] = set()
    for seq in corpus:
        if len(seq) < 2:
            continue
        for slot in range(len(seq) - 1):
            x11, x21 = seq[slot], seq[slot + 1]
            proposals = set(generator(seq, slot))
            proposals.add((x11, x21))
            firsts = sorted({a for a, _ in proposals if a != x11})
            seconds = sorted({b for _, b in proposals if b != x21})
            for x12 in firsts:
                for x22 in seconds:
                    combos = {(x11, x21), (x11, x22), (x12, x21), (x12, x22)}
                    if not combos <= proposals:
                        continue
                    key = (
                        _masked_key(seq, slot),
                        slot,
                        tuple(sorted((x11, x12))),
                        tuple(sorted((x21, x22))),
                    )
                    if key in seen:
                        continue
                    seen.add(key)
                    found.append(
                        BigramQuadruple(
                            context=seq, slot=slot, x11=x11, x12=x12, x21=x21, x22=x22
                        )
                    )
    if max_count is not None and len(found) > max_count:
        rng = np.random.default_rng(seed)
        keep = sorted(rng.choice(len(found), size=max_count, replace=False).tolist())
        found = [found[i] for i in keep]
    return found
