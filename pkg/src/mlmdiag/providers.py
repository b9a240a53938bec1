"""The conditional-provider contract and the (pattern x candidate) score matrix.

A provider answers one question: given a masked query, what log-probability
does each candidate get for the target slot?  Multi-token candidates are
scored by forced stepwise decoding (the sum of per-token conditional
log-probabilities); scores are never renormalized over the candidate set.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CandidateScores, MaskedQuery, MaskPattern, TokenSeq
from .seeding import derive_seed


@dataclass(frozen=True)
class Capability:
    """What a backend supports; multi-token candidates are always supported."""

    max_context_len: int | None = None
    supports_multi_token: bool = True
    deterministic: bool = True


class QueryRangeError(ValueError):
    """The query references positions outside the provider's sequence range."""


class EmptyMatrixError(RuntimeError):
    """Every requested pattern was inapplicable to the context."""


class Provider(ABC):
    """Abstract backend answering masked-query candidate-scoring requests."""

    @property
    @abstractmethod
    def capabilities(self) -> Capability: ...

    @abstractmethod
    def score_candidates(
        self, query: MaskedQuery, candidates: Sequence[TokenSeq]
    ) -> list[float]:
        """Log-probability of each candidate filling the target slot."""


def resolve_query_positions(
    query: MaskedQuery, candidate_len: int
) -> tuple[dict[int, int], list[int], int]:
    """Map a query onto original sequence positions.

    Returns (assignment of position -> given token, target positions for a
    candidate of ``candidate_len`` tokens, total positions consumed).  A
    non-target slot without a decoder fill occupies one unconstrained
    position.
    """
    fills = query.decoder_fills()
    assignment: dict[int, int] = {}
    targets: list[int] = []
    pos = 0
    for tok in query.encoder_tokens:
        if tok >= 0:
            assignment[pos] = tok
            pos += 1
            continue
        slot = -tok - 1
        if slot == query.target_slot:
            targets = list(range(pos, pos + candidate_len))
            pos += candidate_len
        elif slot in fills:
            for t in fills[slot]:
                assignment[pos] = t
                pos += 1
        else:
            pos += 1
    return assignment, targets, pos


def pattern_seed(seed: int, pattern_index: int) -> int:
    """Per-pattern sub-seed so span placements are independent across rows."""
    return derive_seed("pattern", seed, pattern_index)


def score_matrix(
    provider: Provider,
    context: TokenSeq,
    patterns: Sequence[MaskPattern],
    candidates: Sequence[TokenSeq],
    seed: int = 0,
    length_normalize: bool = False,
) -> CandidateScores:
    """Score all candidates under each pattern's conditional.

    Rows follow pattern order.  Patterns that do not fit the context, or whose
    scores come out non-finite (zero-probability candidates), become skip
    records instead of rows.  Raises :class:`EmptyMatrixError` when nothing
    could be scored.
    """
    from .patterns import PatternDoesNotFit, apply_pattern

    candidates = tuple(candidates)
    if not candidates:
        raise ValueError("need at least one candidate")
    rows: list[np.ndarray] = []
    scored: list[int] = []
    skips: dict[int, str] = {}
    for i, pattern in enumerate(patterns):
        try:
            query = apply_pattern(context, pattern, seed=pattern_seed(seed, i))
        except PatternDoesNotFit as err:
            skips[i] = str(err)
            continue
        scores = np.asarray(provider.score_candidates(query, candidates), dtype=np.float64)
        if length_normalize:
            scores = scores / np.array([len(c) for c in candidates], dtype=np.float64)
        if not np.all(np.isfinite(scores)):
            skips[i] = "non-finite score (zero-probability candidate)"
            continue
        rows.append(scores)
        scored.append(i)
    if not scored:
        raise EmptyMatrixError(
            "no pattern applicable: " + "; ".join(f"{i}: {r}" for i, r in skips.items())
        )
    return CandidateScores(
        patterns=tuple(patterns),
        candidates=candidates,
        log_p=np.stack(rows),
        scored_rows=tuple(scored),
        skip_reasons=skips,
    )


def probabilities_from_scores(scores: Sequence[float]) -> np.ndarray:
    """Exponentiate log scores; no renormalization."""
    return np.exp(np.asarray(scores, dtype=np.float64))


def log_sum_exp(values: np.ndarray) -> float:
    m = float(np.max(values))
    if math.isinf(m) and m < 0:
        return m
    return m + math.log(float(np.sum(np.exp(values - m))))
