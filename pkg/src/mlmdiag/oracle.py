"""Exact joint tables over V^L sequences, and providers derived from them.

A :class:`JointTable` stores every sequence probability explicitly, so any
conditional can be computed exactly by summation and renormalization.  The
consistent provider answers masked queries straight from one table and is
therefore self-consistent by construction; the perturbed provider corrupts
each answered distribution with deterministic keyed log-space noise, giving a
controllable amount of cross-pattern inconsistency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import BigramQuadruple, MaskedQuery, TokenSeq, ValidationError, Vocabulary
from .providers import (
    Capability,
    Provider,
    QueryRangeError,
    log_sum_exp,
    resolve_query_positions,
)
from .seeding import stable_rng

DENSE_LIMIT = 10**7
_SUM_TOL = 1e-12


class ZeroMassError(ValueError):
    """The conditioning event has probability zero."""


class DegenerateQuadrupleError(ValueError):
    """A required bigram conditional is zero (or numerically indistinguishable)."""


@dataclass(frozen=True)
class JointTable:
    """Dense joint distribution over length-L sequences, row-major by position."""

    vocab: Vocabulary
    length: int
    probs: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        size = self.vocab.size**self.length
        problems = []
        if self.length < 1:
            problems.append("length >= 1")
        if arr.shape[0] != size:
            problems.append(f"probs has {arr.shape[0]} entries, expected {size}")
        else:
            if np.any(arr < 0):
                problems.append("every entry >= 0")
            if abs(float(arr.sum()) - 1.0) > _SUM_TOL:
                problems.append("probabilities sum to 1 within 1e-12")
        if problems:
            raise ValidationError(problems)
        arr.setflags(write=False)
        object.__setattr__(self, "probs", arr)

    @property
    def cube(self) -> np.ndarray:
        """The table as a (v, ..., v) tensor, one axis per position."""
        v = self.vocab.size
        return self.probs.reshape((v,) * self.length)

    def sequence_prob(self, seq: TokenSeq) -> float:
        return float(self.cube[tuple(seq.ids)])


def seq_to_index(ids: Sequence[int], v: int) -> int:
    idx = 0
    for t in ids:
        idx = idx * v + t
    return idx


def index_to_seq(index: int, v: int, length: int) -> tuple[int, ...]:
    out = []
    for _ in range(length):
        index, r = divmod(index, v)
        out.append(r)
    return tuple(reversed(out))


def random_joint(vocab: Vocabulary, length: int, seed: int) -> JointTable:
    """A flat-Dirichlet sample: iid standard exponentials, normalized."""
    size = vocab.size**length
    if size > DENSE_LIMIT:
        raise ValueError(f"infeasible size: {vocab.size}^{length} exceeds {DENSE_LIMIT}")
    draws = np.random.default_rng(seed).standard_exponential(size)
    return JointTable(vocab=vocab, length=length, probs=draws / draws.sum())


def save_joint(joint: JointTable, path: str | Path) -> None:
    np.savez(
        path,
        probs=joint.probs,
        tokens=np.asarray(joint.vocab.tokens, dtype=np.str_),
        length=np.asarray(joint.length),
    )


def load_joint(path: str | Path) -> JointTable:
    with np.load(path) as data:
        vocab = Vocabulary(tuple(str(t) for t in data["tokens"]))
        return JointTable(vocab=vocab, length=int(data["length"]), probs=data["probs"])


def condition(
    joint: JointTable,
    assignment: Mapping[int, int],
    targets: Iterable[int],
) -> np.ndarray:
    """Exact p(targets | assignment) by summation and renormalization.

    Returns an array with one axis per target position, in ascending position
    order, summing to 1.  Positions in neither set are marginalized out.
    Raises :class:`ZeroMassError` when the conditioning event has no mass.
    """
    v, length = joint.vocab.size, joint.length
    target_list = sorted(set(targets))
    if not target_list:
        raise ValueError("targets must be nonempty")
    for p in list(assignment) + target_list:
        if not 0 <= p < length:
            raise QueryRangeError(f"position {p} outside [0, {length})")
    overlap = set(assignment) & set(target_list)
    if overlap:
        raise ValueError(f"assignment and targets overlap at {sorted(overlap)}")
    for p, t in assignment.items():
        if not 0 <= t < v:
            raise ValueError(f"token {t} at position {p} outside vocabulary")

    index = tuple(assignment.get(p, slice(None)) for p in range(length))
    sub = joint.cube[index]
    kept = [p for p in range(length) if p not in assignment]
    sum_axes = tuple(i for i, p in enumerate(kept) if p not in set(target_list))
    dist = sub.sum(axis=sum_axes) if sum_axes else sub.copy()
    mass = float(dist.sum())
    if mass <= 0.0:
        raise ZeroMassError(f"conditioning event {dict(assignment)} has zero probability")
    return dist / mass


# ---------------------------------------------------------------------------
# Providers
# ---------------------------------------------------------------------------


class ConsistentProvider(Provider):
    """Answers every masked query by exact conditioning on one joint table.

    Conditionals of the same target given the same total conditioning set are
    identical across mask patterns by construction.
    """

    def __init__(self, joint: JointTable):
        self.joint = joint

    @property
    def capabilities(self) -> Capability:
        return Capability(max_context_len=self.joint.length, deterministic=True)

    @property
    def vocab_size(self) -> int:
        return self.joint.vocab.size

    def score_candidates(
        self, query: MaskedQuery, candidates: Sequence[TokenSeq]
    ) -> list[float]:
        self._check_tokens(candidates)
        blocks: dict[int, tuple[dict[int, int], list[int]]] = {}
        dists: dict[int, np.ndarray] = {}
        out = []
        for cand in candidates:
            m = len(cand)
            if m not in blocks:
                assignment, target_pos, needed = resolve_query_positions(query, m)
                if needed > self.joint.length:
                    raise QueryRangeError(
                        f"query needs {needed} positions, table has {self.joint.length}"
                    )
                blocks[m] = (assignment, target_pos)
                dists[m] = condition(self.joint, assignment, target_pos)
            p = float(dists[m][tuple(cand.ids)])
            out.append(math.log(p) if p > 0.0 else -math.inf)
        return out

    def slot_distribution(self, query: MaskedQuery) -> np.ndarray:
        """Full single-token distribution at the target slot."""
        assignment, target_pos, needed = resolve_query_positions(query, 1)
        if needed > self.joint.length:
            raise QueryRangeError(
                f"query needs {needed} positions, table has {self.joint.length}"
            )
        return condition(self.joint, assignment, target_pos)

    def _check_tokens(self, candidates: Sequence[TokenSeq]) -> None:
        if not candidates:
            raise ValueError("need at least one candidate")
        v = self.joint.vocab.size
        for cand in candidates:
            if any(not 0 <= t < v for t in cand.ids):
                raise ValueError(f"candidate {cand.ids} outside vocabulary of size {v}")


@dataclass(frozen=True)
class NoiseSpec:
    """Log-space corruption level (nats) and the seed keying its stream."""

    sigma: float
    seed: int

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValidationError(["sigma >= 0"])


class PerturbedProvider(Provider):
    """Exact conditioning plus deterministic keyed log-space Gaussian noise.

    Each forced-decoding step computes the exact conditional over the
    vocabulary, adds iid N(0, sigma^2) noise in log space keyed by (seed,
    query content, forced prefix, step position), and renormalizes, so every
    pattern sees an equally corrupted but reproducible view.  sigma=0 is
    bit-identical to :class:`ConsistentProvider` (it delegates verbatim).
    """

    def __init__(self, joint: JointTable, noise: NoiseSpec):
        self.joint = joint
        self.noise = noise
        self._exact = ConsistentProvider(joint)

    @property
    def capabilities(self) -> Capability:
        return Capability(max_context_len=self.joint.length, deterministic=True)

    @property
    def vocab_size(self) -> int:
        return self.joint.vocab.size

    def score_candidates(
        self, query: MaskedQuery, candidates: Sequence[TokenSeq]
    ) -> list[float]:
        if self.noise.sigma == 0.0:
            return self._exact.score_candidates(query, candidates)
        self._exact._check_tokens(candidates)
        out = []
        for cand in candidates:
            assignment, target_pos, needed = resolve_query_positions(query, len(cand))
            if needed > self.joint.length:
                raise QueryRangeError(
                    f"query needs {needed} positions, table has {self.joint.length}"
                )
            forced = dict(assignment)
            total = 0.0
            for step, (pos, tok) in enumerate(zip(target_pos, cand.ids)):
                log_q = self._noisy_step(query, forced, pos, tuple(cand.ids[:step]))
                total += log_q[tok]
                forced[pos] = tok
            out.append(float(total))
        return out

    def slot_distribution(self, query: MaskedQuery) -> np.ndarray:
        """Full perturbed single-token distribution at the target slot."""
        if self.noise.sigma == 0.0:
            return self._exact.slot_distribution(query)
        assignment, target_pos, needed = resolve_query_positions(query, 1)
        if needed > self.joint.length:
            raise QueryRangeError(
                f"query needs {needed} positions, table has {self.joint.length}"
            )
        log_q = self._noisy_step(query, assignment, target_pos[0], ())
        return np.exp(log_q)

    def _noisy_step(
        self,
        query: MaskedQuery,
        forced: Mapping[int, int],
        pos: int,
        forced_prefix: tuple[int, ...],
    ) -> np.ndarray:
        base = condition(self.joint, forced, [pos])
        with np.errstate(divide="ignore"):
            log_p = np.log(base)
        rng = stable_rng("perturb", self.noise.seed, query.fingerprint(), forced_prefix, pos)
        log_p = log_p + self.noise.sigma * rng.standard_normal(base.shape[0])
        return log_p - log_sum_exp(log_p)


def consistent_provider(joint: JointTable) -> ConsistentProvider:
    return ConsistentProvider(joint)


def perturbed_provider(joint: JointTable, noise: NoiseSpec) -> PerturbedProvider:
    return PerturbedProvider(joint, noise)


# ---------------------------------------------------------------------------
# Cross-ratio identity on bigram quadruples
# ---------------------------------------------------------------------------

# Canonical conditional order (see mlmdiag.bigram): the log cross-ratio
# residual is the signed sum of the eight log conditionals with these signs.
CROSS_RATIO_SIGNS = (1, -1, -1, 1, -1, 1, 1, -1)


def quadruple_conditionals(joint: JointTable, quad: BigramQuadruple) -> np.ndarray:
    """The eight exact conditionals of a quadruple, canonical order.

    Order: p(x21|x11), p(x22|x11), p(x21|x12), p(x22|x12), then p(x11|x21),
    p(x12|x21), p(x11|x22), p(x12|x22).  Conditioning fixes all context
    positions except the two designated ones.
    """
    length = joint.length
    a, b = quad.slot, quad.slot + 1
    if not 0 <= a < b < length:
        raise QueryRangeError(f"bigram positions ({a}, {b}) outside [0, {length})")
    if len(quad.context) != length:
        raise ValueError(
            f"context length {len(quad.context)} does not match table length {length}"
        )
    rest = {p: quad.context.ids[p] for p in range(length) if p not in (a, b)}
    out = []
    for x1 in (quad.x11, quad.x12):
        dist = condition(joint, {**rest, a: x1}, [b])
        out.extend([float(dist[quad.x21]), float(dist[quad.x22])])
    for x2 in (quad.x21, quad.x22):
        dist = condition(joint, {**rest, b: x2}, [a])
        out.extend([float(dist[quad.x11]), float(dist[quad.x12])])
    return np.asarray(out)


def verify_cross_ratio(joint: JointTable, quad: BigramQuadruple) -> float:
    """|log LHS - log RHS| of the cross-ratio identity, in nats.

    Coherent conditionals from one joint satisfy
    p(x21|x11)/p(x22|x11) * p(x11|x22)/p(x12|x22)
      = p(x11|x21)/p(x12|x21) * p(x21|x12)/p(x22|x12)
    exactly, so the residual is 0 up to float rounding.
    """
    cond = quadruple_conditionals(joint, quad)
    if np.any(cond <= 0.0):
        raise DegenerateQuadrupleError("a required bigram conditional has zero mass")
    return abs(float(np.dot(CROSS_RATIO_SIGNS, np.log(cond))))
