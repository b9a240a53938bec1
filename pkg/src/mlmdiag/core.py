"""Shared domain types: vocabularies, token sequences, mask patterns, queries, scores.

Tokens are opaque integer ids over an explicit :class:`Vocabulary`; no text
tokenization happens anywhere in this package.  Log-probabilities are the
canonical internal representation; linear probabilities appear only at
interfaces.

Sentinel convention (shared with the HTTP wire protocol): masked slots in an
encoder sequence are negative markers ``-1, -2, ...`` in order of appearance.
The decoder prefix interleaves each *filled* slot's marker before its fill
tokens, e.g. ``(-1, 7, 7, 3)`` supplies three given tokens for slot 0.  A
non-target slot that never appears in the decoder prefix denotes a single
position whose token is unknown (marginalized by exact providers, kept as a
bare mask by BERT-style backends).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Iterator, Mapping

import numpy as np


class ValidationError(ValueError):
    """A checked constructor or decoder rejected an instance."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "invalid instance")


def _require(obj: Any, vocab: "Vocabulary | None" = None) -> None:
    problems = validate(obj, vocab=vocab)
    if problems:
        raise ValidationError(problems)


# ---------------------------------------------------------------------------
# Vocabulary and token sequences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Vocabulary:
    """An ordered list of distinct token strings; ids are list positions."""

    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))

    @property
    def size(self) -> int:
        return len(self.tokens)

    @classmethod
    def synthetic(cls, size: int) -> "Vocabulary":
        """A vocabulary of ``size`` placeholder tokens ``t0..t{size-1}``."""
        return cls(tuple(f"t{i}" for i in range(size)))

    def to_json(self) -> dict[str, Any]:
        return {"tokens": list(self.tokens)}

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "Vocabulary":
        obj = cls(tuple(str(t) for t in data["tokens"]))
        _require(obj)
        return obj


@dataclass(frozen=True)
class TokenSeq:
    """An ordered sequence of token ids."""

    ids: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[int]:
        return iter(self.ids)

    def __getitem__(self, i: int) -> int:
        return self.ids[i]

    def to_json(self) -> dict[str, Any]:
        return {"ids": list(self.ids)}

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "TokenSeq":
        obj = cls(tuple(data["ids"]))
        _require(obj)
        return obj


# ---------------------------------------------------------------------------
# Mask patterns
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Baseline:
    """A single mask appended after the input; empty given output."""


@dataclass(frozen=True)
class KOffset:
    """Additionally masks the last ``k`` input tokens, supplied as given output."""

    k: int


@dataclass(frozen=True)
class Multimask:
    """Additionally masks ``n`` random spans of length ``s`` with gaps >= ``g``."""

    n: int
    s: int
    g: int


MaskPattern = Baseline | KOffset | Multimask


def pattern_name(pattern: MaskPattern) -> str:
    """Short stable label, used in CSV output and skip records."""
    if isinstance(pattern, Baseline):
        return "baseline"
    if isinstance(pattern, KOffset):
        return f"koffset({pattern.k})"
    if isinstance(pattern, Multimask):
        return f"multimask({pattern.n},{pattern.s},{pattern.g})"
    raise TypeError(f"not a mask pattern: {pattern!r}")


def pattern_to_json(pattern: MaskPattern) -> dict[str, Any]:
    if isinstance(pattern, Baseline):
        return {"variant": "baseline"}
    if isinstance(pattern, KOffset):
        return {"variant": "koffset", "k": pattern.k}
    if isinstance(pattern, Multimask):
        return {"variant": "multimask", "n": pattern.n, "s": pattern.s, "g": pattern.g}
    raise TypeError(f"not a mask pattern: {pattern!r}")


def pattern_from_json(data: Mapping[str, Any]) -> MaskPattern:
    variant = data.get("variant")
    if variant == "baseline":
        obj: MaskPattern = Baseline()
    elif variant == "koffset":
        obj = KOffset(k=int(data["k"]))
    elif variant == "multimask":
        obj = Multimask(n=int(data["n"]), s=int(data["s"]), g=int(data["g"]))
    else:
        raise ValidationError([f"unknown pattern variant: {variant!r}"])
    _require(obj)
    return obj


# ---------------------------------------------------------------------------
# Masked queries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaskedQuery:
    """A request for the distribution at one masked slot of a sequence.

    ``encoder_tokens`` holds real ids (>= 0) and slot markers (-1, -2, ... in
    order of appearance).  ``decoder_prefix`` carries the given output: for
    each filled slot, its marker followed by the tokens filling it, in slot
    order.  ``target_slot`` is the 0-based slot index whose distribution is
    requested; its marker never appears in the prefix.
    """

    encoder_tokens: tuple[int, ...]
    decoder_prefix: tuple[int, ...] = ()
    target_slot: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "encoder_tokens", tuple(int(t) for t in self.encoder_tokens))
        object.__setattr__(self, "decoder_prefix", tuple(int(t) for t in self.decoder_prefix))

    @property
    def num_slots(self) -> int:
        return sum(1 for t in self.encoder_tokens if t < 0)

    def decoder_fills(self) -> dict[int, tuple[int, ...]]:
        """Map of slot index -> given tokens, parsed from the decoder prefix."""
        fills: dict[int, tuple[int, ...]] = {}
        current: int | None = None
        buf: list[int] = []
        for t in self.decoder_prefix:
            if t < 0:
                if current is not None:
                    fills[current] = tuple(buf)
                current = -t - 1
                buf = []
            else:
                if current is None:
                    raise ValidationError(["decoder prefix must start with a slot marker"])
                buf.append(t)
        if current is not None:
            fills[current] = tuple(buf)
        return fills

    def fingerprint(self) -> bytes:
        """Canonical byte form, stable across runs; keys deterministic noise."""
        payload = {
            "encoder_tokens": list(self.encoder_tokens),
            "decoder_prefix": list(self.decoder_prefix),
            "target_slot": self.target_slot,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()

    def to_json(self) -> dict[str, Any]:
        return {
            "encoder_tokens": list(self.encoder_tokens),
            "decoder_prefix": list(self.decoder_prefix),
            "target_slot": self.target_slot,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "MaskedQuery":
        obj = cls(
            encoder_tokens=tuple(data["encoder_tokens"]),
            decoder_prefix=tuple(data.get("decoder_prefix", ())),
            target_slot=int(data.get("target_slot", 0)),
        )
        _require(obj)
        return obj


def reconstruct_context(query: MaskedQuery) -> tuple[int, ...]:
    """Invert masking for a fully filled query: the original context tokens.

    Requires every non-target slot to be filled; the target slot contributes
    nothing (patterns append it after the context or carve it out of it).
    Raises :class:`ValidationError` when a non-target slot has no fill.
    """
    fills = query.decoder_fills()
    out: list[int] = []
    for t in query.encoder_tokens:
        if t >= 0:
            out.append(t)
            continue
        slot = -t - 1
        if slot == query.target_slot:
            continue
        if slot not in fills:
            raise ValidationError([f"slot {slot} is unfilled; context is not reconstructible"])
        out.extend(fills[slot])
    return tuple(out)


# ---------------------------------------------------------------------------
# Candidate score matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CandidateScores:
    """Per-(pattern, candidate) log-probabilities.

    ``patterns`` lists every requested pattern; ``scored_rows`` names the
    pattern indices actually scored (ascending), one ``log_p`` row each.
    Patterns that could not be scored are recorded in ``skip_reasons`` and are
    excluded from subset enumeration explicitly, never silently.
    """

    patterns: tuple[MaskPattern, ...]
    candidates: tuple[TokenSeq, ...]
    log_p: np.ndarray
    scored_rows: tuple[int, ...] = ()
    skip_reasons: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        arr = np.asarray(self.log_p, dtype=np.float64)
        arr = arr.reshape(len(self.scored_rows), len(self.candidates))
        arr.setflags(write=False)
        object.__setattr__(self, "log_p", arr)
        object.__setattr__(self, "scored_rows", tuple(int(i) for i in self.scored_rows))
        object.__setattr__(self, "skip_reasons", dict(self.skip_reasons))

    @property
    def n_patterns(self) -> int:
        return len(self.patterns)

    @property
    def n_candidates(self) -> int:
        return len(self.candidates)

    def is_scored(self, pattern_index: int) -> bool:
        return pattern_index in self._row_of

    @cached_property
    def _row_of(self) -> dict[int, int]:
        return {p: r for r, p in enumerate(self.scored_rows)}

    def row(self, pattern_index: int) -> np.ndarray:
        """Log-probability row for one pattern; raises if it was skipped."""
        try:
            return self.log_p[self._row_of[pattern_index]]
        except KeyError:
            reason = self.skip_reasons.get(pattern_index, "not scored")
            raise SkippedRowError(pattern_index, reason) from None

    def argmax_candidate(self, pattern_index: int) -> int:
        """Winning candidate for one pattern; ties go to the lowest index."""
        return int(np.argmax(self.row(pattern_index)))

    def to_json(self) -> dict[str, Any]:
        return {
            "patterns": [pattern_to_json(p) for p in self.patterns],
            "candidates": [list(c.ids) for c in self.candidates],
            "log_p": self.log_p.tolist(),
            "scored_rows": list(self.scored_rows),
            "skip_reasons": {str(k): v for k, v in self.skip_reasons.items()},
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "CandidateScores":
        obj = cls(
            patterns=tuple(pattern_from_json(p) for p in data["patterns"]),
            candidates=tuple(TokenSeq(tuple(c)) for c in data["candidates"]),
            log_p=np.asarray(data["log_p"], dtype=np.float64),
            scored_rows=tuple(data["scored_rows"]),
            skip_reasons={int(k): str(v) for k, v in data.get("skip_reasons", {}).items()},
        )
        _require(obj)
        return obj


class SkippedRowError(KeyError):
    """A subset referenced a pattern whose row was skipped."""

    def __init__(self, pattern_index: int, reason: str):
        self.pattern_index = pattern_index
        self.reason = reason
        super().__init__(f"pattern {pattern_index} was skipped: {reason}")


# ---------------------------------------------------------------------------
# Task instances and bigram quadruples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskInstance:
    """One benchmark item: a context, candidate completions, and a gold index."""

    id: str
    context: TokenSeq
    candidates: tuple[TokenSeq, ...]
    gold: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "candidates", tuple(self.candidates))

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "context": list(self.context.ids),
            "candidates": [list(c.ids) for c in self.candidates],
            "gold": self.gold,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "TaskInstance":
        obj = cls(
            id=str(data["id"]),
            context=TokenSeq(tuple(data["context"])),
            candidates=tuple(TokenSeq(tuple(c)) for c in data["candidates"]),
            gold=int(data["gold"]),
        )
        _require(obj)
        return obj


@dataclass(frozen=True)
class BigramQuadruple:
    """Four bigrams {x11,x12} x {x21,x22} at adjacent positions in a context.

    ``slot`` is the index of the first bigram position; the context entries at
    ``slot`` and ``slot + 1`` are conventionally the original bigram and are
    ignored when conditioning.  ``inferred``, when present, holds the eight
    conditionals in the canonical order defined in :mod:`mlmdiag.bigram`.
    """

    context: TokenSeq
    slot: int
    x11: int
    x12: int
    x21: int
    x22: int
    inferred: tuple[float, ...] | None = None

    def to_json(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "context": list(self.context.ids),
            "slot": self.slot,
            "x11": self.x11,
            "x12": self.x12,
            "x21": self.x21,
            "x22": self.x22,
        }
        if self.inferred is not None:
            data["inferred"] = list(self.inferred)
        return data

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "BigramQuadruple":
        inferred = data.get("inferred")
        obj = cls(
            context=TokenSeq(tuple(data["context"])),
            slot=int(data["slot"]),
            x11=int(data["x11"]),
            x12=int(data["x12"]),
            x21=int(data["x21"]),
            x22=int(data["x22"]),
            inferred=tuple(float(x) for x in inferred) if inferred is not None else None,
        )
        _require(obj)
        return obj


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _validate_vocabulary(v: Vocabulary) -> list[str]:
    out = []
    if len(set(v.tokens)) != len(v.tokens):
        out.append("tokens distinct")
    if len(v.tokens) < 2:
        out.append("|V| >= 2")
    return out


def _validate_token_seq(s: TokenSeq, vocab: Vocabulary | None) -> list[str]:
    out = []
    if len(s.ids) < 1:
        out.append("length >= 1")
    if any(i < 0 for i in s.ids):
        out.append("ids nonnegative")
    if vocab is not None and any(i >= vocab.size for i in s.ids):
        out.append("ids within vocabulary")
    return out


def _validate_pattern(p: MaskPattern) -> list[str]:
    if isinstance(p, Baseline):
        return []
    if isinstance(p, KOffset):
        return [] if p.k >= 1 else ["k >= 1"]
    out = []
    if p.n < 1:
        out.append("n >= 1")
    if p.s < 1:
        out.append("s >= 1")
    if p.g < 0:
        out.append("g >= 0")
    return out


def _validate_masked_query(q: MaskedQuery) -> list[str]:
    out = []
    markers = [t for t in q.encoder_tokens if t < 0]
    if markers != [-(i + 1) for i in range(len(markers))]:
        out.append("slot markers strictly decreasing from -1 in order of appearance")
    if not 0 <= q.target_slot < len(markers):
        out.append("target_slot refers to an existing sentinel slot")
        return out
    try:
        fills = q.decoder_fills()
    except ValidationError as err:
        return out + err.violations
    prev = -1
    for slot in fills:
        if slot <= prev:
            out.append("decoder prefix slots in ascending order")
        prev = slot
        if slot >= q.target_slot:
            out.append("decoder prefix tokens correspond to slots preceding the target slot")
        if slot >= len(markers):
            out.append("decoder prefix refers to existing slots")
    return out


def _validate_scores(s: CandidateScores) -> list[str]:
    out = []
    present = set(s.scored_rows) | set(s.skip_reasons)
    if present != set(range(s.n_patterns)) or set(s.scored_rows) & set(s.skip_reasons):
        out.append("scored rows and skip reasons partition the pattern list")
    if list(s.scored_rows) != sorted(set(s.scored_rows)):
        out.append("scored rows strictly ascending")
    if s.log_p.shape != (len(s.scored_rows), s.n_candidates):
        out.append("matrix dimensions match pattern and candidate counts")
    if s.n_candidates == 0:
        out.append("at least one candidate")
    if not np.all(np.isfinite(s.log_p)):
        out.append("every entry finite")
    return out


def _validate_task(t: TaskInstance, vocab: Vocabulary | None) -> list[str]:
    out = []
    if len(t.candidates) < 2:
        out.append(">= 2 candidates")
    if not 0 <= t.gold < len(t.candidates):
        out.append("gold in range")
    if any(len(c) < 1 for c in t.candidates):
        out.append("candidate token sequences nonempty")
    out.extend(_validate_token_seq(t.context, vocab))
    for c in t.candidates:
        bad = _validate_token_seq(c, vocab)
        if bad:
            out.extend(f"candidate: {b}" for b in bad)
            break
    return out


def _validate_quadruple(q: BigramQuadruple, vocab: Vocabulary | None) -> list[str]:
    out = _validate_token_seq(q.context, vocab)
    if not 0 <= q.slot < len(q.context) - 1:
        out.append("slot and slot+1 within context")
    if q.x11 == q.x12:
        out.append("x11 != x12")
    if q.x21 == q.x22:
        out.append("x21 != x22")
    if vocab is not None and any(
        not 0 <= x < vocab.size for x in (q.x11, q.x12, q.x21, q.x22)
    ):
        out.append("bigram tokens within vocabulary")
    if q.inferred is not None:
        if len(q.inferred) != 8:
            out.append("inferred has 8 entries")
        elif any(not 0.0 < p <= 1.0 for p in q.inferred):
            out.append("inferred values in (0,1]")
    return out


def validate(obj: Any, vocab: Vocabulary | None = None) -> list[str]:
    """Every violated invariant of a core-type instance; empty iff valid."""
    if isinstance(obj, Vocabulary):
        return _validate_vocabulary(obj)
    if isinstance(obj, TokenSeq):
        return _validate_token_seq(obj, vocab)
    if isinstance(obj, (Baseline, KOffset, Multimask)):
        return _validate_pattern(obj)
    if isinstance(obj, MaskedQuery):
        return _validate_masked_query(obj)
    if isinstance(obj, CandidateScores):
        return _validate_scores(obj)
    if isinstance(obj, TaskInstance):
        return _validate_task(obj, vocab)
    if isinstance(obj, BigramQuadruple):
        return _validate_quadruple(obj, vocab)
    raise TypeError(f"not a core type: {type(obj).__name__}")


def check(obj: Any, vocab: Vocabulary | None = None) -> Any:
    """Validate and return ``obj``; raises :class:`ValidationError` if invalid."""
    _require(obj, vocab=vocab)
    return obj
