"""Exact counts: joint degrees of freedom vs free conditionals of a masked LM.

A joint over length-L sequences from a size-V vocabulary has V^L - 1 free
parameters.  A model that can answer "distribution of one masked token given
the other L-1" specifies L * (V^L - V^(L-1)) free conditionals, and with k
masked positions C(L,k) * V^(L-k) * (V-1)^k of them -- far more than the
joint has room for, which is what leaves room for self-inconsistency.

All arithmetic is exact big-integer; a literal enumerator double-checks the
closed forms at tiny scales.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any

BRUTE_FORCE_LIMIT = 10**6


def _check_vl(v: int, l: int) -> None:
    if v < 2:
        raise ValueError(f"vocabulary size must be >= 2, got {v}")
    if l < 1:
        raise ValueError(f"sequence length must be >= 1, got {l}")


def joint_dof(v: int, l: int) -> int:
    """Free parameters of a joint distribution over V^L sequences: V^L - 1."""
    _check_vl(v, l)
    return v**l - 1


def mlm_count_single(v: int, l: int) -> int:
    """Free single-masked-token conditionals: L * (V^L - V^(L-1))."""
    _check_vl(v, l)
    return l * (v**l - v ** (l - 1))


def mlm_count_k(v: int, l: int, k: int) -> int:
    """Free k-masked-token conditionals: C(L,k) * V^(L-k) * (V-1)^k."""
    _check_vl(v, l)
    if not 1 <= k <= l:
        raise ValueError(f"masked count must be in [1, {l}], got {k}")
    return math.comb(l, k) * v ** (l - k) * (v - 1) ** k


def brute_force_enumerate(v: int, l: int, k: int) -> int:
    """Independent oracle for :func:`mlm_count_k` by literal enumeration.

    Walks every (mask-position set of size k, assignment of the other l-k
    positions) and adds the (v-1)^k free entries of that marginal.  Feasible
    only while v^l <= ``BRUTE_FORCE_LIMIT``.
    """
    _check_vl(v, l)
    if not 1 <= k <= l:
        raise ValueError(f"masked count must be in [1, {l}], got {k}")
    if v**l > BRUTE_FORCE_LIMIT:
        raise ValueError(f"infeasible size: {v}^{l} exceeds {BRUTE_FORCE_LIMIT}")
    total = 0
    for positions in itertools.combinations(range(l), k):
        free_entries = 1
        for _ in positions:
            free_entries *= v - 1
        for _context in itertools.product(range(v), repeat=l - k):
            total += free_entries
    return total


def _fraction_decimal(num: int, den: int, digits: int = 6) -> str:
    """Exact decimal rendering of num/den with ``digits`` fractional digits."""
    whole, rem = divmod(num, den)
    scaled = rem * 10**digits // den
    return f"{whole}.{scaled:0{digits}d}"


@dataclass(frozen=True)
class CountReport:
    """Counts for one (v, l, k) cell, with the exact excess ratio n_mlm/d_joint."""

    v: int
    l: int
    k: int
    d_joint: int
    n_mlm: int
    excess_num: int
    excess_den: int

    @property
    def excess(self) -> Fraction:
        return Fraction(self.excess_num, self.excess_den)

    def to_json(self) -> dict[str, Any]:
        return {
            "v": self.v,
            "l": self.l,
            "k": self.k,
            "d_joint": self.d_joint,
            "n_mlm": self.n_mlm,
            "excess_num": self.excess_num,
            "excess_den": self.excess_den,
            "excess_decimal": _fraction_decimal(self.excess_num, self.excess_den),
        }


def count_report(v: int, l: int, k: int = 1) -> CountReport:
    d = joint_dof(v, l)
    n = mlm_count_k(v, l, k)
    ratio = Fraction(n, d)
    return CountReport(
        v=v,
        l=l,
        k=k,
        d_joint=d,
        n_mlm=n,
        excess_num=ratio.numerator,
        excess_den=ratio.denominator,
    )
