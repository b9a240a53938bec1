"""Synthetic fixtures with a known accuracy structure.

The confidence-correlated provider gives each (instance, pattern) pair a
latent reliability draw: reliable views answer with the instance's true
candidate conditional almost untouched, unreliable views get the same scores
pushed down by heavy half-normal log-space noise.  Noise is strictly
downward, so a reliable view's top score essentially always beats an
unreliable view's, which is exactly the regime where max-pooling an ensemble
of views outperforms any single view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import MaskedQuery, TaskInstance, TokenSeq, reconstruct_context
from .providers import Capability, Provider
from .seeding import stable_rng


@dataclass(frozen=True)
class ConfidenceFixture:
    """Tasks plus the true candidate conditionals they were built from."""

    tasks: tuple[TaskInstance, ...]
    true_probs: dict[tuple[int, ...], tuple[float, ...]]  # context -> per-candidate p*
    vocab_size: int


def make_confidence_tasks(
    n_tasks: int,
    n_candidates: int = 4,
    vocab_size: int = 50,
    context_len: int = 40,
    gold_low: float = 0.45,
    gold_high: float = 0.75,
    seed: int = 0,
) -> ConfidenceFixture:
    """Tasks whose gold candidate carries mass in [gold_low, gold_high].

    Distractors share the remaining mass equally, so the gold argmax margin
    is at least log(gold_low / ((1 - gold_low) / (J - 1))) nats.  Contexts
    are long enough for every preset pattern footprint.
    """
    if n_candidates < 2 or n_candidates > vocab_size:
        raise ValueError("need 2 <= n_candidates <= vocab_size")
    rng = np.random.default_rng(seed)
    tasks = []
    probs: dict[tuple[int, ...], tuple[float, ...]] = {}
    seen_contexts: set[tuple[int, ...]] = set()
    for i in range(n_tasks):
        while True:
            context = tuple(int(t) for t in rng.integers(0, vocab_size, size=context_len))
            if context not in seen_contexts:
                seen_contexts.add(context)
                break
        cand_tokens = rng.choice(vocab_size, size=n_candidates, replace=False)
        gold = int(rng.integers(0, n_candidates))
        g = float(rng.uniform(gold_low, gold_high))
        p_star = [(1.0 - g) / (n_candidates - 1)] * n_candidates
        p_star[gold] = g
        tasks.append(
            TaskInstance(
                id=f"fix-{i:05d}",
                context=TokenSeq(context),
                candidates=tuple(TokenSeq((int(t),)) for t in cand_tokens),
                gold=gold,
            )
        )
        probs[context] = tuple(p_star)
    return ConfidenceFixture(tasks=tuple(tasks), true_probs=probs, vocab_size=vocab_size)


class ConfidenceNoiseProvider(Provider):
    """Scores = log p* minus per-candidate half-normal downward noise.

    The noise scale per (query, hence instance x pattern) is ``sigma_low``
    with probability ``rho`` and ``sigma_high`` otherwise, keyed
    deterministically by the query content.  Scores stay finite and <= 0.
    """

    def __init__(
        self,
        fixture: ConfidenceFixture,
        rho: float = 0.3,
        sigma_low: float = 0.02,
        sigma_high: float = 3.0,
        seed: int = 0,
    ):
        if not 0.0 <= rho <= 1.0:
            raise ValueError("rho must be in [0, 1]")
        self.fixture = fixture
        self.rho = rho
        self.sigma_low = sigma_low
        self.sigma_high = sigma_high
        self.seed = seed
        self._by_context = {
            tuple(t.context.ids): t for t in fixture.tasks
        }

    @property
    def capabilities(self) -> Capability:
        return Capability(max_context_len=None, deterministic=True)

    def score_candidates(
        self, query: MaskedQuery, candidates: Sequence[TokenSeq]
    ) -> list[float]:
        context = reconstruct_context(query)
        task = self._by_context.get(context)
        if task is None:
            raise KeyError(f"query context does not match any fixture task")
        p_star = self.fixture.true_probs[context]
        token_to_prob = {
            cand.ids[0]: p for cand, p in zip(task.candidates, p_star)
        }
        fp = query.fingerprint()
        reliable = stable_rng("reliability", self.seed, fp).random() < self.rho
        sigma = self.sigma_low if reliable else self.sigma_high
        # Noise is indexed by token id so it is a function of (query, token),
        # independent of candidate order.
        noise = np.abs(
            stable_rng("noise", self.seed, fp).standard_normal(self.fixture.vocab_size)
        )
        out = []
        for cand in candidates:
            if len(cand) != 1 or cand.ids[0] not in token_to_prob:
                raise ValueError(f"candidate {cand.ids} is not one of the fixture's candidates")
            tok = cand.ids[0]
            out.append(math.log(token_to_prob[tok]) - sigma * float(noise[tok]))
        return out
