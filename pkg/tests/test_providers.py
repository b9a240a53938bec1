"""score_matrix assembly, skip records, and provider-contract properties."""

import numpy as np
import pytest

from mlmdiag.core import Baseline, KOffset, Multimask, TokenSeq, Vocabulary
from mlmdiag.oracle import ConsistentProvider, NoiseSpec, PerturbedProvider, random_joint
from mlmdiag.patterns import preset_patterns, PresetKey
from mlmdiag.providers import EmptyMatrixError, score_matrix

V3 = Vocabulary.synthetic(3)


def test_score_matrix_rows_follow_pattern_order():
    joint = random_joint(V3, 6, seed=1)
    provider = ConsistentProvider(joint)
    context = TokenSeq((0, 1, 2, 0, 1))
    patterns = [KOffset(1), Baseline(), KOffset(2)]
    scores = score_matrix(provider, context, patterns, [TokenSeq((0,)), TokenSeq((1,))])
    assert scores.patterns == tuple(patterns)
    assert scores.scored_rows == (0, 1, 2)
    assert scores.log_p.shape == (3, 2)


def test_score_matrix_records_skips_with_reasons():
    joint = random_joint(V3, 9, seed=2)
    provider = ConsistentProvider(joint)
    context = TokenSeq(tuple([0, 1, 2] * 2 + [0, 1]))  # 8 tokens
    patterns = preset_patterns(PresetKey("ul2", "mmlu"))
    scores = score_matrix(provider, context, patterns, [TokenSeq((t,)) for t in range(3)])
    # K1..K6 fit an 8-token context; every preset multimask (footprint >= 17) skips
    assert scores.scored_rows == (0, 1, 2, 3, 4, 5, 6)
    assert set(scores.skip_reasons) == {7, 8, 9}
    for reason in scores.skip_reasons.values():
        assert "at least" in reason


def test_score_matrix_consistent_rows_all_equal():
    joint = random_joint(V3, 7, seed=3)
    provider = ConsistentProvider(joint)
    context = TokenSeq((2, 0, 1, 1, 0, 2))
    patterns = [Baseline(), KOffset(1), KOffset(3), Multimask(1, 2, 0)]
    scores = score_matrix(provider, context, patterns, [TokenSeq((t,)) for t in range(3)])
    spread = np.abs(scores.log_p - scores.log_p[0]).max()
    assert spread < 1e-9


def test_score_matrix_perturbed_rows_differ():
    joint = random_joint(V3, 7, seed=4)
    provider = PerturbedProvider(joint, NoiseSpec(sigma=0.5, seed=5))
    context = TokenSeq((2, 0, 1, 1, 0, 2))
    patterns = [Baseline(), KOffset(1), KOffset(3)]
    scores = score_matrix(provider, context, patterns, [TokenSeq((t,)) for t in range(3)])
    probs = np.exp(scores.log_p)
    tv = 0.5 * np.abs(probs[:, None, :] - probs[None, :, :]).sum(axis=2)
    assert tv.max() > 0.0


def test_score_matrix_all_inapplicable_raises():
    joint = random_joint(V3, 5, seed=5)
    provider = ConsistentProvider(joint)
    context = TokenSeq((0, 1, 2, 0))
    with pytest.raises(EmptyMatrixError):
        score_matrix(provider, context, [Multimask(3, 10, 1)], [TokenSeq((0,))])


def test_score_matrix_length_normalize():
    joint = random_joint(V3, 7, seed=6)
    provider = ConsistentProvider(joint)
    context = TokenSeq((0, 1, 2, 0))
    cands = [TokenSeq((0,)), TokenSeq((1, 2))]
    raw = score_matrix(provider, context, [Baseline()], cands)
    normed = score_matrix(provider, context, [Baseline()], cands, length_normalize=True)
    assert normed.log_p[0, 0] == raw.log_p[0, 0]
    assert normed.log_p[0, 1] == pytest.approx(raw.log_p[0, 1] / 2.0)


def test_score_matrix_deterministic_given_seed():
    joint = random_joint(V3, 8, seed=7)
    provider = PerturbedProvider(joint, NoiseSpec(sigma=1.0, seed=9))
    context = TokenSeq((0, 1, 2, 0, 1, 2, 0))
    patterns = [Baseline(), Multimask(2, 2, 1)]
    cands = [TokenSeq((t,)) for t in range(3)]
    a = score_matrix(provider, context, patterns, cands, seed=42)
    b = score_matrix(provider, context, patterns, cands, seed=42)
    assert np.array_equal(a.log_p, b.log_p)
