"""EOC max-pool prediction and accuracy curves."""

import numpy as np
import pytest

from mlmdiag.core import Baseline, CandidateScores, KOffset, TaskInstance, TokenSeq, Vocabulary
from mlmdiag.ensemble import eoc_accuracy_curve, eoc_from_matrices, eoc_predict
from mlmdiag.harness import synth_tasks
from mlmdiag.metrics import matrices_for_tasks
from mlmdiag.oracle import ConsistentProvider, random_joint


def scores_of(rows, patterns=None):
    rows = np.asarray(rows, dtype=np.float64)
    n = rows.shape[0]
    return CandidateScores(
        patterns=tuple(patterns or [Baseline()] + [KOffset(i + 1) for i in range(n - 1)]),
        candidates=tuple(TokenSeq((j,)) for j in range(rows.shape[1])),
        log_p=rows,
        scored_rows=tuple(range(n)),
    )


def test_eoc_predict_example():
    s = scores_of(np.log([[0.5, 0.3], [0.2, 0.6]]))
    pred = eoc_predict(s, [0, 1])
    assert (pred.winning_pattern, pred.winning_candidate) == (1, 1)
    assert pred.winning_log_p == pytest.approx(np.log(0.6))


def test_eoc_predict_tie_takes_lowest_row_then_column():
    s = scores_of([[0.4, 0.4], [0.4, 0.1]])
    pred = eoc_predict(s, [0, 1])
    assert (pred.winning_pattern, pred.winning_candidate) == (0, 0)


def test_eoc_predict_single_row_degenerates_to_argmax():
    s = scores_of([[0.1, 0.9, 0.3]])
    pred = eoc_predict(s, [0])
    assert pred.winning_candidate == int(np.argmax(s.log_p[0]))


def test_eoc_predict_empty_subset_rejected():
    with pytest.raises(ValueError):
        eoc_predict(scores_of([[0.1]] ), [])


def test_adding_dominated_row_never_changes_winner():
    base = [[-0.2, -1.0, -0.7], [-0.9, -0.4, -1.1]]
    s2 = scores_of(base)
    with_dominated = scores_of(base + [[-2.0, -3.0, -2.5]])
    before = eoc_predict(s2, [0, 1]).winning_candidate
    after = eoc_predict(with_dominated, [0, 1, 2]).winning_candidate
    assert before == after


def test_permuting_rows_permutes_pattern_not_candidate():
    rows = np.log([[0.5, 0.1], [0.2, 0.7]])
    s = scores_of(rows)
    swapped = scores_of(rows[::-1])
    assert eoc_predict(s, [0, 1]).winning_candidate == 1
    assert eoc_predict(swapped, [0, 1]).winning_candidate == 1
    assert eoc_predict(s, [0, 1]).winning_pattern == 1
    assert eoc_predict(swapped, [0, 1]).winning_pattern == 0


def test_mean_pooling_flag():
    rows = np.log([[0.6, 0.4], [0.1, 0.8]])
    s = scores_of(rows)
    # max pool: winner is (1, 1); mean pool: candidate means are (0.35, 0.6)
    assert eoc_predict(s, [0, 1], pooling="max").winning_candidate == 1
    assert eoc_predict(s, [0, 1], pooling="mean").winning_candidate == 1
    rows2 = np.log([[0.6, 0.45], [0.1, 0.8]])
    s2 = scores_of(rows2)
    assert eoc_predict(s2, [0, 1], pooling="mean").winning_candidate == 1
    assert eoc_predict(s2, [0, 1], pooling="max").winning_candidate == 1
    with pytest.raises(ValueError):
        eoc_predict(s, [0], pooling="median")


def test_complementary_patterns_fixture_beats_singles():
    # Pattern 0 is right on task A only, pattern 1 on task B only, each more
    # confident when right; pattern 2 is uninformative.  EOC over {0,1} is
    # perfect while each single pattern scores 0.5.
    patterns = [Baseline(), KOffset(1), KOffset(2)]
    task_a = scores_of(
        np.log([[0.9, 0.1], [0.4, 0.6], [0.5, 0.5]]), patterns=patterns
    )  # gold 0
    task_b = scores_of(
        np.log([[0.6, 0.4], [0.2, 0.8], [0.5, 0.5]]), patterns=patterns
    )  # gold 1
    golds = [0, 1]
    curve = eoc_from_matrices([task_a, task_b], golds, [1, 2])
    by_m = {pt.m: pt for pt in curve.points}
    # singles: pattern 0 -> (right, wrong), pattern 1 -> (wrong, right), 2 -> ties to 0
    assert by_m[1].mean_accuracy == pytest.approx((0.5 + 0.5 + 0.5) / 3)
    subset_01_acc = 1.0  # max-pool picks the confident correct row on both tasks
    assert by_m[2].max_accuracy == subset_01_acc
    assert by_m[2].mean_accuracy > by_m[1].mean_accuracy


def test_consistent_provider_curve_flat_and_baseline_equal():
    joint = random_joint(Vocabulary.synthetic(3), 8, seed=11)
    tasks = synth_tasks(joint, 40, 3, seed=2)
    patterns = [Baseline()] + [KOffset(k) for k in range(1, 5)]
    curve = eoc_accuracy_curve(tasks, ConsistentProvider(joint), patterns, range(1, 6))
    accs = [pt.mean_accuracy for pt in curve.points]
    assert all(a == curve.baseline_accuracy for a in accs)
    assert curve.baseline_accuracy == 1.0  # synth gold is the true argmax


def test_subset_invariance_under_consistency():
    joint = random_joint(Vocabulary.synthetic(3), 7, seed=12)
    tasks = synth_tasks(joint, 15, 3, seed=3)
    patterns = [Baseline(), KOffset(1), KOffset(2), KOffset(3)]
    matrices, errors = matrices_for_tasks(tasks, ConsistentProvider(joint), patterns)
    assert not errors
    import itertools

    for scores in matrices:
        winners = {
            eoc_predict(scores, subset).winning_candidate
            for size in range(1, 5)
            for subset in itertools.combinations(range(4), size)
        }
        assert len(winners) == 1


def test_gold_alignment_checks():
    with pytest.raises(ValueError):
        eoc_from_matrices([scores_of([[0.1, 0.2]])], [0, 1], [1])
