"""Task IO, synthetic generation, candidate generation, experiment runs."""

import json

import numpy as np
import pytest

from mlmdiag.core import Baseline, KOffset, TokenSeq, Vocabulary, pattern_to_json
from mlmdiag.harness import (
    ExperimentConfig,
    RunFailure,
    TaskFileError,
    lambada_candidates,
    load_tasks,
    oracle_check,
    parse_m_range,
    parse_patterns_spec,
    parse_provider_spec,
    run_experiment,
    save_tasks,
    synth_tasks,
)
from mlmdiag.oracle import (
    ConsistentProvider,
    PerturbedProvider,
    condition,
    random_joint,
    save_joint,
)


def test_load_tasks_well_formed(tmp_path):
    path = tmp_path / "tasks.jsonl"
    lines = [
        {"id": "a", "context": [0, 1], "candidates": [[0], [1]], "gold": 0},
        {"id": "b", "context": [1, 0], "candidates": [[0], [1], [2]], "gold": 2},
        {"id": "c", "context": [1], "candidates": [[0, 1], [1]], "gold": 1},
    ]
    path.write_text("\n".join(json.dumps(l) for l in lines) + "\n")
    tasks = load_tasks(path)
    assert [t.id for t in tasks] == ["a", "b", "c"]


def test_load_tasks_names_offending_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(
        json.dumps({"id": "a", "context": [0], "candidates": [[0], [1]], "gold": 0})
        + "\n"
        + json.dumps({"id": "b", "context": [0], "candidates": [[0], [1]], "gold": 5})
        + "\n"
    )
    with pytest.raises(TaskFileError) as err:
        load_tasks(path)
    assert "bad.jsonl:2" in str(err.value)


def test_load_tasks_empty_file(tmp_path, caplog):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    with caplog.at_level("WARNING"):
        assert load_tasks(path) == []
    assert any("empty" in r.message for r in caplog.records)


def test_save_load_roundtrip(tmp_path):
    joint = random_joint(Vocabulary.synthetic(3), 6, seed=1)
    tasks = synth_tasks(joint, 20, 3, seed=2)
    path = tmp_path / "t.jsonl"
    save_tasks(tasks, path)
    assert load_tasks(path) == tasks


def test_synth_tasks_deterministic_and_valid():
    joint = random_joint(Vocabulary.synthetic(4), 6, seed=7)
    a = synth_tasks(joint, 500, 4, seed=5)
    b = synth_tasks(joint, 500, 4, seed=5)
    assert a == b
    assert len(a) == 500
    for task in a[:50]:
        assert len(task.context) == 5
        assert len(task.candidates) == 4
        assert len({c.ids[0] for c in task.candidates}) == 4


def test_synth_tasks_gold_is_true_argmax():
    joint = random_joint(Vocabulary.synthetic(3), 5, seed=3)
    tasks = synth_tasks(joint, 30, 3, seed=4)
    for task in tasks:
        assignment = {i: t for i, t in enumerate(task.context.ids)}
        true_cond = condition(joint, assignment, [len(task.context)])
        assert task.candidates[task.gold].ids[0] == int(np.argmax(true_cond))


def test_synth_tasks_baseline_accuracy_is_one():
    joint = random_joint(Vocabulary.synthetic(3), 5, seed=6)
    tasks = synth_tasks(joint, 40, 3, seed=7)
    from mlmdiag.ensemble import eoc_accuracy_curve

    curve = eoc_accuracy_curve(tasks, ConsistentProvider(joint), [Baseline()], [1])
    assert curve.baseline_accuracy == 1.0


def test_synth_tasks_vocab_too_small():
    joint = random_joint(Vocabulary.synthetic(2), 4, seed=1)
    with pytest.raises(ValueError):
        synth_tasks(joint, 5, 3, seed=0)


def test_lambada_candidates_match_brute_force_top5():
    joint = random_joint(Vocabulary.synthetic(8), 5, seed=9)
    provider = ConsistentProvider(joint)
    context = TokenSeq((3, 1, 4, 1))
    got = lambada_candidates(provider, context)
    assert len(got) == 5
    true_cond = condition(joint, {i: t for i, t in enumerate(context.ids)}, [4])
    expected = np.argsort(-true_cond, kind="stable")[:5]
    assert [c.ids[0] for c in got] == [int(t) for t in expected]


def test_lambada_candidates_tie_break_on_uniform():
    from mlmdiag.oracle import JointTable

    size = 6**3
    joint = JointTable(
        vocab=Vocabulary.synthetic(6), length=3, probs=np.full(size, 1.0 / size)
    )
    got = lambada_candidates(ConsistentProvider(joint), TokenSeq((2, 3)))
    assert [c.ids[0] for c in got] == [0, 1, 2, 3, 4]


def test_lambada_candidates_rejects_small_count():
    joint = random_joint(Vocabulary.synthetic(3), 3, seed=1)
    with pytest.raises(ValueError):
        lambada_candidates(ConsistentProvider(joint), TokenSeq((0, 1)), target_count=1)


# ---------------------------------------------------------------------------
# Spec strings
# ---------------------------------------------------------------------------


def test_parse_provider_specs(tmp_path):
    provider = parse_provider_spec("oracle:seed=3,v=3,l=5")
    assert isinstance(provider, ConsistentProvider)
    assert provider.joint.vocab.size == 3

    joint_path = tmp_path / "j.npz"
    save_joint(provider.joint, joint_path)
    again = parse_provider_spec(f"oracle:{joint_path}")
    assert np.array_equal(again.joint.probs, provider.joint.probs)

    perturbed = parse_provider_spec(f"perturbed:0.5:9:{joint_path}")
    assert isinstance(perturbed, PerturbedProvider)
    assert perturbed.noise.sigma == 0.5 and perturbed.noise.seed == 9

    default_joint = parse_provider_spec("perturbed:1.0:4")
    assert default_joint.joint.vocab.size == 4 and default_joint.joint.length == 8

    with pytest.raises(ValueError):
        parse_provider_spec("magic:1")


def test_parse_patterns_spec(tmp_path):
    presets = parse_patterns_spec("preset:ul2-lambada")
    assert len(presets) == 10
    path = tmp_path / "pats.json"
    path.write_text(json.dumps([pattern_to_json(Baseline()), pattern_to_json(KOffset(2))]))
    assert parse_patterns_spec(f"file:{path}") == [Baseline(), KOffset(2)]


def test_parse_m_range():
    assert parse_m_range("2..5") == [2, 3, 4, 5]
    assert parse_m_range("1,3,10") == [1, 3, 10]


# ---------------------------------------------------------------------------
# run_experiment
# ---------------------------------------------------------------------------


def _experiment_fixture(tmp_path, sigma="0.8"):
    joint = random_joint(Vocabulary.synthetic(2), 12, seed=7)
    joint_path = tmp_path / "joint.npz"
    save_joint(joint, joint_path)
    tasks = synth_tasks(joint, 30, 2, seed=3)
    tasks_path = tmp_path / "tasks.jsonl"
    save_tasks(tasks, tasks_path)
    patterns = (
        [Baseline()]
        + [KOffset(k) for k in range(1, 7)]
        + [
            {"variant": "multimask", "n": 3, "s": 2, "g": 1},
            {"variant": "multimask", "n": 2, "s": 3, "g": 1},
            {"variant": "multimask", "n": 1, "s": 4, "g": 0},
        ]
    )
    pat_path = tmp_path / "pats.json"
    serialized = [
        pattern_to_json(p) if not isinstance(p, dict) else p for p in patterns
    ]
    pat_path.write_text(json.dumps(serialized))
    return joint_path, tasks_path, pat_path


def test_run_experiment_byte_identical_reruns(tmp_path):
    joint_path, tasks_path, pat_path = _experiment_fixture(tmp_path)
    outputs = []
    for name in ("run_a", "run_b"):
        config = ExperimentConfig(
            provider=f"perturbed:0.8:9:{joint_path}",
            patterns=f"file:{pat_path}",
            tasks=[str(tasks_path)],
            m_values=[1, 2, 5, 10],
            seed=11,
            out_dir=str(tmp_path / name),
            mode="both",
        )
        record = run_experiment(config)
        outputs.append(
            {
                key: (tmp_path / name / f"{key}_tasks.csv").read_bytes()
                for key in ("disagree", "eoc")
            }
        )
        assert record.curves
    assert outputs[0] == outputs[1]


def test_run_experiment_oracle_flat(tmp_path):
    joint_path, tasks_path, pat_path = _experiment_fixture(tmp_path)
    config = ExperimentConfig(
        provider=f"oracle:{joint_path}",
        patterns=f"file:{pat_path}",
        tasks=[str(tasks_path)],
        m_values=[2, 5, 10],
        out_dir=str(tmp_path / "oracle_run"),
    )
    record = run_experiment(config)
    disagree = record.curves["disagree_tasks"]
    assert all(pt["rate"] == 0.0 for pt in disagree["points"])
    eoc = record.curves["eoc_tasks"]
    assert all(
        pt["mean_accuracy"] == eoc["baseline_accuracy"] for pt in eoc["points"]
    )


def test_run_experiment_unknown_provider_fails_before_scoring(tmp_path):
    _, tasks_path, pat_path = _experiment_fixture(tmp_path)
    config = ExperimentConfig(
        provider="nonsense:1",
        patterns=f"file:{pat_path}",
        tasks=[str(tasks_path)],
        m_values=[2],
        out_dir=str(tmp_path / "x"),
    )
    with pytest.raises(ValueError):
        run_experiment(config)


def test_run_experiment_error_budget(tmp_path, monkeypatch):
    joint_path, tasks_path, pat_path = _experiment_fixture(tmp_path)
    import mlmdiag.metrics as metrics_mod

    original = metrics_mod.matrices_for_tasks

    def flaky(tasks, provider, patterns, **kwargs):
        matrices, errors = original(tasks, provider, patterns, **kwargs)
        n_fail = max(1, len(matrices) // 2)
        for i in range(n_fail):
            matrices[i] = None
            errors.append((tasks[i].id, "RuntimeError: injected"))
        return matrices, errors

    monkeypatch.setattr("mlmdiag.harness.matrices_for_tasks", flaky)
    config = ExperimentConfig(
        provider=f"oracle:{joint_path}",
        patterns=f"file:{pat_path}",
        tasks=[str(tasks_path)],
        m_values=[2],
        out_dir=str(tmp_path / "budget"),
    )
    with pytest.raises(RunFailure):
        run_experiment(config)


def test_run_experiment_accuracy_filter(tmp_path):
    # Heavy noise drives a 4-candidate file to ~chance (0.25 <= 0.4, excluded)
    # while a 2-candidate file stays near 0.5 (> 0.4, kept).
    joint = random_joint(Vocabulary.synthetic(4), 6, seed=21)
    joint_path = tmp_path / "j4.npz"
    save_joint(joint, joint_path)
    easy_path = tmp_path / "easy.jsonl"
    hard_path = tmp_path / "hard.jsonl"
    save_tasks(synth_tasks(joint, 100, 2, seed=5), easy_path)
    save_tasks(synth_tasks(joint, 100, 4, seed=6), hard_path)
    pat_path = tmp_path / "p.json"
    pat_path.write_text(
        json.dumps([pattern_to_json(Baseline()), pattern_to_json(KOffset(1))])
    )
    config = ExperimentConfig(
        provider=f"perturbed:25.0:13:{joint_path}",
        patterns=f"file:{pat_path}",
        tasks=[str(easy_path), str(hard_path)],
        m_values=[2],
        out_dir=str(tmp_path / "filtered"),
        accuracy_filter=True,
    )
    record = run_experiment(config)
    assert [e["file"] for e in record.excluded_files] == [str(hard_path)]
    assert record.excluded_files[0]["baseline_accuracy"] <= 0.4
    assert "disagree_easy" in record.curves
    assert "disagree_hard" not in record.curves


def test_oracle_check_passes():
    report = oracle_check(3, 5, n_joints=3, seed=1)
    assert report["pass"] is True
    assert set(report["checks"]) == {
        "condition_normalization",
        "chain_marginalization",
        "pattern_invariance_tv",
        "cross_ratio_residual",
        "perturbed_zero_noise",
    }
