"""Task ingestion, synthetic task generation, and experiment orchestration.

Tasks travel as JSONL (one object per line); curves land as CSV; every run
writes a JSON run record capturing the config, seeds, and outputs so that a
re-run with the same config reproduces the CSVs byte for byte.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ._version import __version__
from .core import (
    MaskPattern,
    TaskInstance,
    TokenSeq,
    ValidationError,
    Vocabulary,
    pattern_from_json,
)

logger = logging.getLogger(__name__)
from .ensemble import AccuracyCurve, eoc_from_matrices
from .metrics import DisagreementCurve, disagreement_from_matrices, matrices_for_tasks
from .oracle import (
    ConsistentProvider,
    JointTable,
    NoiseSpec,
    PerturbedProvider,
    index_to_seq,
    load_joint,
    random_joint,
)
from .patterns import parse_preset_key, preset_patterns
from .providers import Provider


class TaskFileError(ValueError):
    """A task file was unreadable or schema-invalid; names offending lines."""


def load_tasks(path: str | Path) -> list[TaskInstance]:
    """Validated task instances from a JSONL file; fails fast on bad lines."""
    path = Path(path)
    tasks: list[TaskInstance] = []
    problems: list[str] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                tasks.append(TaskInstance.from_json(json.loads(line)))
            except (json.JSONDecodeError, ValidationError, KeyError, TypeError) as err:
                problems.append(f"{path.name}:{lineno}: {err}")
                if len(problems) >= 10:
                    break
    if problems:
        raise TaskFileError("malformed task lines:\n" + "\n".join(problems))
    if not tasks:
        logger.warning("task file %s is empty", path)
    return tasks


def save_tasks(tasks: Sequence[TaskInstance], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for task in tasks:
            fh.write(json.dumps(task.to_json(), separators=(",", ":")) + "\n")


def synth_tasks(
    joint: JointTable, n: int, candidates_per_task: int, seed: int
) -> list[TaskInstance]:
    """Tasks sampled from a joint: context from the length-(L-1) marginal,
    gold candidate = the true conditional argmax at the last position.

    Any accuracy loss measured against these tasks is attributable to the
    provider, never to label noise.
    """
    v, length = joint.vocab.size, joint.length
    if length < 2:
        raise ValueError("joint length must be >= 2 to split context/target")
    if not 2 <= candidates_per_task <= v:
        raise ValueError(f"candidates_per_task must be in [2, {v}]")
    rng = np.random.default_rng(seed)
    table = joint.probs.reshape(v ** (length - 1), v)
    marginal = table.sum(axis=1)
    ctx_indices = rng.choice(marginal.shape[0], size=n, p=marginal)
    tasks = []
    for i, ctx_idx in enumerate(ctx_indices):
        context = index_to_seq(int(ctx_idx), v, length - 1)
        cond = table[int(ctx_idx)]
        gold_tok = int(np.argmax(cond))
        others = [t for t in range(v) if t != gold_tok]
        distractors = rng.choice(others, size=candidates_per_task - 1, replace=False)
        tokens = [gold_tok] + [int(t) for t in distractors]
        order = rng.permutation(candidates_per_task)
        candidates = tuple(TokenSeq((tokens[j],)) for j in order)
        gold = int(np.nonzero(order == 0)[0][0])
        tasks.append(
            TaskInstance(
                id=f"synth-{i:05d}",
                context=TokenSeq(context),
                candidates=candidates,
                gold=gold,
            )
        )
    return tasks


def lambada_candidates(
    provider: Provider,
    context: TokenSeq,
    target_count: int = 5,
    vocab_size: int | None = None,
) -> list[TokenSeq]:
    """Top single tokens under the Baseline conditional; ties by token id.

    ``vocab_size`` may be omitted for providers exposing one (the oracle
    providers do); the capability descriptor does not carry it.
    """
    from .patterns import apply_pattern
    from .core import Baseline

    if target_count < 2:
        raise ValueError("need at least 2 candidates")
    if vocab_size is None:
        vocab_size = getattr(provider, "vocab_size", None)
        if vocab_size is None:
            raise ValueError("vocab_size required for providers that do not expose one")
    query = apply_pattern(context, Baseline())
    singles = [TokenSeq((t,)) for t in range(vocab_size)]
    logs = np.asarray(provider.score_candidates(query, singles))
    order = np.argsort(-logs, kind="stable")
    return [singles[int(i)] for i in order[:target_count]]


# ---------------------------------------------------------------------------
# Provider / pattern spec strings
# ---------------------------------------------------------------------------


def _parse_joint_spec(spec: str) -> JointTable:
    """Either a saved-table path or ``seed=S,v=V,l=L``."""
    if "=" not in spec:
        return load_joint(spec)
    fields = dict(item.split("=", 1) for item in spec.split(","))
    try:
        seed = int(fields["seed"])
        v = int(fields["v"])
        length = int(fields["l"])
    except KeyError as err:
        raise ValueError(f"joint spec needs seed=, v=, l=; missing {err}") from None
    return random_joint(Vocabulary.synthetic(v), length, seed)


def parse_provider_spec(spec: str) -> Provider:
    """``oracle:<path|seed-spec>``, ``perturbed:<sigma>:<seed>[:<joint>]``,
    or ``remote:<url>``.

    The perturbed form defaults its base joint to ``seed=<seed>,v=4,l=8``
    when the third segment is omitted.
    """
    kind, _, rest = spec.partition(":")
    if kind == "oracle":
        return ConsistentProvider(_parse_joint_spec(rest))
    if kind == "perturbed":
        parts = rest.split(":", 2)
        if len(parts) < 2:
            raise ValueError("perturbed spec is perturbed:<sigma>:<seed>[:<joint>]")
        sigma, seed = float(parts[0]), int(parts[1])
        joint_spec = parts[2] if len(parts) == 3 else f"seed={seed},v=4,l=8"
        return PerturbedProvider(_parse_joint_spec(joint_spec), NoiseSpec(sigma, seed))
    if kind == "remote":
        from .remote import RemoteProvider

        return RemoteProvider(rest)
    raise ValueError(f"unknown provider spec: {spec!r}")


def parse_patterns_spec(spec: str) -> list[MaskPattern]:
    """``preset:<model>-<task>`` or ``file:<path>`` (JSON list of patterns)."""
    kind, _, rest = spec.partition(":")
    if kind == "preset":
        return preset_patterns(parse_preset_key(rest))
    if kind == "file":
        with open(rest, "r", encoding="utf-8") as fh:
            return [pattern_from_json(item) for item in json.load(fh)]
    raise ValueError(f"unknown patterns spec: {spec!r}")


def parse_m_range(spec: str) -> list[int]:
    """``A..B`` inclusive, or a comma-separated list."""
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in spec.split(",")]


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def oracle_check(
    vocab_size: int, length: int, n_joints: int, seed: int, tol: float = 1e-9
) -> dict[str, Any]:
    """The oracle invariant suite over fresh random joints; pass/fail report.

    Checks: conditioning normalization, chain marginalization consistency,
    preset-pattern invariance of the consistent provider (total variation),
    cross-ratio residual, and bit-equality of the zero-noise perturbed
    provider with the consistent one.
    """
    from .bigram import infer_eight
    from .oracle import quadruple_conditionals, verify_cross_ratio
    from .patterns import PresetKey, apply_pattern, preset_patterns
    from .providers import score_matrix
    from .seeding import derive_seed
    from .core import BigramQuadruple

    if length < 3:
        raise ValueError("oracle-check needs length >= 3")
    worst = {
        "condition_normalization": 0.0,
        "chain_marginalization": 0.0,
        "pattern_invariance_tv": 0.0,
        "cross_ratio_residual": 0.0,
        "perturbed_zero_noise": 0.0,
    }
    vocab = Vocabulary.synthetic(vocab_size)
    patterns = preset_patterns(PresetKey("ul2", "mmlu"))
    for j in range(n_joints):
        joint = random_joint(vocab, length, derive_seed("oracle-check", seed, j))
        provider = ConsistentProvider(joint)
        rng = np.random.default_rng(derive_seed("oracle-check-ctx", seed, j))
        context = TokenSeq(tuple(int(t) for t in rng.integers(0, vocab_size, length - 1)))

        from .oracle import condition

        assignment = {0: int(context.ids[0])}
        targets = [1, 2]
        dist = condition(joint, assignment, targets)
        worst["condition_normalization"] = max(
            worst["condition_normalization"], abs(float(dist.sum()) - 1.0)
        )
        chained = dist.sum(axis=1)
        single = condition(joint, assignment, [1])
        worst["chain_marginalization"] = max(
            worst["chain_marginalization"], float(np.abs(chained - single).max())
        )

        singles = [TokenSeq((t,)) for t in range(vocab_size)]
        rows = []
        for i, pattern in enumerate(patterns):
            try:
                query = apply_pattern(context, pattern, seed=derive_seed(seed, j, i))
            except Exception:
                continue
            rows.append(np.exp(provider.score_candidates(query, singles)))
        for a in range(len(rows)):
            for b in range(a + 1, len(rows)):
                tv = 0.5 * float(np.abs(rows[a] - rows[b]).sum())
                worst["pattern_invariance_tv"] = max(worst["pattern_invariance_tv"], tv)

        full_context = TokenSeq(tuple(int(t) for t in rng.integers(0, vocab_size, length)))
        slot = int(rng.integers(0, length - 1))
        x11, x12 = (int(t) for t in rng.choice(vocab_size, 2, replace=False))
        x21, x22 = (int(t) for t in rng.choice(vocab_size, 2, replace=False))
        quad = BigramQuadruple(
            context=full_context, slot=slot, x11=x11, x12=x12, x21=x21, x22=x22
        )
        worst["cross_ratio_residual"] = max(
            worst["cross_ratio_residual"], verify_cross_ratio(joint, quad)
        )
        inferred = np.asarray(infer_eight(provider, quad))
        exact = quadruple_conditionals(joint, quad)
        worst["cross_ratio_residual"] = max(
            worst["cross_ratio_residual"], float(np.abs(inferred - exact).max())
        )

        zero = PerturbedProvider(joint, NoiseSpec(sigma=0.0, seed=seed))
        matrix_a = score_matrix(provider, context, patterns, singles, seed=j)
        matrix_b = score_matrix(zero, context, patterns, singles, seed=j)
        worst["perturbed_zero_noise"] = max(
            worst["perturbed_zero_noise"],
            float(np.abs(matrix_a.log_p - matrix_b.log_p).max()),
        )

    checks = {
        name: {"max_deviation": value, "pass": bool(value < tol if name != "perturbed_zero_noise" else value == 0.0)}
        for name, value in worst.items()
    }
    return {
        "vocab": vocab_size,
        "length": length,
        "joints": n_joints,
        "seed": seed,
        "tolerance": tol,
        "checks": checks,
        "pass": all(c["pass"] for c in checks.values()),
    }


@dataclass
class ExperimentConfig:
    provider: str
    patterns: str
    tasks: list[str]
    m_values: list[int]
    seed: int = 0
    out_dir: str = "runs"
    mode: str = "both"  # disagree | eoc | both
    jobs: int = 1
    length_normalize: bool = False
    pooling: str = "max"
    accuracy_filter: bool = False  # drop files with Baseline accuracy <= 0.4
    persist_matrices_limit: int = 10**6
    error_budget: float = 0.01

    def to_json(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "ExperimentConfig":
        return cls(**data)


class RunFailure(RuntimeError):
    """More than the error budget of instances failed, or nothing ran."""


@dataclass
class RunRecord:
    config: dict[str, Any]
    version: str
    curves: dict[str, Any]
    files: dict[str, str]
    excluded_files: list[dict[str, Any]]
    errors: dict[str, list[list[str]]]
    timing_s: float
    matrices: dict[str, Any] | None = None

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


def _fmt(value: float) -> str:
    if isinstance(value, float) and math.isnan(value):
        return "nan"
    return repr(value)


def _write_disagree_csv(path: Path, curve: DisagreementCurve) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m", "rate", "subsets", "instances", "skipped"])
        for pt in curve.points:
            writer.writerow(
                [pt.m, _fmt(pt.rate), pt.subsets_evaluated, pt.instances_counted,
                 pt.instances_dropped]
            )


def _write_eoc_csv(path: Path, curve: AccuracyCurve) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["m", "mean_accuracy", "min_accuracy", "max_accuracy", "baseline_accuracy"]
        )
        for pt in curve.points:
            writer.writerow(
                [pt.m, _fmt(pt.mean_accuracy), _fmt(pt.min_accuracy),
                 _fmt(pt.max_accuracy), _fmt(curve.baseline_accuracy)]
            )


def _curve_json(curve: DisagreementCurve | AccuracyCurve) -> dict[str, Any]:
    return asdict(curve)


def run_experiment(config: ExperimentConfig) -> RunRecord:
    """Execute the configured curves and persist CSV + JSON outputs.

    Per-instance scoring errors are counted and excluded; the run fails when
    more than ``error_budget`` of instances error in any file.
    """
    t0 = time.monotonic()
    provider = parse_provider_spec(config.provider)
    patterns = parse_patterns_spec(config.patterns)
    if config.mode not in ("disagree", "eoc", "both"):
        raise ValueError(f"unknown mode {config.mode!r}")
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    curves: dict[str, Any] = {}
    files: dict[str, str] = {}
    errors: dict[str, list[list[str]]] = {}
    excluded: list[dict[str, Any]] = []
    matrices_json: dict[str, Any] = {}
    micro_matrices = []
    micro_golds = []
    per_file_rates: dict[int, list[float]] = {}
    per_file_accs: dict[int, list[float]] = {}

    for task_path in config.tasks:
        stem = Path(task_path).stem
        tasks = load_tasks(task_path)
        if not tasks:
            excluded.append({"file": task_path, "reason": "empty file"})
            continue
        matrices, errs = matrices_for_tasks(
            tasks,
            provider,
            patterns,
            seed=config.seed,
            jobs=config.jobs,
            length_normalize=config.length_normalize,
        )
        errors[stem] = [list(e) for e in errs]
        if len(errs) > config.error_budget * len(tasks):
            raise RunFailure(
                f"{task_path}: {len(errs)}/{len(tasks)} instances errored "
                f"(budget {config.error_budget:.0%}); first: {errs[0][1]}"
            )
        keep = [(m, t.gold) for m, t in zip(matrices, tasks) if m is not None]
        good, golds = zip(*keep)

        eoc = eoc_from_matrices(
            good, golds, config.m_values, instances_errored=len(errs),
            pooling=config.pooling,
        )
        if config.accuracy_filter and eoc.baseline_accuracy <= 0.4:
            excluded.append(
                {"file": task_path, "reason": "baseline accuracy <= 0.4",
                 "baseline_accuracy": eoc.baseline_accuracy}
            )
            continue

        micro_matrices.extend(good)
        micro_golds.extend(golds)
        total_entries = sum(m.log_p.size for m in good)
        if total_entries <= config.persist_matrices_limit:
            matrices_json[stem] = [m.to_json() for m in good]

        if config.mode in ("disagree", "both"):
            curve = disagreement_from_matrices(
                good, config.m_values, instances_errored=len(errs)
            )
            path = out_dir / f"disagree_{stem}.csv"
            _write_disagree_csv(path, curve)
            curves[f"disagree_{stem}"] = _curve_json(curve)
            files[f"disagree_{stem}"] = str(path)
            for pt in curve.points:
                per_file_rates.setdefault(pt.m, []).append(pt.rate)
        if config.mode in ("eoc", "both"):
            path = out_dir / f"eoc_{stem}.csv"
            _write_eoc_csv(path, eoc)
            curves[f"eoc_{stem}"] = _curve_json(eoc)
            files[f"eoc_{stem}"] = str(path)
            for pt in eoc.points:
                per_file_accs.setdefault(pt.m, []).append(pt.mean_accuracy)

    if not micro_matrices:
        raise RunFailure("no task file produced any scored instance")

    if len(config.tasks) > 1:
        # Micro: pooled instances across files; macro: mean of per-file values.
        if config.mode in ("disagree", "both"):
            micro = disagreement_from_matrices(micro_matrices, config.m_values)
            path = out_dir / "disagree_micro.csv"
            _write_disagree_csv(path, micro)
            curves["disagree_micro"] = _curve_json(micro)
            files["disagree_micro"] = str(path)
            curves["disagree_macro"] = {
                str(m): float(np.mean(rates)) for m, rates in per_file_rates.items()
            }
        if config.mode in ("eoc", "both"):
            micro_eoc = eoc_from_matrices(
                micro_matrices, micro_golds, config.m_values, pooling=config.pooling
            )
            path = out_dir / "eoc_micro.csv"
            _write_eoc_csv(path, micro_eoc)
            curves["eoc_micro"] = _curve_json(micro_eoc)
            files["eoc_micro"] = str(path)
            curves["eoc_macro"] = {
                str(m): float(np.mean(accs)) for m, accs in per_file_accs.items()
            }

    record = RunRecord(
        config=config.to_json(),
        version=__version__,
        curves=curves,
        files=files,
        excluded_files=excluded,
        errors=errors,
        timing_s=time.monotonic() - t0,
        matrices=matrices_json or None,
    )
    with (out_dir / "runrecord.json").open("w", encoding="utf-8") as fh:
        json.dump(record.to_json(), fh, indent=2, sort_keys=True)
    return record
