"""Umbrella command line: count, oracle-check, disagree, eoc, bigram, synth, serve-check."""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from ._version import __version__
from .bigram import generate_quadruples, provider_topk_generator, quadruple_stats
from .core import BigramQuadruple, TokenSeq
from .counting import count_report
from .harness import (
    ExperimentConfig,
    load_tasks,
    parse_provider_spec,
    parse_m_range,
    run_experiment,
    save_tasks,
    synth_tasks,
)

ENDPOINT_ENV = "MLMDIAG_ENDPOINT"


@click.group()
@click.version_option(version=__version__)
def main() -> None:
    """Masked-LM conditional-consistency diagnostics."""


@main.command()
@click.option("--vocab", "v", type=int, required=True, help="Vocabulary size |V|.")
@click.option("--len", "l", type=int, required=True, help="Sequence length L.")
@click.option("--k", type=int, default=1, show_default=True, help="Masked-token count.")
def count(v: int, l: int, k: int) -> None:
    """Exact joint-dof vs free-conditional counts as JSON."""
    click.echo(json.dumps(count_report(v, l, k).to_json()))


@main.command("oracle-check")
@click.option("--vocab", "v", type=int, default=3, show_default=True)
@click.option("--len", "l", type=int, default=6, show_default=True)
@click.option("--joints", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def oracle_check_cmd(v: int, l: int, joints: int, seed: int) -> None:
    """Run the oracle invariant suite; exits nonzero on any failure."""
    from .harness import oracle_check

    report = oracle_check(v, l, joints, seed)
    click.echo(json.dumps(report, indent=2, sort_keys=True))
    if not report["pass"]:
        sys.exit(1)


def _resolve_provider(spec: str):
    if spec.startswith("remote:") and os.environ.get(ENDPOINT_ENV):
        spec = "remote:" + os.environ[ENDPOINT_ENV]
    return spec


_common = [
    click.option("--tasks", "task_paths", multiple=True, required=True,
                 type=click.Path(exists=True), help="Task JSONL file(s)."),
    click.option("--provider", required=True,
                 help="oracle:<path|seed=S,v=V,l=L> | perturbed:<sigma>:<seed>[:<joint>] "
                      "| remote:<url>"),
    click.option("--patterns", default="preset:ul2-mmlu", show_default=True,
                 help="preset:<model>-<task> or file:<path>."),
    click.option("--m", "m_spec", default="2..10", show_default=True,
                 help="Subset sizes, A..B or comma list."),
    click.option("--seed", type=int, default=0, show_default=True),
    click.option("--jobs", type=int, default=1, show_default=True),
    click.option("--out", "out_dir", default="runs", show_default=True),
    click.option("--length-normalize", is_flag=True,
                 help="Score candidates by average per-token log-prob."),
    click.option("--accuracy-filter", is_flag=True,
                 help="Drop task files whose Baseline accuracy is <= 0.4."),
]


def _with_common(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


def _run(mode: str, task_paths, provider, patterns, m_spec, seed, jobs, out_dir,
         length_normalize, accuracy_filter, pooling="max") -> None:
    config = ExperimentConfig(
        provider=_resolve_provider(provider),
        patterns=patterns,
        tasks=list(task_paths),
        m_values=parse_m_range(m_spec),
        seed=seed,
        jobs=jobs,
        out_dir=out_dir,
        mode=mode,
        length_normalize=length_normalize,
        accuracy_filter=accuracy_filter,
        pooling=pooling,
    )
    record = run_experiment(config)
    click.echo(json.dumps({"out_dir": out_dir, "files": record.files}, indent=2))


@main.command()
@_with_common
def disagree(**kwargs) -> None:
    """Disagreement-rate curve over pattern subsets, CSV per task file."""
    _run("disagree", **kwargs)


@main.command()
@_with_common
@click.option("--pooling", type=click.Choice(["max", "mean"]), default="max",
              show_default=True, help="Ensemble pooling rule.")
def eoc(pooling: str, **kwargs) -> None:
    """Ensemble-of-conditionals accuracy curve, CSV per task file."""
    _run("eoc", pooling=pooling, **kwargs)


@main.command()
@click.option("--quads", required=True, type=click.Path(exists=True),
              help="Quadruple JSONL file.")
@click.option("--provider", required=True)
@click.option("--out", "out_path", default=None, help="Write stats JSON here too.")
@click.option("--pairwise-normalize", is_flag=True,
              help="Renormalize each conditional over the two relevant candidates.")
@click.option("--both-masked", is_flag=True,
              help="Literal two-mask extraction (comparison mode).")
def bigram(quads: str, provider: str, out_path: str | None,
           pairwise_normalize: bool, both_masked: bool) -> None:
    """Cross-ratio gap statistics over a quadruple file."""
    backend = parse_provider_spec(_resolve_provider(provider))
    quadruples = []
    with open(quads, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                quadruples.append(BigramQuadruple.from_json(json.loads(line)))
    stats = quadruple_stats(
        quadruples, backend,
        pairwise_normalize=pairwise_normalize, both_masked=both_masked,
    )
    payload = json.dumps(stats.to_json(), indent=2, sort_keys=True)
    click.echo(payload)
    if out_path:
        Path(out_path).write_text(payload + "\n", encoding="utf-8")


@main.command()
@click.option("--provider", required=True, help="An oracle:<...> provider spec.")
@click.option("--n", type=int, default=100, show_default=True)
@click.option("--candidates", type=int, default=4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True)
@click.option("--quads", "emit_quads", is_flag=True,
              help="Emit bigram quadruples instead of tasks.")
def synth(provider: str, n: int, candidates: int, seed: int, out_path: str,
          emit_quads: bool) -> None:
    """Generate synthetic tasks (or quadruples) from an oracle joint."""
    backend = parse_provider_spec(provider)
    joint = getattr(backend, "joint", None)
    if joint is None:
        raise click.UsageError("synth requires an oracle-backed provider spec")
    if emit_quads:
        corpus = synth_corpus(joint, n, seed)
        quadruples = generate_quadruples(
            corpus,
            provider_topk_generator(backend, joint.vocab.size, k=2),
            max_count=n,
            seed=seed,
        )
        with open(out_path, "w", encoding="utf-8") as fh:
            for q in quadruples:
                fh.write(json.dumps(q.to_json(), separators=(",", ":")) + "\n")
        click.echo(f"wrote {len(quadruples)} quadruples to {out_path}")
    else:
        tasks = synth_tasks(joint, n, candidates, seed)
        save_tasks(tasks, out_path)
        click.echo(f"wrote {len(tasks)} tasks to {out_path}")


def synth_corpus(joint, n: int, seed: int) -> list[TokenSeq]:
    """Sample full-length sequences from a joint, for quadruple mining."""
    import numpy as np

    rng = np.random.default_rng(seed)
    idx = rng.choice(joint.probs.shape[0], size=n, p=joint.probs)
    from .oracle import index_to_seq

    return [TokenSeq(index_to_seq(int(i), joint.vocab.size, joint.length)) for i in idx]


@main.command("serve-check")
@click.option("--endpoint", default=None, help=f"Server URL (or ${ENDPOINT_ENV}).")
def serve_check(endpoint: str | None) -> None:
    """Probe a scoring server: /v1/info plus a minimal /v1/score round trip."""
    from .remote import ScoreRequest, fetch_info, remote_score

    endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
    if not endpoint:
        raise click.UsageError(f"--endpoint or ${ENDPOINT_ENV} required")
    report: dict = {"endpoint": endpoint}
    try:
        info = fetch_info(endpoint)
        report["info"] = {"model_id": info.model_id, "max_len": info.max_len,
                          "styles": list(info.styles)}
        request = ScoreRequest(
            prompt_prefix="",
            encoder_tokens=(5, 6, 7, -1),
            decoder_prefix=(),
            candidates=((5,), (6,)),
        )
        response = remote_score(endpoint, request, retries=0)
        report["score"] = {"log_probs": list(response.log_probs),
                           "model_id": response.model_id}
        report["pass"] = True
    except Exception as err:  # noqa: BLE001 - CLI boundary
        report["pass"] = False
        report["error"] = f"{type(err).__name__}: {err}"
    click.echo(json.dumps(report, indent=2, sort_keys=True))
    if not report["pass"]:
        sys.exit(1)


if __name__ == "__main__":
    main()
