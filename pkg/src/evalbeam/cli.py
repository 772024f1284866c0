"""Command-line interface: run, verify, sweep, trace."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from .backends.http import HttpEvaluationBackend, HttpGenerationBackend, ResponseCache, ServerConfig
from .core import BeamScoreDomain, DecodeConfig, Question, StepProbMode
from .exceptions import ContractViolation
from .executor import DEFAULT_RUNNER_CMD, SubprocessExecutor
from .harness import (
    load_dataset,
    load_spaces,
    run_benchmark,
    scripted_setup,
    sweep,
    verify_sampling,
    write_sweep_csv,
)
from .prompts import FewShotPrompts, builtin_tasks, detect_terminal

_CONFIG_FLOATS = {"lam", "sample_temp", "temp_decay", "gen_temp"}
_CONFIG_INTS = {"beam_size", "rollouts_per_beam", "max_steps", "seed"}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    # flags mirror DecodeConfig field names exactly
    for name in _CONFIG_INTS:
        parser.add_argument(f"--{name}", type=int, default=None)
    for name in _CONFIG_FLOATS:
        parser.add_argument(f"--{name}", type=float, default=None)
    parser.add_argument("--step_prob_mode", choices=[m.value for m in StepProbMode], default=None)
    parser.add_argument("--beam_score_domain", choices=[d.value for d in BeamScoreDomain], default=None)
    parser.add_argument("--dedup_candidates", action="store_true", default=None)
    parser.add_argument("--config", type=Path, default=None, help="config file (JSON or key=value lines)")


def _load_config_file(path: Path) -> dict:
    text = path.read_text(encoding="utf-8").strip()
    if text.startswith("{"):
        return json.loads(text)
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        try:
            out[key.strip()] = json.loads(value.strip())
        except json.JSONDecodeError:
            out[key.strip()] = value.strip()
    return out


def build_config(args: argparse.Namespace) -> DecodeConfig:
    """File values first, CLI flags override."""
    values: dict = {}
    if getattr(args, "config", None) is not None:
        values.update(_load_config_file(args.config))
    field_names = {f.name for f in fields(DecodeConfig)}
    unknown = set(values) - field_names
    if unknown:
        raise ContractViolation(f"unknown config keys: {sorted(unknown)}")
    for name in field_names:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    if "step_prob_mode" in values:
        values["step_prob_mode"] = StepProbMode(values["step_prob_mode"])
    if "beam_score_domain" in values:
        values["beam_score_domain"] = BeamScoreDomain(values["beam_score_domain"])
    return DecodeConfig(**values)


def _http_setup(server: ServerConfig, task: str, cache: ResponseCache | None):
    prompts = FewShotPrompts.for_task(task)
    kind = prompts.task_kind

    def setup(question: Question):
        generator = HttpGenerationBackend(
            server, terminal_detector=lambda text: detect_terminal(text, kind), cache=cache
        )
        evaluator = HttpEvaluationBackend(server, cache=cache)
        return generator, evaluator, prompts

    return setup


def _make_setup(args: argparse.Namespace, config: DecodeConfig):
    if args.space is not None:
        return scripted_setup(load_spaces(args.space), config)
    if args.server is not None:
        if args.task is None:
            raise ContractViolation(f"--task is required with --server; one of {builtin_tasks()}")
        cache = ResponseCache(args.cache) if args.cache is not None else None
        return _http_setup(ServerConfig.from_file(args.server), args.task, cache)
    raise ContractViolation("provide --space (scripted) or --server (HTTP backend)")


def _make_executor(args: argparse.Namespace):
    if getattr(args, "executor_cmd", None):
        return SubprocessExecutor(tuple(args.executor_cmd.split()))
    if getattr(args, "with_executor", False):
        return SubprocessExecutor(DEFAULT_RUNNER_CMD)
    return None


def cmd_run(args: argparse.Namespace) -> int:
    config = build_config(args)
    dataset = load_dataset(args.dataset)
    if dataset.rejects:
        print(f"rejected {len(dataset.rejects)} malformed lines", file=sys.stderr)
        if args.rejects is not None:
            Path(args.rejects).write_text(
                "\n".join(json.dumps(r) for r in dataset.rejects) + "\n", encoding="utf-8"
            )
    executor = _make_executor(args)
    try:
        report = run_benchmark(
            dataset.questions,
            config,
            _make_setup(args, config),
            executor=executor,
            trace_dir=args.trace_dir,
            workers=args.workers,
        )
    finally:
        if executor is not None:
            executor.close()
    payload = json.dumps(report.as_dict(), indent=2, sort_keys=True)
    if args.out is not None:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
    else:
        print(payload)
    print(
        f"instances={len(report.records)} accuracy={report.accuracy:.4f} "
        f"single_chain_accuracy={report.single_chain_accuracy:.4f} "
        f"total_tokens={report.total_tokens} failures={report.failures}",
        file=sys.stderr,
    )
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    config = build_config(args)
    report = verify_sampling(args.space, config, trials=args.trials)
    payload = json.dumps(report.as_dict(), indent=2, sort_keys=True)
    if args.out is not None:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
    for check in report.checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"[{status}] {check.name}: observed={check.observed:.6g} threshold={check.threshold:.6g}")
    return 0 if report.passed else 1


def _parse_vary(specs: list[str]) -> dict[str, list]:
    field_types = {f.name: f for f in fields(DecodeConfig)}
    out: dict[str, list] = {}
    for spec in specs:
        name, _, raw = spec.partition("=")
        name = name.strip()
        if name not in field_types:
            raise ContractViolation(f"unknown config field in --vary: {name}")
        values = []
        for chunk in raw.split(","):
            chunk = chunk.strip()
            if name in _CONFIG_INTS:
                values.append(int(chunk))
            elif name in _CONFIG_FLOATS:
                values.append(float(chunk))
            elif name == "step_prob_mode":
                values.append(StepProbMode(chunk))
            elif name == "beam_score_domain":
                values.append(BeamScoreDomain(chunk))
            elif name == "dedup_candidates":
                values.append(chunk.lower() in ("1", "true", "yes"))
            else:
                values.append(chunk)
        out[name] = values
    return out


def cmd_sweep(args: argparse.Namespace) -> int:
    config = build_config(args)
    dataset = load_dataset(args.dataset)
    vary = _parse_vary(args.vary)
    if args.space is None:
        raise ContractViolation("sweep currently supports scripted spaces (--space)")
    spaces = load_spaces(args.space)
    executor = _make_executor(args)
    try:
        rows = sweep(
            dataset.questions,
            config,
            vary,
            setup_factory=lambda cfg: scripted_setup(spaces, cfg),
            executor=executor,
            workers=args.workers,
        )
    finally:
        if executor is not None:
            executor.close()
    write_sweep_csv(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}", file=sys.stderr)
    return 0


def cmd_trace(args: argparse.Namespace) -> int:
    with open(args.file, "r", encoding="utf-8") as fh:
        for line in fh:
            record = json.loads(line)
            print(f"t={record['t']} tau={record['tau']:.6g} selected={record['selected']}")
            for idx, cand in enumerate(record["candidates"]):
                marker = "*" if idx in record["selected"] else " "
                chain = " | ".join(cand["steps"])
                print(
                    f"  {marker} [{idx:3d}] E={cand['score']:.6g} "
                    f"({cand['status']}, parent={cand['parent']}, rollout={cand['rollout']}) {chain}"
                )
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="evalbeam", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a benchmark over a dataset")
    p_run.add_argument("--dataset", type=Path, required=True)
    p_run.add_argument("--space", type=Path, default=None, help="scripted space JSON")
    p_run.add_argument("--server", type=Path, default=None, help="HTTP server config JSON")
    p_run.add_argument("--task", type=str, default=None, help="built-in prompt task name")
    p_run.add_argument("--cache", type=Path, default=None, help="HTTP response cache file")
    p_run.add_argument("--out", type=Path, default=None)
    p_run.add_argument("--rejects", type=Path, default=None)
    p_run.add_argument("--trace-dir", type=Path, default=None)
    p_run.add_argument("--workers", type=int, default=1)
    p_run.add_argument("--with-executor", action="store_true", help="spawn the program runner")
    p_run.add_argument("--executor-cmd", type=str, default=None)
    _add_config_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_verify = sub.add_parser("verify", help="check sampling against the enumeration oracle")
    p_verify.add_argument("--space", type=Path, required=True)
    p_verify.add_argument("--trials", type=int, default=100_000)
    p_verify.add_argument("--out", type=Path, default=None)
    _add_config_flags(p_verify)
    p_verify.set_defaults(func=cmd_verify)

    p_sweep = sub.add_parser("sweep", help="grid over config fields, CSV out")
    p_sweep.add_argument("--dataset", type=Path, required=True)
    p_sweep.add_argument("--space", type=Path, default=None)
    p_sweep.add_argument("--vary", action="append", required=True, metavar="FIELD=V1,V2,...")
    p_sweep.add_argument("--out", type=Path, required=True)
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.add_argument("--with-executor", action="store_true")
    p_sweep.add_argument("--executor-cmd", type=str, default=None)
    _add_config_flags(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_trace = sub.add_parser("trace", help="pretty-print a run trace")
    p_trace.add_argument("--file", type=Path, required=True)
    p_trace.set_defaults(func=cmd_trace)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
