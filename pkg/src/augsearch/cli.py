"""Command-line surface: search runs, seed sweeps, finalization, augmentation.

Exit codes: 0 success, 2 configuration or input parse error, 3 evaluator
failure beyond the retry budget (partial artifacts are persisted), 4 partial
finalization (fewer distinct policies than requested).

The artifact root comes from ``--out`` when given, otherwise from the
``AUGSEARCH_ARTIFACTS`` environment variable, otherwise ``./artifacts``.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys
import warnings
from datetime import datetime, timezone
from pathlib import Path

import jsonschema
import numpy as np
from PIL import Image

from . import __version__
from .artifacts import (
    RunWriter,
    atomic_write_text,
    final_policy_report,
    load_best_records,
    validate_artifact,
)
from .evaluators import EvaluationError, make_evaluator
from .imageops import apply_policy_minibatch_style, render_contact_sheet
from .policy import (
    PolicyParseError,
    concat_top_policies,
    decode_policy,
    parse_policy,
    serialize_policy,
)
from .search import (
    EvaluatorUnavailableError,
    SearchConfig,
    derive_worker_seeds,
    run_search,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EVALUATOR = 3
EXIT_PARTIAL = 4

CONFIG_ONLY_KEYS = ("evaluator", "workers")


def artifact_root(explicit: str | None) -> Path:
    if explicit:
        return Path(explicit)
    return Path(os.environ.get("AUGSEARCH_ARTIFACTS", "artifacts"))


def load_run_config(path: str) -> dict:
    try:
        text = Path(path).read_text("utf-8")
    except FileNotFoundError:
        raise SystemExit(f"config file not found: {path}") from None
    except OSError as exc:
        raise SystemExit(f"cannot read config file {path}: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SystemExit(
            f"config file {path} is not valid JSON "
            f"(line {exc.lineno} column {exc.colno}: {exc.msg})"
        ) from None
    try:
        validate_artifact("runconfig", raw)
    except Exception as exc:
        raise SystemExit(f"config file {path} is invalid: {exc}") from None
    return raw


def split_config(raw: dict) -> tuple[SearchConfig, str, int]:
    evaluator = raw.get("evaluator", "synthetic:target")
    workers = int(raw.get("workers", 1))
    core = {k: v for k, v in raw.items() if k not in CONFIG_ONLY_KEYS}
    config = SearchConfig.from_dict(core)
    config.validate()
    return config, evaluator, workers


_OVERRIDE_FLAGS = [
    ("step_size", float),
    ("num_directions", int),
    ("noise_std", float),
    ("top_directions", int),
    ("max_iterations", int),
    ("run_seed", int),
    ("table_seed", int),
    ("table_size", int),
    ("reward_threshold", float),
    ("plateau_window", int),
    ("checkpoint_stride", int),
    ("evaluator", str),
    ("workers", int),
]


def add_override_flags(parser: argparse.ArgumentParser) -> None:
    for name, typ in _OVERRIDE_FLAGS:
        parser.add_argument(f"--{name.replace('_', '-')}", type=typ, default=None,
                            dest=name)


def apply_overrides(raw: dict, args: argparse.Namespace) -> dict:
    merged = dict(raw)
    for name, _typ in _OVERRIDE_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    return merged


def default_run_dir(root: Path, run_seed: int) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S")
    base = root / f"run-{stamp}-seed{run_seed:03d}"
    candidate, n = base, 1
    while candidate.exists():
        candidate = base.with_name(f"{base.name}-{n}")
        n += 1
    return candidate


def cmd_search(args: argparse.Namespace) -> int:
    raw = apply_overrides(load_run_config(args.config), args)
    try:
        validate_artifact("runconfig", raw)
        config, evaluator_spec, workers = split_config(raw)
    except (ValueError, jsonschema.ValidationError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(args.out) if args.out else default_run_dir(
        artifact_root(None), config.run_seed)
    worker_seeds = derive_worker_seeds(config.run_seed, workers)

    try:
        evaluator, resolved_spec = make_evaluator(
            evaluator_spec, workers=workers, worker_seeds=worker_seeds)
    except (ValueError, EvaluationError) as exc:
        print(f"cannot start evaluator: {exc}", file=sys.stderr)
        return EXIT_EVALUATOR if isinstance(exc, EvaluationError) else EXIT_CONFIG

    writer = RunWriter(out_dir, config, resolved_spec, workers, worker_seeds)
    writer.write_manifest()
    print(f"run directory: {out_dir}")

    try:
        result = run_search(config, evaluator,
                            checkpoint_sink=writer.checkpoint_sink)
    except EvaluatorUnavailableError as exc:
        state = exc.state
        writer.export_results(state.history)
        best = exc.best
        writer.finalize_manifest(
            status="aborted", iterations=state.iteration,
            best_reward=None if best is None else best.reward,
            stop_reason="evaluator failure", skips=len(state.skips),
            drops=len(state.drops))
        print(f"evaluator failure: {exc}", file=sys.stderr)
        print("partial artifacts persisted", file=sys.stderr)
        return EXIT_EVALUATOR
    finally:
        evaluator.close()

    writer.export_results(result.state.history)
    writer.finalize_manifest(
        status="completed", iterations=result.state.iteration,
        best_reward=result.best_reward, stop_reason=result.stop_reason,
        skips=len(result.state.skips), drops=len(result.state.drops))
    best_str = "n/a" if result.best is None else f"{result.best.reward:.6f}"
    print(f"completed {result.state.iteration} iterations "
          f"({result.stop_reason}); best reward {best_str}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    if args.runs < 1:
        print("--runs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.runs > 1000:
        print("--runs cannot exceed 1000 distinct seeds", file=sys.stderr)
        return EXIT_CONFIG
    load_run_config(args.config)  # fail fast before launching children

    out_dir = Path(args.out) if args.out else artifact_root(None) / "sweep"
    out_dir.mkdir(parents=True, exist_ok=True)

    # Distinct run seeds, reproducible from the sweep seed.
    rng = np.random.Generator(np.random.Philox(key=int(args.sweep_seed)))
    seeds = [int(s) for s in rng.choice(1000, size=args.runs, replace=False)]

    rows = []
    for seed in seeds:
        run_dir = out_dir / f"run-seed{seed:03d}"
        argv = [
            sys.executable, "-m", "augsearch", "search",
            "--config", args.config,
            "--run-seed", str(seed),
            "--out", str(run_dir),
        ]
        proc = subprocess.run(argv, capture_output=True, text=True)
        status = "ok" if proc.returncode == 0 else f"exit{proc.returncode}"
        best_reward, iterations = "", ""
        manifest_path = run_dir / "manifest.json"
        if manifest_path.exists():
            outcome = json.loads(manifest_path.read_text("utf-8")).get("outcome")
            if outcome:
                if outcome.get("best_reward") is not None:
                    best_reward = repr(outcome["best_reward"])
                iterations = str(outcome.get("iterations", ""))
        if proc.returncode != 0:
            sys.stderr.write(proc.stderr)
        rows.append((seed, best_reward, iterations, status))
        print(f"seed {seed:3d}: {status} best={best_reward or 'n/a'}")

    csv_path = out_dir / "sweep.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "best_reward", "iterations", "status"])
        writer.writerows(rows)
    print(f"sweep summary: {csv_path}")
    return EXIT_OK


def cmd_finalize(args: argparse.Namespace) -> int:
    try:
        records = load_best_records(args.run)
    except FileNotFoundError:
        print(f"no best_records.json under {args.run}", file=sys.stderr)
        return EXIT_CONFIG
    except (json.JSONDecodeError, jsonschema.ValidationError, KeyError) as exc:
        print(f"cannot load records from {args.run}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        policy = concat_top_policies(records, k=args.k)
    partial = len(policy.sub_policies) < 5 * args.k

    out_path = Path(args.out) if args.out else Path(args.run) / "final_policy.json"
    text = serialize_policy(policy)
    validate_artifact("policy", json.loads(text))
    atomic_write_text(out_path, text)
    report_path = out_path.with_name("final_policy_report.txt")
    atomic_write_text(report_path, final_policy_report(policy))
    print(f"final policy ({len(policy.sub_policies)} sub-policies): {out_path}")
    print(f"report: {report_path}")
    if partial:
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_decode(args: argparse.Namespace) -> int:
    try:
        raw = json.loads(Path(args.vector).read_text("utf-8"))
    except FileNotFoundError:
        print(f"vector file not found: {args.vector}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        print(f"vector file is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if isinstance(raw, dict) and "vector" in raw:
        raw = raw["vector"]
    try:
        policy = decode_policy(np.asarray(raw, dtype=float))
    except (ValueError, TypeError) as exc:
        print(f"cannot decode vector: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = serialize_policy(policy)
    if args.out:
        atomic_write_text(args.out, text)
        print(f"policy written to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _load_policy_file(path: str):
    try:
        return parse_policy(Path(path).read_text("utf-8"))
    except FileNotFoundError:
        raise SystemExit(f"policy file not found: {path}") from None
    except PolicyParseError as exc:
        raise SystemExit(f"cannot parse policy {path}: {exc}") from None


def _load_image(path: str) -> Image.Image:
    try:
        return Image.open(path).convert("RGB")
    except FileNotFoundError:
        raise SystemExit(f"image not found: {path}") from None
    except OSError as exc:
        raise SystemExit(f"cannot read image {path}: {exc}") from None


def cmd_augment_apply(args: argparse.Namespace) -> int:
    policy = _load_policy_file(args.policy)
    img = _load_image(args.image)
    out = apply_policy_minibatch_style(img, policy, args.seed)
    out.save(args.out)
    print(f"augmented image written to {args.out}")
    return EXIT_OK


def cmd_augment_sheet(args: argparse.Namespace) -> int:
    policy = _load_policy_file(args.policy)
    img = _load_image(args.image)
    sheet = render_contact_sheet(img, policy, args.rows, args.cols, args.seed)
    sheet.save(args.out)
    print(f"contact sheet written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="augsearch",
        description="Search, decode, and apply image augmentation policies.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_search = sub.add_parser("search", help="run one search")
    p_search.add_argument("--config", required=True)
    p_search.add_argument("--out", default=None, help="run directory")
    add_override_flags(p_search)
    p_search.set_defaults(func=cmd_search)

    p_sweep = sub.add_parser("sweep", help="independent runs over distinct seeds")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--runs", type=int, required=True)
    p_sweep.add_argument("--sweep-seed", type=int, default=0)
    p_sweep.add_argument("--out", default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    p_final = sub.add_parser("finalize",
                             help="concatenate the top policies of a run")
    p_final.add_argument("--run", required=True, help="run directory")
    p_final.add_argument("--k", type=int, default=5)
    p_final.add_argument("--out", default=None)
    p_final.set_defaults(func=cmd_finalize)

    p_decode = sub.add_parser("decode", help="vector JSON to policy JSON")
    p_decode.add_argument("--vector", required=True)
    p_decode.add_argument("--out", default=None)
    p_decode.set_defaults(func=cmd_decode)

    p_aug = sub.add_parser("augment", help="apply policies to images")
    aug_sub = p_aug.add_subparsers(dest="augment_command", required=True)

    p_apply = aug_sub.add_parser("apply", help="one seeded application")
    p_apply.add_argument("--policy", required=True)
    p_apply.add_argument("--image", required=True)
    p_apply.add_argument("--seed", type=int, default=0)
    p_apply.add_argument("--out", required=True)
    p_apply.set_defaults(func=cmd_augment_apply)

    p_sheet = aug_sub.add_parser("sheet", help="grid of seeded applications")
    p_sheet.add_argument("--policy", required=True)
    p_sheet.add_argument("--image", required=True)
    p_sheet.add_argument("--rows", type=int, default=4)
    p_sheet.add_argument("--cols", type=int, default=8)
    p_sheet.add_argument("--seed", type=int, default=0)
    p_sheet.add_argument("--out", required=True)
    p_sheet.set_defaults(func=cmd_augment_sheet)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return EXIT_CONFIG
        raise


if __name__ == "__main__":
    sys.exit(main())
