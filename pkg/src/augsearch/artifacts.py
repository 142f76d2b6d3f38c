"""Run artifacts: manifest, per-iteration checkpoints, best-record exports.

Everything a run writes is JSON with a schema shipped in ``data/schemas``;
``validate_artifact`` checks any payload against its schema. Files are
written atomically (temp file + rename) so a crash never leaves a torn
manifest behind.

The parameter vector is stored as text with 30 decimal digits, which is more
than enough to reparse the exact float64 bits; reward records keep full
float precision. Checkpoints carry no timestamps, so identically seeded runs
produce byte-identical checkpoint sequences.
"""

from __future__ import annotations

import json
import os
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .policy import MagnitudeRangeTable, Policy, decode_policy, default_ranges, serialize_policy
from .search import RewardRecord, SearchConfig

CHECKPOINT_BEST_COUNT = 8
EXPORT_BEST_COUNT = 32

_SCHEMAS: dict[str, dict] = {}


def _schema(name: str) -> dict:
    if name not in _SCHEMAS:
        text = (
            resources.files("augsearch").joinpath(f"data/schemas/{name}.schema.json")
        ).read_text("utf-8")
        _SCHEMAS[name] = json.loads(text)
    return _SCHEMAS[name]


def validate_artifact(kind: str, payload: dict) -> None:
    """Raise jsonschema.ValidationError if payload does not match its schema.

    Kinds: runconfig, manifest, checkpoint, best_records, policy.
    """
    jsonschema.validate(payload, _schema(kind))


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def dump_json(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def format_vector_text(m: np.ndarray) -> list[str]:
    """Vector coordinates as 30-decimal scientific text (bit-faithful)."""
    return [format(float(x), ".30e") for x in m]


def parse_vector_text(items: list[str]) -> np.ndarray:
    return np.array([float(x) for x in items], dtype=float)


def record_payload(rec: RewardRecord) -> dict:
    return {
        "iteration": int(rec.iteration),
        "direction_offset": int(rec.direction.offset),
        "direction_dim": int(rec.direction.dim),
        "sign": rec.sign,
        "reward": float(rec.reward),
        "vector": [float(x) for x in rec.normalized_vector],
    }


def top_records(history: list[RewardRecord], count: int) -> list[RewardRecord]:
    ordered = sorted(
        history,
        key=lambda r: (-r.reward, r.iteration, r.direction.offset, r.sign),
    )
    return ordered[:count]


class RunWriter:
    """Owns one run directory: manifest at start, checkpoints, final exports."""

    def __init__(self, out_dir: str | Path, config: SearchConfig,
                 evaluator_spec: str, workers: int,
                 worker_seeds: list[int],
                 ranges: MagnitudeRangeTable | None = None):
        self.out_dir = Path(out_dir)
        self.checkpoint_dir = self.out_dir / "checkpoints"
        self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.evaluator_spec = evaluator_spec
        self.workers = workers
        self.worker_seeds = worker_seeds
        self.ranges = ranges or default_ranges()
        self._manifest = {
            "artifact": "run-manifest",
            "code_version": __version__,
            "config": config.to_dict(),
            "evaluator": evaluator_spec,
            "workers": int(workers),
            "seeds": {
                "run_seed": int(config.run_seed),
                "table_seed": int(config.table_seed),
                "worker_seeds": [int(s) for s in worker_seeds],
            },
            "started_at": utc_now(),
            "finished_at": None,
            "outcome": None,
        }

    @property
    def manifest_path(self) -> Path:
        return self.out_dir / "manifest.json"

    def write_manifest(self) -> None:
        validate_artifact("manifest", self._manifest)
        atomic_write_text(self.manifest_path, dump_json(self._manifest))

    def finalize_manifest(self, status: str, iterations: int,
                          best_reward: float | None, stop_reason: str,
                          skips: int, drops: int) -> None:
        self._manifest["finished_at"] = utc_now()
        self._manifest["outcome"] = {
            "status": status,
            "iterations": int(iterations),
            "best_reward": None if best_reward is None else float(best_reward),
            "stop_reason": stop_reason,
            "skips": int(skips),
            "drops": int(drops),
        }
        self.write_manifest()

    def checkpoint_sink(self, loop) -> None:
        """Checkpoint callback for run_search; writes one file per stride hit."""
        state = loop.state
        payload = {
            "artifact": "checkpoint",
            "iteration": int(state.iteration),
            "config": self.config.to_dict(),
            "m": format_vector_text(state.M),
            "best": [record_payload(r)
                     for r in top_records(state.history, CHECKPOINT_BEST_COUNT)],
            "skips": len(state.skips),
            "drops": len(state.drops),
        }
        validate_artifact("checkpoint", payload)
        path = self.checkpoint_dir / f"checkpoint_{state.iteration:06d}.json"
        atomic_write_text(path, dump_json(payload))

    def export_results(self, history: list[RewardRecord]) -> None:
        """Write best_records.json plus the canonical best-policy file."""
        best = top_records(history, EXPORT_BEST_COUNT)
        payload = {
            "artifact": "best-records",
            "records": [record_payload(r) for r in best],
        }
        validate_artifact("best_records", payload)
        atomic_write_text(self.out_dir / "best_records.json", dump_json(payload))
        if best:
            policy = decode_policy(best[0].normalized_vector, self.ranges)
            text = serialize_policy(policy, self.ranges)
            validate_artifact("policy", json.loads(text))
            atomic_write_text(self.out_dir / "best_policy.json", text)


def load_best_records(run_dir: str | Path) -> list[RewardRecord]:
    """Reload exported best records (vectors at full precision)."""
    from .noise import DirectionHandle

    path = Path(run_dir) / "best_records.json"
    payload = json.loads(path.read_text("utf-8"))
    validate_artifact("best_records", payload)
    records = []
    for raw in payload["records"]:
        records.append(RewardRecord(
            iteration=raw["iteration"],
            direction=DirectionHandle(raw["direction_offset"], raw["direction_dim"]),
            sign=raw["sign"],
            normalized_vector=np.array(raw["vector"], dtype=float),
            reward=raw["reward"],
        ))
    return records


def probability_histogram(policy: Policy, bins: int = 10) -> list[int]:
    """Histogram of all operation probabilities over [0, 1]."""
    probs = [op.probability for sp in policy.sub_policies for op in sp.operations]
    counts, _ = np.histogram(probs, bins=bins, range=(0.0, 1.0))
    return [int(c) for c in counts]


def final_policy_report(policy: Policy, ranges: MagnitudeRangeTable | None = None,
                        near_zero: float = 0.05) -> str:
    """Human-readable summary of a concatenated policy.

    Reports the probability histogram and how many operation probabilities
    sit near zero; a healthy concatenated policy should have few of those,
    and this makes that visible as a metric rather than an enforced rule.
    """
    ranges = ranges or default_ranges()
    probs = [op.probability for sp in policy.sub_policies for op in sp.operations]
    hist = probability_histogram(policy)
    lines = [
        f"sub-policies: {len(policy.sub_policies)}",
        f"operations: {len(probs)}",
        f"probabilities near zero (< {near_zero:.2f}): "
        f"{sum(1 for p in probs if p < near_zero)}",
        "probability histogram over [0, 1], 10 bins:",
    ]
    for i, count in enumerate(hist):
        lo, hi = i / 10, (i + 1) / 10
        lines.append(f"  [{lo:.1f}, {hi:.1f}): {'#' * count} {count}")
    kind_counts: dict[str, int] = {}
    for sp in policy.sub_policies:
        for op in sp.operations:
            name = ranges.name_of(op.kind)
            kind_counts[name] = kind_counts.get(name, 0) + 1
    lines.append("operation kinds used:")
    for name in sorted(kind_counts, key=lambda n: (-kind_counts[n], n)):
        lines.append(f"  {name}: {kind_counts[name]}")
    return "\n".join(lines) + "\n"
