"""Codec between normalized 30-dim vectors and augmentation policies.

A search vector lives in [0,1]^30 and decodes into five sub-policies of two
operations each. Every consecutive triple ``(a0, a1, a2)`` becomes one
operation:

* kind: the interval [0,1] is split into 16 equal buckets and ``a0`` picks
  one, i.e. ``min(floor(16 * a0), 15)``. The clamp makes the decode total at
  the ``a0 = 1.0`` boundary (sigmoid outputs never reach it, parsed inputs
  can).
* probability: ``a1`` verbatim.
* magnitude: affine map ``a2 * (max - min) + min`` into the kind's physical
  range. Kinds flagged magnitude-free decode magnitude 0 and ignore it.

The operation vocabulary (16 kinds, frozen order) and the per-kind ranges
live in ``data/magnitude_ranges.json`` so they can be audited without a code
change.

Canonical policy files are JSON with fixed field order and probabilities and
magnitudes printed as two-decimal fixed point; that is the storage precision
for published policies, full precision stays in checkpoints.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

NUM_KINDS = 16
SUBPOLICIES_PER_POLICY = 5
FINAL_SUBPOLICY_COUNT = 25


class PolicyParseError(ValueError):
    """Raised for malformed policy text; the message names the location."""


@dataclass(frozen=True)
class KindRange:
    name: str
    min: float
    max: float
    unit: str
    magnitude_free: bool
    neutral: float | None


class MagnitudeRangeTable:
    """Per-kind magnitude ranges, index-aligned with the canonical kind order."""

    def __init__(self, kinds: Sequence[KindRange]):
        if len(kinds) != NUM_KINDS:
            raise ValueError(f"expected {NUM_KINDS} kinds, got {len(kinds)}")
        for k in kinds:
            if k.min > k.max:
                raise ValueError(f"{k.name}: min {k.min} > max {k.max}")
        self.kinds = tuple(kinds)
        self._index = {k.name: i for i, k in enumerate(kinds)}
        if len(self._index) != NUM_KINDS:
            raise ValueError("kind names must be unique")

    def __getitem__(self, kind: int) -> KindRange:
        return self.kinds[kind]

    def index_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown operation kind {name!r}") from None

    def name_of(self, kind: int) -> str:
        return self.kinds[kind].name


_DEFAULT_RANGES: MagnitudeRangeTable | None = None


def load_range_table(path: str | None = None) -> MagnitudeRangeTable:
    """Load a range table from a JSON file (the packaged one by default)."""
    if path is None:
        text = (
            resources.files("augsearch").joinpath("data/magnitude_ranges.json")
        ).read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    raw = json.loads(text)
    kinds = [
        KindRange(
            name=entry["name"],
            min=float(entry["min"]),
            max=float(entry["max"]),
            unit=entry["unit"],
            magnitude_free=bool(entry["magnitude_free"]),
            neutral=None if entry.get("neutral") is None else float(entry["neutral"]),
        )
        for entry in raw["kinds"]
    ]
    return MagnitudeRangeTable(kinds)


def default_ranges() -> MagnitudeRangeTable:
    global _DEFAULT_RANGES
    if _DEFAULT_RANGES is None:
        _DEFAULT_RANGES = load_range_table()
    return _DEFAULT_RANGES


@dataclass(frozen=True)
class OperationSpec:
    """One image operation: kind id, firing probability, physical magnitude."""

    kind: int
    probability: float
    magnitude: float

    def name(self, ranges: MagnitudeRangeTable | None = None) -> str:
        return (ranges or default_ranges()).name_of(self.kind)


@dataclass(frozen=True)
class SubPolicy:
    """Two operations applied in order: ``first`` then ``second``."""

    first: OperationSpec
    second: OperationSpec

    @property
    def operations(self) -> tuple[OperationSpec, OperationSpec]:
        return (self.first, self.second)


@dataclass(frozen=True)
class Policy:
    sub_policies: tuple[SubPolicy, ...]

    def __len__(self) -> int:
        return len(self.sub_policies)


def decode_triple(a: Sequence[float], ranges: MagnitudeRangeTable | None = None) -> OperationSpec:
    """Decode one (kind, probability, magnitude) triple from [0,1]^3."""
    ranges = ranges or default_ranges()
    if len(a) != 3:
        raise ValueError(f"expected 3 coordinates, got {len(a)}")
    a0, a1, a2 = (float(x) for x in a)
    for v in (a0, a1, a2):
        if not (0.0 <= v <= 1.0):
            raise ValueError(f"coordinate {v} outside [0, 1]")
    kind = min(int(np.floor(a0 * NUM_KINDS)), NUM_KINDS - 1)
    rng = ranges[kind]
    if rng.magnitude_free:
        magnitude = 0.0
    else:
        magnitude = a2 * (rng.max - rng.min) + rng.min
    return OperationSpec(kind=kind, probability=a1, magnitude=magnitude)


def decode_policy(v: Sequence[float], ranges: MagnitudeRangeTable | None = None) -> Policy:
    """Decode a normalized 30-vector into five sub-policies.

    Triples ``2i`` and ``2i + 1`` form sub-policy ``i``; ordering is
    preserved and each triple decodes independently.
    """
    vec = np.asarray(v, dtype=float)
    if vec.shape != (SUBPOLICIES_PER_POLICY * 6,):
        raise ValueError(f"expected a 30-dim vector, got shape {vec.shape}")
    ops = [decode_triple(vec[3 * t : 3 * t + 3], ranges) for t in range(10)]
    subs = tuple(
        SubPolicy(first=ops[2 * i], second=ops[2 * i + 1])
        for i in range(SUBPOLICIES_PER_POLICY)
    )
    return Policy(sub_policies=subs)


def _format_op(op: OperationSpec, ranges: MagnitudeRangeTable) -> str:
    name = ranges.name_of(op.kind)
    return (
        f'{{"kind": "{name}", "p": {op.probability:.2f}, '
        f'"magnitude": {op.magnitude:.2f}}}'
    )


def serialize_policy(p: Policy, ranges: MagnitudeRangeTable | None = None) -> str:
    """Canonical text form: fixed field order, two-decimal p and magnitude.

    Byte-stable for a given policy, so it doubles as the dedup key when
    concatenating top policies.
    """
    ranges = ranges or default_ranges()
    lines = []
    for sp in p.sub_policies:
        lines.append(
            f'    {{"op1": {_format_op(sp.first, ranges)}, '
            f'"op2": {_format_op(sp.second, ranges)}}}'
        )
    body = ",\n".join(lines)
    return '{\n  "sub_policies": [\n' + body + "\n  ]\n}\n"


def _parse_op(obj: object, where: str, ranges: MagnitudeRangeTable) -> OperationSpec:
    if not isinstance(obj, dict):
        raise PolicyParseError(f"{where}: expected an object")
    for field in ("kind", "p", "magnitude"):
        if field not in obj:
            raise PolicyParseError(f"{where}: missing field {field!r}")
    try:
        kind = ranges.index_of(obj["kind"])
    except KeyError as exc:
        raise PolicyParseError(f"{where}.kind: {exc.args[0]}") from None
    p = obj["p"]
    mag = obj["magnitude"]
    if not isinstance(p, (int, float)) or not (0.0 <= float(p) <= 1.0):
        raise PolicyParseError(f"{where}.p: {p!r} is not a probability in [0, 1]")
    if not isinstance(mag, (int, float)):
        raise PolicyParseError(f"{where}.magnitude: {mag!r} is not a number")
    rng = ranges[kind]
    if not rng.magnitude_free:
        # Allow half a storage ulp of slack: canonical files round to 2 decimals.
        if not (rng.min - 0.005 <= float(mag) <= rng.max + 0.005):
            raise PolicyParseError(
                f"{where}.magnitude: {mag} outside [{rng.min}, {rng.max}] for {obj['kind']}"
            )
    return OperationSpec(kind=kind, probability=float(p), magnitude=float(mag))


def parse_policy(
    text: str,
    ranges: MagnitudeRangeTable | None = None,
    allow_partial: bool = False,
) -> Policy:
    """Parse a policy file. Strict by default: 5 or 25 sub-policies.

    ``allow_partial`` admits other lengths so that best-effort artifacts from
    a short history can still be read back.
    """
    ranges = ranges or default_ranges()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PolicyParseError(
            f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from None
    if not isinstance(raw, dict) or "sub_policies" not in raw:
        raise PolicyParseError("top level: expected an object with 'sub_policies'")
    subs_raw = raw["sub_policies"]
    if not isinstance(subs_raw, list):
        raise PolicyParseError("sub_policies: expected a list")
    n = len(subs_raw)
    if not allow_partial and n not in (SUBPOLICIES_PER_POLICY, FINAL_SUBPOLICY_COUNT):
        raise PolicyParseError(
            f"sub_policies: expected 5 or 25 sub-policies, got {n}"
        )
    if n == 0:
        raise PolicyParseError("sub_policies: empty")
    subs = []
    for i, sp in enumerate(subs_raw):
        where = f"sub_policies[{i}]"
        if not isinstance(sp, dict) or "op1" not in sp or "op2" not in sp:
            raise PolicyParseError(f"{where}: expected an object with op1 and op2")
        subs.append(
            SubPolicy(
                first=_parse_op(sp["op1"], where + ".op1", ranges),
                second=_parse_op(sp["op2"], where + ".op2", ranges),
            )
        )
    return Policy(sub_policies=tuple(subs))


def concat_top_policies(
    records: Iterable,
    k: int = SUBPOLICIES_PER_POLICY,
    ranges: MagnitudeRangeTable | None = None,
) -> Policy:
    """Concatenate the k highest-reward distinct policies into one.

    ``records`` must expose ``reward`` and ``normalized_vector`` (any reward
    record does). They are ordered by reward, best first, with deterministic
    tie-breaks, then deduplicated by canonical serialized form; each survivor
    contributes its five sub-policies in that order. Near-duplicates that
    differ in any printed digit are kept: diversity is the point of the
    concatenated policy.

    With fewer than ``k`` distinct policies the result is partial and a
    warning is emitted.
    """
    ranges = ranges or default_ranges()

    def order_key(r):
        direction = getattr(r, "direction", None)
        return (
            -r.reward,
            getattr(r, "iteration", 0),
            getattr(direction, "offset", 0),
            getattr(r, "sign", ""),
        )

    ordered = sorted(records, key=order_key)
    seen: set[str] = set()
    chosen: list[Policy] = []
    for rec in ordered:
        pol = decode_policy(rec.normalized_vector, ranges)
        key = serialize_policy(pol, ranges)
        if key in seen:
            continue
        seen.add(key)
        chosen.append(pol)
        if len(chosen) == k:
            break
    if len(chosen) < k:
        warnings.warn(
            f"only {len(chosen)} distinct policies available, wanted {k}; "
            "returning a partial concatenation",
            stacklevel=2,
        )
    subs: list[SubPolicy] = []
    for pol in chosen:
        subs.extend(pol.sub_policies)
    return Policy(sub_policies=tuple(subs))
