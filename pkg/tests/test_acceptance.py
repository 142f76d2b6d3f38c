"""Acceptance suite: one test per release criterion, one PASS line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the criterion
lines. Each test pins the tolerance and runtime budget it must meet.
"""

import json
import math
import random
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from augsearch.cli import main
from augsearch.evaluators import (
    ConstantEvaluator,
    SyntheticTarget,
    TargetMatchingEvaluator,
    spawn_external,
)
from augsearch.noise import DirectionHandle, build_table
from augsearch.policy import (
    KindRange,
    MagnitudeRangeTable,
    OperationSpec,
    Policy,
    SubPolicy,
    concat_top_policies,
    decode_policy,
    decode_triple,
    default_ranges,
    parse_policy,
    serialize_policy,
)
from augsearch.search import (
    DirectionOutcome,
    SearchConfig,
    init_state,
    run_search,
    update_step,
)
from augsearch.imageops import apply_operation

STUB = Path(__file__).with_name("stub_worker.py")
RANGES = default_ranges()


def report(name, elapsed, limit, detail=""):
    assert elapsed < limit, f"{name}: took {elapsed:.2f}s, budget {limit}s"
    suffix = f" ({detail})" if detail else ""
    print(f"PASS {name}: {elapsed:.2f}s < {limit:.0f}s{suffix}")


def test_update_rule_oracle():
    """100 random instances match a direct transcription to 1e-12, under 1s."""
    t0 = time.perf_counter()
    rng = random.Random(123)
    table = build_table(99, 30 * 64)
    worst = 0.0
    for _ in range(100):
        n = rng.randint(1, 8)
        b = rng.randint(1, n)
        cfg = SearchConfig(step_size=rng.uniform(0.001, 0.1), num_directions=n,
                           noise_std=0.03, top_directions=b, max_iterations=1,
                           run_seed=0, table_seed=99, table_size=30 * 64)
        state = init_state(cfg)
        state.M = np.array([rng.uniform(-2, 2) for _ in range(30)])
        m_before = list(state.M)
        offsets = rng.sample(range(0, 30 * 63), b)
        top = [DirectionOutcome(k, DirectionHandle(offsets[k], 30),
                                rng.uniform(-5, 5), rng.uniform(-5, 5))
               for k in range(b)]
        update_step(state, cfg, top, table, expected_b=b)

        # independent transcription: plain floats, scalar loops, math.sqrt
        rewards = [o.reward_plus for o in top] + [o.reward_minus for o in top]
        mean = sum(rewards) / (2 * b)
        sigma = math.sqrt(sum((r - mean) ** 2 for r in rewards) / (2 * b))
        deltas = [list(table.slice(o.handle)) for o in top]
        expected = []
        for i in range(30):
            acc = 0.0
            for k in range(b):
                acc += (top[k].reward_plus - top[k].reward_minus) * deltas[k][i]
            expected.append(m_before[i] + cfg.step_size / (b * sigma) * acc)
        worst = max(worst, max(abs(a - e) for a, e in zip(state.M, expected)))
    assert worst <= 1e-12, f"worst coordinate deviation {worst:.3e}"
    report("update-rule oracle", time.perf_counter() - t0, 1.0,
           f"worst deviation {worst:.2e}")


def test_synthetic_recovery():
    """Default loop recovers a hidden target: best > -0.5 in 300 iterations."""
    t0 = time.perf_counter()
    cfg = SearchConfig(step_size=0.02, num_directions=8, noise_std=0.03,
                       top_directions=4, max_iterations=300, run_seed=7,
                       table_seed=0)
    result = run_search(cfg, TargetMatchingEvaluator(SyntheticTarget.from_seed(101)))
    elapsed = time.perf_counter() - t0

    assert result.state.iteration == 300
    assert result.best_reward > -0.5, f"best reward {result.best_reward}"

    per_iter = {}
    for rec in result.state.history:
        per_iter[rec.iteration] = max(per_iter.get(rec.iteration, -np.inf),
                                      rec.reward)
    running, best = [], -np.inf
    for j in sorted(per_iter):
        best = max(best, per_iter[j])
        running.append(best)
    assert all(b >= a for a, b in zip(running, running[1:]))
    assert running[0] < -5.0  # starts near -7.5 for a random interior target
    report("synthetic recovery", elapsed, 60.0,
           f"best {result.best_reward:.3f} from {running[0]:.3f}")


def test_determinism_from_manifest(tmp_path):
    """Re-running a manifest reproduces every checkpoint byte for byte."""
    t0 = time.perf_counter()
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({
        "step_size": 0.02, "num_directions": 8, "noise_std": 0.03,
        "top_directions": 4, "max_iterations": 300, "run_seed": 7,
        "table_seed": 0, "table_size": 1 << 20,
        "evaluator": "synthetic:target:101", "workers": 1,
    }))
    run1 = tmp_path / "run1"
    assert main(["search", "--config", str(cfg_path), "--out", str(run1)]) == 0

    # second run driven by the first run's manifest
    manifest = json.loads((run1 / "manifest.json").read_text())
    cfg2 = {k: v for k, v in manifest["config"].items() if v is not None}
    cfg2["evaluator"] = manifest["evaluator"]
    cfg2["workers"] = manifest["workers"]
    cfg2_path = tmp_path / "from_manifest.json"
    cfg2_path.write_text(json.dumps(cfg2))
    run2 = tmp_path / "run2"
    assert main(["search", "--config", str(cfg2_path), "--out", str(run2)]) == 0

    cps1 = sorted((run1 / "checkpoints").iterdir())
    cps2 = sorted((run2 / "checkpoints").iterdir())
    assert len(cps1) == 300 and [p.name for p in cps1] == [p.name for p in cps2]
    for p1, p2 in zip(cps1, cps2):
        assert p1.read_bytes() == p2.read_bytes(), p1.name
    assert (run1 / "best_policy.json").read_bytes() == \
        (run2 / "best_policy.json").read_bytes()
    report("determinism", time.perf_counter() - t0, 120.0,
           "300 checkpoints + best policy byte-identical")


def test_codec_grid():
    """Bucket, probability, and magnitude maps are exact on the 1/32 grid."""
    t0 = time.perf_counter()
    a_grid = [i / 32 for i in range(33)]
    sub_grid = [i / 10 for i in range(11)]
    checked = 0
    for a0 in a_grid:
        expected_kind = min(math.floor(16 * a0), 15)
        for a1 in sub_grid:
            for a2 in sub_grid:
                op = decode_triple([a0, a1, a2])
                assert op.kind == expected_kind
                assert op.probability == a1  # exact passthrough
                rng = RANGES[op.kind]
                expected_mag = 0.0 if rng.magnitude_free \
                    else a2 * (rng.max - rng.min) + rng.min
                assert abs(op.magnitude - expected_mag) <= 1e-15
                checked += 1
    report("codec grid", time.perf_counter() - t0, 1.0,
           f"{checked} decoded triples exact")


def test_concatenation():
    """Top-5 distinct policies concatenate to 25 sub-policies in reward order."""
    t0 = time.perf_counter()

    class Rec:
        def __init__(self, reward, vector):
            self.reward = reward
            self.normalized_vector = vector
            self.iteration = 0
            self.sign = "+"

    rng = np.random.default_rng(12)
    vectors = [np.clip(rng.random(30), 0.01, 0.99) for _ in range(8)]
    records = [Rec(float(i), vectors[i]) for i in range(8)]
    records.append(Rec(2.5, vectors[7]))  # duplicate of the best, lower reward

    policy = concat_top_policies(records, k=5)
    assert len(policy) == 25
    for rank in range(5):
        src = decode_policy(vectors[7 - rank])
        assert policy.sub_policies[5 * rank: 5 * rank + 5] == src.sub_policies

    text = serialize_policy(policy)
    assert parse_policy(text) == parse_policy(serialize_policy(parse_policy(text)))
    assert len(parse_policy(text)) == 25
    report("concatenation", time.perf_counter() - t0, 1.0,
           "25 sub-policies, reward order, parse round trip")


def test_augmentation_identities():
    """Identity family, involution, golden rotation, shape preservation."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    fixture = Image.fromarray(
        rng.integers(0, 256, (32, 32, 3), dtype=np.uint8), "RGB")

    # p = 0 never fires, for every kind and any seed
    for kind in range(16):
        r = RANGES[kind]
        mag = 0.0 if r.magnitude_free else (r.min + r.max) / 2
        op = OperationSpec(kind=kind, probability=0.0, magnitude=mag)
        for seed in (0, 9):
            assert apply_operation(fixture, op, seed).tobytes() == fixture.tobytes()

    # zero-magnitude rotation is the identity transform
    rot = OperationSpec(RANGES.index_of("Rotate"), 1.0, 0.0)
    assert apply_operation(fixture, rot, 3).tobytes() == fixture.tobytes()

    # invert twice restores the original
    inv = OperationSpec(RANGES.index_of("Invert"), 1.0, 0.0)
    assert apply_operation(apply_operation(fixture, inv, 0), inv, 1).tobytes() \
        == fixture.tobytes()

    # hand-written quarter-turn pixel map on an asymmetric 4x4 fixture:
    # counter-clockwise 90 degrees sends source (row c, col 3-r) to (row r, col c)
    src = np.arange(16, dtype=np.uint8).reshape(4, 4) * 16
    small = Image.fromarray(np.stack([src] * 3, axis=-1), "RGB")
    golden = np.array([
        [src[0][3], src[1][3], src[2][3], src[3][3]],
        [src[0][2], src[1][2], src[2][2], src[3][2]],
        [src[0][1], src[1][1], src[2][1], src[3][1]],
        [src[0][0], src[1][0], src[2][0], src[3][0]],
    ], dtype=np.uint8)
    wide = MagnitudeRangeTable([
        k if k.name != "Rotate" else KindRange("Rotate", -90.0, 90.0, k.unit,
                                               False, 0.0)
        for k in RANGES.kinds
    ])
    rot90 = OperationSpec(RANGES.index_of("Rotate"), 1.0, 90.0)
    out = np.asarray(apply_operation(small, rot90, 0, ranges=wide))
    for ch in range(3):
        assert np.array_equal(out[:, :, ch], golden)

    # every kind preserves the 32x32 shape
    pair = [Image.fromarray(rng.integers(0, 256, (32, 32, 3), dtype=np.uint8),
                            "RGB")]
    for kind in range(16):
        r = RANGES[kind]
        mag = 0.0 if r.magnitude_free else (r.min + r.max) / 2
        op = OperationSpec(kind=kind, probability=1.0, magnitude=mag)
        result = apply_operation(fixture, op, 1, pair_source=pair)
        assert result.size == fixture.size, r.name
    report("augmentation identities", time.perf_counter() - t0, 5.0,
           "identity family, involution, golden 90-degree map, 16 shapes")


def test_zero_deviation_guard():
    """Constant rewards: vector untouched, one logged skip per iteration."""
    t0 = time.perf_counter()
    cfg = SearchConfig(num_directions=8, top_directions=4, max_iterations=10,
                       run_seed=3, table_seed=0, table_size=1 << 16)
    result = run_search(cfg, ConstantEvaluator(0.25))
    assert np.all(result.state.M == 0.0)
    assert result.state.iteration == 10
    assert len(result.state.skips) == 10
    assert all("zero" in s.reason for s in result.state.skips)
    report("zero-deviation guard", time.perf_counter() - t0, 10.0,
           "10 iterations, 10 skips, M unchanged")


def test_protocol_robustness():
    """External stdio workers drive a 50-iteration run; crashes do not abort."""
    t0 = time.perf_counter()
    cfg = SearchConfig(step_size=0.02, num_directions=4, noise_std=0.03,
                       top_directions=2, max_iterations=50, run_seed=7,
                       table_seed=0, table_size=1 << 16)

    # echo stub: reward = first vector coordinate; the run pushes it upward
    with spawn_external(f"{sys.executable} {STUB} echo", workers=2) as pool:
        result = run_search(cfg, pool)
    assert result.state.iteration == 50
    assert result.state.drops == []
    assert result.best_reward > 0.5  # improved over the initial sigmoid(0)
    assert result.state.M[0] > 0.0

    # poison stub: content-dependent crashes survive requeue and retry, then
    # the affected direction pair is dropped; the run still completes
    with spawn_external(f"{sys.executable} {STUB} poison", workers=2) as pool:
        poisoned = run_search(cfg, pool)
    assert poisoned.state.iteration == 50
    assert len(poisoned.state.drops) >= 1
    assert all("worker" in d.error for d in poisoned.state.drops)
    report("protocol robustness", time.perf_counter() - t0, 120.0,
           f"50 iterations; {len(poisoned.state.drops)} dropped pairs")
