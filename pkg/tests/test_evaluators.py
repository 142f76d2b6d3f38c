import json
import random
import sys
from pathlib import Path

import numpy as np
import pytest

from augsearch.evaluators import (
    ConstantEvaluator,
    EvalRequest,
    EvaluationError,
    ExternalEvaluatorPool,
    SphereEvaluator,
    SyntheticTarget,
    TargetMatchingEvaluator,
    make_evaluator,
    request_line,
    spawn_external,
    sphere_reward,
    target_matching_reward,
)
from augsearch.policy import decode_policy

STUB = Path(__file__).with_name("stub_worker.py")


def stub_command(mode, *extra):
    return " ".join([sys.executable, str(STUB), mode, *map(str, extra)])


def make_request(rid, vector=None, seed=0):
    v = np.full(30, 0.5) if vector is None else np.asarray(vector, dtype=float)
    return EvalRequest(id=rid, vector=v, policy=decode_policy(v), seed=seed)


# ---------------------------------------------------------------- synthetic

def test_target_reward_at_optimum():
    t = SyntheticTarget.from_seed(1)
    assert target_matching_reward(t.vector, t) == 0.0


def test_target_reward_single_coordinate_shift():
    t = SyntheticTarget(np.full(30, 0.5))
    v = t.vector.copy()
    v[7] += 0.1
    assert target_matching_reward(v, t) == pytest.approx(-0.1, abs=1e-15)


def test_target_reward_matches_scalar_oracle():
    rng = random.Random(2)
    for _ in range(50):
        t = SyntheticTarget(np.array([rng.uniform(0.01, 0.99) for _ in range(30)]))
        v = np.array([rng.random() for _ in range(30)])
        expected = -sum(abs(a - b) for a, b in zip(v, t.vector))
        assert target_matching_reward(v, t) == pytest.approx(expected, abs=1e-12)


def test_target_validation():
    with pytest.raises(ValueError):
        SyntheticTarget(np.full(30, 0.0))
    with pytest.raises(ValueError):
        SyntheticTarget(np.full(29, 0.5))
    t = SyntheticTarget.from_seed(0)
    assert np.all((t.vector > 0) & (t.vector < 1))


def test_sphere_reward_values():
    assert sphere_reward(np.full(30, 0.5)) == 0.0
    assert sphere_reward(np.zeros(30)) == pytest.approx(-7.5, abs=1e-12)
    rng = np.random.default_rng(3)
    v = rng.random(30)
    assert sphere_reward(v) == pytest.approx(sphere_reward(1.0 - v), abs=1e-12)


def test_evaluators_are_pure():
    t = SyntheticTarget.from_seed(5)
    ev = TargetMatchingEvaluator(t)
    v = np.random.default_rng(0).random(30)
    pol = decode_policy(v)
    assert ev.evaluate(pol, v, 1) == ev.evaluate(pol, v, 999)


def test_make_evaluator_specs():
    ev, resolved = make_evaluator("synthetic:target")
    assert isinstance(ev, TargetMatchingEvaluator)
    assert resolved == "synthetic:target:101"
    ev2, resolved2 = make_evaluator("synthetic:target:42")
    assert resolved2 == "synthetic:target:42"
    assert not np.array_equal(ev.target.vector, ev2.target.vector)
    assert isinstance(make_evaluator("synthetic:sphere")[0], SphereEvaluator)
    assert isinstance(make_evaluator("synthetic:constant:2.5")[0], ConstantEvaluator)
    with pytest.raises(ValueError):
        make_evaluator("synthetic:nope")
    with pytest.raises(ValueError):
        make_evaluator("magic")


# ---------------------------------------------------------------- protocol

def test_request_line_framing():
    req = make_request(3, seed=17)
    line = request_line(req)
    assert line.endswith(b"\n")
    assert line.count(b"\n") == 1
    obj = json.loads(line.decode("utf-8"))
    assert list(obj.keys()) == ["id", "vector", "policy", "seed"]
    assert obj["id"] == 3
    assert obj["seed"] == 17
    assert len(obj["vector"]) == 30
    assert len(obj["policy"]["sub_policies"]) == 5


def test_echo_pool_round_trips_all_requests():
    with spawn_external(stub_command("echo"), workers=4) as pool:
        rng = np.random.default_rng(7)
        requests = [make_request(i, rng.random(30)) for i in range(16)]
        results = pool.evaluate_batch(requests)
        assert [r.id for r in results] == list(range(16))
        for req, res in zip(requests, results):
            assert res.ok
            assert res.reward == pytest.approx(float(req.vector[0]), abs=1e-12)


def test_pool_multiple_batches_reuse_workers():
    with spawn_external(stub_command("echo"), workers=2) as pool:
        for batch in range(3):
            requests = [make_request(100 * batch + i) for i in range(6)]
            results = pool.evaluate_batch(requests)
            assert all(r.ok for r in results)


def test_malformed_worker_surfaces_protocol_error_with_worker_id():
    with spawn_external(stub_command("malformed"), workers=1) as pool:
        results = pool.evaluate_batch([make_request(0)])
        assert not results[0].ok
        assert "worker 0" in results[0].error


def test_error_responses_pass_through():
    with spawn_external(stub_command("error"), workers=1) as pool:
        results = pool.evaluate_batch([make_request(5)])
        assert results[0].error == "stub failure"


def test_crashing_worker_requeues_and_recovers():
    # worker exits on every 4th request per process life; with one worker the
    # requeued requests land early in a fresh process life, so all 12 answer:
    # lives (0,1,2,3x) (4,5,6,7x) (8,9,10,11x) then (3,7,11) retried fine
    with spawn_external(stub_command("crash-every", 4), workers=1) as pool:
        requests = [make_request(i) for i in range(12)]
        results = pool.evaluate_batch(requests)
        assert all(r.ok for r in results)


def test_poisoned_request_fails_after_requeue_without_killing_pool():
    poisoned = np.full(30, 0.5)
    poisoned[0] = 0.000037  # crashes the stub deterministically, retries too
    with spawn_external(stub_command("poison"), workers=2) as pool:
        requests = [make_request(i) for i in range(6)]
        requests.append(make_request(6, poisoned))
        results = pool.evaluate_batch(requests)
        by_id = {r.id: r for r in results}
        assert all(by_id[i].ok for i in range(6))
        assert not by_id[6].ok
        # pool still serves after the poison
        again = pool.evaluate_batch([make_request(7)])
        assert again[0].ok


def test_handshake_failure_raises():
    with pytest.raises(EvaluationError):
        spawn_external(f"{sys.executable} -c 'print(42)'", workers=1,
                       handshake_timeout=5)


def test_broken_command_raises():
    with pytest.raises(EvaluationError):
        spawn_external("/nonexistent/not-a-binary", workers=1)


def test_worker_env_carries_index_and_seed():
    cmd = (f"{sys.executable} -c \"import os,sys,json;"
           "print(json.dumps({'ready': True}));sys.stdout.flush();"
           "[print(json.dumps({'id': json.loads(l)['id'],"
           " 'reward': float(os.environ['WORKER_SEED'])})) or sys.stdout.flush()"
           " for l in sys.stdin]\"")
    with spawn_external(cmd, workers=2, worker_seeds=[111, 222]) as pool:
        results = pool.evaluate_batch([make_request(i) for i in range(8)])
        seen = {r.reward for r in results}
        assert seen <= {111.0, 222.0}
        assert 111.0 in seen  # both workers answered at least once in 8 tries
