"""Reward evaluation: built-in synthetic objectives and an external worker pool.

An evaluator scores a candidate policy (higher is better). The synthetic
objectives have a known optimum and make the search loop verifiable at desk
scale; real rewards come from external trainer processes speaking a
newline-delimited JSON protocol over stdin/stdout:

* handshake: worker prints ``{"ready": true}`` on startup,
* request:   ``{"id": u64, "vector": [f64; 30], "policy": {...}, "seed": u64}``,
* response:  ``{"id": u64, "reward": f64}`` or ``{"id": u64, "error": "msg"}``.

One request is in flight per worker at a time. A crashed or misbehaving
worker is respawned and the request requeued once; a second transport
failure surfaces as an evaluation failure for the caller's drop rule.
"""

from __future__ import annotations

import json
import os
import queue
import select
import shlex
import subprocess
import threading
from dataclasses import dataclass

import numpy as np

from .policy import MagnitudeRangeTable, Policy, default_ranges, serialize_policy

VECTOR_DIM = 30

DEFAULT_TARGET_SEED = 101


class EvaluationError(RuntimeError):
    pass


class ProtocolError(RuntimeError):
    pass


@dataclass
class EvalRequest:
    id: int
    vector: np.ndarray
    policy: Policy
    seed: int


@dataclass
class EvalResult:
    id: int
    reward: float | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.reward is not None


class RewardEvaluator:
    """Base contract: ``evaluate`` one candidate, or a whole batch.

    Synthetic evaluators are pure given (vector, seed); the default batch
    implementation is sequential. Subclasses with real parallelism override
    ``evaluate_batch``.
    """

    def evaluate(self, policy: Policy, vector: np.ndarray, seed: int) -> float:
        raise NotImplementedError

    def evaluate_batch(self, requests: list[EvalRequest]) -> list[EvalResult]:
        results = []
        for req in requests:
            try:
                reward = float(self.evaluate(req.policy, req.vector, req.seed))
            except Exception as exc:  # noqa: BLE001 - surfaced per request
                results.append(EvalResult(id=req.id, error=str(exc)))
            else:
                results.append(EvalResult(id=req.id, reward=reward))
        return results

    def close(self) -> None:
        pass


@dataclass(frozen=True)
class SyntheticTarget:
    """Hidden interior point in (0,1)^30 that the search should recover."""

    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=float)
        if v.shape != (VECTOR_DIM,):
            raise ValueError(f"target must be a 30-vector, got shape {v.shape}")
        if not np.all((v > 0.0) & (v < 1.0)):
            raise ValueError("target coordinates must be strictly inside (0, 1)")
        object.__setattr__(self, "vector", v)

    @classmethod
    def from_seed(cls, seed: int) -> "SyntheticTarget":
        rng = np.random.Generator(np.random.Philox(key=int(seed)))
        v = np.clip(rng.random(VECTOR_DIM), 1e-9, 1.0 - 1e-9)
        return cls(vector=v)


def target_matching_reward(v: np.ndarray, target: SyntheticTarget) -> float:
    """Negative L1 distance to the target; maximum 0 at v == target."""
    v = np.asarray(v, dtype=float)
    if v.shape != target.vector.shape:
        raise ValueError(f"vector shape {v.shape} != target shape {target.vector.shape}")
    return float(-np.sum(np.abs(v - target.vector)))


def sphere_reward(v: np.ndarray) -> float:
    """Negative squared distance to the all-0.5 center; maximum 0 there."""
    v = np.asarray(v, dtype=float)
    return float(-np.sum((v - 0.5) ** 2))


class TargetMatchingEvaluator(RewardEvaluator):
    def __init__(self, target: SyntheticTarget):
        self.target = target

    def evaluate(self, policy, vector, seed):
        return target_matching_reward(vector, self.target)


class SphereEvaluator(RewardEvaluator):
    def evaluate(self, policy, vector, seed):
        return sphere_reward(vector)


class ConstantEvaluator(RewardEvaluator):
    """Returns the same reward for everything; useful to exercise guards."""

    def __init__(self, value: float = 0.0):
        self.value = float(value)

    def evaluate(self, policy, vector, seed):
        return self.value


def request_line(req: EvalRequest, ranges: MagnitudeRangeTable | None = None) -> bytes:
    """Encode one request as a single UTF-8 JSON line, LF terminated."""
    policy_obj = json.loads(serialize_policy(req.policy, ranges or default_ranges()))
    payload = {
        "id": int(req.id),
        "vector": [float(x) for x in req.vector],
        "policy": policy_obj,
        "seed": int(req.seed),
    }
    return (json.dumps(payload, separators=(",", ":")) + "\n").encode("utf-8")


class _WorkerDied(Exception):
    pass


class _Worker:
    """One external process plus its line-buffered pipes."""

    def __init__(self, argv: list[str], index: int, env_extra: dict[str, str],
                 handshake_timeout: float):
        self.argv = argv
        self.index = index
        self.env_extra = env_extra
        self.handshake_timeout = handshake_timeout
        self.proc: subprocess.Popen | None = None
        self.spawn_failures = 0
        self._buf = bytearray()

    def spawn(self) -> None:
        env = dict(os.environ)
        env.update(self.env_extra)
        self._buf = bytearray()
        self.proc = subprocess.Popen(
            self.argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=None,
            bufsize=0,
            env=env,
        )
        try:
            line = self._read_line(self.handshake_timeout)
            try:
                hello = json.loads(line)
            except json.JSONDecodeError:
                raise _WorkerDied(f"bad handshake line {line!r}") from None
            if not isinstance(hello, dict) or hello.get("ready") is not True:
                raise _WorkerDied(f"bad handshake object {hello!r}")
        except _WorkerDied:
            self.kill()
            raise

    def _read_line(self, timeout: float | None) -> str:
        assert self.proc is not None and self.proc.stdout is not None
        fd = self.proc.stdout.fileno()
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = self._buf[:nl].decode("utf-8", errors="replace")
                del self._buf[: nl + 1]
                return line
            ready, _, _ = select.select([fd], [], [], timeout)
            if not ready:
                raise _WorkerDied(f"no response within {timeout}s")
            chunk = os.read(fd, 65536)
            if not chunk:
                raise _WorkerDied("process closed stdout")
            self._buf.extend(chunk)

    def roundtrip(self, req: EvalRequest, timeout: float | None) -> EvalResult:
        assert self.proc is not None and self.proc.stdin is not None
        try:
            self.proc.stdin.write(request_line(req))
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise _WorkerDied(f"write failed: {exc}") from None
        line = self._read_line(timeout)
        try:
            resp = json.loads(line)
        except json.JSONDecodeError:
            raise _WorkerDied(f"malformed response {line!r}") from None
        if not isinstance(resp, dict) or resp.get("id") != req.id:
            raise _WorkerDied(f"response id mismatch: {resp!r} for request {req.id}")
        if "error" in resp:
            return EvalResult(id=req.id, error=str(resp["error"]))
        reward = resp.get("reward")
        if not isinstance(reward, (int, float)):
            raise _WorkerDied(f"response missing numeric reward: {resp!r}")
        return EvalResult(id=req.id, reward=float(reward))

    def kill(self) -> None:
        if self.proc is None:
            return
        try:
            if self.proc.stdin:
                self.proc.stdin.close()
        except OSError:
            pass
        self.proc.kill()
        self.proc.wait()
        self.proc = None


class ExternalEvaluatorPool(RewardEvaluator):
    """Dispatches evaluation requests to a pool of worker processes.

    Each worker runs ``command`` and gets ``WORKER_INDEX`` and ``WORKER_SEED``
    in its environment (seeds are caller-provided so the run manifest can
    record them). Requests are pulled from a shared queue by per-worker
    threads, so results arrive in any order; they are matched by id.
    """

    MAX_CONSECUTIVE_SPAWN_FAILURES = 3

    def __init__(self, command: str, workers: int = 1,
                 worker_seeds: list[int] | None = None,
                 handshake_timeout: float = 30.0,
                 request_timeout: float | None = None,
                 ranges: MagnitudeRangeTable | None = None):
        if workers < 1:
            raise ValueError("worker count must be >= 1")
        self.command = command
        self.request_timeout = request_timeout
        self.ranges = ranges or default_ranges()
        argv = shlex.split(command)
        if worker_seeds is None:
            worker_seeds = list(range(workers))
        if len(worker_seeds) != workers:
            raise ValueError("need one seed per worker")
        self.worker_seeds = [int(s) for s in worker_seeds]
        self._tasks: queue.Queue = queue.Queue()
        self._lock = threading.Lock()
        self._results: dict[int, EvalResult] = {}
        self._done = threading.Condition(self._lock)
        self._closed = False
        self._workers = []
        self._threads = []
        try:
            for i in range(workers):
                env = {"WORKER_INDEX": str(i), "WORKER_SEED": str(self.worker_seeds[i])}
                worker = _Worker(argv, i, env, handshake_timeout)
                worker.spawn()  # handshake failures surface to the caller here
                self._workers.append(worker)
        except (_WorkerDied, OSError) as exc:
            for w in self._workers:
                w.kill()
            raise EvaluationError(f"failed to start worker pool: {exc}") from None
        for worker in self._workers:
            t = threading.Thread(target=self._serve, args=(worker,), daemon=True)
            t.start()
            self._threads.append(t)

    def _record(self, result: EvalResult) -> None:
        with self._done:
            self._results[result.id] = result
            self._done.notify_all()

    def _serve(self, worker: _Worker) -> None:
        # A worker that crashes during requests is respawned indefinitely;
        # only repeated spawn/handshake failures (a broken command) make the
        # slot fail fast instead of retrying forever.
        while True:
            item = self._tasks.get()
            if item is None:
                return
            req, attempts = item
            if worker.proc is None:
                if worker.spawn_failures >= self.MAX_CONSECUTIVE_SPAWN_FAILURES:
                    self._record(EvalResult(
                        id=req.id,
                        error=(f"worker {worker.index}: unavailable after "
                               f"{worker.spawn_failures} failed spawns"),
                    ))
                    continue
                try:
                    worker.spawn()
                    worker.spawn_failures = 0
                except (_WorkerDied, OSError) as exc:
                    worker.spawn_failures += 1
                    self._fail_or_requeue(worker, req, attempts,
                                          f"respawn failed: {exc}")
                    continue
            try:
                result = worker.roundtrip(req, self.request_timeout)
            except _WorkerDied as exc:
                worker.kill()
                self._fail_or_requeue(worker, req, attempts, str(exc))
                continue
            self._record(result)

    def _fail_or_requeue(self, worker: _Worker, req: EvalRequest,
                         attempts: int, reason: str) -> None:
        if attempts == 0:
            self._tasks.put((req, 1))
        else:
            self._record(EvalResult(
                id=req.id, error=f"worker {worker.index}: {reason}"))

    def evaluate_batch(self, requests: list[EvalRequest]) -> list[EvalResult]:
        if self._closed:
            raise EvaluationError("pool is closed")
        ids = [req.id for req in requests]
        if len(set(ids)) != len(ids):
            raise ValueError("request ids must be unique within a batch")
        for req in requests:
            self._tasks.put((req, 0))
        with self._done:
            while not all(i in self._results for i in ids):
                self._done.wait()
            return [self._results.pop(i) for i in ids]

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        for _ in self._threads:
            self._tasks.put(None)
        for t in self._threads:
            t.join(timeout=10)
        for worker in self._workers:
            worker.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def spawn_external(command: str, workers: int = 1, **kwargs) -> ExternalEvaluatorPool:
    return ExternalEvaluatorPool(command, workers=workers, **kwargs)


def make_evaluator(spec: str, workers: int = 1,
                   worker_seeds: list[int] | None = None) -> tuple[RewardEvaluator, str]:
    """Build an evaluator from a spec string and return (evaluator, resolved spec).

    Accepted forms: ``synthetic:target[:seed]``, ``synthetic:sphere``,
    ``synthetic:constant[:value]``, ``external:<command line>``. The resolved
    spec has defaults filled in so a manifest can reproduce the run exactly.
    """
    if spec.startswith("external:"):
        command = spec[len("external:"):]
        if not command.strip():
            raise ValueError("external evaluator needs a command line")
        pool = spawn_external(command, workers=workers, worker_seeds=worker_seeds)
        return pool, spec
    if spec.startswith("synthetic:"):
        parts = spec.split(":")
        kind = parts[1] if len(parts) > 1 else ""
        if kind == "sphere":
            return SphereEvaluator(), "synthetic:sphere"
        if kind == "target":
            seed = int(parts[2]) if len(parts) > 2 else DEFAULT_TARGET_SEED
            return (TargetMatchingEvaluator(SyntheticTarget.from_seed(seed)),
                    f"synthetic:target:{seed}")
        if kind == "constant":
            value = float(parts[2]) if len(parts) > 2 else 0.0
            return ConstantEvaluator(value), f"synthetic:constant:{value}"
        raise ValueError(f"unknown synthetic objective {kind!r}")
    raise ValueError(f"unknown evaluator spec {spec!r}")
