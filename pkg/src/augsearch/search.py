"""Derivative-free policy search with antithetic random perturbations.

One iteration of the loop:

1. draw N directions from the shared noise table,
2. form the 2N normalized candidates ``sigmoid(M +/- noise_std * delta)``,
3. collect a reward for every candidate,
4. rank directions by the better reward of each antithetic pair,
5. step ``M += step_size / (b * reward_std) * sum((r_plus - r_minus) * delta)``
   over the top b directions, where ``reward_std`` is the population standard
   deviation of the 2b rewards entering the step.

The update uses the raw table directions, not the sigmoid-squashed
candidates. A zero ``reward_std`` carries no information, so the step is
skipped (and recorded) rather than divided by an epsilon.

Every stochastic choice derives from the run seed through a fixed
``SeedSequence`` namespace, so a run is reproducible end to end:
``spawn_key=(0, iteration, direction, sign_bit, attempt)`` for evaluation
seeds, ``(1, worker)`` for worker seeds, ``(2,)`` for the direction sampler.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np
from scipy.special import expit

from .evaluators import EvalRequest, EvalResult, ProtocolError, RewardEvaluator
from .noise import DEFAULT_TABLE_SIZE, VECTOR_DIM, DirectionHandle, DirectionSampler, NoiseTable, build_table
from .policy import MagnitudeRangeTable, decode_policy, default_ranges


class EvaluatorUnavailableError(RuntimeError):
    """An entire iteration failed to produce any usable reward pair.

    Carries the partial run (``state``, ``best``) so callers can persist it.
    """

    def __init__(self, message: str, state=None, best=None):
        super().__init__(message)
        self.state = state
        self.best = best


@dataclass
class SearchConfig:
    step_size: float = 0.02
    num_directions: int = 8
    noise_std: float = 0.03
    top_directions: int = 4
    max_iterations: int = 300
    run_seed: int = 0
    table_seed: int = 0
    table_size: int = DEFAULT_TABLE_SIZE
    reward_threshold: float | None = None
    plateau_window: int = 0
    checkpoint_stride: int = 1

    def validate(self) -> None:
        if self.step_size <= 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if self.noise_std <= 0:
            raise ValueError(f"noise_std must be > 0, got {self.noise_std}")
        if self.num_directions < 1:
            raise ValueError("num_directions must be >= 1")
        if not (1 <= self.top_directions <= self.num_directions):
            raise ValueError(
                f"top_directions must be in [1, {self.num_directions}], "
                f"got {self.top_directions}"
            )
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if not (0 <= self.run_seed < 1000):
            raise ValueError(f"run_seed must be in [0, 1000), got {self.run_seed}")
        if self.table_seed < 0:
            raise ValueError("table_seed must be >= 0")
        if self.table_size < VECTOR_DIM:
            raise ValueError("table_size too small for one direction")
        if self.plateau_window < 0:
            raise ValueError("plateau_window must be >= 0")
        if self.checkpoint_stride < 1:
            raise ValueError("checkpoint_stride must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "SearchConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class RewardRecord:
    iteration: int
    direction: DirectionHandle
    sign: str
    normalized_vector: np.ndarray
    reward: float


@dataclass
class SkipEvent:
    iteration: int
    reason: str


@dataclass
class DropEvent:
    iteration: int
    direction_index: int
    error: str


@dataclass
class SearchState:
    M: np.ndarray
    iteration: int
    history: list[RewardRecord]
    sampler: DirectionSampler
    skips: list[SkipEvent] = field(default_factory=list)
    drops: list[DropEvent] = field(default_factory=list)


def sigmoid(x: Sequence[float] | np.ndarray) -> np.ndarray:
    """Elementwise 1 / (1 + exp(-x)); output strictly inside (0, 1)."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("sigmoid input must be finite")
    return expit(arr)


def init_state(config: SearchConfig) -> SearchState:
    """Fresh state: parameter vector at the origin, nothing evaluated yet."""
    config.validate()
    return SearchState(
        M=np.zeros(VECTOR_DIM),
        iteration=0,
        history=[],
        sampler=DirectionSampler(config.table_size, config.run_seed),
    )


def propose_perturbations(
    state: SearchState, config: SearchConfig, table: NoiseTable
) -> list[tuple[DirectionHandle, np.ndarray, np.ndarray]]:
    """Draw N directions and squash both antithetic candidates per direction.

    Handle issuance advances the sampler, so calling this is part of the
    run's deterministic state evolution.
    """
    out = []
    for _ in range(config.num_directions):
        handle = state.sampler.next_handle()
        delta = table.slice(handle)
        plus = sigmoid(state.M + config.noise_std * delta)
        minus = sigmoid(state.M - config.noise_std * delta)
        out.append((handle, plus, minus))
    return out


def rank_directions(pairs: dict[int, tuple[float | None, float | None]]) -> list[int]:
    """Order direction indices by max(r_plus, r_minus), best first.

    Ties break toward the lower index so runs are reproducible.
    """
    for k, pair in pairs.items():
        if pair is None or len(pair) != 2 or pair[0] is None or pair[1] is None:
            raise ProtocolError(f"direction {k} is missing one of its paired rewards")
    return sorted(pairs, key=lambda k: (-max(pairs[k]), k))


@dataclass
class DirectionOutcome:
    """Both rewards of one antithetic pair, ready for the update step."""

    index: int
    handle: DirectionHandle
    reward_plus: float
    reward_minus: float


def reward_std(outcomes: Sequence[DirectionOutcome]) -> float:
    """Population standard deviation of the 2b rewards used in the step."""
    rewards = np.array(
        [r for o in outcomes for r in (o.reward_plus, o.reward_minus)], dtype=float
    )
    return float(np.std(rewards))


def update_step(
    state: SearchState,
    config: SearchConfig,
    top: Sequence[DirectionOutcome],
    table: NoiseTable,
    expected_b: int | None = None,
) -> SearchState:
    """Apply one scaled update over the top directions; advances the iteration.

    ``expected_b`` defaults to the configured top_directions; the caller
    lowers it when evaluation failures shrank the iteration.
    """
    b = config.top_directions if expected_b is None else expected_b
    if len(top) != b:
        raise ValueError(f"expected exactly {b} ranked records, got {len(top)}")
    rewards = [r for o in top for r in (o.reward_plus, o.reward_minus)]
    if not np.all(np.isfinite(rewards)):
        raise ValueError("rewards entering the update must be finite")

    # Extreme reward magnitudes may overflow to inf/nan here; the guard
    # below turns that into a recorded skip instead of poisoning M.
    with np.errstate(over="ignore", invalid="ignore"):
        sigma = reward_std(top)
        if sigma == 0.0:
            state.skips.append(SkipEvent(state.iteration, "zero reward deviation"))
            state.iteration += 1
            return state

        step = np.zeros(VECTOR_DIM)
        for o in top:
            step += (o.reward_plus - o.reward_minus) * table.slice(o.handle)
        delta_m = (config.step_size / (b * sigma)) * step
    if not np.all(np.isfinite(delta_m)):
        # Same rationale as the zero-deviation guard: an ill-conditioned
        # iteration must not poison the parameter vector.
        state.skips.append(SkipEvent(state.iteration, "non-finite update"))
        state.iteration += 1
        return state

    state.M = state.M + delta_m
    state.iteration += 1
    return state


def derive_eval_seed(run_seed: int, iteration: int, direction_index: int,
                     sign: str, attempt: int = 0) -> int:
    sign_bit = 0 if sign == "+" else 1
    ss = np.random.SeedSequence(
        int(run_seed), spawn_key=(0, iteration, direction_index, sign_bit, attempt)
    )
    return int(ss.generate_state(1, np.uint64)[0])


def derive_worker_seeds(run_seed: int, count: int) -> list[int]:
    return [
        int(np.random.SeedSequence(int(run_seed), spawn_key=(1, i))
            .generate_state(1, np.uint64)[0])
        for i in range(count)
    ]


@dataclass
class SearchResult:
    config: SearchConfig
    state: SearchState
    history: list[RewardRecord]  # sorted by reward, best first
    best: RewardRecord | None
    stop_reason: str

    @property
    def best_reward(self) -> float | None:
        return None if self.best is None else self.best.reward


def _record_sort_key(rec: RewardRecord):
    return (-rec.reward, rec.iteration, rec.direction.offset, rec.sign)


class _RunLoop:
    """Internal driver for run_search; owns retry/drop bookkeeping."""

    def __init__(self, config: SearchConfig, evaluator: RewardEvaluator,
                 ranges: MagnitudeRangeTable, table: NoiseTable,
                 checkpoint_sink=None):
        self.config = config
        self.evaluator = evaluator
        self.ranges = ranges
        self.table = table
        self.checkpoint_sink = checkpoint_sink
        self.state = init_state(config)
        self.next_request_id = 0
        self.best: RewardRecord | None = None
        self.best_iteration = -1
        self.last_checkpoint = -1

    def _request(self, vector: np.ndarray, iteration: int, k: int, sign: str,
                 attempt: int) -> EvalRequest:
        rid = self.next_request_id
        self.next_request_id += 1
        seed = derive_eval_seed(self.config.run_seed, iteration, k, sign, attempt)
        return EvalRequest(
            id=rid,
            vector=vector,
            policy=decode_policy(vector, self.ranges),
            seed=seed,
        )

    @staticmethod
    def _usable(result: EvalResult) -> bool:
        return result.ok and np.isfinite(result.reward)

    def run_iteration(self) -> None:
        config, state = self.config, self.state
        j = state.iteration
        proposals = propose_perturbations(state, config, self.table)

        requests: list[EvalRequest] = []
        keys: dict[int, tuple[int, str]] = {}
        vectors: dict[tuple[int, str], np.ndarray] = {}
        for k, (handle, plus, minus) in enumerate(proposals):
            for sign, vec in (("+", plus), ("-", minus)):
                req = self._request(vec, j, k, sign, attempt=0)
                requests.append(req)
                keys[req.id] = (k, sign)
                vectors[(k, sign)] = vec

        rewards: dict[tuple[int, str], float] = {}
        failed: dict[tuple[int, str], str] = {}
        for result in self.evaluator.evaluate_batch(requests):
            key = keys[result.id]
            if self._usable(result):
                rewards[key] = float(result.reward)
            else:
                failed[key] = result.error or f"non-finite reward {result.reward!r}"

        if failed:
            # One retry per failed evaluation, fresh seed, same candidate.
            retry_requests, retry_keys = [], {}
            for (k, sign) in failed:
                req = self._request(vectors[(k, sign)], j, k, sign, attempt=1)
                retry_requests.append(req)
                retry_keys[req.id] = (k, sign)
            for result in self.evaluator.evaluate_batch(retry_requests):
                key = retry_keys[result.id]
                if self._usable(result):
                    rewards[key] = float(result.reward)
                    failed.pop(key, None)
                else:
                    failed[key] = result.error or f"non-finite reward {result.reward!r}"

        dropped = {k for (k, _sign) in failed}
        for k in sorted(dropped):
            errors = "; ".join(failed[key] for key in failed if key[0] == k)
            state.drops.append(DropEvent(j, k, errors))

        surviving = [k for k in range(config.num_directions) if k not in dropped]
        if not surviving:
            raise EvaluatorUnavailableError(
                f"iteration {j}: no direction produced a usable reward pair"
            )

        for k in surviving:
            handle = proposals[k][0]
            for sign in ("+", "-"):
                state.history.append(RewardRecord(
                    iteration=j,
                    direction=handle,
                    sign=sign,
                    normalized_vector=vectors[(k, sign)],
                    reward=rewards[(k, sign)],
                ))

        pairs = {k: (rewards[(k, "+")], rewards[(k, "-")]) for k in surviving}
        order = rank_directions(pairs)
        b_eff = min(config.top_directions, len(order))
        top = [
            DirectionOutcome(k, proposals[k][0], rewards[(k, "+")], rewards[(k, "-")])
            for k in order[:b_eff]
        ]
        update_step(state, config, top, self.table, expected_b=b_eff)

        for k in surviving:
            for sign in ("+", "-"):
                rec_reward = rewards[(k, sign)]
                if self.best is None or rec_reward > self.best.reward:
                    self.best = RewardRecord(
                        iteration=j, direction=proposals[k][0], sign=sign,
                        normalized_vector=vectors[(k, sign)], reward=rec_reward,
                    )
                    self.best_iteration = j

    def should_stop(self) -> str | None:
        config = self.config
        if self.state.iteration >= config.max_iterations:
            return "max_iterations"
        if (config.reward_threshold is not None and self.best is not None
                and self.best.reward >= config.reward_threshold):
            return "reward_threshold"
        if (config.plateau_window > 0 and self.best is not None
                and self.state.iteration - self.best_iteration > config.plateau_window):
            return "plateau"
        return None

    def checkpoint(self, force: bool = False) -> None:
        if self.checkpoint_sink is None:
            return
        j = self.state.iteration
        if j == self.last_checkpoint:
            return
        if force or j % self.config.checkpoint_stride == 0:
            self.checkpoint_sink(self)
            self.last_checkpoint = j


def run_search(
    config: SearchConfig,
    evaluator: RewardEvaluator,
    ranges: MagnitudeRangeTable | None = None,
    table: NoiseTable | None = None,
    checkpoint_sink=None,
) -> SearchResult:
    """Run the full search loop until a stop condition fires.

    ``checkpoint_sink``, when given, is called with the loop object after
    each update step that falls on the checkpoint stride (artifact writing
    lives in :mod:`augsearch.artifacts`; the loop stays file-agnostic). On an
    unrecoverable evaluator failure the partial result is still checkpointed
    before the error propagates.
    """
    config.validate()
    ranges = ranges or default_ranges()
    if table is None:
        table = build_table(config.table_seed, config.table_size)
    elif table.seed != config.table_seed or table.size != config.table_size:
        warnings.warn("supplied table does not match config seed/size", stacklevel=2)

    loop = _RunLoop(config, evaluator, ranges, table, checkpoint_sink)
    stop_reason = "max_iterations"
    try:
        while True:
            reason = loop.should_stop()
            if reason is not None:
                stop_reason = reason
                break
            loop.run_iteration()
            loop.checkpoint()
        loop.checkpoint(force=True)
    except EvaluatorUnavailableError as exc:
        loop.checkpoint(force=True)
        exc.state = loop.state
        exc.best = loop.best
        raise

    history = sorted(loop.state.history, key=_record_sort_key)
    return SearchResult(
        config=config,
        state=loop.state,
        history=history,
        best=loop.best,
        stop_reason=stop_reason,
    )
