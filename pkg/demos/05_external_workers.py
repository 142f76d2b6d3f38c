"""Rewards from external processes over the stdio JSON protocol.

A pool of worker processes answers evaluation requests; the search loop
only sees rewards. Here the workers are copies of echo_worker.py, whose
reward is the first normalized coordinate, so the optimizer should push
that coordinate toward 1.
"""

import sys
from pathlib import Path

from augsearch import SearchConfig, run_search, spawn_external

worker = Path(__file__).parent / "echo_worker.py"
command = f"{sys.executable} {worker}"
print(f"worker command: {command}")

config = SearchConfig(
    step_size=0.02, num_directions=4, noise_std=0.03, top_directions=2,
    max_iterations=40, run_seed=7, table_seed=0, table_size=1 << 16,
)

with spawn_external(command, workers=3) as pool:
    result = run_search(config, pool)

print(f"completed {result.state.iteration} iterations across 3 workers")
print(f"best reward (= highest observed first coordinate): "
      f"{result.best_reward:.4f}")
print(f"first parameter coordinate after the run: {result.state.M[0]:+.3f}")
print(f"dropped direction pairs: {len(result.state.drops)}")
