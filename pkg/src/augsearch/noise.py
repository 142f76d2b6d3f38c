"""Shared table of standard-normal noise, addressed by index.

Parallel reward workers never exchange perturbation vectors. Every process
rebuilds the identical table from ``(seed, size)`` and directions are
communicated as offsets into it. The generator is fixed and documented so
that the table is bit-stable:

* bit generator: Philox 4x64-10 (counter based), keyed directly by the
  table seed,
* Gaussian transform: numpy's ziggurat ``standard_normal``.

Offsets for new directions are drawn by a :class:`DirectionSampler` that is
seeded at run level, so handle issuance is reproducible as well. Slices may
overlap; entries are i.i.d. so overlapping directions are still valid draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VECTOR_DIM = 30

DEFAULT_TABLE_SIZE = 1 << 22


@dataclass(frozen=True)
class DirectionHandle:
    """Address of one perturbation direction: ``dim`` consecutive entries."""

    offset: int
    dim: int = VECTOR_DIM


class NoiseTable:
    """Immutable pool of i.i.d. standard-normal entries.

    Two tables built with the same ``(seed, size)`` are element-wise
    identical. Entries are read-only after construction, so any number of
    threads may slice concurrently.
    """

    def __init__(self, seed: int, size: int):
        if size <= 0:
            raise ValueError(f"table size must be positive, got {size}")
        self.seed = int(seed)
        self.size = int(size)
        gen = np.random.Generator(np.random.Philox(key=self.seed))
        entries = gen.standard_normal(self.size)
        entries.flags.writeable = False
        self.entries = entries

    def slice(self, handle: DirectionHandle) -> np.ndarray:
        """Return the ``handle.dim`` entries at ``handle.offset`` (read-only view)."""
        if handle.offset < 0 or handle.dim <= 0:
            raise IndexError(f"bad handle {handle}")
        if handle.offset + handle.dim > self.size:
            raise IndexError(
                f"handle {handle} out of bounds for table of size {self.size}"
            )
        return self.entries[handle.offset : handle.offset + handle.dim]


def build_table(seed: int, size: int = DEFAULT_TABLE_SIZE) -> NoiseTable:
    """Build the shared noise table. Pure function of ``(seed, size)``."""
    return NoiseTable(seed, size)


def slice_direction(table: NoiseTable, handle: DirectionHandle) -> np.ndarray:
    return table.slice(handle)


class DirectionSampler:
    """Issues direction handles with offsets uniform over the valid range.

    One sampler per run, seeded from the run seed; issuance order is part of
    the run's deterministic state. Callers serialize access (the search loop
    is the only issuer).
    """

    def __init__(self, table_size: int, seed: int, dim: int = VECTOR_DIM):
        if table_size < dim:
            raise ValueError(
                f"table size {table_size} cannot hold a direction of dim {dim}"
            )
        self.table_size = int(table_size)
        self.dim = int(dim)
        self._rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(2,)))
        )

    def next_handle(self) -> DirectionHandle:
        offset = int(self._rng.integers(0, self.table_size - self.dim + 1))
        return DirectionHandle(offset=offset, dim=self.dim)

    @property
    def state(self) -> dict:
        """Bit-generator state, exposed so search state can be compared."""
        return self._rng.bit_generator.state
