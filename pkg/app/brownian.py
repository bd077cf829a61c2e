"""Reproducible Brownian increments on dyadic grids.

Every path is keyed by ``(seed, path_index)`` into its own Philox counter stream,
so a path can be regenerated alone, in any block, by any worker. Normals come
from the inverse normal CDF applied to 53-bit uniforms taken from the raw stream.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy.special import ndtri

from app.config import settings
from app.errors import ConfigurationError, PreconditionError

logger = logging.getLogger("nonsticky.brownian")

KEY_LIMIT = 2**64
_UNIT = 2.0**-53
_SHIFT = np.uint64(11)


def _check_key(seed: int, stream: int) -> None:
    if not 0 <= seed < KEY_LIMIT:
        raise ConfigurationError(f"seed must lie in [0, 2**64), got {seed!r}")
    if not 0 <= stream < KEY_LIMIT:
        raise ConfigurationError(f"stream index must lie in [0, 2**64), got {stream!r}")


def _check_grid(level: int, horizon: float) -> None:
    if not 0 <= level <= settings.max_level:
        raise ConfigurationError(f"level {level} outside [0, {settings.max_level}]")
    if not (math.isfinite(horizon) and horizon > 0):
        raise ConfigurationError(f"horizon must be positive, got {horizon!r}")


def bit_generator(seed: int, stream: int) -> np.random.Philox:
    _check_key(seed, stream)
    return np.random.Philox(key=(stream << 64) | seed)


def keyed_generator(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(bit_generator(seed, stream))


def standard_normals(source: np.random.Philox, count: int) -> np.ndarray:
    raw = source.random_raw(count)
    uniforms = ((raw >> _SHIFT).astype(np.float64) + 0.5) * _UNIT
    return ndtri(uniforms)


@dataclass(frozen=True, eq=False)
class BrownianLattice:
    horizon: float
    level: int
    increments: np.ndarray
    seed: int
    path_index: int

    @property
    def n_steps(self) -> int:
        return 1 << self.level

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def terminal(self) -> float:
        return float(np.sum(self.increments))


def _freeze(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


def generate_lattice(seed: int, path_index: int, level: int, horizon: float = 1.0) -> BrownianLattice:
    _check_grid(level, horizon)
    n = 1 << level
    increments = math.sqrt(horizon / n) * standard_normals(bit_generator(seed, path_index), n)
    return BrownianLattice(horizon, level, _freeze(increments), seed, path_index)


def coarsen(lattice: BrownianLattice) -> BrownianLattice:
    if lattice.level < 1:
        raise PreconditionError("cannot coarsen a level-0 lattice")
    increments = lattice.increments[0::2] + lattice.increments[1::2]
    return BrownianLattice(
        lattice.horizon,
        lattice.level - 1,
        _freeze(increments),
        lattice.seed,
        lattice.path_index,
    )


def coarsen_block(increments: np.ndarray) -> np.ndarray:
    if increments.shape[-1] < 2:
        raise PreconditionError("cannot coarsen a level-0 block")
    return increments[..., 0::2] + increments[..., 1::2]


def generate_increment_block(
    seed: int,
    path_indices: Sequence[int],
    level: int,
    horizon: float = 1.0,
) -> np.ndarray:
    """Dense (paths, 2**level) increments, row i bitwise equal to generate_lattice(seed, path_indices[i], ...)."""
    _check_grid(level, horizon)
    n = 1 << level
    scale = math.sqrt(horizon / n)
    block = np.empty((len(path_indices), n), dtype=np.float64)
    for row, path_index in enumerate(path_indices):
        block[row] = scale * standard_normals(bit_generator(seed, path_index), n)
    return block


def iter_increment_chunks(
    seed: int,
    path_indices: Sequence[int],
    level: int,
    horizon: float = 1.0,
    chunk_steps: int | None = None,
) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(offset, increments)`` time chunks whose concatenation is the dense block."""
    _check_grid(level, horizon)
    n = 1 << level
    chunk = min(n, chunk_steps or settings.stream_chunk_steps)
    scale = math.sqrt(horizon / n)
    sources = [bit_generator(seed, path_index) for path_index in path_indices]
    for offset in range(0, n, chunk):
        width = min(chunk, n - offset)
        block = np.empty((len(sources), width), dtype=np.float64)
        for row, source in enumerate(sources):
            block[row] = scale * standard_normals(source, width)
        yield offset, block
