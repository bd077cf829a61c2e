"""Euler-Maruyama scheme for dX = sigma(X) dW started off the zero set."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence, TextIO

import numpy as np
from numba import njit

from app.brownian import (
    BrownianLattice,
    coarsen,
    coarsen_block,
    generate_increment_block,
    generate_lattice,
    iter_increment_chunks,
)
from app.coefficients import CoefficientKind, CoefficientSpec, sigma_array
from app.config import settings
from app.errors import ConfigurationError, PreconditionError, SimulationError

logger = logging.getLogger("nonsticky.em_engine")

# Receives the chunk offset and the left-endpoint values X_{t_k} of every path in the chunk.
ChunkObserver = Callable[[int, np.ndarray], None]


@dataclass(frozen=True)
class SdeProblem:
    coefficient: CoefficientSpec
    x0: float
    horizon: float = 1.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise ConfigurationError(f"horizon must be positive, got {self.horizon!r}")
        if not math.isfinite(self.x0):
            raise ConfigurationError(f"x0 must be finite, got {self.x0!r}")


@dataclass(frozen=True, eq=False)
class GridPath:
    values: np.ndarray
    level: int
    x_start: float
    horizon: float
    seed: int
    path_index: int

    @property
    def n_steps(self) -> int:
        return 1 << self.level

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1, dtype=np.float64) * self.dt

    @property
    def terminal(self) -> float:
        return float(self.values[-1])


def shift_initial(problem: SdeProblem, level: int) -> float:
    """Start value x_n: x0 itself off the zero set, otherwise pushed up by sqrt(T) * 2**(-level/2)."""
    step = math.sqrt(problem.horizon) * 2.0 ** (-level / 2)
    x = problem.x0
    while problem.coefficient.is_zero(x):
        moved = x + step
        # step below one ulp of x
        x = moved if moved != x else math.nextafter(x, math.inf)
    return x


@njit(cache=True)
def _power_law_kernel(x_start, increments, alpha, odd):
    m, n = increments.shape
    values = np.empty((m, n + 1))
    for i in range(m):
        x = x_start[i]
        values[i, 0] = x
        for k in range(n):
            s = abs(x) ** alpha
            if odd and x < 0.0:
                s = -s
            x = x + s * increments[i, k]
            values[i, k + 1] = x
    return values


def _numpy_recursion(
    coefficient: CoefficientSpec,
    x_start: np.ndarray,
    increments: np.ndarray,
    offset: int,
    path_indices: Sequence[int] | None,
) -> np.ndarray:
    m, n = increments.shape
    values = np.empty((m, n + 1), dtype=np.float64)
    values[:, 0] = x_start
    state = values[:, 0]
    for k in range(n):
        state = state + sigma_array(coefficient, state) * increments[:, k]
        finite = np.isfinite(state)
        if not finite.all():
            row = int(np.argmin(finite))
            raise SimulationError(offset + k, path_indices[row] if path_indices is not None else None)
        values[:, k + 1] = state
    return values


def advance(
    coefficient: CoefficientSpec,
    x_start: np.ndarray,
    increments: np.ndarray,
    *,
    offset: int = 0,
    path_indices: Sequence[int] | None = None,
) -> np.ndarray:
    """Run the recursion X_{k+1} = X_k + sigma(X_k) dW_k for every row; returns (paths, steps + 1)."""
    x_start = np.ascontiguousarray(x_start, dtype=np.float64)
    increments = np.ascontiguousarray(increments, dtype=np.float64)
    if not coefficient.is_power_law:
        return _numpy_recursion(coefficient, x_start, increments, offset, path_indices)
    values = _power_law_kernel(
        x_start,
        increments,
        float(coefficient.alpha),
        coefficient.kind is CoefficientKind.ODD_POWER_LAW,
    )
    finite = np.isfinite(values)
    if not finite.all():
        column = int(np.argmin(finite.all(axis=0)))
        row = int(np.argmin(finite[:, column]))
        raise SimulationError(offset + column - 1, path_indices[row] if path_indices is not None else None)
    return values


def _check_dense(level: int) -> None:
    if level > settings.dense_level_cap:
        raise ConfigurationError(
            f"level {level} exceeds the dense storage cap {settings.dense_level_cap}; use fold_block"
        )


def _check_levels(levels: Sequence[int]) -> list[int]:
    ordered = list(levels)
    if not ordered:
        raise ConfigurationError("levels must not be empty")
    if any(b <= a for a, b in zip(ordered, ordered[1:])):
        raise ConfigurationError("levels must be strictly ascending")
    _check_dense(ordered[-1])
    return ordered


def _start(problem: SdeProblem, level: int, shift: bool) -> float:
    return shift_initial(problem, level) if shift else problem.x0


def simulate_path(problem: SdeProblem, lattice: BrownianLattice, *, shift: bool = True) -> GridPath:
    if lattice.horizon != problem.horizon:
        raise PreconditionError(
            f"lattice horizon {lattice.horizon!r} does not match problem horizon {problem.horizon!r}"
        )
    _check_dense(lattice.level)
    x_start = _start(problem, lattice.level, shift)
    values = advance(
        problem.coefficient,
        np.array([x_start]),
        lattice.increments[np.newaxis, :],
        path_indices=[lattice.path_index],
    )[0]
    values.flags.writeable = False
    return GridPath(values, lattice.level, x_start, problem.horizon, lattice.seed, lattice.path_index)


def simulate_coupled_family(
    problem: SdeProblem,
    seed: int,
    path_index: int,
    levels: Sequence[int],
    *,
    shift: bool = True,
) -> list[GridPath]:
    """Paths at every level driven by one Brownian trajectory, coarsened from the finest lattice."""
    ordered = _check_levels(levels)
    lattice = generate_lattice(seed, path_index, ordered[-1], problem.horizon)
    lattices: dict[int, BrownianLattice] = {}
    while True:
        if lattice.level in ordered:
            lattices[lattice.level] = lattice
        if lattice.level == ordered[0]:
            break
        lattice = coarsen(lattice)
    return [simulate_path(problem, lattices[level], shift=shift) for level in ordered]


def simulate_block(
    problem: SdeProblem,
    seed: int,
    path_indices: Sequence[int],
    level: int,
    *,
    shift: bool = True,
) -> np.ndarray:
    _check_dense(level)
    increments = generate_increment_block(seed, path_indices, level, problem.horizon)
    x_start = np.full(len(path_indices), _start(problem, level, shift))
    return advance(problem.coefficient, x_start, increments, path_indices=path_indices)


def simulate_coupled_block(
    problem: SdeProblem,
    seed: int,
    path_indices: Sequence[int],
    levels: Sequence[int],
    *,
    shift: bool = True,
) -> dict[int, np.ndarray]:
    ordered = _check_levels(levels)
    increments = generate_increment_block(seed, path_indices, ordered[-1], problem.horizon)
    level = ordered[-1]
    paths: dict[int, np.ndarray] = {}
    while True:
        if level in ordered:
            x_start = np.full(len(path_indices), _start(problem, level, shift))
            paths[level] = advance(problem.coefficient, x_start, increments, path_indices=path_indices)
        if level == ordered[0]:
            break
        increments = coarsen_block(increments)
        level -= 1
    return {level: paths[level] for level in ordered}


def fold_block(
    problem: SdeProblem,
    seed: int,
    path_indices: Sequence[int],
    level: int,
    observer: ChunkObserver | None = None,
    *,
    shift: bool = True,
) -> np.ndarray:
    """Stream a block through time without storing it; returns the terminal values X_T."""
    state = np.full(len(path_indices), _start(problem, level, shift))
    for offset, increments in iter_increment_chunks(seed, path_indices, level, problem.horizon):
        values = advance(problem.coefficient, state, increments, offset=offset, path_indices=path_indices)
        if observer is not None:
            observer(offset, values[:, :-1])
        state = values[:, -1].copy()
    return state


def write_path_csv(path: GridPath, stream: TextIO) -> None:
    stream.write("t,x\n")
    for t, x in zip(path.times.tolist(), path.values.tolist()):
        stream.write(f"{t:.17g},{x:.17g}\n")
