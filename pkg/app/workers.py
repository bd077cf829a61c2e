from __future__ import annotations

import logging
from concurrent.futures import Executor, ProcessPoolExecutor
from types import TracebackType
from typing import Callable, Sequence, TypeVar

from app.config import settings

logger = logging.getLogger("nonsticky.workers")

T = TypeVar("T")
R = TypeVar("R")


def path_blocks(n_paths: int, level: int) -> list[range]:
    """Split path indices into work blocks; the split depends on (n_paths, level) only."""
    steps = min(1 << level, settings.stream_chunk_steps)
    size = max(1, min(settings.block_paths_max, settings.block_elements // steps))
    return [range(start, min(start + size, n_paths)) for start in range(0, n_paths, size)]


class BlockRunner:
    """Runs pure work units serially or on a process pool, returning results in submission order."""

    def __init__(self, workers: int = 1) -> None:
        if workers < 1:
            raise ValueError("workers must be at least 1")
        self.workers = workers
        self._executor: Executor | None = None

    def __enter__(self) -> BlockRunner:
        if self.workers > 1:
            self._executor = ProcessPoolExecutor(max_workers=self.workers)
            logger.info("Started process pool with %s workers", self.workers)
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        traceback: TracebackType | None,
    ) -> None:
        if self._executor is not None:
            self._executor.shutdown(cancel_futures=exc is not None)
            self._executor = None

    def map(self, fn: Callable[[T], R], tasks: Sequence[T]) -> list[R]:
        if self._executor is None:
            return [fn(task) for task in tasks]
        return list(self._executor.map(fn, tasks))
