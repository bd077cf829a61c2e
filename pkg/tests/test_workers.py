import pytest

from app.config import settings
from app.workers import BlockRunner, path_blocks


def square(value: int) -> int:
    return value * value


def test_blocks_cover_every_path_once():
    blocks = path_blocks(10_001, 12)
    indices = [index for block in blocks for index in block]
    assert indices == list(range(10_001))


def test_block_size_respects_the_element_budget(monkeypatch):
    monkeypatch.setattr(settings, "block_elements", 1 << 16)
    monkeypatch.setattr(settings, "block_paths_max", 4096)
    assert len(path_blocks(100, 12)[0]) == 16
    assert len(path_blocks(100, 0)[0]) == 100
    assert len(path_blocks(5, 20)[0]) == 1


def test_blocks_do_not_depend_on_worker_count():
    with BlockRunner(1) as serial, BlockRunner(2) as pooled:
        assert serial.map(square, range(20)) == pooled.map(square, range(20)) == [i * i for i in range(20)]


def test_runner_rejects_zero_workers():
    with pytest.raises(ValueError):
        BlockRunner(0)
