from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import pytest
from dacite.exceptions import UnexpectedDataError, WrongTypeError

from ryushi.utils import THREADS_ENV, default_threads, from_dict, write_atomic


class Color(str, Enum):
    RED = "red"
    BLUE = "blue"


@dataclass
class Sample:
    count: int
    ratio: float
    limit: float | None = None
    span: tuple[float, float] | None = None
    color: Color = Color.RED


def test_from_dict_coerces_numbers():
    sample = from_dict(Sample, {"count": 3.0, "ratio": 1, "limit": 2, "span": (-1, 1), "color": "blue"})
    assert sample == Sample(3, 1.0, 2.0, (-1.0, 1.0), Color.BLUE)
    assert isinstance(sample.ratio, float)
    assert isinstance(sample.count, int)
    assert all(isinstance(v, float) for v in sample.span)
    assert from_dict(Sample, {"count": 1, "ratio": 0.5, "limit": None}).limit is None


def test_from_dict_rejects():
    with pytest.raises(WrongTypeError):
        from_dict(Sample, {"count": 2.5, "ratio": 1.0})
    with pytest.raises(WrongTypeError):
        from_dict(Sample, {"count": "many", "ratio": 1.0})
    with pytest.raises(UnexpectedDataError):
        from_dict(Sample, {"count": 1, "ratio": 1.0, "extra": 0})
    with pytest.raises(ValueError):
        from_dict(Sample, {"count": 1, "ratio": 1.0, "color": "green"})


def test_default_threads(monkeypatch: pytest.MonkeyPatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert default_threads() == 1
    monkeypatch.setenv(THREADS_ENV, "4")
    assert default_threads() == 4
    for raw in ("0", "-2", "four"):
        monkeypatch.setenv(THREADS_ENV, raw)
        with pytest.raises(ValueError):
            default_threads()


def test_write_atomic(tmp_path: Path):
    target = tmp_path / "nested" / "metrics.csv"
    assert write_atomic(target, "a\n") == target
    write_atomic(target, "b\n")
    assert target.read_text() == "b\n"
    assert [p.name for p in target.parent.iterdir()] == ["metrics.csv"]
