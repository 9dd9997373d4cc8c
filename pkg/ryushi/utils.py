from __future__ import annotations

import enum
import os
import tempfile
import types
from dataclasses import Field
from pathlib import Path
from typing import Any, ClassVar, Protocol, TypeVar, Union, runtime_checkable

import typing_extensions
from dacite.config import Config
from dacite.core import from_dict as _from_dict

THREADS_ENV = "RYUSHI_THREADS"


@runtime_checkable
class DataClass(Protocol):
    __dataclass_fields__: ClassVar[dict[str, Field]]


DC_T = TypeVar("DC_T", bound=DataClass)

Unions = {Union, typing_extensions.Union, types.UnionType}


class _RyushiDaciteTypeHook(dict):
    def __init__(self):
        super().__init__(
            {
                int: self.hook_int,
                float: self.hook_float,
                type(None): self.hook_none,
                None: self.hook_none,
            }
        )

    def hook_int(self, v: Any) -> Any:
        return int(v) if isinstance(v, float) and v.is_integer() else v

    def hook_float(self, v: Any) -> Any:
        return float(v) if isinstance(v, int) and not isinstance(v, bool) else v

    def hook_none(self, v: Any) -> Any:
        return v

    def __contains__(self, o: object) -> bool:
        if typing_extensions.get_origin(o) in Unions:
            return any(dict.__contains__(self, arg) for arg in typing_extensions.get_args(o))
        return super().__contains__(o)

    def __getitem__(self, k: Any) -> Any:
        if typing_extensions.get_origin(k) in Unions:
            hooks = [self[arg] for arg in typing_extensions.get_args(k) if dict.__contains__(self, arg)]

            def applier(value):
                for func in hooks:
                    value = func(value)
                return value

            return applier
        return super().__getitem__(k)


_TYPE_HOOK = _RyushiDaciteTypeHook()


def from_dict(model: type[DC_T], data: dict[str, Any]) -> DC_T:
    return _from_dict(
        model,
        data,
        Config(
            type_hooks=_TYPE_HOOK,
            cast=[enum.Enum, tuple],
            strict=True,
        ),
    )


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return value


def write_atomic(path: Path, text: str) -> Path:
    """Write `text` to a temporary file next to `path`, then rename it over `path`."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fp:
            fp.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path
