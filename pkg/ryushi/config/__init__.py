"""The `key = value` experiment config format."""
from __future__ import annotations

import enum
import json
import re
from collections.abc import Mapping
from pathlib import Path
from typing import Any, TextIO

from lark.lark import Lark

from .env import DEBUG
from .transform import KEYWORDS, transformer

parser = Lark.open(
    "grammar/config.lark",
    rel_to=__file__,
    parser="lalr",
    start="start",
    maybe_placeholders=False,
    transformer=transformer,
)

debug_parser = Lark.open(
    "grammar/config.lark",
    rel_to=__file__,
    parser="lalr",
    start="start",
    maybe_placeholders=False,
    transformer=None,
)

_BARE_WORD = re.compile(r"[A-Za-z_][A-Za-z0-9_.+-]*")


def loads(src: str) -> dict[str, Any]:
    """
    Parse a config from a string
    """
    if not DEBUG.get():
        return parser.parse(src)
    tree = debug_parser.parse(src)
    return transformer.transform(tree)


def load(file: TextIO | Path) -> dict[str, Any]:
    """
    Parse a config from a file-like object
    """
    data = file.read_text() if isinstance(file, Path) else file.read()
    return loads(data)


def parse_override(assignment: str) -> tuple[str, Any]:
    """Parse a single `key=value` override as given on the command line."""
    data = loads(assignment)
    if len(data) != 1:
        raise ValueError(f"expected exactly one key=value assignment, got {assignment!r}")
    return next(iter(data.items()))


def encode_value(value: Any) -> str:
    if isinstance(value, enum.Enum):
        value = value.value
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int | float):
        return repr(value)
    if isinstance(value, tuple | list):
        if len(value) != 2:
            raise ValueError(f"only pairs can be written, got {value!r}")
        return f"({encode_value(value[0])}, {encode_value(value[1])})"
    if isinstance(value, str):
        if _BARE_WORD.fullmatch(value) and value not in KEYWORDS:
            return value
        return json.dumps(value)
    raise TypeError(f"{type(value).__name__} values cannot be written to a config file")


def dumps(data: Mapping[str, Any]) -> str:
    """
    Serialize a mapping to config text
    """
    return "".join(f"{key} = {encode_value(value)}\n" for key, value in data.items())
