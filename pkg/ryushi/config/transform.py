from __future__ import annotations

import ast
from typing import Any

from lark.lexer import Token
from lark.visitors import Transformer as BaseTransformer
from lark.visitors import v_args

KEYWORDS: dict[str, Any] = {"true": True, "false": False, "none": None}


class Transformer(BaseTransformer):
    """
    A [Transformer][lark.visitors.Transformer] turning a config file into a `dict`
    """

    def start(self, entries: list[tuple[str, Any]]) -> dict[str, Any]:
        data: dict[str, Any] = {}
        for key, value in entries:
            if key in data:
                raise ValueError(f"{key!r} is assigned more than once")
            data[key] = value
        return data

    @v_args(inline=True)
    def entry(self, key: Token, value: Any) -> tuple[str, Any]:
        return key.value, value

    @v_args(inline=True)
    def number(self, token: Token) -> int | float:
        text = token.value
        if "." not in text and "e" not in text.lower():
            return int(text)
        return float(text)

    @v_args(inline=True)
    def string(self, token: Token) -> str:
        return ast.literal_eval(token.value)

    @v_args(inline=True)
    def word(self, token: Token) -> Any:
        return KEYWORDS[token.value] if token.value in KEYWORDS else token.value

    pair = tuple


transformer = Transformer()
