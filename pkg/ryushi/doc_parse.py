from __future__ import annotations

import ast
import inspect
from functools import cache
from typing import cast

from loguru import logger


def cleanup_src(src: str) -> str:
    lines = src.expandtabs().split("\n")
    margin = len(lines[0]) - len(lines[0].lstrip())
    return "\n".join(line[margin:] for line in lines)


@cache
def field_docs(cls: type) -> dict[str, str]:
    """Docstrings written right below the fields of a dataclass, keyed by field name."""
    try:
        node = cast(ast.ClassDef, ast.parse(cleanup_src(inspect.getsource(cls))).body[0])
    except (TypeError, OSError):  # NOTE: for REPL.
        logger.error(f"Unable to read field docs of {cls.__qualname__}, maybe the source file is not reachable.")
        return {}
    docs: dict[str, str] = {}
    for stmt, following in zip(node.body, node.body[1:]):
        if (
            isinstance(stmt, ast.AnnAssign)
            and isinstance(stmt.target, ast.Name)
            and isinstance(following, ast.Expr)
            and isinstance(following.value, ast.Constant)
            and isinstance(following.value.value, str)
        ):
            docs[stmt.target.id] = inspect.cleandoc(following.value.value)
    return docs
