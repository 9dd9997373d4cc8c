from __future__ import annotations

import inspect
from dataclasses import MISSING, Field, fields
from typing import Any

from .config import encode_value
from .doc_parse import field_docs
from .utils import DataClass


def gen_field_doc(field: Field, doc: str | None) -> str:
    annotation = field.type if isinstance(field.type, str) else inspect.formatannotation(field.type)
    type_repr = f"@type: {annotation}"
    return f"{doc}\n\n{type_repr}" if doc else type_repr


def _comment(text: str) -> list[str]:
    return [f"# {line}".rstrip() for line in text.split("\n")]


def _default(field: Field) -> Any:
    if field.default_factory is not MISSING:
        return field.default_factory()
    return None if field.default is MISSING else field.default


def format_with_model(model: type[DataClass] | DataClass, header: str | None = None) -> str:
    """Render every field of `model` as a documented `key = value` line.

    Classes render their defaults (a template to copy from), instances their values.
    """
    cls = model if isinstance(model, type) else type(model)
    docs = field_docs(cls)
    blocks = [_comment(header)] if header else []
    for field in fields(cls):
        value = _default(field) if isinstance(model, type) else getattr(model, field.name)
        blocks.append([*_comment(gen_field_doc(field, docs.get(field.name))), f"{field.name} = {encode_value(value)}"])
    return "\n\n".join("\n".join(block) for block in blocks) + "\n"
