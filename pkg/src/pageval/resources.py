"""Packaged prompt templates.

Templates live under pageval/resources/ as plain text with {{name}}
placeholders. Rendering is a literal substitution: no escaping, no
conditionals, unknown placeholders left intact so a missing variable is
visible in the outgoing prompt rather than silently dropped.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources as importlib_resources


@lru_cache(maxsize=None)
def load_text(name: str) -> str:
    ref = importlib_resources.files("pageval") / "resources" / f"{name}.txt"
    return ref.read_text(encoding="utf-8")


def render(template: str, **values) -> str:
    out = template
    for key, value in values.items():
        out = out.replace("{{" + key + "}}", str(value))
    return out
