"""Flat ``key = value`` configuration files.

One setting per line; keys are CLI flag names without the leading dashes
(``batch-size = 64``, ``lambda = 0.1``); ``#`` starts a comment. The same
format is written as ``config_resolved.txt`` in every run directory.
"""

from __future__ import annotations

from pathlib import Path

from .errors import MalformedRow, MissingFile


def read_config(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise MalformedRow(lineno, line, "expected key = value")
        key, value = (s.strip() for s in text.split("=", 1))
        if not key:
            raise MalformedRow(lineno, line, "empty key")
        out[key.replace("_", "-")] = value
    return out


def write_config(values: dict, path) -> None:
    lines = [f"{k} = {'' if v is None else v}" for k, v in sorted(values.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
