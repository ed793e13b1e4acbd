"""Minimal TOML subset reader/writer for run configs.

This interpreter targets Python 3.10, which has no stdlib TOML module, and
the deployment environment provides no TOML package; the subset below covers
everything a run config needs and nothing more:

* one level of ``[section]`` tables plus top-level keys,
* values: basic strings, integers, floats, booleans, flat arrays of those,
* ``#`` comments and blank lines.

No nested tables, no multi-line strings, no datetimes, no string escapes.
"""

from __future__ import annotations

import re
from pathlib import Path

from .errors import UsageError


class TomlError(UsageError):
    """Config text outside the supported TOML subset."""


_KEY_RE = re.compile(r"^[A-Za-z0-9_-]+$")
_INT_RE = re.compile(r"^[+-]?\d+$")


def _parse_scalar(text: str, lineno: int):
    text = text.strip()
    if not text:
        raise TomlError(f"line {lineno}: empty value")
    if text.startswith('"'):
        if not (text.endswith('"') and len(text) >= 2) or "\\" in text:
            raise TomlError(f"line {lineno}: unsupported string syntax {text!r}")
        return text[1:-1]
    if text == "true":
        return True
    if text == "false":
        return False
    if _INT_RE.match(text):
        return int(text)
    try:
        return float(text)
    except ValueError:
        raise TomlError(f"line {lineno}: cannot parse value {text!r}") from None


def _parse_value(text: str, lineno: int):
    text = text.strip()
    if text.startswith("["):
        if not text.endswith("]"):
            raise TomlError(f"line {lineno}: arrays must close on the same line")
        inner = text[1:-1].strip()
        if not inner:
            return []
        return [_parse_scalar(part, lineno) for part in inner.split(",")]
    return _parse_scalar(text, lineno)


def _strip_comment(line: str) -> str:
    out = []
    in_string = False
    for ch in line:
        if ch == '"':
            in_string = not in_string
        if ch == "#" and not in_string:
            break
        out.append(ch)
    return "".join(out)


def loads(text: str) -> dict:
    """Parse subset-TOML text into {section: {key: value}} plus top-level keys."""
    result: dict = {}
    section: dict = result
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise TomlError(f"line {lineno}: malformed table header {raw!r}")
            name = line[1:-1].strip()
            if not _KEY_RE.match(name):
                raise TomlError(f"line {lineno}: bad table name {name!r}")
            if name in result and not isinstance(result[name], dict):
                raise TomlError(f"line {lineno}: {name!r} already used as a key")
            section = result.setdefault(name, {})
            continue
        if "=" not in line:
            raise TomlError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not _KEY_RE.match(key):
            raise TomlError(f"line {lineno}: bad key {key!r}")
        if key in section:
            raise TomlError(f"line {lineno}: duplicate key {key!r}")
        section[key] = _parse_value(value, lineno)
    return result


def _format_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        if '"' in value or "\\" in value or "\n" in value:
            raise TomlError(f"string {value!r} outside the supported subset")
        return f'"{value}"'
    raise TomlError(f"unsupported value type {type(value).__name__}")


def _format_value(value) -> str:
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format_scalar(v) for v in value) + "]"
    return _format_scalar(value)


def dumps(data: dict) -> str:
    """Serialize {section: {key: value}} (and top-level keys) to TOML text."""
    lines = []
    sections = []
    for key, value in data.items():
        if isinstance(value, dict):
            sections.append((key, value))
        else:
            lines.append(f"{key} = {_format_value(value)}")
    for name, table in sections:
        if lines and lines[-1] != "":
            lines.append("")
        lines.append(f"[{name}]")
        for key, value in table.items():
            lines.append(f"{key} = {_format_value(value)}")
    return "\n".join(lines) + "\n"


def load(path: str | Path) -> dict:
    return loads(Path(path).read_text())


def dump(data: dict, path: str | Path) -> None:
    Path(path).write_text(dumps(data))
