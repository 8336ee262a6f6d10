"""``key = value`` text files (transform specs, training configs, reports)."""
from __future__ import annotations

from .errors import FormatError


def parse_keyvalue(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise FormatError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key in out:
            raise FormatError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def format_keyvalue(values: dict) -> str:
    """Render a mapping; floats get 17 significant digits so they round-trip."""
    lines = []
    for k, v in values.items():
        if isinstance(v, float):
            v = f"{v:.17g}"
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
