"""Deterministic CSV writing: repr floats (shortest round-trip), LF endings.

Every CSV the package emits goes through write_csv so identical data always
serializes to identical bytes; inf/nan serialize as "inf"/"nan".
"""

from __future__ import annotations

import numbers


def fmt_cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, numbers.Integral):
        return str(int(v))
    if isinstance(v, numbers.Real):
        return repr(float(v))
    raise TypeError(f"cannot serialize {type(v).__name__} into a CSV cell")


def write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt_cell(v) for v in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
