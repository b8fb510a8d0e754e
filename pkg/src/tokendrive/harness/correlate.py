"""Pearson correlation between reconstruction and waypoint losses on validation pairs."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from tokendrive.errors import ConfigError, EmptyInputError, NumericError


@dataclass
class Correlation:
    r: float
    n: int
    x: list[float]
    y: list[float]

    def scatter_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# pearson_r: {self.r!r} n: {self.n}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pair", "l_rec", "l_way"])
        for i, (a, b) in enumerate(zip(self.x, self.y)):
            w.writerow([i, repr(a), repr(b)])
        return buf.getvalue()


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Two-pass Pearson r; the result is clipped to [-1, 1] against round-off."""
    if len(x) != len(y):
        raise ConfigError(f"pearson: {len(x)} x values for {len(y)} y values")
    n = len(x)
    if n < 3:
        raise EmptyInputError(f"pearson: need at least 3 pairs, got {n}")
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    dx = [a - mx for a in x]
    dy = [b - my for b in y]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0.0 or syy == 0.0:
        raise NumericError("pearson: correlation undefined for a zero-variance series")
    sxy = math.fsum(a * b for a, b in zip(dx, dy))
    r = sxy / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def read_pairs(path) -> tuple[list[float], list[float]]:
    """``l_rec`` and ``l_way`` columns of a CSV; ``#`` comment lines are skipped."""
    text = Path(path).read_text(encoding="utf-8")
    rows = csv.DictReader(line for line in text.splitlines() if not line.startswith("#"))
    if rows.fieldnames is None or not {"l_rec", "l_way"} <= set(rows.fieldnames):
        raise ConfigError(f"{path}: expected columns l_rec and l_way, got {rows.fieldnames}")
    x, y = [], []
    for i, row in enumerate(rows):
        try:
            x.append(float(row["l_rec"]))
            y.append(float(row["l_way"]))
        except ValueError as exc:
            raise ConfigError(f"{path}: row {i}: {exc}") from None
    return x, y


def correlate(x: Sequence[float], y: Sequence[float]) -> Correlation:
    return Correlation(pearson(x, y), len(x), list(map(float, x)), list(map(float, y)))


def correlate_file(path) -> Correlation:
    return correlate(*read_pairs(path))
