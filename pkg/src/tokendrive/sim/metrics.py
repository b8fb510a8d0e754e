"""Drive logs, their CSV form, and route completion / infraction / driving scores."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping

INFRACTION_CODES = {"collision": 1, "stop": 2, "deviation": 3}
DEFAULT_PENALTIES = {"collision": 0.60, "stop": 0.70}
STATUSES = ("finished", "blocked", "deviated", "timeout", "aborted")

LOG_COLUMNS = ("step", "x", "y", "heading", "speed", "steer", "accel", "progress_m", "infraction_code")
METRIC_COLUMNS = ("rc", "is", "ds")


@dataclass
class StepRecord:
    step: int
    x: float
    y: float
    heading: float
    speed: float
    steer: float
    accel: float
    progress_m: float                 # max arc-length progress so far
    infractions: tuple[str, ...] = ()


@dataclass
class DriveLog:
    records: list[StepRecord] = field(default_factory=list)
    status: str = "timeout"
    diagnostic: str = ""

    @property
    def events(self) -> list[tuple[int, str]]:
        return [(r.step, kind) for r in self.records for kind in r.infractions]

    @property
    def max_progress(self) -> float:
        return self.records[-1].progress_m if self.records else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.records:
            code = "+".join(str(INFRACTION_CODES[k]) for k in r.infractions) or "0"
            w.writerow([r.step, repr(r.x), repr(r.y), repr(r.heading), repr(r.speed),
                        repr(r.steer), repr(r.accel), repr(r.progress_m), code])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str, status: str = "timeout") -> "DriveLog":
        names = {v: k for k, v in INFRACTION_CODES.items()}
        rows = csv.DictReader(io.StringIO(text))
        records = []
        for row in rows:
            code = row["infraction_code"]
            kinds = () if code == "0" else tuple(names[int(c)] for c in code.split("+"))
            records.append(StepRecord(int(row["step"]), *(float(row[c]) for c in LOG_COLUMNS[1:8]), kinds))
        return cls(records, status)


@dataclass(frozen=True)
class Metrics:
    rc: float
    is_score: float
    ds: float

    def to_csv(self) -> str:
        return ",".join(METRIC_COLUMNS) + "\n" + f"{self.rc!r},{self.is_score!r},{self.ds!r}\n"

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


def infraction_score(events, penalties: Mapping[str, float] | None = None) -> float:
    """Product of per-event penalty factors, starting at 1.0; unlisted kinds cost nothing."""
    pen = DEFAULT_PENALTIES if penalties is None else penalties
    score = 1.0
    for _, kind in events:
        score *= pen.get(kind, 1.0)
    return score


def compute_metrics(log: DriveLog, scenario, penalties: Mapping[str, float] | None = None) -> Metrics:
    length = scenario if isinstance(scenario, (int, float)) else scenario.route_length
    rc = min(1.0, max(0.0, log.max_progress / length))
    is_score = infraction_score(log.events, penalties)
    return Metrics(rc, is_score, rc * is_score)
