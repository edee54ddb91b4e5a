"""Score records, their CSV schema, and wall-clock measurement."""

import csv
import math
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

SCORES_HEADER = ("dataset_id", "method", "variant", "score", "wall_time_s", "seed")
REFERENCE_HEADER = ("dataset_id", "top1")
METHODS = ("silhouette", "kmeans", "probenet")

# nominal throughput used to turn modelled operation counts into seconds
MODEL_OPS_PER_SECOND = 1e9


@dataclass(frozen=True)
class ScoreRecord:
    dataset_id: str
    method: str
    variant: str
    score: float
    wall_time: float
    seed: int

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not math.isfinite(self.score):
            raise ValueError(f"score must be finite, got {self.score}")
        if not self.wall_time > 0:
            raise ValueError(f"wall_time must be > 0, got {self.wall_time}")

    @property
    def group(self):
        return (self.method, self.variant)

    def row(self):
        return (self.dataset_id, self.method, self.variant, repr(float(self.score)),
                repr(float(self.wall_time)), str(self.seed))


def write_scores(path, records, append=True):
    """Write records to ``path``; in append mode the header is written only when the file is new."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0 or not append
    with open(path, "a" if append else "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(SCORES_HEADER)
        for r in records:
            writer.writerow(r.row())


def _check_header(path, header, expected):
    missing = [c for c in expected if c not in (header or [])]
    if missing:
        raise ValueError(f"{path}: missing column(s) {', '.join(missing)}; expected header {','.join(expected)}")


def read_scores(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _check_header(path, reader.fieldnames, SCORES_HEADER)
        out = []
        for line, row in enumerate(reader, start=2):
            try:
                out.append(ScoreRecord(row["dataset_id"], row["method"], row["variant"], float(row["score"]),
                                       float(row["wall_time_s"]), int(row["seed"])))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{line}: {exc}") from None
        return out


def read_reference(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _check_header(path, reader.fieldnames, REFERENCE_HEADER)
        ref = {}
        for line, row in enumerate(reader, start=2):
            try:
                ref[row["dataset_id"]] = float(row["top1"])
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{line}: column top1: {exc}") from None
        return ref


def write_reference(path, reference):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REFERENCE_HEADER)
        for key in sorted(reference):
            writer.writerow((key, repr(float(reference[key]))))


def measure(fn, *args, repeat_below=1.0, repeats=3, **kwargs):
    """Call ``fn`` and return ``(result, seconds)``.

    Calls finishing under ``repeat_below`` seconds are repeated until
    ``repeats`` timings exist and the median is reported.
    """
    t0 = time.perf_counter()
    result = fn(*args, **kwargs)
    times = [time.perf_counter() - t0]
    if times[0] < repeat_below:
        for _ in range(repeats - 1):
            t0 = time.perf_counter()
            fn(*args, **kwargs)
            times.append(time.perf_counter() - t0)
    return result, max(statistics.median(times), 1e-9)
