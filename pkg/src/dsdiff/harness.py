"""Regression of difficulty scores against reference accuracies, speedups and reports."""

import csv
import math
import re
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DegenerateError
from .records import write_scores

REPORT_HEADER = ("method", "variant", "slope", "intercept", "r2", "mean_abs_gap",
                 "speedup_vs_baseline", "n_points")


class Regression(NamedTuple):
    slope: float
    intercept: float
    r2: float


def linregress(x, y):
    """Ordinary least squares ``y ~ slope * x + intercept``.

    Parameters
    ----------
    x, y : array_like
        At least three paired observations.

    Returns
    -------
    Regression
        ``(slope, intercept, r2)`` with ``r2 = 1 - SS_res / SS_tot``. A
        constant ``y`` has no variance to explain; ``r2`` is then 0.

    Raises
    ------
    DegenerateError
        If ``x`` is constant.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"x and y must be 1-D of equal length, got {x.shape} and {y.shape}")
    if len(x) < 3:
        raise ValueError(f"regression needs at least 3 points, got {len(x)}")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise DegenerateError("x is constant; slope is undefined")
    yc = y - y.mean()
    slope = float(xc @ yc) / sxx
    intercept = float(y.mean() - slope * x.mean())
    ss_tot = float(yc @ yc)
    if ss_tot == 0.0:
        warnings.warn("reference values are constant; R^2 set to 0", RuntimeWarning, stacklevel=2)
        return Regression(slope, intercept, 0.0)
    res = y - (slope * x + intercept)
    return Regression(slope, intercept, 1.0 - float(res @ res) / ss_tot)


def has_accuracy_semantics(method, variant):
    # scores that live on the same [0, 1] accuracy scale as the reference
    return method == "probenet" or (method == "kmeans" and variant.endswith("+aecm"))


@dataclass(frozen=True)
class GroupReport:
    method: str
    variant: str
    slope: float
    intercept: float
    r2: float
    mean_abs_gap: float | None
    speedup: float
    mean_wall_time: float
    points: tuple  # (dataset_id, score, reference), sorted

    @property
    def n_points(self):
        return len(self.points)

    def row(self):
        gap = "" if self.mean_abs_gap is None else repr(self.mean_abs_gap)
        return (self.method, self.variant, repr(self.slope), repr(self.intercept), repr(self.r2),
                gap, repr(self.speedup), str(self.n_points))


@dataclass(frozen=True)
class EvalReport:
    groups: tuple
    baseline: tuple | None
    records: tuple = field(repr=False, default=())

    def group(self, method, variant):
        for g in self.groups:
            if (g.method, g.variant) == (method, variant):
                return g
        raise KeyError((method, variant))

    def speedups(self):
        return {(g.method, g.variant): g.speedup for g in self.groups}


def _record_key(r):
    return (r.method, r.variant, r.dataset_id, r.seed, r.score, r.wall_time)


def evaluate(records, reference, baseline=None):
    """Regress every ``(method, variant)`` group of scores on the references.

    Parameters
    ----------
    records : iterable of ScoreRecord
    reference : mapping
        ``dataset_id -> Top-1``.
    baseline : tuple, optional
        ``(method, variant)`` whose mean wall time is the speedup numerator.
        Defaults to the slowest group.

    Returns
    -------
    EvalReport
        Groups sorted by ``(method, variant)``. Groups that cannot be
        regressed (fewer than 3 points, constant scores) get NaN fit values.
    """
    records = tuple(sorted(records, key=_record_key))
    missing = sorted({r.dataset_id for r in records} - set(reference))
    if missing:
        raise KeyError(f"no reference accuracy for dataset id(s): {', '.join(missing)}")
    by_group = defaultdict(list)
    for r in records:
        by_group[r.group].append(r)
    mean_time = {k: math.fsum(r.wall_time for r in v) / len(v) for k, v in by_group.items()}
    if baseline is None and mean_time:
        baseline = max(sorted(mean_time), key=lambda k: mean_time[k])
    if baseline is not None:
        baseline = tuple(baseline)
        if baseline not in mean_time:
            raise KeyError(f"baseline {baseline[0]}/{baseline[1]} has no score records")
    groups = []
    for (method, variant) in sorted(by_group):
        recs = by_group[(method, variant)]
        x = np.array([r.score for r in recs])
        y = np.array([reference[r.dataset_id] for r in recs])
        try:
            fit = linregress(x, y)
        except (DegenerateError, ValueError) as exc:
            warnings.warn(f"{method}/{variant}: {exc}", RuntimeWarning, stacklevel=2)
            fit = Regression(math.nan, math.nan, math.nan)
        gap = float(np.mean(np.abs(x - y))) if has_accuracy_semantics(method, variant) else None
        speedup = mean_time[baseline] / mean_time[(method, variant)]
        points = tuple((r.dataset_id, float(r.score), float(reference[r.dataset_id])) for r in recs)
        groups.append(GroupReport(method, variant, fit.slope, fit.intercept, fit.r2, gap, speedup,
                                  mean_time[(method, variant)], points))
    return EvalReport(tuple(groups), baseline, records)


def early_stopping_curve(report, kind):
    """``[(epochs, r2, mean_abs_gap), ...]`` for probe groups ``kind@epochs``, by epochs."""
    out = []
    for g in report.groups:
        if g.method == "probenet" and g.variant.startswith(kind + "@"):
            out.append((int(g.variant.split("@", 1)[1]), g.r2, g.mean_abs_gap))
    return sorted(out)


# -- report emission --------------------------------------------------------

_W, _H, _PAD = 360, 300, 48


def _fmt(v):
    return f"{v:.2f}"


def _span(values):
    lo, hi = min(values), max(values)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    margin = 0.05 * (hi - lo)
    return lo - margin, hi + margin


def _escape(text):
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def scatter_svg(group):
    """Scatter of score vs reference with the fitted line and an R^2 label."""
    xs = [p[1] for p in group.points] or [0.0]
    ys = [p[2] for p in group.points] or [0.0]
    x0, x1 = _span(xs)
    y0, y1 = _span(ys)

    def px(v):
        return _PAD + (v - x0) / (x1 - x0) * (_W - 2 * _PAD)

    def py(v):
        return _H - _PAD - (v - y0) / (y1 - y0) * (_H - 2 * _PAD)

    title = _escape(f"{group.method} / {group.variant}")
    r2 = "nan" if math.isnan(group.r2) else f"{group.r2:.3f}"
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect x="{_PAD}" y="{_PAD}" width="{_W - 2 * _PAD}" height="{_H - 2 * _PAD}" '
        'fill="none" stroke="#888"/>',
        f'<text x="{_W // 2}" y="20" text-anchor="middle" font-size="13">{title}</text>',
        f'<text x="{_W // 2}" y="{_H - 12}" text-anchor="middle" font-size="11">score</text>',
        f'<text x="14" y="{_H // 2}" text-anchor="middle" font-size="11" '
        f'transform="rotate(-90 14 {_H // 2})">reference top-1</text>',
        f'<text x="{_PAD + 6}" y="{_PAD + 16}" font-size="12">R² = {r2}</text>',
    ]
    if not math.isnan(group.slope):
        # clip the fitted line to the plot's x range
        out.append(f'<line x1="{_fmt(px(x0))}" y1="{_fmt(py(group.slope * x0 + group.intercept))}" '
                   f'x2="{_fmt(px(x1))}" y2="{_fmt(py(group.slope * x1 + group.intercept))}" '
                   'stroke="#c33" stroke-width="1.5"/>')
    for dataset_id, x, y in group.points:
        out.append(f'<circle cx="{_fmt(px(x))}" cy="{_fmt(py(y))}" r="3.5" fill="#246">'
                   f'<title>{_escape(dataset_id)}</title></circle>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def svg_name(method, variant):
    return re.sub(r"[^A-Za-z0-9._-]+", "_", f"{method}_{variant}") + ".svg"


def write_report_csv(path, report):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for g in report.groups:
            writer.writerow(g.row())


def emit_report(report, out_dir):
    """Write ``scores.csv``, ``report.csv`` and one scatter SVG per group.

    Output is byte-stable for identical inputs. Returns the written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "scores.csv", out / "report.csv"]
    write_scores(paths[0], report.records, append=False)
    write_report_csv(paths[1], report)
    for g in report.groups:
        p = out / svg_name(g.method, g.variant)
        p.write_text(scatter_svg(g), encoding="utf-8")
        paths.append(p)
    return paths


def format_report(report):
    """Plain-text table of the report for terminals."""
    lines = [f"{'method':<11}{'variant':<22}{'n':>4}{'r2':>9}{'slope':>9}{'gap':>8}{'speedup':>10}"]
    for g in report.groups:
        gap = "-" if g.mean_abs_gap is None else f"{g.mean_abs_gap:.3f}"
        lines.append(f"{g.method:<11}{g.variant:<22}{g.n_points:>4}{g.r2:>9.3f}{g.slope:>9.3f}"
                     f"{gap:>8}{g.speedup:>9.1f}x")
    if report.baseline:
        lines.append(f"speedup baseline: {report.baseline[0]}/{report.baseline[1]}")
    return "\n".join(lines)
