"""Experiment reports: per-sample error rows, summaries, and CSV / SVG / text emitters."""

from __future__ import annotations

import csv
import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

# "l2" is the discretized L2(0, T) norm: sqrt(dt) times the Euclidean norm of the sample vector
ERROR_DEFINITION = {
    "l2": "sqrt(dt) * ||x_rec - x_true||_2",
    "euclid": "||x_rec - x_true||_2",
    "relative": "||x_rec - x_true||_2 / ||x_true||_2",
    "rms": "||x_rec - x_true||_2 / sqrt(d)",
}
ROW_FIELDS = ["method", "init", "train_level", "test_level", "sample", "error", "error_l2", "error_euclid",
              "error_relative", "error_rms", "iterations", "converged", "residual"]


@dataclass
class ExperimentReport:
    experiment: str
    metric: str = "l2"
    rows: list = field(default_factory=list)
    runtime: float = 0.0
    provenance: dict = field(default_factory=dict)
    dt: float = 1.0  # sample spacing used by the "l2" metric

    def add(self, method, init, train_level, test_level, sample, x_rec, x_true, iterations=0, converged=True,
            residual=float("nan")):
        diff = np.asarray(x_rec) - np.asarray(x_true)
        eu = float(np.linalg.norm(diff))
        errs = {"l2": math.sqrt(self.dt) * eu, "euclid": eu, "relative": eu / float(np.linalg.norm(x_true)),
                "rms": eu / math.sqrt(diff.size)}
        self.rows.append({
            "method": method, "init": init, "train_level": float(train_level), "test_level": float(test_level),
            "sample": int(sample), "error": errs[self.metric], "error_l2": errs["l2"],
            "error_euclid": errs["euclid"], "error_relative": errs["relative"], "error_rms": errs["rms"],
            "iterations": int(iterations), "converged": bool(converged), "residual": float(residual),
        })

    def groups(self) -> "OrderedDict[tuple, list]":
        out = OrderedDict()
        for r in self.rows:
            out.setdefault((r["method"], r["init"], r["train_level"], r["test_level"]), []).append(r)
        return out

    def summary(self) -> list[dict]:
        """Mean and sample standard deviation of ``error`` per group, in first-seen order."""
        res = []
        for (method, init, tl, sl), rows in self.groups().items():
            e = np.array([r["error"] for r in sorted(rows, key=lambda r: r["sample"])])
            res.append({"method": method, "init": init, "train_level": tl, "test_level": sl, "n": e.size,
                        "mean": float(e.mean()), "std": float(e.std(ddof=1)) if e.size > 1 else 0.0})
        return res

    def stat(self, method, init=None, train_level=None, test_level=None) -> dict:
        for s in self.summary():
            if s["method"] == method and (init is None or s["init"] == init) \
                    and (train_level is None or s["train_level"] == train_level) \
                    and (test_level is None or s["test_level"] == test_level):
                return s
        raise KeyError((method, init, train_level, test_level))

    def errors(self, method, init=None, **kw) -> np.ndarray:
        rows = [r for r in self.rows if r["method"] == method and (init is None or r["init"] == init)
                and all(r[k] == v for k, v in kw.items())]
        return np.array([r["error"] for r in sorted(rows, key=lambda r: r["sample"])])


def _header_lines(report: ExperimentReport) -> list[str]:
    return [
        f"# experiment: {report.experiment}",
        f"# error: {ERROR_DEFINITION[report.metric]}",
        f"# dt: {report.dt!r}",
        f"# runtime_seconds: {report.runtime!r}",
    ]


def write_csv(report: ExperimentReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for line in _header_lines(report):
            fh.write(line + "\n")
        w = csv.DictWriter(fh, fieldnames=ROW_FIELDS)
        w.writeheader()
        for r in report.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return path


def read_csv(path) -> ExperimentReport:
    path = Path(path)
    meta = {}
    with open(path) as fh:
        lines = fh.readlines()
    body = []
    for line in lines:
        if line.startswith("# "):
            key, _, val = line[2:].partition(": ")
            meta[key] = val.strip()
        else:
            body.append(line)
    metric = {v: k for k, v in ERROR_DEFINITION.items()}.get(meta.get("error"), "l2")
    rep = ExperimentReport(meta.get("experiment", ""), metric, runtime=float(meta.get("runtime_seconds", 0.0)),
                           dt=float(meta.get("dt", 1.0)))
    for r in csv.DictReader(body):
        row = {}
        for k in ROW_FIELDS:
            v = r[k]
            if k in ("method", "init"):
                row[k] = v
            elif k in ("sample", "iterations"):
                row[k] = int(v)
            elif k == "converged":
                row[k] = v == "True"
            else:
                row[k] = float(v)
        rep.rows.append(row)
    return rep


def write_summary_csv(report: ExperimentReport, path) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["method", "init", "train_level", "test_level", "n", "mean", "std"])
        w.writeheader()
        for s in report.summary():
            w.writerow(s)
    return Path(path)


def write_provenance(report: ExperimentReport, path) -> Path:
    Path(path).write_text(json.dumps({"experiment": report.experiment, "metric": report.metric,
                                      "error_definition": ERROR_DEFINITION[report.metric], "dt": report.dt,
                                      "runtime_seconds": report.runtime, **report.provenance},
                                     indent=2, sort_keys=True, default=str))
    return Path(path)


def format_text(report: ExperimentReport) -> str:
    lines = _header_lines(report)
    lines.append(f"{'method':<22}{'init':<10}{'train':>8}{'test':>8}{'n':>5}   mean +- std")
    for s in report.summary():
        lines.append(f"{s['method']:<22}{s['init']:<10}{s['train_level']:>8.3g}{s['test_level']:>8.3g}"
                     f"{s['n']:>5}   {s['mean']:.4f} +- {s['std']:.4f}")
    return "\n".join(lines) + "\n"


# --- SVG ------------------------------------------------------------------------

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"]


def _scale(lo, hi, a, b):
    if hi == lo:
        hi = lo + 1.0
    return lambda v: a + (v - lo) / (hi - lo) * (b - a)


def svg_lines(series: dict, path, title: str = "", xlabel: str = "", ylabel: str = "", errors: dict | None = None,
              width: int = 640, height: int = 400, log_x: bool = False) -> Path:
    """One polyline per entry of ``series`` (name -> (x, y)); optional symmetric error bars."""
    series = {k: (np.asarray(x, float), np.asarray(y, float)) for k, (x, y) in series.items()}
    errors = {k: np.asarray(v, float) for k, v in (errors or {}).items()}
    pts = [(np.asarray(x, float), np.asarray(y, float)) for x, y in series.values()]
    tx = (lambda v: np.log10(v)) if log_x else (lambda v: v)
    xs = np.concatenate([tx(x) for x, _ in pts]) if pts else np.array([0.0, 1.0])
    ylo = [y - errors.get(k, 0 * y) for k, (_, y) in series.items()]
    yhi = [y + errors.get(k, 0 * y) for k, (_, y) in series.items()]
    ys = np.concatenate(ylo + yhi) if pts else np.array([0.0, 1.0])
    m = 50
    sx = _scale(xs.min(), xs.max(), m, width - m)
    sy = _scale(ys.min(), ys.max(), height - m, m)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<line x1="{m}" y1="{height - m}" x2="{width - m}" y2="{height - m}" stroke="black"/>',
           f'<line x1="{m}" y1="{m}" x2="{m}" y2="{height - m}" stroke="black"/>',
           f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
           f'<text x="12" y="{height / 2}" font-size="12" transform="rotate(-90 12 {height / 2})" '
           f'text-anchor="middle">{escape(ylabel)}</text>',
           f'<text x="{m}" y="{height - m + 15}" font-size="10">{xs.min():.3g}</text>',
           f'<text x="{width - m}" y="{height - m + 15}" font-size="10" text-anchor="end">{xs.max():.3g}</text>',
           f'<text x="{m - 4}" y="{height - m}" font-size="10" text-anchor="end">{ys.min():.3g}</text>',
           f'<text x="{m - 4}" y="{m}" font-size="10" text-anchor="end">{ys.max():.3g}</text>']
    for c, (name, (x, y)) in enumerate(series.items()):
        col = _COLORS[c % len(_COLORS)]
        x = tx(np.asarray(x, float))
        y = np.asarray(y, float)
        coords = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
        out.append(f'<polyline data-series="{escape(name)}" fill="none" stroke="{col}" stroke-width="1.5" '
                   f'points="{coords}"/>')
        if name in errors:
            for a, b, e in zip(x, y, np.asarray(errors[name], float)):
                out.append(f'<line x1="{sx(a):.2f}" y1="{sy(b - e):.2f}" x2="{sx(a):.2f}" y2="{sy(b + e):.2f}" '
                           f'stroke="{col}"/>')
        out.append(f'<text x="{width - m - 150}" y="{m + 14 * c}" font-size="11" fill="{col}">{escape(name)}</text>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path


def svg_panels(panels: dict, t, path, width: int = 800, height_per: int = 160) -> Path:
    """Stacked line panels (name -> y-values over the common axis ``t``)."""
    height = height_per * len(panels)
    m = 45
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">', f'<rect width="{width}" height="{height}" fill="white"/>']
    t = np.asarray(t, float)
    sx = _scale(t.min(), t.max(), m, width - 10)
    for p, (name, y) in enumerate(panels.items()):
        y = np.asarray(y, float)
        top = p * height_per
        sy = _scale(y.min(), y.max(), top + height_per - 20, top + 20)
        coords = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(t, y))
        out.append(f'<text x="{m}" y="{top + 14}" font-size="12">{escape(name)}</text>')
        out.append(f'<polyline data-series="{escape(name)}" fill="none" stroke="{_COLORS[p % len(_COLORS)]}" '
                   f'stroke-width="1" points="{coords}"/>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
    return Path(path)


def svg_report(report: ExperimentReport, path, x_key: str = "train_level") -> Path:
    """Mean error with standard-deviation bars against ``x_key``, one polyline per method/init."""
    series, errs = {}, {}
    by = OrderedDict()
    for s in report.summary():
        by.setdefault(f"{s['method']} ({s['init']})", []).append(s)
    for name, items in by.items():
        items = sorted(items, key=lambda s: s[x_key])
        series[name] = ([s[x_key] for s in items], [s["mean"] for s in items])
        errs[name] = [s["std"] for s in items]
    return svg_lines(series, path, title=report.experiment, xlabel=x_key, ylabel=ERROR_DEFINITION[report.metric],
                     errors=errs)


def emit_report(report: ExperimentReport, out_dir, formats=("csv", "svg", "text"), stem: str | None = None) -> dict:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    stem = stem or report.experiment
    files = {}
    if "csv" in formats:
        files["csv"] = write_csv(report, out_dir / f"{stem}.csv")
        files["summary"] = write_summary_csv(report, out_dir / f"{stem}_summary.csv")
        files["provenance"] = write_provenance(report, out_dir / f"{stem}_provenance.json")
    if "svg" in formats and report.rows:
        files["svg"] = svg_report(report, out_dir / f"{stem}.svg",
                                  x_key="test_level" if report.experiment == "convergence" else "train_level")
    if "text" in formats:
        files["text"] = out_dir / f"{stem}.txt"
        files["text"].write_text(format_text(report))
    return files
