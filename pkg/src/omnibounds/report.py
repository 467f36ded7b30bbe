"""CSV report schema and optional SVG charts."""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path

SCHEMA = "omnibounds-csv/1"
BOUND_COLUMNS = ["bound_name", "lambda", "lr", "batch_size", "trajectory", "penalty", "flatness",
                 "sigma_star", "total", "measured_gap", "k", "n", "T", "seed"]
COLUMNS = BOUND_COLUMNS + ["experiment", "trials", "stderr", "status", "error"]
_NUMERIC = {"lambda", "lr", "trajectory", "penalty", "flatness", "sigma_star", "total",
            "measured_gap", "stderr"}
_INTEGER = {"batch_size", "k", "n", "T", "seed", "trials"}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_row(report, lr=None, batch_size=None, seed=None, experiment="bounds") -> dict:
    return {
        "bound_name": report.name, "lambda": report.lam, "lr": lr, "batch_size": batch_size,
        "trajectory": report.trajectory, "penalty": report.penalty, "flatness": report.flatness,
        "sigma_star": report.sigma_star, "total": report.total,
        "measured_gap": report.measured_gap, "k": report.k, "n": report.n, "T": report.T,
        "seed": seed, "experiment": experiment, "status": "ok",
    }


def error_row(bound_name: str, message: str, **extra) -> dict:
    row = {"bound_name": bound_name, "status": "error", "error": message}
    row.update(extra)
    return row


def dumps_csv(rows) -> str:
    buf = io.StringIO()
    buf.write(f"# schema={SCHEMA}\n")
    w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n", extrasaction="raise")
    w.writeheader()
    for row in rows:
        w.writerow({c: _fmt(row.get(c)) for c in COLUMNS})
    return buf.getvalue()


def write_csv(path, rows) -> None:
    Path(path).write_text(dumps_csv(rows))


def _parse(col, text):
    if text == "":
        return None
    if col in _NUMERIC:
        return float(text)
    if col in _INTEGER:
        return int(text)
    return text


def read_csv(path) -> list:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != f"# schema={SCHEMA}":
        raise ValueError(f"{path}: not an {SCHEMA} report")
    reader = csv.DictReader(lines[1:])
    if reader.fieldnames != COLUMNS:
        raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
    return [{c: _parse(c, r[c]) for c in COLUMNS} for r in reader]


def plot_gap_vs_bound(rows, path, axis: str = "batch_size") -> None:
    """Line chart of measured gap and each bound's total against a sweep axis."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "omnibounds"
    good = [r for r in rows if r.get("status") == "ok" and r.get(axis) is not None]
    series = {}
    gaps = {}
    for r in good:
        key = r["bound_name"] if r.get("lambda") is None else f"{r['bound_name']} (lambda={r['lambda']:g})"
        series.setdefault(key, {}).setdefault(r[axis], []).append(r["total"])
        gaps.setdefault(r[axis], []).append(r["measured_gap"])
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = sorted(gaps)
    ax.plot(xs, [sum(gaps[x]) / len(gaps[x]) for x in xs], "k-o", label="measured gap")
    for key in sorted(series):
        pts = sorted(series[key])
        ax.plot(pts, [sum(series[key][x]) / len(series[key][x]) for x in pts], "--s", label=key)
    if all(x > 0 for x in xs) and len(xs) > 1 and max(xs) / min(xs) > 8:
        ax.set_xscale("log")
    ax.set_yscale("symlog", linthresh=1e-3)
    ax.set_xlabel(axis)
    ax.set_ylabel("value")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def finite_or_none(x):
    return x if x is None or math.isfinite(x) else None
