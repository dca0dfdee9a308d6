"""Figure builders.

Each builder consumes rows from experiment CSVs (one dict per row, as
read by ``csv.DictReader``), assembles named series, renders a figure,
and returns the sidecar metadata.  Builders never mutate their inputs
and are deterministic, so reruns produce identical sidecars.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

KINDS = ("convergence", "scaling", "depth-scan")


class MissingColumnsError(ValueError):
    """Input CSV lacks columns the figure needs."""

    def __init__(self, columns: list[str]):
        super().__init__(f"missing columns: {', '.join(sorted(columns))}")
        self.columns = sorted(columns)


class NoDataError(ValueError):
    """Input CSV has a header but no rows."""

    def __init__(self):
        super().__init__("no data")


@dataclass(frozen=True)
class Series:
    name: str
    x: list[float]
    y: list[float]


def read_rows(paths: list[str | Path]) -> list[dict]:
    rows: list[dict] = []
    for path in paths:
        with open(path, newline="", encoding="utf-8") as f:
            rows.extend(csv.DictReader(f))
    return rows


def _require(rows: list[dict], columns: list[str]) -> None:
    if not rows:
        raise NoDataError()
    missing = [c for c in columns if c not in rows[0]]
    if missing:
        raise MissingColumnsError(missing)


def _convergence_series(rows: list[dict]) -> list[Series]:
    _require(rows, ["seed", "iteration", "kind", "loss", "envelope"])
    curves = [r for r in rows if r["kind"] == "iteration"]
    if not curves:
        raise NoDataError()
    seeds = sorted({r["seed"] for r in curves}, key=float)
    series = []
    for seed in seeds:
        pts = sorted(
            ((float(r["iteration"]), float(r["loss"])) for r in curves
             if r["seed"] == seed)
        )
        series.append(Series(f"loss seed {seed}",
                             [p[0] for p in pts], [p[1] for p in pts]))
    env = sorted(
        ((float(r["iteration"]), float(r["envelope"])) for r in curves
         if r["seed"] == seeds[0])
    )
    series.append(Series("envelope", [p[0] for p in env], [p[1] for p in env]))
    return series


def _scaling_series(rows: list[dict]) -> list[Series]:
    _require(rows, ["m", "kind", "sup_error", "median_sup_error"])
    summaries = sorted(
        ((float(r["m"]), float(r["median_sup_error"])) for r in rows
         if r["kind"] == "summary"),
    )
    if not summaries:
        raise NoDataError()
    ms = [p[0] for p in summaries]
    medians = [p[1] for p in summaries]
    reference = [medians[0] * np.sqrt(ms[0] / m) for m in ms]
    return [
        Series("median sup error", ms, medians),
        Series("reference slope -1/2", ms, reference),
    ]


def _depth_scan_series(rows: list[dict]) -> list[Series]:
    _require(rows, ["arch", "H", "kind", "amplification"])
    trials = [r for r in rows if r["kind"] == "trial"]
    if not trials:
        raise NoDataError()
    series = []
    for arch in sorted({r["arch"] for r in trials}):
        pts = sorted(
            ((float(r["H"]), float(r["amplification"])) for r in trials
             if r["arch"] == arch)
        )
        series.append(Series(f"{arch} amplification",
                             [p[0] for p in pts], [p[1] for p in pts]))
    return series


_BUILDERS = {
    "convergence": (_convergence_series, "iteration", "loss",
                    dict(yscale="log")),
    "scaling": (_scaling_series, "width m", "sup error",
                dict(xscale="log", yscale="log")),
    "depth-scan": (_depth_scan_series, "depth H", "amplification A(H)",
                   dict(yscale="log")),
}


def render(kind: str, rows: list[dict], out: str | Path) -> dict:
    """Render one figure; write the image and its JSON sidecar.

    Returns the sidecar dictionary.
    """
    if kind not in _BUILDERS:
        raise ValueError(f"unknown figure kind {kind!r}; expected one of {KINDS}")
    build, xlabel, ylabel, axes = _BUILDERS[kind]
    series = build(rows)

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    try:
        for s in series:
            style = "--" if s.name.startswith(("envelope", "reference")) else "-"
            ax.plot(s.x, s.y, style, label=s.name)
        ax.set(xlabel=xlabel, ylabel=ylabel, **axes)
        ax.legend(fontsize=8)
        ax.set_title(kind)
        fig.tight_layout()
        fig.savefig(out)
    finally:
        plt.close(fig)

    xs = [v for s in series for v in s.x]
    ys = [v for s in series for v in s.y]
    sidecar = {
        "kind": kind,
        "image": Path(out).name,
        "series": [{"name": s.name, "points": len(s.x)} for s in series],
        "x_range": [min(xs), max(xs)],
        "y_range": [min(ys), max(ys)],
    }
    sidecar_path = Path(out).with_suffix(Path(out).suffix + ".json")
    sidecar_path.write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return sidecar
