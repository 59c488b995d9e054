"""
Summary tables and figures of a finished sweep.

Everything here reads the CSV tables written by the runner; no problem is
regenerated and no oracle is queried.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional

import matplotlib
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from lib.exceptions import ConfigError, NoResults

from .active import ecdf_curve, termination_quantile
from .metrics import pooled_histogram
from .runner import ECDF_CSV, FACETS_CSV, RESULTS_CSV
from .schemas import EcdfRecord

logger = logging.getLogger(__name__)

SUMMARY_MATCHING_CSV = "summary_matching.csv"
SUMMARY_HISTOGRAM_CSV = "summary_histogram.csv"
SUMMARY_ECDF_CSV = "summary_ecdf.csv"
MATCHING_SVG = "matching_error.svg"
HISTOGRAM_SVG = "facet_histogram.svg"
ECDF_SVG = "ecdf.svg"

GROUP = ["kind", "d", "algorithm"]
CELL = ["kind", "d", "instance", "delta", "algorithm"]

STYLE = {
    "font.family": "DejaVu Sans",
    "axes.unicode_minus": False,
    "axes.spines.right": False,
    "axes.spines.top": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "polylab",
    "svg.fonttype": "path",
}


def _read(path: Path) -> Optional[pd.DataFrame]:
    if not path.exists():
        return None
    frame = pd.read_csv(path)
    return frame if len(frame) else None


def load_tables(directory: Path) -> Dict[str, pd.DataFrame]:
    directory = Path(directory)
    results = _read(directory / RESULTS_CSV)
    if results is None:
        raise NoResults(f"no results in {directory}", {"directory": str(directory)})
    facets = _read(directory / FACETS_CSV)
    ecdf = _read(directory / ECDF_CSV)
    return {
        "results": results,
        "facets": facets if facets is not None else pd.DataFrame(columns=CELL),
        "ecdf": ecdf if ecdf is not None else pd.DataFrame(columns=CELL),
    }


def summarize_matching(results: pd.DataFrame) -> pd.DataFrame:
    """Per (kind, d, algorithm, delta): means over instances."""
    rows = []
    for (kind, d, algorithm, delta), group in results.groupby(GROUP + ["delta"]):
        rows.append(
            {
                "kind": kind,
                "d": int(d),
                "algorithm": algorithm,
                "delta": float(delta),
                "instances": len(group),
                "matching_error": group["matching_error"].mean(),
                "unmatched": group["unmatched"].mean(),
                "iou": group["iou"].mean(),
                "line_searches": group["line_searches"].mean(),
                "line_searches_q75": termination_quantile(group["line_searches"]),
                "dataset_size": group["dataset_size"].mean(),
            }
        )
    return pd.DataFrame(rows)


def summarize_histogram(facets: pd.DataFrame, n_bins: int = 8) -> pd.DataFrame:
    """Pooled facet-measure histograms with unmatched counts per bin."""
    frames = []
    for (kind, d, algorithm, delta), group in facets.groupby(GROUP + ["delta"]):
        hist = pooled_histogram(group["measure"], group["matched"].astype(bool), n_bins)
        hist.insert(0, "delta", float(delta))
        hist.insert(0, "algorithm", algorithm)
        hist.insert(0, "d", int(d))
        hist.insert(0, "kind", kind)
        frames.append(hist)
    if not frames:
        return pd.DataFrame(
            columns=GROUP + ["delta", "lower", "upper", "count", "errors", "error_rate"]
        )
    return pd.concat(frames, ignore_index=True)


def _records(cell: pd.DataFrame) -> List[EcdfRecord]:
    return [
        EcdfRecord(
            target=float(row.target),
            dataset_size=None if pd.isna(row.dataset_size) else int(row.dataset_size),
            searches=None if pd.isna(row.searches) else int(row.searches),
        )
        for row in cell.itertuples(index=False)
    ]


def summarize_ecdf(ecdf: pd.DataFrame) -> pd.DataFrame:
    """Fraction of (run, target) pairs reached against line searches and |X|."""
    rows = []
    for (kind, d, algorithm, delta), group in ecdf.groupby(GROUP + ["delta"]):
        tables = [_records(cell) for _, cell in group.groupby(CELL)]
        for field in ("searches", "dataset_size"):
            xs, fractions = ecdf_curve(tables, field)
            for x, fraction in zip(xs, fractions):
                rows.append(
                    {
                        "kind": kind,
                        "d": int(d),
                        "algorithm": algorithm,
                        "delta": float(delta),
                        "axis": field,
                        "count": int(x),
                        "fraction": float(fraction),
                    }
                )
    return pd.DataFrame(
        rows, columns=GROUP + ["delta", "axis", "count", "fraction"]
    )


def _label(kind, d, algorithm, delta=None) -> str:
    label = f"{kind} {int(d)}D {algorithm}"
    return label if delta is None else f"{label} δ={delta:g}"


def plot_matching(summary: pd.DataFrame, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4), constrained_layout=True)
    for (kind, d, algorithm), group in summary.groupby(GROUP):
        group = group.sort_values("delta")
        ax.plot(
            group["delta"],
            group["unmatched"],
            marker="o",
            label=_label(kind, d, algorithm),
        )
    ax.set_xscale("log")
    ax.set_xlabel("bracket width δ")
    ax.set_ylabel("mean unmatched facets")
    ax.legend(loc="best", fontsize=8)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_histogram(summary: pd.DataFrame, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4), constrained_layout=True)
    for (kind, d, algorithm, delta), group in summary.groupby(GROUP + ["delta"]):
        centers = np.sqrt(group["lower"].to_numpy() * group["upper"].to_numpy())
        ax.plot(
            centers,
            group["errors"],
            marker="s",
            drawstyle="steps-mid",
            label=_label(kind, d, algorithm, delta),
        )
    ax.set_xscale("log")
    ax.set_xlabel("facet measure")
    ax.set_ylabel("unmatched facets")
    if len(summary):
        ax.legend(loc="best", fontsize=7)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_ecdf(summary: pd.DataFrame, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4), constrained_layout=True)
    searches = summary[summary["axis"] == "searches"]
    for (kind, d, algorithm, delta), group in searches.groupby(GROUP + ["delta"]):
        ax.step(
            group["count"],
            group["fraction"],
            where="post",
            label=_label(kind, d, algorithm, delta),
        )
    ax.set_xlabel("line searches")
    ax.set_ylabel("fraction of targets reached")
    ax.set_ylim(0.0, 1.0)
    if len(searches):
        ax.legend(loc="best", fontsize=7)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def build_report(
    directory: Path, out_dir: Optional[Path] = None, n_bins: int = 8
) -> List[Path]:
    """
    Write three summary CSVs and three SVG figures.

    Raises:
        NoResults: if the directory holds no successful cells; nothing is written.
    """
    if n_bins < 1:
        raise ConfigError(f"n_bins must be at least 1, got {n_bins}")
    tables = load_tables(directory)
    out_dir = Path(out_dir) if out_dir is not None else Path(directory)
    out_dir.mkdir(parents=True, exist_ok=True)

    matching = summarize_matching(tables["results"])
    histogram = summarize_histogram(tables["facets"], n_bins)
    ecdf = summarize_ecdf(tables["ecdf"])

    written = []
    for name, frame in (
        (SUMMARY_MATCHING_CSV, matching),
        (SUMMARY_HISTOGRAM_CSV, histogram),
        (SUMMARY_ECDF_CSV, ecdf),
    ):
        frame.to_csv(out_dir / name, index=False)
        written.append(out_dir / name)

    # headless backend
    matplotlib.use("Agg")
    with matplotlib.rc_context(STYLE):
        for name, plot, frame in (
            (MATCHING_SVG, plot_matching, matching),
            (HISTOGRAM_SVG, plot_histogram, histogram),
            (ECDF_SVG, plot_ecdf, ecdf),
        ):
            plot(frame, out_dir / name)
            written.append(out_dir / name)

    logger.info(f"report of {len(tables['results'])} cells written to {out_dir}")
    return written
