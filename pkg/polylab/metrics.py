from dataclasses import dataclass
from typing import Dict, Optional, Union

import numpy as np
import pandas as pd

from lib.exceptions import (
    DegenerateInput,
    DimensionMismatch,
    EmptyPolytope,
    GeometryError,
)

from . import geometry
from .fitter import MarginModel
from .geometry import HPolytope

ANGLE_DEG = 10.0


@dataclass
class MatchingResult:
    error: float
    matched: np.ndarray
    best_rows: np.ndarray
    angles_deg: np.ndarray

    @property
    def unmatched(self) -> int:
        return int(np.sum(~self.matched))


def _unit_rows(A: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(A, axis=1, keepdims=True)
    out = np.zeros_like(A)
    np.divide(A, norms, out=out, where=norms > 0)
    return out


def matching_error(
    truth: HPolytope,
    est: Union[MarginModel, HPolytope],
    angle_deg: float = ANGLE_DEG,
) -> MatchingResult:
    """Fraction of truth facets with no estimated normal within angle_deg."""
    A_est = est.A_hat if isinstance(est, MarginModel) else est.A
    T = _unit_rows(truth.A)
    E = _unit_rows(A_est)
    cos = np.clip(T @ E.T, -1.0, 1.0)
    # zero rows never match
    cos[:, np.linalg.norm(E, axis=1) == 0] = -1.0
    angles = np.degrees(np.arccos(cos))
    best = np.argmin(angles, axis=1)
    best_angles = angles[np.arange(len(best)), best]
    matched = best_angles <= angle_deg
    return MatchingResult(float(np.mean(~matched)), matched, best, best_angles)


def iou(P: HPolytope, Q: HPolytope) -> float:
    """Vol(P & Q) / (Vol(P) + Vol(Q) - Vol(P & Q))."""
    vol_p = geometry.polytope_volume(P)
    vol_q = geometry.polytope_volume(Q)
    try:
        vol_i = geometry.polytope_volume(geometry.intersect(P, Q))
    except (EmptyPolytope, DegenerateInput):
        vol_i = 0.0
    union = vol_p + vol_q - vol_i
    return float(np.clip(vol_i / union, 0.0, 1.0))


def _bin_edges(measures: np.ndarray, n_bins: int) -> np.ndarray:
    positive = measures[measures > 0]
    if len(positive) == 0:
        return np.array([0.0, 1.0])
    lo, hi = positive.min(), positive.max()
    if np.isclose(lo, hi):
        return np.array([lo, hi])
    return np.geomspace(lo, hi, n_bins + 1)


def pooled_histogram(measures, matched, n_bins: int = 8) -> pd.DataFrame:
    """
    Log-spaced facet-measure bins with facet and error counts.
    Degenerate (zero-measure) facets fall in the lowest bin.
    """
    measures = np.asarray(measures, dtype=float)
    matched = np.asarray(matched, dtype=bool)
    edges = _bin_edges(measures, n_bins)
    idx = np.clip(np.searchsorted(edges, measures, side="right") - 1, 0, len(edges) - 2)
    rows = []
    for k in range(len(edges) - 1):
        in_bin = idx == k
        count = int(np.sum(in_bin))
        errors = int(np.sum(in_bin & ~matched))
        rows.append(
            {
                "lower": float(edges[k]),
                "upper": float(edges[k + 1]),
                "count": count,
                "errors": errors,
                "error_rate": errors / count if count else 0.0,
            }
        )
    return pd.DataFrame(rows)


def facet_table(truth: HPolytope, matching: MatchingResult) -> pd.DataFrame:
    """Per truth facet: (d-1)-measure, whether it was matched, and the best angle."""
    descriptions = geometry.facets(truth)
    return pd.DataFrame(
        {
            "facet": [f.halfspace_index for f in descriptions],
            "measure": [f.measure for f in descriptions],
            "matched": matching.matched,
            "angle_deg": matching.angles_deg,
        }
    )


def facet_error_histogram(truth: HPolytope, matched, n_bins: int = 8) -> pd.DataFrame:
    measures = [f.measure for f in geometry.facets(truth)]
    if len(measures) != len(matched):
        raise DimensionMismatch(
            f"{len(matched)} match flags for {len(measures)} truth facets"
        )
    return pooled_histogram(measures, matched, n_bins)


def evaluate_estimate(
    truth: HPolytope, model: MarginModel, angle_deg: float = ANGLE_DEG
) -> Dict[str, object]:
    """Scalar comparison of an estimate with the ground truth."""
    matching = matching_error(truth, model, angle_deg)
    estimate = model.polytope()
    try:
        n_est = geometry.remove_redundant(estimate).n_halfspaces
        overlap: Optional[float] = iou(truth, estimate)
    except GeometryError:
        # unbounded or empty estimates have no volume
        n_est, overlap = model.n_rows, None
    return {
        "matching_error": matching.error,
        "unmatched": matching.unmatched,
        "iou": overlap,
        "n_truth_facets": truth.n_halfspaces,
        "n_est_facets": n_est,
    }
