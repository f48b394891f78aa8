"""Curve-to-curve evaluation metrics in millimetres."""
from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields

import numpy as np
from scipy.spatial.distance import cdist

from .imagecore import Delineation

INF = math.inf


@dataclass(frozen=True)
class MetricsReport:
    rmse_mm: float
    med_mm: float
    ohd_mm: float
    shd_mm: float
    ohd95_mm: float
    shd95_mm: float
    mse_mm: float
    mp_percent: float
    n_gs: int
    n_pred: int
    n_both: int
    n_gs_only: int

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list:
        return list(astuple(self))


def _points(d: Delineation, spacing: float) -> np.ndarray:
    return np.column_stack([d.cols * spacing, d.depths * spacing]).astype(np.float64)


def _directed(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """For each point of ``a`` the distance to the nearest point of ``b``."""
    return cdist(a, b).min(axis=1)


def evaluate(pred: Delineation, gs: Delineation, spacing_mm: float | None = None) -> MetricsReport:
    """Compare a predicted delineation against the gold standard.

    Distance metrics use 2-D Euclidean distances between curve samples; the
    symmetric Hausdorff distance only sees predictions on annotated
    columns. Empty predictions give ``inf`` distances and MP = 100.
    """
    if len(gs) == 0:
        raise ValueError("gold standard is empty")
    s = float(gs.spacing_mm if spacing_mm is None else spacing_mm)
    if not s > 0:
        raise ValueError("spacing_mm must be positive")
    shared, ip, ig = np.intersect1d(pred.cols, gs.cols, assume_unique=True, return_indices=True)
    n_gs, n_pred, n_both = len(gs), len(pred), len(shared)
    mp = 100.0 * (n_gs - n_both) / n_gs
    mse = float(np.mean(np.abs(pred.depths[ip] - gs.depths[ig])) * s) if n_both else INF

    if n_pred == 0:
        return MetricsReport(INF, INF, INF, INF, INF, INF, mse, mp, n_gs, 0, 0, n_gs)
    g = _points(gs, s)
    d = _directed(g, _points(pred, s))
    rmse = float(np.sqrt(np.mean(d ** 2)))
    med = float(np.mean(d))
    ohd = float(d.max())
    ohd95 = float(np.percentile(d, 95))

    on_gs = np.isin(pred.cols, gs.cols)
    if on_gs.any():
        p = _points(pred, s)[on_gs]
        d_gp = _directed(g, p)
        d_pg = _directed(p, g)
        shd = float(max(d_gp.max(), d_pg.max()))
        shd95 = float(np.percentile(np.concatenate([d_gp, d_pg]), 95))
    else:
        shd = shd95 = INF
    return MetricsReport(rmse, med, ohd, shd, ohd95, shd95, mse, mp, n_gs, n_pred, n_both, n_gs - n_both)


def mean_metric(r: MetricsReport) -> float:
    """Average of RMSE, oHD and sHD in mm; infinities propagate."""
    return (r.rmse_mm + r.ohd_mm + r.shd_mm) / 3.0


def aggregate(reports) -> list[float]:
    """Column-wise mean of a sequence of reports."""
    rows = np.array([r.row() for r in reports], dtype=np.float64)
    if rows.size == 0:
        raise ValueError("no reports to aggregate")
    with np.errstate(invalid="ignore"):
        return [float(v) for v in rows.mean(axis=0)]


def write_report_csv(path, names, reports) -> None:
    """One row per image, then a ``mean`` row; columns follow the report field order."""
    reports = list(reports)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["image"] + MetricsReport.columns())
        for name, r in zip(names, reports):
            w.writerow([name] + [repr(v) if isinstance(v, float) else v for v in r.row()])
        w.writerow(["mean"] + [repr(v) for v in aggregate(reports)])


def read_report_csv(path) -> dict[str, dict[str, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row.pop("image"): {k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)}
