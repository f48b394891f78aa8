"""Random-walk confidence maps and the attenuation/shadowing descriptors."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import splu

from .imagecore import Image
from .features import scale_px

SHADOW_EPS = 1e-6
LOG_EPS = 1e-6


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConfidenceParams:
    alpha: float = 2.0  # depth attenuation
    beta: float = 90.0  # edge sensitivity
    gamma: float = 0.06  # lateral step penalty
    rtol: float = 1e-6


@dataclass(frozen=True)
class ConfidenceMap:
    values: np.ndarray
    params: ConfidenceParams


DEFAULT_CPS_SCALES = (2, 5, 11)


def _lattice_edges(h, w):
    """8-connected edges as (i, j, lateral_length) with i < j in row-major order."""
    idx = np.arange(h * w).reshape(h, w)
    out = []
    # vertical, horizontal, two diagonals
    for dr, dc, lateral in ((1, 0, 0.0), (0, 1, 1.0), (1, 1, math.sqrt(2)), (1, -1, math.sqrt(2))):
        r0, r1 = 0, h - dr
        c0, c1 = max(0, -dc), w - max(0, dc)
        a = idx[r0:r1, c0:c1]
        b = idx[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        if a.size:
            out.append((a.ravel(), b.ravel(), np.full(a.size, lateral)))
    i = np.concatenate([e[0] for e in out])
    j = np.concatenate([e[1] for e in out])
    lat = np.concatenate([e[2] for e in out])
    return i, j, lat


def edge_weights(img: Image | np.ndarray, params: ConfidenceParams = ConfidenceParams()):
    """Edges and weights of the random-walk lattice.

    Intensities are attenuated by ``exp(-alpha * depth)`` with depth
    normalised to [0, 1]; the edge weight is
    ``exp(-beta * (|g_p - g_q| + gamma * lateral_length))`` where the
    lateral length is 0, 1 or sqrt(2).
    """
    a = img.intensities if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    h, w = a.shape
    depth = np.linspace(0.0, 1.0, h)[:, None]
    g = (a * np.exp(-params.alpha * depth)).ravel()
    i, j, lat = _lattice_edges(h, w)
    wts = np.exp(-params.beta * (np.abs(g[i] - g[j]) + params.gamma * lat))
    return i, j, wts


def confidence_map(img: Image | np.ndarray, params: ConfidenceParams = ConfidenceParams()) -> ConfidenceMap:
    """Solve the Dirichlet problem with the top row at 1 and the bottom row at 0."""
    a = img.intensities if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    h, w = a.shape
    if h < 2:
        raise ValueError("confidence map needs at least two rows")
    n = h * w
    i, j, wts = edge_weights(a, params)
    adj = sparse.coo_matrix((np.r_[wts, wts], (np.r_[i, j], np.r_[j, i])), shape=(n, n)).tocsr()
    lap = sparse.diags(np.asarray(adj.sum(axis=1)).ravel()) - adj

    x = np.zeros(n)
    x[:w] = 1.0
    boundary = np.zeros(n, dtype=bool)
    boundary[:w] = True
    boundary[-w:] = True
    free = ~boundary
    values = x.copy()
    if free.any():
        lap = lap.tocsr()
        a_ff = lap[free][:, free].tocsc()
        rhs = -lap[free][:, boundary] @ x[boundary]
        sol = _solve_equilibrated(a_ff, rhs)
        resid = np.linalg.norm(a_ff @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300)
        if not np.all(np.isfinite(sol)) or resid > params.rtol:
            raise ConvergenceError(f"confidence map solve failed, relative residual {resid:.3e}")
        # the exact solution lies in [0, 1]; clipping only removes round-off
        values[free] = np.clip(sol, 0.0, 1.0)
    return ConfidenceMap(values.reshape(h, w), params)


def _solve_equilibrated(a, rhs, refinements: int = 3):
    """Solve ``a x = rhs`` after symmetric diagonal scaling, then refine.

    Edge weights span many orders of magnitude, and a plain sparse LU
    overshoots the [0, 1] range by up to ~1e-6 on high-contrast images.
    """
    d = 1.0 / np.sqrt(a.diagonal())
    scale = sparse.diags(d)
    a_s = (scale @ a @ scale).tocsc()
    lu = splu(a_s)
    x = d * lu.solve(d * rhs)
    for _ in range(refinements):
        x = x + d * lu.solve(d * (rhs - a @ x))
    return x


def _window_min(m: np.ndarray, half: int) -> np.ndarray:
    return ndimage.minimum_filter(m, size=2 * half + 1, mode="mirror")


def _values(cm):
    return cm.values if isinstance(cm, ConfidenceMap) else np.asarray(cm, dtype=np.float64)


def _normalise_max(s: np.ndarray) -> np.ndarray:
    top = s.max()
    if top <= 0:
        return np.zeros_like(s)
    return s / top


def attenuation_cps(cm: ConfidenceMap | np.ndarray, halves_px) -> np.ndarray:
    """Sum over windows of (value - window minimum), scaled by the image max."""
    m = _values(cm)
    s = sum(m - _window_min(m, int(h)) for h in halves_px)
    return _normalise_max(s)


def shadowing_cps(cm: ConfidenceMap | np.ndarray, halves_px) -> tuple[np.ndarray, np.ndarray]:
    """Sum over windows of value / window minimum (minimum clamped at 1e-6).

    Returns the max-normalised map and ``log(map + 1e-6)``.
    """
    m = _values(cm)
    s = sum(m / np.maximum(_window_min(m, int(h)), SHADOW_EPS) for h in halves_px)
    s = _normalise_max(s)
    return s, np.log(s + LOG_EPS)


def cps_halves(img: Image, scales=DEFAULT_CPS_SCALES) -> list[int]:
    return [scale_px(s, img.wavelength_px) for s in scales]


def random_walk_features(img: Image, params: ConfidenceParams = ConfidenceParams(), scales=DEFAULT_CPS_SCALES):
    """(confidence, shadowing, log-shadowing, attenuation) maps for ``img``."""
    cm = confidence_map(img, params)
    halves = cps_halves(img, scales)
    shadow, log_shadow = shadowing_cps(cm, halves)
    return cm.values, shadow, log_shadow, attenuation_cps(cm, halves)
