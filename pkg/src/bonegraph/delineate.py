"""From label maps and filter responses to one depth per scanline."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage
from PIL import ImageDraw
from skimage.morphology import thin

from .confmap import ConfidenceParams, random_walk_features
from .imagecore import BFG, BONE, CBG, SHADOW, Delineation, Image, LabelMap, validate_labelmap
from .phasesym import PsConfig, phase_symmetry


@dataclass(frozen=True)
class ResponseMap:
    values: np.ndarray
    threshold: float = 0.1

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("response map must be a finite, non-negative 2-D array")
        object.__setattr__(self, "values", v)

    def mask(self) -> np.ndarray:
        return self.values > self.threshold


@dataclass(frozen=True)
class BaselineConfig:
    threshold: float = 0.1
    ps: PsConfig = field(default_factory=PsConfig)
    confidence: ConfidenceParams = field(default_factory=ConfidenceParams)


def interface_from_cbg(lm: LabelMap, spacing_mm: float = 1.0) -> Delineation:
    """Tissue/shadow border: first shadow row minus one half.

    Columns that are all tissue or all shadow have no detection.
    """
    if lm.scheme != CBG:
        raise ValueError("expected a CBG label map")
    validate_labelmap(lm)
    lab = lm.labels
    is_s = lab == SHADOW
    first = np.argmax(is_s, axis=0)
    keep = is_s.any(axis=0) & (first > 0)
    cols = np.flatnonzero(keep)
    return Delineation(cols, first[cols] - 0.5, spacing_mm, lab.shape[0])


def midline_from_bfg(lm: LabelMap, spacing_mm: float = 1.0) -> Delineation:
    """Middle of the bone run in each column that has one."""
    if lm.scheme != BFG:
        raise ValueError("expected a BFG label map")
    lab = lm.labels
    is_b = lab == BONE
    has = is_b.any(axis=0)
    first = np.argmax(is_b, axis=0)
    last = lab.shape[0] - 1 - np.argmax(is_b[::-1], axis=0)
    cols = np.flatnonzero(has)
    return Delineation(cols, first[cols] + (last[cols] - first[cols]) / 2.0, spacing_mm, lab.shape[0])


def standardize_max(rm: ResponseMap, spacing_mm: float = 1.0) -> Delineation:
    """Strongest response per column above the threshold; ties go deepest."""
    v = rm.values
    h = v.shape[0]
    deepest = h - 1 - np.argmax(v[::-1], axis=0)
    peak = v.max(axis=0)
    cols = np.flatnonzero(peak > rm.threshold)
    return Delineation(cols, deepest[cols].astype(np.float64), spacing_mm, h)


def standardize_up(seg: np.ndarray, spacing_mm: float = 1.0) -> Delineation:
    """Thin the mask to one-pixel curves, then keep the deepest pixel per column."""
    seg = np.asarray(seg)
    if not np.all((seg == 0) | (seg == 1)):
        raise ValueError("segmentation must be binary")
    h, w = seg.shape
    # structures cut by the lateral image border continue past it; without
    # padding the thinning would erode their ends
    pad = h
    skel = thin(np.pad(seg.astype(bool), ((0, 0), (pad, pad)), mode="edge"))[:, pad : pad + w]
    has = skel.any(axis=0)
    deepest = h - 1 - np.argmax(skel[::-1], axis=0)
    cols = np.flatnonzero(has)
    return Delineation(cols, deepest[cols].astype(np.float64), spacing_mm, h)


def ps_response(img: Image, cfg: BaselineConfig = BaselineConfig()) -> ResponseMap:
    return ResponseMap(phase_symmetry(img, cfg.ps).normalized, cfg.threshold)


def cps_response(img: Image, cfg: BaselineConfig = BaselineConfig()) -> ResponseMap:
    """Phase symmetry weighted by the shadowing map, rescaled to max 1."""
    ps = phase_symmetry(img, cfg.ps).normalized
    _, shadow, _, _ = random_walk_features(img, cfg.confidence)
    v = ps * shadow
    top = v.max()
    return ResponseMap(v / top if top > 0 else np.zeros_like(v), cfg.threshold)


def baseline_ps(img: Image, cfg: BaselineConfig = BaselineConfig()) -> Delineation:
    """PS thresholded, thinned, deepest detection per column."""
    return standardize_up(ps_response(img, cfg).mask().astype(np.uint8), img.spacing_mm)


def baseline_ps_max(img: Image, cfg: BaselineConfig = BaselineConfig()) -> Delineation:
    return standardize_max(ps_response(img, cfg), img.spacing_mm)


def baseline_cps(img: Image, cfg: BaselineConfig = BaselineConfig()) -> Delineation:
    return standardize_up(cps_response(img, cfg).mask().astype(np.uint8), img.spacing_mm)


BASELINES = {"ps-up": baseline_ps, "ps-max": baseline_ps_max, "cps-up": baseline_cps}


def _polyline(d: Delineation):
    """Runs of adjacent columns as (x, y) pixel-centre point lists."""
    runs, cur, prev = [], [], None
    for c, r in zip(d.cols, d.depths):
        if prev is not None and c != prev + 1:
            runs.append(cur)
            cur = []
        cur.append((float(c), float(r)))
        prev = c
    if cur:
        runs.append(cur)
    return runs


def render_overlay(img: Image, pred: Delineation | None, gs: Delineation | None, path) -> None:
    """Write a PNG of the B-mode image with prediction (red) and GS (blue)."""
    grey = np.round(img.intensities * 255).astype(np.uint8)
    canvas = PILImage.fromarray(np.stack([grey] * 3, axis=-1))
    draw = ImageDraw.Draw(canvas)
    for d, colour in ((gs, (0, 0, 255)), (pred, (255, 0, 0))):
        if d is None:
            continue
        for run in _polyline(d):
            if len(run) == 1:
                draw.point(run, fill=colour)
            else:
                draw.line(run, fill=colour, width=1)
    canvas.save(path, format="PNG")

