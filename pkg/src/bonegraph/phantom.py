"""Synthetic B-mode phantoms with a known bone surface.

Each column reads tissue speckle, a bright bone band, then a dark acoustic
shadow. Optional soft-tissue bands above the bone and a reverberation ghost
at twice the bone depth reproduce the usual false-positive sources.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imagecore import (
    BFG,
    BONE,
    SHADOW,
    TISSUE,
    Delineation,
    Image,
    LabelMap,
    ensure_dir,
    save_delineation,
    save_image,
    save_labelmap,
)

MANIFEST_FIELDS = ["index", "image", "gs", "labels", "adversarial", "d0", "amplitude", "thickness", "brightness"]


@dataclass(frozen=True)
class PhantomSpec:
    """Phantom geometry and appearance.

    The surface depth (px) in column c is ``d0 + amplitude*sin(2*pi*freq*c/W + phase)``.
    ``no_bone`` lists half-open column intervals without bone. Each false
    band is ``(depth_px, thickness_px, brightness)``.
    """

    height: int = 128
    width: int = 128
    spacing_mm: float = 0.2
    wavelength_px: float = 1.0
    d0: float = 60.0
    amplitude: float = 0.0
    freq: float = 1.0
    phase: float = 0.0
    no_bone: tuple = ()
    band_thickness_px: int = 3
    band_brightness: float = 0.9
    sigma_t: float = 0.25
    sigma_s: float = 0.03
    false_bands: tuple = ()
    reverb: bool = False
    reverb_fraction: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        if self.height < 4 or self.width < 1:
            raise ValueError("phantom too small")
        if self.band_thickness_px < 1:
            raise ValueError("band thickness must be >= 1 px")
        if not self.d0 - abs(self.amplitude) - self.band_thickness_px >= 0:
            raise ValueError("bone band leaves the top of the image")
        if not self.d0 + abs(self.amplitude) + self.band_thickness_px < self.height:
            raise ValueError("bone band leaves the bottom of the image")
        if not 0 < self.sigma_s <= self.sigma_t:
            raise ValueError("need 0 < sigma_s <= sigma_t")
        if not 0 <= self.band_brightness <= 1:
            raise ValueError("band brightness must lie in [0, 1]")
        for depth, thick, bright in self.false_bands:
            if thick <= 0 or not 0 < bright <= 1 or not 0 <= depth < self.height:
                raise ValueError(f"invalid false band {(depth, thick, bright)}")
        for c0, c1 in self.no_bone:
            if not 0 <= c0 < c1 <= self.width:
                raise ValueError(f"invalid no-bone interval {(c0, c1)}")

    def surface(self) -> np.ndarray:
        c = np.arange(self.width)
        return self.d0 + self.amplitude * np.sin(2 * math.pi * self.freq * c / self.width + self.phase)

    def bone_columns(self) -> np.ndarray:
        has = np.ones(self.width, dtype=bool)
        for c0, c1 in self.no_bone:
            has[c0:c1] = False
        return has

    @property
    def adversarial(self) -> bool:
        return bool(self.false_bands)


def _rayleigh(rng, sigma, shape):
    return rng.rayleigh(sigma, size=shape)


def _profile(rows, centre, thickness):
    """Gaussian stripe whose full width at half maximum is ``thickness``."""
    s = thickness / (2 * math.sqrt(2 * math.log(2)))
    return np.exp(-((rows - centre) ** 2) / (2 * s ** 2))


def generate(spec: PhantomSpec) -> tuple[Image, LabelMap, Delineation]:
    """Render one phantom; returns the image, its BFG label map and the GS curve.

    The bone run of column c starts at ``a = round(d(c) - (t-1)/2)`` and
    covers t rows, so the GS depth ``a + (t-1)/2`` is the run's midline.
    """
    rng = np.random.default_rng(spec.rng_seed)
    h, w, t = spec.height, spec.width, spec.band_thickness_px
    rows = np.arange(h, dtype=np.float64)[:, None]
    has_bone = spec.bone_columns()
    start = np.round(spec.surface() - (t - 1) / 2).astype(np.int64)
    gs = start + (t - 1) / 2

    labels = np.full((h, w), TISSUE, dtype=np.uint8)
    below = (rows >= start[None, :]) & has_bone[None, :]
    band = below & (rows < (start + t)[None, :])
    labels[below] = SHADOW
    labels[band] = BONE

    tissue = _rayleigh(rng, spec.sigma_t, (h, w))
    shadow = _rayleigh(rng, spec.sigma_s, (h, w))
    img = np.where(below, shadow, tissue)

    # bone: bright stripe with mild multiplicative speckle
    texture = 0.8 + 0.2 * _rayleigh(rng, 1.0, (h, w)) / math.sqrt(math.pi / 2)
    bone = spec.band_brightness * _profile(rows, gs[None, :], t) * texture
    img = img + np.where(has_bone[None, :], bone, 0.0)

    for depth, thick, bright in spec.false_bands:
        stripe = bright * _profile(rows, depth, thick) * texture
        # soft-tissue layers sit above the bone and do not reach into the shadow
        img = img + np.where(below & ~band, 0.0, stripe)

    if spec.reverb:
        ghost = spec.reverb_fraction * spec.band_brightness * _profile(rows, 2 * gs[None, :], t)
        img = img + np.where(has_bone[None, :] & below & ~band, ghost * texture, 0.0)

    image = Image(np.clip(img, 0.0, 1.0), spec.spacing_mm, spec.wavelength_px)
    cols = np.flatnonzero(has_bone)
    delin = Delineation(cols, gs[cols], spec.spacing_mm, h)
    return image, LabelMap(labels, BFG), delin


@dataclass(frozen=True)
class PhantomRanges:
    """Sampling ranges for :func:`generate_dataset`; ``(lo, hi)`` pairs are uniform."""

    height: int = 128
    width: int = 128
    spacing_mm: float = 0.2
    wavelength_px: float = 1.0
    d0: tuple = (45.0, 80.0)
    amplitude: tuple = (0.0, 12.0)
    freq: tuple = (0.3, 1.2)
    phase: tuple = (0.0, 2 * math.pi)
    thickness: tuple = (2, 5)  # inclusive integer range
    brightness: tuple = (0.7, 1.0)
    sigma_t: tuple = (0.2, 0.3)
    sigma_s: tuple = (0.02, 0.04)
    no_bone_prob: float = 0.3
    no_bone_width: tuple = (8, 24)
    adversarial_prob: float = 0.4
    false_band_brightness: tuple = (0.8, 1.0)
    reverb_fraction: tuple = (0.5, 0.8)

    def sample(self, rng: np.random.Generator, seed: int) -> PhantomSpec:
        def u(r):
            return float(r[0]) if r[0] == r[1] else float(rng.uniform(*r))

        t = int(rng.integers(self.thickness[0], self.thickness[1] + 1))
        d0, amp = u(self.d0), u(self.amplitude)
        no_bone = ()
        if rng.random() < self.no_bone_prob:
            wd = int(rng.integers(self.no_bone_width[0], self.no_bone_width[1] + 1))
            c0 = int(rng.integers(0, self.width - wd + 1))
            no_bone = ((c0, c0 + wd),)
        false_bands = ()
        reverb = False
        frac = u(self.reverb_fraction)
        if rng.random() < self.adversarial_prob:
            top = d0 - abs(amp) - t
            depth = u((0.25 * top, 0.7 * top))
            false_bands = ((depth, float(rng.integers(2, 5)), u(self.false_band_brightness)),)
            reverb = True
        return PhantomSpec(
            height=self.height,
            width=self.width,
            spacing_mm=self.spacing_mm,
            wavelength_px=self.wavelength_px,
            d0=d0,
            amplitude=amp,
            freq=u(self.freq),
            phase=u(self.phase),
            no_bone=no_bone,
            band_thickness_px=t,
            band_brightness=u(self.brightness),
            sigma_t=u(self.sigma_t),
            sigma_s=u(self.sigma_s),
            false_bands=false_bands,
            reverb=reverb,
            reverb_fraction=frac,
            rng_seed=seed,
        )


def phantom_spec(i: int, seed: int, ranges: PhantomRanges = PhantomRanges()) -> PhantomSpec:
    """Spec of phantom ``i``; the stream depends only on ``(seed, i)``."""
    ss = np.random.SeedSequence([seed, i])
    param_seed, noise_seed = ss.generate_state(2)
    return ranges.sample(np.random.default_rng(param_seed), int(noise_seed))


@dataclass
class DatasetEntry:
    index: int
    image: Path
    gs: Path
    labels: Path
    adversarial: bool
    spec: PhantomSpec = field(repr=False, default=None)


def generate_dataset(n: int, out_dir, ranges: PhantomRanges = PhantomRanges(), seed: int = 0) -> list[DatasetEntry]:
    """Write ``n`` phantoms plus ``manifest.csv`` into ``out_dir``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out = ensure_dir(out_dir)
    entries = []
    for i in range(n):
        spec = phantom_spec(i, seed, ranges)
        img, lm, gs = generate(spec)
        e = DatasetEntry(i, out / f"img_{i:04d}.pgm", out / f"gs_{i:04d}.csv", out / f"lbl_{i:04d}.pgm",
                         spec.adversarial, spec)
        save_image(img, e.image)
        save_delineation(gs, e.gs)
        save_labelmap(lm, e.labels)
        entries.append(e)
    with open(out / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(MANIFEST_FIELDS)
        for e in entries:
            s = e.spec
            wr.writerow([e.index, e.image.name, e.gs.name, e.labels.name, int(e.adversarial),
                         repr(s.d0), repr(s.amplitude), s.band_thickness_px, repr(s.band_brightness)])
    return entries


def read_manifest(root) -> list[DatasetEntry]:
    root = Path(root)
    with open(root / "manifest.csv", newline="", encoding="utf-8") as fh:
        return [
            DatasetEntry(int(r["index"]), root / r["image"], root / r["gs"], root / r["labels"], r["adversarial"] == "1")
            for r in csv.DictReader(fh)
        ]

