"""Log-Gabor filter bank, phase symmetry and the bone-responsive edge term."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imagecore import Image


@dataclass(frozen=True)
class PsConfig:
    """Phase-symmetry parameters.

    ``wavelength_px`` is the centre wavelength (2*pi / centre angular
    frequency); ``coverage`` is the half-angle spanned by the orientations.
    """

    n_orient: int = 3
    n_scale: int = 1
    wavelength_px: float = 25.0
    kappa_ratio: float = 0.25
    scale_mult: float = 2.0
    sigma_phi: float = math.pi / 6
    coverage: float = math.pi / 3
    noise_factor: float = 1.0
    eps: float = 1e-4
    sigma0: float = 0.01

    def __post_init__(self):
        if self.n_orient < 1 or self.n_scale < 1:
            raise ValueError("need at least one orientation and one scale")
        if self.wavelength_px < 2:
            raise ValueError("wavelength_px must be >= 2")
        if not 0 < self.kappa_ratio < 1:
            raise ValueError("kappa_ratio must lie in (0, 1)")
        if self.sigma0 <= 0 or self.sigma_phi <= 0:
            raise ValueError("sigma0 and sigma_phi must be positive")


@dataclass(frozen=True)
class PsMap:
    raw: np.ndarray
    normalized: np.ndarray
    z: float


def orientation_schedule(n_orient: int, coverage: float) -> np.ndarray:
    """Filter orientations centred on pi/2 (the depth axis)."""
    if n_orient < 1:
        raise ValueError("n_orient must be >= 1")
    if n_orient == 1:
        return np.array([math.pi / 2])
    r = np.arange(n_orient)
    return math.pi / 2 - coverage + 2 * r * coverage / (n_orient - 1)


def frequency_grid(shape):
    """Angular frequency magnitude and angle on the unshifted DFT grid.

    The angle is measured from the lateral axis towards the depth axis, so
    pi/2 is the frequency direction of a horizontal (lateral) line.
    """
    h, w = shape
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    omega = 2 * math.pi * np.hypot(fy, fx)
    phi = np.arctan2(fy * np.ones_like(fx), fx * np.ones_like(fy))
    return omega, phi


def _wrap(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def log_gabor(omega, phi, omega0, kappa, phi_r, sigma_phi, one_sided=True):
    """Log-Gabor transfer function evaluated at (omega, phi); zero at DC."""
    omega = np.asarray(omega, dtype=np.float64)
    with np.errstate(divide="ignore"):
        radial = np.exp(-np.log(np.where(omega > 0, omega, 1.0) / omega0) ** 2 / (2 * math.log(kappa / omega0) ** 2))
    radial = np.where(omega > 0, radial, 0.0)
    dphi = _wrap(np.asarray(phi) - phi_r)
    angular = np.exp(-(dphi ** 2) / (2 * sigma_phi ** 2))
    g = radial * angular
    if one_sided:
        g = np.where(np.abs(dphi) < math.pi / 2, g, 0.0)
    return g


def log_gabor_bank(shape, cfg: PsConfig = PsConfig()) -> list[list[np.ndarray]]:
    """Filters indexed ``[orientation][scale]`` on the DFT grid of ``shape``.

    Scale m uses centre wavelength ``wavelength_px * scale_mult**m`` with
    the bandwidth ratio ``kappa_ratio`` held fixed.
    """
    omega, phi = frequency_grid(shape)
    bank = []
    for phi_r in orientation_schedule(cfg.n_orient, cfg.coverage):
        row = []
        for m in range(cfg.n_scale):
            omega0 = 2 * math.pi / (cfg.wavelength_px * cfg.scale_mult ** m)
            row.append(log_gabor(omega, phi, omega0, cfg.kappa_ratio * omega0, phi_r, cfg.sigma_phi))
        bank.append(row)
    return bank


def filter_responses(a: np.ndarray, cfg: PsConfig = PsConfig()):
    """Complex responses ``e + j o`` as ``[orientation][scale]`` arrays."""
    spectrum = np.fft.fft2(a)
    return [[np.fft.ifft2(spectrum * g) for g in row] for row in log_gabor_bank(a.shape, cfg)]


def phase_symmetry(img: Image | np.ndarray, cfg: PsConfig = PsConfig()) -> PsMap:
    """Phase symmetry with a per-orientation noise threshold.

    The threshold for orientation r is ``noise_factor`` times the median
    amplitude of its smallest-scale response.
    """
    a = img.intensities if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    num = np.zeros(a.shape)
    den = np.zeros(a.shape)
    for row in filter_responses(a, cfg):
        t_r = cfg.noise_factor * float(np.median(np.abs(row[0])))
        for resp in row:
            e, o = resp.real, resp.imag
            num += np.maximum(np.abs(e) - np.abs(o) - t_r, 0.0)
            den += np.hypot(e, o)
    raw = num / (den + cfg.eps)
    z = float(raw.max())
    normalized = raw / z if z > 0 else np.zeros_like(raw)
    return PsMap(raw, normalized, z)


def f_ps(ps: PsMap | np.ndarray, sigma0: float) -> np.ndarray:
    """``exp(-normalized_ps / sigma0)``; 1 where there is no symmetry response."""
    if sigma0 <= 0:
        raise ValueError("sigma0 must be positive")
    norm = ps.normalized if isinstance(ps, PsMap) else np.asarray(ps, dtype=np.float64)
    return np.exp(-norm / sigma0)
