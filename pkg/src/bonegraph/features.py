"""Per-pixel descriptor bank for the tissue and shadow classifiers.

All neighbourhood operations use mirror padding (``d c b | a b c d | c b a``),
which is scipy's ``mode="mirror"`` and numpy's ``np.pad(mode="reflect")``.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy import ndimage, signal

from .imagecore import Image

RING = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)]
# Centre-symmetric pairs of the extended neighbourhood: the 3x3 ring plus the
# even-parity (checkerboard) pixels of the 5x5 border.
EXTENDED_PAIRS = [
    ((-1, -1), (1, 1)),
    ((-1, 0), (1, 0)),
    ((-1, 1), (1, -1)),
    ((0, 1), (0, -1)),
    ((-2, -2), (2, 2)),
    ((-2, 0), (2, 0)),
    ((-2, 2), (2, -2)),
    ((0, 2), (0, -2)),
]

PATCH_STATS = ("mean", "median", "variance", "std", "skewness", "kurtosis", "entropy", "energy")
PATCH_GROUP = {
    "mean": "patch mean",
    "median": "patch median",
    "variance": "patch variance",
    "std": "patch std",
    "skewness": "patch skewness",
    "kurtosis": "patch kurtosis",
    "entropy": "patch entropy",
    "energy": "patch energy",
}
RW_GROUPS = ("confidence map", "log-/Shadowing", "log-/Shadowing", "attenuation")
RW_TAGS = ("conf", "shadowing", "log shadowing", "attenuation")

ZERO_VARIANCE = 1e-12


@dataclass(frozen=True)
class FeatureConfig:
    """Scales are in wavelengths unless the name says px."""

    patch_scales: tuple = (3, 6, 12)
    cw_scales: tuple = (5, 11, 31)
    cw_orders: tuple = (0, 1, 2, 3)
    rayleigh_scale: float = 12
    rayleigh_bins: int = 16
    gabor_theta: float = math.pi / 2
    gabor_period_px: float = 16.0
    gabor_sigma_mm: tuple = (2.0, 4.0)
    haar_scales_px: tuple = (2, 5, 9, 15, 25, 30)
    entropy_bins: int = 32

    def __post_init__(self):
        for name in ("patch_scales", "cw_scales", "haar_scales_px", "gabor_sigma_mm", "cw_orders"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        scales = self.patch_scales + self.cw_scales + self.haar_scales_px + self.gabor_sigma_mm
        if any(s <= 0 for s in scales) or self.rayleigh_scale <= 0 or self.gabor_period_px <= 0:
            raise ValueError("all feature scales must be positive")
        if any(o not in (0, 1, 2, 3) for o in self.cw_orders):
            raise ValueError("cw_orders must be within 0..3")
        if self.entropy_bins < 1 or self.rayleigh_bins < 1:
            raise ValueError("bin counts must be positive")


def scale_px(scale_wavelengths: float, wavelength_px: float) -> int:
    """Half-width in pixels for a scale given in wavelengths (at least 1)."""
    return max(1, int(round(scale_wavelengths * wavelength_px)))


def mirror_pad(a: np.ndarray, pad: int) -> np.ndarray:
    if min(a.shape) < 2:
        return np.pad(a, pad, mode="edge")
    return np.pad(a, pad, mode="reflect")


def _box_mean(a, half):
    return ndimage.uniform_filter(a, size=2 * half + 1, mode="mirror")


# --------------------------------------------------------------------------
# local patch statistics


def patch_statistics(img: Image | np.ndarray, scale: int, entropy_bins: int = 32) -> dict[str, np.ndarray]:
    """Eight statistics over the (2*scale+1)^2 patch centred at each pixel.

    Variance is the population variance; kurtosis is non-excess. Patches
    with variance below 1e-12 get skewness = kurtosis = 0.
    """
    a = _intensities(img)
    if scale < 1:
        raise ValueError("scale must be >= 1")
    area = (2 * scale + 1) ** 2
    m1 = _box_mean(a, scale)
    m2 = _box_mean(a * a, scale)
    m3 = _box_mean(a ** 3, scale)
    m4 = _box_mean(a ** 4, scale)
    var = np.maximum(m2 - m1 * m1, 0.0)
    c3 = m3 - 3 * m1 * m2 + 2 * m1 ** 3
    c4 = m4 - 4 * m1 * m3 + 6 * m1 * m1 * m2 - 3 * m1 ** 4
    flat = var < ZERO_VARIANCE
    safe = np.where(flat, 1.0, var)
    skew = np.where(flat, 0.0, c3 / safe ** 1.5)
    kurt = np.where(flat, 0.0, c4 / safe ** 2)

    idx = np.minimum((a * entropy_bins).astype(np.int64), entropy_bins - 1)
    entropy = np.zeros_like(a)
    for b in range(entropy_bins):
        mask = idx == b
        if not mask.any():
            continue
        p = _box_mean(mask.astype(np.float64), scale)
        p = np.where(p > 1e-12, p, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            entropy -= np.where(p > 0, p * np.log2(p), 0.0)

    return {
        "mean": m1,
        "median": ndimage.median_filter(a, size=2 * scale + 1, mode="mirror"),
        "variance": var,
        "std": np.sqrt(var),
        "skewness": skew,
        "kurtosis": kurt,
        "entropy": np.maximum(entropy, 0.0),
        "energy": m2 * area,
    }


# --------------------------------------------------------------------------
# column-wise statistics


def gaussian_derivative_weights(sigma: float, order: int, truncate: float = 4.0) -> np.ndarray:
    """Correlation weights of the order-th Gaussian derivative on ``[-R, R]``.

    Truncation breaks the discrete moment identities of the derivative
    kernel, so the weights are projected (least change) back onto them:
    ``sum w_j j^i = 0`` for ``i < order`` and ``sum w_j j^order = order!``.
    Polynomials of degree up to ``order`` are then differentiated exactly.
    """
    radius = int(truncate * sigma + 0.5)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    u = x / sigma
    g = np.exp(-0.5 * u * u)
    g /= g.sum()
    coef = np.zeros(order + 1)
    coef[order] = 1.0
    # d^k/dx^k g = (-1/sigma)^k He_k(x/sigma) g; correlation flips odd orders
    w = (1.0 / sigma) ** order * np.polynomial.hermite_e.hermeval(u, coef) * g
    m = np.vstack([u ** i for i in range(order + 1)])
    target = np.zeros(order + 1)
    target[order] = math.factorial(order) / sigma ** order
    w = w - m.T @ np.linalg.solve(m @ m.T, m @ w - target)
    return w


def cw_local_statistics(img: Image | np.ndarray, sigma: float, order: int) -> np.ndarray:
    """Order-th Gaussian derivative along each scanline (axis 0)."""
    if sigma < 0.5:
        raise ValueError("sigma must be >= 0.5 px")
    w = gaussian_derivative_weights(sigma, order)
    return ndimage.correlate1d(_intensities(img), w, axis=0, mode="mirror")


def cw_cumulative(img: Image | np.ndarray) -> dict[str, np.ndarray]:
    """Sum, mean and std of the pixel and everything below it in its column.

    One bottom-up Welford pass, so constant columns give an exactly zero std.
    """
    a = _intensities(img)
    h, w = a.shape
    total = np.zeros_like(a)
    mean = np.zeros_like(a)
    std = np.zeros_like(a)
    run_sum = np.zeros(w)
    run_mean = np.zeros(w)
    run_m2 = np.zeros(w)
    for k, r in enumerate(range(h - 1, -1, -1), start=1):
        x = a[r]
        run_sum = run_sum + x
        delta = x - run_mean
        run_mean = run_mean + delta / k
        run_m2 = run_m2 + delta * (x - run_mean)
        total[r] = run_sum
        mean[r] = run_mean
        std[r] = np.sqrt(np.maximum(run_m2 / k, 0.0))
    return {"sum": total, "mean": mean, "std": std}


# --------------------------------------------------------------------------
# binary pattern family


def _shifted(p, pad, dr, dc, shape):
    h, w = shape
    return p[pad + dr : pad + dr + h, pad + dc : pad + dc + w]


def lbp_family(img: Image | np.ndarray) -> dict[str, np.ndarray]:
    """LBP, MCT and their extended variants, each scaled to [0, 1).

    Bit b of the 3x3 codes belongs to ``RING[b]`` (clockwise from the
    top-left neighbour); ties set the bit. Extended codes use one bit per
    centre-symmetric pair in ``EXTENDED_PAIRS``.
    """
    a = _intensities(img)
    pad = 2
    p = mirror_pad(a, pad)
    sh = a.shape
    ring = [_shifted(p, pad, dr, dc, sh) for dr, dc in RING]
    mean9 = (sum(ring) + a) / 9.0
    lbp = np.zeros(sh, dtype=np.int64)
    mct = np.zeros(sh, dtype=np.int64)
    for b, n in enumerate(ring):
        lbp |= (n >= a).astype(np.int64) << b
        mct |= (n >= mean9).astype(np.int64) << b

    mean25 = sum(_shifted(p, pad, dr, dc, sh) for dr in range(-2, 3) for dc in range(-2, 3)) / 25.0
    offset = a - mean25
    elbp = np.zeros(sh, dtype=np.int64)
    emct = np.zeros(sh, dtype=np.int64)
    for b, (o1, o2) in enumerate(EXTENDED_PAIRS):
        diff = _shifted(p, pad, *o1, sh) - _shifted(p, pad, *o2, sh)
        elbp |= (diff >= 0).astype(np.int64) << b
        emct |= (diff >= offset).astype(np.int64) << b

    n_ring, n_ext = len(RING), len(EXTENDED_PAIRS)
    return {
        "LBP": lbp / 2.0 ** n_ring,
        "MCT": mct / 2.0 ** n_ring,
        "extended LBP": elbp / 2.0 ** n_ext,
        "extended MCT": emct / 2.0 ** n_ext,
    }


# --------------------------------------------------------------------------
# speckle characterisation


@numba.njit(cache=True)
def rayleigh_fit_values(values, bins):
    """Distance between a sample histogram and its ML-fitted Rayleigh pdf.

    Both are normalised to unit sum over ``bins`` equal bins spanning the
    sample range. All-zero or constant samples return 0.
    """
    n = values.size
    lo = values[0]
    hi = values[0]
    sumsq = 0.0
    for v in values:
        sumsq += v * v
        if v < lo:
            lo = v
        if v > hi:
            hi = v
    if sumsq == 0.0 or hi <= lo:
        return 0.0
    b2 = sumsq / (2.0 * n)
    width = (hi - lo) / bins
    hist = np.zeros(bins)
    for v in values:
        k = int((v - lo) / width)
        if k >= bins:
            k = bins - 1
        hist[k] += 1.0
    pdf = np.empty(bins)
    total = 0.0
    for k in range(bins):
        x = lo + (k + 0.5) * width
        pdf[k] = x / b2 * math.exp(-x * x / (2.0 * b2))
        total += pdf[k]
    out = 0.0
    for k in range(bins):
        q = pdf[k] / total if total > 0 else 0.0
        d = hist[k] / n - q
        out += d * d
    return math.sqrt(out)


@numba.njit(cache=True)
def _rayleigh_map(padded, half, bins, h, w):
    out = np.empty((h, w))
    size = 2 * half + 1
    buf = np.empty(size * size)
    for r in range(h):
        for c in range(w):
            k = 0
            for i in range(size):
                for j in range(size):
                    buf[k] = padded[r + i, c + j]
                    k += 1
            out[r, c] = rayleigh_fit_values(buf, bins)
    return out


def rayleigh_fit_error(img: Image | np.ndarray, scale: int, bins: int = 16) -> np.ndarray:
    a = _intensities(img)
    return _rayleigh_map(mirror_pad(a, scale), int(scale), int(bins), a.shape[0], a.shape[1])


# --------------------------------------------------------------------------
# texture, curvature and centre-surround responses


def gabor_kernel(sigma_px: tuple[float, float], period_px: float, theta: float) -> np.ndarray:
    """Zero-mean Gabor kernel; axis 0 is x2 (depth), axis 1 is x1 (lateral)."""
    s1, s2 = sigma_px
    h1, h2 = int(math.ceil(3 * s1)), int(math.ceil(3 * s2))
    x2, x1 = np.mgrid[-h2 : h2 + 1, -h1 : h1 + 1].astype(np.float64)
    g = np.exp(-(x1 ** 2) / (2 * s1 ** 2) - x2 ** 2 / (2 * s2 ** 2)) / (2 * math.pi * s1 * s2)
    k = g * np.cos(2 * math.pi / period_px * (x1 * math.cos(theta) + x2 * math.sin(theta)))
    return k - k.mean()


def convolve_mirror(a: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    ph, pw = kernel.shape[0] // 2, kernel.shape[1] // 2
    if min(a.shape) < 2:
        padded = np.pad(a, ((ph, ph), (pw, pw)), mode="edge")
    else:
        padded = np.pad(a, ((ph, ph), (pw, pw)), mode="reflect")
    return signal.fftconvolve(padded, kernel, mode="valid")


def gabor_response(img: Image, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    sigma_px = tuple(s / img.spacing_mm for s in cfg.gabor_sigma_mm)
    kernel = gabor_kernel(sigma_px, cfg.gabor_period_px, cfg.gabor_theta)
    return convolve_mirror(img.intensities, kernel)


def curvature_map(img: Image | np.ndarray) -> np.ndarray:
    """Negative divergence of the normalised intensity gradient."""
    a = _intensities(img)
    if min(a.shape) < 2:
        return np.zeros_like(a)
    gr, gc = np.gradient(a)
    mag = np.hypot(gr, gc)
    flat = mag < 1e-8
    safe = np.where(flat, 1.0, mag)
    nr = np.where(flat, 0.0, gr / safe)
    nc = np.where(flat, 0.0, gc / safe)
    k = -(np.gradient(nr, axis=0) + np.gradient(nc, axis=1))
    return np.where(flat, 0.0, k)


def haar_half_widths(s: int) -> tuple[int, int]:
    """(centre, surround) half-widths for a centre square of side ``s``.

    Odd ``s`` is centred exactly; even ``s`` is grown to ``s + 1``. The
    surround is the centred square of side ``2 s + 1``.
    """
    return s // 2, s


def haar_center_surround(img: Image | np.ndarray, scales) -> list[np.ndarray]:
    """Mean of the surround ring minus mean of the centre square."""
    a = _intensities(img)
    h, w = a.shape
    halves = [haar_half_widths(int(s)) for s in scales]
    pad = max(b for _, b in halves)
    p = mirror_pad(a, pad)
    ii = np.zeros((p.shape[0] + 1, p.shape[1] + 1))
    ii[1:, 1:] = p.cumsum(0).cumsum(1)

    def box(half):
        r0 = pad - half
        r1 = pad + half + 1
        return (
            ii[r1 : r1 + h, r1 : r1 + w]
            - ii[r0 : r0 + h, r1 : r1 + w]
            - ii[r1 : r1 + h, r0 : r0 + w]
            + ii[r0 : r0 + h, r0 : r0 + w]
        )

    out = []
    for hc, hs in halves:
        inner = box(hc)
        outer = box(hs)
        n_in = (2 * hc + 1) ** 2
        n_ring = (2 * hs + 1) ** 2 - n_in
        out.append((outer - inner) / n_ring - inner / n_in)
    return out


# --------------------------------------------------------------------------
# the stack


@dataclass
class FeatureStack:
    """Ordered per-pixel feature maps plus the group registry."""

    names: list  # (group, tag) per feature
    data: np.ndarray  # (n_features, height, width)
    groups: dict = field(init=False)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.names = [tuple(n) for n in self.names]
        if self.data.ndim != 3 or self.data.shape[0] != len(self.names):
            raise ValueError("data must be (n_features, height, width) matching names")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("feature maps must be finite")
        self.groups = {}
        for i, (g, _) in enumerate(self.names):
            self.groups.setdefault(g, []).append(i)

    @property
    def n_features(self) -> int:
        return len(self.names)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[1:]

    def matrix(self) -> np.ndarray:
        """(height*width, n_features) row-major pixel matrix."""
        return self.data.reshape(self.n_features, -1).T

    def select(self, groups) -> "FeatureStack":
        keep = [i for i, (g, _) in enumerate(self.names) if g in set(groups)]
        return FeatureStack([self.names[i] for i in keep], self.data[keep])

    def drop_group(self, group: str) -> "FeatureStack":
        if group not in self.groups:
            raise KeyError(group)
        return self.select([g for g in self.groups if g != group])


def extract_all(
    img: Image,
    cfg: FeatureConfig = FeatureConfig(),
    conf_features=None,
    ps_map: np.ndarray | None = None,
    groups=None,
) -> FeatureStack:
    """Build the full per-pixel stack.

    ``conf_features`` holds the four random-walk maps (confidence,
    shadowing, log-shadowing, attenuation) from :mod:`bonegraph.confmap`;
    they are computed here when omitted. ``groups`` restricts extraction to
    the named groups.
    """
    from . import confmap

    wanted = None if groups is None else set(groups)

    def want(g):
        return wanted is None or g in wanted

    a = img.intensities
    names, maps = [], []

    def add(group, tag, m):
        m = np.asarray(m, dtype=np.float64)
        if m.shape != a.shape:
            raise ValueError(f"feature {group}/{tag} has shape {m.shape}, expected {a.shape}")
        names.append((group, tag))
        maps.append(m)

    if want("pixel intensity"):
        add("pixel intensity", "1px", a)

    patch_groups = [PATCH_GROUP[s] for s in PATCH_STATS]
    if any(want(g) for g in patch_groups):
        per_scale = []
        for s in cfg.patch_scales:
            px = scale_px(s, img.wavelength_px)
            per_scale.append((s, patch_statistics(img, px, cfg.entropy_bins)))
        for stat in PATCH_STATS:
            if want(PATCH_GROUP[stat]):
                for s, st in per_scale:
                    add(PATCH_GROUP[stat], f"{s}lambda", st[stat])

    if any(want(g) for g in RW_GROUPS):
        if conf_features is None:
            conf_features = confmap.random_walk_features(img)
        conf_features = list(conf_features)
        if len(conf_features) != 4:
            raise ValueError("conf_features must hold 4 maps")
        for g, t, m in zip(RW_GROUPS, RW_TAGS, conf_features):
            if want(g):
                add(g, t, m)

    if want("CW local statistics"):
        for s in cfg.cw_scales:
            sigma = max(0.5, s * img.wavelength_px)
            for order in cfg.cw_orders:
                add("CW local statistics", f"{s}lambda/order{order}", cw_local_statistics(img, sigma, order))

    cum_groups = {"sum": "CW cumulative sum", "mean": "CW cumulative mean", "std": "CW cumulative std"}
    if any(want(g) for g in cum_groups.values()):
        cum = cw_cumulative(img)
        for k, g in cum_groups.items():
            if want(g):
                add(g, "-", cum[k])

    if want("LBP"):
        for tag, m in lbp_family(img).items():
            add("LBP", tag, m)

    if want("Rayleigh fit error"):
        add(
            "Rayleigh fit error",
            f"{cfg.rayleigh_scale}lambda",
            rayleigh_fit_error(img, scale_px(cfg.rayleigh_scale, img.wavelength_px), cfg.rayleigh_bins),
        )

    if want("Gabor"):
        add("Gabor", "theta=pi/2", gabor_response(img, cfg))

    if want("curvature"):
        add("curvature", "-", curvature_map(img))

    if want("Haar"):
        for s, m in zip(cfg.haar_scales_px, haar_center_surround(img, cfg.haar_scales_px)):
            add("Haar", f"{s}px", m)

    if ps_map is not None and want("phase symmetry"):
        add("phase symmetry", "-", ps_map)

    if not maps:
        raise ValueError("no feature groups selected")
    return FeatureStack(names, np.stack(maps))


GROUP_ORDER = (
    ["pixel intensity"]
    + [PATCH_GROUP[s] for s in PATCH_STATS]
    + ["confidence map", "log-/Shadowing", "attenuation", "CW local statistics"]
    + ["CW cumulative sum", "CW cumulative mean", "CW cumulative std"]
    + ["LBP", "Rayleigh fit error", "Gabor", "curvature", "Haar"]
)


# --------------------------------------------------------------------------
# serialisation

MAGIC = "BONEGRAPH-FEATURES 1"


def save_stack(stack: FeatureStack, path):
    h, w = stack.shape
    lines = [MAGIC, f"height={h}", f"width={w}", f"count={stack.n_features}"]
    lines += [f"feature={g}|{t}" for g, t in stack.names]
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        fh.write(np.ascontiguousarray(stack.data, dtype="<f4").tobytes())


def load_stack(path) -> FeatureStack:
    raw = Path(path).read_bytes()
    buf = io.BytesIO(raw)
    if buf.readline().decode().strip() != MAGIC:
        raise ValueError(f"{path}: not a feature stack file")
    meta, names = {}, []
    while True:
        line = buf.readline().decode("utf-8").rstrip("\n")
        if line == "end":
            break
        if not line:
            raise ValueError(f"{path}: truncated header")
        key, _, value = line.partition("=")
        if key == "feature":
            g, _, t = value.partition("|")
            names.append((g, t))
        else:
            meta[key] = int(value)
    if len(names) != meta["count"]:
        raise ValueError(f"{path}: feature count mismatch")
    shape = (meta["count"], meta["height"], meta["width"])
    data = np.frombuffer(raw, dtype="<f4", offset=buf.tell(), count=int(np.prod(shape)))
    return FeatureStack(names, data.reshape(shape).astype(np.float64))


def _intensities(img) -> np.ndarray:
    if isinstance(img, Image):
        return img.intensities
    return np.asarray(img, dtype=np.float64)
