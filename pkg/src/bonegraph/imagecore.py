"""Raster, annotation and label types with their file formats.

Conventions used throughout the package:

* row 0 is the transducer face; increasing row index means deeper;
* columns are scanlines;
* delineation depths are stored in pixels (fractional allowed) with the
  pixel spacing carried alongside, and converted to mm only by metrics.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

TISSUE, BONE, SHADOW = 0, 1, 2
LABEL_NAMES = {TISSUE: "T", BONE: "B", SHADOW: "S"}

BFG = "BFG"
CBG = "CBG"


class FormatError(ValueError):
    """Raised for malformed or unsupported files."""


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Image:
    """Grayscale B-mode image with intensities in [0, 1].

    Parameters
    ----------
    intensities : (height, width) array
    spacing_mm : float
        Isotropic pixel size.
    wavelength_px : float
        Transmit wavelength expressed in pixels.
    """

    intensities: np.ndarray
    spacing_mm: float
    wavelength_px: float = 1.0

    def __post_init__(self):
        a = _frozen(self.intensities, np.float64)
        if a.ndim != 2 or a.size == 0:
            raise ValueError("image must be a non-empty 2D array")
        if not np.all(np.isfinite(a)):
            raise ValueError("image intensities must be finite")
        if a.min() < 0.0 or a.max() > 1.0:
            raise ValueError("image intensities must lie in [0, 1]")
        if not self.spacing_mm > 0:
            raise ValueError("spacing_mm must be positive")
        if not self.wavelength_px >= 1:
            raise ValueError("wavelength_px must be >= 1")
        object.__setattr__(self, "intensities", a)
        object.__setattr__(self, "spacing_mm", float(self.spacing_mm))
        object.__setattr__(self, "wavelength_px", float(self.wavelength_px))

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @property
    def width(self) -> int:
        return self.intensities.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.intensities.shape

    def with_intensities(self, values) -> "Image":
        return Image(values, self.spacing_mm, self.wavelength_px)


@dataclass(frozen=True)
class Delineation:
    """Per-scanline bone depth curve; absent columns mean no bone."""

    cols: np.ndarray
    depths: np.ndarray
    spacing_mm: float
    height: int | None = None

    def __post_init__(self):
        cols = np.asarray(self.cols, dtype=np.int64).ravel()
        depths = np.asarray(self.depths, dtype=np.float64).ravel()
        if cols.shape != depths.shape:
            raise ValueError("cols and depths must have equal length")
        if len(np.unique(cols)) != len(cols):
            raise ValueError("at most one depth per column")
        if np.any(cols < 0):
            raise ValueError("column indices must be non-negative")
        if not np.all(np.isfinite(depths)) or np.any(depths < 0):
            raise ValueError("depths must be finite and non-negative")
        if self.height is not None and np.any(depths >= self.height):
            raise ValueError("depth outside image")
        if not self.spacing_mm > 0:
            raise ValueError("spacing_mm must be positive")
        order = np.argsort(cols, kind="stable")
        object.__setattr__(self, "cols", _frozen(cols[order], np.int64))
        object.__setattr__(self, "depths", _frozen(depths[order], np.float64))
        object.__setattr__(self, "spacing_mm", float(self.spacing_mm))

    @classmethod
    def from_mapping(cls, mapping: dict, spacing_mm: float, height=None) -> "Delineation":
        cols = list(mapping.keys())
        return cls(cols, [mapping[c] for c in cols], spacing_mm, height)

    @classmethod
    def empty(cls, spacing_mm: float, height=None) -> "Delineation":
        return cls([], [], spacing_mm, height)

    def as_dict(self) -> dict[int, float]:
        return {int(c): float(d) for c, d in zip(self.cols, self.depths)}

    def __len__(self):
        return len(self.cols)

    def __eq__(self, other):
        if not isinstance(other, Delineation):
            return NotImplemented
        return (
            np.array_equal(self.cols, other.cols)
            and np.array_equal(self.depths, other.depths)
            and self.spacing_mm == other.spacing_mm
        )

    __hash__ = None


def column_order_ok(column, scheme: str) -> bool:
    """True if the column reads T* B* S* (BFG) or T* S* (CBG)."""
    column = np.asarray(column).astype(np.int64)
    if scheme == CBG and np.any(column == BONE):
        return False
    return bool(np.all(np.diff(column) >= 0))


def column_violations(labels: np.ndarray, scheme: str) -> np.ndarray:
    """Indices of columns breaking the propagation order."""
    labels = np.asarray(labels).astype(np.int64)
    bad = np.any(np.diff(labels, axis=0) < 0, axis=0)
    if scheme == CBG:
        bad |= np.any(labels == BONE, axis=0)
    return np.flatnonzero(bad)


@dataclass(frozen=True)
class LabelMap:
    labels: np.ndarray
    scheme: str = CBG

    def __post_init__(self):
        if self.scheme not in (BFG, CBG):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise ValueError("label map must be 2D")
        if not np.all(np.isin(lab, (TISSUE, BONE, SHADOW))):
            raise ValueError("labels must be in {0, 1, 2}")
        object.__setattr__(self, "labels", _frozen(lab, np.uint8))

    @property
    def shape(self):
        return self.labels.shape


def validate_labelmap(lm: LabelMap) -> LabelMap:
    """Return ``lm`` unchanged or raise if any column breaks label order."""
    bad = column_violations(lm.labels, lm.scheme)
    if len(bad):
        raise ValueError(
            f"{len(bad)} column(s) violate {lm.scheme} label order, first at column {bad[0]}"
        )
    return lm


# --------------------------------------------------------------------------
# resampling


def _centre_coords(n_out: int, n_in: int) -> np.ndarray:
    # output pixel centres expressed in input pixel coordinates
    return (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5


def bilinear_resize(a: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear interpolation at pixel centres, edges clamped."""
    a = np.asarray(a, dtype=np.float64)
    rows = _centre_coords(shape[0], a.shape[0])
    cols = _centre_coords(shape[1], a.shape[1])
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(a, [rr, cc], order=1, mode="nearest")


def resample_bilinear(img: Image, new_spacing_mm: float) -> Image:
    if not new_spacing_mm > 0:
        raise ValueError("new_spacing_mm must be positive")
    factor = img.spacing_mm / new_spacing_mm
    shape = (int(round(img.height * factor)), int(round(img.width * factor)))
    if min(shape) < 1:
        raise ValueError(f"resampled image would be empty: {shape}")
    out = np.clip(bilinear_resize(img.intensities, shape), 0.0, 1.0)
    return Image(out, new_spacing_mm, max(1.0, img.wavelength_px * factor))


def _polyline_distance_mm(d: Delineation, shape, spacing_mm) -> np.ndarray:
    """Euclidean distance (mm) from each pixel centre to the delineation.

    Annotated points in adjacent columns are joined by straight segments;
    isolated points stay points.
    """
    h, w = shape
    pts = np.column_stack([d.depths, d.cols.astype(np.float64)])
    joined = np.flatnonzero(np.diff(d.cols) == 1)
    a = np.vstack([pts[joined], pts])
    b = np.vstack([pts[joined + 1], pts])
    rr, cc = np.mgrid[0:h, 0:w]
    p = np.column_stack([rr.ravel(), cc.ravel()]).astype(np.float64)
    best = np.full(len(p), np.inf)
    ab = b - a
    denom = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-12)
    chunk = max(1, 2_000_000 // max(len(a), 1))
    for s in range(0, len(p), chunk):
        q = p[s : s + chunk, None, :]
        t = np.clip(np.einsum("pij,ij->pi", q - a[None], ab) / denom, 0.0, 1.0)
        proj = a[None] + t[..., None] * ab[None]
        dist = np.sqrt(((q - proj) ** 2).sum(-1)).min(axis=1)
        best[s : s + chunk] = dist
    return best.reshape(h, w) * spacing_mm


def resize_delineation(d: Delineation, src: Image, dst: Image) -> Delineation:
    """Map a delineation between two pixel grids of the same field of view.

    The curve is rasterised into a distance map (mm), the map is resized
    bilinearly, and per target column the row of minimum distance is kept if
    it lies within one coarse pixel of the curve; a three-point vertex fit
    restores the sub-pixel depth.
    """
    if len(d) == 0:
        return Delineation.empty(dst.spacing_mm, dst.height)
    if src.shape == dst.shape and src.spacing_mm == dst.spacing_mm:
        return Delineation(d.cols, d.depths, dst.spacing_mm, dst.height)
    dist = _polyline_distance_mm(d, src.shape, src.spacing_mm)
    resized = bilinear_resize(dist, dst.shape) / dst.spacing_mm
    threshold = max(src.spacing_mm, dst.spacing_mm) / dst.spacing_mm
    cols, depths = [], []
    h = dst.height
    for c in range(dst.width):
        col = resized[:, c]
        r = int(np.argmin(col))
        if col[r] > threshold:
            continue
        a = col[r - 1] if r > 0 else col[r] + 1.0
        b = col[r + 1] if r + 1 < h else col[r] + 1.0
        depth = r + float(np.clip((a - b) / 2.0, -0.5, 0.5))
        cols.append(c)
        depths.append(min(max(depth, 0.0), h - 1e-9))
    return Delineation(cols, depths, dst.spacing_mm, dst.height)


# --------------------------------------------------------------------------
# file I/O



def _read_pgm(path) -> tuple[np.ndarray, int, list[str]]:
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    pos = 2
    fields, comments = [], []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            end = data.index(b"\n", pos)
            comments.append(data[pos + 1 : end].decode("ascii", "replace").strip())
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace before raster
    w, h, maxval = fields
    if maxval < 256:
        dtype = np.dtype("u1")
    elif maxval < 65536:
        dtype = np.dtype(">u2")
    else:
        raise FormatError(f"{path}: unsupported PGM maxval {maxval}")
    raster = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos)
    return raster.reshape(h, w).astype(np.int64), maxval, comments


def _write_pgm(path, a: np.ndarray, maxval: int, comments=()):
    a = np.asarray(a)
    h, w = a.shape
    header = b"P5\n" + b"".join(f"# {c}\n".encode("ascii") for c in comments)
    header += f"{w} {h}\n{maxval}\n".encode("ascii")
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(a.astype(dtype)).tobytes())


def meta_path(path) -> Path:
    p = Path(path)
    return p.with_suffix(".meta")


def read_meta(path) -> dict[str, float]:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = float(value)
    return out


def write_meta(path, spacing_mm: float, wavelength_px: float):
    Path(path).write_text(f"spacing_mm={spacing_mm!r}\nwavelength_px={wavelength_px!r}\n")


def load_image(path, spacing_mm: float | None = None, wavelength_px: float | None = None) -> Image:
    """Read an 8/16-bit PGM or grayscale PNG and its ``.meta`` sidecar.

    Explicit ``spacing_mm`` / ``wavelength_px`` override the sidecar.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        raw, maxval, _ = _read_pgm(path)
        values = raw / float(maxval)
    elif suffix == ".png":
        with PILImage.open(path) as im:
            if im.mode == "L":
                values = np.asarray(im, dtype=np.float64) / 255.0
            elif im.mode in ("I;16", "I;16B", "I"):
                raw = np.asarray(im, dtype=np.int64)
                if raw.min() < 0 or raw.max() > 65535:
                    raise FormatError(f"{path}: unsupported PNG bit depth")
                values = raw / 65535.0
            else:
                raise FormatError(f"{path}: unsupported PNG mode {im.mode!r}")
    else:
        raise FormatError(f"{path}: unsupported image format {suffix!r}")

    meta = read_meta(meta_path(path)) if meta_path(path).exists() else {}
    if spacing_mm is None:
        spacing_mm = meta.get("spacing_mm")
    if wavelength_px is None:
        wavelength_px = meta.get("wavelength_px", 1.0)
    if spacing_mm is None:
        raise ValueError(f"{path}: no spacing_mm in sidecar and no override given")
    return Image(values, spacing_mm, wavelength_px)


def save_image(img: Image, path, bits: int = 16):
    """Write ``img`` as PGM or PNG plus the ``.meta`` sidecar."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = 255 if bits == 8 else 65535
    q = np.rint(img.intensities * maxval).astype(np.int64)
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        _write_pgm(path, q, maxval)
    elif path.suffix.lower() == ".png":
        if bits == 8:
            PILImage.fromarray(q.astype(np.uint8)).save(path)
        else:
            PILImage.fromarray(q.astype(np.uint16)).save(path)
    else:
        raise FormatError(f"unsupported image format {path.suffix!r}")
    write_meta(meta_path(path), img.spacing_mm, img.wavelength_px)


def save_delineation(d: Delineation, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["col", "depth_px"])
        for c, z in zip(d.cols, d.depths):
            writer.writerow([int(c), repr(float(z))])


def load_delineation(path, spacing_mm: float, height: int | None = None) -> Delineation:
    cols, depths = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["col", "depth_px"]:
            raise FormatError(f"{path}: expected header 'col,depth_px', got {header}")
        for row in reader:
            if not row:
                continue
            cols.append(int(row[0]))
            depths.append(float(row[1]))
    return Delineation(cols, depths, spacing_mm, height)


def save_labelmap(lm: LabelMap, path):
    _write_pgm(path, lm.labels, 255, comments=[f"scheme={lm.scheme}"])


def load_labelmap(path) -> LabelMap:
    raw, _, comments = _read_pgm(path)
    scheme = None
    for c in comments:
        if c.startswith("scheme="):
            scheme = c.split("=", 1)[1].strip()
    if scheme is None:
        scheme = BFG if np.any(raw == BONE) else CBG
    return LabelMap(raw, scheme)


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
