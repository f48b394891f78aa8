"""Configuration, training-pixel sampling, end-to-end delineation and the
cross-validated grid search / feature-selection drivers."""
from __future__ import annotations

import ast
import csv
import hashlib
import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import numpy as np

from . import boost
from .boost import BoostConfig, BoostModel, TrainingSet
from .confmap import ConfidenceParams, ConvergenceError, random_walk_features
from .delineate import interface_from_cbg, midline_from_bfg
from .features import GROUP_ORDER, FeatureConfig, FeatureStack, extract_all
from .graphmodel import GraphParams, build_graph, build_unaries
from .imagecore import (
    CBG,
    SHADOW,
    TISSUE,
    Delineation,
    Image,
    LabelMap,
    load_delineation,
    load_image,
    load_labelmap,
    resample_bilinear,
    resize_delineation,
)
from .metrics import evaluate
from .phantom import read_manifest
from .phasesym import PsConfig, phase_symmetry
from .trws import DualDecreaseError, SolverConfig, SolveReport, solve

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SamplingConfig:
    per_image: int = 1000  # pixels per image and classifier, half of each class

    def __post_init__(self):
        if self.per_image < 2:
            raise ValueError("per_image must be >= 2")


@dataclass(frozen=True)
class BaselineSettings:
    threshold: float = 0.1


@dataclass(frozen=True)
class DataConfig:
    root: str = ""
    train_range: str = ""  # "a:b" slice of the manifest, empty = all
    test_range: str = ""


@dataclass(frozen=True)
class RunConfig:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    confidence: ConfidenceParams = field(default_factory=ConfidenceParams)
    ps: PsConfig = field(default_factory=PsConfig)
    boost: BoostConfig = field(default_factory=BoostConfig)
    graph: GraphParams = field(default_factory=GraphParams)
    solver: SolverConfig = field(default_factory=SolverConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    baseline: BaselineSettings = field(default_factory=BaselineSettings)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    resample: bool = True

    def to_text(self) -> str:
        return "".join(f"{k}={v!r}\n" for k, v in flatten(self).items())

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        pairs = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"config line {n}: expected key=value, got {line!r}")
            pairs[key.strip()] = value.strip()
        return (base or cls()).with_overrides(pairs)

    def with_overrides(self, pairs: dict) -> "RunConfig":
        """Apply dotted ``key -> value`` overrides; string values are parsed."""
        known = flatten(self)
        sections: dict[str, dict] = {}
        top: dict = {}
        for key, raw in pairs.items():
            if key not in known:
                raise ValueError(f"unknown configuration key {key!r}")
            value = _coerce(_parse_value(raw) if isinstance(raw, str) else raw, known[key], key)
            if "." in key:
                sec, name = key.split(".", 1)
                sections.setdefault(sec, {})[name] = value
            else:
                top[key] = value
        for sec, kv in sections.items():
            top[sec] = replace(getattr(self, sec), **kv)
        return replace(self, **top)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def flatten(cfg: RunConfig) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if is_dataclass(v):
            for g in fields(v):
                out[f"{f.name}.{g.name}"] = getattr(v, g.name)
        else:
            out[f.name] = v
    return out


def _parse_value(raw: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def _coerce(value, current, key):
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ValueError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(current, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(current, tuple):
        if isinstance(value, (int, float)):
            value = (value,)
        if not isinstance(value, (tuple, list)):
            raise ValueError(f"{key}: expected a sequence, got {value!r}")
        return tuple(value)
    if isinstance(current, str):
        return str(value)
    return value


PRESETS = {
    "cbg-paper": {
        "ps.wavelength_px": 25.0,
        "ps.coverage": math.pi / 3,
        "ps.n_orient": 3,
        "ps.sigma0": 0.01,
        "graph.sigma0": 0.01,
        "graph.mu": 5.0,
        "graph.k1": 0.1,
        "graph.k2": 0.5,
        "graph.k3": 100.0,
        "graph.scheme": CBG,
    },
}


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    return RunConfig().with_overrides(PRESETS[name])


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    """Read a flat config file; a ``preset=<name>`` first line selects a base."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    body = []
    for line in lines:
        key, _, value = line.partition("=")
        if key.strip() == "preset":
            base = preset(value.strip())
        else:
            body.append(line)
    return RunConfig.from_text("\n".join(body), base)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(cfg.to_text(), encoding="utf-8")


# --------------------------------------------------------------------------
# datasets


@dataclass
class Sample:
    name: str
    image: Image
    labels: LabelMap | None = None
    gs: Delineation | None = None
    adversarial: bool = False


def parse_range(spec: str, n: int) -> range:
    if not spec:
        return range(n)
    a, sep, b = spec.partition(":")
    if not sep:
        raise ValueError(f"range must look like a:b, got {spec!r}")
    return range(n)[slice(int(a) if a else None, int(b) if b else None)]


def load_dataset(root, subset: str = "") -> list[Sample]:
    """Samples listed in ``root/manifest.csv``, optionally sliced by ``a:b``."""
    entries = read_manifest(root)
    out = []
    for k in parse_range(subset, len(entries)):
        e = entries[k]
        img = load_image(e.image)
        out.append(
            Sample(
                e.image.stem,
                img,
                load_labelmap(e.labels) if e.labels.exists() else None,
                load_delineation(e.gs, img.spacing_mm, img.height) if e.gs.exists() else None,
                e.adversarial,
            )
        )
    return out


# --------------------------------------------------------------------------
# training


@dataclass
class ModelPair:
    shadow: BoostModel
    tissue: BoostModel

    @property
    def groups(self) -> list[str]:
        seen = []
        for g, _ in list(self.shadow.feature_names) + list(self.tissue.feature_names):
            if g not in seen:
                seen.append(g)
        return seen

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        boost.save_model(self.shadow, d / "shadow.json")
        boost.save_model(self.tissue, d / "tissue.json")

    @classmethod
    def load(cls, directory) -> "ModelPair":
        d = Path(directory)
        return cls(boost.load_model(d / "shadow.json"), boost.load_model(d / "tissue.json"))


def class_masks(lm: LabelMap):
    """(shadow-positive, tissue-positive) boolean maps of a label map."""
    lab = lm.labels
    return lab == SHADOW, lab == TISSUE


def _sample_one(stack: FeatureStack, lm: LabelMap, per_image: int, rng, image_id: int):
    """Balanced draws for the shadow and tissue classifiers from one image."""
    if stack.shape != lm.shape:
        raise ValueError("feature stack and label map differ in shape")
    flat = stack.data.reshape(stack.n_features, -1)
    w = lm.shape[1]
    out = []
    for name, pos in zip(("shadow", "tissue"), class_masks(lm)):
        p_idx = np.flatnonzero(pos.ravel())
        n_idx = np.flatnonzero(~pos.ravel())
        k = min(per_image // 2, len(p_idx), len(n_idx))
        if k == 0:
            log.warning("image %d: no %s %s pixels, skipped for that classifier", image_id, name,
                        "positive" if len(p_idx) == 0 else "negative")
            out.append((np.empty((0, stack.n_features)), np.empty(0, np.int8), np.empty((0, 3), np.int64)))
            continue
        pick = np.concatenate([rng.choice(p_idx, k, replace=False), rng.choice(n_idx, k, replace=False)])
        rows = flat[:, pick].T.astype(np.float64)
        labels = np.r_[np.ones(k, np.int8), np.zeros(k, np.int8)]
        prov = np.column_stack([np.full(len(pick), image_id), pick // w, pick % w])
        out.append((rows, labels, prov))
    return out


def _image_rng(seed: int, image_id: int):
    return np.random.default_rng(np.random.SeedSequence([seed, image_id]))


def sample_training_pixels(samples, per_image: int, seed: int, image_ids=None) -> tuple[TrainingSet, TrainingSet]:
    """Stratified 50/50 pixel draws from ``(FeatureStack, LabelMap)`` pairs.

    Shadow classifier: S against T and B. Tissue classifier: T against S
    and B. Draws depend only on ``(seed, image id)``.
    """
    parts = ([], [])
    names = None
    for n, (stack, lm) in enumerate(samples):
        if names is None:
            names = list(stack.names)
        elif list(stack.names) != names:
            raise ValueError("feature stacks disagree on feature names")
        image_id = n if image_ids is None else image_ids[n]
        for part, drawn in zip(parts, _sample_one(stack, lm, per_image, _image_rng(seed, image_id), image_id)):
            part.append(drawn)
    if names is None:
        raise ValueError("no training images")
    return tuple(_merge(p, names) for p in parts)


def _merge(parts, names) -> TrainingSet:
    rows = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    prov = np.concatenate([p[2] for p in parts])
    return TrainingSet(rows, labels, names, prov)


def train_models(shadow_ts: TrainingSet, tissue_ts: TrainingSet, cfg: BoostConfig) -> ModelPair:
    return ModelPair(boost.train(shadow_ts, cfg), boost.train(tissue_ts, replace(cfg, rng_seed=cfg.rng_seed + 1)))


def working_image(img: Image, cfg: RunConfig) -> Image:
    """The image resampled to one pixel per wavelength when configured."""
    if cfg.resample and not math.isclose(img.wavelength_px, 1.0):
        return resample_bilinear(img, img.spacing_mm * img.wavelength_px)
    return img


def extract_features(img: Image, cfg: RunConfig, groups=None) -> FeatureStack:
    conf = None
    if groups is None or {"confidence map", "log-/Shadowing", "attenuation"} & set(groups):
        conf = random_walk_features(img, cfg.confidence)
    return extract_all(img, cfg.features, conf_features=conf, groups=groups)


def train_from_samples(samples: list[Sample], cfg: RunConfig, groups=None) -> ModelPair:
    pairs = []
    for s in samples:
        if s.labels is None:
            raise ValueError(f"{s.name}: training needs a label map")
        work = working_image(s.image, cfg)
        lm = s.labels
        if work.shape != s.image.shape:
            lm = _resize_labels(lm, work.shape)
        pairs.append((extract_features(work, cfg, groups), lm))
    st, tt = sample_training_pixels(pairs, cfg.sampling.per_image, cfg.seed)
    return train_models(st, tt, cfg.boost)


def _resize_labels(lm: LabelMap, shape) -> LabelMap:
    h, w = lm.shape
    r = np.minimum(((np.arange(shape[0]) + 0.5) * h / shape[0]).astype(int), h - 1)
    c = np.minimum(((np.arange(shape[1]) + 0.5) * w / shape[1]).astype(int), w - 1)
    return LabelMap(lm.labels[np.ix_(r, c)], lm.scheme)


# --------------------------------------------------------------------------
# inference


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class StageValueError(StageError, ValueError):
    pass


class _stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, typ, exc, tb):
        if exc is None or isinstance(exc, StageError):
            return False
        cls = StageValueError if isinstance(exc, ValueError) else StageError
        raise cls(self.name, f"{typ.__name__}: {exc}") from exc


def _columns(stack: FeatureStack, model: BoostModel) -> np.ndarray:
    index = {n: k for k, n in enumerate(stack.names)}
    try:
        return np.array([index[tuple(n)] for n in model.feature_names])
    except KeyError as e:
        raise ValueError(f"feature {e.args[0]} required by the model is missing") from None


def probability_maps(stack: FeatureStack, models: ModelPair) -> tuple[np.ndarray, np.ndarray]:
    """(P(tissue), P(shadow)) per pixel."""
    x = stack.matrix()
    h, w = stack.shape
    pt = boost.predict_proba(models.tissue, x[:, _columns(stack, models.tissue)]).reshape(h, w)
    ps = boost.predict_proba(models.shadow, x[:, _columns(stack, models.shadow)]).reshape(h, w)
    return pt, ps


def solve_labels(p_tissue, p_shadow, ps_norm, cfg: RunConfig) -> tuple[LabelMap, SolveReport]:
    params = cfg.graph
    shape = p_tissue.shape
    unaries = build_unaries(p_tissue, p_shadow, params.scheme)
    g = build_graph(shape, unaries, params, ps=ps_norm if params.scheme == CBG else None)
    rep = solve(g, cfg.solver)
    return rep.labelmap(params.scheme), rep


def labels_to_delineation(lm: LabelMap, spacing_mm: float) -> Delineation:
    if lm.scheme == CBG:
        return interface_from_cbg(lm, spacing_mm)
    return midline_from_bfg(lm, spacing_mm)


@dataclass
class Intermediates:
    p_tissue: np.ndarray
    p_shadow: np.ndarray
    ps: np.ndarray


def delineate_image(img: Image, models: ModelPair, cfg: RunConfig, dump: dict | None = None):
    """Features, classifiers, phase symmetry, graph, TRW-S, delineation.

    Returns ``(Delineation, LabelMap, SolveReport)`` in the input image
    frame (the label map stays on the working grid). When ``dump`` is a
    dict it receives the intermediate maps.
    """
    with _stage("resample"):
        work = working_image(img, cfg)
    with _stage("features"):
        stack = extract_features(work, cfg, models.groups)
    with _stage("classify"):
        pt, pshadow = probability_maps(stack, models)
    with _stage("phase symmetry"):
        ps = phase_symmetry(work, cfg.ps).normalized
    with _stage("solve"):
        lm, rep = solve_labels(pt, pshadow, ps, cfg)
    with _stage("delineate"):
        d = labels_to_delineation(lm, work.spacing_mm)
        if work.shape != img.shape:
            d = resize_delineation(d, work, img)
    if dump is not None:
        dump["intermediates"] = Intermediates(pt, pshadow, ps)
    return d, lm, rep


# --------------------------------------------------------------------------
# grid search


GRID_KEYS = {
    "lambda_ps": ("ps.wavelength_px", (25.0, 75.0)),
    "angle_ps": ("ps.coverage", (math.pi / 12, math.pi / 3)),
    "n_r": ("ps.n_orient", (1, 3)),
    "sigma0": ("graph.sigma0", (0.01, 10.0)),
    "mu": ("graph.mu", (0.1, 5.0)),
    "k1": ("graph.k1", (0.1, 1.0)),
    "k2": ("graph.k2", (0.1, 1.0)),
    "k3": ("graph.k3", (0.1, 1000.0)),
}
REPORT_COLUMNS = list(GRID_KEYS) + ["rmse_mm", "ohd_mm", "shd_mm", "mean_mm"]


@dataclass(frozen=True)
class GridSpec:
    """Value lists per grid parameter; parameters left out keep the config value."""

    values: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, vals in self.values.items():
            if k not in GRID_KEYS:
                raise ValueError(f"unknown grid parameter {k!r}")
            if len(vals) == 0:
                raise ValueError(f"grid parameter {k!r} has no values")
            lo, hi = GRID_KEYS[k][1]
            for v in vals:
                if not lo * (1 - 1e-9) <= v <= hi * (1 + 1e-9):
                    raise ValueError(f"{k}={v!r} outside the range [{lo}, {hi}]")

    def points(self, cfg: RunConfig) -> list[dict]:
        flat = flatten(cfg)
        axes = [self.values.get(k, (flat[key],)) for k, (key, _) in GRID_KEYS.items()]
        return [dict(zip(GRID_KEYS, combo)) for combo in itertools.product(*axes)]

    @classmethod
    def parse(cls, items) -> "GridSpec":
        """From ``name=v1,v2,...`` strings; values may use ``pi``."""
        values = {}
        for item in items:
            name, sep, rhs = item.partition("=")
            if not sep:
                raise ValueError(f"grid item must be name=v1,v2: {item!r}")
            values[name.strip()] = tuple(_grid_number(v) for v in rhs.split(","))
        return cls(values)


def _grid_number(text: str) -> float:
    text = text.strip()
    if "pi" in text:
        num, _, den = text.replace("pi", "1").partition("/")
        return math.pi * float(num) / (float(den) if den else 1.0)
    return float(text)


def apply_point(cfg: RunConfig, point: dict) -> RunConfig:
    return cfg.with_overrides({GRID_KEYS[k][0]: v for k, v in point.items()})


INF_SCORES = (math.inf, math.inf, math.inf)


def _score_point(pt, pshadow, ps, gs, spacing, cfg):
    try:
        lm, _ = solve_labels(pt, pshadow, ps, cfg)
        d = labels_to_delineation(lm, spacing)
        r = evaluate(d, gs)
        return r.rmse_mm, r.ohd_mm, r.shd_mm
    except (ConvergenceError, DualDecreaseError, ValueError, FloatingPointError) as e:
        log.warning("grid point failed: %s", e)
        return INF_SCORES


def _fold_task(args):
    """Train on one fold's training images and score every grid point on its test images."""
    train_parts, test_items, cfg, points = args
    names = train_parts[0][3]
    st = _merge([p[0] for p in train_parts], names)
    tt = _merge([p[1] for p in train_parts], names)
    models = train_models(st, tt, cfg.boost)
    scores = np.empty((len(points), len(test_items), 3))
    for j, (stack, work, gs) in enumerate(test_items):
        pt, pshadow = probability_maps(stack, models)
        ps_cache = {}
        for i, point in enumerate(points):
            pcfg = apply_point(cfg, point)
            key = (point["lambda_ps"], point["angle_ps"], point["n_r"])
            if key not in ps_cache:
                ps_cache[key] = phase_symmetry(work, pcfg.ps).normalized
            scores[i, j] = _score_point(pt, pshadow, ps_cache[key], gs, work.spacing_mm, pcfg)
    return scores


def _pmap(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


@dataclass
class GridResult:
    best: list  # one dict per subset: grid point + scores
    table: list  # every (subset, point) row
    subsets: list  # left-out index groups


def _mean_scores(scores: np.ndarray) -> np.ndarray:
    """Average (rmse, ohd, shd) over images; any infinity propagates."""
    with np.errstate(invalid="ignore"):
        return scores.mean(axis=-2)


def crossval_gridsearch(samples: list[Sample], grid: GridSpec, cfg: RunConfig, folds: int = 6,
                        subsets: int = 5, seed: int = 0, jobs: int = 1) -> GridResult:
    """Select graph/PS parameters by k-fold cross-validation on several subsets.

    The samples are split at random into ``subsets`` groups; subset i is the
    data with group i left out. Within a subset, each fold trains both
    classifiers on the other folds and scores every grid point on its own
    images. The objective is the mean metric averaged over folds.
    """
    n = len(samples)
    if n < 2 or subsets < 1 or folds < 2:
        raise ValueError("need >= 2 samples, >= 1 subset and >= 2 folds")
    rng = np.random.default_rng(seed)
    groups = [np.sort(g) for g in np.array_split(rng.permutation(n), subsets)]
    points = grid.points(cfg)

    # features and per-image training draws do not depend on the grid point
    items, draws = [], []
    names = None
    for k, s in enumerate(samples):
        work = working_image(s.image, cfg)
        stack = extract_features(work, cfg)
        stack = FeatureStack(stack.names, stack.data.astype(np.float32))
        lm = s.labels if work.shape == s.image.shape else _resize_labels(s.labels, work.shape)
        gs = s.gs if work.shape == s.image.shape else resize_delineation(s.gs, s.image, work)
        names = list(stack.names)
        sh, ti = _sample_one(stack, lm, cfg.sampling.per_image, _image_rng(cfg.seed, k), k)
        draws.append((sh, ti, k, names))
        items.append((stack, work, gs))

    tasks, layout = [], []
    for si, left_out in enumerate(groups):
        members = np.setdiff1d(np.arange(n), left_out)
        if len(members) < folds:
            raise ValueError(f"subset {si} has {len(members)} samples, fewer than {folds} folds")
        perm = np.random.default_rng([seed, si]).permutation(members)
        for fi, test in enumerate(np.array_split(perm, folds)):
            train = np.setdiff1d(members, test)
            tasks.append(([draws[k] for k in train], [items[k] for k in test], cfg, points))
            layout.append(si)
    results = _pmap(_fold_task, tasks, jobs)

    table, best = [], []
    for si in range(len(groups)):
        per_fold = np.stack([_mean_scores(r) for r, s in zip(results, layout) if s == si])
        scores = per_fold.mean(axis=0)  # (points, 3)
        objective = scores.mean(axis=1)
        for p, sc, obj in zip(points, scores, objective):
            table.append({"subset": si + 1, **p, "rmse_mm": sc[0], "ohd_mm": sc[1], "shd_mm": sc[2], "mean_mm": obj})
        k = int(np.argmin(np.where(np.isnan(objective), np.inf, objective)))
        sc = scores[k]
        best.append({"subset": si + 1, **points[k], "rmse_mm": sc[0], "ohd_mm": sc[1], "shd_mm": sc[2],
                     "mean_mm": objective[k]})
    return GridResult(best, table, [g.tolist() for g in groups])


def write_rows_csv(path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


# --------------------------------------------------------------------------
# feature selection


def time_feature_groups(img: Image, cfg: RunConfig, groups=GROUP_ORDER, repeats: int = 5) -> list[dict]:
    """Median wall-clock seconds to extract each feature group alone."""
    rows = []
    extract_all(img, cfg.features, groups=["Rayleigh fit error"])  # compile numba kernels first
    for g in groups:
        times = []
        n_feat = 0
        for _ in range(repeats):
            t0 = time.perf_counter()
            stack = extract_features(img, cfg, [g])
            times.append(time.perf_counter() - t0)
            n_feat = stack.n_features
        rows.append({"group": g, "n_features": n_feat, "median_s": float(np.median(times))})
    return rows


def run_feature_selection(samples: list[Sample], cfg: RunConfig, holdout_fraction: float = 0.3):
    """Greedy backward group elimination plus per-group timing.

    Classifier importances come from the training split; each removal is
    scored by the mean metric of CBG delineation on the held-out split.
    Returns ``(trace, timing)``.
    """
    n = len(samples)
    n_hold = max(1, int(round(holdout_fraction * n)))
    if n - n_hold < 1:
        raise ValueError("need at least two samples for feature selection")
    order = np.random.default_rng(cfg.seed).permutation(n)
    hold, train = np.sort(order[:n_hold]), np.sort(order[n_hold:])

    stacks = {}
    for k in range(n):
        work = working_image(samples[k].image, cfg)
        stacks[k] = (work, extract_features(work, cfg))
    pairs = [(stacks[k][1], samples[k].labels) for k in train]
    shadow_ts, tissue_ts = sample_training_pixels(pairs, cfg.sampling.per_image, cfg.seed, list(train))
    ps_maps = {k: phase_symmetry(stacks[k][0], cfg.ps).normalized for k in hold}

    def evaluator(shadow_groups, tissue_groups):
        models = train_models(shadow_ts.select(shadow_groups), tissue_ts.select(tissue_groups), cfg.boost)
        vals = []
        for k in hold:
            work, stack = stacks[k]
            pt, pshadow = probability_maps(stack, models)
            rmse, ohd, shd = _score_point(pt, pshadow, ps_maps[k], samples[k].gs, work.spacing_mm, cfg)
            vals.append((rmse + ohd + shd) / 3)
        return float(np.mean(vals))

    trace = boost.greedy_backward_elimination((shadow_ts, tissue_ts), cfg.boost, evaluator)
    timing = time_feature_groups(stacks[int(train[0])][0], cfg, shadow_ts.groups)
    return trace, timing


ELIMINATION_COLUMNS = ["step", "removed_shadow", "removed_tissue", "n_features_shadow", "n_features_tissue", "mean_f"]


def write_feature_selection(out_dir, trace, timing) -> None:
    """CSV tables and PNG plots of the elimination curve and group timings."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [{c: t.get(c, "") if t.get(c) is not None else "" for c in ELIMINATION_COLUMNS} for t in trace]
    write_rows_csv(out / "elimination.csv", rows, ELIMINATION_COLUMNS)
    write_rows_csv(out / "timing.csv", timing, ["group", "n_features", "median_s"])

    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar([t["step"] for t in trace], [t["mean_f"] for t in trace], color="tab:blue")
    ax.set_xlabel("groups removed")
    ax.set_ylabel("held-out mean metric (mm)")
    fig.tight_layout()
    fig.savefig(out / "elimination.png", dpi=100)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.barh([t["group"] for t in timing], [t["median_s"] * 1e3 for t in timing], color="tab:orange")
    ax.set_xlabel("median extraction time (ms)")
    ax.invert_yaxis()
    fig.tight_layout()
    fig.savefig(out / "timing.png", dpi=100)
    plt.close(fig)
