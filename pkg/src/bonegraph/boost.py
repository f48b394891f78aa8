"""Bagged LogitBoost with shallow regression trees.

Each boosting round draws a subsample (without replacement) of the training
rows, fits a weighted least-squares tree to the LogitBoost working response
on it and records which rows were left out. Those masks make out-of-bag
(OOB) error, and with it permutation importance, well defined.

Split search is histogram based: every feature is binned once into at most
256 bins, with bin edges placed between distinct feature values.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

log = logging.getLogger(__name__)

MAX_BINS = 256
Z_MAX = 4.0
W_MIN = 1e-12
N_PERMUTATIONS = 5
MAX_HALVINGS = 8
FORMAT_VERSION = 1


@dataclass(frozen=True)
class BoostConfig:
    t_size: int = 50
    tree_depth: int = 2
    bag_fraction: float = 0.632
    shrinkage: float = 0.1
    min_leaf: int = 20
    rng_seed: int = 0

    def __post_init__(self):
        if self.t_size < 1:
            raise ValueError("t_size must be >= 1")
        if not 0 < self.bag_fraction <= 1:
            raise ValueError("bag_fraction must lie in (0, 1]")
        if self.tree_depth < 1 or self.min_leaf < 1:
            raise ValueError("tree_depth and min_leaf must be >= 1")
        if self.shrinkage <= 0:
            raise ValueError("shrinkage must be positive")


@dataclass
class TrainingSet:
    """Feature rows with binary labels.

    ``feature_names`` holds one ``(group, tag)`` pair per column;
    ``provenance`` optionally holds ``(image_id, row, col)`` per sample.
    """

    rows: np.ndarray
    labels: np.ndarray
    feature_names: list
    provenance: np.ndarray | None = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.labels = np.asarray(self.labels).astype(np.int8)
        self.feature_names = [tuple(f) for f in self.feature_names]
        if self.rows.ndim != 2:
            raise ValueError("rows must be a 2-D array")
        if len(self.rows) != len(self.labels):
            raise ValueError("row and label counts differ")
        if self.rows.shape[1] != len(self.feature_names):
            raise ValueError("one feature name per column required")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("training rows contain non-finite values")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be 0 or 1")

    def __len__(self):
        return len(self.labels)

    @property
    def groups(self) -> list[str]:
        seen = []
        for g, _ in self.feature_names:
            if g not in seen:
                seen.append(g)
        return seen

    def select(self, groups) -> "TrainingSet":
        keep = set(groups)
        cols = [k for k, (g, _) in enumerate(self.feature_names) if g in keep]
        return TrainingSet(self.rows[:, cols], self.labels, [self.feature_names[k] for k in cols], self.provenance)


@dataclass
class Tree:
    """Preorder node arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(len(x), dtype=np.int64)
        rows = np.arange(len(x))
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return self.value[node]
            fi = np.where(inner, f, 0)
            go_left = x[rows, fi] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)

    def used_features(self) -> set:
        return set(int(f) for f in self.feature if f >= 0)

    @property
    def depth(self) -> int:
        def d(k):
            return 0 if self.feature[k] < 0 else 1 + max(d(self.left[k]), d(self.right[k]))

        return d(0)


@dataclass
class BoostModel:
    trees: list
    bag_masks: list  # boolean arrays, True = row used to fit that tree
    feature_names: list
    cfg: BoostConfig = field(default_factory=BoostConfig)
    loss_history: list = field(default_factory=list)

    def __post_init__(self):
        n_feat = len(self.feature_names)
        for t in self.trees:
            if any(f >= n_feat for f in t.used_features()):
                raise ValueError("tree references a feature outside the registry")
            if not np.all(np.isfinite(t.value)):
                raise ValueError("non-finite leaf value")

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def decision(self, x: np.ndarray) -> np.ndarray:
        f = np.zeros(len(x))
        for t in self.trees:
            f += self.cfg.shrinkage * t.apply(x)
        return f


# --------------------------------------------------------------------------
# training


def _bin_edges(col: np.ndarray) -> np.ndarray:
    u = np.unique(col)
    if len(u) <= 1:
        return np.empty(0)
    mids = 0.5 * (u[:-1] + u[1:])
    if len(mids) >= MAX_BINS:
        pick = np.unique(np.linspace(0, len(mids) - 1, MAX_BINS - 1).round().astype(np.int64))
        mids = mids[pick]
    return mids


def bin_features(x: np.ndarray):
    """Per-feature bin edges and the ``(n, F)`` uint8 bin index matrix."""
    edges = [_bin_edges(x[:, k]) for k in range(x.shape[1])]
    bins = np.empty(x.shape, dtype=np.uint8)
    for k, e in enumerate(edges):
        bins[:, k] = np.searchsorted(e, x[:, k], side="left")
    return edges, bins


def _best_split(bins, w, wz, min_leaf):
    """Best (feature, bin) by weighted least-squares gain, or None."""
    n, nf = bins.shape
    flat = (bins.astype(np.int64) + MAX_BINS * np.arange(nf)[None, :]).ravel()
    size = MAX_BINS * nf
    cw = np.bincount(flat, np.repeat(w, nf), size).reshape(nf, MAX_BINS).cumsum(axis=1)
    cz = np.bincount(flat, np.repeat(wz, nf), size).reshape(nf, MAX_BINS).cumsum(axis=1)
    cn = np.bincount(flat, minlength=size).reshape(nf, MAX_BINS).cumsum(axis=1)
    tw, tz = cw[:, -1:], cz[:, -1:]
    rw, rz, rn = tw - cw, tz - cz, n - cn
    ok = (cn >= min_leaf) & (rn >= min_leaf) & (cw > W_MIN) & (rw > W_MIN)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = cz ** 2 / cw + rz ** 2 / rw - tz ** 2 / tw
    gain = np.where(ok, gain, -np.inf)
    k = int(np.argmax(gain))
    if not np.isfinite(gain.flat[k]) or gain.flat[k] <= 1e-12 * max(float(tz[0, 0] ** 2 / tw[0, 0]), 1.0):
        return None
    return divmod(k, MAX_BINS)


def _fit_tree(bins, edges, w, z, depth, min_leaf) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []
    wz = w * z

    def grow(idx, d):
        k = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(wz[idx].sum() / max(w[idx].sum(), W_MIN)))
        if d >= depth or len(idx) < 2 * min_leaf:
            return k
        split = _best_split(bins[idx], w[idx], wz[idx], min_leaf)
        if split is None:
            return k
        f, b = split
        go = bins[idx, f] <= b
        feature[k], threshold[k] = f, float(edges[f][b])
        left[k] = grow(idx[go], d + 1)
        right[k] = grow(idx[~go], d + 1)
        return k

    grow(np.arange(len(z)), 0)
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value),
    )


def _working_response(f: np.ndarray, y: np.ndarray):
    """Clamped LogitBoost response and weights; antisymmetric under label swap."""
    z = np.where(y == 1, 1.0 + np.exp(-2 * f), -(1.0 + np.exp(2 * f)))
    z = np.clip(z, -Z_MAX, Z_MAX)
    w = np.maximum(expit(2 * f) * expit(-2 * f), W_MIN)
    return z, w


def log_loss(f: np.ndarray, y: np.ndarray) -> float:
    """Mean negative log-likelihood of labels under p = 1/(1+exp(-2F))."""
    s = np.where(y == 1, 1.0, -1.0)
    return float(np.mean(np.logaddexp(0.0, -2 * s * f)))


def train(ts: TrainingSet, cfg: BoostConfig = BoostConfig()) -> BoostModel:
    n = len(ts)
    if n == 0:
        raise ValueError("empty training set")
    y = ts.labels
    if y.min() == y.max():
        raise ValueError("training set contains a single class")
    rng = np.random.default_rng(cfg.rng_seed)
    edges, bins = bin_features(ts.rows)
    n_bag = max(1, int(round(cfg.bag_fraction * n)))
    f = np.zeros(n)
    trees, masks, losses = [], [], [log_loss(f, y)]
    for _ in range(cfg.t_size):
        if n_bag >= n:
            idx = np.arange(n)
        else:
            idx = np.sort(rng.choice(n, size=n_bag, replace=False))
        mask = np.zeros(n, dtype=bool)
        mask[idx] = True
        z, w = _working_response(f[idx], y[idx])
        tree = _fit_tree(bins[idx], edges, w, z, cfg.tree_depth, cfg.min_leaf)
        step = cfg.shrinkage * tree.apply(ts.rows)
        # a tree fitted on a subsample can overshoot on the full set; halve
        # its leaves until the training loss does not go up
        loss = log_loss(f + step, y)
        for _ in range(MAX_HALVINGS):
            if loss <= losses[-1]:
                break
            tree.value *= 0.5
            step *= 0.5
            loss = log_loss(f + step, y)
        else:
            if loss > losses[-1]:
                tree.value[:] = 0.0
                step[:] = 0.0
                loss = losses[-1]
        f += step
        trees.append(tree)
        masks.append(mask)
        losses.append(loss)
    log.debug("trained %d trees, loss %.4f -> %.4f", len(trees), losses[0], losses[-1])
    return BoostModel(trees, masks, list(ts.feature_names), cfg, losses)


def predict_proba(m: BoostModel, features) -> np.ndarray | float:
    """P(label = 1); accepts one feature vector or a ``(n, F)`` batch."""
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != m.n_features:
        raise ValueError(f"expected {m.n_features} features, got {x.shape[1]}")
    if np.isnan(x).any():
        raise ValueError("NaN in feature vector")
    p = expit(2 * m.decision(x))
    return float(p[0]) if single else p


# --------------------------------------------------------------------------
# out-of-bag estimates


def _oob_error(m: BoostModel, x: np.ndarray, y: np.ndarray, masks: np.ndarray) -> float:
    f = np.zeros(len(x))
    for t, bag in zip(m.trees, masks):
        f += np.where(bag, 0.0, m.cfg.shrinkage * t.apply(x))
    has_oob = ~masks.all(axis=0)
    pred = (f[has_oob] > 0).astype(np.int8)
    return float(np.mean(pred != y[has_oob]))


def oob_error(m: BoostModel, ts: TrainingSet) -> float:
    masks = _check_masks(m, ts)
    return _oob_error(m, ts.rows, ts.labels, masks)


def _check_masks(m: BoostModel, ts: TrainingSet) -> np.ndarray:
    if not m.bag_masks:
        raise ValueError("model has no bag masks")
    masks = np.array(m.bag_masks, dtype=bool)
    if masks.shape[1] != len(ts):
        raise ValueError("bag masks do not match the training set size")
    if masks.all():
        raise ValueError("no out-of-bag rows (bag_fraction = 1)")
    return masks


def feature_importance(m: BoostModel, ts: TrainingSet, seed: int | None = None) -> np.ndarray:
    """Permutation OOB importance per feature, averaged over 5 permutations."""
    masks = _check_masks(m, ts)
    rng = np.random.default_rng(m.cfg.rng_seed if seed is None else seed)
    base = _oob_error(m, ts.rows, ts.labels, masks)
    used = set().union(*(t.used_features() for t in m.trees)) if m.trees else set()
    imp = np.zeros(m.n_features)
    for k in range(m.n_features):
        if k not in used:
            continue
        x = ts.rows.copy()
        errs = []
        for _ in range(N_PERMUTATIONS):
            x[:, k] = rng.permutation(ts.rows[:, k])
            errs.append(_oob_error(m, x, ts.labels, masks))
        imp[k] = np.mean(errs) - base
    return imp


def oob_importance(m: BoostModel, ts: TrainingSet, seed: int | None = None) -> dict:
    """Group importance: max permutation importance over the group's features."""
    imp = feature_importance(m, ts, seed)
    out: dict[str, float] = {}
    for (g, _), v in zip(m.feature_names, imp):
        out[g] = max(out.get(g, -np.inf), float(v))
    return out


def greedy_backward_elimination(ts_pair, cfg: BoostConfig, evaluator) -> list[dict]:
    """Drop each classifier's least important group until one group is left.

    ``evaluator(shadow_groups, tissue_groups)`` returns the held-out mean
    metric for the current group sets. One trace entry per removal.
    """
    shadow_ts, tissue_ts = ts_pair
    groups = {"shadow": list(shadow_ts.groups), "tissue": list(tissue_ts.groups)}
    sets = {"shadow": shadow_ts, "tissue": tissue_ts}
    if min(len(g) for g in groups.values()) < 2:
        raise ValueError("need at least two feature groups")
    trace = []
    step = 0
    while max(len(g) for g in groups.values()) > 1:
        step += 1
        entry = {"step": step}
        for name in ("shadow", "tissue"):
            if len(groups[name]) == 1:
                entry[f"removed_{name}"] = None
                continue
            sub = sets[name].select(groups[name])
            model = train(sub, cfg)
            imp = oob_importance(model, sub)
            # ties broken by the later group, which keeps earlier ones longer
            worst = min(reversed(groups[name]), key=lambda g: imp[g])
            groups[name].remove(worst)
            entry[f"removed_{name}"] = worst
            entry[f"importance_{name}"] = imp
            entry[f"n_features_{name}"] = sets[name].select(groups[name]).rows.shape[1]
        entry["shadow_groups"] = list(groups["shadow"])
        entry["tissue_groups"] = list(groups["tissue"])
        entry["mean_f"] = float(evaluator(list(groups["shadow"]), list(groups["tissue"])))
        log.info("elimination step %d: -%s / -%s, mean_f %.4f", step, entry["removed_shadow"],
                 entry["removed_tissue"], entry["mean_f"])
        trace.append(entry)
    return trace


# --------------------------------------------------------------------------
# serialization


def _tree_to_dict(t: Tree) -> dict:
    return {
        "feature": t.feature.tolist(),
        "threshold": t.threshold.tolist(),
        "left": t.left.tolist(),
        "right": t.right.tolist(),
        "value": t.value.tolist(),
    }


def _tree_from_dict(d: dict) -> Tree:
    return Tree(
        np.array(d["feature"], dtype=np.int64),
        np.array(d["threshold"], dtype=np.float64),
        np.array(d["left"], dtype=np.int64),
        np.array(d["right"], dtype=np.int64),
        np.array(d["value"], dtype=np.float64),
    )


def model_to_text(m: BoostModel) -> str:
    doc = {
        "format": FORMAT_VERSION,
        "config": asdict(m.cfg),
        "features": [list(f) for f in m.feature_names],
        "trees": [_tree_to_dict(t) for t in m.trees],
        "bags": [{"n": int(len(b)), "bits": np.packbits(b).tobytes().hex()} for b in m.bag_masks],
        "loss_history": [float(v) for v in m.loss_history],
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def model_from_text(text: str) -> BoostModel:
    doc = json.loads(text)
    if doc.get("format") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format {doc.get('format')!r}")
    masks = [
        np.unpackbits(np.frombuffer(bytes.fromhex(b["bits"]), dtype=np.uint8))[: b["n"]].astype(bool)
        for b in doc["bags"]
    ]
    return BoostModel(
        [_tree_from_dict(t) for t in doc["trees"]],
        masks,
        [tuple(f) for f in doc["features"]],
        BoostConfig(**doc["config"]),
        doc.get("loss_history", []),
    )


def save_model(m: BoostModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(model_to_text(m))


def load_model(path) -> BoostModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_text(fh.read())
