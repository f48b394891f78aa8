"""Directed lattice factor graphs for the BFG and CBG label schemes.

Nodes are pixels in row-major order. Every factor points from a node to a
node later in that order: H factors to the right neighbour, V factors to
the node below, J factors to the node ``l`` rows below.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import BFG, CBG
from .phasesym import PsMap, f_ps

H, V, J = 0, 1, 2
DIRECTION_NAMES = {H: "H", V: "V", J: "J"}
DIRECTION_CODES = {v: k for k, v in DIRECTION_NAMES.items()}

PROB_CLAMP = 1e-6


@dataclass(frozen=True)
class GraphParams:
    mu: float = 5.0
    k1: float = 0.1
    k2: float = 0.5
    k3: float = 100.0
    inf: float = 1e4
    thickness: int = 2  # bone band thickness l, BFG only
    scheme: str = CBG
    sigma0: float = 0.01  # f_PS decay, CBG only

    def __post_init__(self):
        if self.scheme not in (BFG, CBG):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.thickness < 1:
            raise ValueError("thickness must be >= 1")
        if self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive")

    @property
    def n_labels(self) -> int:
        return 3 if self.scheme == BFG else 2


def build_unaries(p_tissue, p_shadow, scheme: str) -> np.ndarray:
    """Negative log label probabilities, shape ``(H, W, n_labels)``.

    CBG normalises (pT, pS) to sum one. BFG adds pB = (1-pT)(1-pS) and
    normalises the triple.
    """
    pt = np.clip(np.asarray(p_tissue, dtype=np.float64), PROB_CLAMP, 1 - PROB_CLAMP)
    ps = np.clip(np.asarray(p_shadow, dtype=np.float64), PROB_CLAMP, 1 - PROB_CLAMP)
    if pt.shape != ps.shape:
        raise ValueError("probability maps differ in shape")
    if scheme == CBG:
        probs = np.stack([pt, ps], axis=-1)
    elif scheme == BFG:
        probs = np.stack([pt, (1 - pt) * (1 - ps), ps], axis=-1)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    probs /= probs.sum(axis=-1, keepdims=True)
    return -np.log(probs)


def pairwise_table_bfg(direction: int, params: GraphParams) -> np.ndarray:
    k1, k2, k3, inf = params.k1, params.k2, params.k3, params.inf
    if direction == H:
        return np.array([[k1, 1, 1], [1, k2, 1], [1, 1, k1]], dtype=np.float64)
    if direction == V:
        return np.array([[k2, k3, inf], [inf, k2, k3], [inf, inf, k2]], dtype=np.float64)
    if direction == J:
        return np.array([[0, 0, inf], [inf, inf, 0], [inf, inf, 0]], dtype=np.float64)
    raise ValueError(f"unknown direction {direction!r}")


def pairwise_table_cbg(direction: int, params: GraphParams, f_value: float = 1.0) -> np.ndarray:
    k1, k2, k3, inf = params.k1, params.k2, params.k3, params.inf
    if direction == H:
        return np.array([[k1, 1], [1, k1]], dtype=np.float64)
    if direction == V:
        return np.array([[k2, k3 * f_value], [inf, k2]], dtype=np.float64)
    raise ValueError(f"CBG has no direction {direction!r}")


@dataclass(frozen=True)
class FactorGraph:
    """Lattice MRF; energy = sum(unary) + mu * sum(factor tables)."""

    shape: tuple
    unary: np.ndarray  # (n_nodes, n_labels)
    edge_i: np.ndarray
    edge_j: np.ndarray
    edge_dir: np.ndarray
    tables: np.ndarray  # (n_edges, n_labels, n_labels), unscaled
    mu: float = 1.0

    def __post_init__(self):
        for name in ("unary", "edge_i", "edge_j", "edge_dir", "tables"):
            a = np.ascontiguousarray(getattr(self, name))
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        n, lab = self.unary.shape
        if n != self.shape[0] * self.shape[1]:
            raise ValueError("unary count does not match shape")
        if self.tables.shape != (len(self.edge_i), lab, lab):
            raise ValueError("table array has the wrong shape")
        if len(self.edge_i) and (np.any(self.edge_i >= self.edge_j) or self.edge_j.max() >= n):
            raise ValueError("factors must point from a node to a later node")

    @property
    def n_nodes(self) -> int:
        return self.unary.shape[0]

    @property
    def n_labels(self) -> int:
        return self.unary.shape[1]

    @property
    def n_factors(self) -> int:
        return len(self.edge_i)

    def count(self, direction: int) -> int:
        return int(np.sum(self.edge_dir == direction))

    def energy(self, labeling) -> float:
        lab = np.asarray(labeling).ravel().astype(np.int64)
        if lab.size != self.n_nodes:
            raise ValueError("labeling size mismatch")
        un = self.unary[np.arange(self.n_nodes), lab].sum()
        pw = self.tables[np.arange(self.n_factors), lab[self.edge_i], lab[self.edge_j]].sum()
        return float(un + self.mu * pw)


def lattice_edges(shape, thickness: int | None = None):
    """(i, j, direction) arrays for H, V and optionally J factors."""
    h, w = shape
    idx = np.arange(h * w).reshape(h, w)
    parts = [
        (idx[:, :-1].ravel(), idx[:, 1:].ravel(), H),
        (idx[:-1, :].ravel(), idx[1:, :].ravel(), V),
    ]
    if thickness is not None:
        parts.append((idx[:-thickness, :].ravel(), idx[thickness:, :].ravel(), J))
    i = np.concatenate([p[0] for p in parts]).astype(np.int64)
    j = np.concatenate([p[1] for p in parts]).astype(np.int64)
    d = np.concatenate([np.full(len(p[0]), p[2]) for p in parts]).astype(np.int8)
    return i, j, d


def build_graph(shape, unaries: np.ndarray, params: GraphParams, ps=None) -> FactorGraph:
    """Assemble the BFG or CBG factor graph over an image of ``shape``.

    ``ps`` (a :class:`PsMap` or normalised PS array) is required for CBG;
    the T->S cost of each V factor uses f_PS at the upper node.
    """
    if hasattr(shape, "shape") and not isinstance(shape, tuple):
        shape = shape.shape
    h, w = shape
    unaries = np.asarray(unaries, dtype=np.float64)
    if unaries.shape != (h, w, params.n_labels):
        raise ValueError(f"unaries shape {unaries.shape} does not match {(h, w, params.n_labels)}")
    if params.scheme == BFG:
        if params.thickness >= h:
            raise ValueError("bone thickness must be smaller than the image height")
        ei, ej, ed = lattice_edges(shape, params.thickness)
        tabs = np.stack([pairwise_table_bfg(d, params) for d in (H, V, J)])[ed]
    else:
        if ps is None:
            raise ValueError("CBG needs a phase-symmetry map")
        norm = ps.normalized if isinstance(ps, PsMap) else np.asarray(ps, dtype=np.float64)
        if norm.shape != (h, w):
            raise ValueError("phase-symmetry map shape mismatch")
        f = f_ps(norm, params.sigma0).ravel()
        ei, ej, ed = lattice_edges(shape)
        tabs = np.empty((len(ei), 2, 2))
        tabs[ed == H] = pairwise_table_cbg(H, params)
        vert = ed == V
        tabs[vert] = pairwise_table_cbg(V, params)
        tabs[vert, 0, 1] = params.k3 * f[ei[vert]]
    return FactorGraph((h, w), unaries.reshape(h * w, -1), ei, ej, ed, tabs, params.mu)


def expected_factor_count(shape, scheme: str, thickness: int = 0) -> int:
    h, w = shape
    n = h * (w - 1) + (h - 1) * w
    if scheme == BFG:
        n += (h - thickness) * w
    return n


# --------------------------------------------------------------------------
# text dump: header, one "u" line per node, one line per factor


def dump_graph(g: FactorGraph, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# bonegraph factor graph\nshape {g.shape[0]} {g.shape[1]}\nlabels {g.n_labels}\nmu {g.mu!r}\n")
        for i, row in enumerate(g.unary):
            fh.write("u " + str(i) + " " + " ".join(repr(float(v)) for v in row) + "\n")
        for i, j, d, t in zip(g.edge_i, g.edge_j, g.edge_dir, g.tables):
            fh.write(f"{i} {j} {DIRECTION_NAMES[int(d)]} " + " ".join(repr(float(v)) for v in t.ravel()) + "\n")


def load_graph(path) -> FactorGraph:
    shape = labels = None
    mu = 1.0
    unary, ei, ej, ed, tabs = {}, [], [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            head = parts[0]
            if head == "shape":
                shape = (int(parts[1]), int(parts[2]))
            elif head == "labels":
                labels = int(parts[1])
            elif head == "mu":
                mu = float(parts[1])
            elif head == "u":
                unary[int(parts[1])] = [float(v) for v in parts[2:]]
            else:
                ei.append(int(parts[0]))
                ej.append(int(parts[1]))
                ed.append(DIRECTION_CODES[parts[2]])
                tabs.append([float(v) for v in parts[3:]])
    if shape is None or labels is None:
        raise ValueError(f"{path}: missing shape/labels header")
    n = shape[0] * shape[1]
    un = np.array([unary[i] for i in range(n)], dtype=np.float64)
    t = np.array(tabs, dtype=np.float64).reshape(-1, labels, labels)
    return FactorGraph(shape, un, np.array(ei, np.int64), np.array(ej, np.int64), np.array(ed, np.int8), t, mu)
