"""Graph data model, file I/O and editing utilities.

Graphs are undirected, node-attributed and labelled.  Edges are stored as
a frozenset of (u, v) tuples with u < v; the adjacency matrix is therefore
symmetric with a zero diagonal by construction.  Self-loops are forbidden
here -- the GCN adds them internally during normalization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

Edge = tuple[int, int]


class GraphFormatError(ValueError):
    """Raised when a graph file is malformed or violates an invariant."""


def normalize_edge(u: int, v: int) -> Edge:
    """Canonical (min, max) form of an undirected edge."""
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True, eq=False)
class RelationalGraph:
    """Undirected node-attributed graph with integer class labels.

    Immutable after construction; safe to share across pipeline workers.
    """

    node_count: int
    edges: frozenset[Edge]
    features: np.ndarray  # (node_count, d) float
    labels: np.ndarray    # (node_count,) int
    class_count: int

    def __post_init__(self):
        if self.node_count <= 0:
            raise GraphFormatError("node_count must be positive")
        if self.class_count <= 0:
            raise GraphFormatError("class_count must be positive")
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        labs = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        if feats.shape[0] != self.node_count or feats.ndim != 2:
            raise GraphFormatError(
                f"features must be (node_count, d); got {feats.shape}"
            )
        if labs.shape != (self.node_count,):
            raise GraphFormatError(f"labels must be ({self.node_count},); got {labs.shape}")
        if labs.min(initial=0) < 0 or (labs.size and labs.max() >= self.class_count):
            raise GraphFormatError("every label must satisfy 0 <= label < class_count")
        for (u, v) in self.edges:
            if u == v:
                raise GraphFormatError(f"self-loop ({u}, {v}) not allowed")
            if not (0 <= u < self.node_count and 0 <= v < self.node_count):
                raise GraphFormatError(f"edge ({u}, {v}) out of range")
            if u > v:
                raise GraphFormatError(f"edge ({u}, {v}) not in canonical (min, max) form")
        feats.flags.writeable = False
        labs.flags.writeable = False
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def neighbors(self, node: int) -> set[int]:
        out: set[int] = set()
        for (u, v) in self.edges:
            if u == node:
                out.add(v)
            elif v == node:
                out.add(u)
        return out


@dataclass(frozen=True)
class NodeSplit:
    """Disjoint train/validation/test node index sets."""

    train: tuple[int, ...]
    validation: tuple[int, ...]
    test: tuple[int, ...]

    def __post_init__(self):
        tr, va, te = set(self.train), set(self.validation), set(self.test)
        if (tr & va) or (tr & te) or (va & te):
            raise ValueError("split sets must be pairwise disjoint")


def make_graph(node_count: int,
               edges: Iterable[tuple[int, int]],
               features: np.ndarray | None = None,
               labels: Sequence[int] | np.ndarray | None = None,
               class_count: int | None = None) -> RelationalGraph:
    """Build a graph, canonicalizing and deduplicating the edge list.

    Defaults: constant ones features (d=10), all-zero labels, inferred
    class count (max label + 1).
    """
    canon = frozenset(normalize_edge(u, v) for (u, v) in edges)
    if labels is None:
        labels = np.zeros(node_count, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if features is None:
        features = np.ones((node_count, 10), dtype=np.float64)
    if class_count is None:
        class_count = int(labels.max(initial=0)) + 1
    return RelationalGraph(node_count=node_count, edges=canon,
                           features=np.asarray(features, dtype=np.float64),
                           labels=labels, class_count=class_count)


# ---------------------------------------------------------------------------
# Adjacency conversions
# ---------------------------------------------------------------------------

def adjacency(g: RelationalGraph) -> np.ndarray:
    """n x n symmetric 0/1 matrix with zero diagonal."""
    a = np.zeros((g.node_count, g.node_count), dtype=np.int8)
    for (u, v) in g.edges:
        a[u, v] = 1
        a[v, u] = 1
    return a


def validate_boolean_matrix(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {a.shape}")
    if not np.isin(a, (0, 1)).all():
        raise ValueError("matrix entries must be 0 or 1")
    return a.astype(np.int8)


def graph_from_adjacency(a: np.ndarray, template: RelationalGraph) -> RelationalGraph:
    """Rebuild a graph from a (possibly asymmetric) 0/1 matrix.

    Asymmetric reconstructions are symmetrized by union (a OR a.T); the
    diagonal is ignored.  Features, labels and class count come from the
    template.
    """
    a = validate_boolean_matrix(a)
    n = template.node_count
    if a.shape != (n, n):
        raise ValueError(f"adjacency shape {a.shape} does not match node count {n}")
    sym = a | a.T
    iu, ju = np.triu_indices(n, k=1)
    present = sym[iu, ju] == 1
    edges = frozenset(zip(iu[present].tolist(), ju[present].tolist()))
    return RelationalGraph(node_count=n, edges=edges, features=template.features,
                           labels=template.labels, class_count=template.class_count)


def remove_edges(g: RelationalGraph,
                 victims: Iterable[tuple[int, int]]) -> tuple[RelationalGraph, int]:
    """Drop edges from the graph; returns (new graph, ignored count).

    Victims not present in the graph are ignored silently but counted.
    """
    canon = {normalize_edge(u, v) for (u, v) in victims}
    ignored = len(canon - g.edges)
    out = RelationalGraph(node_count=g.node_count, edges=g.edges - canon,
                          features=g.features, labels=g.labels,
                          class_count=g.class_count)
    return out, ignored


# ---------------------------------------------------------------------------
# Node splits
# ---------------------------------------------------------------------------

def split_nodes(g: RelationalGraph, seed: int,
                fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)) -> NodeSplit:
    """Stratified train/validation/test split by class, seeded.

    Every class with at least one node contributes at least one training
    node.  Fractions apply per class and are rounded down for the
    validation/test shares.
    """
    f_tr, f_va, f_te = fractions
    if not np.isclose(f_tr + f_va + f_te, 1.0):
        raise ValueError("split fractions must sum to 1")
    rng = np.random.default_rng(seed)
    train: list[int] = []
    val: list[int] = []
    test: list[int] = []
    for cls in range(g.class_count):
        members = np.flatnonzero(g.labels == cls)
        if members.size == 0:
            continue
        perm = rng.permutation(members)
        m = perm.size
        n_va = int(f_va * m)
        n_te = int(f_te * m)
        n_tr = m - n_va - n_te
        if n_tr < 1:  # tiny classes: keep at least one node trainable
            n_tr = 1
            n_va = (m - 1) // 2
            n_te = m - 1 - n_va
        train.extend(perm[:n_tr].tolist())
        val.extend(perm[n_tr:n_tr + n_va].tolist())
        test.extend(perm[n_tr + n_va:].tolist())
    return NodeSplit(train=tuple(sorted(train)),
                     validation=tuple(sorted(val)),
                     test=tuple(sorted(test)))


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------
#
# Edge-list format: one "i j" pair per line, '#' comments, UTF-8; companion
# files "<stem>.labels" (one integer per line) and "<stem>.features" (CSV,
# one row per node).  JSON bundle:
#   {"n": int, "edges": [[i, j], ...], "labels": [...],
#    "features": [[...], ...], "classes": int}

def load_graph(path: str | Path, format: str = "json-bundle") -> RelationalGraph:
    path = Path(path)
    if not path.exists():
        raise GraphFormatError(f"no such file: {path}")
    if format == "json-bundle":
        return _load_json_bundle(path)
    if format == "edge-list":
        return _load_edge_list(path)
    raise GraphFormatError(f"unknown graph format: {format!r}")


def save_graph(g: RelationalGraph, path: str | Path) -> None:
    """Write the JSON bundle representation."""
    bundle = {
        "n": g.node_count,
        "edges": sorted([u, v] for (u, v) in g.edges),
        "labels": g.labels.tolist(),
        "features": g.features.tolist(),
        "classes": g.class_count,
    }
    Path(path).write_text(json.dumps(bundle), encoding="utf-8")


def _load_json_bundle(path: Path) -> RelationalGraph:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{path}: invalid JSON ({exc})") from exc
    try:
        n = int(raw["n"])
        edges = [(int(u), int(v)) for (u, v) in raw["edges"]]
        labels = np.asarray(raw["labels"], dtype=np.int64)
        classes = int(raw["classes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphFormatError(f"{path}: malformed bundle ({exc})") from exc
    features = raw.get("features")
    feats = None if features is None else np.asarray(features, dtype=np.float64)
    for (u, v) in edges:
        if u == v:
            raise GraphFormatError(f"{path}: self-loop ({u}, {v}) rejected")
    try:
        return make_graph(n, edges, features=feats, labels=labels, class_count=classes)
    except GraphFormatError as exc:
        raise GraphFormatError(f"{path}: {exc}") from exc


def _load_edge_list(path: Path) -> RelationalGraph:
    edges: list[Edge] = []
    max_node = -1
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        parts = stripped.split()
        if len(parts) != 2:
            raise GraphFormatError(f"{path}:{lineno}: expected 'i j', got {line!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise GraphFormatError(f"{path}:{lineno}: non-integer endpoint in {line!r}") from exc
        if u < 0 or v < 0:
            raise GraphFormatError(f"{path}:{lineno}: negative node index in {line!r}")
        if u == v:
            raise GraphFormatError(f"{path}:{lineno}: self-loop ({u}, {v}) rejected")
        edges.append(normalize_edge(u, v))
        max_node = max(max_node, u, v)

    labels_path = path.with_suffix(".labels")
    if not labels_path.exists():
        raise GraphFormatError(f"missing companion labels file: {labels_path}")
    labels: list[int] = []
    for lineno, line in enumerate(labels_path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        try:
            labels.append(int(stripped))
        except ValueError as exc:
            raise GraphFormatError(f"{labels_path}:{lineno}: non-integer label {line!r}") from exc
    n = len(labels)
    if max_node >= n:
        raise GraphFormatError(
            f"{path}: edge endpoint {max_node} exceeds label count {n}")

    features_path = path.with_suffix(".features")
    feats = None
    if features_path.exists():
        rows = []
        for lineno, line in enumerate(features_path.read_text(encoding="utf-8").splitlines(), start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                rows.append([float(x) for x in stripped.split(",")])
            except ValueError as exc:
                raise GraphFormatError(
                    f"{features_path}:{lineno}: malformed feature row {line!r}") from exc
        feats = np.asarray(rows, dtype=np.float64)
        if feats.shape[0] != n:
            raise GraphFormatError(
                f"{features_path}: {feats.shape[0]} feature rows for {n} nodes")

    return make_graph(n, edges, features=feats, labels=labels)
