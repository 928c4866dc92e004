"""Graph representation, normalization, structural predicates, homophily,
synthetic SBM generation and the on-disk dataset format.

Graphs are immutable CSR with symmetric, deduplicated adjacency and no stored
self-loops; consumers (normalization, attention supports) add self-loops per
their own policy.
"""

from __future__ import annotations

import json
import warnings
import weakref
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph in CSR form (row_ptr/col), self-loops never stored."""

    n: int
    row_ptr: np.ndarray
    col: np.ndarray

    def __post_init__(self):
        self.row_ptr.setflags(write=False)
        self.col.setflags(write=False)

    @property
    def degree(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    @property
    def num_edges(self) -> int:
        return int(self.col.size) // 2

    def neighbors(self, i: int) -> np.ndarray:
        return self.col[self.row_ptr[i] : self.row_ptr[i + 1]]

    def edge_pairs(self) -> np.ndarray:
        """Unique undirected edges as (m, 2) with i < j."""
        src = np.repeat(np.arange(self.n), self.degree)
        keep = src < self.col
        return np.stack([src[keep], self.col[keep]], axis=1)


def build_graph(edge_list, n: int) -> Graph:
    """Symmetrize + deduplicate an edge list; input self-loops are dropped."""
    if n <= 0:
        raise ValueError(f"graph needs n >= 1, got {n}")
    e = np.asarray(list(edge_list), dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= n):
        raise ValueError("edge index out of range")
    e = e[e[:, 0] != e[:, 1]]
    if e.size:
        und = np.unique(np.vstack([e, e[:, ::-1]]), axis=0)
    else:
        und = e
    counts = np.bincount(und[:, 0], minlength=n) if und.size else np.zeros(n, dtype=np.int64)
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    col = und[:, 1].copy() if und.size else np.zeros(0, dtype=np.int64)
    return Graph(n=n, row_ptr=row_ptr, col=col)


@dataclass(frozen=True, eq=False)
class Support:
    """Directed support layout (CSR order) for sparse attention values.

    Either the adjacency itself or adjacency plus self-loops; rows are sorted,
    ``src`` is the expanded row index and the scatter matrices push per-entry
    gradients back onto node rows.
    """

    n: int
    row_ptr: np.ndarray
    col: np.ndarray
    src: np.ndarray
    self_loops: bool
    scatter_src: sp.csr_array = field(repr=False)
    scatter_dst: sp.csr_array = field(repr=False)

    @property
    def size(self) -> int:
        return int(self.col.size)

    @property
    def has_empty_rows(self) -> bool:
        return bool((np.diff(self.row_ptr) == 0).any())

    def entry_pairs(self) -> np.ndarray:
        return np.stack([self.src, self.col], axis=1)


_support_cache: "weakref.WeakKeyDictionary[Graph, dict]" = weakref.WeakKeyDictionary()


def make_support(graph: Graph, self_loops: bool) -> Support:
    cached = _support_cache.setdefault(graph, {})
    if self_loops in cached:
        return cached[self_loops]
    src = np.repeat(np.arange(graph.n, dtype=np.int64), graph.degree)
    pairs = np.stack([src, graph.col], axis=1)
    if self_loops:
        loops = np.stack([np.arange(graph.n, dtype=np.int64)] * 2, axis=1)
        pairs = np.unique(np.vstack([pairs, loops]), axis=0)
    counts = np.bincount(pairs[:, 0], minlength=graph.n)
    row_ptr = np.zeros(graph.n + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    nnz = pairs.shape[0]
    ones = np.ones(nnz)
    rng_idx = np.arange(nnz + 1)
    gather_src = sp.csr_array((ones, pairs[:, 0], rng_idx), shape=(nnz, graph.n))
    gather_dst = sp.csr_array((ones, pairs[:, 1], rng_idx), shape=(nnz, graph.n))
    support = Support(
        n=graph.n,
        row_ptr=row_ptr,
        col=pairs[:, 1].copy(),
        src=pairs[:, 0].copy(),
        self_loops=self_loops,
        scatter_src=gather_src.T.tocsr(),
        scatter_dst=gather_dst.T.tocsr(),
    )
    cached[self_loops] = support
    return support


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """Values of (D+I)^(-1/2) (A+I) (D+I)^(-1/2) on the A+I support."""

    support: Support
    values: np.ndarray

    def __post_init__(self):
        self.values.setflags(write=False)

    def dense(self) -> np.ndarray:
        s = self.support
        return np.asarray(
            sp.csr_array((self.values, s.col, s.row_ptr), shape=(s.n, s.n)).todense()
        )


def sym_norm_adj(graph: Graph) -> NormalizedAdjacency:
    support = make_support(graph, self_loops=True)
    d1 = graph.degree + 1
    values = 1.0 / np.sqrt((d1[support.src] * d1[support.col]).astype(np.float64))
    return NormalizedAdjacency(support=support, values=values)


def is_connected(graph: Graph) -> bool:
    seen = np.zeros(graph.n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        i = stack.pop()
        for j in graph.neighbors(i):
            if not seen[j]:
                seen[j] = True
                stack.append(int(j))
    return bool(seen.all())


def is_bipartite(graph: Graph) -> bool:
    color = np.full(graph.n, -1, dtype=np.int8)
    for start in range(graph.n):
        if color[start] >= 0:
            continue
        color[start] = 0
        stack = [start]
        while stack:
            i = stack.pop()
            for j in graph.neighbors(i):
                if color[j] < 0:
                    color[j] = 1 - color[i]
                    stack.append(int(j))
                elif color[j] == color[i]:
                    return False
    return True


def check_pairwise_distinct(features: np.ndarray) -> bool:
    x = np.asarray(features, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("features must be finite")
    return np.unique(x, axis=0).shape[0] == x.shape[0]


def homophily(graph: Graph, labels) -> float:
    """Class-size-adjusted edge homophily in [0, 1].

    For class k, h_k is the fraction of same-class endpoints among directed
    edges leaving class-k nodes; the score averages max(0, h_k - |C_k|/n)
    over classes, normalized by C - 1.
    """
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (graph.n,):
        raise ValueError(f"labels must have shape ({graph.n},)")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("homophily needs at least two classes")
    src = np.repeat(np.arange(graph.n), graph.degree)
    same = y[src] == y[graph.col]
    total = 0.0
    for k in classes:
        mask = y[src] == k
        den = int(mask.sum())
        h_k = float(same[mask].sum()) / den if den else 0.0
        total += max(0.0, h_k - float((y == k).sum()) / graph.n)
    return total / (classes.size - 1)


def spectral_norm(support: Support, values: np.ndarray, iters: int = 5000,
                  tol: float = 1e-14, seed: int = 0) -> float:
    """Power iteration estimate of the largest |eigenvalue| (matrix is symmetric)."""
    mat = sp.csr_array((values, support.col, support.row_ptr), shape=(support.n, support.n))
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(support.n)
    v /= np.linalg.norm(v)
    last = 0.0
    for _ in range(iters):
        w = mat @ v
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        if abs(nrm - last) < tol:
            break
        last = nrm
    return nrm


# ---------------------------------------------------------------------------
# datasets

@dataclass(frozen=True, eq=False)
class Dataset:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    splits: dict
    name: str = "dataset"

    def __post_init__(self):
        self.features.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def d_x(self) -> int:
        return int(self.features.shape[1])

    @property
    def d_c(self) -> int:
        return int(self.labels.max()) + 1


def make_dataset(graph: Graph, features, labels, splits: dict, name: str = "dataset") -> Dataset:
    x = np.ascontiguousarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.shape[0] != graph.n or y.shape != (graph.n,):
        raise ValueError("feature/label dimensions do not match the graph")
    if not np.isfinite(x).all():
        raise ValueError("features must be finite")
    if y.min() < 0:
        raise ValueError("labels must be non-negative class indices")
    clean = {}
    seen = np.zeros(graph.n, dtype=bool)
    for key in ("train", "val", "test"):
        idx = np.unique(np.asarray(splits[key], dtype=np.int64))
        if idx.size and (idx.min() < 0 or idx.max() >= graph.n):
            raise ValueError(f"split {key!r} index out of range")
        if seen[idx].any():
            raise ValueError("splits must be disjoint")
        seen[idx] = True
        clean[key] = idx
    return Dataset(graph=graph, features=x, labels=y, splits=clean, name=name)


def gen_sbm(n: int, classes: int, p_intra: float, p_inter: float,
            feature_mean_separation: float, seed: int, d_x: int | None = None) -> Dataset:
    """Balanced stochastic block model with Gaussian class-mean features.

    Deterministic per seed.  When p_intra > p_inter > 0 and n >= 50 the graph
    is regenerated (up to 20 attempts) until connected.
    """
    if not (0.0 <= p_intra <= 1.0 and 0.0 <= p_inter <= 1.0):
        raise ValueError("probabilities must be in [0, 1]")
    if classes < 1 or n < classes:
        raise ValueError("need n >= classes >= 1")
    if d_x is None:
        d_x = max(8, classes)
    if d_x < classes:
        raise ValueError("d_x must be at least the number of classes")
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) % classes
    iu, ju = np.triu_indices(n, k=1)
    probs = np.where(labels[iu] == labels[ju], p_intra, p_inter)

    require_connected = p_intra > p_inter > 0.0 and n >= 50
    graph = None
    for _ in range(20):
        mask = rng.random(iu.size) < probs
        candidate = build_graph(np.stack([iu[mask], ju[mask]], axis=1), n)
        if candidate.col.size == 0:
            graph = candidate
            continue
        graph = candidate
        if not require_connected or is_connected(graph):
            break
    else:
        raise ValueError("could not generate a connected SBM in 20 attempts")
    if graph.col.size == 0:
        raise ValueError("generated SBM has no edges")

    means = np.zeros((classes, d_x))
    means[np.arange(classes), np.arange(classes)] = feature_mean_separation / np.sqrt(2.0)
    features = means[labels] + rng.standard_normal((n, d_x))

    perm = rng.permutation(n)
    n_train = int(round(0.6 * n))
    n_val = int(round(0.2 * n))
    splits = {
        "train": perm[:n_train],
        "val": perm[n_train : n_train + n_val],
        "test": perm[n_train + n_val :],
    }
    name = f"sbm-n{n}-c{classes}-seed{seed}"
    return make_dataset(graph, features, labels, splits, name=name)


# ---------------------------------------------------------------------------
# text dataset format: edges.tsv / features.tsv / labels.tsv / split_*.txt / meta.json

def save_dataset(ds: Dataset, path) -> None:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    pairs = ds.graph.edge_pairs()
    with open(out / "edges.tsv", "w") as f:
        for i, j in pairs:
            f.write(f"{i}\t{j}\n")
    with open(out / "features.tsv", "w") as f:
        for row in ds.features:
            f.write("\t".join(repr(float(v)) for v in row) + "\n")
    with open(out / "labels.tsv", "w") as f:
        for y in ds.labels:
            f.write(f"{y}\n")
    for key in ("train", "val", "test"):
        with open(out / f"split_{key}.txt", "w") as f:
            for i in ds.splits[key]:
                f.write(f"{i}\n")
    meta = {"n": ds.n, "d_x": ds.d_x, "d_c": ds.d_c, "name": ds.name}
    with open(out / "meta.json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def load_dataset(path) -> Dataset:
    root = Path(path)
    for fname in ("edges.tsv", "features.tsv", "labels.tsv", "meta.json",
                  "split_train.txt", "split_val.txt", "split_test.txt"):
        if not (root / fname).exists():
            raise ValueError(f"missing dataset file: {fname}")
    with open(root / "meta.json") as f:
        meta = json.load(f)
    n, d_x, d_c = int(meta["n"]), int(meta["d_x"]), int(meta["d_c"])

    raw = np.loadtxt(root / "edges.tsv", dtype=np.int64, delimiter="\t", ndmin=2)
    raw = raw.reshape(-1, 2) if raw.size else np.zeros((0, 2), dtype=np.int64)
    directed = {(int(a), int(b)) for a, b in raw if a != b}
    has_both = sum(1 for (a, b) in directed if (b, a) in directed)
    if 0 < has_both < len(directed):
        warnings.warn("edge file mixes one-way and two-way listings; symmetrizing")
    graph = build_graph(raw, n)

    features = np.loadtxt(root / "features.tsv", dtype=np.float64, delimiter="\t", ndmin=2)
    if features.shape != (n, d_x):
        raise ValueError(f"features shape {features.shape} does not match meta ({n}, {d_x})")
    labels = np.loadtxt(root / "labels.tsv", dtype=np.int64, ndmin=1)
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match meta ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= d_c):
        raise ValueError("label out of range")
    splits = {}
    for key in ("train", "val", "test"):
        p = root / f"split_{key}.txt"
        idx = np.loadtxt(p, dtype=np.int64, ndmin=1) if p.stat().st_size else np.zeros(0, np.int64)
        splits[key] = idx
    return make_dataset(graph, features, labels, splits, name=str(meta.get("name", root.name)))
