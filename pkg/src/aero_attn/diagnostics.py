"""Cumulative-attention diagnostics: dense T^(k) matrices, the smoothness
score, walk-based decompositions, over-smoothing-resistance probes, the
constructive un-smoothing parameter choice, and per-layer attention stats.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, asdict

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import pdist

from . import autodiff as ad
from . import models as m
from .graphs import Support, build_graph, make_support
from .propagation import PropagationTrace

DIAG_N_CAP = 3000
SUBSAMPLE_ABOVE = 1000
WALK_BUDGET = 10**6


@dataclass
class CumulativeAttention:
    k: int
    matrix: np.ndarray


@dataclass
class SmoothnessSeries:
    kind: str
    values: list
    estimated: bool = False


def _csr(support: Support, values: np.ndarray) -> sp.csr_array:
    return sp.csr_array((values, support.col, support.row_ptr),
                        shape=(support.n, support.n))


def _gamma_diag_apply(gamma: np.ndarray, mat: np.ndarray) -> np.ndarray:
    return gamma[:, None] * mat


def compute_T(trace: PropagationTrace, k: int, n_cap: int = DIAG_N_CAP) -> CumulativeAttention:
    """Dense cumulative attention Gamma^(k) A^(k) ... A^(1) (layer-ascending).

    k = 0 is the diagonal Gamma^(0) for models with layer aggregation.
    """
    if trace.n > n_cap:
        raise ValueError(f"n={trace.n} exceeds the diagnostics cap {n_cap}")
    has_t0 = trace.z is not None
    lo = 0 if has_t0 else 1
    if not lo <= k <= trace.k_max:
        raise ValueError(f"k={k} out of range [{lo}, {trace.k_max}]")
    if k == 0:
        return CumulativeAttention(0, np.diag(trace.attn[0].gamma))
    prod = _csr(trace.support, trace.attn[1].alpha).todense()
    prod = np.asarray(prod)
    for ell in range(2, k + 1):
        prod = _csr(trace.support, trace.attn[ell].alpha) @ prod
    return CumulativeAttention(k, _gamma_diag_apply(trace.attn[k].gamma, prod))


def cumulative_series(trace: PropagationTrace, k_hi: int | None = None,
                      n_cap: int = DIAG_N_CAP):
    """T^(1..k_hi) sharing one running edge-matrix product."""
    if trace.n > n_cap:
        raise ValueError(f"n={trace.n} exceeds the diagnostics cap {n_cap}")
    k_hi = trace.k_max if k_hi is None else k_hi
    out = []
    prod = None
    for k in range(1, k_hi + 1):
        mat = _csr(trace.support, trace.attn[k].alpha)
        prod = np.asarray(mat.todense()) if prod is None else mat @ prod
        out.append(CumulativeAttention(k, _gamma_diag_apply(trace.attn[k].gamma, prod)))
    return out


def smoothness(T: np.ndarray, max_pairs: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Mean pairwise L1 distance between L1-row-normalized rows, in [0, 2].

    Zero rows normalize to zero vectors.  With ``max_pairs`` set and exceeded,
    the mean is estimated on a random pair subsample.
    """
    T = np.asarray(T, dtype=np.float64)
    n = T.shape[0]
    if T.ndim != 2 or n < 2:
        raise ValueError("smoothness needs an n x m matrix with n >= 2")
    norms = np.abs(T).sum(axis=1, keepdims=True)
    R = np.divide(T, norms, out=np.zeros_like(T), where=norms > 0)
    total_pairs = n * (n - 1) // 2
    if max_pairs is not None and total_pairs > max_pairs:
        if rng is None:
            rng = np.random.default_rng(0)
        i = rng.integers(0, n, size=max_pairs)
        j = rng.integers(0, n - 1, size=max_pairs)
        j = np.where(j >= i, j + 1, j)
        return float(np.abs(R[i] - R[j]).sum(axis=1).mean())
    return float(pdist(R, metric="cityblock").mean())


def smoothness_series(trace: PropagationTrace, n_cap: int = DIAG_N_CAP,
                      max_pairs: int | None = None,
                      rng: np.random.Generator | None = None) -> SmoothnessSeries:
    """S(T^(k)) for k = 1..k_max."""
    if max_pairs is None and trace.n > SUBSAMPLE_ABOVE:
        max_pairs = SUBSAMPLE_ABOVE * (SUBSAMPLE_ABOVE - 1) // 2
    estimated = max_pairs is not None and trace.n * (trace.n - 1) // 2 > max_pairs
    vals = [smoothness(t.matrix, max_pairs=max_pairs, rng=rng)
            for t in cumulative_series(trace, n_cap=n_cap)]
    return SmoothnessSeries(kind=trace.kind, values=vals, estimated=estimated)


# ---------------------------------------------------------------------------
# attention paths

def support_neighbors(support: Support) -> list:
    return [support.col[support.row_ptr[i]:support.row_ptr[i + 1]]
            for i in range(support.n)]


def enumerate_walks(support: Support, i: int, j: int, k: int,
                    budget: int = WALK_BUDGET) -> list:
    """All length-k walks from i to j over the support (repeated nodes allowed).

    k = 0 yields the single empty walk (i,) when i == j.
    """
    if k < 0:
        raise ValueError("walk length must be >= 0")
    if k == 0:
        return [(i,)] if i == j else []
    nb = support_neighbors(support)
    prefixes = [(i,)]
    count = 1
    for _ in range(k):
        nxt = []
        for w in prefixes:
            for v in nb[w[-1]]:
                count += 1
                if count > budget:
                    raise ValueError(f"walk enumeration exceeded budget {budget}")
                nxt.append(w + (int(v),))
        prefixes = nxt
    return [w for w in prefixes if w[-1] == j]


def degree_of_intersection(p, q) -> int:
    """Number of step positions where both walks traverse the same directed step."""
    if len(p) != len(q):
        raise ValueError("walks must have equal length")
    return sum(1 for t in range(1, len(p))
               if p[t - 1] == q[t - 1] and p[t] == q[t])


def path_decompose_entry(trace: PropagationTrace, i: int, j: int, k: int,
                         budget: int = WALK_BUDGET) -> float:
    """T^(k)_{ij} recomputed as gamma^(k)_i times the walk-product sum.

    Walks run from j to i; the step from v_{l-1} to v_l at layer l picks up
    the edge value alpha^(l)[v_l, v_{l-1}] (destination row, as in the matrix
    product).
    """
    if k == 0:
        return float(trace.attn[0].gamma[i]) if i == j else 0.0
    dense = [None] + [trace.alpha_dense(ell) for ell in range(1, k + 1)]
    total = 0.0
    for walk in enumerate_walks(trace.support, j, i, k, budget=budget):
        prod = 1.0
        for ell in range(1, k + 1):
            prod *= dense[ell][walk[ell], walk[ell - 1]]
        total += prod
    return float(trace.attn[k].gamma[i] * total)


def count_intersecting_pairs(support: Support, i: int, j: int, x: int, k: int,
                             n1: int, budget: int = WALK_BUDGET) -> int:
    """Exact count of walk pairs (p_i: i->x, p_j: j->x) with doi >= n1."""
    walks_i = enumerate_walks(support, i, x, k, budget=budget)
    walks_j = enumerate_walks(support, j, x, k, budget=budget)
    if len(walks_i) * len(walks_j) > budget:
        raise ValueError(f"pair enumeration exceeded budget {budget}")
    return sum(1 for p in walks_i for q in walks_j
               if degree_of_intersection(p, q) >= n1)


# ---------------------------------------------------------------------------
# resistance probe

@dataclass
class ProbeResult:
    kind: str
    classification: str           # "V2OS" | "WR2OS" | "SR2OS"
    n_samples: int
    seed: int
    edge_equal_count: int
    hop_equal_count: int
    edge_witness: dict | None
    hop_witness: dict | None
    both_witness: dict | None
    note: str = ""

    def to_json(self) -> dict:
        def clean(w):
            if w is None:
                return None
            return {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                    for k, v in w.items()}
        d = asdict(self)
        d["edge_witness"] = clean(self.edge_witness)
        d["hop_witness"] = clean(self.hop_witness)
        d["both_witness"] = clean(self.both_witness)
        return d


def _probe_state():
    """K4 with pairwise-distinct X and a fully collapsed layer-1 feature matrix.

    Edges (0,1) and (2,3) are the probed pairs: H^(1) rows are all equal, so
    H^(1)_0 = H^(1)_2 and H^(1)_1 = H^(1)_3.
    """
    edges = [(a, b) for a in range(4) for b in range(a + 1, 4)]
    graph = build_graph(edges, 4)
    x = np.eye(4)
    h1 = np.full((4, 4), 0.5)
    return graph, x, h1


def _entry_index(support: Support, i: int, j: int) -> int:
    pairs = support.entry_pairs()
    hit = np.nonzero((pairs[:, 0] == i) & (pairs[:, 1] == j))[0]
    if hit.size != 1:
        raise ValueError(f"({i},{j}) not on the support")
    return int(hit[0])


def _first_diff_coord(u: np.ndarray, v: np.ndarray) -> int | None:
    d = np.abs(u - v)
    t = int(np.argmax(d))
    return t if d[t] > 0 else None


def probe_resistance(kind: str, n_samples: int = 100, seed: int = 0,
                     c_param: float = 1.0, lam: float = 0.5,
                     eps_fagcn: float = 0.3) -> ProbeResult:
    """Classify an attention function as V2OS / WR2OS / SR2OS by sampling.

    Parameters are drawn uniformly within [-c_param, c_param]; the first
    sample slot is replaced by the constructive choice (distinct initial
    features routed through the layer aggregate) for the resistant models.
    Equality is bitwise: identical inputs must produce identical scores.
    """
    if kind not in m.KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    graph, x, h1 = _probe_state()
    rng = np.random.default_rng(seed)
    d = x.shape[1]
    h0 = x  # identity-width input transform, entries within the clamp

    sup_loops = make_support(graph, self_loops=True)
    sup_plain = make_support(graph, self_loops=False)
    deg = graph.degree.astype(np.float64)

    edge_equal = hop_equal = 0
    edge_witness = hop_witness = both_witness = None
    note = ""

    def u(shape):
        return rng.uniform(-c_param, c_param, size=shape)

    for s in range(n_samples):
        theta: dict[str, np.ndarray | float] = {}
        if kind == "gatv2":
            theta = {"w_2": u((d, d)), "w_edge_2": u((2 * d, 1))}
            g = h1 @ theta["w_2"]
            abar, _ = m.gatv2_edge_attention(ad.constant(g), ad.constant(theta["w_edge_2"]),
                                             sup_loops)
            a01 = abar.data[_entry_index(sup_loops, 0, 1), 0]
            a23 = abar.data[_entry_index(sup_loops, 2, 3), 0]
            g01, g23 = 1.0, 1.0  # hop attention is identically 1
        elif kind == "gprgnn":
            theta = {"c_1": float(u((1, 1))[0, 0])}
            a01 = a23 = 1.0  # pre-normalized edge attention is constant
            g01 = g23 = theta["c_1"]
        elif kind == "dagnn":
            theta = {"w_hop": u((d, 1))}
            a01 = a23 = 1.0
            gam = ad._sigmoid_np(h1 @ theta["w_hop"])
            g01, g23 = gam[0, 0], gam[2, 0]
        elif kind == "fagcn":
            theta = {"w_edge_1": u((2 * d, 1)), "w_edge_2": u((2 * d, 1))}
            z0 = eps_fagcn * h0
            if s == 0:
                theta["w_edge_1"] = np.zeros((2 * d, 1))
            _, alpha1 = m.fagcn_edge_attention(ad.constant(z0),
                                               ad.constant(theta["w_edge_1"]),
                                               graph, sup_plain)
            z1 = eps_fagcn * h0 + _csr(sup_plain, alpha1.data[:, 0]) @ z0
            if s == 0:
                t = _first_diff_coord(np.concatenate([z1[0], z1[1]]),
                                      np.concatenate([z1[2], z1[3]]))
                if t is not None:
                    w = np.zeros((2 * d, 1))
                    w[t, 0] = min(1.0, c_param)
                    theta["w_edge_2"] = w
            abar2, _ = m.fagcn_edge_attention(ad.constant(z1),
                                              ad.constant(theta["w_edge_2"]),
                                              graph, sup_plain)
            a01 = abar2.data[_entry_index(sup_plain, 0, 1), 0]
            a23 = abar2.data[_entry_index(sup_plain, 2, 3), 0]
            g01 = g23 = eps_fagcn  # fixed hyperparameter: no hop witness can exist
        elif kind == "aero":
            theta = {"w_hop_0": u((d, 1)), "b_hop_0": float(u((1, 1))[0, 0]),
                     "w_edge_1": u((2 * d, 1)), "w_hop_1": u((2 * d, 1)),
                     "b_hop_1": float(u((1, 1))[0, 0]), "w_edge_2": u((2 * d, 1))}
            if s == 0:
                theta["w_hop_0"] = np.zeros((d, 1))
                theta["b_hop_0"] = 1.0
            gamma0 = m.aero_hop_attention(ad.constant(h0), None,
                                          ad.constant(theta["w_hop_0"]),
                                          ad.constant([[theta["b_hop_0"]]]), 0)
            z0 = gamma0.data * h0
            zt0 = m.rescale_coeff(1, lam) * z0
            if s == 0:
                t = _first_diff_coord(np.concatenate([h1[0], zt0[0]]),
                                      np.concatenate([h1[2], zt0[2]]))
                if t is not None:
                    w = np.zeros((2 * d, 1))
                    w[t, 0] = min(1.0, c_param)
                    theta["w_hop_1"] = w
                    theta["b_hop_1"] = 1.0
            gamma1 = m.aero_hop_attention(ad.constant(h1), ad.constant(zt0),
                                          ad.constant(theta["w_hop_1"]),
                                          ad.constant([[theta["b_hop_1"]]]), 1)
            g01, g23 = gamma1.data[0, 0], gamma1.data[2, 0]
            z1 = z0 + gamma1.data * h1
            zt1 = m.rescale_coeff(2, lam) * z1
            if s == 0:
                t = _first_diff_coord(np.concatenate([zt1[0], zt1[1]]),
                                      np.concatenate([zt1[2], zt1[3]]))
                if t is not None:
                    w = np.zeros((2 * d, 1))
                    w[t, 0] = min(1.0, c_param)
                    theta["w_edge_2"] = w
            abar2, _ = m.aero_edge_attention(ad.constant(zt1),
                                             ad.constant(theta["w_edge_2"]), sup_loops)
            a01 = abar2.data[_entry_index(sup_loops, 0, 1), 0]
            a23 = abar2.data[_entry_index(sup_loops, 2, 3), 0]

        e_eq = a01 == a23
        h_eq = g01 == g23
        edge_equal += e_eq
        hop_equal += h_eq
        if not e_eq and edge_witness is None:
            edge_witness = dict(theta)
        if not h_eq and hop_witness is None:
            hop_witness = dict(theta)
        if not e_eq and not h_eq and both_witness is None:
            both_witness = dict(theta)

    if kind in ("gatv2", "gprgnn"):
        note = "edge scores depend only on current-layer features; hop attention is constant per layer"
    elif kind == "dagnn":
        note = "hop attention depends only on current-layer features"
    elif kind == "fagcn":
        note = "hop attention is a fixed hyperparameter: no hop witness exists by construction"

    if edge_witness is None and hop_witness is None:
        cls = "V2OS"
    elif both_witness is not None:
        cls = "SR2OS"
    else:
        cls = "WR2OS"
    return ProbeResult(kind=kind, classification=cls, n_samples=n_samples, seed=seed,
                       edge_equal_count=int(edge_equal), hop_equal_count=int(hop_equal),
                       edge_witness=edge_witness, hop_witness=hop_witness,
                       both_witness=both_witness, note=note)


# ---------------------------------------------------------------------------
# constructive un-smoothing

@dataclass
class UnsmoothingResult:
    branch: str                 # "identity" (S of the product already > 0) or "midpoint"
    w_hop: np.ndarray
    b_hop: float
    gamma: np.ndarray
    s_product: float
    s_result: float


def _elu_np(a: np.ndarray) -> np.ndarray:
    return np.where(a > 0, a, np.exp(np.minimum(a, 0.0)) - 1.0)


def unsmoothing_construct(trace: PropagationTrace, k: int) -> UnsmoothingResult:
    """Choose layer-(k+1) hop parameters making S(T^(k+1)) > 0.

    If the plain edge-matrix product is already non-smooth, the zero-vector /
    unit-bias choice leaves it untouched; otherwise a one-hot weight with a
    midpoint bias gives two nodes hop coefficients of opposite signs.
    """
    if trace.kind != "aero":
        raise ValueError("the construction targets aero traces")
    if k + 1 > trace.k_max:
        raise ValueError(f"trace has no layer {k + 1}")
    prod = np.asarray(_csr(trace.support, trace.attn[1].alpha).todense())
    for ell in range(2, k + 2):
        prod = _csr(trace.support, trace.attn[ell].alpha) @ prod
    s_prod = smoothness(prod)
    n = trace.n
    feats = _elu_np(np.hstack([trace.h[k + 1], trace.z_tilde[k + 1]]))
    if s_prod > 0.0:
        w = np.zeros((feats.shape[1], 1))
        b = 1.0
        gamma = np.ones(n)
        return UnsmoothingResult("identity", w, b, gamma, s_prod, s_prod)
    pair = None
    for i in range(n):
        for j in range(i + 1, n):
            t = _first_diff_coord(feats[i], feats[j])
            if t is not None:
                pair = (i, j, t)
                break
        if pair is not None:
            break
    if pair is None:
        raise ValueError("all score rows identical: no differing coordinate to split on")
    i, j, t = pair
    w = np.zeros((feats.shape[1], 1))
    w[t, 0] = 1.0
    b = -(feats[i, t] + feats[j, t]) / 2.0
    gamma = feats[:, t] + b
    s_new = smoothness(gamma[:, None] * prod)
    return UnsmoothingResult("midpoint", w, b, gamma, s_prod, s_new)


# ---------------------------------------------------------------------------
# per-layer attention statistics

@dataclass
class LayerStats:
    layer: int
    hop: int
    alpha_mean: float
    alpha_sd: float
    frob_diff: float            # nan at the first layer
    gamma_mean: float
    gamma_sd: float


def attn_stats(trace: PropagationTrace) -> list:
    """Mean/SD of edge values, Frobenius layer-to-layer differences, and
    mean/SD of hop coefficients, per layer (hop labels invert for fagcn)."""
    out = []
    for k in range(1, trace.k_max + 1):
        a = trace.attn[k].alpha
        g = trace.attn[k].gamma
        if k >= 2:
            frob = float(np.sqrt(((a - trace.attn[k - 1].alpha) ** 2).sum()))
        else:
            frob = math.nan
        out.append(LayerStats(layer=k, hop=trace.hop_label(k),
                              alpha_mean=float(a.mean()), alpha_sd=float(a.std()),
                              frob_diff=frob,
                              gamma_mean=float(g.mean()), gamma_sd=float(g.std())))
    return out


# ---------------------------------------------------------------------------
# CSV / JSON emission

def write_smoothness_csv(path, series: SmoothnessSeries) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["k", "S"])
        for k, v in enumerate(series.values, start=1):
            w.writerow([k, repr(v)])


def write_alpha_stats_csv(path, stats: list) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["k", "mean", "sd", "frob_diff"])
        for r in stats:
            w.writerow([r.hop, repr(r.alpha_mean), repr(r.alpha_sd),
                        "" if math.isnan(r.frob_diff) else repr(r.frob_diff)])


def write_gamma_stats_csv(path, stats: list) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["k", "mean", "sd"])
        for r in stats:
            w.writerow([r.hop, repr(r.gamma_mean), repr(r.gamma_sd)])


def write_probe_report(path, results: list) -> None:
    with open(path, "w") as f:
        json.dump({r.kind: r.to_json() for r in results}, f, indent=2, sort_keys=True)
        f.write("\n")
