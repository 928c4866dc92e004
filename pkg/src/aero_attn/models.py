"""Per-layer attention functions of the five propagation schemes, parameter
initialization and exact additional-parameter counting.

Model kinds: ``gatv2`` (row-softmax edge attention), ``fagcn`` (signed tanh
edge attention with degree normalization), ``gprgnn`` / ``dagnn`` (fixed
normalized adjacency with learned hop attention), ``aero`` (softplus edge
attention with symmetric normalization plus node-adaptive hop attention).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphs import Graph, NormalizedAdjacency, Support, make_support, sym_norm_adj

KINDS = ("gatv2", "fagcn", "gprgnn", "dagnn", "aero")

RESCALE_EPS = 1e-6


@dataclass
class ModelConfig:
    kind: str
    k_max: int
    d_h: int = 64
    dropout: float = 0.6
    lam: float = 0.5            # aero rescaling hyperparameter (lambda)
    eps_fagcn: float = 0.3      # fagcn residual weight c_gamma
    alpha_ppr: float = 0.1      # gprgnn PageRank return probability
    mlp_depth: int = 1          # aero input MLP depth (1 sparse-labeled, 2 dense-labeled)
    param_clamp: float = 1.0    # bound used by the resistance probes
    aero_self_loops: bool = True
    gatv2_score_act: str = "leaky_relu"   # or "elu"
    final_dropout: bool = False  # aero: extra dropout before the output layer
    h0_dropout: bool = False
    fixed_uniform_attention: bool = False  # gatv2 preset knob (GCN-like baseline)
    frozen_hop: bool = False               # gprgnn preset knob (APPNP-like baseline)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.k_max < 0 or (self.kind != "aero" and self.k_max < 1):
            raise ValueError(f"k_max={self.k_max} invalid for kind {self.kind!r}")
        if self.d_h < 1:
            raise ValueError("d_h must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.lam <= 0.0:
            raise ValueError("lambda must be > 0")
        if self.mlp_depth not in (1, 2):
            raise ValueError("mlp_depth must be 1 or 2")
        if self.gatv2_score_act not in ("leaky_relu", "elu"):
            raise ValueError("gatv2_score_act must be 'leaky_relu' or 'elu'")


def preset_gcn_like(k_max: int, **kw) -> ModelConfig:
    """GATv2 with fixed uniform attention: a GCN-style baseline curve."""
    return ModelConfig(kind="gatv2", k_max=k_max, fixed_uniform_attention=True, **kw)


def preset_appnp_like(k_max: int, alpha_ppr: float = 0.1, **kw) -> ModelConfig:
    """GPRGNN with hop coefficients frozen at their PageRank initialization."""
    return ModelConfig(kind="gprgnn", k_max=k_max, alpha_ppr=alpha_ppr, frozen_hop=True, **kw)


@dataclass
class Parameter:
    name: str
    data: np.ndarray
    group: str            # "ft" (feature transform) or "prop" (attention/propagation)
    decay: bool = True    # False: excluded from optimizer weight decay
    frozen: bool = False  # True: never updated

    def __post_init__(self):
        if self.group not in ("ft", "prop"):
            raise ValueError(f"unknown parameter group {self.group!r}")
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)


@dataclass
class ModelParams:
    kind: str
    params: dict[str, Parameter]
    d_x: int
    d_h: int
    d_c: int
    k_max: int

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def tensors(self) -> dict[str, Tensor]:
        """Fresh leaf tensors sharing parameter storage (one tape per forward)."""
        return {
            name: Tensor(p.data, needs_grad=not p.frozen)
            for name, p in self.params.items()
        }

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, arr in snap.items():
            np.copyto(self.params[name].data, arr)

    def total_size(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def prop_size(self) -> int:
        return sum(p.data.size for p in self.params.values() if p.group == "prop")


def _glorot(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    a = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-a, a, size=shape)


def init_params(config: ModelConfig, d_x: int, d_c: int, seed) -> ModelParams:
    """Glorot-uniform weights, zero biases; deterministic per seed.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k, d_h = config.k_max, config.d_h
    p: dict[str, Parameter] = {}

    def ft(name, data, **kw):
        p[name] = Parameter(name, data, "ft", **kw)

    def prop(name, data, **kw):
        p[name] = Parameter(name, data, "prop", **kw)

    if config.kind == "gatv2":
        ft("w_in", _glorot(rng, (d_x, d_h)))
        ft("b_in", np.zeros((1, d_h)))
        for i in range(1, k + 1):
            prop(f"w_{i}", _glorot(rng, (d_h, d_h)))
            prop(f"w_edge_{i}", _glorot(rng, (2 * d_h, 1)))
        ft("w_out", _glorot(rng, (d_h, d_c)))
        ft("b_out", np.zeros((1, d_c)))
    elif config.kind == "fagcn":
        ft("w_in", _glorot(rng, (d_x, d_h)))
        ft("b_in", np.zeros((1, d_h)))
        for i in range(1, k + 1):
            prop(f"w_edge_{i}", _glorot(rng, (2 * d_h, 1)))
        ft("w_out", _glorot(rng, (d_h, d_c)))
        ft("b_out", np.zeros((1, d_c)))
    elif config.kind in ("gprgnn", "dagnn"):
        ft("mlp_w1", _glorot(rng, (d_x, d_h)))
        ft("mlp_b1", np.zeros((1, d_h)))
        ft("mlp_w2", _glorot(rng, (d_h, d_c)))
        ft("mlp_b2", np.zeros((1, d_c)))
        if config.kind == "gprgnn":
            a = config.alpha_ppr
            coeffs = a * (1.0 - a) ** np.arange(k + 1, dtype=np.float64)
            coeffs[-1] = (1.0 - a) ** k
            prop("hop_coeffs", coeffs.reshape(-1, 1), decay=False,
                 frozen=config.frozen_hop)
        else:
            prop("w_hop", _glorot(rng, (d_c, 1)))
    elif config.kind == "aero":
        ft("mlp_w1", _glorot(rng, (d_x, d_h)))
        ft("mlp_b1", np.zeros((1, d_h)))
        if config.mlp_depth == 2:
            ft("mlp_w2", _glorot(rng, (d_h, d_h)))
            ft("mlp_b2", np.zeros((1, d_h)))
        # layer-0 hop attention consumes only H^(0); grouped with the input
        # transform so prop-tagged sizes match the additional-parameter count
        ft("w_hop_0", _glorot(rng, (d_h, 1)))
        ft("b_hop_0", np.ones((1, 1)))
        for i in range(1, k + 1):
            prop(f"w_edge_{i}", _glorot(rng, (2 * d_h, 1)))
            prop(f"w_hop_{i}", _glorot(rng, (2 * d_h, 1)))
            prop(f"b_hop_{i}", np.ones((1, 1)))
        ft("w_out", _glorot(rng, (d_h, d_c)))
        ft("b_out", np.zeros((1, d_c)))
    else:  # pragma: no cover - guarded by ModelConfig
        raise ValueError(config.kind)
    return ModelParams(kind=config.kind, params=p, d_x=d_x, d_h=config.d_h,
                       d_c=d_c, k_max=config.k_max)


def sample_params_uniform(params: ModelParams, rng: np.random.Generator,
                          bound: float = 1.0, stabilize_gatv2: bool = True) -> None:
    """Overwrite all parameters with U(-bound, bound) draws, in place.

    For gatv2 the per-layer transforms are rescaled below unit spectral norm
    (entries stay within the bound) so intermediate features remain bounded,
    matching the bounded-parameter/bounded-feature assumption of the probes.
    """
    for p in params.params.values():
        p.data[...] = rng.uniform(-bound, bound, size=p.data.shape)
    if params.kind == "gatv2" and stabilize_gatv2:
        for name, p in params.params.items():
            if name.startswith("w_") and p.data.shape == (params.d_h, params.d_h):
                s = np.linalg.norm(p.data, 2)
                if s > 0.95:
                    p.data *= 0.95 / s


# ---------------------------------------------------------------------------
# attention states and functions

@dataclass
class AttentionState:
    """Per-layer attention snapshot: edge values on the support plus the
    per-node hop coefficients."""

    alpha: np.ndarray | None   # (nnz,) or None for the hop-0 entry
    gamma: np.ndarray          # (n,)


def rescale_coeff(k: int, lam: float) -> float:
    """log(lambda/k + 1 + eps); positive and decreasing in the layer index."""
    if k < 1:
        raise ValueError("rescaling is defined for layer index k >= 1")
    if lam <= 0:
        raise ValueError("lambda must be > 0")
    return math.log(lam / k + 1.0 + RESCALE_EPS)


def rescale_Z(z: Tensor, k: int, lam: float) -> Tensor:
    return ad.scale(z, rescale_coeff(k, lam))


def _score_halves(feats: Tensor, w_edge: Tensor) -> tuple[Tensor, Tensor]:
    """Per-node source/destination score contributions of a (2d, 1) weight.

    The concatenation score w_edge . (f_i || f_j) separates into
    (w_src . f_i) + (w_dst . f_j); computing the halves per node instead of
    per support entry keeps the edge step O(n d + nnz).
    """
    d = feats.shape[1]
    u = ad.matmul(feats, ad.row_slice(w_edge, 0, d))
    v = ad.matmul(feats, ad.row_slice(w_edge, d, 2 * d))
    return u, v


def gatv2_edge_attention(h_prev: Tensor, w_edge: Tensor, support: Support,
                         score_act: str = "leaky_relu",
                         with_prenorm: bool = True) -> tuple[Tensor | None, Tensor]:
    """Returns (pre-normalized, row-softmax-normalized) edge attention.

    The softmax over each source row N(i) u {i} equals exp(score)/sum exp.
    The source half of the score is constant within a row, so the normalized
    attention is computed from the destination half alone (softmax shift
    invariance makes this exact); the pre-normalized scores keep both halves.
    """
    sg = ad.leaky_relu(h_prev, 0.2) if score_act == "leaky_relu" else ad.elu(h_prev)
    u, v = _score_halves(sg, w_edge)
    v_e = ad.gather(v, support.col)
    alpha = ad.segment_softmax(v_e, support)
    abar = None
    if with_prenorm:
        abar = ad.exp(ad.add(ad.gather(u, support.src), v_e))
    return abar, alpha


def fagcn_edge_attention(z_prev: Tensor, w_edge: Tensor, graph: Graph,
                         support: Support | None = None) -> tuple[Tensor, Tensor]:
    """tanh scores on the loop-free support, scaled by 1/sqrt(d_i d_j)."""
    if (graph.degree == 0).any():
        raise ValueError("fagcn requires a graph without isolated nodes")
    if support is None:
        support = make_support(graph, self_loops=False)
    u, v = _score_halves(z_prev, w_edge)
    abar = ad.tanh(ad.add(ad.gather(u, support.src), ad.gather(v, support.col)))
    deg = graph.degree.astype(np.float64)
    inv = (1.0 / np.sqrt(deg[support.src] * deg[support.col])).reshape(-1, 1)
    alpha = ad.mul_const(abar, inv)
    return abar, alpha


def fixed_attention(graph: Graph) -> NormalizedAdjacency:
    """The k-independent edge attention of gprgnn/dagnn: the normalized adjacency."""
    return sym_norm_adj(graph)


def dagnn_hop_attention(h_k: Tensor, w_hop: Tensor) -> Tensor:
    """sigmoid(H^(k) w_hop); one shared w_hop across layers, values in (0, 1)."""
    return ad.sigmoid(ad.matmul(h_k, w_hop))


def aero_edge_attention(z_tilde_prev: Tensor, w_edge: Tensor, support: Support,
                        activated: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """softplus scores with symmetric normalization by source/destination mass.

    ``activated`` may pass a precomputed ELU of the input (the forward shares
    it with the hop attention).
    """
    u, v = _score_halves(activated if activated is not None else ad.elu(z_tilde_prev),
                         w_edge)
    abar = ad.softplus(ad.add(ad.gather(u, support.src), ad.gather(v, support.col)))
    rowsum = ad.segment_rowsum(abar, support)
    denom = ad.sqrt(ad.mul(ad.gather(rowsum, support.src),
                           ad.gather(rowsum, support.col)))
    alpha = ad.div(abar, denom)
    return abar, alpha


def aero_hop_attention(h_k: Tensor, z_tilde_prev: Tensor | None, w_hop: Tensor,
                       b_hop: Tensor, k: int,
                       z_activated: Tensor | None = None) -> Tensor:
    """Unbounded per-node hop attention; negative values are by design.

    k = 0 scores ELU(H^(0)); k >= 1 scores ELU(H^(k) || Z~^(k-1)), split into
    per-half dot products (ELU acts elementwise on the concatenation).
    """
    if k == 0:
        return ad.add_bias(ad.matmul(ad.elu(h_k), w_hop), b_hop)
    if z_tilde_prev is None and z_activated is None:
        raise ValueError("hop attention at k >= 1 needs the rescaled aggregate")
    d = h_k.shape[1]
    ez = z_activated if z_activated is not None else ad.elu(z_tilde_prev)
    score = ad.add(ad.matmul(ad.elu(h_k), ad.row_slice(w_hop, 0, d)),
                   ad.matmul(ez, ad.row_slice(w_hop, d, 2 * d)))
    return ad.add_bias(score, b_hop)


# ---------------------------------------------------------------------------
# exact additional-parameter counts (beyond input/output transforms)

COUNT_KINDS = ("gcn", "gcn2", "a_dgn", "gat", "gatv2", "gatv2_r", "gt", "dmp",
               "fagcn", "appnp", "dagnn", "gprgnn", "aero")


def additional_param_shapes(kind: str, k_max: int, d_h: int, d_c: int) -> list[tuple[int, int]]:
    """Shapes of every allocated per-layer parameter, for enumeration cross-checks."""
    if kind in ("gcn", "gcn2"):
        return [(d_h, d_h)] * k_max
    if kind == "a_dgn":
        return [(d_h, d_h)] * 2
    if kind in ("gat", "gatv2", "gatv2_r"):
        return [(d_h, d_h)] * k_max + [(2 * d_h, 1)] * k_max
    if kind == "gt":
        return [(d_h, d_h)] * (4 * k_max)
    if kind == "dmp":
        return [(d_h, d_h)] * (2 * k_max)
    if kind == "fagcn":
        return [(2 * d_h, 1)] * k_max
    if kind == "appnp":
        return []
    if kind == "dagnn":
        return [(d_c, 1)]
    if kind == "gprgnn":
        return [(k_max + 1, 1)]
    if kind == "aero":
        return [(2 * d_h, 1)] * k_max + [(2 * d_h, 1)] * k_max + [(1, 1)] * k_max
    raise ValueError(f"unknown kind {kind!r}")


def count_additional_params(kind: str, k_max: int, d_h: int, d_c: int) -> tuple[int, str]:
    """Exact count of propagation/attention parameters plus its Theta class."""
    if k_max < 1 or d_h < 1 or d_c < 1:
        raise ValueError("arguments must be positive")
    table = {
        "gcn": (k_max * d_h * d_h, "Theta(k_max * d_h^2)"),
        "gcn2": (k_max * d_h * d_h, "Theta(k_max * d_h^2)"),
        "a_dgn": (2 * d_h * d_h, "Theta(d_h^2)"),
        "gat": (k_max * (d_h * d_h + 2 * d_h), "Theta(k_max * d_h^2)"),
        "gatv2": (k_max * (d_h * d_h + 2 * d_h), "Theta(k_max * d_h^2)"),
        "gatv2_r": (k_max * (d_h * d_h + 2 * d_h), "Theta(k_max * d_h^2)"),
        "gt": (4 * k_max * d_h * d_h, "Theta(k_max * d_h^2)"),
        "dmp": (2 * k_max * d_h * d_h, "Theta(k_max * d_h^2)"),
        "fagcn": (2 * k_max * d_h, "Theta(k_max * d_h)"),
        "appnp": (0, "Theta(1)"),
        "dagnn": (d_c, "Theta(d_c)"),
        "gprgnn": (k_max + 1, "Theta(k_max)"),
        "aero": (k_max * (4 * d_h + 1), "Theta(k_max * d_h)"),
    }
    if kind not in table:
        raise ValueError(f"unknown kind {kind!r}")
    return table[kind]
