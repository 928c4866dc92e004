"""Full forward passes for the five models, producing logits and a
``PropagationTrace`` holding every per-layer artifact the diagnostics need.

All forwards are pure functions of (dataset, params, config, mode, rng); the
tape is rebuilt every call.  Accumulation order is fixed layer-ascending so
repeated runs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from . import models as m
from .autodiff import Tensor
from .graphs import Dataset, Support, make_support

MODES = ("train", "eval")


@dataclass
class PropagationTrace:
    """Per-layer artifacts of one forward pass.

    ``h[k]`` are hop features H^(k) for k = 0..k_max, ``z[k]`` the layer
    aggregates where the model has them, ``attn[k]`` pairs the layer's edge
    values with its hop coefficients (``attn[0].alpha`` is None).  For aero,
    ``z_tilde[k]`` is the rescaled aggregate consumed by layer k.
    """

    kind: str
    k_max: int
    support: Support
    h: list
    z: list | None
    attn: list
    logits: np.ndarray
    z_tilde: list | None = None
    hop_index_inverted: bool = False

    @property
    def n(self) -> int:
        return self.support.n

    def hop_label(self, k: int) -> int:
        """Reporting-time hop index; inverted for residual-style recursions."""
        return self.k_max - k + 1 if self.hop_index_inverted and k >= 1 else k

    def alpha_dense(self, k: int) -> np.ndarray:
        a = self.attn[k].alpha
        if a is None:
            raise ValueError(f"layer {k} has no edge attention")
        s = self.support
        return np.asarray(sp.csr_array((a, s.col, s.row_ptr), shape=(s.n, s.n)).todense())


def _check_mode(mode: str) -> bool:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return mode == "train"


def _features_op(dataset: Dataset):
    x = dataset.features
    # citation-style features are mostly zeros; sparse X makes the input
    # transform the cheap part of the pass
    if x.size and np.count_nonzero(x) < 0.4 * x.size:
        return sp.csr_array(x)
    return x


def _uniform_alpha(support: Support) -> Tensor:
    deg = np.diff(support.row_ptr).astype(np.float64)
    return ad.constant((1.0 / deg[support.src]).reshape(-1, 1))


def forward_gatv2(dataset: Dataset, params: m.ModelParams, config: m.ModelConfig,
                  mode: str = "eval", linear: bool = True,
                  rng: np.random.Generator | None = None,
                  leaves: dict[str, Tensor] | None = None,
                  record_trace: bool = True):
    training = _check_mode(mode)
    if leaves is None:
        leaves = params.tensors()
    support = make_support(dataset.graph, self_loops=True)
    xop = _features_op(dataset)

    h = ad.add_bias(ad.sparse_matmul(xop, leaves["w_in"]), leaves["b_in"])
    if config.h0_dropout:
        h = ad.dropout(h, config.dropout, training, rng)
    ones = np.ones(dataset.n)
    hs, attn = [h.data.copy()], [m.AttentionState(alpha=None, gamma=ones)]
    for k in range(1, config.k_max + 1):
        g = ad.matmul(h, leaves[f"w_{k}"])
        if config.fixed_uniform_attention:
            alpha = _uniform_alpha(support)
        else:
            _, alpha = m.gatv2_edge_attention(g, leaves[f"w_edge_{k}"], support,
                                              config.gatv2_score_act,
                                              with_prenorm=False)
        alpha = ad.dropout(alpha, config.dropout, training, rng)
        h = ad.spmm(alpha, g, support)
        if not linear:
            h = ad.elu(h)
        if record_trace:
            hs.append(h.data.copy())
            attn.append(m.AttentionState(alpha=alpha.data[:, 0].copy(), gamma=ones))
    logits = ad.add_bias(ad.matmul(h, leaves["w_out"]), leaves["b_out"])
    trace = None
    if record_trace:
        trace = PropagationTrace(kind="gatv2", k_max=config.k_max, support=support,
                                 h=hs, z=None, attn=attn, logits=logits.data.copy())
    return logits, trace


def forward_fagcn(dataset: Dataset, params: m.ModelParams, config: m.ModelConfig,
                  mode: str = "eval", rng: np.random.Generator | None = None,
                  leaves: dict[str, Tensor] | None = None,
                  record_trace: bool = True):
    training = _check_mode(mode)
    if (dataset.graph.degree == 0).any():
        raise ValueError("fagcn requires a graph without isolated nodes")
    if leaves is None:
        leaves = params.tensors()
    support = make_support(dataset.graph, self_loops=False)
    xop = _features_op(dataset)
    c_gamma = config.eps_fagcn

    h0 = ad.elu(ad.add_bias(ad.sparse_matmul(xop, leaves["w_in"]), leaves["b_in"]))
    if config.h0_dropout:
        h0 = ad.dropout(h0, config.dropout, training, rng)
    # Z^(0) = c_gamma H^(0): every term of the unrolled aggregate carries Gamma
    z = ad.scale(h0, c_gamma)
    gamma_row = np.full(dataset.n, c_gamma)
    hs, zs = [h0.data.copy()], [z.data.copy()]
    attn = [m.AttentionState(alpha=None, gamma=gamma_row)]
    for k in range(1, config.k_max + 1):
        _, alpha = m.fagcn_edge_attention(z, leaves[f"w_edge_{k}"], dataset.graph, support)
        alpha = ad.dropout(alpha, config.dropout, training, rng)
        hk = ad.spmm(alpha, z, support)
        z = ad.add(ad.scale(h0, c_gamma), hk)
        if record_trace:
            hs.append(hk.data.copy())
            zs.append(z.data.copy())
            attn.append(m.AttentionState(alpha=alpha.data[:, 0].copy(), gamma=gamma_row))
    logits = ad.add_bias(ad.matmul(z, leaves["w_out"]), leaves["b_out"])
    trace = None
    if record_trace:
        trace = PropagationTrace(kind="fagcn", k_max=config.k_max, support=support,
                                 h=hs, z=zs, attn=attn, logits=logits.data.copy(),
                                 hop_index_inverted=True)
    return logits, trace


def _mlp_to_classes(xop, leaves, config, training, rng):
    h = ad.add_bias(ad.sparse_matmul(xop, leaves["mlp_w1"]), leaves["mlp_b1"])
    h = ad.elu(h)
    h = ad.dropout(h, config.dropout, training, rng)
    return ad.add_bias(ad.matmul(h, leaves["mlp_w2"]), leaves["mlp_b2"])


def forward_gpr_dagnn(dataset: Dataset, params: m.ModelParams, config: m.ModelConfig,
                      mode: str = "eval", rng: np.random.Generator | None = None,
                      leaves: dict[str, Tensor] | None = None,
                      record_trace: bool = True):
    training = _check_mode(mode)
    if leaves is None:
        leaves = params.tensors()
    norm = m.fixed_attention(dataset.graph)
    support = norm.support
    values = ad.constant(norm.values.reshape(-1, 1))
    xop = _features_op(dataset)

    h = _mlp_to_classes(xop, leaves, config, training, rng)

    def hop_gamma(hk: Tensor, k: int) -> Tensor:
        if config.kind == "gprgnn":
            return ad.take_row(leaves["hop_coeffs"], k)
        return m.dagnn_hop_attention(hk, leaves["w_hop"])

    gamma = hop_gamma(h, 0)
    z = ad.row_scale(h, gamma)
    shared_attn = norm.values  # one object: A^(k) is the same matrix at every k
    hs, zs = [h.data.copy()], [z.data.copy()]
    attn = [m.AttentionState(alpha=None, gamma=np.broadcast_to(gamma.data[:, 0],
                                                               (dataset.n,)).copy())]
    for k in range(1, config.k_max + 1):
        h = ad.spmm(values, h, support)
        gamma = hop_gamma(h, k)
        z = ad.add(z, ad.row_scale(h, gamma))
        if record_trace:
            hs.append(h.data.copy())
            zs.append(z.data.copy())
            g = np.broadcast_to(gamma.data[:, 0], (dataset.n,)).copy()
            attn.append(m.AttentionState(alpha=shared_attn, gamma=g))
    logits = z
    trace = None
    if record_trace:
        trace = PropagationTrace(kind=config.kind, k_max=config.k_max, support=support,
                                 h=hs, z=zs, attn=attn, logits=logits.data.copy())
    return logits, trace


def forward_aero(dataset: Dataset, params: m.ModelParams, config: m.ModelConfig,
                 mode: str = "eval", rng: np.random.Generator | None = None,
                 leaves: dict[str, Tensor] | None = None,
                 record_trace: bool = True):
    training = _check_mode(mode)
    if leaves is None:
        leaves = params.tensors()
    support = make_support(dataset.graph, self_loops=config.aero_self_loops)
    xop = _features_op(dataset)

    h = ad.add_bias(ad.sparse_matmul(xop, leaves["mlp_w1"]), leaves["mlp_b1"])
    if config.mlp_depth == 2:
        h = ad.elu(h)
        h = ad.dropout(h, config.dropout, training, rng)
        h = ad.add_bias(ad.matmul(h, leaves["mlp_w2"]), leaves["mlp_b2"])
    if config.h0_dropout:
        h = ad.dropout(h, config.dropout, training, rng)

    gamma = m.aero_hop_attention(h, None, leaves["w_hop_0"], leaves["b_hop_0"], 0)
    z = ad.row_scale(h, gamma)
    hs, zs, zts = [h.data.copy()], [z.data.copy()], [None]
    attn = [m.AttentionState(alpha=None, gamma=gamma.data[:, 0].copy())]
    for k in range(1, config.k_max + 1):
        zt = m.rescale_Z(z, k, config.lam)
        ezt = ad.elu(zt)  # shared by the edge scores and the hop attention
        _, alpha = m.aero_edge_attention(zt, leaves[f"w_edge_{k}"], support,
                                         activated=ezt)
        alpha = ad.dropout(alpha, config.dropout, training, rng)
        h = ad.spmm(alpha, h, support)
        gamma = m.aero_hop_attention(h, zt, leaves[f"w_hop_{k}"], leaves[f"b_hop_{k}"],
                                     k, z_activated=ezt)
        z = ad.add(z, ad.row_scale(h, gamma))
        if record_trace:
            hs.append(h.data.copy())
            zs.append(z.data.copy())
            zts.append(zt.data.copy())
            attn.append(m.AttentionState(alpha=alpha.data[:, 0].copy(),
                                         gamma=gamma.data[:, 0].copy()))
    out = ad.elu(z)
    if config.final_dropout:
        out = ad.dropout(out, config.dropout, training, rng)
    logits = ad.add_bias(ad.matmul(out, leaves["w_out"]), leaves["b_out"])
    trace = None
    if record_trace:
        trace = PropagationTrace(kind="aero", k_max=config.k_max, support=support,
                                 h=hs, z=zs, attn=attn, logits=logits.data.copy(),
                                 z_tilde=zts)
    return logits, trace


def forward(dataset: Dataset, params: m.ModelParams, config: m.ModelConfig,
            mode: str = "eval", rng: np.random.Generator | None = None,
            leaves: dict[str, Tensor] | None = None, record_trace: bool = True,
            linear_gatv2: bool = True):
    """Dispatch on config.kind; mode controls dropout."""
    kw = dict(mode=mode, rng=rng, leaves=leaves, record_trace=record_trace)
    if config.kind == "gatv2":
        return forward_gatv2(dataset, params, config, linear=linear_gatv2, **kw)
    if config.kind == "fagcn":
        return forward_fagcn(dataset, params, config, **kw)
    if config.kind in ("gprgnn", "dagnn"):
        return forward_gpr_dagnn(dataset, params, config, **kw)
    if config.kind == "aero":
        return forward_aero(dataset, params, config, **kw)
    raise ValueError(f"unknown model kind {config.kind!r}")
