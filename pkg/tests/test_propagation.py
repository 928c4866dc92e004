import numpy as np
import pytest

from aero_attn import autodiff as ad
from aero_attn import models as m
from aero_attn import oracles
from aero_attn.graphs import build_graph, gen_sbm, make_dataset, sym_norm_adj
from aero_attn.propagation import forward, forward_aero, forward_gatv2


@pytest.fixture(scope="module")
def small_ds():
    return oracles._small_dataset(n=10, seed=21)


def _identity_input_params(cfg, ds, seed=0):
    params = m.init_params(cfg, ds.d_x, ds.d_c, seed=seed)
    return params


def test_dense_power_oracles():
    for name, ok, detail in oracles.dense_power_suite():
        assert ok, f"{name}: {detail}"


def test_aero_k0_degenerate(small_ds):
    cfg = m.ModelConfig(kind="aero", k_max=0, d_h=6, dropout=0.0)
    params = m.init_params(cfg, small_ds.d_x, small_ds.d_c, seed=1)
    logits, trace = forward_aero(small_ds, params, cfg)
    h0, gamma0 = trace.h[0], trace.attn[0].gamma
    z0 = gamma0[:, None] * h0
    out = np.where(z0 > 0, z0, np.exp(np.minimum(z0, 0)) - 1)
    expect = out @ params["w_out"].data + params["b_out"].data
    assert np.allclose(logits.data, expect, atol=1e-12)


def test_aero_incremental_identity_bitwise(small_ds):
    cfg = m.ModelConfig(kind="aero", k_max=5, d_h=8, dropout=0.0)
    params = m.init_params(cfg, small_ds.d_x, small_ds.d_c, seed=3)
    _, trace = forward_aero(small_ds, params, cfg)
    for k in range(1, 6):
        recomputed = trace.z[k - 1] + trace.h[k] * trace.attn[k].gamma[:, None]
        assert np.array_equal(trace.z[k], recomputed)


def test_gatv2_single_layer_uniform_average():
    g = build_graph([(0, 1), (1, 2)], 3)
    x = np.array([[1.0, 3.0], [5.0, 7.0], [9.0, 11.0]])
    ds = make_dataset(g, x, [0, 1, 0], {"train": [0], "val": [1], "test": [2]})
    cfg = m.ModelConfig(kind="gatv2", k_max=1, d_h=2, dropout=0.0)
    params = m.init_params(cfg, 2, 2, seed=0)
    params["w_in"].data[...] = np.eye(2)
    params["b_in"].data[...] = 0.0
    params["w_1"].data[...] = np.eye(2)
    params["w_edge_1"].data[...] = 0.0
    _, trace = forward_gatv2(ds, params, cfg)
    expect = np.array([x[[0, 1]].mean(0), x.mean(0), x[[1, 2]].mean(0)])
    assert np.allclose(trace.h[1], expect, atol=1e-12)


def test_gatv2_linear_vs_nonlinear_on_positive_path():
    # ELU is the identity on positives, so the two propagation modes agree
    g = build_graph([(0, 1), (1, 2), (0, 2)], 3)
    x = np.array([[1.0, 2.0], [2.0, 1.0], [3.0, 3.0]])
    ds = make_dataset(g, x, [0, 1, 0], {"train": [0], "val": [1], "test": [2]})
    cfg = m.ModelConfig(kind="gatv2", k_max=2, d_h=2, dropout=0.0)
    params = m.init_params(cfg, 2, 2, seed=0)
    for name in ("w_in", "w_1", "w_2"):
        params[name].data[...] = np.eye(2)
    params["b_in"].data[...] = 0.0
    params["w_edge_1"].data[...] = 0.0
    params["w_edge_2"].data[...] = 0.0
    lin, _ = forward_gatv2(ds, params, cfg, linear=True)
    nonlin, _ = forward_gatv2(ds, params, cfg, linear=False)
    assert np.allclose(lin.data, nonlin.data, atol=1e-12)


def test_gatv2_cumulative_product_row_stochastic(small_ds):
    from aero_attn.diagnostics import cumulative_series

    cfg = m.ModelConfig(kind="gatv2", k_max=6, d_h=4, dropout=0.0)
    params = m.init_params(cfg, small_ds.d_x, small_ds.d_c, seed=5)
    _, trace = forward_gatv2(small_ds, params, cfg)
    for t in cumulative_series(trace):
        assert np.abs(t.matrix.sum(axis=1) - 1.0).max() < 1e-10


def test_fagcn_residual_only(small_ds):
    cfg = m.ModelConfig(kind="fagcn", k_max=4, d_h=6, dropout=0.0, eps_fagcn=1.0)
    params = m.init_params(cfg, small_ds.d_x, small_ds.d_c, seed=2)
    for k in range(1, 5):
        params[f"w_edge_{k}"].data[...] = 0.0
    _, trace = forward(small_ds, params, cfg)
    for k in range(5):
        assert np.allclose(trace.z[k], trace.h[0], atol=1e-14)


def test_fagcn_unroll_oracle():
    for name, ok, detail in oracles.fagcn_unroll_suite(draws=15):
        assert ok, f"{name}: {detail}"


def test_fagcn_trace_marks_inverted_hops(small_ds):
    cfg = m.ModelConfig(kind="fagcn", k_max=3, d_h=4, dropout=0.0)
    params = m.init_params(cfg, small_ds.d_x, small_ds.d_c, seed=0)
    _, trace = forward(small_ds, params, cfg)
    assert trace.hop_index_inverted
    assert trace.hop_label(1) == 3 and trace.hop_label(3) == 1


def test_dagnn_constant_gate(small_ds):
    cfg = m.ModelConfig(kind="dagnn", k_max=3, d_h=6, dropout=0.0)
    params = m.init_params(cfg, small_ds.d_x, small_ds.d_c, seed=4)
    params["w_hop"].data[...] = 0.0
    _, trace = forward(small_ds, params, cfg)
    dense_a = sym_norm_adj(small_ds.graph).dense()
    acc, p = 0.5 * trace.h[0], trace.h[0].copy()
    for k in range(1, 4):
        p = dense_a @ p
        acc = acc + 0.5 * p
    assert np.allclose(trace.z[3], acc, atol=1e-12)
    for k in range(4):
        assert np.allclose(trace.attn[k].gamma, 0.5)


def test_gpr_dagnn_share_attention_object(small_ds):
    for kind in ("gprgnn", "dagnn"):
        cfg = m.ModelConfig(kind=kind, k_max=4, d_h=6, dropout=0.0)
        params = m.init_params(cfg, small_ds.d_x, small_ds.d_c, seed=6)
        _, trace = forward(small_ds, params, cfg)
        first = trace.attn[1].alpha
        assert all(trace.attn[k].alpha is first for k in range(2, 5))


def test_forward_dispatch_and_determinism(small_ds):
    cfg = m.ModelConfig(kind="aero", k_max=3, d_h=6, dropout=0.4)
    params = m.init_params(cfg, small_ds.d_x, small_ds.d_c, seed=8)
    e1, _ = forward(small_ds, params, cfg, mode="eval", record_trace=False)
    e2, _ = forward(small_ds, params, cfg, mode="eval", record_trace=False)
    assert np.array_equal(e1.data, e2.data)
    t1, _ = forward(small_ds, params, cfg, mode="train",
                    rng=np.random.default_rng(3), record_trace=False)
    t2, _ = forward(small_ds, params, cfg, mode="train",
                    rng=np.random.default_rng(3), record_trace=False)
    assert np.array_equal(t1.data, t2.data)
    assert not np.array_equal(t1.data, e1.data)

    cfg.kind = "bogus"
    with pytest.raises(ValueError, match="unknown model kind"):
        forward(small_ds, params, cfg)
    with pytest.raises(ValueError, match="mode"):
        forward(small_ds, params, m.ModelConfig(kind="aero", k_max=1, d_h=6),
                mode="test")


def test_presets():
    ds = oracles._small_dataset(n=10, seed=21)
    gcn_cfg = m.preset_gcn_like(k_max=2, d_h=6, dropout=0.0)
    params = m.init_params(gcn_cfg, ds.d_x, ds.d_c, seed=0)
    _, trace = forward(ds, params, gcn_cfg)
    sizes = np.diff(trace.support.row_ptr).astype(float)
    assert np.allclose(trace.attn[1].alpha, 1.0 / sizes[trace.support.src])

    appnp_cfg = m.preset_appnp_like(k_max=3, d_h=6, dropout=0.0)
    params = m.init_params(appnp_cfg, ds.d_x, ds.d_c, seed=0)
    assert params["hop_coeffs"].frozen
    leaves = params.tensors()
    assert not leaves["hop_coeffs"].needs_grad
