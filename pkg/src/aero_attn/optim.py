"""Adam with decoupled per-group weight decay, and the central-difference
gradient checker used as the differentiation oracle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .models import ModelParams


@dataclass
class OptimizerState:
    lr: float
    wd_ft: float = 0.0
    wd_prop: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params: ModelParams, lr: float, wd_ft: float = 0.0,
              wd_prop: float = 0.0) -> OptimizerState:
    if lr <= 0:
        raise ValueError("learning rate must be > 0")
    state = OptimizerState(lr=lr, wd_ft=wd_ft, wd_prop=wd_prop)
    for name, p in params.params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(state: OptimizerState, params: ModelParams,
              grads: dict[str, np.ndarray]) -> None:
    """One Adam update in place.

    Weight decay is decoupled and multiplicative, applied before the moment
    update: param <- param * (1 - lr * WD_group).  Parameters flagged
    ``decay=False`` (gprgnn hop coefficients) or ``frozen`` are left alone.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.params.items():
        g = grads.get(name)
        if p.frozen or g is None:
            continue
        wd = state.wd_ft if p.group == "ft" else state.wd_prop
        if p.decay and wd:
            p.data *= 1.0 - state.lr * wd
        mm = state.m[name]
        vv = state.v[name]
        mm *= state.beta1
        mm += (1.0 - state.beta1) * g
        vv *= state.beta2
        vv += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (mm / bc1) / (np.sqrt(vv / bc2) + state.eps)


def collect_grads(leaves: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {name: t.grad for name, t in leaves.items() if t.grad is not None}


def grad_check(make_loss, params: dict[str, np.ndarray], h: float = 1e-5) -> float:
    """Max relative error between recorded gradients and central differences.

    ``make_loss`` maps a dict of named leaf tensors to a scalar loss tensor
    and is called afresh for every perturbed evaluation.  The error at each
    coordinate is |analytic - fd| / max(1e-8, |fd|).
    """
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    leaves = {k: Tensor(v, needs_grad=True) for k, v in work.items()}
    loss = make_loss(leaves)
    if loss.data.shape != (1, 1):
        raise ValueError("grad_check needs a scalar-valued closure")
    loss.backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for k, t in leaves.items()}

    def value() -> float:
        return make_loss({k: Tensor(v) for k, v in work.items()}).item()

    worst = 0.0
    for name, arr in work.items():
        flat = arr.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = value()
            flat[i] = orig - h
            f_minus = value()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            err = abs(a_flat[i] - fd) / max(1e-8, abs(fd))
            worst = max(worst, err)
    return worst
