"""Training loop with early stopping, evaluation, and depth sweeps.

Runs are fully deterministic per seed: parameter init and dropout draw from a
single generator seeded at the start of ``train``.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import diagnostics as diag
from .graphs import Dataset, gen_sbm, load_dataset
from .models import ModelConfig, init_params
from .optim import adam_init, adam_step, collect_grads
from .propagation import forward


@dataclass
class TrainConfig:
    model: ModelConfig
    lr: float | None = None       # default 0.01 sparse-labeled, 0.005 dense-labeled
    wd_ft: float = 5e-4
    wd_prop: float = 5e-4
    max_epochs: int = 1000
    patience: int = 100
    split: str = "sparse"
    linear_gatv2: bool = True
    seeds: tuple = (0,)

    def __post_init__(self):
        if self.split not in ("sparse", "dense"):
            raise ValueError("split must be 'sparse' or 'dense'")
        if self.lr is not None and self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.patience > self.max_epochs and self.max_epochs > 0:
            raise ValueError("patience must not exceed max_epochs")

    @property
    def resolved_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        return 0.01 if self.split == "sparse" else 0.005


@dataclass
class RunResult:
    seed: int
    best_epoch: int
    epochs_run: int
    val_acc: float
    test_acc: float
    train_losses: list
    val_accs: list
    seconds: float
    trace: object = None


def evaluate(logits: np.ndarray, labels: np.ndarray, index_set: np.ndarray) -> float:
    """Argmax accuracy; ties resolve to the lowest class index."""
    idx = np.asarray(index_set, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("evaluate over an empty index set")
    pred = np.argmax(logits[idx], axis=1)
    return float((pred == np.asarray(labels)[idx]).mean())


def _val_metrics(logits: np.ndarray, dataset: Dataset):
    idx = dataset.splits["val"]
    acc = evaluate(logits, dataset.labels, idx)
    sub = logits[idx]
    m = sub.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(sub - m).sum(axis=1))
    loss = float(np.mean(lse - sub[np.arange(idx.size), dataset.labels[idx]]))
    return acc, loss


def train(dataset: Dataset, cfg: TrainConfig, seed: int,
          keep_trace: bool = False) -> RunResult:
    """Adam with grouped weight decay and restore-best early stopping."""
    for key in ("train", "val", "test"):
        if dataset.splits[key].size == 0:
            raise ValueError(f"dataset is missing a non-empty {key!r} split")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    params = init_params(cfg.model, dataset.d_x, dataset.d_c, rng)
    opt = adam_init(params, cfg.resolved_lr, cfg.wd_ft, cfg.wd_prop)
    train_idx = dataset.splits["train"]

    best = params.snapshot()
    best_acc, best_loss, best_epoch = -1.0, float("inf"), 0
    losses, val_accs = [], []
    since_best = 0
    epochs_run = 0
    for epoch in range(1, cfg.max_epochs + 1):
        epochs_run = epoch
        leaves = params.tensors()
        logits, _ = forward(dataset, params, cfg.model, mode="train", rng=rng,
                            leaves=leaves, record_trace=False,
                            linear_gatv2=cfg.linear_gatv2)
        loss = ad.cross_entropy(logits, dataset.labels, train_idx)
        loss.backward()
        adam_step(opt, params, collect_grads(leaves))
        losses.append(loss.item())

        eval_logits, _ = forward(dataset, params, cfg.model, mode="eval",
                                 record_trace=False, linear_gatv2=cfg.linear_gatv2)
        acc, vloss = _val_metrics(eval_logits.data, dataset)
        val_accs.append(acc)
        improved = acc > best_acc
        if improved or (acc == best_acc and vloss < best_loss):
            best_acc, best_loss, best_epoch = acc, vloss, epoch
            best = params.snapshot()
        # ties on accuracy refresh the snapshot but not the patience window
        since_best = 0 if improved else since_best + 1
        if since_best > cfg.patience:
            break

    params.restore(best)
    final_logits, trace = forward(dataset, params, cfg.model, mode="eval",
                                  record_trace=keep_trace,
                                  linear_gatv2=cfg.linear_gatv2)
    test_acc = evaluate(final_logits.data, dataset.labels, dataset.splits["test"])
    if best_acc < 0:  # zero-epoch smoke run
        best_acc, _ = _val_metrics(final_logits.data, dataset)
    return RunResult(seed=seed, best_epoch=best_epoch, epochs_run=epochs_run,
                     val_acc=best_acc, test_acc=test_acc, train_losses=losses,
                     val_accs=val_accs, seconds=time.perf_counter() - t0,
                     trace=trace)


@dataclass
class SweepRow:
    model: str
    depth: int
    mean_acc: float
    sd_acc: float
    accs: list
    results: list = field(repr=False)
    smoothness: list | None = None
    is_best: bool = False


def depth_sweep(dataset: Dataset, cfg: TrainConfig,
                depths=(2, 4, 8, 16, 32, 64), seeds=None,
                with_smoothness: bool = False, n_cap: int = diag.DIAG_N_CAP) -> list:
    """Per-depth mean/SD test accuracy over seeds; optionally appends the
    smoothness series of the first seed's best model at each depth."""
    seeds = tuple(cfg.seeds if seeds is None else seeds)
    rows = []
    for depth in depths:
        dcfg = replace(cfg, model=replace(cfg.model, k_max=depth))
        results = [train(dataset, dcfg, s, keep_trace=with_smoothness and i == 0)
                   for i, s in enumerate(seeds)]
        accs = [r.test_acc for r in results]
        smooth = None
        if with_smoothness and results[0].trace is not None:
            smooth = diag.smoothness_series(results[0].trace, n_cap=n_cap).values
        rows.append(SweepRow(model=cfg.model.kind, depth=depth,
                             mean_acc=float(np.mean(accs)), sd_acc=float(np.std(accs)),
                             accs=accs, results=results, smoothness=smooth))
    best = max(range(len(rows)), key=lambda i: rows[i].mean_acc)
    rows[best].is_best = True
    return rows


def write_runs_csv(path, rows: list) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["seed", "depth", "model", "val_acc", "test_acc", "epochs", "seconds"])
        for row in rows:
            for r in row.results:
                w.writerow([r.seed, row.depth, row.model, repr(r.val_acc),
                            repr(r.test_acc), r.epochs_run, repr(r.seconds)])


def write_best_json(path, rows: list) -> None:
    best = next(r for r in rows if r.is_best)
    payload = {"model": best.model, "best_depth": best.depth,
               "mean_test_acc": best.mean_acc, "sd_test_acc": best.sd_acc,
               "per_depth": {str(r.depth): {"mean": r.mean_acc, "sd": r.sd_acc}
                             for r in rows}}
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def grid_search(dataset: Dataset, base: TrainConfig, grid: dict, seeds=None) -> list:
    """Small exhaustive search over discrete value sets.

    ``grid`` maps TrainConfig / ModelConfig field names to candidate lists;
    returns (config, mean_val_acc) pairs sorted best-first.
    """
    import itertools

    seeds = tuple(base.seeds if seeds is None else seeds)
    names = list(grid)
    out = []
    for combo in itertools.product(*(grid[n] for n in names)):
        cfg = base
        mdl = base.model
        for n, v in zip(names, combo):
            if hasattr(mdl, n):
                mdl = replace(mdl, **{n: v})
            else:
                cfg = replace(cfg, **{n: v})
        cfg = replace(cfg, model=mdl)
        vals = [train(dataset, cfg, s).val_acc for s in seeds]
        out.append((cfg, float(np.mean(vals))))
    out.sort(key=lambda t: -t[1])
    return out


# ---------------------------------------------------------------------------
# picklable single-run worker for --jobs parallelism

def run_single_spec(payload: dict) -> dict:
    """Train one (seed, depth) cell described by plain dicts; used by the CLI
    to fan runs out over processes."""
    src = payload["dataset"]
    if "path" in src:
        dataset = load_dataset(src["path"])
    else:
        dataset = gen_sbm(**src["sbm"])
    model = ModelConfig(**payload["model"])
    cfg = TrainConfig(model=model, **payload.get("train", {}))
    if payload.get("depth") is not None:
        cfg = replace(cfg, model=replace(cfg.model, k_max=int(payload["depth"])))
    r = train(dataset, cfg, int(payload["seed"]))
    return {"seed": r.seed, "depth": cfg.model.k_max, "model": cfg.model.kind,
            "val_acc": r.val_acc, "test_acc": r.test_acc,
            "epochs": r.epochs_run, "seconds": r.seconds}


def run_many(payloads: list, jobs: int = 1) -> list:
    if jobs <= 1:
        return [run_single_spec(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_single_spec, payloads))
