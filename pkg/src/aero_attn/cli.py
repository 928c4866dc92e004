"""Command-line surface: train / sweep / diagnose / paramcount / gen / oracle.

Every command is reproducible from its resolved spec; the spec with all
defaults materialized is written next to the outputs as ``metadata.json``.
Exit codes: 0 success, 1 assertion or runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from . import models as m
from . import oracles
from . import training as tr
from .graphs import gen_sbm, load_dataset, save_dataset
from .propagation import forward

MODEL_KEYS = ("kind", "k_max", "d_h", "dropout", "lam", "eps_fagcn", "alpha_ppr",
              "mlp_depth", "param_clamp", "aero_self_loops", "gatv2_score_act",
              "final_dropout", "h0_dropout", "fixed_uniform_attention", "frozen_hop")
TRAIN_KEYS = ("lr", "wd_ft", "wd_prop", "max_epochs", "patience", "split",
              "linear_gatv2")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", help="JSON experiment spec; flags override its fields")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--gen", help="inline JSON SBM generator spec (exclusive with --data)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--model", choices=m.KINDS)
    p.add_argument("--depth", type=int, help="number of propagation layers")
    p.add_argument("--seed", help="comma-separated seed list")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--wd-ft", type=float)
    p.add_argument("--wd-prop", type=float)
    p.add_argument("--linear-gatv2", type=int, choices=(0, 1))
    p.add_argument("--n-cap", type=int)
    p.add_argument("--split", choices=("sparse", "dense"))
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--d-h", type=int)
    p.add_argument("--jobs", type=int)


def _resolve(args: argparse.Namespace) -> dict:
    """Merge spec file, flags and defaults into one fully explicit dict."""
    spec: dict = {}
    if getattr(args, "spec", None):
        with open(args.spec) as f:
            spec = json.load(f)

    dataset = spec.get("dataset", {})
    if getattr(args, "data", None):
        dataset = {"path": args.data}
    if getattr(args, "gen", None):
        dataset = {"sbm": json.loads(args.gen)}
    if ("path" in dataset) == ("sbm" in dataset):
        raise ValueError("exactly one dataset source (--data or --gen) is required")

    model = dict(spec.get("model", {}))
    for key, flag in (("kind", "model"), ("k_max", "depth"), ("d_h", "d_h"),
                      ("dropout", "dropout"), ("lam", "lam")):
        v = getattr(args, flag, None)
        if v is not None:
            model[key] = v
    if "kind" not in model:
        raise ValueError("a model kind is required (--model)")
    model.setdefault("k_max", 8)
    cfg = m.ModelConfig(**{k: v for k, v in model.items() if k in MODEL_KEYS})
    model = {k: getattr(cfg, k) for k in MODEL_KEYS}

    train = dict(spec.get("train", {}))
    for key in TRAIN_KEYS:
        flag = {"linear_gatv2": "linear_gatv2"}.get(key, key)
        v = getattr(args, flag, None)
        if v is not None:
            train[key] = bool(v) if key == "linear_gatv2" else v
    tcfg = tr.TrainConfig(model=cfg, **{k: v for k, v in train.items() if k in TRAIN_KEYS})
    train = {k: getattr(tcfg, k) for k in TRAIN_KEYS}

    seeds = spec.get("seeds", [0])
    if getattr(args, "seed", None):
        seeds = [int(s) for s in str(args.seed).split(",")]
    jobs = spec.get("jobs", 1)
    if getattr(args, "jobs", None) is not None:
        jobs = args.jobs
    jobs = int(os.environ.get("AERO_ATTN_JOBS", jobs))

    resolved = {
        "command": args.command,
        "dataset": dataset,
        "model": model,
        "train": train,
        "seeds": [int(s) for s in seeds],
        "depths": [int(d) for d in spec.get("depths", [2, 4, 8, 16, 32, 64])],
        "out": getattr(args, "out", None) or spec.get("out") or "results",
        "jobs": jobs,
        "n_cap": getattr(args, "n_cap", None) or spec.get("n_cap", diag.DIAG_N_CAP),
    }
    return resolved


def _load_data(resolved: dict):
    src = resolved["dataset"]
    if "path" in src:
        return load_dataset(src["path"])
    return gen_sbm(**src["sbm"])


def _out_dir(resolved: dict) -> Path:
    out = Path(resolved["out"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metadata.json", "w") as f:
        json.dump(resolved, f, indent=2, sort_keys=True)
        f.write("\n")
    return out


def _train_cfg(resolved: dict) -> tr.TrainConfig:
    cfg = m.ModelConfig(**resolved["model"])
    return tr.TrainConfig(model=cfg, seeds=tuple(resolved["seeds"]),
                          **resolved["train"])


def _write_rows_csv(path, rows: list) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["seed", "depth", "model", "val_acc", "test_acc", "epochs", "seconds"])
        for r in rows:
            w.writerow([r["seed"], r["depth"], r["model"], repr(r["val_acc"]),
                        repr(r["test_acc"]), r["epochs"], repr(r["seconds"])])


def cmd_train(args) -> int:
    resolved = _resolve(args)
    out = _out_dir(resolved)
    payloads = [{"dataset": resolved["dataset"], "model": resolved["model"],
                 "train": resolved["train"], "seed": s, "depth": None}
                for s in resolved["seeds"]]
    rows = tr.run_many(payloads, jobs=resolved["jobs"])
    _write_rows_csv(out / "runs.csv", rows)
    accs = [r["test_acc"] for r in rows]
    best = max(rows, key=lambda r: r["val_acc"])
    with open(out / "best.json", "w") as f:
        json.dump({"model": resolved["model"]["kind"], "best_seed": best["seed"],
                   "best_val_acc": best["val_acc"], "mean_test_acc": float(np.mean(accs)),
                   "sd_test_acc": float(np.std(accs))}, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"mean test accuracy {float(np.mean(accs)):.4f} over {len(accs)} seed(s)")
    return 0


def cmd_sweep(args) -> int:
    resolved = _resolve(args)
    if args.depths:
        resolved["depths"] = [int(d) for d in args.depths.split(",")]
    out = _out_dir(resolved)
    payloads = [{"dataset": resolved["dataset"], "model": resolved["model"],
                 "train": resolved["train"], "seed": s, "depth": d}
                for d in resolved["depths"] for s in resolved["seeds"]]
    rows = tr.run_many(payloads, jobs=resolved["jobs"])
    _write_rows_csv(out / "runs.csv", rows)

    per_depth = {}
    for r in rows:
        per_depth.setdefault(r["depth"], []).append(r["test_acc"])
    summary = {str(d): {"mean": float(np.mean(v)), "sd": float(np.std(v))}
               for d, v in per_depth.items()}
    best_depth = max(per_depth, key=lambda d: float(np.mean(per_depth[d])))
    with open(out / "best.json", "w") as f:
        json.dump({"model": resolved["model"]["kind"], "best_depth": best_depth,
                   "per_depth": summary}, f, indent=2, sort_keys=True)
        f.write("\n")

    if args.with_smoothness:
        dataset = _load_data(resolved)
        cfg = _train_cfg(resolved)
        for d in resolved["depths"]:
            dcfg = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, k_max=d))
            res = tr.train(dataset, dcfg, resolved["seeds"][0], keep_trace=True)
            series = diag.smoothness_series(res.trace, n_cap=resolved["n_cap"])
            diag.write_smoothness_csv(out / f"smoothness_k{d}.csv", series)
    print(f"best depth {best_depth}")
    return 0


def cmd_diagnose(args) -> int:
    resolved = _resolve(args)
    out = _out_dir(resolved)
    dataset = _load_data(resolved)
    cfg = _train_cfg(resolved)
    if args.no_train:
        params = m.init_params(cfg.model, dataset.d_x, dataset.d_c,
                               resolved["seeds"][0])
        _, trace = forward(dataset, params, cfg.model,
                           linear_gatv2=cfg.linear_gatv2)
    else:
        trace = tr.train(dataset, cfg, resolved["seeds"][0], keep_trace=True).trace
    series = diag.smoothness_series(trace, n_cap=resolved["n_cap"])
    stats = diag.attn_stats(trace)
    diag.write_smoothness_csv(out / "smoothness.csv", series)
    diag.write_alpha_stats_csv(out / "alpha_stats.csv", stats)
    diag.write_gamma_stats_csv(out / "gamma_stats.csv", stats)
    probes = [diag.probe_resistance(kind, n_samples=args.probe_samples,
                                    seed=resolved["seeds"][0])
              for kind in m.KINDS]
    diag.write_probe_report(out / "probe_report.json", probes)
    print("diagnostics written to", out)
    return 0


def cmd_paramcount(args) -> int:
    count, theta = m.count_additional_params(args.kind, args.k_max, args.d_h, args.d_c)
    print(f"{count} {theta}")
    return 0


def cmd_gen(args) -> int:
    ds = gen_sbm(n=args.n, classes=args.classes, p_intra=args.p_intra,
                 p_inter=args.p_inter, feature_mean_separation=args.separation,
                 seed=args.gen_seed, d_x=args.d_x)
    save_dataset(ds, args.out)
    print(f"wrote {ds.name} ({ds.n} nodes, {ds.graph.num_edges} edges) to {args.out}")
    return 0


def cmd_oracle(args) -> int:
    results = oracles.run_suite(args.suite)
    failed = 0
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
        failed += not ok
    if failed:
        print(f"error: {failed} oracle check(s) failed", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aero-attn",
                                description="deep graph attention models and "
                                            "over-smoothing diagnostics")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("train", help="train one model over seeds")
    _add_common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sweep", help="depth sweep with optional smoothness series")
    _add_common(sp)
    sp.add_argument("--depths", help="comma-separated depth list")
    sp.add_argument("--with-smoothness", action="store_true")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("diagnose", help="attention statistics, smoothness and probes")
    _add_common(sp)
    sp.add_argument("--no-train", action="store_true",
                    help="diagnose at initialization instead of after training")
    sp.add_argument("--probe-samples", type=int, default=100)
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("paramcount", help="exact additional-parameter count")
    sp.add_argument("--kind", required=True, choices=m.COUNT_KINDS)
    sp.add_argument("--k-max", type=int, default=4)
    sp.add_argument("--d-h", type=int, default=64)
    sp.add_argument("--d-c", type=int, default=7)
    sp.set_defaults(func=cmd_paramcount)

    sp = sub.add_parser("gen", help="generate an SBM dataset directory")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--classes", type=int, default=2)
    sp.add_argument("--p-intra", type=float, required=True)
    sp.add_argument("--p-inter", type=float, required=True)
    sp.add_argument("--separation", type=float, default=1.0)
    sp.add_argument("--seed", dest="gen_seed", type=int, default=0)
    sp.add_argument("--d-x", type=int, default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("oracle", help="run the independent verification oracles")
    sp.add_argument("suite", choices=[*oracles.SUITES, "all"])
    sp.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # noqa: BLE001 - single-line diagnostic, exit 1
        print(f"error: {e}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
