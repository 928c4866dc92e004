"""Deep graph attention models over a shared sparse-propagation and
reverse-mode differentiation core, with over-smoothing diagnostics."""

from .graphs import (
    Dataset,
    Graph,
    build_graph,
    check_pairwise_distinct,
    gen_sbm,
    homophily,
    is_bipartite,
    is_connected,
    load_dataset,
    make_dataset,
    make_support,
    save_dataset,
    sym_norm_adj,
)
from .models import (
    ModelConfig,
    ModelParams,
    count_additional_params,
    init_params,
    preset_appnp_like,
    preset_gcn_like,
)
from .propagation import PropagationTrace, forward
from .diagnostics import (
    attn_stats,
    compute_T,
    count_intersecting_pairs,
    degree_of_intersection,
    enumerate_walks,
    path_decompose_entry,
    probe_resistance,
    smoothness,
    smoothness_series,
    unsmoothing_construct,
)
from .optim import adam_init, adam_step, grad_check
from .training import RunResult, TrainConfig, depth_sweep, evaluate, train

__all__ = [
    "Dataset", "Graph", "build_graph", "check_pairwise_distinct", "gen_sbm",
    "homophily", "is_bipartite", "is_connected", "load_dataset", "make_dataset",
    "make_support", "save_dataset", "sym_norm_adj",
    "ModelConfig", "ModelParams", "count_additional_params", "init_params",
    "preset_appnp_like", "preset_gcn_like",
    "PropagationTrace", "forward",
    "attn_stats", "compute_T", "count_intersecting_pairs",
    "degree_of_intersection", "enumerate_walks", "path_decompose_entry",
    "probe_resistance", "smoothness", "smoothness_series", "unsmoothing_construct",
    "adam_init", "adam_step", "grad_check",
    "RunResult", "TrainConfig", "depth_sweep", "evaluate", "train",
]
