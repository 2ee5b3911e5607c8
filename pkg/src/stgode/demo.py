"""Over-smoothing demonstrations.

Two outputs:

* collapse curves: spread of ``A^n x`` against ``n`` for the two-node toy
  graph and for the dataset's spatial graph (CSV columns ``graph, n,
  node_variance, smoothing_residual``);
* a depth study: validation MAE as the ODE horizon ``t_end`` grows, next to
  a stacked-GCN ablation as its depth grows (CSV columns ``depth, model,
  val_mae``).

The depth study trains many small models, so it runs on a reduced budget:
``demo_channels``/``demo_head_hidden`` widths, ``demo_epochs`` epochs and every
``demo_window_stride``-th training window.  The Euler step is held at
``1 / steps`` of unit time, so ``t_end = k`` integrates with ``k * steps`` steps.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from stgode.config import RunConfig
from stgode.data import write_csv_rows, write_json
from stgode.graph import RegularizedAdjacency, build_regularized
from stgode.model import StgodeNetwork
from stgode.ode import node_variance, smoothing_residual, stationary_direction
from stgode.training import DataSplits, evaluate, train

log = logging.getLogger(__name__)

COLLAPSE_FILE = "collapse.csv"
DEPTH_FILE = "depth.csv"
DEMO_SUMMARY_FILE = "demo_summary.json"
DEPTH_HEADER = ["depth", "model", "val_mae"]
COLLAPSE_HEADER = ["graph", "n", "node_variance", "smoothing_residual"]

TOY_ADJACENCY = np.array([[0.0, 1.0], [1.0, 0.0]])


def collapse_curve(adj: RegularizedAdjacency, signal: np.ndarray, max_n: int) -> list[tuple[int, float, float]]:
    v = stationary_direction(adj)
    rows = []
    h = np.asarray(signal, dtype=np.float64)
    for n in range(max_n + 1):
        rows.append((n, node_variance(h), smoothing_residual(h, v)))
        h = adj.a_hat @ h
    return rows


def collapse_rows(cfg: RunConfig, spatial: RegularizedAdjacency | None = None, signal=None) -> list[list]:
    toy = build_regularized(TOY_ADJACENCY, cfg.alpha)
    out = [["toy", n, var, res] for n, var, res in collapse_curve(toy, np.array([1.0, -1.0]), cfg.demo_collapse_max)]
    if spatial is not None and signal is not None:
        out += [["spatial", n, var, res] for n, var, res in collapse_curve(spatial, signal, cfg.demo_collapse_max)]
    return out


def _spread(values) -> float:
    return float(max(values) - min(values))


def depth_study(cfg: RunConfig, splits: DataSplits, spatial, semantic=None, seed: int | None = None) -> list[list]:
    """Rows ``[depth, model, val_mae]`` for ``model`` in ``ode`` / ``gcn``."""
    seed = cfg.seed if seed is None else seed
    n_nodes, in_features = splits.train.inputs.shape[1], splits.train.inputs.shape[3]
    sub = DataSplits(
        train=splits.train.subset(np.arange(0, len(splits.train), cfg.demo_window_stride)),
        val=splits.val,
        test=splits.test,
        normalizer=splits.normalizer,
        boundaries=splits.boundaries,
        n_steps=splits.n_steps,
    )
    tc = cfg.train_config(epochs=cfg.demo_epochs, seed=seed)
    rows = []
    for model_kind in ("ode", "gcn"):
        for depth in cfg.demo_depths:
            if model_kind == "ode":
                extra = dict(spatial_op="ode", t_end=float(depth), steps=cfg.steps * depth)
            else:
                extra = dict(spatial_op="gcn", gcn_depth=depth)
            mc = cfg.model_config(
                n_nodes, in_features, channels=cfg.demo_channels, head_hidden=cfg.demo_head_hidden,
                seed=seed, **extra,
            )
            model = StgodeNetwork(mc, spatial, semantic)
            train(model, sub, tc)
            mae = evaluate(model, sub.val, sub.normalizer)["mae"]
            log.info("demo %s depth %d val_mae %.4f", model_kind, depth, mae)
            rows.append([depth, model_kind, mae])
    return rows


def spreads(rows) -> dict:
    return {kind: _spread([r[2] for r in rows if r[1] == kind]) for kind in ("ode", "gcn")}


def cmd_demo(cfg: RunConfig, splits: DataSplits, spatial, semantic=None) -> dict:
    signal = splits.train.inputs[0, :, -1, 0]
    collapse = collapse_rows(cfg, spatial, signal)
    depth = depth_study(cfg, splits, spatial, semantic)
    out = Path(cfg.out_dir)
    write_csv_rows(out / COLLAPSE_FILE, COLLAPSE_HEADER, collapse)
    write_csv_rows(out / DEPTH_FILE, DEPTH_HEADER, depth)
    summary = {"config": cfg.to_dict(), "spread": spreads(depth), "depth": [dict(zip(DEPTH_HEADER, r)) for r in depth]}
    write_json(out / DEMO_SUMMARY_FILE, summary)
    return summary
