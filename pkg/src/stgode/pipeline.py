"""File-level workflows behind the CLI: graphs, training, evaluation.

Artifacts (all JSON written with sorted keys, no timings, so reruns with the
same seed produce identical bytes):

``<graph_dir>/spatial.csv``, ``<graph_dir>/semantic.csv``
    Dense regularized adjacency matrices, one row per node.
``<graph_dir>/spatial_raw.csv``, ``<graph_dir>/semantic_raw.csv``
    Thresholded weights before normalization (only with ``export_raw``).
``<graph_dir>/graph_summary.json``
    Densities and eigenvalue ranges of both graphs plus the config echo.
``<out_dir>/checkpoint.npz``
    See :func:`stgode.model.save_checkpoint`.
``<out_dir>/metrics.json``
    Loss history, best epoch, test metrics (original units), optional
    persistence metrics, config echo.
``<out_dir>/eval_metrics.json``
    Test metrics recomputed from the checkpoint.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from stgode.config import RunConfig
from stgode.data import (
    read_edges_csv,
    read_feature_series,
    read_matrix_csv,
    write_json,
    write_matrix_csv,
)
from stgode.errors import ShapeError, ValidationError
from stgode.graph import (
    AdjacencyKind,
    RegularizedAdjacency,
    build_regularized,
    semantic_adjacency,
    spatial_adjacency,
)
from stgode.model import StgodeNetwork, load_checkpoint, save_checkpoint
from stgode.training import (
    DataSplits,
    Normalizer,
    evaluate,
    evaluate_persistence,
    split_and_window,
    split_boundaries,
    train,
)

log = logging.getLogger(__name__)

SPATIAL_FILE = "spatial.csv"
SEMANTIC_FILE = "semantic.csv"
SUMMARY_FILE = "graph_summary.json"
METRICS_FILE = "metrics.json"
EVAL_FILE = "eval_metrics.json"


@dataclass
class Dataset:
    node_ids: list[str]
    series: np.ndarray  # (time, nodes, features)

    @property
    def n_nodes(self):
        return self.series.shape[1]

    @property
    def n_features(self):
        return self.series.shape[2]


def load_dataset(cfg: RunConfig) -> Dataset:
    ids, series = read_feature_series([cfg.series, *cfg.extra_features])
    return Dataset(ids, series)


def set_threads(cfg: RunConfig):
    torch.set_num_threads(cfg.workers)


# ------------------------------------------------------------------ graphs


def graph_summary(adj: RegularizedAdjacency, raw: np.ndarray) -> dict:
    n = raw.shape[0]
    off = raw[~np.eye(n, dtype=bool)]
    return {
        "nodes": n,
        "edges": int(np.count_nonzero(off) // 2),
        "density": float(np.count_nonzero(off) / max(n * (n - 1), 1)),
        "eig_min": float(adj.eig.values.min()),
        "eig_max": float(adj.eig.values.max()),
    }


def build_graphs(cfg: RunConfig, ds: Dataset):
    """Spatial graph from the edge file, semantic graph from the training span of feature 0."""
    net = read_edges_csv(cfg.edges, ds.node_ids)
    raw_sp = spatial_adjacency(net, cfg.sigma, cfg.epsilon_spatial, sigma_squared=cfg.sigma_squared)
    spatial = build_regularized(raw_sp, cfg.alpha, AdjacencyKind.SPATIAL)
    train_end, _ = split_boundaries(ds.series.shape[0], cfg.split)
    raw_se = semantic_adjacency(
        ds.series[:train_end, :, 0].T, cfg.epsilon_semantic, band=cfg.band, top_k=cfg.top_k, workers=cfg.workers
    )
    semantic = build_regularized(raw_se, cfg.alpha, AdjacencyKind.SEMANTIC)
    summary = {"spatial": graph_summary(spatial, raw_sp), "semantic": graph_summary(semantic, raw_se)}
    return spatial, semantic, summary, (raw_sp, raw_se)


def cmd_build_graph(cfg: RunConfig) -> dict:
    ds = load_dataset(cfg)
    spatial, semantic, summary, (raw_sp, raw_se) = build_graphs(cfg, ds)
    out = Path(cfg.graph_dir)
    write_matrix_csv(out / SPATIAL_FILE, spatial.a_hat)
    write_matrix_csv(out / SEMANTIC_FILE, semantic.a_hat)
    if cfg.export_raw:
        write_matrix_csv(out / "spatial_raw.csv", raw_sp)
        write_matrix_csv(out / "semantic_raw.csv", raw_se)
    summary["config"] = cfg.to_dict()
    write_json(out / SUMMARY_FILE, summary)
    return summary


def _load_adjacency(path: Path, n: int, alpha: float, kind) -> RegularizedAdjacency:
    if not path.exists():
        raise FileNotFoundError(f"adjacency file not found: expected {path} (run build-graph first)")
    a_hat = read_matrix_csv(path)
    if a_hat.shape != (n, n):
        raise ShapeError(f"{path}: {a_hat.shape[0]} nodes, the series has {n}")
    # The constructor re-checks symmetry and the [0, alpha] spectrum.
    return RegularizedAdjacency(a_hat=a_hat, alpha=alpha, kind=kind)


def load_graphs(cfg: RunConfig, n: int):
    d = Path(cfg.graph_dir)
    spatial = _load_adjacency(d / SPATIAL_FILE, n, cfg.alpha, AdjacencyKind.SPATIAL)
    semantic = _load_adjacency(d / SEMANTIC_FILE, n, cfg.alpha, AdjacencyKind.SEMANTIC) if cfg.use_semantic else None
    return spatial, semantic


# ------------------------------------------------------------------ train / eval


def prepare_splits(cfg: RunConfig, ds: Dataset) -> DataSplits:
    return split_and_window(ds.series, cfg.history, cfg.horizon, cfg.split)


def test_report(model: StgodeNetwork, splits: DataSplits, normalizer: Normalizer) -> dict:
    return evaluate(model, splits.test, normalizer)


def cmd_train(cfg: RunConfig, progress=None) -> dict:
    set_threads(cfg)
    ds = load_dataset(cfg)
    spatial, semantic = load_graphs(cfg, ds.n_nodes)
    splits = prepare_splits(cfg, ds)
    model = StgodeNetwork(cfg.model_config(ds.n_nodes, ds.n_features), spatial, semantic)
    result = train(model, splits, cfg.train_config(), progress=progress)
    extra = {"normalizer": splits.normalizer.to_dict(), "run_config": cfg.to_dict(), "best_epoch": result.best_epoch}
    save_checkpoint(cfg.checkpoint_path, model, extra)
    metrics = {
        "config": cfg.to_dict(),
        "model_config": model.cfg.to_dict(),
        "windows": splits.counts(),
        "history": result.history_dicts(),
        "best_epoch": result.best_epoch,
        "best_val_loss": result.best_val_loss,
        "test": test_report(model, splits, splits.normalizer),
    }
    if cfg.persistence:
        metrics["persistence"] = evaluate_persistence(splits.test, splits.normalizer, cfg.horizon)
    write_json(Path(cfg.out_dir) / METRICS_FILE, metrics)
    return metrics


def cmd_eval(cfg: RunConfig) -> dict:
    set_threads(cfg)
    model, extra = load_checkpoint(cfg.checkpoint_path)
    ds = load_dataset(cfg)
    mc = model.cfg
    if (mc.n_nodes, mc.in_features) != (ds.n_nodes, ds.n_features):
        raise ValidationError(
            f"checkpoint expects {mc.n_nodes} nodes x {mc.in_features} features, "
            f"data has {ds.n_nodes} x {ds.n_features}"
        )
    if (mc.history, mc.horizon) != (cfg.history, cfg.horizon):
        raise ValidationError(
            f"checkpoint was trained with history/horizon {mc.history}/{mc.horizon}, "
            f"config says {cfg.history}/{cfg.horizon}"
        )
    splits = prepare_splits(cfg, ds)
    normalizer = Normalizer.from_dict(extra["normalizer"]) if "normalizer" in extra else splits.normalizer
    out = {"config": cfg.to_dict(), "model_config": mc.to_dict(), "test": test_report(model, splits, normalizer)}
    if cfg.persistence:
        out["persistence"] = evaluate_persistence(splits.test, normalizer, cfg.horizon)
    write_json(Path(cfg.out_dir) / EVAL_FILE, out)
    return out

