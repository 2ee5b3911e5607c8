"""Synthetic traffic-like data on a random geometric road graph.

Each node's flow is a daily profile shared by a few "pattern" groups (drawn
independently of location, so semantic neighbours need not be spatial ones),
plus a latent AR(1) disturbance that diffuses along the road graph, plus
i.i.d. observation noise.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial.distance import cdist

from stgode.errors import ValidationError
from stgode.graph import RoadNetwork


@dataclass
class GeneratorParams:
    seed: int
    n_nodes: int
    n_steps: int
    period: int = 288
    n_patterns: int = 3
    knn: int = 3
    spacing: float = 8.0
    diffusion: float = 0.5
    kernel_scale: float = 10.0
    ar: float = 0.9
    latent_noise: float = 1.5
    obs_noise: float = 4.0
    amplitude: tuple[float, float] = (25.0, 40.0)
    base: tuple[float, float] = (80.0, 120.0)


@dataclass
class SyntheticDataset:
    series: np.ndarray  # (time, nodes)
    forcing: np.ndarray  # noise-free daily component, same shape
    network: RoadNetwork
    positions: np.ndarray
    patterns: np.ndarray
    params: GeneratorParams

    def params_dict(self) -> dict:
        d = asdict(self.params)
        d["patterns"] = self.patterns.tolist()
        return d


def _road_edges(pos: np.ndarray, knn: int) -> list[tuple[int, int, float]]:
    n = pos.shape[0]
    dist = cdist(pos, pos)
    pairs = set()
    for i in range(n):
        for j in np.argsort(dist[i], kind="stable")[1 : knn + 1]:
            pairs.add((min(i, j), max(i, j)))
    # the spanning tree guarantees a connected road network
    mst = minimum_spanning_tree(dist).tocoo()
    for i, j in zip(mst.row, mst.col):
        pairs.add((min(i, j), max(i, j)))
    return [(int(i), int(j), float(dist[i, j])) for i, j in sorted(pairs)]


def daily_profile(t: np.ndarray, period: int, phase: float, shape: float) -> np.ndarray:
    w = 2 * np.pi * t / period
    return np.sin(w + phase) + shape * np.sin(2 * w + 2 * phase + 0.5)


def synthesize_dataset(seed: int, n_nodes: int = 20, n_steps: int = 2000, **overrides) -> SyntheticDataset:
    if n_nodes < 2:
        raise ValidationError(f"need at least 2 nodes, got {n_nodes}")
    if n_steps < 100:
        raise ValidationError(f"need at least 100 steps, got {n_steps}")
    p = GeneratorParams(seed=seed, n_nodes=n_nodes, n_steps=n_steps, **overrides)
    rng = np.random.default_rng(seed)

    side = p.spacing * np.sqrt(n_nodes)
    pos = rng.uniform(0, side, size=(n_nodes, 2))
    edges = _road_edges(pos, p.knn)
    net = RoadNetwork(node_ids=[f"n{i:03d}" for i in range(n_nodes)], edges=edges)

    kernel = np.zeros((n_nodes, n_nodes))
    for i, j, d in edges:
        kernel[i, j] = kernel[j, i] = np.exp(-(d / p.kernel_scale) ** 2)
    rowsum = kernel.sum(axis=1, keepdims=True)
    mix = np.divide(kernel, rowsum, out=np.zeros_like(kernel), where=rowsum > 0)
    step = p.ar * ((1 - p.diffusion) * np.eye(n_nodes) + p.diffusion * mix)

    patterns = rng.integers(0, p.n_patterns, size=n_nodes)
    phases = rng.uniform(0, 2 * np.pi, size=p.n_patterns)
    shapes = rng.uniform(0.2, 0.6, size=p.n_patterns)
    amp = rng.uniform(*p.amplitude, size=n_nodes)
    base = rng.uniform(*p.base, size=n_nodes)
    t = np.arange(n_steps)
    forcing = base + amp * np.stack(
        [daily_profile(t, p.period, phases[c], shapes[c]) for c in patterns], axis=1
    )

    latent = np.zeros((n_steps, n_nodes))
    z = np.zeros(n_nodes)
    shocks = rng.standard_normal((n_steps, n_nodes)) * p.latent_noise
    for k in range(n_steps):
        z = step @ z + shocks[k]
        latent[k] = z
    obs = forcing + latent + rng.standard_normal((n_steps, n_nodes)) * p.obs_noise
    return SyntheticDataset(series=obs, forcing=forcing, network=net, positions=pos, patterns=patterns, params=p)


def autocorrelation(x: np.ndarray, lag: int) -> float:
    x = np.asarray(x, float) - np.mean(x)
    return float(np.dot(x[:-lag], x[lag:]) / np.dot(x, x))
