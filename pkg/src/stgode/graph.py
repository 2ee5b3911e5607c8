"""Spatial and semantic adjacency construction.

Spatial weights use the thresholded Gaussian kernel on road distances,
semantic edges link nodes whose (z-scored) histories are close under dynamic
time warping.  Both end up as a :class:`RegularizedAdjacency`,
``(alpha / 2) * (I + D^-1/2 A D^-1/2)``, whose spectrum sits in ``[0, alpha]``.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from stgode.errors import ShapeError, ValidationError
from stgode.tensor import SymEig, as_matrix, sym_eig

SYMMETRY_TOL = 1e-10
SPECTRUM_TOL = 1e-8


class AdjacencyKind(str, enum.Enum):
    SPATIAL = "spatial"
    SEMANTIC = "semantic"


@dataclass(frozen=True)
class RoadNetwork:
    """Nodes plus undirected, weighted-by-distance edges (by node index)."""

    node_ids: tuple[str, ...]
    edges: tuple[tuple[int, int, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "node_ids", tuple(str(n) for n in self.node_ids))
        object.__setattr__(self, "edges", tuple((int(i), int(j), float(d)) for i, j, d in self.edges))
        n = len(self.node_ids)
        if len(set(self.node_ids)) != n:
            raise ValidationError("duplicate node ids in road network")
        seen = set()
        for i, j, d in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise ValidationError(f"edge ({i}, {j}) references a node outside 0..{n - 1}")
            if not math.isfinite(d) or d < 0:
                raise ValidationError(f"edge ({i}, {j}) has invalid distance {d}")
            if (i, j) in seen:
                raise ValidationError(f"duplicate edge ({i}, {j})")
            seen.add((i, j))

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)


@dataclass(frozen=True)
class RegularizedAdjacency:
    a_hat: np.ndarray
    alpha: float
    kind: AdjacencyKind = AdjacencyKind.SPATIAL
    eig: SymEig = field(default=None, repr=False)

    def __post_init__(self):
        a = as_matrix(self.a_hat, "a_hat")
        if a.shape[0] != a.shape[1]:
            raise ShapeError(f"a_hat must be square, got {a.shape}")
        if np.abs(a - a.T).max() > SYMMETRY_TOL:
            raise ValidationError("a_hat is not symmetric")
        object.__setattr__(self, "a_hat", a)
        object.__setattr__(self, "kind", AdjacencyKind(self.kind))
        if self.eig is None:
            object.__setattr__(self, "eig", sym_eig(a))
        lo, hi = self.eig.values.min(), self.eig.values.max()
        if lo < -SPECTRUM_TOL or hi > self.alpha + SPECTRUM_TOL:
            raise ValidationError(
                f"{self.kind.value} adjacency spectrum [{lo:.6g}, {hi:.6g}] outside [0, {self.alpha}]"
            )

    @property
    def n_nodes(self) -> int:
        return self.a_hat.shape[0]


def spatial_adjacency(net: RoadNetwork, sigma: float, epsilon: float, sigma_squared: bool = False) -> np.ndarray:
    """Thresholded Gaussian kernel ``exp(-d^2 / sigma^2)`` over the road edges.

    With ``sigma_squared=True`` the ``sigma`` argument is taken to already be
    the kernel denominator (``exp(-d^2 / sigma)``).  Directed edge pairs are
    symmetrized by keeping the larger weight; the diagonal is zero.
    """
    if not sigma > 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    if not 0 <= epsilon <= 1:
        raise ValidationError(f"epsilon must lie in [0, 1], got {epsilon}")
    denom = sigma if sigma_squared else sigma * sigma
    n = net.n_nodes
    a = np.zeros((n, n))
    for i, j, d in net.edges:
        if i == j:
            continue
        w = math.exp(-(d * d) / denom)
        if w >= epsilon:
            a[i, j] = max(a[i, j], w)
            a[j, i] = max(a[j, i], w)
    return a


def normalize(a) -> np.ndarray:
    """Symmetric degree normalization ``D^-1/2 A D^-1/2``; isolated nodes give zero rows."""
    a = as_matrix(a, "adjacency")
    if a.shape[0] != a.shape[1]:
        raise ValidationError(f"adjacency must be square, got {a.shape}")
    if (a < 0).any():
        raise ValidationError("adjacency has negative entries")
    if np.abs(a - a.T).max() > SYMMETRY_TOL:
        raise ValidationError("adjacency is not symmetric")
    deg = a.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    out = inv_sqrt[:, None] * a * inv_sqrt[None, :]
    return 0.5 * (out + out.T)


def regularize(a_tilde, alpha: float, kind: AdjacencyKind | str = AdjacencyKind.SPATIAL) -> RegularizedAdjacency:
    if not 0 < alpha < 1:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    a = as_matrix(a_tilde, "normalized adjacency")
    if a.shape[0] != a.shape[1]:
        raise ValidationError(f"normalized adjacency must be square, got {a.shape}")
    eig = sym_eig(a)
    radius = np.abs(eig.values).max()
    if radius > 1 + SPECTRUM_TOL:
        raise ValidationError(f"normalized adjacency has spectral radius {radius:.6g} > 1")
    a_hat = 0.5 * alpha * (np.eye(a.shape[0]) + a)
    # Same eigenvectors, affinely mapped eigenvalues.
    shifted = SymEig(vectors=eig.vectors, values=0.5 * alpha * (1.0 + eig.values))
    return RegularizedAdjacency(a_hat=a_hat, alpha=alpha, kind=kind, eig=shifted)


def build_regularized(a, alpha: float, kind=AdjacencyKind.SPATIAL) -> RegularizedAdjacency:
    return regularize(normalize(a), alpha, kind)


@numba.njit(cache=True, nogil=True)
def _dtw_table(x, y, band):
    m, n = x.shape[0], y.shape[0]
    inf = np.inf
    cost = np.full((m + 1, n + 1), inf)
    length = np.zeros((m + 1, n + 1), dtype=np.int64)
    cost[0, 0] = 0.0
    for i in range(1, m + 1):
        lo = 1
        hi = n
        if band >= 0:
            lo = max(1, i - band)
            hi = min(n, i + band)
        for j in range(lo, hi + 1):
            # ties prefer the diagonal move, which gives the shorter path
            best = cost[i - 1, j - 1]
            blen = length[i - 1, j - 1]
            if cost[i - 1, j] < best:
                best = cost[i - 1, j]
                blen = length[i - 1, j]
            if cost[i, j - 1] < best:
                best = cost[i, j - 1]
                blen = length[i, j - 1]
            cost[i, j] = abs(x[i - 1] - y[j - 1]) + best
            length[i, j] = blen + 1
    return cost[m, n], length[m, n]


def _check_series(x, name):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValidationError(f"{name} is empty")
    return arr


def dtw(x, y, band: int | None = None) -> tuple[float, int]:
    """DTW cost with absolute-difference local distance, plus the optimal path length.

    ``band`` is a Sakoe-Chiba half-width: cells with ``|i - j| > band`` are
    excluded.
    """
    x = _check_series(x, "x")
    y = _check_series(y, "y")
    if band is not None:
        if band < 0 or band < abs(len(x) - len(y)):
            raise ValidationError(
                f"band {band} is smaller than the length difference {abs(len(x) - len(y))}"
            )
    cost, length = _dtw_table(x, y, -1 if band is None else int(band))
    return float(cost), int(length)


def dtw_distance(x, y, band: int | None = None) -> float:
    return dtw(x, y, band)[0]


def zscore_rows(series: np.ndarray) -> np.ndarray:
    mean = series.mean(axis=1, keepdims=True)
    std = series.std(axis=1, keepdims=True)
    std = np.where(std > 0, std, 1.0)
    return (series - mean) / std


def dtw_matrix(series, band: int | None = None, workers: int = 1) -> np.ndarray:
    """Pairwise path-length-normalized DTW distances between rows of ``series``."""
    s = np.asarray(series, dtype=np.float64)
    n = s.shape[0]
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]

    def one(pair):
        i, j = pair
        cost, length = dtw(s[i], s[j], band)
        return cost / length

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(one, pairs))
    else:
        values = [one(p) for p in pairs]
    out = np.zeros((n, n))
    for (i, j), v in zip(pairs, values):
        out[i, j] = out[j, i] = v
    return out


def semantic_adjacency(
    series,
    epsilon: float,
    band: int | None = None,
    top_k: int | None = None,
    workers: int = 1,
    standardize: bool = True,
) -> np.ndarray:
    """Binary DTW-similarity graph over node histories.

    ``series`` is ``(nodes, time)``.  Each row is z-scored (unless
    ``standardize`` is off), DTW costs are divided by the optimal warping-path
    length, and pairs below ``epsilon`` are linked.  With ``top_k`` each node
    instead links to its ``top_k`` nearest neighbours (then symmetrized) and
    ``epsilon`` is ignored.  The diagonal is always zero.
    """
    if not isinstance(series, np.ndarray):
        lengths = {len(row) for row in series}
        if len(lengths) > 1:
            raise ValidationError(f"node series have mismatched lengths {sorted(lengths)}")
    s = np.asarray(series, dtype=np.float64)
    if s.ndim != 2:
        raise ValidationError(f"series must be (nodes, time), got shape {s.shape}")
    if s.shape[1] < 2:
        raise ValidationError("semantic adjacency needs series of length >= 2")
    if top_k is None and not epsilon > 0:
        raise ValidationError(f"semantic epsilon must be positive, got {epsilon}")
    if standardize:
        s = zscore_rows(s)
    dist = dtw_matrix(s, band=band, workers=workers)
    n = s.shape[0]
    a = np.zeros((n, n))
    if top_k is not None:
        if top_k < 1:
            raise ValidationError(f"top_k must be >= 1, got {top_k}")
        for i in range(n):
            order = [j for j in np.argsort(dist[i], kind="stable") if j != i][:top_k]
            a[i, order] = 1.0
        a = np.maximum(a, a.T)
    else:
        a[dist < epsilon] = 1.0
    np.fill_diagonal(a, 0.0)
    return a

