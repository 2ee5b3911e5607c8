"""STGODE network: TCN -> graph ODE -> TCN blocks, max-pooled, with an MLP head."""

from __future__ import annotations

import dataclasses
import io
import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from stgode.errors import ShapeError, ValidationError
from stgode.ode import EIG_MAX, EIG_MIN, euler_integrate, taylor_rhs
from stgode.tcn import TcnStack, receptive_field
from stgode.tensor import mode_product

DTYPE = torch.float64
CHECKPOINT_FORMAT = "stgode-checkpoint/1"


@dataclass
class ModelConfig:
    n_nodes: int
    history: int = 12
    horizon: int = 12
    in_features: int = 1
    channels: tuple[int, int, int] = (64, 32, 64)
    blocks_per_kind: int = 3
    n_layers: int = 2
    kernel_size: int = 2
    t_end: float = 1.0
    steps: int = 6
    head_hidden: int = 256
    alpha: float = 0.8
    sigma: float = 10.0
    epsilon_spatial: float = 0.5
    epsilon_semantic: float = 0.6
    huber_delta: float = 1.0
    use_semantic: bool = True
    # "ode" is the model proper; "gcn" swaps each solver for stacked graph convolutions.
    spatial_op: str = "ode"
    gcn_depth: int = 1
    eig_init: tuple[float, float] = (0.5, 0.95)
    seed: int = 0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.eig_init = tuple(float(v) for v in self.eig_init)
        for name in ("n_nodes", "history", "horizon", "in_features", "blocks_per_kind", "n_layers",
                     "kernel_size", "steps", "head_hidden", "gcn_depth"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if len(self.channels) != 3 or min(self.channels) < 1:
            raise ValidationError(f"channels must be three positive widths, got {self.channels}")
        if not self.t_end > 0:
            raise ValidationError(f"t_end must be positive, got {self.t_end}")
        if not 0 < self.alpha < 1:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.huber_delta > 0:
            raise ValidationError(f"huber_delta must be positive, got {self.huber_delta}")
        if self.spatial_op not in ("ode", "gcn"):
            raise ValidationError(f"spatial_op must be 'ode' or 'gcn', got {self.spatial_op!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValidationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def orthogonalize(m: torch.Tensor) -> torch.Tensor:
    q, r = torch.linalg.qr(m)
    signs = torch.where(torch.diagonal(r) < 0, -1.0, 1.0).to(m.dtype)
    return (q * signs).contiguous()


class FactoredParam(nn.Module):
    """Learnable ``basis @ diag(clamp(eigvals)) @ basis.T`` with eigenvalues kept in (0, 1)."""

    def __init__(self, n: int, eig_init=(0.5, 0.95)):
        super().__init__()
        self.basis = nn.Parameter(orthogonalize(torch.randn(n, n, dtype=DTYPE)))
        lo, hi = eig_init
        self.eigvals = nn.Parameter(lo + (hi - lo) * torch.rand(n, dtype=DTYPE))

    def matrix(self) -> torch.Tensor:
        lam = self.eigvals.clamp(EIG_MIN, EIG_MAX)
        return (self.basis * lam) @ self.basis.T

    @torch.no_grad()
    def reproject_(self):
        self.basis.copy_(orthogonalize(self.basis))
        self.eigvals.clamp_(EIG_MIN, EIG_MAX)


class OdeSolver(nn.Module):
    """Euler-integrated tensor graph ODE started from its own input."""

    def __init__(self, a_hat: torch.Tensor, history: int, width: int, t_end: float, steps: int, eig_init):
        super().__init__()
        self.register_buffer("a_hat", a_hat.clone())
        self.u = FactoredParam(history, eig_init)
        self.w = FactoredParam(width, eig_init)
        self.t_end = float(t_end)
        self.steps = int(steps)

    def forward(self, h0):
        a, u, w = self.a_hat, self.u.matrix(), self.w.matrix()
        return euler_integrate(lambda h: taylor_rhs(h, a, u, w, h0), h0, self.t_end, self.steps)


class GcnStack(nn.Module):
    """``depth`` stacked ``tanh(A H W)`` layers; the over-smoothing ablation."""

    def __init__(self, a_hat: torch.Tensor, width: int, depth: int):
        super().__init__()
        self.register_buffer("a_hat", a_hat.clone())
        bound = 1 / np.sqrt(width)
        self.weights = nn.ParameterList(
            nn.Parameter(torch.empty(width, width, dtype=DTYPE).uniform_(-bound, bound)) for _ in range(depth)
        )

    def forward(self, h):
        for w in self.weights:
            h = torch.tanh(mode_product(mode_product(h, self.a_hat, 1), w, 3))
        return h


class StgodeBlock(nn.Module):
    def __init__(self, cfg: ModelConfig, in_channels: int, a_hat: torch.Tensor):
        super().__init__()
        c_ode, c_mid, c_out = cfg.channels
        self.tcn_in = TcnStack([in_channels, c_ode, c_ode], kernel_size=cfg.kernel_size)
        if cfg.spatial_op == "ode":
            self.spatial = OdeSolver(a_hat, cfg.history, c_ode, cfg.t_end, cfg.steps, cfg.eig_init)
        else:
            self.spatial = GcnStack(a_hat, c_ode, cfg.gcn_depth)
        self.tcn_out = TcnStack([c_ode, c_mid, c_out], kernel_size=cfg.kernel_size)

    def forward(self, x):
        return block_forward(x, self)


def block_forward(x, block: StgodeBlock):
    return block.tcn_out(block.spatial(block.tcn_in(x)))


def layer_forward(x, blocks):
    """Elementwise max over the outputs of parallel blocks."""
    if len(blocks) == 0:
        raise ValidationError("a layer needs at least one block")
    out = blocks[0](x)
    for b in list(blocks)[1:]:
        out = torch.maximum(out, b(x))
    return out


def _as_adjacency_tensor(a, n_nodes, name) -> torch.Tensor:
    if a is None:
        return None
    arr = getattr(a, "a_hat", a)
    t = torch.as_tensor(np.asarray(arr, dtype=np.float64), dtype=DTYPE)
    if tuple(t.shape) != (n_nodes, n_nodes):
        raise ShapeError(f"{name} adjacency has shape {tuple(t.shape)}, config says {n_nodes} nodes")
    return t


class StgodeNetwork(nn.Module):
    """Two cascaded layers of parallel blocks, max-pooled, then a per-node MLP head.

    ``spatial`` and ``semantic`` are regularized adjacencies (or their
    matrices).  Semantic blocks are skipped when ``semantic`` is ``None`` or
    ``cfg.use_semantic`` is off.
    """

    def __init__(self, cfg: ModelConfig, spatial, semantic=None):
        super().__init__()
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        a_sp = _as_adjacency_tensor(spatial, cfg.n_nodes, "spatial")
        a_se = _as_adjacency_tensor(semantic, cfg.n_nodes, "semantic") if cfg.use_semantic else None
        self.adjacency_kinds = ["spatial"] + (["semantic"] if a_se is not None else [])
        self.layers = nn.ModuleList()
        in_ch = cfg.in_features
        for _ in range(cfg.n_layers):
            blocks = nn.ModuleList()
            for a in (a_sp, a_se):
                if a is None:
                    continue
                for _ in range(cfg.blocks_per_kind):
                    blocks.append(StgodeBlock(cfg, in_ch, a))
            self.layers.append(blocks)
            in_ch = cfg.channels[-1]
        self.head_hidden = nn.Linear(cfg.history * in_ch, cfg.head_hidden, dtype=DTYPE)
        self.head_out = nn.Linear(cfg.head_hidden, cfg.horizon, dtype=DTYPE)
        if receptive_field(self.layers[0][0].tcn_in) > cfg.history:
            import warnings

            warnings.warn("TCN receptive field exceeds the history length", stacklevel=2)

    def forward(self, x):
        return forecast(self, x)

    def factored_params(self):
        return [m for m in self.modules() if isinstance(m, FactoredParam)]

    def reproject_(self):
        for fp in self.factored_params():
            fp.reproject_()


def forecast(m: StgodeNetwork, x) -> torch.Tensor:
    """``(B, N, T, F)`` (or unbatched ``(N, T, F)``) -> ``(B, N, T', 1)``."""
    x = torch.as_tensor(x, dtype=DTYPE)
    squeeze = x.ndim == 3
    if squeeze:
        x = x.unsqueeze(0)
    cfg = m.cfg
    expected = (cfg.n_nodes, cfg.history, cfg.in_features)
    if x.ndim != 4 or tuple(x.shape[1:]) != expected:
        raise ValidationError(f"input shape {tuple(x.shape)} does not match (batch, N, T, F) = (*, {expected})")
    h = x
    for blocks in m.layers:
        h = layer_forward(h, blocks)
    flat = h.reshape(*h.shape[:2], -1)
    out = m.head_out(torch.tanh(m.head_hidden(flat))).unsqueeze(-1)
    return out[0] if squeeze else out


def save_checkpoint(path, model: StgodeNetwork, extra: dict | None = None):
    """Write config, adjacencies and every weight to one ``.npz`` file, atomically.

    Key schema: ``__meta__`` holds UTF-8 JSON with ``format``, ``config`` and
    ``extra``; ``adjacency/spatial`` and ``adjacency/semantic`` hold the
    regularized matrices; ``param/<dotted state_dict name>`` holds each tensor.
    """
    meta = {"format": CHECKPOINT_FORMAT, "config": model.cfg.to_dict(), "extra": extra or {}}
    arrays = {"__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    arrays["adjacency/spatial"] = model.layers[0][0].spatial.a_hat.numpy()
    if "semantic" in model.adjacency_kinds:
        arrays["adjacency/semantic"] = model.layers[0][model.cfg.blocks_per_kind].spatial.a_hat.numpy()
    for name, tensor in model.state_dict().items():
        arrays[f"param/{name}"] = tensor.detach().numpy()
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path) -> tuple[StgodeNetwork, dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValidationError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        cfg = ModelConfig.from_dict(meta["config"])
        spatial = z["adjacency/spatial"]
        semantic = z["adjacency/semantic"] if "adjacency/semantic" in z.files else None
        state = {k[len("param/"):]: torch.from_numpy(z[k].copy()) for k in z.files if k.startswith("param/")}
    model = StgodeNetwork(cfg, spatial, semantic)
    model.load_state_dict(state, strict=True)
    return model, meta.get("extra", {})


def atomic_write_bytes(path, data: bytes):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
