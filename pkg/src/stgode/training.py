"""Loss, gradients, optimizer, data windows, metrics and the training loop."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from stgode.errors import NonFiniteError, ShapeError, ValidationError
from stgode.model import DTYPE, StgodeNetwork

log = logging.getLogger(__name__)

MAPE_MASK = 1e-3


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 200
    huber_delta: float = 1.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        for name in ("learning_rate", "huber_delta", "adam_eps"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("batch_size", "epochs"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("Adam moment decays must lie in [0, 1)")


# ---------------------------------------------------------------- loss


def huber_loss(pred, target, delta: float = 1.0):
    """Mean Huber loss: ``e^2 / 2`` inside ``|e| <= delta``, ``delta |e| - delta^2 / 2`` outside."""
    pred = torch.as_tensor(pred, dtype=DTYPE)
    target = torch.as_tensor(target, dtype=DTYPE)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {tuple(pred.shape)} != target shape {tuple(target.shape)}")
    if not delta > 0:
        raise ValidationError(f"delta must be positive, got {delta}")
    err = (pred - target).abs()
    quad = 0.5 * err * err
    lin = delta * err - 0.5 * delta * delta
    return torch.where(err <= delta, quad, lin).mean()


# ---------------------------------------------------------------- data


@dataclass
class Normalizer:
    """Per-feature z-score fitted on the training split."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, series: np.ndarray) -> "Normalizer":
        # series: (time, nodes, features)
        mean = series.mean(axis=(0, 1))
        std = series.std(axis=(0, 1))
        std = np.where(std > 0, std, 1.0)
        return cls(mean=mean, std=std)

    def transform(self, x):
        return (x - self.mean) / self.std

    def inverse(self, x, feature: int | None = None):
        if feature is None:
            return x * self.std + self.mean
        return x * self.std[feature] + self.mean[feature]

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(mean=np.asarray(d["mean"], float), std=np.asarray(d["std"], float))


@dataclass
class WindowBatch:
    """Sliding windows: ``inputs`` (B, N, T, F), ``targets`` (B, N, T', 1), both normalized.

    ``starts[b]`` is the absolute time index of the first input step of window b.
    """

    inputs: np.ndarray
    targets: np.ndarray
    starts: np.ndarray

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, idx) -> "WindowBatch":
        return WindowBatch(self.inputs[idx], self.targets[idx], self.starts[idx])


@dataclass
class DataSplits:
    train: WindowBatch
    val: WindowBatch
    test: WindowBatch
    normalizer: Normalizer
    boundaries: tuple[int, int]
    n_steps: int

    def counts(self) -> dict:
        return {"train": len(self.train), "val": len(self.val), "test": len(self.test)}


def split_boundaries(n_steps: int, ratios=(0.6, 0.2, 0.2)) -> tuple[int, int]:
    if len(ratios) != 3 or min(ratios) < 0 or not math.isclose(sum(ratios), 1.0):
        raise ValidationError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    a = int(round(n_steps * ratios[0]))
    b = int(round(n_steps * (ratios[0] + ratios[1])))
    return a, b


def make_windows(series: np.ndarray, history: int, horizon: int, offset: int = 0) -> WindowBatch:
    """All windows fully inside ``series`` (time, nodes, features); target is feature 0."""
    length = series.shape[0]
    count = length - history - horizon + 1
    if count < 1:
        raise ValidationError(
            f"segment of length {length} is shorter than history + horizon = {history + horizon}"
        )
    idx = np.arange(count)[:, None] + np.arange(history + horizon)[None, :]
    win = series[idx]  # (B, T+T', N, F)
    inputs = np.ascontiguousarray(win[:, :history].transpose(0, 2, 1, 3))
    targets = np.ascontiguousarray(win[:, history:, :, :1].transpose(0, 2, 1, 3))
    return WindowBatch(inputs, targets, np.arange(count) + offset)


def split_and_window(series, history: int = 12, horizon: int = 12, ratios=(0.6, 0.2, 0.2)) -> DataSplits:
    """Chronological split, z-score with train statistics, windows built inside each split."""
    s = np.asarray(series, dtype=np.float64)
    if s.ndim == 2:
        s = s[:, :, None]
    if s.ndim != 3:
        raise ShapeError(f"series must be (time, nodes[, features]), got shape {s.shape}")
    if s.shape[0] < history + horizon:
        raise ValidationError(f"series of length {s.shape[0]} is shorter than history + horizon")
    a, b = split_boundaries(s.shape[0], ratios)
    norm = Normalizer.fit(s[:a])
    z = norm.transform(s)
    parts = []
    for lo, hi in ((0, a), (a, b), (b, s.shape[0])):
        parts.append(make_windows(z[lo:hi], history, horizon, offset=lo))
    return DataSplits(*parts, normalizer=norm, boundaries=(a, b), n_steps=s.shape[0])


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator | None = None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


# ---------------------------------------------------------------- metrics


def metrics(pred, target) -> dict:
    """RMSE, MAE and masked MAPE (percent) over all entries, in the units given."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    err = pred - target
    mask = np.abs(target) > MAPE_MASK
    mape = float(np.mean(np.abs(err[mask] / target[mask])) * 100) if mask.any() else None
    return {
        "rmse": float(np.sqrt(np.mean(err * err))),
        "mae": float(np.mean(np.abs(err))),
        "mape": mape,
    }


def per_step_metrics(pred, target) -> list[dict]:
    """Metrics per horizon step for arrays shaped (B, N, T', 1)."""
    return [metrics(pred[:, :, k], target[:, :, k]) for k in range(pred.shape[2])]


# ---------------------------------------------------------------- gradients


def _first_nonfinite(model: StgodeNetwork, inputs) -> str:
    found = []

    def hook(name):
        def fn(module, args, out):
            if not found and isinstance(out, torch.Tensor) and not torch.isfinite(out).all():
                found.append(name)

        return fn

    for name, p in model.named_parameters():
        if not torch.isfinite(p).all():
            return f"parameter {name}"
    handles = [m.register_forward_hook(hook(n or "model")) for n, m in model.named_modules()]
    try:
        with torch.no_grad():
            model(inputs)
    finally:
        for h in handles:
            h.remove()
    return f"output of {found[0]}" if found else "loss"


def compute_gradients(model: StgodeNetwork, inputs, targets, delta: float = 1.0, scale: float = 1.0):
    """Huber loss and its gradient w.r.t. every parameter, via reverse mode through the unrolled solver.

    Returns ``(loss, {name: grad array})``.
    """
    inputs = torch.as_tensor(inputs, dtype=DTYPE)
    targets = torch.as_tensor(targets, dtype=DTYPE)
    if not torch.isfinite(inputs).all():
        raise NonFiniteError("non-finite values in the input batch")
    model.zero_grad(set_to_none=True)
    loss = scale * huber_loss(model(inputs), targets, delta)
    if not torch.isfinite(loss):
        raise NonFiniteError(f"non-finite loss; first non-finite tensor: {_first_nonfinite(model, inputs)}")
    loss.backward()
    grads = {}
    for name, p in model.named_parameters():
        g = p.grad if p.grad is not None else torch.zeros_like(p)
        if not torch.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {name}")
        grads[name] = g.detach().clone()
    return float(loss.detach()), grads


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@torch.no_grad()
def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig) -> AdamState:
    """Bias-corrected Adam update, applied in place to the tensors in ``params``."""
    state.step += 1
    bc1 = 1.0 - cfg.beta1**state.step
    bc2 = 1.0 - cfg.beta2**state.step
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = torch.zeros_like(p)
            state.v[name] = torch.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m.mul_(cfg.beta1).add_(g, alpha=1 - cfg.beta1)
        v.mul_(cfg.beta2).addcmul_(g, g, value=1 - cfg.beta2)
        denom = (v / bc2).sqrt_().add_(cfg.adam_eps)
        p.sub_(cfg.learning_rate * (m / bc1) / denom)
    return state


def optimizer_step(model: StgodeNetwork, grads: dict, state: AdamState, cfg: TrainConfig) -> AdamState:
    """Adam on every parameter, then pull the factored transforms back onto their constraint set."""
    state = adam_step(dict(model.named_parameters()), grads, state, cfg)
    model.reproject_()
    return state


# ---------------------------------------------------------------- loop


def predict(model: StgodeNetwork, inputs, batch_size: int = 256) -> np.ndarray:
    outs = []
    with torch.no_grad():
        for i in range(0, len(inputs), batch_size):
            outs.append(model(torch.as_tensor(inputs[i : i + batch_size], dtype=DTYPE)).numpy())
    if not outs:
        return np.zeros((0, model.cfg.n_nodes, model.cfg.horizon, 1))
    return np.concatenate(outs, axis=0)


def evaluate_loss(model, windows: WindowBatch, delta: float) -> float:
    pred = predict(model, windows.inputs)
    return float(huber_loss(pred, windows.targets, delta))


def evaluate(model, windows: WindowBatch, normalizer: Normalizer) -> dict:
    """Metrics in original units, averaged over the horizon, plus per-step metrics."""
    pred = normalizer.inverse(predict(model, windows.inputs), 0)
    true = normalizer.inverse(windows.targets, 0)
    out = metrics(pred, true)
    out["per_step"] = per_step_metrics(pred, true)
    return out


def persistence_forecast(windows: WindowBatch, horizon: int) -> np.ndarray:
    """Repeat the last observed value of feature 0 across the horizon (normalized units)."""
    last = windows.inputs[:, :, -1:, :1]
    return np.repeat(last, horizon, axis=2)


def evaluate_persistence(windows: WindowBatch, normalizer: Normalizer, horizon: int) -> dict:
    pred = normalizer.inverse(persistence_forecast(windows, horizon), 0)
    true = normalizer.inverse(windows.targets, 0)
    out = metrics(pred, true)
    out["per_step"] = per_step_metrics(pred, true)
    return out


@dataclass
class TrainResult:
    history: list
    best_epoch: int
    best_val_loss: float
    best_state: dict

    def history_dicts(self):
        return [dict(h) for h in self.history]


def train(model: StgodeNetwork, splits: DataSplits, cfg: TrainConfig, progress=None) -> TrainResult:
    """Minibatch Adam with shuffled training windows; keeps the best-validation weights.

    The model is left holding the best-validation weights on return.
    """
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    history = []
    best = (math.inf, 0, None)
    train_w = splits.train
    for epoch in range(1, cfg.epochs + 1):
        total, count = 0.0, 0
        for idx in iterate_batches(len(train_w), cfg.batch_size, rng):
            loss, grads = compute_gradients(model, train_w.inputs[idx], train_w.targets[idx], cfg.huber_delta)
            state = optimizer_step(model, grads, state, cfg)
            total += loss * len(idx)
            count += len(idx)
        val_loss = evaluate_loss(model, splits.val, cfg.huber_delta)
        entry = {"epoch": epoch, "train_loss": total / count, "val_loss": val_loss}
        history.append(entry)
        if val_loss < best[0]:
            best = (val_loss, epoch, {k: v.detach().clone() for k, v in model.state_dict().items()})
        log.info("epoch %d train %.5f val %.5f", epoch, entry["train_loss"], val_loss)
        if progress is not None:
            progress(entry)
    model.load_state_dict(best[2])
    return TrainResult(history=history, best_epoch=best[1], best_val_loss=best[0], best_state=best[2])


def config_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)
