"""Run configuration: ``key = value`` files plus command-line overrides.

Every key has a default.  Model and training defaults follow the published
experimental setup (alpha 0.8, sigma 10, spatial epsilon 0.5, semantic
epsilon 0.6, Adam lr 0.01, batch 32, 200 epochs, TCN widths 64/32/64).

``sigma`` is the Gaussian-kernel width, used as ``exp(-d^2 / sigma^2)``; set
``sigma_squared = true`` to treat the value as the denominator itself.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from stgode.errors import ValidationError
from stgode.model import ModelConfig
from stgode.training import TrainConfig


def _ints(s) -> tuple[int, ...]:
    if isinstance(s, (tuple, list)):
        return tuple(int(v) for v in s)
    return tuple(int(v) for v in str(s).replace(" ", "").split(",") if v)


def _floats(s) -> tuple[float, ...]:
    if isinstance(s, (tuple, list)):
        return tuple(float(v) for v in s)
    return tuple(float(v) for v in str(s).replace(" ", "").split(",") if v)


def _strs(s) -> tuple[str, ...]:
    if isinstance(s, (tuple, list)):
        return tuple(str(v) for v in s)
    return tuple(v.strip() for v in str(s).split(",") if v.strip())


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


@dataclass
class RunConfig:
    # files
    series: str = "data/series.csv"
    extra_features: tuple[str, ...] = ()
    edges: str = "data/edges.csv"
    graph_dir: str = "graph"
    out_dir: str = "run"
    checkpoint: str = ""
    export_raw: bool = False
    # data
    history: int = 12
    horizon: int = 12
    split: tuple[float, ...] = (0.6, 0.2, 0.2)
    # graphs
    alpha: float = 0.8
    sigma: float = 10.0
    sigma_squared: bool = False
    epsilon_spatial: float = 0.5
    epsilon_semantic: float = 0.6
    semantic_band: int = 0
    semantic_top_k: int = 0
    use_semantic: bool = True
    # model
    channels: tuple[int, ...] = (64, 32, 64)
    blocks_per_kind: int = 3
    n_layers: int = 2
    kernel_size: int = 2
    t_end: float = 1.0
    steps: int = 6
    head_hidden: int = 256
    # training
    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 200
    huber_delta: float = 1.0
    seed: int = 0
    workers: int = 1
    # eval
    persistence: bool = False
    # demo
    demo_depths: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    demo_epochs: int = 10
    demo_window_stride: int = 2
    demo_collapse_max: int = 50
    demo_channels: tuple[int, ...] = (8, 4, 8)
    demo_head_hidden: int = 32
    # synth
    n_nodes: int = 20
    n_steps: int = 2000

    def __post_init__(self):
        hints = typing.get_type_hints(type(self))
        for f in dataclasses.fields(self):
            setattr(self, f.name, _coerce(f.name, hints[f.name], getattr(self, f.name)))
        if len(self.split) != 3:
            raise ValidationError(f"split needs three ratios, got {self.split}")
        for name in ("channels", "demo_channels"):
            if len(getattr(self, name)) != 3:
                raise ValidationError(f"{name} needs three widths, got {getattr(self, name)}")
        for name in ("history", "horizon", "steps", "epochs", "batch_size", "n_layers", "blocks_per_kind",
                     "demo_epochs", "demo_window_stride", "workers"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("semantic_band", "semantic_top_k"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0 (0 disables), got {getattr(self, name)}")

    def with_overrides(self, overrides: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(self)}
        unknown = sorted(set(overrides) - names)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        return dataclasses.replace(self, **overrides)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    # derived objects -----------------------------------------------------

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else Path(self.out_dir) / "checkpoint.npz"

    @property
    def band(self):
        return self.semantic_band or None

    @property
    def top_k(self):
        return self.semantic_top_k or None

    def model_config(self, n_nodes: int, in_features: int = 1, **extra) -> ModelConfig:
        kw = dict(
            n_nodes=n_nodes,
            history=self.history,
            horizon=self.horizon,
            in_features=in_features,
            channels=self.channels,
            blocks_per_kind=self.blocks_per_kind,
            n_layers=self.n_layers,
            kernel_size=self.kernel_size,
            t_end=self.t_end,
            steps=self.steps,
            head_hidden=self.head_hidden,
            alpha=self.alpha,
            sigma=self.sigma,
            epsilon_spatial=self.epsilon_spatial,
            epsilon_semantic=self.epsilon_semantic,
            huber_delta=self.huber_delta,
            use_semantic=self.use_semantic,
            seed=self.seed,
        )
        kw.update(extra)
        return ModelConfig(**kw)

    def train_config(self, **extra) -> TrainConfig:
        kw = dict(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            huber_delta=self.huber_delta,
            seed=self.seed,
        )
        kw.update(extra)
        return TrainConfig(**kw)


def _coerce(name, hint, value):
    try:
        if hint is bool:
            return _bool(value)
        if hint is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(f"{value} is not an integer")
            return int(value)
        if hint is float:
            return float(value)
        if hint is str:
            return str(value)
        args = typing.get_args(hint)
        if args and args[0] is int:
            return _ints(value)
        if args and args[0] is float:
            return _floats(value)
        if args and args[0] is str:
            return _strs(value)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"config key {name!r}: {exc}") from None
    return value


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key in out:
            raise ValidationError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values = {}
    if path:
        p = Path(path)
        values.update(parse_config_text(p.read_text(), str(p)))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig().with_overrides(values)


CONFIG_FIELDS = [f.name for f in dataclasses.fields(RunConfig)]
BOOL_FIELDS = [f.name for f in dataclasses.fields(RunConfig) if f.type in ("bool", bool)]
