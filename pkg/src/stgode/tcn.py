"""Dilated causal temporal convolutions over ``(..., nodes, time, channels)`` tensors."""

from __future__ import annotations

import math
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from stgode.errors import ShapeError, ValidationError

ACTIVATIONS = {"tanh": torch.tanh, "linear": lambda z: z}


class TcnLayer(nn.Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int = 2,
        dilation: int = 1,
        activation: str = "tanh",
        dtype=torch.float64,
    ):
        super().__init__()
        if kernel_size < 1 or dilation < 1:
            raise ValidationError("kernel_size and dilation must be >= 1")
        if activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {activation!r}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.dilation = dilation
        self.activation = activation
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, kernel_size, dtype=dtype))
        self.bias = nn.Parameter(torch.empty(out_channels, dtype=dtype))
        self.reset_parameters()

    def reset_parameters(self):
        # same scheme as torch.nn.Conv1d
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))
        bound = 1 / math.sqrt(self.in_channels * self.kernel_size)
        nn.init.uniform_(self.bias, -bound, bound)

    def forward(self, x):
        return dilated_conv1d(x, self)

    def extra_repr(self):
        return (
            f"{self.in_channels}, {self.out_channels}, kernel_size={self.kernel_size}, "
            f"dilation={self.dilation}, activation={self.activation}"
        )


def dilated_conv1d(x: torch.Tensor, layer: TcnLayer) -> torch.Tensor:
    """Causal dilated convolution along the time axis (second to last).

    The sequence is left-padded with ``(kernel_size - 1) * dilation`` zeros so
    the output keeps the input length and never sees the future.
    """
    if x.ndim < 3:
        raise ShapeError(f"expected (..., nodes, time, channels), got shape {tuple(x.shape)}")
    if x.shape[-1] != layer.in_channels:
        raise ShapeError(f"layer expects {layer.in_channels} input channels, got {x.shape[-1]}")
    t = x.shape[-2]
    k, d = layer.kernel_size, layer.dilation
    # pad the time axis on the left only; tap k-1 lines up with the current step
    xp = F.pad(x, (0, 0, (k - 1) * d, 0))
    z = layer.bias
    for tap in range(k):
        z = z + xp[..., tap * d : tap * d + t, :] @ layer.weight[:, :, tap].T
    return ACTIVATIONS[layer.activation](z)


class TcnStack(nn.Module):
    """Dilated layers ``channels[0] -> channels[1] -> ...`` plus a residual add.

    Layer ``l`` (1-based) uses dilation ``2**(l-1)`` unless ``dilations`` is
    given.  A linear 1x1 projection is inserted on the residual path when the
    first and last channel counts differ.
    """

    def __init__(
        self,
        channels: Sequence[int],
        kernel_size: int = 2,
        dilations: Sequence[int] | None = None,
        activation: str = "tanh",
        dtype=torch.float64,
    ):
        super().__init__()
        channels = list(channels)
        if len(channels) < 2:
            raise ValidationError("a TCN stack needs at least one layer")
        n_layers = len(channels) - 1
        if dilations is None:
            dilations = [2**i for i in range(n_layers)]
        if len(dilations) != n_layers:
            raise ValidationError(f"{n_layers} layers but {len(dilations)} dilations")
        self.layers = nn.ModuleList(
            TcnLayer(cin, cout, kernel_size, d, activation, dtype=dtype)
            for cin, cout, d in zip(channels[:-1], channels[1:], dilations)
        )
        self.residual_projection = None
        if channels[0] != channels[-1]:
            self.residual_projection = TcnLayer(channels[0], channels[-1], 1, 1, "linear", dtype=dtype)

    @property
    def in_channels(self) -> int:
        return self.layers[0].in_channels

    @property
    def out_channels(self) -> int:
        return self.layers[-1].out_channels

    def forward(self, x):
        return tcn_forward(x, self)


def tcn_forward(x: torch.Tensor, stack: TcnStack) -> torch.Tensor:
    out = x
    for layer in stack.layers:
        out = dilated_conv1d(out, layer)
    res = x if stack.residual_projection is None else dilated_conv1d(x, stack.residual_projection)
    return out + res


def receptive_field(stack: TcnStack) -> int:
    return 1 + sum((layer.kernel_size - 1) * layer.dilation for layer in stack.layers)
