import numpy as np
import pytest
import torch
import torch.nn.functional as F

from stgode.errors import ShapeError, ValidationError
from stgode.tcn import TcnLayer, TcnStack, dilated_conv1d, receptive_field, tcn_forward


def set_layer(layer, weight, bias=0.0):
    with torch.no_grad():
        layer.weight.copy_(torch.as_tensor(weight, dtype=torch.float64).reshape(layer.weight.shape))
        layer.bias.fill_(bias)
    return layer


def series(values):
    return torch.tensor(values, dtype=torch.float64).reshape(1, -1, 1)


def test_width_one_identity():
    layer = set_layer(TcnLayer(1, 1, 1, activation="linear"), [1.0])
    x = series([1.0, 2, 3, 4])
    assert torch.equal(dilated_conv1d(x, layer), x)


def test_hand_convolution_dilation_one():
    layer = set_layer(TcnLayer(1, 1, 2, 1, "linear"), [1.0, 1.0])
    assert dilated_conv1d(series([1.0, 2, 3, 4]), layer).flatten().tolist() == [1, 3, 5, 7]


def test_hand_convolution_dilation_two():
    layer = set_layer(TcnLayer(1, 1, 2, 2, "linear"), [1.0, 1.0])
    assert dilated_conv1d(series([1.0, 2, 3, 4]), layer).flatten().tolist() == [1, 2, 4, 6]


def test_tap_order_is_causal():
    # the last tap multiplies the current step, the first the oldest
    layer = set_layer(TcnLayer(1, 1, 2, 1, "linear"), [10.0, 1.0])
    assert dilated_conv1d(series([1.0, 2, 3]), layer).flatten().tolist() == [1, 12, 23]


def test_no_future_leakage():
    torch.manual_seed(0)
    stack = TcnStack([2, 5, 3], kernel_size=3)
    x = torch.randn(4, 10, 2, dtype=torch.float64)
    y = x.clone()
    y[:, 6:] = torch.randn(4, 4, 2, dtype=torch.float64)
    assert torch.allclose(stack(x)[:, :6], stack(y)[:, :6])


@pytest.mark.parametrize("k,d", [(2, 1), (2, 4), (3, 2)])
def test_matches_torch_conv1d(k, d):
    torch.manual_seed(1)
    layer = TcnLayer(3, 4, k, d, "linear")
    x = torch.randn(2, 5, 9, 3, dtype=torch.float64)
    flat = x.reshape(-1, 9, 3).transpose(1, 2)
    ref = F.conv1d(F.pad(flat, ((k - 1) * d, 0)), layer.weight, layer.bias, dilation=d)
    ref = ref.transpose(1, 2).reshape(2, 5, 9, 4)
    assert torch.allclose(dilated_conv1d(x, layer), ref, atol=1e-13)


def test_zero_kernels_pure_residual():
    stack = TcnStack([3, 3, 3], activation="linear")
    for layer in stack.layers:
        set_layer(layer, np.zeros(layer.weight.shape))
    x = torch.randn(2, 6, 3, dtype=torch.float64)
    assert torch.equal(tcn_forward(x, stack), x)


def test_identity_kernel_plus_residual_doubles():
    stack = TcnStack([1, 1], kernel_size=1, activation="linear")
    set_layer(stack.layers[0], [1.0])
    x = series([1.0, -2, 3])
    assert torch.equal(stack(x), 2 * x)


def test_receptive_field():
    stack = TcnStack([1, 1, 1, 1], kernel_size=2)
    assert [layer.dilation for layer in stack.layers] == [1, 2, 4]
    assert receptive_field(stack) == 8


def test_projection_when_channels_differ():
    stack = TcnStack([1, 4, 3])
    assert stack.residual_projection is not None
    assert stack(torch.zeros(2, 5, 1, dtype=torch.float64)).shape == (2, 5, 3)


def test_errors():
    with pytest.raises(ShapeError):
        dilated_conv1d(torch.zeros(3, 2, dtype=torch.float64), TcnLayer(2, 2))
    with pytest.raises(ShapeError):
        dilated_conv1d(torch.zeros(1, 3, 3, dtype=torch.float64), TcnLayer(2, 2))
    with pytest.raises(ValidationError):
        TcnLayer(1, 1, activation="relu6")
    with pytest.raises(ValidationError):
        TcnStack([1, 2], dilations=[1, 2])
