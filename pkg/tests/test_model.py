import numpy as np
import pytest
import torch

from stgode.errors import ShapeError, ValidationError
from stgode.graph import build_regularized
from stgode.model import (
    EIG_MAX,
    EIG_MIN,
    ModelConfig,
    StgodeNetwork,
    block_forward,
    forecast,
    layer_forward,
    load_checkpoint,
    save_checkpoint,
)
from stgode.ode import euler_integrate, taylor_rhs
from stgode.tcn import tcn_forward
from stgode.verify import random_graph

N = 5


def small_config(**kw):
    base = dict(n_nodes=N, history=6, horizon=3, channels=(4, 3, 4), blocks_per_kind=1, head_hidden=8, steps=2)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def graphs():
    rng = np.random.default_rng(0)
    return build_regularized(random_graph(rng, N), 0.8), build_regularized(random_graph(rng, N, p=0.3), 0.8)


@pytest.fixture
def x():
    return torch.from_numpy(np.random.default_rng(1).standard_normal((2, N, 6, 1)))


def test_default_config_sizes():
    cfg = ModelConfig(n_nodes=3)
    assert cfg.channels == (64, 32, 64) and cfg.blocks_per_kind == 3 and cfg.n_layers == 2
    assert (cfg.history, cfg.horizon, cfg.alpha) == (12, 12, 0.8)


def test_config_round_trip_and_unknown_key():
    cfg = small_config(spatial_op="gcn", gcn_depth=3)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValidationError):
        ModelConfig.from_dict({**cfg.to_dict(), "typo": 1})
    with pytest.raises(ValidationError):
        small_config(spatial_op="lstm")


def test_block_matches_hand_composition(graphs, x):
    m = StgodeNetwork(small_config(), graphs[0])
    block = m.layers[0][0]
    mid = tcn_forward(x, block.tcn_in)
    a, u, w = block.spatial.a_hat, block.spatial.u.matrix(), block.spatial.w.matrix()
    solved = euler_integrate(lambda h: taylor_rhs(h, a, u, w, mid), mid, 1.0, 2)
    expected = tcn_forward(solved, block.tcn_out)
    assert torch.allclose(block_forward(x, block), expected, atol=1e-14)
    assert block_forward(x, block).shape == (2, N, 6, 4)


def test_block_zero_input_zero_bias_gives_zero(graphs):
    m = StgodeNetwork(small_config(), graphs[0])
    block = m.layers[0][0]
    with torch.no_grad():
        for name, p in block.named_parameters():
            if name.endswith("bias"):
                p.zero_()
    assert torch.equal(block(torch.zeros(1, N, 6, 1, dtype=torch.float64)), torch.zeros(1, N, 6, 4, dtype=torch.float64))


class Offset(torch.nn.Module):
    def __init__(self, c):
        super().__init__()
        self.c = c

    def forward(self, x):
        return x + self.c


def test_layer_max_pool():
    x = torch.randn(2, 3, 4, 2, dtype=torch.float64)
    assert torch.equal(layer_forward(x, [Offset(0.0)]), x)
    assert torch.equal(layer_forward(x, [Offset(-1.0), Offset(0.0)]), x)
    out = layer_forward(x, [Offset(0.3), Offset(-0.2), torch.nn.Tanh()])
    for b in (Offset(0.3), Offset(-0.2), torch.nn.Tanh()):
        assert torch.all(out >= b(x))
    with pytest.raises(ValidationError):
        layer_forward(x, [])


def test_block_counts(graphs):
    assert len(StgodeNetwork(small_config(blocks_per_kind=2), *graphs).layers[0]) == 4
    assert len(StgodeNetwork(small_config(), graphs[0]).layers[0]) == 1
    assert len(StgodeNetwork(small_config(use_semantic=False), *graphs).layers[1]) == 1


def test_forecast_shapes_and_determinism(graphs, x):
    a = StgodeNetwork(small_config(), *graphs)
    b = StgodeNetwork(small_config(), *graphs)
    out = forecast(a, x)
    assert out.shape == (2, N, 3, 1)
    assert torch.equal(out, forecast(b, x))
    assert forecast(a, x[0]).shape == (N, 3, 1)
    with pytest.raises(ValidationError):
        forecast(a, torch.zeros(2, N, 5, 1))


def test_node_permutation_equivariance(graphs, x):
    perm = np.random.default_rng(2).permutation(N)
    sp, se = graphs
    m = StgodeNetwork(small_config(), sp.a_hat, se.a_hat)
    mp = StgodeNetwork(small_config(), sp.a_hat[np.ix_(perm, perm)], se.a_hat[np.ix_(perm, perm)])
    with torch.no_grad():
        assert torch.allclose(forecast(mp, x[:, perm])[:, :], forecast(m, x)[:, perm], atol=1e-12)


def test_zero_head_gives_bias(graphs):
    m = StgodeNetwork(small_config(), *graphs)
    with torch.no_grad():
        m.head_out.weight.zero_()
        m.head_out.bias.copy_(torch.tensor([1.0, 2.0, 3.0]))
    out = forecast(m, torch.full((1, N, 6, 1), 0.7, dtype=torch.float64))
    assert torch.equal(out[0, :, :, 0], torch.tensor([[1.0, 2.0, 3.0]] * N, dtype=torch.float64))


def test_gcn_ablation_structure(graphs, x):
    m = StgodeNetwork(small_config(spatial_op="gcn", gcn_depth=3), *graphs)
    assert len(m.layers[0][0].spatial.weights) == 3
    assert m.factored_params() == []
    assert forecast(m, x).shape == (2, N, 3, 1)


def test_reproject_keeps_constraints(graphs):
    m = StgodeNetwork(small_config(), *graphs)
    with torch.no_grad():
        for fp in m.factored_params():
            fp.eigvals.add_(5.0)
            fp.basis.add_(0.01)
    m.reproject_()
    for fp in m.factored_params():
        assert fp.eigvals.min() >= EIG_MIN and fp.eigvals.max() <= EIG_MAX
        q = fp.basis.detach()
        assert torch.allclose(q.T @ q, torch.eye(q.shape[0], dtype=torch.float64), atol=1e-12)


def test_adjacency_shape_checked(graphs):
    with pytest.raises(ShapeError):
        StgodeNetwork(small_config(n_nodes=4), graphs[0])


@pytest.mark.parametrize("semantic", [True, False])
def test_checkpoint_round_trip(tmp_path, graphs, x, semantic):
    m = StgodeNetwork(small_config(seed=9), graphs[0], graphs[1] if semantic else None)
    with torch.no_grad():
        for p in m.parameters():
            p.add_(0.01)
    path = tmp_path / "sub" / "ck.npz"
    save_checkpoint(path, m, {"note": "hi"})
    loaded, extra = load_checkpoint(path)
    assert extra == {"note": "hi"}
    assert loaded.adjacency_kinds == m.adjacency_kinds
    with torch.no_grad():
        assert torch.equal(forecast(loaded, x), forecast(m, x))
    assert [p.name for p in tmp_path.joinpath("sub").iterdir()] == ["ck.npz"]


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.npz"
    np.savez(path, __meta__=np.frombuffer(b'{"format": "other"}', dtype=np.uint8))
    with pytest.raises(ValidationError):
        load_checkpoint(path)
