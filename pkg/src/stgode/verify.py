"""Self-contained oracle suites run by ``stgode verify``.

Each suite builds its own random fixtures from a fixed seed, compares an
implementation against an independent oracle, and reports the largest error
it saw next to the tolerance it was held to.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from stgode import oracles
from stgode.graph import build_regularized, dtw, normalize, regularize
from stgode.model import ModelConfig, StgodeNetwork
from stgode.ode import (
    FactoredTransform,
    OdeParams,
    SolverConfig,
    analytic_solution,
    discrete_expansion,
    discrete_recursion,
    dynamics_taylor,
    euler_solve,
    node_variance,
    power_collapse_demo,
    smoothing_residual,
    stationary_direction,
    taylor_rhs,
)
from stgode.tensor import mode_product, sym_eig
from stgode.training import compute_gradients


@dataclass
class SuiteResult:
    name: str
    passed: bool
    max_error: float
    tolerance: float
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.max_error = float(self.max_error)
        self.detail = _plain(self.detail)

    def to_dict(self):
        return asdict(self)


def _plain(obj):
    """numpy scalars -> Python scalars so results serialize to JSON."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ------------------------------------------------------------ fixtures


def random_graph(rng, n, p=0.5, connected=True):
    """Random symmetric non-negative weights; a path backbone keeps it connected."""
    a = rng.uniform(0.1, 1.0, size=(n, n)) * (rng.random((n, n)) < p)
    a = np.triu(a, 1)
    if connected:
        for i in range(n - 1):
            a[i, i + 1] = max(a[i, i + 1], rng.uniform(0.1, 1.0))
    return a + a.T


def random_ode_instance(rng, max_n=6, max_t=5, max_f=3) -> OdeParams:
    n = int(rng.integers(2, max_n + 1))
    t = int(rng.integers(1, max_t + 1))
    f = int(rng.integers(1, max_f + 1))
    adj = build_regularized(random_graph(rng, n), 0.8)
    return OdeParams(
        a_hat=adj,
        u=FactoredTransform.random(t, rng),
        w=FactoredTransform.random(f, rng),
        h0=rng.standard_normal((n, t, f)),
    )


def flipped_dynamics(h, p: OdeParams, restart: bool = True):
    """Sign error on the graph term; used to show the oracle suite catches faults."""
    return taylor_rhs(h, -p.a_hat, p.u, p.w, p.h0, restart) - 2 * h


# ------------------------------------------------------------ suites


def suite_mode_product(seed=0, trials=20):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        dims = rng.integers(1, 5, size=3)
        t = rng.standard_normal(dims)
        for i in (1, 2, 3):
            n = dims[i - 1]
            m1 = rng.standard_normal((n, int(rng.integers(1, 5))))
            m2 = rng.standard_normal((m1.shape[1], int(rng.integers(1, 5))))
            worst = max(worst, np.abs(mode_product(mode_product(t, m1, i), m2, i) - mode_product(t, m1 @ m2, i)).max())
            for j in (1, 2, 3):
                if j == i:
                    continue
                mj = rng.standard_normal((dims[j - 1], int(rng.integers(1, 5))))
                a = mode_product(mode_product(t, m1, i), mj, j)
                b = mode_product(mode_product(t, mj, j), m1, i)
                worst = max(worst, np.abs(a - b).max())
    return SuiteResult("mode_product_identities", worst <= 1e-12, float(worst), 1e-12, {"trials": trials})


def suite_sym_eig(seed=0, trials=20):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 12))
        a = rng.standard_normal((n, n))
        a = a + a.T
        e = sym_eig(a, method="jacobi")
        worst = max(
            worst,
            np.abs(e.reconstruct() - a).max(),
            np.abs(e.vectors.T @ e.vectors - np.eye(n)).max(),
            np.abs(e.values - np.sort(np.linalg.eigvalsh(a))[::-1]).max(),
        )
    return SuiteResult("sym_eig_jacobi", worst <= 1e-8, float(worst), 1e-8, {"trials": trials})


def suite_dtw(seed=0, pairs=200):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        x = rng.integers(-3, 4, size=int(rng.integers(1, 7))).astype(float)
        y = rng.integers(-3, 4, size=int(rng.integers(1, 7))).astype(float)
        worst = max(worst, abs(dtw(x, y)[0] - oracles.brute_force_dtw(x, y)))
    worked = [dtw([0, 0, 0], [0, 0, 0])[0], dtw([1, 2, 3], [1, 2, 2, 3])[0], dtw([0, 1], [1, 0])[0]]
    ok = worst == 0.0 and worked == [0.0, 0.0, 2.0]
    return SuiteResult("dtw_brute_force", ok, float(worst), 0.0, {"pairs": pairs, "worked_examples": worked})


def suite_adjacency_spectra(seed=0, graphs=100, alpha=0.8):
    rng = np.random.default_rng(seed)
    lo, hi = np.inf, -np.inf
    for _ in range(graphs):
        n = int(rng.integers(2, 15))
        adj = regularize(normalize(random_graph(rng, n, connected=bool(rng.integers(0, 2)))), alpha)
        vals = np.linalg.eigvalsh(adj.a_hat)
        lo, hi = min(lo, vals.min()), max(hi, vals.max())
    two = regularize(normalize([[0, 1], [1, 0]]), alpha)
    two_err = max(np.abs(two.a_hat - 0.4).max(), np.abs(two.eig.values - [0.8, 0.0]).max())
    excess = max(0.0, -lo, hi - alpha)
    ok = excess <= 1e-8 and two_err <= 1e-12
    return SuiteResult(
        "adjacency_spectra", ok, float(max(excess, two_err)), 1e-8,
        {"graphs": graphs, "min_eig": float(lo), "max_eig": float(hi)},
    )


def suite_ode_triangle(seed=0, instances=20, fault=False):
    rng = np.random.default_rng(seed)
    dyn = flipped_dynamics if fault else dynamics_taylor
    worst_quad = worst_euler = 0.0
    for _ in range(instances):
        p = random_ode_instance(rng)
        an = analytic_solution(p, 1.0)
        worst_quad = max(worst_quad, np.abs(an - oracles.simpson_solution(p, 1.0)).max())
        worst_euler = max(worst_euler, np.abs(an - euler_solve(p, SolverConfig(1.0, 10_000), dyn)).max())
    ok = worst_quad <= 1e-6 and worst_euler <= 1e-3
    return SuiteResult(
        "ode_oracle_triangle", ok, float(max(worst_quad, worst_euler)), 1e-3,
        {"analytic_vs_simpson": float(worst_quad), "analytic_vs_euler": float(worst_euler),
         "instances": instances, "fault_injected": fault},
    )


def euler_convergence_ratios(p: OdeParams, steps=(256, 512, 1024), dynamics=dynamics_taylor):
    exact = analytic_solution(p, 1.0)
    errs = [np.abs(euler_solve(p, SolverConfig(1.0, s), dynamics) - exact).max() for s in steps]
    return [errs[i] / errs[i + 1] for i in range(len(errs) - 1)], errs


def suite_euler_convergence(seed=0, instances=20, fault=False):
    rng = np.random.default_rng(seed)
    dyn = flipped_dynamics if fault else dynamics_taylor
    good = 0
    ratios_all = []
    for _ in range(instances):
        ratios, _ = euler_convergence_ratios(random_ode_instance(rng), dynamics=dyn)
        ratios_all.append(ratios)
        good += all(1.8 <= r <= 2.2 for r in ratios)
    worst = max(abs(r - 2.0) for rs in ratios_all for r in rs)
    return SuiteResult(
        "euler_first_order", good >= 18, float(worst), 0.2,
        {"instances_in_band": good, "instances": instances},
    )


def suite_discrete_equivalence(seed=0, instances=20):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        p = random_ode_instance(rng)
        for layers in range(7):
            worst = max(worst, np.abs(discrete_recursion(p, layers) - discrete_expansion(p, layers)).max())
    return SuiteResult("discrete_recursion_vs_expansion", worst <= 1e-10, float(worst), 1e-10, {"instances": instances})


def oversmoothing_curves(adj, signal, depth=50, measure="residual"):
    """Spread of ``A^n x`` and of the restarted recursion ``h <- A h + x`` for n = 0..depth.

    ``measure="residual"`` is the deviation from the stationary direction,
    ``"variance"`` the plain variance across nodes.
    """
    if measure == "residual":
        v = stationary_direction(adj)
        spread = lambda h: smoothing_residual(h, v)  # noqa: E731
    else:
        spread = node_variance
    plain, restart = [spread(signal)], [spread(signal)]
    h_plain = signal.copy()
    h_restart = signal.copy()
    for _ in range(depth):
        h_plain = adj.a_hat @ h_plain
        h_restart = adj.a_hat @ h_restart + signal
        plain.append(spread(h_plain))
        restart.append(spread(h_restart))
    return np.asarray(plain), np.asarray(restart)


MONOTONE_FLOOR = 1e-14


def suite_oversmoothing(seed=0, graphs=50, depth=50):
    rng = np.random.default_rng(seed)
    two = regularize(normalize([[0, 1], [1, 0]]), 0.8)
    power, ratio = power_collapse_demo(two, 5)
    power_err = float(np.abs(power - 0.16384).max())
    monotone = collapsed = retained = plain_var_monotone = 0
    worst_plain, worst_restart = 0.0, np.inf
    for _ in range(graphs):
        n = int(rng.integers(3, 15))
        adj = build_regularized(random_graph(rng, n), 0.8)
        x = rng.standard_normal(n)
        plain, restart = oversmoothing_curves(adj, x, depth)
        # rises below 1e-14 of the starting spread are float64 roundoff
        floor = MONOTONE_FLOOR * plain[0]
        monotone += bool(np.all(np.diff(plain) <= floor))
        var = oversmoothing_curves(adj, x, depth, "variance")[0]
        plain_var_monotone += bool(np.all(np.diff(var) <= MONOTONE_FLOOR * var[0]))
        collapsed += plain[-1] < 0.01 * plain[0]
        retained += restart[-1] > 0.1 * restart[0]
        worst_plain = max(worst_plain, plain[-1] / plain[0])
        worst_restart = min(worst_restart, restart[-1] / restart[0])
    ok = power_err <= 1e-12 and ratio <= 1e-12 and monotone == collapsed == retained == graphs
    return SuiteResult(
        "oversmoothing_spectral_demo", ok, power_err, 1e-12,
        {"graphs": graphs, "monotone": monotone, "collapsed_below_1pct": collapsed,
         "restart_retains_10pct": retained, "max_plain_ratio": float(worst_plain),
         "min_restart_ratio": float(worst_restart), "two_node_ratio": ratio,
         "plain_variance_monotone": plain_var_monotone},
    )


def tiny_gradcheck_network(semantic=True, seed=3):
    cfg = ModelConfig(
        n_nodes=3, history=4, horizon=2, in_features=1, channels=(6, 4, 6), blocks_per_kind=1,
        steps=2, head_hidden=8, use_semantic=semantic, seed=seed,
    )
    sp = build_regularized(np.array([[0, 1.0, 0], [1.0, 0, 0.5], [0, 0.5, 0]]), 0.8)
    se = build_regularized(np.array([[0, 0, 1.0], [0, 0, 0], [1.0, 0, 0]]), 0.8, "semantic")
    return StgodeNetwork(cfg, sp, se if semantic else None)


def gradient_check(model, inputs, targets, delta=1.0, h=1e-5):
    """Max relative error between autograd and central differences over every parameter entry."""
    _, grads = compute_gradients(model, inputs, targets, delta)
    x = torch.as_tensor(inputs)
    y = torch.as_tensor(targets)
    from stgode.training import huber_loss

    def loss():
        with torch.no_grad():
            return float(huber_loss(model(x), y, delta))

    worst = 0.0
    per_param = {}
    count = 0
    for name, p in model.named_parameters():
        arr = p.data.numpy()  # shares memory with the parameter
        numeric = oracles.central_difference(loss, arr, h)
        err = float(oracles.relative_error(grads[name].numpy(), numeric).max())
        per_param[name] = err
        worst = max(worst, err)
        count += arr.size
    return worst, per_param, count


def suite_gradient_check(seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    checked = 0
    detail = {}
    for semantic in (False, True):
        model = tiny_gradcheck_network(semantic)
        x = rng.standard_normal((2, 3, 4, 1))
        y = rng.standard_normal((2, 3, 2, 1))
        err, per_param, count = gradient_check(model, x, y)
        worst = max(worst, err)
        checked += count
        detail["spatial+semantic" if semantic else "spatial_only"] = err
    detail["parameters_checked"] = checked
    return SuiteResult("gradient_check", worst < 1e-4, float(worst), 1e-4, detail)


SUITES = {
    "mode_product_identities": suite_mode_product,
    "sym_eig_jacobi": suite_sym_eig,
    "dtw_brute_force": suite_dtw,
    "adjacency_spectra": suite_adjacency_spectra,
    "ode_oracle_triangle": suite_ode_triangle,
    "euler_first_order": suite_euler_convergence,
    "discrete_recursion_vs_expansion": suite_discrete_equivalence,
    "oversmoothing_spectral_demo": suite_oversmoothing,
    "gradient_check": suite_gradient_check,
}
FAULT_AWARE = {"ode_oracle_triangle", "euler_first_order"}


def run_all(only=None, fault=False) -> list[SuiteResult]:
    results = []
    for name, fn in SUITES.items():
        if only and name not in only:
            continue
        start = time.perf_counter()
        res = fn(fault=fault) if name in FAULT_AWARE else fn()
        res.seconds = round(time.perf_counter() - start, 3)
        results.append(res)
    return results
