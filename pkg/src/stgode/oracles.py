"""Independent reference computations used by tests and ``stgode verify``.

None of these share code paths with the implementations they check: DTW is
enumerated path by path, the ODE integral is done by Simpson's rule with
``scipy.linalg.expm`` step propagators, matrix exponentials by truncated
Taylor series, and gradients by central differences.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg

from stgode.ode import OdeParams
from stgode.tensor import mode_product


def warping_paths(m: int, n: int):
    """Yield every monotone warping path from (0, 0) to (m-1, n-1)."""

    def walk(i, j, path):
        if i == m - 1 and j == n - 1:
            yield path
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            a, b = i + di, j + dj
            if a < m and b < n:
                yield from walk(a, b, path + [(a, b)])

    yield from walk(0, 0, [(0, 0)])


def brute_force_dtw(x, y, band=None) -> float:
    best = math.inf
    for path in warping_paths(len(x), len(y)):
        if band is not None and any(abs(i - j) > band for i, j in path):
            continue
        best = min(best, sum(abs(x[i] - y[j]) for i, j in path))
    return best


def taylor_expm(m, t: float = 1.0, terms: int = 20) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64) * t
    out = np.eye(m.shape[0])
    term = np.eye(m.shape[0])
    for k in range(1, terms + 1):
        term = term @ m / k
        out = out + term
    return out


def simpson_solution(p: OdeParams, t: float, panels: int = 10_000, zero_start: bool = False) -> np.ndarray:
    """``H0 x exp(.t) + int_0^t H0 x exp(.(t - s)) ds`` with composite Simpson.

    The kernel at the grid points is propagated by repeated multiplication
    with one-step exponentials from ``scipy.linalg.expm``.
    """
    if panels % 2:
        panels += 1
    n1, n2, n3 = p.h0.shape
    eye = [np.eye(n1), np.eye(n2), np.eye(n3)]
    gens = [p.a_hat - eye[0], p.u - eye[1], p.w - eye[2]]
    dt = t / panels
    steps = [scipy.linalg.expm(g * dt) for g in gens]
    kern = [e.copy() for e in eye]  # exp(G * tau) at tau = k * dt
    acc = np.zeros_like(p.h0)
    for k in range(panels + 1):
        weight = 1.0 if k in (0, panels) else (4.0 if k % 2 else 2.0)
        val = mode_product(mode_product(mode_product(p.h0, kern[0], 1), kern[1], 2), kern[2], 3)
        acc += weight * val
        if k < panels:
            kern = [kk @ s for kk, s in zip(kern, steps)]
    integral = acc * dt / 3.0
    if zero_start:
        return integral
    full = [scipy.linalg.expm(g * t) for g in gens]
    homog = mode_product(mode_product(mode_product(p.h0, full[0], 1), full[1], 2), full[2], 3)
    return homog + integral


def central_difference(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``fn`` at ``x`` (modified in place, then restored)."""
    grad = np.zeros(x.shape)
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + h
        up = fn()
        x[i] = orig - h
        down = fn()
        x[i] = orig
        grad[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-6) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero entries from dominating."""
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
