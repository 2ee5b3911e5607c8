"""Dense rank-3 tensor kernel.

Hidden states are arrays shaped ``(..., nodes, time, features)``; mode 1 is
the node axis, mode 2 time and mode 3 features.  Any leading axes are treated
as batch axes, so the same code serves a single ``(N, T, F)`` tensor and a
batch ``(B, N, T, F)``.  Functions accept numpy arrays and, where noted,
torch tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from stgode.errors import ShapeError, ValidationError

_MODE_SUBSCRIPTS = {
    1: ("...ijk,il->...ljk"),
    2: ("...ijk,jl->...ilk"),
    3: ("...ijk,kl->...ijl"),
}

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
# Above this size the cyclic Jacobi loop in Python gets slow; LAPACK takes over.
JACOBI_MAX_N = 64


def _is_torch(x) -> bool:
    return type(x).__module__.startswith("torch")


def mode_product(t, m, mode: int):
    """Tensor-matrix product along ``mode`` (1, 2 or 3).

    ``(t x_2 M)[i, l, k] = sum_j t[i, j, k] * M[j, l]``, and likewise for the
    other modes.  Works for numpy arrays and torch tensors; leading batch axes
    are carried through untouched.
    """
    if mode not in _MODE_SUBSCRIPTS:
        raise ValidationError(f"mode must be 1, 2 or 3, got {mode!r}")
    if t.ndim < 3:
        raise ShapeError(f"mode-{mode} product needs a rank>=3 tensor, got ndim={t.ndim}")
    if m.ndim != 2:
        raise ShapeError(f"mode-{mode} product needs a matrix, got ndim={m.ndim}")
    n = t.shape[t.ndim - 4 + mode]
    if m.shape[0] != n:
        raise ShapeError(
            f"mode-{mode} product: tensor has size {n} along mode {mode} "
            f"but matrix has {m.shape[0]} rows"
        )
    if _is_torch(t) or _is_torch(m):
        import torch

        if mode == 3:
            return t @ m
        if mode == 2:
            return m.transpose(0, 1) @ t
        return torch.einsum(_MODE_SUBSCRIPTS[mode], t, m)
    if mode == 3:
        return t @ m
    if mode == 2:
        return m.T @ t
    return np.einsum(_MODE_SUBSCRIPTS[mode], t, m)


def as_tensor3(x, name: str = "tensor") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"{name} must be rank 3 (nodes, time, features), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or 0 in arr.shape:
        raise ShapeError(f"{name} must be a non-empty 2-D matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class SymEig:
    """Eigendecomposition ``M = vectors @ diag(values) @ vectors.T``.

    Eigenvalues are sorted in descending order, ``vectors[:, i]`` pairs with
    ``values[i]``.
    """

    vectors: np.ndarray
    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T

    def apply(self, fn) -> np.ndarray:
        """Spectral function ``P diag(fn(values)) P^T``."""
        return (self.vectors * fn(self.values)) @ self.vectors.T


def _off_norm(a: np.ndarray) -> float:
    return math.sqrt(2.0 * float(np.sum(np.triu(a, 1) ** 2)))


def _jacobi(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = a.copy()
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(JACOBI_MAX_SWEEPS):
        if _off_norm(a) < JACOBI_TOL:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J with J the (p, q) Givens rotation
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        off = _off_norm(a)
        if off > 1e-8 * max(1.0, np.abs(a).max()):
            raise ArithmeticError(f"Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps (off={off:.3e})")
    return np.diag(a).copy(), v


def sym_eig(m, method: str = "auto") -> SymEig:
    """Symmetric eigendecomposition, eigenvalues descending.

    ``method`` is ``"jacobi"`` (cyclic Jacobi rotations), ``"lapack"``
    (``numpy.linalg.eigh``) or ``"auto"``, which uses Jacobi up to
    ``JACOBI_MAX_N`` rows.
    """
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise ValidationError(f"sym_eig needs a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("sym_eig input contains non-finite entries")
    asym = np.abs(a - a.T).max()
    if asym > 1e-10:
        raise ValidationError(f"sym_eig input is not symmetric (max |A - A^T| = {asym:.3e})")
    a = 0.5 * (a + a.T)
    if method == "auto":
        method = "jacobi" if a.shape[0] <= JACOBI_MAX_N else "lapack"
    if method == "jacobi":
        values, vectors = _jacobi(a)
    elif method == "lapack":
        values, vectors = np.linalg.eigh(a)
    else:
        raise ValidationError(f"unknown eigensolver {method!r}")
    order = np.argsort(-values, kind="stable")
    return SymEig(vectors=vectors[:, order], values=values[order])


def expm_scaled(e: SymEig, t: float) -> np.ndarray:
    """``exp(M t)`` for the symmetric matrix ``M`` whose decomposition is ``e``."""
    if t == 0:
        return np.eye(e.n)
    return e.apply(lambda lam: np.exp(lam * t))


def sign_fixed_qr(a: np.ndarray) -> np.ndarray:
    """Orthogonal factor of ``a`` with the sign convention ``diag(R) >= 0``."""
    q, r = np.linalg.qr(a)
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return q * signs


def random_orthogonal(n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise ValidationError(f"random_orthogonal needs n >= 1, got {n}")
    rng = np.random.default_rng(seed)
    return sign_fixed_qr(rng.standard_normal((n, n)))
