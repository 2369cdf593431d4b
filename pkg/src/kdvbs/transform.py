"""Discrete Volterra operator ``(K phi)(x) = int_0^x k(x, y) phi(y) dy`` on a uniform grid.

Provides the forward map ``I - K``, its inverse by successive substitution and by a
direct triangular solve, and an estimate of ``||(I - K)^{-1}||`` in L2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

from .kernel import PseudoKernel, kernel_value

__all__ = [
    "DiscreteK",
    "GridFunction",
    "SuccessionResult",
    "discretize_K",
    "forward",
    "grid",
    "inverse_direct",
    "inverse_succession",
    "invnorm_estimate",
    "l2_norm",
    "trapezoid_weights",
]

SUCCESSION_TOL = 1e-10
SUCCESSION_MAX = 200


def grid(L: float, J: int) -> np.ndarray:
    return np.linspace(0.0, L, J + 1)


def trapezoid_weights(L: float, J: int) -> np.ndarray:
    w = np.full(J + 1, L / J)
    w[0] = w[-1] = 0.5 * L / J
    return w


@dataclass(frozen=True)
class GridFunction:
    """Samples ``values[j]`` at ``x_j = j L / J``, ``j = 0..J``."""

    L: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 5:
            raise ValueError("GridFunction needs a 1-d array of J + 1 >= 5 samples")
        if not np.all(np.isfinite(v)):
            raise ValueError("GridFunction values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def J(self) -> int:
        return self.values.size - 1

    @property
    def dx(self) -> float:
        return self.L / self.J

    @property
    def x(self) -> np.ndarray:
        return grid(self.L, self.J)

    @classmethod
    def from_callable(cls, f: Callable, L: float, J: int) -> "GridFunction":
        return cls(L, np.asarray(f(grid(L, J)), dtype=float) * np.ones(J + 1))

    def norm(self) -> float:
        return l2_norm(self.values, self.L)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        _check_shapes(self, other)
        return GridFunction(self.L, self.values - other.values)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        _check_shapes(self, other)
        return GridFunction(self.L, self.values + other.values)


def _check_shapes(a: GridFunction, b: GridFunction):
    if a.values.shape != b.values.shape or not math.isclose(a.L, b.L):
        raise ValueError(f"grid mismatch: J={a.J}, L={a.L} vs J={b.J}, L={b.L}")


def l2_norm(values: np.ndarray, L: float) -> float:
    """Trapezoid-weighted discrete L2 norm."""
    values = np.asarray(values, dtype=float)
    w = trapezoid_weights(L, values.size - 1)
    return float(np.sqrt(np.sum(w * values**2)))


@dataclass(frozen=True)
class DiscreteK:
    """Lower-triangular quadrature of the Volterra operator.

    ``weights[j, i]`` are the composite trapezoid weights of ``int_0^{x_j}`` and
    ``matrix = weights * k(x_j, y_i)``.
    """

    L: float
    weights: np.ndarray
    matrix: np.ndarray

    @property
    def J(self) -> int:
        return self.matrix.shape[0] - 1

    def apply(self, phi: np.ndarray) -> np.ndarray:
        return self.matrix @ phi

    def to_csv(self, path) -> None:
        np.savetxt(path, self.matrix, delimiter=",", fmt="%.12g")


def discretize_K(K: PseudoKernel | Callable, J: int, L: float | None = None) -> DiscreteK:
    """Trapezoid discretization on ``J`` cells.

    ``K`` is a built kernel or, for synthetic checks, any vectorized ``k(x, y)``
    (then ``L`` is required).
    """
    if J < 4:
        raise ValueError("J must be >= 4")
    if isinstance(K, PseudoKernel):
        L = K.L
        kfun = lambda x, y: kernel_value(K, x, y)  # noqa: E731
    else:
        if L is None:
            raise ValueError("L is required for a callable kernel")
        kfun = K
    dx = L / J
    W = np.zeros((J + 1, J + 1))
    for j in range(1, J + 1):
        W[j, : j + 1] = dx
        W[j, 0] = W[j, j] = 0.5 * dx
    x = grid(L, J)
    X, Y = np.meshgrid(x, x, indexing="ij")
    mask = W > 0
    ks = np.zeros_like(W)
    # clip roundoff so the domain check accepts the diagonal
    ks[mask] = kfun(X[mask], np.minimum(Y[mask], X[mask]))
    W.setflags(write=False)
    M = W * ks
    M.setflags(write=False)
    return DiscreteK(L=float(L), weights=W, matrix=M)


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, GridFunction) else np.asarray(u, dtype=float)


def _check_len(Kd: DiscreteK, u):
    n = _values(u).size
    if n != Kd.J + 1:
        raise ValueError(f"shape mismatch: operator on J={Kd.J}, function has {n} samples")


def forward(Kd: DiscreteK, u: GridFunction) -> GridFunction:
    """``w = u - K u``."""
    _check_len(Kd, u)
    v = _values(u)
    return GridFunction(Kd.L, v - Kd.matrix @ v)


class SuccessionResult(NamedTuple):
    u: GridFunction
    iterations: int
    increment: float
    increments: tuple[float, ...]


def inverse_succession(Kd: DiscreteK, psi: GridFunction, m: int | None = None,
                       tol: float = SUCCESSION_TOL,
                       max_iter: int = SUCCESSION_MAX) -> SuccessionResult:
    """Solve ``(I - K) u = psi`` as ``u = psi + v`` with ``v = K (psi + v)``.

    Starts from ``v^0 = K psi`` and applies ``v^k = K (psi + v^{k-1})``.  With an
    integer ``m`` exactly ``m`` updates are made; with ``m=None`` the updates stop
    once the L2 increment falls below ``tol`` (or after ``max_iter``).
    """
    if m is not None and m < 1:
        raise ValueError("m must be >= 1")
    _check_len(Kd, psi)
    p = _values(psi)
    M = Kd.matrix
    v = M @ p
    increments = []
    limit = m if m is not None else max_iter
    k = 0
    for k in range(1, limit + 1):
        v_new = M @ (p + v)
        inc = l2_norm(v_new - v, Kd.L)
        increments.append(inc)
        v = v_new
        if m is None and inc < tol:
            break
    return SuccessionResult(GridFunction(Kd.L, p + v), k, increments[-1], tuple(increments))


def inverse_direct(Kd: DiscreteK, psi: GridFunction) -> GridFunction:
    """Forward substitution for ``(I - K) u = psi``."""
    _check_len(Kd, psi)
    A = np.eye(Kd.J + 1) - Kd.matrix
    return GridFunction(Kd.L, solve_triangular(A, _values(psi), lower=True))


def invnorm_estimate(Kd: DiscreteK) -> float:
    """Spectral norm of ``(I - K)^{-1}`` in the trapezoid-weighted L2 inner product."""
    n = Kd.J + 1
    A = np.eye(n) - Kd.matrix
    Ainv = solve_triangular(A, np.eye(n), lower=True)
    sw = np.sqrt(trapezoid_weights(Kd.L, Kd.J))
    B = sw[:, None] * Ainv / sw[None, :]
    return float(np.linalg.norm(B, 2))
