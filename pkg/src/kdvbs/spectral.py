"""Eigenvalues of ``A u = -u'''`` with ``u(0) = u'(L) = u(L) - u''(L) = 0``.

With ``r_0, r_1, r_2`` the roots of ``r^3 + lam = 0``, ``lam`` is an eigenvalue
iff ``sum_{i != j} a_ij r_i (1 - r_j^2) exp((r_i + r_j) L) = 0`` where
``a_12 = a_20 = a_01 = 1`` and ``a_21 = a_02 = a_10 = -1``.  For large ``|k|``
the eigenvalues approach ``-8 pi^3 |k|^3 / (3 sqrt(3) L^3)``.
"""
from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import NoConvergence

log = logging.getLogger(__name__)

__all__ = [
    "EigRecord",
    "alternating_sum",
    "asymptotic_eigenvalue",
    "char_det",
    "collocation_eigenvalues",
    "cube_roots",
    "find_eigenvalues",
    "half_shifted_eigenvalue",
    "imaginary_axis_min",
    "write_eigen_csv",
    "newton_eigenvalue",
    "spectral_abscissa",
]

OMEGA = cmath.exp(2j * math.pi / 3)
_SIGN = {(1, 2): 1, (2, 0): 1, (0, 1): 1, (2, 1): -1, (0, 2): -1, (1, 0): -1}


@dataclass(frozen=True)
class EigRecord:
    k: int
    lam: complex
    residual: float
    ratio: float


def cube_roots(lam: complex) -> tuple[complex, complex, complex]:
    """Roots of ``r^3 = -lam`` as ``(r, omega r, omega^2 r)``.

    ``r`` is the root with argument in ``[0, 2 pi / 3)``, which is the
    first-quadrant root whenever there is one.
    """
    lam = complex(lam)
    if lam == 0:
        raise ValueError("lam = 0 is excluded: the characteristic roots coincide")
    rho = abs(lam) ** (1 / 3)
    phi = cmath.phase(-lam) / 3  # in (-pi/3, pi/3]
    r = rho * cmath.exp(1j * phi)
    while cmath.phase(r) < 0:
        r *= OMEGA
    return (r, OMEGA * r, OMEGA**2 * r)


def _terms(roots: Sequence[complex], L: float, shift: float | None = None):
    pairs = list(_SIGN)
    expo = [(roots[i] + roots[j]) * L for i, j in pairs]
    m = max(e.real for e in expo) if shift is None else shift
    vals = [_SIGN[(i, j)] * roots[i] * (1 - roots[j] ** 2) * cmath.exp(e - m)
            for (i, j), e in zip(pairs, expo)]
    return vals, m


def alternating_sum(roots: Sequence[complex], L: float) -> complex:
    """The determinant sum for a given root labeling, scaled by ``exp(-max Re (r_i + r_j) L)``."""
    vals, _ = _terms(roots, L)
    return complex(math.fsum(v.real for v in vals), math.fsum(v.imag for v in vals))


def _vandermonde(roots):
    r0, r1, r2 = roots
    return (r1 - r0) * (r2 - r0) * (r2 - r1)


def char_det(lam: complex, L: float) -> complex:
    """Characteristic function of the eigenvalue problem.

    The alternating determinant sum divided by the root Vandermonde product
    ``(r_1 - r_0)(r_2 - r_0)(r_2 - r_1)``.  Both are alternating in the roots, so
    the quotient does not depend on the labeling, is conjugate-symmetric, stays
    finite as ``lam -> 0`` and has the zero set of the determinant.  The factor
    ``exp(max Re (r_i + r_j) L)`` is divided out to avoid overflow.
    """
    roots = cube_roots(lam)
    return alternating_sum(roots, L) / _vandermonde(roots)


def _holomorphic(lam: complex, L: float, shift: float) -> complex:
    # same quotient with a fixed exponential shift, so it is analytic in lam
    roots = cube_roots(lam)
    vals, _ = _terms(roots, L, shift)
    return sum(vals) / _vandermonde(roots)


def newton_eigenvalue(seed: complex, L: float, tol: float = 1e-12, max_iter: int = 60) -> complex:
    """Complex Newton with a central-difference derivative, started at ``seed``."""
    lam = complex(seed)
    for _ in range(max_iter):
        _, shift = _terms(cube_roots(lam), L)
        f = _holomorphic(lam, L, shift)
        h = 1e-6 * max(1.0, abs(lam))
        df = (_holomorphic(lam + h, L, shift) - _holomorphic(lam - h, L, shift)) / (2 * h)
        if df == 0:
            break
        step = f / df
        lam -= step
        if abs(step) <= tol * max(1.0, abs(lam)):
            return lam
    raise NoConvergence(f"Newton did not converge from seed {seed!r} (last iterate {lam!r})")


def asymptotic_eigenvalue(k: int, L: float) -> float:
    """``-8 pi^3 |k|^3 / (3 sqrt(3) L^3)``: the large-``k`` law used for seeds and ratios."""
    return -8 * math.pi**3 * abs(k) ** 3 / (3 * math.sqrt(3) * L**3)


def half_shifted_eigenvalue(k: int, L: float) -> float:
    """``-8 pi^3 (|k| - 1/2)^3 / (3 sqrt(3) L^3)``.

    Keeping the leading terms of the full determinant gives
    ``exp((r_2 - r_1) L) = -1`` rather than ``+1``, which shifts the index by one
    half; the computed spectrum follows this form.
    """
    return -8 * math.pi**3 * (abs(k) - 0.5) ** 3 / (3 * math.sqrt(3) * L**3)


def imaginary_axis_min(L: float, xi_max: float = 1e3, n: int = 20001) -> float:
    """``min |char_det(i xi)|`` over ``n`` samples of ``0 < |xi| <= xi_max``."""
    xi = np.linspace(-xi_max, xi_max, n)
    xi = xi[xi != 0]
    return float(min(abs(char_det(1j * x, L)) for x in xi))


def find_eigenvalues(L: float, k_min: int = 1, k_max: int = 20, tol: float = 1e-9) -> list[EigRecord]:
    """Eigenvalues seeded from the large-``k`` law, one per index ``k``.

    Failed indices are logged and skipped.  Records with residual above ``tol``
    or duplicating an earlier eigenvalue are dropped.
    """
    if not (0 < k_min <= k_max):
        raise ValueError("need 0 < k_min <= k_max")
    if tol <= 0:
        raise ValueError("tol must be positive")
    out: list[EigRecord] = []
    for k in range(k_min, k_max + 1):
        pred = asymptotic_eigenvalue(k, L)
        try:
            lam = newton_eigenvalue(pred, L)
        except NoConvergence as exc:
            log.warning("k=%d: %s", k, exc)
            continue
        res = abs(char_det(lam, L))
        if res > tol:
            log.warning("k=%d: residual %.3e above tol", k, res)
            continue
        if any(abs(lam - r.lam) <= 1e-8 * max(1.0, abs(lam)) for r in out):
            log.warning("k=%d: duplicate of an earlier eigenvalue %r", k, lam)
            continue
        out.append(EigRecord(k=k, lam=lam, residual=res, ratio=abs(lam) / abs(pred)))
    return out


def spectral_abscissa(records: Iterable[EigRecord]) -> float:
    records = list(records)
    if not records:
        raise ValueError("no eigenvalue records")
    return max(r.lam.real for r in records)


def collocation_eigenvalues(L: float, n: int = 80) -> np.ndarray:
    """Independent check: Chebyshev collocation of ``-u'''`` with the three boundary rows.

    Solves the generalized problem ``A u = lam B u`` where the boundary rows of
    ``B`` are zero; infinite eigenvalues are discarded.
    """
    # Chebyshev points on [-1, 1] mapped to [0, L]
    j = np.arange(n + 1)
    xc = np.cos(np.pi * j / n)
    c = np.ones(n + 1)
    c[0] = c[-1] = 2
    c *= (-1.0) ** j
    X = np.tile(xc, (n + 1, 1)).T
    dX = X - X.T
    D = np.outer(c, 1 / c) / (dX + np.eye(n + 1))
    D -= np.diag(D.sum(axis=1))
    D *= 2 / L  # d/dx with x = L (1 - xc) / 2 reverses orientation
    D = -D
    x = L * (1 - xc) / 2
    D2 = D @ D
    D3 = D2 @ D
    A = -D3.copy()
    B = np.eye(n + 1)
    i0 = int(np.argmin(np.abs(x)))
    iL = int(np.argmin(np.abs(x - L)))
    rows = [i0, iL, (iL + 1) if iL + 1 <= n and iL + 1 != i0 else iL - 1]
    # replace three rows by the boundary conditions
    A[rows[0]] = np.eye(n + 1)[i0]
    A[rows[1]] = D[iL]
    A[rows[2]] = np.eye(n + 1)[iL] - D2[iL]
    for r in rows:
        B[r] = 0
    from scipy.linalg import eig

    w = eig(A, B, right=False)
    w = w[np.isfinite(w)]
    return w[np.argsort(-w.real)]


def write_eigen_csv(records: Iterable[EigRecord], path, header: str | None = None) -> None:
    """Columns ``k, Re, Im, residual, ratio``; ``header`` becomes a leading ``#`` line."""
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        fh.write("k,Re,Im,residual,ratio\n")
        for r in records:
            fh.write(f"{r.k},{r.lam.real:.15g},{r.lam.imag:.15g},{r.residual:.3e},{r.ratio:.12g}\n")
