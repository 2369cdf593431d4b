"""Pseudo-kernel construction, boundary traces and closed-loop decay rates.

The kernel is ``k(x, y) = G(x - y, y)`` where ``G`` solves

    G_ttt - 3 G_stt + 3 G_sst + G_t = -lam G,   G(s, 0) = G(0, t) = 0,
    G_s(0, t) = lam t / 3

on ``{s, t >= 0, s + t <= L}``.  ``G`` is the fixed point of
``G = lam s t / 3 + P G`` and is built as ``(lam / 3) * sum_n H^n`` with
``H^0 = s t`` and ``H^{n+1} = P H^n`` (see :func:`kdvbs.series.apply_P`).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import NoConvergence
from .series import (
    Poly1,
    Poly2,
    apply_P,
    poly_diff,
    poly_eval,
    poly_int_sq,
    poly_restrict_t,
    sup_bound,
)

__all__ = [
    "DecayReport",
    "PseudoKernel",
    "alpha",
    "beta",
    "build_kernel",
    "decay_report",
    "dump_kernel",
    "kernel_dx",
    "kernel_dy",
    "kernel_value",
    "load_kernel",
    "norm_kxL_sq",
    "norm_ky0_sq",
    "majorant",
    "coefficient_bound",
    "residual",
    "trace_kL",
    "trace_kxL",
    "trace_ky0",
    "variant_alpha",
]

DEFAULT_TOL = 1e-12
DEFAULT_N_MAX = 200


@dataclass(frozen=True)
class PseudoKernel:
    """Truncated pseudo-kernel series.

    ``tail_bound`` and ``deriv_tail_bound`` continue the measured decay of the
    term bounds geometrically past the last summed term (value and first
    derivatives, sup norm over the triangle).  ``residual_bound`` is a rigorous
    bound on the kernel-PDE residual of the truncated series: that residual is
    exactly ``-(lam/3) (-H_ttt + 3 H_stt - H_t - lam H)`` for the last summed
    term ``H``.
    """

    lam: float
    L: float
    series: Poly2
    n_terms: int
    tail_bound: float
    deriv_tail_bound: float = 0.0
    residual_bound: float = 0.0
    term_bounds: tuple[float, ...] = ()
    history: tuple[Poly2, ...] = field(default=(), repr=False, compare=False)

    @cached_property
    def _Gs(self) -> Poly2:
        return poly_diff(self.series, "s", 1)

    @cached_property
    def _Gt(self) -> Poly2:
        return poly_diff(self.series, "t", 1)

    @cached_property
    def _float_series(self) -> Poly2:
        return self.series.to_float()


def _as_number(x, exact: bool):
    if exact:
        return Fraction(x)
    return float(x)


def _tail_estimates(bounds: Sequence[float], L: float) -> tuple[float, float]:
    n = len(bounds) - 1
    b_last = bounds[-1]
    if b_last == 0:
        return 0.0, 0.0
    ratios = [bounds[i] / bounds[i - 1] for i in range(max(1, n - 2), n + 1) if bounds[i - 1] > 0]
    rho = max(ratios) if ratios else 0.0
    if rho >= 1:
        return math.inf, math.inf
    tail = b_last * rho / (1 - rho)
    # sum_{j>=1} (2(n+j)+1) b_last rho^j / L
    dtail = b_last / L * ((2 * n + 1) * rho / (1 - rho) + 2 * rho / (1 - rho) ** 2)
    return tail, dtail


def build_kernel(lam, L, tol: float = DEFAULT_TOL, n_max: int = DEFAULT_N_MAX,
                 exact: bool = False) -> PseudoKernel:
    """Sum the series until a term's sup bound drops below ``tol`` relative to the sum.

    Parameters
    ----------
    lam : float
        Damping of the target system; must be positive.
    L : float
        Domain length.
    tol : float
        Stop at the first ``N`` with ``(lam/3) sup_bound(H^N) < tol * sup_bound(G_N)``.
    n_max : int
        Largest admissible ``N``.
    exact : bool
        Run the recursion in rational arithmetic (``lam`` converted with
        :class:`~fractions.Fraction`).  Slow; meant for cross-checks.

    Raises
    ------
    NoConvergence
        If the term bounds have not fallen below ``tol`` by ``n_max``.
    """
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam!r}")
    if not L > 0:
        raise ValueError(f"L must be positive, got {L!r}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")

    lam_n = _as_number(lam, exact)
    one = Fraction(1) if exact else 1.0
    scale = lam_n / 3
    H = Poly2({(1, 1): one})
    history = []
    bounds = []
    parts: dict[tuple[int, int], list] = {}
    for n in range(n_max + 1):
        history.append(H)
        b = abs(float(scale * sup_bound(H, L)))
        bounds.append(b)
        for key, c in H.items():
            parts.setdefault(key, []).append(scale * c)
        running = abs(float(sup_bound(Poly2({k: sum(v) for k, v in parts.items()}), L)))
        if b < tol * running or b == 0:
            break
        H = apply_P(H, lam_n)
    else:
        raise NoConvergence(
            f"kernel series: term bound {bounds[-1]:.3e} still above tol after n_max={n_max}")

    if exact:
        series = Poly2({k: sum(v, Fraction(0)) for k, v in parts.items()})
    else:
        series = Poly2({k: math.fsum(v) for k, v in parts.items()})

    tail, dtail = _tail_estimates(bounds, float(L))
    res_bound = float(abs(scale)) * float(sup_bound(_residual_operator(H, lam_n), L))
    return PseudoKernel(
        lam=float(lam), L=float(L), series=series, n_terms=len(bounds),
        tail_bound=tail, deriv_tail_bound=dtail, residual_bound=res_bound,
        term_bounds=tuple(bounds), history=tuple(history),
    )


def _residual_operator(H: Poly2, lam) -> Poly2:
    return (-1 * poly_diff(H, "t", 3) + 3 * poly_diff(poly_diff(H, "s", 1), "t", 2)
            - poly_diff(H, "t", 1) - lam * H)


def majorant(n: int, lam: float, L: float) -> float:
    """A-priori bound ``4^n lam~^n L^(3n+2) / (n+1)!`` on ``sup |H^n|``, ``lam~ = max(1, lam)``."""
    lt = max(1.0, float(lam))
    return math.exp(n * math.log(4 * lt) + (3 * n + 2) * math.log(L) - math.lgamma(n + 2))


def coefficient_bound(n: int, t_exp: int, lam: float) -> float:
    """Bound ``lam~^n / ((n+1)! t_exp!)`` on any monomial coefficient of ``H^n``."""
    lt = max(1.0, float(lam))
    return math.exp(n * math.log(lt) - math.lgamma(n + 2) - math.lgamma(t_exp + 1))


def _check_triangle(K: PseudoKernel, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    eps = 1e-12 * K.L
    if np.any(y < -eps) or np.any(y > x + eps) or np.any(x > K.L + eps):
        raise ValueError("kernel evaluated outside the triangle 0 <= y <= x <= L")
    return x, y


def kernel_value(K: PseudoKernel, x, y):
    x, y = _check_triangle(K, x, y)
    return poly_eval(K._float_series, x - y, y)


def kernel_dx(K: PseudoKernel, x, y):
    x, y = _check_triangle(K, x, y)
    return poly_eval(K._Gs.to_float(), x - y, y)


def kernel_dy(K: PseudoKernel, x, y):
    x, y = _check_triangle(K, x, y)
    return poly_eval(K._Gt.to_float(), x - y, y) - poly_eval(K._Gs.to_float(), x - y, y)


def trace_ky0(K: PseudoKernel) -> Poly1:
    """``x -> k_y(x, 0) = G_t(x, 0)``."""
    return poly_restrict_t(K._Gt, 0)


def _shift_expand(p: Poly2, L) -> Poly1:
    # y -> p(L - y, y), expanded exactly in rationals to avoid binomial cancellation
    Lq = Fraction(L)
    acc: dict[int, Fraction] = {}
    for (m, k), c in p.items():
        cq = Fraction(c)
        for j in range(m + 1):
            term = cq * math.comb(m, j) * Lq ** (m - j) * (-1) ** j
            acc[j + k] = acc.get(j + k, Fraction(0)) + term
    return Poly1(acc)


def trace_kL(K: PseudoKernel) -> Poly1:
    """``y -> k(L, y)``, rational coefficients (exact expansion of ``(L - y)^m``)."""
    return _shift_expand(K.series, K.L)


def trace_kxL(K: PseudoKernel) -> Poly1:
    """``y -> k_x(L, y) = G_s(L - y, y)``, rational coefficients."""
    return _shift_expand(K._Gs, K.L)


def _norm_sq(q: Poly1, L) -> float:
    if any(isinstance(c, Fraction) for _, c in q.items()):
        return float(poly_int_sq(q, 0, Fraction(L)))
    return float(poly_int_sq(q, 0, L))


def norm_ky0_sq(K: PseudoKernel) -> float:
    return _norm_sq(trace_ky0(K), K.L)


def norm_kxL_sq(K: PseudoKernel) -> float:
    return _norm_sq(trace_kxL(K), K.L)


def alpha(K: PseudoKernel) -> float:
    """Two-controller decay rate ``lam - ||k_y(., 0)||^2 / 2``."""
    return K.lam - 0.5 * norm_ky0_sq(K)


def beta(K: PseudoKernel, invnorm: float) -> float:
    """Single-controller decay rate.

    ``invnorm`` is an estimate of the L2 operator norm of ``(I - K)^{-1}``,
    e.g. from :func:`kdvbs.transform.invnorm_estimate`.
    """
    if invnorm < 1 - 1e-12:
        raise ValueError(f"invnorm must be >= 1, got {invnorm!r}")
    return alpha(K) - 0.5 * norm_kxL_sq(K) * invnorm**2


@dataclass(frozen=True)
class DecayReport:
    alpha: float
    beta: float | None
    norm_ky0_sq: float
    norm_kxL_sq: float
    invnorm: float | None


def decay_report(K: PseudoKernel, invnorm: float | None = None) -> DecayReport:
    ky = norm_ky0_sq(K)
    kx = norm_kxL_sq(K)
    a = K.lam - 0.5 * ky
    b = None if invnorm is None else a - 0.5 * kx * invnorm**2
    return DecayReport(alpha=a, beta=b, norm_ky0_sq=ky, norm_kxL_sq=kx, invnorm=invnorm)


def residual(K: PseudoKernel, sample_points) -> float:
    """Max of ``|G_ttt - 3 G_stt + 3 G_sst + G_t + lam G|`` over ``(s, t)`` samples."""
    pts = np.asarray(sample_points, dtype=float).reshape(-1, 2)
    s, t = pts[:, 0], pts[:, 1]
    if np.any(s < -1e-12) or np.any(t < -1e-12) or np.any(s + t > K.L * (1 + 1e-12)):
        raise ValueError("sample points must lie in {s, t >= 0, s + t <= L}")
    G = K._float_series
    Gsst = poly_diff(poly_diff(G, "s", 2), "t", 1)
    r = (poly_eval(poly_diff(G, "t", 3), s, t)
         - 3 * poly_eval(poly_diff(poly_diff(G, "s", 1), "t", 2), s, t)
         + 3 * poly_eval(Gsst, s, t)
         + poly_eval(K._Gt.to_float(), s, t)
         + K.lam * poly_eval(G, s, t))
    return float(np.max(np.abs(r)))


def dump_kernel(K: PseudoKernel) -> str:
    """JSON text; coefficients written with 17 significant digits."""
    head = {"lambda": K.lam, "L": K.L, "n_terms": K.n_terms, "tail_bound": K.tail_bound}
    lines = [f"    [{m}, {k}, {float(c):.17g}]" for (m, k), c in K.series.items()]
    body = json.dumps(head, indent=2)[:-2]
    return body + ',\n  "terms": [\n' + ",\n".join(lines) + "\n  ]\n}\n"


def load_kernel(text: str) -> PseudoKernel:
    data = json.loads(text)
    series = Poly2({(int(m), int(k)): float(c) for m, k, c in data["terms"]})
    return PseudoKernel(lam=float(data["lambda"]), L=float(data["L"]), series=series,
                        n_terms=int(data["n_terms"]), tail_bound=float(data["tail_bound"]))


def variant_alpha(lam: float, L: float, n_terms: int = 5) -> float:
    """Decay rate from a variant operator that omits the 1/3 prefactor and flips the
    sign of the mixed ``f_stt`` term, summed over ``n_terms`` terms.

    Diagnostic only: the resulting series does not satisfy the kernel PDE.  It
    exists because some reference tables of ``alpha`` at ``L = 2 pi`` were
    produced this way.
    """
    scale = lam / 3
    H = Poly2({(1, 1): 1.0})
    parts: dict = {}
    for _ in range(n_terms):
        for key, c in H.items():
            parts.setdefault(key, []).append(scale * c)
        nxt: dict = {}
        for (m, k), c in H.items():
            for key, ci in _variant_images(m, k, lam):
                nxt.setdefault(key, []).append(c * ci)
        H = Poly2({key: math.fsum(v) for key, v in nxt.items()})
    G = Poly2({k: math.fsum(v) for k, v in parts.items()})
    q = poly_restrict_t(poly_diff(G, "t", 1), 0)
    return lam - 0.5 * poly_int_sq(q, 0, L)


def _variant_images(m: int, k: int, lam: float):
    if k > 2:
        yield (m + 2, k - 2), -k * (k - 1) / ((m + 1) * (m + 2))
    if k > 1:
        yield (m + 1, k - 1), -3 * k / (m + 1)
    if k > 0:
        yield (m + 2, k), -1 / ((m + 1) * (m + 2))
    yield (m + 2, k + 1), -lam / ((m + 1) * (m + 2) * (k + 1))
