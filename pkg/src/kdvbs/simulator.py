"""Implicit finite differences for the controlled and uncontrolled linear/nonlinear KdV plant.

Grid: ``x_j = j dx``, ``j = 0..J``.  The unknowns are ``j = 1..J-2``; the
boundary conditions ``w(0) = w(L) = w_x(L) = 0`` are imposed as
``w_0 = w_{J-1} = w_J = 0``.  ``w_x + w_xxx`` is approximated by
``D+ D+ D- + D`` with ``D`` the centred difference, and time stepping is
backward Euler with the boundary trace ``w_x(0)`` taken explicitly as
``w_1 / dx``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import lapack

from .errors import Blowup, NoConvergence
from .kernel import PseudoKernel, kernel_dx, kernel_dy, kernel_value
from .transform import (
    DiscreteK,
    GridFunction,
    discretize_K,
    forward,
    grid,
    inverse_succession,
)

log = logging.getLogger(__name__)

__all__ = [
    "MODES",
    "Banded",
    "BandedLU",
    "SchemeConfig",
    "SimTrace",
    "build_A",
    "factor_C",
    "fit_decay_rate",
    "init_cell_average",
    "simulate",
    "step_target",
]

MODES = ("controlled2", "controlled1", "uncontrolled", "nonlinear_controlled2")
BLOWUP_FACTOR = 1e6
NONLINEAR_TOL = 1e-10
NONLINEAR_MAX_ITER = 25


@dataclass(frozen=True)
class Banded:
    """Square banded matrix in LAPACK ``(kl + ku + 1, n)`` storage.

    ``ab[ku + i - j, j] == A[i, j]``.
    """

    kl: int
    ku: int
    ab: np.ndarray

    @property
    def n(self) -> int:
        return self.ab.shape[1]

    def todense(self) -> np.ndarray:
        n = self.n
        A = np.zeros((n, n))
        for j in range(n):
            for i in range(max(0, j - self.ku), min(n, j + self.kl + 1)):
                A[i, j] = self.ab[self.ku + i - j, j]
        return A

    def matvec(self, x: np.ndarray) -> np.ndarray:
        n = self.n
        y = np.zeros(n)
        for d in range(-self.kl, self.ku + 1):
            row = self.ku - d
            if d >= 0:
                y[: n - d] += self.ab[row, d:] * x[d:]
            else:
                y[-d:] += self.ab[row, : n + d] * x[: n + d]
        return y

    def scaled_plus_identity(self, a: float, b: float) -> "Banded":
        """``a I + b A``."""
        ab = b * self.ab
        ab[self.ku] += a
        return Banded(self.kl, self.ku, ab)


def build_A(J: int, dx: float) -> Banded:
    """``D+ D+ D- + D`` on the interior unknowns ``j = 1..J-2``.

    Row ``j``: ``(w_{j+2} - 3 w_{j+1} + 3 w_j - w_{j-1}) / dx^3 + (w_{j+1} - w_{j-1}) / (2 dx)``,
    with ``w_0 = w_{J-1} = w_J = 0`` dropped.  Offsets -1, 0, +1, +2 only.
    """
    if J < 8:
        raise ValueError("J must be >= 8")
    n = J - 2
    c3 = 1.0 / dx**3
    c1 = 0.5 / dx
    kl, ku = 1, 2
    ab = np.zeros((kl + ku + 1, n))
    # ab[ku + i - j, j] = A[i, j]; diagonals: offset d = j - i -> row ku - d
    ab[ku - 2, 2:] = c3                 # A[i, i+2]
    ab[ku - 1, 1:] = -3 * c3 + c1       # A[i, i+1]
    ab[ku, :] = 3 * c3                  # A[i, i]
    ab[ku + 1, :-1] = -c3 - c1          # A[i, i-1]
    return Banded(kl, ku, ab)


@dataclass(frozen=True)
class BandedLU:
    kl: int
    ku: int
    lu: np.ndarray
    piv: np.ndarray

    def solve(self, b: np.ndarray) -> np.ndarray:
        x, info = lapack.dgbtrs(self.lu, self.kl, self.ku, b, self.piv)
        if info != 0:
            raise np.linalg.LinAlgError(f"dgbtrs failed (info={info})")
        return x


def factor_C(J: int, dx: float, dt: float, lam: float) -> BandedLU:
    """LU of ``C = (1 + dt lam) I + dt A``."""
    C = build_A(J, dx).scaled_plus_identity(1.0 + dt * lam, dt)
    kl, ku = C.kl, C.ku
    ab = np.zeros((2 * kl + ku + 1, C.n))
    ab[kl:] = C.ab
    lu, piv, info = lapack.dgbtrf(ab, kl, ku)
    if info != 0:
        raise np.linalg.LinAlgError(f"C is singular (dgbtrf info={info})")
    return BandedLU(kl, ku, lu, piv)


def step_target(w: np.ndarray, C: BandedLU, gain: np.ndarray | None, dt: float, dx: float,
                extra_rhs: np.ndarray | None = None) -> np.ndarray:
    """One backward-Euler step of the target system.

    ``w`` and ``gain`` are full length ``J + 1`` arrays; ``gain`` holds
    ``k_y(x_j, 0)`` (``None`` for no trace term).  ``extra_rhs`` (interior,
    length ``J - 2``) is added to the right side before the solve.
    """
    rhs = w[1:-2].copy()
    if gain is not None:
        rhs += (dt / dx) * gain[1:-2] * w[1]
    if extra_rhs is not None:
        rhs += extra_rhs
    out = np.zeros_like(w)
    out[1:-2] = C.solve(rhs)
    return out


def init_cell_average(u0: Callable, J: int, L: float) -> GridFunction:
    """Cell averages of ``u0`` over ``[x_j - dx/2, x_j + dx/2]``, ``j = 1..J-1``.

    Three-point Gauss per cell; entries 0, J-1 and J are set to zero.
    """
    dx = L / J
    nodes, weights = np.polynomial.legendre.leggauss(3)
    xc = grid(L, J)[1:J]
    vals = np.zeros(J + 1)
    acc = np.zeros(J - 1)
    for xi, wi in zip(nodes, weights):
        acc += 0.5 * wi * np.asarray(u0(xc + 0.5 * dx * xi), dtype=float)
    vals[1:J] = acc
    vals[J - 1] = 0.0
    return GridFunction(L, vals)


@dataclass
class SchemeConfig:
    L: float
    J: int = 200
    dt: float = 1e-3
    N_steps: int = 30000
    lam: float = 0.0
    mode: str = "controlled2"
    m_succession: int | None = None
    snapshot_every: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.J < 8:
            raise ValueError("J must be >= 8")
        if not (self.dt > 0 and self.L > 0):
            raise ValueError("dt and L must be positive")
        if self.N_steps < 1:
            raise ValueError("N_steps must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.m_succession is not None and self.m_succession < 1:
            raise ValueError("m_succession must be >= 1")

    @property
    def dx(self) -> float:
        return self.L / self.J

    @property
    def T(self) -> float:
        return self.dt * self.N_steps


@dataclass
class SimTrace:
    times: np.ndarray
    energy: np.ndarray
    u_left_deriv: np.ndarray
    dirichlet_U: np.ndarray
    neumann_V: np.ndarray
    snapshots: dict[float, GridFunction] = field(default_factory=dict)
    succession_residual: np.ndarray | None = None
    inner_iterations: np.ndarray | None = None

    def to_csv(self, path, meta: str | None = None) -> None:
        """Columns ``t, energy, u_left_deriv, U, V``; ``meta`` becomes a leading ``#`` line."""
        data = np.column_stack([self.times, self.energy, self.u_left_deriv,
                                self.dirichlet_U, self.neumann_V])
        with open(path, "w", encoding="utf-8") as fh:
            if meta:
                fh.write(f"# {meta}\n")
            np.savetxt(fh, data, delimiter=",", fmt="%.12g",
                       header="t,energy,u_left_deriv,U,V", comments="")


def _energy(u: np.ndarray, dx: float) -> float:
    return math.sqrt(dx * float(np.dot(u, u)))


def _trapz_row(L: float, J: int) -> np.ndarray:
    w = np.full(J + 1, L / J)
    w[0] = w[-1] = 0.5 * L / J
    return w


def simulate(config: SchemeConfig, u0: Callable | GridFunction,
             kernel: PseudoKernel | None = None) -> SimTrace:
    """Run one simulation and record energy and boundary signals at every step.

    ``energy`` is ``sqrt(dx sum u_j^2)`` of the plant state ``u``.  In the
    ``controlled2`` modes the target state is marched and ``u`` is recovered by
    successive substitution at every step.
    """
    cfg = config
    J, L, dt, dx = cfg.J, cfg.L, cfg.dt, cfg.dx
    x = grid(L, J)
    controlled = cfg.mode != "uncontrolled"
    if controlled:
        if kernel is None:
            raise ValueError(f"mode {cfg.mode!r} needs a kernel")
        if not (math.isclose(kernel.lam, cfg.lam) and math.isclose(kernel.L, L)):
            raise ValueError("kernel (lam, L) does not match the scheme config")

    if isinstance(u0, GridFunction):
        if u0.J != J:
            raise ValueError("initial GridFunction has the wrong J")
        u_init = u0.values.copy()
    else:
        u_init = init_cell_average(u0, J, L).values.copy()

    n = cfg.N_steps
    times = dt * np.arange(n + 1)
    energy = np.zeros(n + 1)
    uld = np.zeros(n + 1)
    U = np.zeros(n + 1)
    V = np.zeros(n + 1)
    snaps: dict[float, GridFunction] = {}
    inner = None
    succ_res = None

    def snap(i, u):
        if cfg.snapshot_every and i % cfg.snapshot_every == 0:
            snaps[float(times[i])] = GridFunction(L, u.copy())

    if cfg.mode == "uncontrolled":
        C = factor_C(J, dx, dt, 0.0)
        u = u_init
        u[0] = u[J - 1] = u[J] = 0.0
        for i in range(n + 1):
            if i > 0:
                u = step_target(u, C, None, dt, dx)
            energy[i] = _energy(u, dx)
            uld[i] = u[1] / dx
            snap(i, u)
            _check_blowup(energy, i)
        return SimTrace(times, energy, uld, U, V, snaps)

    qw = _trapz_row(L, J)
    kL = qw * kernel_value(kernel, np.full(J + 1, L), x)
    kxL = qw * kernel_dx(kernel, np.full(J + 1, L), x)

    if cfg.mode == "controlled1":
        return _simulate_single(cfg, u_init, kL, kxL, times, snaps, snap)

    Kd = discretize_K(kernel, J)
    gain = kernel_dy(kernel, x, np.zeros_like(x))
    C = factor_C(J, dx, dt, cfg.lam)
    w = forward(Kd, GridFunction(L, u_init)).values.copy()
    w[0] = w[J - 1] = w[J] = 0.0
    succ_res = np.zeros(n + 1)
    nonlinear = cfg.mode == "nonlinear_controlled2"
    if nonlinear:
        inner = np.zeros(n + 1, dtype=int)
        I_minus_K = np.eye(J + 1) - Kd.matrix
        R = np.linalg.inv(I_minus_K)

    for i in range(n + 1):
        if i > 0:
            if nonlinear:
                w, its = _nonlinear_step(w, C, gain, dt, dx, I_minus_K, R)
                inner[i] = its
            else:
                w = step_target(w, C, gain, dt, dx)
        res = inverse_succession(Kd, GridFunction(L, w), m=cfg.m_succession)
        u = res.u.values
        succ_res[i] = res.increment
        energy[i] = _energy(u, dx)
        uld[i] = w[1] / dx
        U[i] = kL @ u
        V[i] = kxL @ u
        snap(i, u)
        _check_blowup(energy, i)
    return SimTrace(times, energy, uld, U, V, snaps, succ_res, inner)


def _nonlinear_step(w, C, gain, dt, dx, I_minus_K, R):
    """Fixed point on ``w^{n+1} = C^{-1}(w^n + trace - dt (I-K)[u u_x])``, ``u = (I-K)^{-1} w^{n+1}``."""
    rhs0 = w[1:-2] + (dt / dx) * gain[1:-2] * w[1]
    cur = w
    for it in range(1, NONLINEAR_MAX_ITER + 1):
        u = R @ cur
        ux = np.zeros_like(u)
        ux[1:-1] = (u[2:] - u[:-2]) / (2 * dx)
        ux[-1] = (u[-1] - u[-2]) / dx
        f = u * ux
        nl = (I_minus_K @ f)[1:-2]
        new = np.zeros_like(w)
        new[1:-2] = C.solve(rhs0 - dt * nl)
        inc = math.sqrt(dx * float(np.sum((new - cur) ** 2)))
        cur = new
        if inc < NONLINEAR_TOL:
            return cur, it
    raise NoConvergence(f"nonlinear inner iteration: increment {inc:.3e} after {NONLINEAR_MAX_ITER} iterations")


def _simulate_single(cfg, u, kL, kxL, times, snaps, snap):
    # plant with lagged Dirichlet feedback u_{J-1} = u_J = U^n and u_0 = 0
    J, dt, dx = cfg.J, cfg.dt, cfg.dx
    n = cfg.N_steps
    C = factor_C(J, dx, dt, 0.0)
    c3 = 1.0 / dx**3
    c1 = 0.5 / dx
    energy = np.zeros(n + 1)
    uld = np.zeros(n + 1)
    U = np.zeros(n + 1)
    V = np.zeros(n + 1)
    u = u.copy()
    u[0] = 0.0
    Ub = kL @ u
    u[J - 1] = u[J] = Ub
    for i in range(n + 1):
        if i > 0:
            Ub = kL @ u
            rhs = u[1:-2].copy()
            # known boundary values u_{J-1} = u_J = Ub moved to the right side
            rhs[-1] -= dt * ((-3 * c3 + c1) * Ub + c3 * Ub)
            rhs[-2] -= dt * (c3 * Ub)
            new = np.zeros_like(u)
            new[1:-2] = C.solve(rhs)
            new[J - 1] = new[J] = Ub
            u = new
        energy[i] = _energy(u, dx)
        uld[i] = u[1] / dx
        U[i] = u[J]
        snap(i, u)
        _check_blowup(energy, i)
    return SimTrace(times, energy, uld, U, V, snaps)


def _check_blowup(energy: np.ndarray, i: int):
    if energy[0] > 0 and energy[i] > BLOWUP_FACTOR * energy[0]:
        raise Blowup(f"energy {energy[i]:.3e} exceeds {BLOWUP_FACTOR:g} x initial at step {i}")
    if not math.isfinite(energy[i]):
        raise Blowup(f"non-finite energy at step {i}")


def fit_decay_rate(trace: SimTrace, t_start: float, t_end: float) -> float:
    """Negated least-squares slope of ``log(energy)`` against ``t`` on ``[t_start, t_end]``."""
    t = np.asarray(trace.times)
    e = np.asarray(trace.energy)
    sel = (t >= t_start) & (t <= t_end)
    if sel.sum() < 2:
        raise ValueError("fit window holds fewer than two samples")
    if np.any(e[sel] <= 0):
        raise ValueError("energy vanishes inside the fit window")
    slope = np.polyfit(t[sel], np.log(e[sel]), 1)[0]
    return float(-slope)
