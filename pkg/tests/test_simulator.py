import math

import numpy as np
import pytest

from kdvbs.errors import Blowup
from kdvbs.kernel import build_kernel, kernel_dy
from kdvbs.simulator import (SchemeConfig, SimTrace, _check_blowup, build_A, factor_C,
                             fit_decay_rate, init_cell_average, simulate, step_target)
from kdvbs.transform import discretize_K, forward, GridFunction, grid

TWO_PI = 2 * math.pi


def one_minus_cos(x):
    return 1 - np.cos(x)


# -------------------------------------------------------------------- build_A

def test_bandwidth():
    A = build_A(12, 0.1).todense()
    i, j = np.nonzero(A)
    assert set(j - i) == {-1, 0, 1, 2}


def test_interior_rows_annihilate_constants():
    A = build_A(20, 0.3).todense()
    r = A @ np.ones(18)
    # rows whose stencil stays inside the unknowns j = 1..J-2
    np.testing.assert_allclose(r[1:-2], 0.0, atol=1e-9)


def test_matvec_matches_dense():
    B = build_A(16, 0.2)
    x = np.random.default_rng(0).standard_normal(14)
    np.testing.assert_allclose(B.matvec(x), B.todense() @ x, rtol=1e-13)


def test_stencil_consistency_on_sine():
    # w = sin gives w_x + w_xxx = 0.  The forward-biased third difference is first
    # order with leading error (dx/2) w_xxxx = (dx/2) sin; after removing that
    # term the remainder is second order.
    errs, rem = [], []
    for J in (200, 400, 800):
        L = TWO_PI
        dx = L / J
        x = grid(L, J)
        w = np.sin(x)
        A = build_A(J, dx).todense()
        full = np.zeros(J + 1)
        full[1:-2] = A @ w[1:-2]
        rows = slice(2, J - 4)  # rows that never touch a dropped boundary value
        e = full[rows]
        errs.append(np.max(np.abs(e)))
        rem.append(np.max(np.abs(e - 0.5 * dx * np.sin(x[rows]))))
    first = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    second = [math.log2(a / b) for a, b in zip(rem, rem[1:])]
    assert all(0.9 < r < 1.1 for r in first)
    assert all(1.9 < r < 2.1 for r in second)


# ---------------------------------------------------------------- step_target

def test_zero_state_stays_zero():
    J, dx, dt = 32, TWO_PI / 32, 1e-3
    C = factor_C(J, dx, dt, 0.03)
    gain = np.linspace(0, 1, J + 1)
    assert not np.any(step_target(np.zeros(J + 1), C, gain, dt, dx))


def test_step_matches_dense_solve():
    J, L, dt, lam = 40, TWO_PI, 1e-2, 0.05
    dx = L / J
    K = build_kernel(lam, L)
    x = grid(L, J)
    gain = kernel_dy(K, x, 0 * x)
    w = np.sin(x) * x * (L - x)
    w[0] = w[J - 1] = w[J] = 0
    got = step_target(w, factor_C(J, dx, dt, lam), gain, dt, dx)
    Cd = (1 + dt * lam) * np.eye(J - 2) + dt * build_A(J, dx).todense()
    rhs = w[1:-2] + dt / dx * gain[1:-2] * w[1]
    np.testing.assert_allclose(got[1:-2], np.linalg.solve(Cd, rhs), rtol=0, atol=1e-12)
    assert got[0] == got[J - 1] == got[J] == 0


def test_uncontrolled_energy_is_non_increasing():
    cfg = SchemeConfig(L=TWO_PI, J=100, dt=1e-2, N_steps=400, mode="uncontrolled")
    tr = simulate(cfg, lambda x: np.exp(-4 * (x - 3) ** 2))
    assert np.all(np.diff(tr.energy) <= 1e-15)


# ---------------------------------------------------------- init_cell_average

def test_cell_average_zero_and_constant():
    assert not np.any(init_cell_average(lambda x: 0 * x, 16, 2.0).values)
    v = init_cell_average(lambda x: 2.5 + 0 * x, 16, 2.0).values
    np.testing.assert_allclose(v[1:15], 2.5)
    assert v[0] == v[15] == v[16] == 0


def test_cell_average_of_one_minus_cos():
    J, L = 200, TWO_PI
    dx = L / J
    x = grid(L, J)[1 : J - 1]
    exact = 1 - (np.sin(x + dx / 2) - np.sin(x - dx / 2)) / dx
    got = init_cell_average(one_minus_cos, J, L).values[1 : J - 1]
    np.testing.assert_allclose(got, exact, rtol=0, atol=1e-10)


# ------------------------------------------------------------------- configs

def test_config_validation():
    with pytest.raises(ValueError):
        SchemeConfig(L=TWO_PI, mode="other")
    with pytest.raises(ValueError):
        SchemeConfig(L=TWO_PI, J=4)
    with pytest.raises(ValueError):
        SchemeConfig(L=TWO_PI, dt=0)
    with pytest.raises(ValueError):
        SchemeConfig(L=TWO_PI, lam=-1)
    with pytest.raises(ValueError):
        SchemeConfig(L=TWO_PI, m_succession=0)
    cfg = SchemeConfig(L=TWO_PI, dt=1e-3, N_steps=30000)
    assert cfg.T == pytest.approx(30.0)


def test_controlled_mode_needs_matching_kernel(kernel_003):
    cfg = SchemeConfig(L=TWO_PI, J=32, N_steps=2, lam=0.03)
    with pytest.raises(ValueError):
        simulate(cfg, one_minus_cos)
    cfg = SchemeConfig(L=TWO_PI, J=32, N_steps=2, lam=0.05)
    with pytest.raises(ValueError):
        simulate(cfg, one_minus_cos, kernel_003)


@pytest.mark.parametrize("mode", ["uncontrolled", "controlled2", "controlled1",
                                  "nonlinear_controlled2"])
def test_zero_initial_data_stays_zero(mode, kernel_003):
    lam = 0.0 if mode == "uncontrolled" else 0.03
    cfg = SchemeConfig(L=TWO_PI, J=32, dt=1e-2, N_steps=20, lam=lam, mode=mode)
    tr = simulate(cfg, lambda x: 0 * x, None if mode == "uncontrolled" else kernel_003)
    for arr in (tr.energy, tr.dirichlet_U, tr.neumann_V, tr.u_left_deriv):
        assert not np.any(arr)
        assert len(arr) == 21


# ---------------------------------------------------------------- behaviour

def test_uncontrolled_drift_is_first_order_in_dx():
    drifts = []
    for J in (100, 200, 400):
        cfg = SchemeConfig(L=TWO_PI, J=J, dt=1e-2, N_steps=1000, mode="uncontrolled")
        tr = simulate(cfg, one_minus_cos)
        drifts.append(1 - tr.energy[-1] / tr.energy[0])
    ratios = [a / b for a, b in zip(drifts, drifts[1:])]
    assert all(1.7 < r < 2.3 for r in ratios)


def test_controlled2_decay_and_controller(kernel_003):
    cfg = SchemeConfig(L=TWO_PI, J=100, dt=1e-2, N_steps=2000, lam=0.03)
    tr = simulate(cfg, one_minus_cos, kernel_003)
    assert tr.energy[-1] < 0.6 * tr.energy[0]
    assert fit_decay_rate(tr, 5, 20) > 0.8 * 0.029593922859
    late = np.abs(tr.dirichlet_U[tr.times >= 15])
    assert late.max() < np.abs(tr.dirichlet_U).max()
    assert np.max(tr.succession_residual) < 1e-10


def test_reconstruction_consistent_with_target(kernel_003):
    J = 64
    cfg = SchemeConfig(L=TWO_PI, J=J, dt=1e-2, N_steps=50, lam=0.03, snapshot_every=10)
    tr = simulate(cfg, one_minus_cos, kernel_003)
    Kd = discretize_K(kernel_003, J)
    # march the target system independently and compare with (I - K) u
    x = grid(TWO_PI, J)
    gain = kernel_dy(kernel_003, x, 0 * x)
    C = factor_C(J, cfg.dx, cfg.dt, 0.03)
    w = forward(Kd, init_cell_average(one_minus_cos, J, TWO_PI)).values.copy()
    w[0] = w[J - 1] = w[J] = 0
    for i in range(cfg.N_steps + 1):
        if i > 0:
            w = step_target(w, C, gain, cfg.dt, cfg.dx)
        if i % 10 == 0:
            u = tr.snapshots[float(tr.times[i])]
            diff = forward(Kd, u).values - w
            assert np.sqrt(cfg.dx * np.sum(diff**2)) <= 1e-9


def test_target_energy_slope(kernel_003):
    # log ||w||^2 decreases with slope at most -2 alpha (1 - 0.2) on [5, T]
    J, dt, steps = 200, 1e-2, 2000
    L = TWO_PI
    dx = L / J
    x = grid(L, J)
    gain = kernel_dy(kernel_003, x, 0 * x)
    C = factor_C(J, dx, dt, 0.03)
    w = forward(discretize_K(kernel_003, J), init_cell_average(one_minus_cos, J, L)).values.copy()
    w[0] = w[J - 1] = w[J] = 0
    t, e2 = [], []
    for i in range(steps + 1):
        if i > 0:
            w = step_target(w, C, gain, dt, dx)
        t.append(i * dt)
        e2.append(dx * np.sum(w**2))
    t, e2 = np.array(t), np.array(e2)
    sel = t >= 5
    slope = np.polyfit(t[sel], np.log(e2[sel]), 1)[0]
    assert slope <= -2 * 0.029593922859 * 0.8


def test_controlled1_decays(kernel_003):
    cfg = SchemeConfig(L=TWO_PI, J=100, dt=1e-2, N_steps=2000, lam=0.03, mode="controlled1")
    tr = simulate(cfg, one_minus_cos, kernel_003)
    assert fit_decay_rate(tr, 5, 20) > 0
    assert np.all(tr.neumann_V == 0)


def test_nonlinear_small_data_tracks_linear(kernel_003):
    eps = 1e-3
    base = dict(L=TWO_PI, J=64, dt=1e-2, N_steps=200, lam=0.03)
    lin = simulate(SchemeConfig(mode="controlled2", **base), lambda x: eps * one_minus_cos(x),
                   kernel_003)
    nl = simulate(SchemeConfig(mode="nonlinear_controlled2", **base),
                  lambda x: eps * one_minus_cos(x), kernel_003)
    assert np.max(np.abs(nl.energy - lin.energy)) < 1e-2 * eps
    assert nl.inner_iterations[1:].max() <= 25
    assert nl.inner_iterations[1:].min() >= 1


def test_fixed_m_succession_runs(kernel_003):
    cfg = SchemeConfig(L=TWO_PI, J=32, dt=1e-2, N_steps=5, lam=0.03, m_succession=2)
    tr = simulate(cfg, one_minus_cos, kernel_003)
    assert np.all(np.isfinite(tr.energy))


# ------------------------------------------------------------------- fitting

def test_fit_exact_exponential():
    t = np.linspace(0, 10, 101)
    tr = SimTrace(t, np.exp(-0.5 * t), t, t, t)
    assert fit_decay_rate(tr, 1, 9) == pytest.approx(0.5, rel=1e-12)


def test_fit_rejects_zero_energy_and_empty_window():
    t = np.linspace(0, 1, 11)
    tr = SimTrace(t, np.zeros(11), t, t, t)
    with pytest.raises(ValueError):
        fit_decay_rate(tr, 0, 1)
    with pytest.raises(ValueError):
        fit_decay_rate(SimTrace(t, np.ones(11), t, t, t), 2, 3)


def test_blowup_detection():
    e = np.array([1.0, 2e6])
    with pytest.raises(Blowup):
        _check_blowup(e, 1)
    with pytest.raises(Blowup):
        _check_blowup(np.array([1.0, np.nan]), 1)


def test_trace_csv(tmp_path):
    t = np.linspace(0, 1, 5)
    tr = SimTrace(t, 1 + t, t, t, t)
    path = tmp_path / "trace.csv"
    tr.to_csv(path, meta="run info")
    lines = path.read_text().splitlines()
    assert lines[0] == "# run info"
    assert lines[1] == "t,energy,u_left_deriv,U,V"
    data = np.loadtxt(path, delimiter=",", skiprows=2)
    np.testing.assert_allclose(data[:, 1], 1 + t)
