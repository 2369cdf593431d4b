import math

import numpy as np
import pytest

from kdvbs.cli import main, read_config, sweep_workers, UsageError


def run(tmp_path, *args):
    return main(list(args) + ["--out", str(tmp_path)])


def test_kernel_command(tmp_path, capsys):
    assert run(tmp_path, "kernel", "--lambda", "0.03", "--grid", "64") == 0
    lines = (tmp_path / "decay.csv").read_text().splitlines()
    assert lines[0].startswith("# kdvbs ") and "lam=0.03" in lines[0]
    assert lines[1].split(",")[:4] == ["lambda", "L", "n_terms", "alpha"]
    assert (tmp_path / "kernel.json").exists()
    assert "alpha=0.02959392" in capsys.readouterr().out


def test_kernel_rejects_zero_lambda(tmp_path):
    assert run(tmp_path, "kernel", "--lambda", "0") == 2


def test_usage_errors(tmp_path):
    assert main(["nonsense"]) == 2
    assert run(tmp_path, "simulate", "--dt", "-1") == 2
    assert run(tmp_path, "simulate", "--mode", "controlled2", "--lambda", "0") == 2
    assert run(tmp_path, "table1", "--lambdas", "0.1,-1") == 2


def test_math_failure_exit_code(tmp_path):
    assert run(tmp_path, "kernel", "--lambda", "0.03", "--n-max", "2") == 3


def test_io_error_exit_code(tmp_path):
    target = tmp_path / "file"
    target.write_text("x")
    assert main(["kernel", "--lambda", "0.03", "--out", str(target / "sub")]) == 5
    assert main(["kernel", "--lambda", "0.03", "--config", str(tmp_path / "missing.cfg")]) == 5


def test_table1_columns(tmp_path):
    assert run(tmp_path, "table1", "--lambdas", "0.01,0.03") == 0
    data = np.genfromtxt(tmp_path / "table1.csv", delimiter=",", names=True, skip_header=1)
    assert list(data.dtype.names) == ["lambda", "alpha", "published_alpha", "variant_alpha",
                                      "n_terms"]
    np.testing.assert_allclose(data["variant_alpha"], data["published_alpha"], rtol=1e-5)
    assert data["alpha"][1] == pytest.approx(0.029593922859, rel=1e-9)


def test_simulate_uncontrolled_short(tmp_path):
    assert run(tmp_path, "simulate", "--mode", "uncontrolled", "--grid", "100",
               "--dt", "0.01", "--steps", "200") == 0
    e = np.loadtxt(tmp_path / "trace.csv", delimiter=",", skiprows=2)[:, 1]
    # numerical damping of the first-order stencil is about dx / 6 per unit time
    dx = 2 * math.pi / 100
    assert abs(e[-1] / e[0] - 1) < 1.5 * dx / 6 * 2.0


def test_simulate_with_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# short run\nlambda = 0.03\ngrid = 40\ndt = 0.01\nsteps = 30\n"
                   "mode = controlled2\nsnapshot-every = 10\n")
    assert run(tmp_path, "simulate", "--config", str(cfg), "--steps", "20") == 0
    head = (tmp_path / "trace.csv").read_text().splitlines()[0]
    assert "steps=20" in head and "grid=40" in head
    snaps = (tmp_path / "snapshots.csv").read_text().splitlines()
    assert snaps[1] == "x,t=0,t=0.1,t=0.2"


def test_config_rejects_unknown_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    assert run(tmp_path, "spectral", "--config", str(cfg)) == 2


def test_read_config(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("a = 1\n\n# c\nb-c=x # trailing\n")
    assert read_config(p) == {"a": "1", "b_c": "x"}
    p.write_text("novalue\n")
    with pytest.raises(UsageError):
        read_config(p)


def test_spectral_command(tmp_path):
    assert run(tmp_path, "spectral", "--k-max", "5") == 0
    data = np.loadtxt(tmp_path / "eigenvalues.csv", delimiter=",", skiprows=2)
    assert data.shape == (5, 5)
    assert np.all(data[:, 1] < 0)


def test_transform_check_command(tmp_path):
    assert run(tmp_path, "transform-check", "--lambda", "0.03", "--grid", "32") == 0
    data = np.genfromtxt(tmp_path / "transform_check.csv", delimiter=",", names=True,
                         skip_header=1, dtype=None, encoding="utf-8")
    assert np.all(data["roundtrip_rel_error"] < 1e-8)


def test_sweep_command_and_determinism(tmp_path, monkeypatch):
    args = ["sweep", "--lambdas", "0.01,0.02", "--grid", "32", "--dt", "0.05",
            "--steps", "60", "--invnorm-grid", "32"]
    monkeypatch.setenv("KDVBS_THREADS", "1")
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("KDVBS_THREADS", "2")
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "sweep.csv").read_bytes()
    assert a == (tmp_path / "b" / "sweep.csv").read_bytes()


def test_sweep_workers(monkeypatch):
    monkeypatch.setenv("KDVBS_THREADS", "3")
    assert sweep_workers(10) == 3
    assert sweep_workers(2) == 2
    monkeypatch.setenv("KDVBS_THREADS", "0")
    with pytest.raises(UsageError):
        sweep_workers(2)


def test_repeated_runs_are_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["kernel", "--lambda", "0.05", "--out", str(tmp_path / d)]) == 0
    for name in ("kernel.json", "decay.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_initial_condition_presets():
    from kdvbs.cli import initial_condition
    x = np.linspace(0, 2 * math.pi, 9)
    np.testing.assert_allclose(initial_condition("one_minus_cos", 2.0, 2 * math.pi)(x),
                               2 * (1 - np.cos(x)))
    assert not np.any(initial_condition("zero", 1.0, 1.0)(x))
    g = initial_condition("gaussian", 1.0, 2 * math.pi)(x)
    assert g.max() == pytest.approx(1.0)
    with pytest.raises(UsageError):
        initial_condition("square", 1.0, 1.0)
