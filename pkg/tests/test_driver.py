import json
import warnings

import numpy as np
import pytest

from mixlag import cli, driver
from mixlag.errors import ConfigError, EstimationError
from mixlag.driver import Check, estimate_order, read_config

ZERO_ALL = """
[scenario]
field = zero
boundary = periodic
n = 32
n_t = 16

[experiment]
kinds = all
eps = 4e-3, 2e-3, 1e-3, 5e-4
family_size = 8
"""

SHEAR_SMALL = """
[scenario]
field = shear
n = 32
n_t = 32

[experiment]
kinds = averaging, transport, areas, cheeger
family_size = 8
"""


def write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# estimate_order -------------------------------------------------------------

def test_order_quadratic():
    assert estimate_order([(1, 1), (0.5, 0.25), (0.25, 0.0625)]) == pytest.approx(2.0)


def test_order_linear():
    assert estimate_order([(1, 1), (0.5, 0.5), (0.25, 0.25)]) == pytest.approx(1.0)


def test_order_noisy_quadratic():
    rng = np.random.default_rng(7)
    eps = 4e-3 / 2.0 ** np.arange(6)
    errs = 3.0 * eps ** 2 * (1 + 0.05 * rng.uniform(-1, 1, eps.size))
    assert 1.9 <= estimate_order(zip(eps, errs)) <= 2.1


def test_order_filters_nonpositive():
    with pytest.warns(RuntimeWarning):
        p = estimate_order([(1, 1), (0.5, 0.0), (0.5, 0.25), (0.25, 0.0625), (0.1, -1)])
    assert p == pytest.approx(2.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(EstimationError):
            estimate_order([(1, 1), (0.5, 0.0), (0.25, 0.0625)])


# config -----------------------------------------------------------------------

def test_defaults_and_overrides():
    cfg = read_config(text="[scenario]\nfield = shear\n", overrides=["scenario.n=128",
                                                                  "experiment.eps=1e-2,1e-3"])
    assert cfg.n == 128 and cfg.boundary == "periodic" and cfg.amplitude == 0.5
    assert cfg.eps == (1e-2, 1e-3)
    assert cfg.kinds == tuple(driver.ALL_EXPERIMENTS)
    gyre = read_config(text="[scenario]\nfield = double_gyre\nambient = 2, 0.5\n")
    assert gyre.boundary == "dirichlet" and gyre.ambient == (2.0, 0.5)


@pytest.mark.parametrize("text,overrides", [
    ("[scenario]\nn = 100\n", []),
    ("[scenario]\nn = 2048\n", []),
    ("[scenario]\nn_t = 8\n", []),
    ("[experiment]\neps = 1e-3, 2e-3\n", []),
    ("[experiment]\neps = 1e-3, -1\n", []),
    ("[experiment]\nkinds = bogus\n", []),
    ("[scenario]\nfield = vortex\n", []),
    ("[scenario]\nfield = shear\nboundary = dirichlet\n", []),
    ("[scenario]\ncolour = red\n", []),
    ("[plots]\nx = 1\n", []),
    ("", ["scenario.n"]),
    ("", ["n=32"]),
    ("", ["scenario.bogus=1"]),
    ("[scenario]\nambient = 1, -2\n", []),
    ("not an ini file", []),
])
def test_invalid_configs(text, overrides):
    with pytest.raises(ConfigError):
        read_config(text=text, overrides=overrides)


def test_missing_file():
    with pytest.raises(ConfigError):
        read_config("/nonexistent/config.ini")


def test_check_slack():
    c = Check("x", 1.5, 2.0, "<=")
    assert c.passed and c.slack == pytest.approx(0.5)
    c = Check("y", 1.5, 2.0, ">=")
    assert not c.passed and c.slack == pytest.approx(-0.5)
    assert not Check("z", float("nan"), 1.0, "<=").passed
    assert "FAIL" in Check("y", 1.5, 2.0, ">=").line()


# runs -------------------------------------------------------------------------

def test_zero_field_all_passes(tmp_path):
    cfg = read_config(text=ZERO_ALL, overrides=[f"output.dir={tmp_path}"])
    rep = driver.run(cfg)
    failed = [c.line() for c in rep.checks if not c.passed]
    assert not failed, failed
    avg = next(r for r in rep.results if r.kind == "averaging")
    assert max(row[1] for row in avg.rows) <= 1e-12
    out = rep.write()
    for kind in driver.ALL_EXPERIMENTS:
        header = (tmp_path / f"{kind}.csv").read_text().splitlines()[0]
        assert header.split(",")[0] in ("eps", "family")
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["passed"] is True
    assert out == str(tmp_path)


def test_shear_run_values(tmp_path):
    cfg = read_config(text=SHEAR_SMALL, overrides=[f"output.dir={tmp_path}"])
    rep = driver.run(cfg)
    tr = next(r for r in rep.results if r.kind == "transport")
    assert tr.values["T_bar_volume"] == pytest.approx(4 * np.pi, rel=1e-2)
    row = next(r for r in tr.rows if r[0] == 1e-3)
    assert row[3] == pytest.approx(12.566, rel=1e-2)
    cheeger = next(r for r in rep.results if r.kind == "cheeger")
    assert cheeger.values["horizontal_pairs_h_bar"] == pytest.approx(4.0, abs=1e-9)
    assert [r.kind for r in rep.results] == list(cfg.kinds)


def test_summary_byte_identical(tmp_path):
    outs = []
    d = tmp_path / "run"
    for _ in range(2):
        driver._SCENARIOS.clear()
        cfg = read_config(text=SHEAR_SMALL, overrides=[f"output.dir={d}",
                                                       "experiment.kinds=transport,areas"])
        driver.run(cfg).write()
        outs.append(((d / "summary.json").read_bytes(), (d / "transport.csv").read_bytes(),
                     (d / "areas.csv").read_bytes()))
    assert outs[0] == outs[1]


def test_parallel_matches_serial(tmp_path):
    text = ZERO_ALL.replace("kinds = all", "kinds = transport, areas, cheeger")
    cfg = read_config(text=text, overrides=[f"output.dir={tmp_path}"])
    a = driver.run(cfg, jobs=1).summary()
    b = driver.run(cfg, jobs=2).summary()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


# CLI exit codes -----------------------------------------------------------------

def test_cli_pass(tmp_path, capsys):
    path = write(tmp_path, ZERO_ALL)
    code = cli.main(["run", path, "--out", str(tmp_path / "out")])
    assert code == driver.EXIT_OK
    assert (tmp_path / "out" / "summary.json").exists()
    assert "PASS" in capsys.readouterr().out


def test_cli_check_failure(tmp_path, capsys):
    path = write(tmp_path, ZERO_ALL)
    code = cli.main(["check", path, "--override", "experiment.kinds=cheeger",
                     "--override", "experiment.slope_tol=0"])
    assert code == driver.EXIT_OK
    code = cli.main(["check", path, "--experiment.kinds", "singular_slope",
                     "--experiment.slope_tol", "-1"])
    assert code == driver.EXIT_CHECK
    assert "slope extrapolation" in capsys.readouterr().err


def test_cli_config_error(tmp_path, capsys):
    path = write(tmp_path, "[scenario]\nn = 33\n")
    assert cli.main(["check", path]) == driver.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    assert cli.main(["check", str(tmp_path / "missing.ini")]) == driver.EXIT_CONFIG
    assert cli.main(["check", write(tmp_path, ZERO_ALL, "b.ini"), "--jobs", "0"]) == driver.EXIT_CONFIG


def test_cli_solver_error(tmp_path, monkeypatch, capsys):
    from mixlag.errors import ConvergenceError

    def boom(cfg, jobs=1):
        raise ConvergenceError("did not converge", residual=1e-3)

    monkeypatch.setattr(driver, "run", boom)
    assert cli.main(["check", write(tmp_path, ZERO_ALL)]) == driver.EXIT_SOLVER
    assert "residual" in capsys.readouterr().err


def test_shipped_configs_parse():
    import glob
    import os
    root = os.path.join(os.path.dirname(__file__), "..", "configs")
    paths = sorted(glob.glob(os.path.join(root, "*.ini")))
    assert paths
    for p in paths:
        read_config(p)


def test_schema_covers_experiments():
    from importlib.resources import files
    schema = json.loads(files("mixlag").joinpath("data/csv_schema.json").read_text())
    for kind in driver.ALL_EXPERIMENTS:
        assert kind in schema
