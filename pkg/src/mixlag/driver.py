"""Experiment configuration, orchestration and report files.

A configuration is an INI file::

    [scenario]
    field = shear            ; zero | shear | double_gyre
    amplitude = 0.5
    boundary = periodic      ; implied by shear / double_gyre, required choice for zero
    n = 64
    n_t = 64
    ambient = isotropic      ; or "d1, d2"

    [experiment]
    kinds = averaging, taylor   ; or all
    eps = 4e-3, 2e-3, 1e-3, 5e-4
    seed = 0
    min_order = 1.8

    [output]
    dir = results

Every key can be overridden as ``section.key=value``. Each experiment writes
one CSV file; ``summary.json`` lists every check with its measured value,
threshold and slack, and is byte-identical across runs with the same
configuration. Wall-clock times go to the separate ``timings.json``.
"""

import configparser
import csv
import json
import logging
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, EstimationError
from .evolution import Propagator, default_initial, discrete_laplacian, trig
from .geometry import AmbientDiffusion, FlowGeometry
from .scenario import Scenario, make_field
from .spectral import dynamic_laplace_eig, h1_profile, singular_slope
from .transport import (Curve, MaterialSet, area_inequalities, boundary_flux, cheeger_scan,
                        curve_area, leading_order_transport, mesh_gradient, square_lines,
                        torus_pairs, transport_deficit)

log = logging.getLogger("mixlag")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


class Experiment(str, Enum):
    AVERAGING = "averaging"
    TAYLOR = "taylor"
    SINGULAR_SLOPE = "singular_slope"
    TRANSPORT = "transport"
    AREAS = "areas"
    CHEEGER = "cheeger"


ALL_EXPERIMENTS = [e.value for e in Experiment]

DEFAULTS = {
    "scenario": {"field": "shear", "amplitude": "", "boundary": "", "n": "64",
                 "n_t": "64", "ambient": "isotropic", "min_steps": "400"},
    "experiment": {"kinds": "all", "eps": "4e-3, 2e-3, 1e-3, 5e-4", "seed": "0",
                   "min_order": "1.8", "slope_tol": "0.03", "transport_eps": "1e-3",
                   "family_size": "64", "eig_count": "4"},
    "output": {"dir": "results"},
}


# configuration --------------------------------------------------------------

def _power_of_two(v):
    return v >= 1 and (v & (v - 1)) == 0


@dataclass(frozen=True)
class ScenarioConfig:
    field: str
    amplitude: float
    boundary: str
    n: int
    n_t: int
    ambient: tuple
    eps: tuple
    kinds: tuple
    seed: int
    out_dir: str
    min_order: float = 1.8
    slope_tol: float = 0.03
    transport_eps: float = 1e-3
    family_size: int = 64
    eig_count: int = 4
    min_steps: int = 400

    def __post_init__(self):
        for name in ("n", "n_t"):
            v = getattr(self, name)
            if not (16 <= v <= 1024 and _power_of_two(v)):
                raise ConfigError(f"{name} must be a power of two in [16, 1024], got {v}")
        eps = np.asarray(self.eps, dtype=float)
        if eps.size < 1 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
            raise ConfigError("eps list must be positive and strictly decreasing")
        if self.field not in ("zero", "shear", "double_gyre"):
            raise ConfigError(f"unknown field {self.field!r}")
        if self.boundary not in ("periodic", "dirichlet"):
            raise ConfigError(f"unknown boundary {self.boundary!r}")
        expected = {"shear": "periodic", "double_gyre": "dirichlet"}.get(self.field)
        if expected and self.boundary != expected:
            raise ConfigError(f"field {self.field} requires boundary = {expected}")
        if not self.kinds:
            raise ConfigError("no experiments selected")

    def scenario_key(self):
        return (self.field, self.amplitude, self.boundary, self.n, self.n_t, self.ambient,
                self.min_steps)

    def as_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["eps"] = list(self.eps)
        d["kinds"] = list(self.kinds)
        d["ambient"] = list(self.ambient)
        return d


def _float_list(text, key):
    try:
        return tuple(float(t) for t in str(text).replace(";", ",").split(",") if t.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a comma-separated list of numbers") from exc


def _parse_ambient(text):
    t = str(text).strip().lower()
    if t in ("", "isotropic", "identity"):
        return (1.0, 1.0)
    vals = _float_list(t.replace("diag", "").strip("() "), "scenario.ambient")
    if len(vals) != 2 or min(vals) <= 0:
        raise ConfigError("scenario.ambient must be 'isotropic' or two positive numbers")
    return vals


def _parse_kinds(text):
    items = [t.strip().lower() for t in str(text).split(",") if t.strip()]
    if "all" in items:
        return tuple(ALL_EXPERIMENTS)
    for it in items:
        if it not in ALL_EXPERIMENTS:
            raise ConfigError(f"unknown experiment kind {it!r}")
    return tuple(dict.fromkeys(items))


def read_config(path=None, overrides=(), text=None):
    """Parse a config file (or string) plus ``section.key=value`` overrides."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.read_dict(DEFAULTS)
    try:
        if text is not None:
            cp.read_string(text)
        elif path is not None:
            if not os.path.isfile(path):
                raise ConfigError(f"config file not found: {path}")
            with open(path) as fh:
                cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        key = key.strip()
        if "." not in key:
            raise ConfigError(f"override key {key!r} must be section.key")
        sec, k = key.split(".", 1)
        if sec not in DEFAULTS or k not in DEFAULTS[sec]:
            raise ConfigError(f"unknown config key {key!r}")
        cp.set(sec, k, value.strip())
    for sec in cp.sections():
        if sec not in DEFAULTS:
            raise ConfigError(f"unknown config section [{sec}]")
        for k in cp[sec]:
            if k not in DEFAULTS[sec]:
                raise ConfigError(f"unknown config key {sec}.{k}")
    s, e = cp["scenario"], cp["experiment"]
    try:
        amp = s.get("amplitude").strip()
        field_name = s.get("field").strip().lower()
        implied = {"shear": "periodic", "double_gyre": "dirichlet"}.get(field_name, "periodic")
        boundary = s.get("boundary").strip().lower() or implied
        return ScenarioConfig(
            field=field_name,
            amplitude=float(amp) if amp else {"shear": 0.5, "double_gyre": 1.0}.get(field_name, 0.0),
            boundary=boundary,
            n=s.getint("n"), n_t=s.getint("n_t"),
            ambient=_parse_ambient(s.get("ambient")),
            eps=_float_list(e.get("eps"), "experiment.eps"),
            kinds=_parse_kinds(e.get("kinds")),
            seed=e.getint("seed"),
            out_dir=cp["output"].get("dir"),
            min_order=e.getfloat("min_order"),
            slope_tol=e.getfloat("slope_tol"),
            transport_eps=e.getfloat("transport_eps"),
            family_size=e.getint("family_size"),
            eig_count=e.getint("eig_count"),
            min_steps=s.getint("min_steps"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# orders and checks ---------------------------------------------------------

def estimate_order(pairs):
    """Least-squares slope of ``log(error)`` against ``log(eps)``.

    Non-positive errors are dropped with a warning; fewer than three
    remaining pairs raise :class:`EstimationError`.
    """
    data = [(float(e), float(r)) for e, r in pairs]
    good = [(e, r) for e, r in data if e > 0 and r > 0 and math.isfinite(r)]
    if len(good) < len(data):
        warnings.warn(f"dropped {len(data) - len(good)} non-positive error entries",
                      RuntimeWarning, stacklevel=2)
    if len(good) < 3:
        raise EstimationError("need at least three positive (eps, error) pairs")
    x = np.log([g[0] for g in good])
    y = np.log([g[1] for g in good])
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    op: str            # "<=" or ">="

    @property
    def slack(self):
        return self.threshold - self.value if self.op == "<=" else self.value - self.threshold

    @property
    def passed(self):
        return bool(np.isfinite(self.value) and self.slack >= 0)

    def as_dict(self):
        return {"name": self.name, "value": _num(self.value), "threshold": _num(self.threshold),
                "op": self.op, "slack": _num(self.slack), "passed": self.passed}

    def line(self):
        return (f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.6g} "
                f"{self.op} {self.threshold:.6g} (slack {self.slack:.3g})")


def _num(x):
    x = float(x)
    return float(f"{x:.12g}") if math.isfinite(x) else str(x)


@dataclass
class ExperimentResult:
    kind: str
    columns: list
    rows: list
    checks: list
    values: dict = field(default_factory=dict)
    seconds: float = 0.0


@dataclass
class Report:
    config: ScenarioConfig
    results: list

    @property
    def checks(self):
        return [c for r in self.results for c in r.checks]

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def summary(self):
        return {
            "config": self.config.as_dict(),
            "experiments": {r.kind: {"checks": [c.as_dict() for c in r.checks],
                                     "values": {k: _num(v) for k, v in sorted(r.values.items())}}
                            for r in self.results},
            "passed": self.passed,
        }

    def write(self, out_dir=None):
        out = out_dir or self.config.out_dir
        os.makedirs(out, exist_ok=True)
        for r in self.results:
            with open(os.path.join(out, f"{r.kind}.csv"), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(r.columns)
                for row in r.rows:
                    w.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in row])
        with open(os.path.join(out, "summary.json"), "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(out, "timings.json"), "w") as fh:
            json.dump({r.kind: round(r.seconds, 3) for r in self.results}, fh, indent=2,
                      sort_keys=True)
            fh.write("\n")
        return out


# experiments -----------------------------------------------------------------

_SCENARIOS = {}


def build_scenario(cfg):
    key = cfg.scenario_key()
    if key not in _SCENARIOS:
        fieldv = make_field(cfg.field, cfg.amplitude, cfg.boundary)
        _SCENARIOS.clear()
        _SCENARIOS[key] = Scenario(fieldv, cfg.n, cfg.n_t, AmbientDiffusion(*cfg.ambient),
                                   min_steps=cfg.min_steps)
    return _SCENARIOS[key]


def initial_datum(sc):
    """Periodic: ``cos(2 pi x) + sin(2 pi y)``; Dirichlet: centred bump of radius 0.3."""
    if sc.periodic:
        return sc.mesh.nodal(trig([(1.0, 1, 0, "cos", "cos"), (1.0, 0, 1, "cos", "sin")]))
    return default_initial(sc)


def _order_check(name, eps, errs, cfg):
    try:
        p = estimate_order(zip(eps, errs))
    except EstimationError:
        p = float("nan")
    return p, Check(name, p, cfg.min_order, ">=")


def _averaging_and_taylor(cfg, sc, do_avg, do_taylor):
    u0 = initial_datum(sc)
    lap = discrete_laplacian(sc, u0)
    eps = list(cfg.eps)
    avg, tay = [], []
    for e in eps:
        P = Propagator(sc, e)
        u = P.forward(u0)
        if do_avg:
            avg.append(float(np.abs(u - P.averaged(u0)).max()))
        tay.append(float(np.abs(u - u0 - e * lap).max()))
    out = []
    if do_avg:
        checks = []
        values = {}
        if sc.autonomous:
            checks.append(Check("averaging error (autonomous)", max(avg), 1e-12, "<="))
        elif len(eps) >= 3:
            p, c = _order_check("averaging order", eps, avg, cfg)
            values["order"] = p
            checks.append(c)
        rows = [[e, a] for e, a in zip(eps, avg)]
        out.append(ExperimentResult("averaging", ["eps", "error_max"], rows, checks, values))
    if do_taylor:
        checks, values = [], {}
        if len(eps) >= 3:
            p, c = _order_check("taylor order", eps, tay, cfg)
            values["order"] = p
            checks.append(c)
        rows = [[e, r] for e, r in zip(eps, tay)]
        out.append(ExperimentResult("taylor", ["eps", "remainder_max"], rows, checks, values))
    return out


def _singular_slope(cfg, sc):
    eig = dynamic_laplace_eig(sc, 1)[0]
    rep = singular_slope(sc, cfg.eps)
    rows = [[float(e), float(s), float(d), r.iterations, float(r.residual)]
            for e, s, d, r in zip(rep.eps, rep.sigma, rep.slopes, rep.results)]
    h1 = [float(h1_profile(sc, e, r.v).max()) for e, r in zip(rep.eps, rep.results)]
    for row, h in zip(rows, h1):
        row.append(h)
    rel = rep.relative_error(eig.lam)
    checks = [
        Check("slope extrapolation rel. error", rel, cfg.slope_tol, "<="),
        Check("max sigma", float(rep.sigma.max()), 1.0 + 1e-10, "<="),
        Check("H1 ratio smallest/largest eps", h1[-1] / h1[0], 2.0, "<="),
    ]
    values = {"lambda_1": eig.lam, "limit": rep.limit, "fit_slope": rep.fit_slope}
    return ExperimentResult("singular_slope",
                            ["eps", "sigma", "slope", "iterations", "residual", "h1_max"],
                            rows, checks, values)


def _transport_set(sc):
    if sc.periodic:
        return MaterialSet.half_torus(sc.mesh, "y", 0.5)
    return MaterialSet.disk(sc.mesh, (0.5, 0.5), 0.2)


def _transport(cfg, sc):
    u0 = initial_datum(sc)
    S = _transport_set(sc)
    lead = leading_order_transport(sc, S, u0)
    geo = sc.mesh_geometry()
    flux = boundary_flux(S.boundary_curves, mesh_gradient(sc, u0), geo)
    eps = list(cfg.eps)
    if cfg.transport_eps not in eps:
        eps_all = sorted(set(eps) | {cfg.transport_eps}, reverse=True)
    else:
        eps_all = eps
    rows, defect = [], {}
    for e in eps_all:
        T = transport_deficit(sc, S, u0, e)
        defect[e] = abs(T - e * lead)
        rows.append([e, T, e * lead, lead, defect[e]])
    checks = [Check("flux vs volume form rel. difference", abs(flux - lead) / max(abs(lead), 1e-300),
                    0.01, "<=")]
    values = {"T_bar_volume": lead, "T_bar_flux": flux}
    if sc.field.kind.value == "shear" and cfg.ambient == (1.0, 1.0):
        values["T_bar_closed_form"] = 4 * np.pi
        checks.append(Check("volume form vs 4 pi rel. error", abs(lead - 4 * np.pi) / (4 * np.pi),
                            0.01, "<="))
    if len(eps) >= 3:
        p, c = _order_check("transport remainder order", eps, [defect[e] for e in eps], cfg)
        values["order"] = p
        checks.append(c)
    return ExperimentResult("transport", ["eps", "T", "eps_T_bar", "T_bar", "remainder"],
                            rows, checks, values)


def _flow_geometry(cfg, sc):
    return FlowGeometry(sc.field, cfg.n_t + 1, sc.ambient)


def _families(sc, m):
    """Curve families as ``name -> (dividers, gated)``.

    The Cheeger bound limits the infimum over all dividers, so only families
    that can approach it are gated. On the square the horizontal cuts run
    through both gyres of the double gyre and are reported only.
    """
    if sc.periodic:
        return {"horizontal_pairs": (torus_pairs("y", m), True),
                "vertical_pairs": (torus_pairs("x", m), True)}
    gate_horizontal = sc.autonomous
    return {"vertical_lines": (square_lines("x", m), True),
            "horizontal_lines": (square_lines("y", m), gate_horizontal)}


def _areas(cfg, sc):
    geo = _flow_geometry(cfg, sc)
    rows, checks, values = [], [], {}
    worst_ident, worst_chain = 0.0, np.inf
    for name, (fam, _) in _families(sc, cfg.family_size).items():
        for d in fam:
            rep = area_inequalities(d.curves[0], geo)
            worst_ident = max(worst_ident, rep.identity_error)
            worst_chain = min(worst_chain, rep.A_bar - rep.l2_avg, rep.l2_avg - rep.l1_avg)
            rows.append([name, d.label, rep.A_bar, rep.l2_avg, rep.l1_avg, int(rep.holds)])
    checks.append(Check("L2-average identity rel. error", worst_ident, cfg.n_t ** -2.0, "<="))
    checks.append(Check("inequality chain min gap", worst_chain, -1e-10, ">="))
    if sc.field.kind.value == "shear" and cfg.ambient == (1.0, 1.0):
        from scipy.integrate import quad
        a = sc.field.amplitude
        oracle = quad(lambda y: np.sqrt(1 + (2 * np.pi * a * np.cos(2 * np.pi * y)) ** 2 / 3),
                      0, 1, epsabs=1e-13, limit=200)[0]
        val = curve_area(Curve.vertical_loop(0.0, 1024), "averaged", geo)
        values["vertical_loop_A_bar"] = val
        values["vertical_loop_oracle"] = oracle
        checks.append(Check("vertical loop A_bar vs quadrature", abs(val - oracle), 1e-3, "<="))
    return ExperimentResult("areas", ["family", "parameter", "A_bar", "L2_avg", "L1_avg", "holds"],
                            rows, checks, values)


def _cheeger(cfg, sc):
    geo = _flow_geometry(cfg, sc)
    lam = dynamic_laplace_eig(sc, 1)[0].lam
    rows, checks, values = [], [], {"lambda_1": lam, "bound": 2 * math.sqrt(-lam)}
    for name, (fam, gated) in _families(sc, cfg.family_size).items():
        rep = cheeger_scan(fam, geo, lam)
        for lab, rb, rt in zip(rep.labels, rep.ratio_bar, rep.ratio_time):
            rows.append([name, float(lab), float(rb), float(rt), rep.bound, int(gated)])
        if gated:
            checks.append(Check(f"{name}: h (geometry of mixing)", rep.h_bar, rep.bound, "<="))
            checks.append(Check(f"{name}: h (time-averaged areas)", rep.h_time, rep.bound, "<="))
        gap = float(np.min(rep.ratio_bar - rep.ratio_time))
        checks.append(Check(f"{name}: ordering min gap", gap, -1e-10, ">="))
        values[f"{name}_h_bar"] = rep.h_bar
        values[f"{name}_h_time"] = rep.h_time
    return ExperimentResult("cheeger", ["family", "parameter", "ratio_bar", "ratio_time", "bound",
                                        "gated"],
                            rows, checks, values)


def run_experiment(cfg, kind):
    """Run one experiment kind (``averaging`` and ``taylor`` may share the forward solves)."""
    t0 = time.perf_counter()
    sc = build_scenario(cfg)
    if kind in ("averaging", "taylor"):
        res = _averaging_and_taylor(cfg, sc, kind == "averaging", kind == "taylor")
        res = [r for r in res if r.kind == kind]
    else:
        res = [{"singular_slope": _singular_slope, "transport": _transport, "areas": _areas,
                "cheeger": _cheeger}[kind](cfg, sc)]
    for r in res:
        r.seconds = time.perf_counter() - t0
    return res


def _run_pair(cfg, kinds):
    """Averaging and Taylor together reuse the forward solves."""
    t0 = time.perf_counter()
    res = _averaging_and_taylor(cfg, build_scenario(cfg), "averaging" in kinds, "taylor" in kinds)
    for r in res:
        r.seconds = time.perf_counter() - t0
    return res


def _task(args):
    cfg, kinds = args
    if set(kinds) <= {"averaging", "taylor"}:
        return _run_pair(cfg, kinds)
    return run_experiment(cfg, kinds[0])


def run(cfg, jobs=1):
    """Run every selected experiment and return a :class:`Report` (results in config order)."""
    kinds = list(cfg.kinds)
    tasks = []
    pair = [k for k in kinds if k in ("averaging", "taylor")]
    if pair:
        tasks.append((cfg, tuple(pair)))
    tasks += [(cfg, (k,)) for k in kinds if k not in ("averaging", "taylor")]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            outs = list(ex.map(_task, tasks))
    else:
        outs = [_task(t) for t in tasks]
    by_kind = {r.kind: r for out in outs for r in out}
    return Report(cfg, [by_kind[k] for k in kinds])


__all__ = ["ScenarioConfig", "Report", "Check", "ExperimentResult", "Experiment", "read_config",
           "run", "run_experiment", "estimate_order", "build_scenario", "initial_datum",
           "EXIT_OK", "EXIT_CHECK", "EXIT_CONFIG", "EXIT_SOLVER", "ALL_EXPERIMENTS"]
