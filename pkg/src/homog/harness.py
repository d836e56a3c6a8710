"""Experiment configuration, orchestration and reports.

A run is described by a JSON config holding a problem descriptor (inline or
by file) and the experiment kind. ``run`` executes the pipeline and returns a
:class:`ConvergenceReport`, which writes a CSV table (17 significant digits,
rows ordered by eps) and a JSON record.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import platform
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .cell import bump, lambda_diagnostics, solve_cell, voigt_reuss_check
from .dirichlet import DirichletRun, constant_rhs, dirichlet_rate_sweep, solve_eps, unit_box
from .discretize import GridFunction, Mesh, norms
from .errors import ConfigurationError, HomogError
from .fitting import RateFit, fit_rate
from .io import load_problem, problem_from_dict, write_raster
from .smoothing import SmoothingOp, random_bandlimited, smoothing_property_suite
from .wholespace import ResolventRun, rate_sweep

__all__ = ["ExperimentConfig", "ConvergenceReport", "run", "fit_rate", "RateFit", "exit_code", "KINDS"]

KINDS = ("cell", "torus-sweep", "dirichlet-sweep", "diagnostics")

TORUS_COLUMNS = ["eps", "l2_err", "h1_corr_err", "ref_resolution", "cg_iters"]
DIRICHLET_COLUMNS = ["eps", "h1_corr_err", "l2_err", "flux_err", "phi_h1_over_sqrt_eps", "w_h1",
                     "gamma0_slack"]


def parse_eps(value):
    """Accept numbers or strings like '1/16'; returns a float."""
    if isinstance(value, str):
        return float(Fraction(value.strip()))
    return float(value)


def _check_eps_list(eps):
    if len(eps) < 1:
        raise ConfigurationError("the eps list is empty")
    for e in eps:
        k = -math.log2(e) if e > 0 else float("nan")
        if not (k >= 1 and abs(k - round(k)) < 1e-12):
            raise ConfigurationError(f"eps = {e} is not a negative power of two")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigurationError("the eps list must be strictly decreasing")


@dataclass
class ExperimentConfig:
    problem: object
    kind: str
    eps: tuple = ()
    points_per_eps: int = 16
    cell_resolution: int = 64
    variants: tuple = ("steklov", "fourier")
    path: str = "general"
    L: int = 4
    rhs: str = "default"
    tol: float = 1e-10
    reference: bool = True
    seed: int = 0
    samples: int = 20
    out: str | None = None
    dump_lambda: str | None = None
    dump_fields: str | None = None
    name: str = "run"
    source: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        self.eps = tuple(parse_eps(e) for e in self.eps)
        if self.kind in ("torus-sweep", "dirichlet-sweep"):
            _check_eps_list(self.eps)
            if self.points_per_eps < 16:
                raise ConfigurationError("sweeps need h <= eps/16 (points_per_eps >= 16)")
        if self.path == "bounded-lambda":
            self.path = "bounded_lambda"
        if isinstance(self.variants, str):
            self.variants = (self.variants,)
        self.variants = tuple(self.variants)

    @classmethod
    def from_dict(cls, data, base_dir="."):
        data = dict(data)
        base = Path(base_dir)
        if "problem_file" in data:
            problem = load_problem(base / data.pop("problem_file"))
        elif "problem" in data:
            problem = problem_from_dict(data.pop("problem"), base)
        else:
            raise ConfigurationError("config needs 'problem' or 'problem_file'")
        known = {f for f in cls.__dataclass_fields__ if f not in ("problem", "source")}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(problem=problem, source=dict(data), **data)

    @classmethod
    def load(cls, path):
        path = Path(path)
        with open(path) as fh:
            data = json.load(fh)
        data.setdefault("name", path.stem)
        return cls.from_dict(data, path.parent)


@dataclass
class ConvergenceReport:
    kind: str
    columns: list
    rows: list
    slopes: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    fingerprint: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    seed: int = 0
    error: dict | None = None

    @property
    def passed(self):
        return self.error is None and all(self.checks.values())

    def csv_text(self):
        buf = _io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_fmt(row.get(c, "")) for c in self.columns])
        return buf.getvalue()

    def to_dict(self):
        return {
            "kind": self.kind, "passed": self.passed, "checks": self.checks, "slopes": self.slopes,
            "warnings": self.warnings, "columns": self.columns, "rows": self.rows, "seed": self.seed,
            "fingerprint": self.fingerprint, "details": self.details, "error": self.error,
        }

    def write(self, out, name="run"):
        """Write ``<name>.csv`` and ``<name>.json``; ``out`` is a directory or a .csv/.json path."""
        out = Path(out)
        if out.suffix in (".csv", ".json"):
            stem = out.with_suffix("")
        else:
            out.mkdir(parents=True, exist_ok=True)
            stem = out / name
        stem.parent.mkdir(parents=True, exist_ok=True)
        csv_path = stem.with_suffix(".csv")
        json_path = stem.with_suffix(".json")
        csv_path.write_text(self.csv_text())
        json_path.write_text(json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True) + "\n")
        return csv_path, json_path


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def exit_code(report):
    if report.error is not None:
        return 3
    return 0 if report.passed else 2


def _fingerprint(config, extra=None):
    fp = {
        "version": __version__,
        "backend": kernels.backend_name(),
        "numpy": np.__version__,
        "python": platform.python_version(),
        "tol": config.tol,
        "points_per_eps": config.points_per_eps,
        "seed": config.seed,
    }
    fp.update(extra or {})
    return fp


# ---------------------------------------------------------------- kinds

def _run_cell(config, jobs):
    pr = config.problem
    sol = solve_cell(pr.lattice, pr.symbol, pr.field, config.cell_resolution, jobs=jobs)
    vr = voigt_reuss_check(sol, pr.field)
    tol = vr["tol"]
    checks = {
        "loewner_lower": vr["loewner_margins"]["lower"] >= -tol,
        "loewner_upper": vr["loewner_margins"]["upper"] >= -tol,
        "norm_g0": vr["norm_bounds"]["slack"] >= -tol,
        "norm_g0_inv": vr["norm_bounds"]["inv_slack"] >= -tol,
    }
    if config.dump_lambda:
        write_raster(config.dump_lambda, sol.lambda_raster(), pr.dim)
    m = sol.g_eff.shape[0]
    rows = [{"i": i, "j": j, "g_eff": float(sol.g_eff[i, j]), "gbar": float(np.real(vr["gbar"][i, j])),
             "gunder": float(np.real(vr["gunder"][i, j]))} for i in range(m) for j in range(m)]
    details = {
        "g_eff": sol.g_eff, "resolution": sol.resolution, "lambda_l2": sol.lambda_l2,
        "dlambda_l2": sol.dlambda_l2, "lambda_max_est": sol.lambda_max_est, "iterations": sol.iterations,
        "voigt_reuss": vr, "constants": pr.constants().to_dict(),
    }
    return ConvergenceReport("cell", ["i", "j", "g_eff", "gbar", "gunder"], rows, checks=checks,
                             details=details, fingerprint=_fingerprint(config, {"resolution": sol.resolution}))


def _torus_rhs(config):
    if config.rhs == "default":
        return None
    raise ConfigurationError(f"unknown torus rhs {config.rhs!r}")


def _run_torus(config, jobs):
    run_ = ResolventRun(config.problem, config.eps, variants=config.variants, L=config.L,
                        points_per_eps=config.points_per_eps, rhs=_torus_rhs(config), tol=config.tol,
                        reference=config.reference)
    res = rate_sweep(run_, jobs=jobs)
    first = config.variants[0]
    columns = list(TORUS_COLUMNS)
    if len(config.variants) > 1:
        columns += [f"h1_corr_err_{v}" for v in config.variants]
    rows = []
    for r in res["rows"]:
        row = dict(r)
        row["h1_corr_err"] = r[f"h1_corr_err_{first}"]
        rows.append(row)
    checks = {}
    for key, fit in res["slopes"].items():
        checks[f"slope_{key}"] = fit is None or (fit["slope"] is not None and fit["slope"] >= 0.9)
    details = {"cell_g_eff": res["cell_g_eff"], "L": res["L"], "variants": list(config.variants)}
    return ConvergenceReport("torus-sweep", columns, rows, slopes=res["slopes"], checks=checks,
                             warnings=res["warnings"], details=details,
                             fingerprint=_fingerprint(config, {"L": config.L, "cg_iters": [r["cg_iters"] for r in rows]}))


def _dirichlet_rhs(config):
    if config.rhs == "default":
        return None
    if config.rhs == "constant":
        return constant_rhs(config.problem.symbol.n)
    raise ConfigurationError(f"unknown Dirichlet rhs {config.rhs!r}")


def _dump_fields(directory, fields):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for eps, group in sorted(fields.items(), key=lambda kv: -kv[0]):
        k = int(round(-math.log2(eps)))
        for role, gf in group.items():
            base = directory / f"{role}_eps2m{k}"
            data = np.moveaxis(np.real(gf.values), 0, -1)[..., None]
            write_raster(base.with_suffix(".bin"), data, gf.mesh.dim)
            side = {"role": gf.role, "eps": eps, "mesh": {"kind": gf.mesh.kind, "extents": gf.mesh.extents,
                                                         "resolution": gf.mesh.resolution,
                                                         "origin": gf.mesh.origin}}
            base.with_suffix(".json").write_text(json.dumps(_jsonable(side), indent=2, sort_keys=True) + "\n")


def _run_dirichlet(config, jobs):
    run_ = DirichletRun(config.problem, config.eps, path=config.path, points_per_eps=config.points_per_eps,
                        rhs=_dirichlet_rhs(config), tol=config.tol, reference=config.reference,
                        keep_fields=bool(config.dump_fields))
    res = dirichlet_rate_sweep(run_, jobs=jobs)
    if config.dump_fields:
        _dump_fields(config.dump_fields, run_.fields)
    details = {"cell_g_eff": res["cell_g_eff"], "path": res["path"], "constants": res["constants"]}
    fp = _fingerprint(config, {"cg_iters": [r["cg_iters"] for r in res["rows"]],
                               "resolutions": [r["resolution"] for r in res["rows"]]})
    return ConvergenceReport("dirichlet-sweep", list(DIRICHLET_COLUMNS), res["rows"], slopes=res["slopes"],
                             checks=res["checks"], warnings=res["warnings"], details=details, fingerprint=fp)


def default_test_functions(d):
    """Fixed family of bumps used by the weighted corrector inequality."""
    c = np.full(d, 0.5)
    shift = np.zeros(d)
    shift[0] = 0.13
    return (bump(c, 0.45, "bump_wide"), bump(c + shift, 0.3, "bump_offset"), bump(c, 0.2, "bump_narrow"))


def energy_suite(problem, samples, seed, eps=0.125, points_per_eps=16, C_hat=None):
    """||A_eps^{-1} F||_{H1} against C_hat ||F||_{L2} for seeded random nodal F on the unit box."""
    rng = np.random.default_rng(seed)
    mesh = unit_box(problem.dim, eps, points_per_eps)
    if C_hat is None:
        C_hat = problem.constants(domain_diameter=math.sqrt(problem.dim)).C_hat
    rows = []
    for k in range(samples):
        F = GridFunction(mesh, rng.standard_normal((problem.symbol.n,) + mesh.node_shape), "rhs")
        u, info = solve_eps(mesh, problem.symbol, problem.field, problem.lattice, eps, F, None)
        lhs = norms(u)["h1"]
        rhs = C_hat * norms(F)["l2"]
        rows.append({"check": "energy", "item": k, "lhs": lhs, "rhs": rhs, "ok": lhs <= rhs})
    return rows


def smoothing_suite(lattice, samples, seed, eps=0.125, L=1.0):
    """Approximation and multiplier inequalities for both smoothing operators on seeded samples."""
    rng = np.random.default_rng(seed)
    d = lattice.dim
    mesh = Mesh.torus((L,) * d, (int(round(L / eps)) * 8,) * d)
    us = [random_bandlimited(mesh, 3 * int(round(L / eps)), rng) for _ in range(samples)]

    def f(y):
        return 1.0 + 0.5 * np.cos(2 * np.pi * y[..., 0]) + 0.25 * np.sin(4 * np.pi * y[..., -1])

    rows = []
    for kind in ("fourier_projection", "steklov"):
        res = smoothing_property_suite(SmoothingOp(kind, eps, lattice), us, f=f)
        for k, r in enumerate(res["rows"]):
            rows.append({"check": f"{kind}_approx", "item": k, "lhs": r["approx_lhs"], "rhs": r["approx_rhs"],
                         "ok": r["approx_ok"]})
            rows.append({"check": f"{kind}_mult", "item": k, "lhs": r["mult_lhs"], "rhs": r["mult_rhs"],
                         "ok": r["mult_ok"]})
    return rows


def _run_diagnostics(config, jobs):
    pr = config.problem
    ledger = pr.constants()
    sol = solve_cell(pr.lattice, pr.symbol, pr.field, config.cell_resolution, jobs=jobs)
    diag = lambda_diagnostics(sol, ledger, default_test_functions(pr.dim))
    rows = [{"check": "lambda_l2", "item": 0, "lhs": diag["lambda_l2"], "rhs": diag["lambda_l2_bound"],
             "ok": diag["lambda_l2_ok"]},
            {"check": "dlambda_l2", "item": 0, "lhs": diag["dlambda_l2"], "rhs": diag["dlambda_l2_bound"],
             "ok": diag["dlambda_l2_ok"]}]
    for k, w in enumerate(diag["weighted"]):
        rows.append({"check": f"weighted_{w['test']}", "item": k, "lhs": w["lhs"], "rhs": w["rhs"], "ok": w["ok"]})
    energy = energy_suite(pr, config.samples, config.seed, C_hat=pr.constants(math.sqrt(pr.dim)).C_hat)
    smooth = smoothing_suite(pr.lattice, config.samples, config.seed + 1)
    rows += energy + smooth
    checks = {
        "lambda_bounds": bool(diag["lambda_l2_ok"] and diag["dlambda_l2_ok"]),
        "weighted_inequality": diag["violations"] == 0,
        "energy_inequality": all(r["ok"] for r in energy),
        "smoothing_contracts": all(r["ok"] for r in smooth),
    }
    details = {"retried": sum(w["retried"] for w in diag["weighted"]), "constants": ledger.to_dict()}
    return ConvergenceReport("diagnostics", ["check", "item", "lhs", "rhs", "ok"], rows, checks=checks,
                             details=details, seed=config.seed,
                             fingerprint=_fingerprint(config, {"resolution": config.cell_resolution}))


_RUNNERS = {"cell": _run_cell, "torus-sweep": _run_torus, "dirichlet-sweep": _run_dirichlet,
            "diagnostics": _run_diagnostics}


def run(config, jobs=1, write=True):
    """Execute a configured experiment; errors become a structured record in the report."""
    start = time.perf_counter()
    try:
        report = _RUNNERS[config.kind](config, max(int(jobs), 1))
    except (HomogError, ValueError, RuntimeError) as exc:
        report = ConvergenceReport(config.kind, [], [], error={"type": type(exc).__name__, "message": str(exc)},
                                   fingerprint=_fingerprint(config))
    report.seed = config.seed
    report.details["runtime_s"] = time.perf_counter() - start
    report.details["config"] = config.source
    if write and config.out:
        report.write(config.out, config.name)
    return report


def with_overrides(config, **kw):
    """Copy of ``config`` with the non-None keyword values replaced."""
    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(config, **kw) if kw else config
