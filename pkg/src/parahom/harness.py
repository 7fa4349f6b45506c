"""Experiment configuration, dispatch, persistence and regression baselines.

A config is plain JSON.  Its hash covers everything except the output
location and worker count, so ``--dump-config`` output re-ingests to the
same hash.  Primary outputs (CSV and report JSON) contain no timestamps and
are byte-identical across reruns; wall-clock time lives only in the record.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .analysis import (StudySetup, excess_series, kappa_of,
                       lipschitz_probe, rate_sweep, select_rho)
from .cell import (TorusGrid, cell_residual, corrector, effective_tensor,
                   lambda_comparison_sweep)
from .coefficients import CoefficientError, check_assumptions, make_family
from .errors import DegenerateFitError, GridError, RegimeError, ResolutionError, SolverError
from .flux import flux_check, flux_lambda_scaling
from .fitting import observed_orders
from .pde import Resolution, solve_parabolic
from .smoothing import TestFunction, TwoScaleSymbol, verify_smoothing_bounds

KINDS = ("cell", "effective", "flux-check", "smooth-check", "solve",
         "rate-sweep", "lipschitz-probe", "excess")

# error code -> process exit status
ERROR_CODES = {"config": 2, "resolution": 2, "degenerate_fit": 2, "regime": 2, "solver": 3}

DEFAULT_FAMILY = {"family": "trig_product", "d": 1, "a0": 2.0, "c": 1.0}

DEFAULT_PARAMS = {
    "cell": {"kind": "lambda", "lam": 1.0, "n_y": 64, "n_s": 64, "xt": [0.5, 0.0]},
    "effective": {"lambdas": [4.0, 8.0, 16.0, 32.0], "n_y": 64, "n_s": 64, "xt": [0.5, 0.0]},
    "flux-check": {"lam": 1.0, "n": [32, 64, 128], "lambdas": [1.0, 4.0, 16.0], "xt": [0.5, 0.0]},
    "smooth-check": {"deltas": [0.02, 0.04, 0.08], "eps": 0.0625},
    "solve": {"eps": 0.0625, "ell": 2.0, "nx": None, "nt": None, "n_store": None,
              "homogenized": False, "format": "binary"},
    "rate-sweep": {"ell": 2.0, "eps": [0.125, 0.0625, 0.03125, 0.015625]},
    "lipschitz-probe": {"ell": 2.0, "eps": [0.125, 0.0625, 0.03125, 0.015625],
                        "radii": [0.25, 0.3, 0.4, 0.45], "x0": 0.5, "t0": None},
    "excess": {"ell": 2.0, "eps": None, "radii": [0.4, 0.2, 0.1, 0.05], "x0": 0.5, "t0": None,
               "p": "inf", "theta": 1.0},
}


class ConfigError(ValueError):
    """Schema violation in an experiment config."""


# -- configuration ---------------------------------------------------------------

@dataclass
class ExperimentConfig:
    kind: str
    family: dict = field(default_factory=lambda: dict(DEFAULT_FAMILY))
    T: float = 1.0
    source: float = 1.0
    boundary: float = 0.0
    guards: dict = field(default_factory=lambda: {"space_factor": 16.0, "time_factor": 16.0})
    study: dict = field(default_factory=lambda: {"nx0": 256, "nt0": 3125, "cell_n": 64,
                                                 "macro_n": 17, "scheme": "euler"})
    params: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    seed: int = 0
    out: Optional[str] = None
    workers: int = 1

    _HASH_EXCLUDE = ("out", "workers")

    def __post_init__(self):
        self.validate()

    @classmethod
    def default(cls, kind: str) -> "ExperimentConfig":
        if kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {KINDS}")
        return cls(kind=kind, params=copy.deepcopy(DEFAULT_PARAMS[kind]))

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if not isinstance(self.family, dict) or "family" not in self.family:
            raise ConfigError("'family' must be an object with a 'family' key")
        unknown = set(self.params) - set(DEFAULT_PARAMS[self.kind])
        if unknown:
            raise ConfigError(f"unknown {self.kind} parameters: {sorted(unknown)}")
        if not (isinstance(self.T, (int, float)) and self.T > 0):
            raise ConfigError(f"T must be a positive number, got {self.T!r}")
        for k in ("space_factor", "time_factor"):
            v = self.guards.get(k)
            if not (isinstance(v, (int, float)) and v > 0):
                raise ConfigError(f"guards.{k} must be a positive number, got {v!r}")
        for name, spec in self.thresholds.items():
            if not isinstance(spec, dict) or not set(spec) <= {"min", "max"} or not spec:
                raise ConfigError(f"threshold {name!r} must be an object with 'min' and/or 'max'")
        if not isinstance(self.seed, int):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        if not (isinstance(self.workers, int) and self.workers >= 1):
            raise ConfigError(f"workers must be a positive integer, got {self.workers!r}")

    def merged_params(self) -> dict:
        out = copy.deepcopy(DEFAULT_PARAMS[self.kind])
        out.update(self.params)
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "family": self.family, "T": self.T, "source": self.source,
                "boundary": self.boundary, "guards": self.guards, "study": self.study,
                "params": self.merged_params(), "thresholds": self.thresholds,
                "seed": self.seed, "out": self.out, "workers": self.workers}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        allowed = {"kind", "family", "T", "source", "boundary", "guards", "study",
                   "params", "thresholds", "seed", "out", "workers"}
        extra = set(doc) - allowed
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "kind" not in doc:
            raise ConfigError("config needs a 'kind'")
        base = cls.default(doc["kind"])
        kw = {k: copy.deepcopy(v) for k, v in doc.items()}
        for k in ("guards", "study"):
            if k in kw:
                merged = dict(getattr(base, k))
                merged.update(kw[k])
                kw[k] = merged
        return cls(**{**{"params": base.params}, **kw})

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc)

    def digest(self) -> str:
        doc = {k: v for k, v in self.to_dict().items() if k not in self._HASH_EXCLUDE}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

    def setup(self) -> StudySetup:
        st = dict(self.study)
        return StudySetup(make_family(self.family), T=float(self.T), source=float(self.source),
                          boundary=float(self.boundary), nx0=int(st.get("nx0", 256)),
                          nt0=int(st.get("nt0", 3125)), cell_n=int(st.get("cell_n", 64)),
                          macro_n=int(st.get("macro_n", 17)),
                          space_factor=float(self.guards["space_factor"]),
                          time_factor=float(self.guards["time_factor"]),
                          scheme=str(st.get("scheme", "euler")))


# -- records -----------------------------------------------------------------------

@dataclass
class ExperimentRecord:
    config_hash: str
    kind: str
    version: str
    status: str
    metrics: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    error_code: Optional[str] = None
    message: str = ""
    wall_clock: float = 0.0

    @property
    def exit_code(self) -> int:
        if self.error_code is not None:
            return ERROR_CODES.get(self.error_code, 3)
        return 1 if self.status == "fail" else 0

    def to_dict(self) -> dict:
        return {"config_hash": self.config_hash, "kind": self.kind, "version": self.version,
                "status": self.status, "metrics": self.metrics, "checks": self.checks,
                "artifacts": self.artifacts, "error_code": self.error_code,
                "message": self.message, "wall_clock": self.wall_clock}

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentRecord":
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "ExperimentRecord":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, directory) -> Path:
        """Write as ``record-<hash>-<n>.json`` with the first unused n (never overwrites)."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        n = 0
        while True:
            p = d / f"record-{self.config_hash}-{n:03d}.json"
            try:
                with open(p, "x") as fh:
                    fh.write(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_jsonable))
                return p
            except FileExistsError:
                n += 1


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n"


def csv_text(rows: list) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    cols = list(rows[0])
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in cols])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return json.dumps(np.asarray(v).tolist())
    return "" if v is None else v


def load_packaged(name: str) -> dict:
    return json.loads(resources.files("parahom").joinpath(name).read_text())


def evaluate_thresholds(metrics: dict, thresholds: dict) -> dict:
    out = {}
    for name, spec in thresholds.items():
        v = metrics.get(name)
        ok = v is not None and isinstance(v, (int, float)) and math.isfinite(float(v))
        if ok and "min" in spec:
            ok = float(v) >= float(spec["min"])
        if ok and "max" in spec:
            ok = float(v) <= float(spec["max"])
        out[name] = {"value": v, **spec, "passed": bool(ok)}
    return out


# -- experiment bodies ------------------------------------------------------------
#
# each returns (metrics, rows, report) where rows go to CSV and report to JSON

def _xt(p):
    x, t = p["xt"]
    return (float(x), float(t))


def _exp_cell(cfg: ExperimentConfig, p: dict):
    f = make_family(cfg.family)
    assume = check_assumptions(f, rng_seed=cfg.seed)
    lam = p["lam"] if p["kind"] == "lambda" else None
    grid = TorusGrid(f.dim, int(p["n_y"]), int(p["n_s"]), lam)
    corr = corrector(f, _xt(p), grid, p["kind"])
    tens = effective_tensor(f, _xt(p), corr)
    metrics = {"max_abs_chi": float(np.max(np.abs(corr.chi))), "mean_violation": corr.mean_violation(),
               "residual": cell_residual(corr), "min_eig": tens.min_eig_sym(),
               "effective_00": float(tens.matrix[0, 0]), "assumptions_passed": assume.passed}
    rows = [{"i": i, "j": j, "value": float(tens.matrix[i, j])}
            for i in range(f.dim) for j in range(f.dim)]
    return metrics, rows, {"tensor": tens.as_dict(), "assumptions": assume.as_dict(),
                           "sweeps": corr.sweeps, "metrics": metrics}


def _exp_effective(cfg, p):
    f = make_family(cfg.family)
    grid = TorusGrid(f.dim, int(p["n_y"]), int(p["n_s"]))
    rep = lambda_comparison_sweep(f, _xt(p), [float(v) for v in p["lambdas"]], grid, workers=cfg.workers)
    summ = rep.summary()
    metrics = {k: v for k, v in summ.items() if isinstance(v, (int, float))}
    return metrics, rep.rows(), summ


def _exp_flux(cfg, p):
    f = make_family(cfg.family)
    ns = [int(v) for v in p["n"]]
    rows = []
    for n in ns:
        rep = flux_check(f, _xt(p), TorusGrid(f.dim, n, n, float(p["lam"])))
        rows.append({"n": n, **rep.as_dict()})
    res = [r["residual"] for r in rows]
    orders = observed_orders(ns, res).tolist() if len(ns) > 1 else []
    for r, o in zip(rows[1:], orders):
        r["order"] = o
    rows[0]["order"] = float("nan")
    scaling = flux_lambda_scaling(f, _xt(p), [float(v) for v in p["lambdas"]],
                                  TorusGrid(f.dim, ns[min(1, len(ns) - 1)], ns[min(1, len(ns) - 1)]))
    metrics = {"antisymmetry": max(r["antisymmetry"] for r in rows),
               "min_order": min((-o for o in orders), default=float("nan")),
               "time_ratio_spread": scaling["spread"]}
    return metrics, rows, {"rows": rows, "scaling": scaling, "metrics": metrics}


def _exp_smooth(cfg, p):
    f = make_family(cfg.family)
    if f.dim != 1:
        raise ConfigError("smooth-check runs on 1D families")
    g = TwoScaleSymbol.from_coefficient(f)
    rep = verify_smoothing_bounds(g, TestFunction.sine(), [float(v) for v in p["deltas"]], float(p["eps"]))
    metrics = {"slope": rep.fit.slope, "fit_residual": rep.fit.residual}
    return metrics, rep.rows, rep.as_dict()


def _exp_solve(cfg, p, out_dir: Path):
    setup = cfg.setup()
    eps, ell = float(p["eps"]), float(p["ell"])
    kappa = kappa_of(eps, ell)
    if p["homogenized"]:
        prob = setup.homogenized_problem(select_rho(ell))
        res = setup.coarse_resolution()
    else:
        prob = setup.fine_problem(eps, kappa)
        res = setup.fine_resolution(eps, kappa)
    if p["nx"] is not None or p["nt"] is not None:
        nx = int(p["nx"] or res.nx)
        nt = int(p["nt"] or res.nt)
        res = Resolution(nx, nt, p["n_store"], setup.scheme, setup.space_factor, setup.time_factor)
    sol = solve_parabolic(prob, res)
    artifacts = []
    named = cfg.out is not None and Path(cfg.out).suffix == ".bin"
    if p["format"] == "binary":
        path = Path(cfg.out) if named else out_dir / "solution.bin"
        sol.save_binary(path)
    else:
        path = out_dir / ("solution-field.csv" if named else "solution.csv")
        sol.to_csv(path)
    artifacts.append(path.name)
    metrics = {"norm_l2": sol.norm_l2(), "max_abs": float(np.max(np.abs(sol.u))),
               "min": float(sol.u.min()), "nx": res.nx, "nt": res.nt}
    rows = [{"t": float(t), "norm_space": float(np.sqrt(np.trapezoid(sol.u[k] ** 2, sol.x)))}
            for k, t in enumerate(sol.t)]
    stride = max(1, len(rows) // 200)
    return metrics, rows[::stride], {"meta": sol.meta, "metrics": metrics,
                                     "kappa": kappa, "artifacts": artifacts}


def _exp_rate(cfg, p):
    rep = rate_sweep(cfg.setup(), float(p["ell"]), [float(e) for e in p["eps"]], workers=cfg.workers)
    metrics = {"slope": rep.fit.slope, "residual": rep.fit.residual, "predicted": rep.predicted,
               "rho": rep.rho}
    return metrics, rep.rows(), rep.as_dict()


def _exp_probe(cfg, p):
    t0 = None if p["t0"] is None else float(p["t0"])
    rep = lipschitz_probe(cfg.setup(), [float(e) for e in p["eps"]], float(p["ell"]),
                          [float(r) for r in p["radii"]], float(p["x0"]), t0, workers=cfg.workers)
    return {"max_growth": rep.max_growth}, rep.rows(), rep.as_dict()


def _exp_excess(cfg, p):
    setup = cfg.setup()
    ell = float(p["ell"])
    if p["eps"] is None:
        sol = solve_parabolic(setup.homogenized_problem(select_rho(ell)), setup.coarse_resolution())
    else:
        eps = float(p["eps"])
        kappa = kappa_of(eps, ell)
        sol = solve_parabolic(setup.fine_problem(eps, kappa), setup.fine_resolution(eps, kappa))
    t0 = setup.T if p["t0"] is None else float(p["t0"])
    pval = math.inf if str(p["p"]) == "inf" else float(p["p"])
    rows = excess_series(sol, float(p["x0"]), t0, [float(r) for r in p["radii"]], setup.source,
                         pval, float(p["theta"]))
    decays = [r["decay"] for r in rows[1:]]
    metrics = {"G_max": rows[0]["G"], "G_min": rows[-1]["G"],
               "max_decay": max(decays) if decays else float("nan")}
    return metrics, rows, {"rows": rows, "metrics": metrics}


# -- orchestration ------------------------------------------------------------------

def output_paths(out: Optional[str], kind: str) -> tuple:
    """(directory, csv path, json path) for an ``--out`` value (file or directory)."""
    stem = kind.replace("-", "_")
    if out is None:
        d = Path(".")
        return d, d / f"{stem}.csv", d / f"{stem}.json"
    o = Path(out)
    if o.suffix == ".csv":
        return o.parent if str(o.parent) else Path("."), o, o.with_suffix(".json")
    if o.suffix == ".json":
        return o.parent if str(o.parent) else Path("."), o.with_suffix(".csv"), o
    if o.suffix == ".bin":
        return o.parent if str(o.parent) else Path("."), o.with_suffix(".csv"), o.with_suffix(".json")
    return o, o / f"{stem}.csv", o / f"{stem}.json"


def _classify(exc: Exception) -> str:
    if isinstance(exc, ResolutionError):
        return "resolution"
    if isinstance(exc, DegenerateFitError):
        return "degenerate_fit"
    if isinstance(exc, RegimeError):
        return "regime"
    if isinstance(exc, SolverError):
        return "solver"
    if isinstance(exc, (ConfigError, CoefficientError, GridError, ValueError, KeyError, TypeError)):
        return "config"
    return "solver"


def run(cfg: ExperimentConfig, save_record: bool = True) -> ExperimentRecord:
    """Dispatch one experiment, write its CSV/JSON outputs and an append-only record."""
    start = time.perf_counter()
    out_dir, csv_path, json_path = output_paths(cfg.out, cfg.kind)
    rec = ExperimentRecord(cfg.digest(), cfg.kind, __version__, "error")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        p = cfg.merged_params()
        body = {"cell": _exp_cell, "effective": _exp_effective, "flux-check": _exp_flux,
                "smooth-check": _exp_smooth, "rate-sweep": _exp_rate,
                "lipschitz-probe": _exp_probe, "excess": _exp_excess}
        if cfg.kind == "solve":
            metrics, rows, report = _exp_solve(cfg, p, out_dir)
            rec.artifacts.extend(report.get("artifacts", []))
        else:
            metrics, rows, report = body[cfg.kind](cfg, p)
        csv_path.write_text(csv_text(rows))
        report = {"config_hash": rec.config_hash, "kind": cfg.kind, "report": report}
        json_path.write_text(dumps(report))
        rec.artifacts.extend([csv_path.name, json_path.name])
        rec.metrics = metrics
        rec.checks = evaluate_thresholds(metrics, cfg.thresholds)
        rec.status = "pass" if all(c["passed"] for c in rec.checks.values()) else "fail"
    except Exception as exc:  # recorded with a machine-readable code, never swallowed silently
        rec.error_code = _classify(exc)
        rec.message = f"{type(exc).__name__}: {exc}"
    rec.wall_clock = time.perf_counter() - start
    if save_record:
        try:
            rec.save(out_dir)
        except OSError as exc:
            rec.error_code = rec.error_code or "config"
            rec.message = rec.message or f"cannot write record: {exc}"
    return rec


# -- baselines -----------------------------------------------------------------------

@dataclass
class DiffReport:
    rows: list
    flagged: list

    @property
    def passed(self) -> bool:
        return not self.flagged

    def as_dict(self) -> dict:
        return {"rows": self.rows, "flagged": self.flagged, "passed": self.passed}


def tolerance_for(name: str, table: dict) -> float:
    per = table.get("metrics", {})
    if name in per:
        return float(per[name])
    return float(table.get("default", 1e-9))


def compare_baseline(record: ExperimentRecord, baseline: ExperimentRecord,
                     tolerances: Optional[dict] = None) -> DiffReport:
    """Relative differences of shared numeric metrics, flagged beyond the tolerance table."""
    if record.config_hash != baseline.config_hash:
        raise ConfigError(f"config hashes differ: {record.config_hash} vs {baseline.config_hash}")
    table = tolerances if tolerances is not None else load_packaged("tolerances.json")
    rows, flagged = [], []
    for name in sorted(set(record.metrics) | set(baseline.metrics)):
        a, b = record.metrics.get(name), baseline.metrics.get(name)
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in (a, b)):
            if a != b:
                rows.append({"metric": name, "value": a, "baseline": b, "rel_diff": float("nan"),
                             "tolerance": 0.0, "flagged": True})
                flagged.append(name)
            continue
        a, b = float(a), float(b)
        if a == b or (math.isnan(a) and math.isnan(b)):
            continue
        rel = abs(a - b) / max(abs(b), 1e-300)
        tol = tolerance_for(name, table)
        bad = not rel <= tol
        rows.append({"metric": name, "value": a, "baseline": b, "rel_diff": rel,
                     "tolerance": tol, "flagged": bad})
        if bad:
            flagged.append(name)
    return DiffReport(rows, flagged)
