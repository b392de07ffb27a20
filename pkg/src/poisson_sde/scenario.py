"""Scenario configs, validation and orchestration of the analyses."""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from . import __version__
from .green_linear import SpectralOperator
from .recurrence_core import ReferenceFunctionSpec, SampledPath, UniformGrid, epsilon_almost_periods, reference_function
from .semilinear_fixedpoint import (
    THRESHOLDS,
    AuditError,
    CoefficientField,
    NonConvergenceError,
    contraction_constants,
    semilinear_comparability_probe,
    solve_bounded_solution,
    theta_2,
)
from .presets import get_preset
from .stability_mc import InitialLaw, convergence_check, dissipativity_check, euler_maruyama_ensemble

ANALYSES = ("solve", "dissipativity", "convergence", "comparability", "recurrence_scan")
FORMATS = ("json", "csv")
EXIT_OK, EXIT_VIOLATION, EXIT_INVALID, EXIT_AUDIT, EXIT_RUNTIME = 0, 1, 2, 3, 4
RATIO_SLACK = 0.05
FIXED_CLOCK_STAMP = "1970-01-01T00:00:00Z"
OUT_DIR_ENV = "POISSON_SDE_OUT"


class ConfigError(ValueError):
    def __init__(self, errors):
        super().__init__("\n".join(errors))
        self.errors = list(errors)


@dataclass
class OperatorConfig:
    kind: str = "scalar"
    nu: float | None = None
    n_modes: int | None = None
    physical_grid_points: int | None = None

    def overrides(self) -> dict:
        d = {"kind": self.kind}
        for k in ("nu", "n_modes", "physical_grid_points"):
            if getattr(self, k) is not None:
                d[k] = getattr(self, k)
        return d


@dataclass
class GridConfig:
    t0: float = 0.0
    h: float = 0.01
    horizon: float = 2.0

    def grid(self) -> UniformGrid:
        return UniformGrid(self.t0, self.h, int(round(self.horizon / self.h)) + 1)


@dataclass
class EnsembleConfig:
    n_paths: int = 200
    seed: int = 0


@dataclass
class OutputsConfig:
    dir: str = "out"
    formats: tuple = ("json", "csv")


@dataclass
class ScenarioConfig:
    coefficients: dict
    analyses: list
    operator: OperatorConfig | None = None
    grid: GridConfig = field(default_factory=GridConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    outputs: OutputsConfig = field(default_factory=OutputsConfig)
    options: dict = field(default_factory=dict)
    admissibility: list = field(default_factory=list)

    def to_dict(self):
        d = asdict(self)
        d["outputs"]["formats"] = list(self.outputs.formats)
        return d


# -- source locations -----------------------------------------------------------


def _locate(text: str) -> dict:
    """Map key paths like ('grid', 'h') to 1-based line numbers."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return {}
    lines = {}

    def walk(node, path):
        lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                lines[path + (k.value,)] = k.start_mark.line + 1
                walk(v, path + (k.value,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    if root is not None:
        walk(root, ())
    return lines


class _Errors:
    def __init__(self, lines):
        self.lines = lines
        self.items = []

    def add(self, path, msg):
        line = None
        for k in range(len(path), -1, -1):
            if tuple(path[:k]) in self.lines:
                line = self.lines[tuple(path[:k])]
                break
        where = ".".join(str(p) for p in path) or "<root>"
        self.items.append(f"line {line if line is not None else '?'}: {where}: {msg}")


def _number(errs, raw, path, default=None, positive=False, integer=False, minimum=None):
    node = raw
    for p in path:
        if not isinstance(node, dict) or p not in node:
            if default is None:
                errs.add(path, "missing")
            return default
        node = node[p]
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        errs.add(path, f"expected a number, got {node!r}")
        return default
    if integer and not float(node).is_integer():
        errs.add(path, f"expected an integer, got {node!r}")
        return default
    if not math.isfinite(node):
        errs.add(path, "must be finite")
        return default
    if positive and not node > 0:
        errs.add(path, f"must be positive, got {node!r}")
        return default
    if minimum is not None and node < minimum:
        errs.add(path, f"must be at least {minimum}, got {node!r}")
        return default
    return int(node) if integer else float(node)


# -- custom coefficients ------------------------------------------------------------


def _time_function(spec, errs, path):
    """A scalar function of t: a reference-function spec or a sampled table."""
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        v = float(spec)
        return lambda t: np.full(np.shape(t), v)
    if not isinstance(spec, dict):
        errs.add(path, "expected a number or an object")
        return None
    if "table" in spec:
        tab = spec["table"]
        try:
            vals = np.asarray(tab["values"], dtype=float)
            g = UniformGrid(float(tab["t0"]), float(tab["h"]), len(vals))
        except (KeyError, TypeError, ValueError) as e:
            errs.add(path + ["table"], f"needs t0, h and values ({e})")
            return None
        times = g.times
        return lambda t: np.interp(t, times, vals)
    try:
        rs = ReferenceFunctionSpec(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in spec.items()})
        rs.validate()
        f = reference_function(rs)
    except (TypeError, ValueError) as e:
        errs.add(path, str(e))
        return None
    return lambda t: np.asarray(f(np.asarray(t, dtype=float)), dtype=float).reshape(np.shape(t))


def _custom_field(spec, errs, path, name):
    """F(t,x) = offset(t) + slope(t) x with declared constants."""
    if not isinstance(spec, dict):
        errs.add(path, "expected an object with offset, slope, A0, L, M")
        return None
    off = _time_function(spec.get("offset", 0.0), errs, path + ["offset"])
    slope = _time_function(spec.get("slope", 0.0), errs, path + ["slope"])
    consts = {k: _number(errs, spec, [k], minimum=0.0) for k in ("A0", "L", "M")}
    for k in ("A0", "L", "M"):
        if k not in spec:
            errs.add(path + [k], "declared constant missing")
    if off is None or slope is None or None in consts.values():
        return None
    return CoefficientField(
        lambda t, x: off(t)[:, None] + slope(t)[:, None] * x,
        1,
        name=name,
        time_profile=lambda t: np.stack([off(t), slope(t)], axis=-1),
        **consts,
    )


def build_model(cfg: ScenarioConfig):
    """(operator, drift, diffusion, declared constants) for a validated config."""
    coeff = cfg.coefficients
    if "preset" in coeff:
        preset = get_preset(coeff["preset"])
        over = cfg.operator.overrides() if cfg.operator else {}
        op, F, G = preset.build(**over)
        return op, F, G, {"N": op.N, "nu": op.nu, "A0": max(F.A0, G.A0), "L": max(F.L, G.L), "M": max(F.M, G.M)}
    errs = _Errors({})
    F = _custom_field(coeff["custom"].get("drift"), errs, ["coefficients", "custom", "drift"], "custom drift")
    G = _custom_field(coeff["custom"].get("diffusion"), errs, ["coefficients", "custom", "diffusion"], "custom diffusion")
    if errs.items:
        raise ConfigError(errs.items)
    op = SpectralOperator.scalar(cfg.operator.nu)
    return op, F, G, {"N": 1.0, "nu": op.nu, "A0": max(F.A0, G.A0), "L": max(F.L, G.L), "M": max(F.M, G.M)}


# -- admissibility ------------------------------------------------------------------

_CONDITIONS = {
    "solve": [("bounded", "L", "bounded")],
    "comparability": [("comparable", "L", "comparable")],
    "dissipativity": [("dissipative", "M", "dissipative")],
    "convergence": [("convergent", "L", "convergent")],
    "recurrence_scan": [],
}


def admissibility_table(analyses, N, nu, L, M) -> list:
    rows = []
    for a in analyses:
        for cond, which, thr in _CONDITIONS[a]:
            value = L if which == "L" else M
            threshold = THRESHOLDS[thr](N, nu)
            rows.append({"analysis": a, "condition": cond, "constant": which, "value": value, "threshold": threshold, "pass": bool(value < threshold)})
    return rows


# -- validation -----------------------------------------------------------------------


def validate_config(text: str) -> ScenarioConfig:
    """Parse and validate a JSON scenario; raises ConfigError with line-anchored messages."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([f"line {e.lineno}: <root>: invalid JSON ({e.msg})"]) from None
    errs = _Errors(_locate(text))
    if not isinstance(raw, dict):
        raise ConfigError(["line 1: <root>: expected an object"])
    known = {"operator", "coefficients", "grid", "ensemble", "analyses", "outputs", "options"}
    for k in raw:
        if k not in known:
            errs.add([k], "unknown key")

    coeff = raw.get("coefficients")
    preset = None
    if not isinstance(coeff, dict) or not (("preset" in coeff) ^ ("custom" in coeff)):
        errs.add(["coefficients"], "needs exactly one of preset or custom")
        coeff = None
    elif "preset" in coeff:
        try:
            preset = get_preset(coeff["preset"])
        except (KeyError, TypeError) as e:
            errs.add(["coefficients", "preset"], str(e).strip("'\""))
            coeff = None

    op_cfg = None
    rop = raw.get("operator")
    if rop is not None:
        if not isinstance(rop, dict) or rop.get("kind") not in ("scalar", "galerkin"):
            errs.add(["operator", "kind"], "must be scalar or galerkin")
        elif rop["kind"] == "scalar":
            op_cfg = OperatorConfig("scalar", nu=_number(errs, raw, ["operator", "nu"], positive=True))
        else:
            nm = _number(errs, raw, ["operator", "n_modes"], integer=True, minimum=1)
            J = _number(errs, raw, ["operator", "physical_grid_points"], default=64, integer=True, minimum=1)
            if nm is not None and J is not None and nm > J:
                errs.add(["operator", "n_modes"], f"{nm} modes alias on {J} collocation points")
            op_cfg = OperatorConfig("galerkin", n_modes=nm, physical_grid_points=J)
    if preset is not None and op_cfg is not None and op_cfg.kind != preset.operator["kind"]:
        errs.add(["operator", "kind"], f"preset {preset.name} needs a {preset.operator['kind']} operator")
    if coeff is not None and "custom" in coeff:
        if op_cfg is None or op_cfg.kind != "scalar":
            errs.add(["operator"], "custom coefficients need a scalar operator with nu")
        if not isinstance(coeff["custom"], dict):
            errs.add(["coefficients", "custom"], "expected an object with drift and diffusion")
            coeff = None

    g = raw.get("grid", {})
    if not isinstance(g, dict):
        errs.add(["grid"], "expected an object")
        g = {}
    grid = GridConfig(
        _number(errs, raw, ["grid", "t0"], default=0.0) if "t0" in g else 0.0,
        _number(errs, raw, ["grid", "h"], positive=True) if "h" in g else 0.01,
        _number(errs, raw, ["grid", "horizon"], positive=True) if "horizon" in g else 2.0,
    )
    if grid.h is not None and grid.horizon is not None and grid.horizon < grid.h:
        errs.add(["grid", "horizon"], "shorter than one step")

    e = raw.get("ensemble", {})
    ens = EnsembleConfig(
        _number(errs, raw, ["ensemble", "n_paths"], integer=True, minimum=2) if "n_paths" in e else 200,
        _number(errs, raw, ["ensemble", "seed"], integer=True, minimum=0) if "seed" in e else 0,
    )

    analyses = raw.get("analyses")
    if not isinstance(analyses, list) or not analyses:
        errs.add(["analyses"], "must be a nonempty list")
        analyses = []
    for i, a in enumerate(analyses):
        if a not in ANALYSES:
            errs.add(["analyses", i], f"unknown analysis {a!r}; choose from {list(ANALYSES)}")
    analyses = [a for a in ANALYSES if a in analyses]

    o = raw.get("outputs", {})
    fmts = o.get("formats", ["json", "csv"]) if isinstance(o, dict) else None
    if not isinstance(fmts, list) or any(f not in FORMATS for f in fmts):
        errs.add(["outputs", "formats"], f"must be a list drawn from {list(FORMATS)}")
        fmts = ["json"]
    outputs = OutputsConfig(str(o.get("dir", "out")) if isinstance(o, dict) else "out", tuple(fmts))

    options = raw.get("options", {})
    if not isinstance(options, dict):
        errs.add(["options"], "expected an object")
        options = {}

    cfg = None
    if coeff is not None and not errs.items:
        cfg = ScenarioConfig(coeff, analyses, op_cfg, grid, ens, outputs, options)
        try:
            op, F, G, const = build_model(cfg)
        except ConfigError as ce:
            errs.items.extend(ce.errors)
        except (ValueError, KeyError) as ex:
            errs.add(["coefficients"], str(ex))
        else:
            cfg.admissibility = admissibility_table(analyses, const["N"], const["nu"], const["L"], const["M"])
            for row in cfg.admissibility:
                if not row["pass"]:
                    errs.add(
                        ["analyses", raw["analyses"].index(row["analysis"])],
                        f"{row['analysis']} inadmissible: {row['condition']} needs {row['constant']} = {row['value']:.6g} < {row['threshold']:.6g}",
                    )
    if errs.items:
        raise ConfigError(errs.items)
    return cfg


# -- running ----------------------------------------------------------------------------


@dataclass
class RunReport:
    config: dict
    results: dict
    errors: dict
    wall_time: float
    version: str
    started_at: str
    exit_code: int

    def to_dict(self):
        return {
            "config": self.config,
            "results": self.results,
            "errors": self.errors,
            "wall_time": self.wall_time,
            "version": self.version,
            "started_at": self.started_at,
            "exit_code": self.exit_code,
        }

    def to_json(self) -> str:
        return json.dumps(_plain(self.to_dict()), indent=1, sort_keys=True, allow_nan=True)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _law(spec, default):
    spec = spec or default
    return InitialLaw(spec.get("kind", "gaussian"), float(spec.get("scale", 1.0)), tuple(spec.get("value", ())))


def _profile_path(F: CoefficientField, G: CoefficientField, t_lo, t_hi, h) -> SampledPath:
    grid = UniformGrid.spanning(t_lo, t_hi, h)
    t = grid.times
    cols = []
    for fld in (F, G):
        if fld.time_profile is not None:
            v = np.asarray(fld.time_profile(t), dtype=float)
            cols.append(v.reshape(len(t), -1))
        else:
            for s in (-1.0, 1.0):
                x = np.full((len(t), fld.dim), s / math.sqrt(fld.dim))
                cols.append(fld.evaluate(t, x))
    return SampledPath(grid, np.hstack(cols))


def scan_almost_periods(F, G, epsilon=0.05, scan_window=(1.0, 1e5), h=0.05, core=4.0):
    """Joint epsilon-almost periods of the coefficient time profiles, and one representative per cluster."""
    lo, hi = scan_window
    path = _profile_path(F, G, -core - h, hi + core + h, h)
    rep = epsilon_almost_periods(path, epsilon, (lo, hi), h, core)
    reps = []
    if rep.periods:
        per = np.asarray(rep.periods)
        dev = np.asarray(rep.sup_deviation)
        for c in np.split(np.arange(len(per)), np.where(np.diff(per) > 1.0)[0] + 1):
            reps.append(float(per[c[np.argmin(dev[c])]]))
    return rep, reps


def _write(out_dir, name, text):
    with open(os.path.join(out_dir, name), "w", newline="") as fh:
        fh.write(text)


def run_scenario(cfg: ScenarioConfig, out_dir: str | None = None, threads: int = 1, fixed_clock: bool = False, write: bool = True) -> RunReport:
    """Run the requested analyses in dependency order and emit report.json plus CSVs."""
    t_start = time.time()
    stamp = FIXED_CLOCK_STAMP if fixed_clock else time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t_start))
    out_dir = out_dir or os.environ.get(OUT_DIR_ENV) or cfg.outputs.dir
    results, errors, csvs = {}, {}, {}
    violations = 0
    code = EXIT_OK
    opts = cfg.options
    grid = cfg.grid.grid()
    P, seed = cfg.ensemble.n_paths, cfg.ensemble.seed
    op, F, G, const = build_model(cfg)
    results["constants"] = dict(const, admissibility=cfg.admissibility)

    try:
        audits = {"drift": F.audit(), "diffusion": G.audit()}
        results["audit"] = audits
    except AuditError as e:
        errors["audit"] = str(e)
        code = EXIT_AUDIT
    trace = None
    if code == EXIT_OK:
        for a in cfg.analyses:
            o = opts.get(a, {})
            try:
                if a == "solve":
                    cr = contraction_constants(const["N"], const["nu"], const["L"], float(o.get("p", 3.0)), A0=const["A0"])
                    trace = solve_bounded_solution(
                        op, F, G, grid, P, tol=o.get("tol"), max_iter=int(o.get("max_iter", 100)), seed=seed,
                        burn_in=o.get("burn_in"), threads=threads,
                    )
                    th2 = theta_2(const["N"], const["nu"], const["L"])
                    late = [q for q in trace.ratios[1:] if q > th2 + RATIO_SLACK]
                    violations += trace.ball_violations + len(late)
                    results["solve"] = {"contraction": cr.to_dict(), "trace": trace.to_dict(), "ratio_exceedances": len(late)}
                    csvs["solve.csv"] = _series_csv(["t", "norm", "stderr", "r"], grid.times, trace.norm, trace.norm_stderr, np.full(grid.n, trace.r))
                    if o.get("write_paths"):
                        csvs["solve_paths.csv"] = trace.final_path_ensemble.to_csv(wide=True)
                elif a == "dissipativity":
                    ens = euler_maruyama_ensemble(op, F, G, grid.t0, _law(o.get("initial_law"), {"kind": "gaussian", "scale": 1.0}), grid, P, seed, threads=threads)
                    rep = dissipativity_check(ens, const["N"], const["nu"], const["A0"], const["M"])
                    violations += rep.violations + (0 if rep.extras["tail_within_bound"] else 1)
                    results["dissipativity"] = rep.to_dict()
                    csvs["dissipativity.csv"] = rep.to_csv()
                elif a == "convergence":
                    reps = convergence_check(
                        op, F, G,
                        _law(o.get("x1"), {"kind": "gaussian", "scale": 1.0}),
                        _law(o.get("x2"), {"kind": "uniform", "scale": 2.0}),
                        grid, P, seed, bounded_solution=trace, threads=threads,
                    )
                    for rep in reps:
                        violations += rep.violations
                        results[rep.label] = rep.to_dict()
                        csvs[f"{rep.label}.csv"] = rep.to_csv()
                elif a == "comparability":
                    results["comparability"] = _comparability(op, F, G, grid, P, seed, o, threads, csvs)
                elif a == "recurrence_scan":
                    rep, reps = scan_almost_periods(
                        F, G, float(o.get("epsilon", 0.05)), tuple(o.get("scan_window", (1.0, 2e4))),
                        float(o.get("scan_step", 0.05)), float(o.get("core", 4.0)),
                    )
                    d = rep.to_dict()
                    d["cluster_representatives"] = reps
                    d["classification"] = "recurrence class of the coefficients is asserted by their construction; the scan is finite-window evidence"
                    results["recurrence_scan"] = d
                    csvs["recurrence_scan.csv"] = _series_csv(["tau", "sup_deviation"], rep.periods, rep.sup_deviation)
            except NonConvergenceError as e:
                errors[a] = str(e)
                results[a] = {"trace": e.trace.to_dict()}
                code = EXIT_RUNTIME
            except Exception as e:  # structured error per analysis
                errors[a] = f"{type(e).__name__}: {e}"
                code = EXIT_RUNTIME
    if code == EXIT_OK and violations:
        code = EXIT_VIOLATION
    results["violations"] = violations
    wall = 0.0 if fixed_clock else round(time.time() - t_start, 3)
    report = RunReport(cfg.to_dict(), results, errors, wall, __version__, stamp, code)
    if write:
        os.makedirs(out_dir, exist_ok=True)
        if "json" in cfg.outputs.formats:
            _write(out_dir, "report.json", report.to_json())
        if "csv" in cfg.outputs.formats:
            for name, text in csvs.items():
                _write(out_dir, name, text)
    return report


def _series_csv(header, *cols) -> str:
    lines = [",".join(header)]
    for row in zip(*cols):
        lines.append(",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def _comparability(op, F, G, grid, P, seed, o, threads, csvs):
    shifts = o.get("shifts", "auto")
    scan = None
    if shifts == "auto":
        rep, shifts = scan_almost_periods(
            F, G, float(o.get("epsilon", 0.05)), tuple(o.get("scan_window", (1.0, 1e5))),
            float(o.get("scan_step", 0.05)), float(o.get("core", 4.0)),
        )
        shifts = shifts[: int(o.get("max_shifts", 8))]
        scan = rep.to_dict()
    probe = semilinear_comparability_probe(
        op, F, G, list(shifts), F, G, grid, n_paths=P, seed=seed,
        window_points=int(o.get("window_points", 11)), burn_in=o.get("burn_in"), threads=threads,
    )
    d = probe.to_dict()
    d["within_2x_floor"] = probe.within_floor(2.0)
    if scan is not None:
        d["scan"] = scan
    csvs["comparability.csv"] = _series_csv(["shift", "sup_beta", "coefficient_gap"], probe.shifts, probe.sup_values, probe.coefficient_gaps)
    return d
