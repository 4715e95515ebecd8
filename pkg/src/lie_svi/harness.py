"""Experiment configuration, orchestration and CSV output behind the CLI."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics as D
from . import models, so3
from .stepper import IntegrationError, SolverOptions, integrate

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class ReferenceMismatch(RuntimeError):
    pass


class SweepFailure(RuntimeError):
    """Too many sweep cells failed to converge to fit a rate."""


PRESETS = {
    "rigid-body": {
        "model": {"kind": "rigid_body", "jd": [1.3, 2.1, 1.2]},
        "R0": [1, 0, 0, 0, 1, 0, 0, 0, 1],
        "Omega0": [2.0, -1.9, 1.0],
        "h": 0.5, "n": 12, "steps": 200,
        "n_list": [4, 6, 8, 10, 12, 14],
        "h_list": [0.5, 0.25, 0.125, 0.0625],
        "t_final": 5.0,
    },
    "pendulum-stable": {
        "model": {"kind": "pendulum", "jd": [1.0, 2.8, 2.0], "mass": 1.0,
                  "gravity": 9.81, "rho": [0.0, 0.0, 1.0]},
        "R0": [1, 0, 0, 0, 1, 0, 0, 0, 1],
        "Omega0": [0.5, -0.5, 0.4],
        "h": 1.5, "n": 8, "steps": 500,
        "n_list": [4, 6, 8, 10, 12, 14],
        "h_list": [0.5, 0.25, 0.125, 0.0625],
        "t_final": 5.0,
    },
    "pendulum-unstable": {
        "model": {"kind": "pendulum", "jd": [1.0, 2.8, 2.0], "mass": 1.0,
                  "gravity": 9.81, "rho": [0.0, 0.0, 1.0]},
        "R0": [-1, 0, 0, 0, 1, 0, 0, 0, -1],
        "Omega0": [0.5, -0.5, 0.4],
        "h": 0.6, "n": 20, "steps": 50,
    },
}

# five directions on the momentum sphere C(y) = 1/2
DEFAULT_MOMENTA = [
    list(v / np.linalg.norm(v)) for v in np.array(
        [[1.0, 0.2, 0.1], [0.1, 1.0, 0.3], [0.2, 0.1, 1.0], [1.0, 1.0, 0.5], [-0.6, 0.8, 0.4]])
]

_TOP_KEYS = {
    "preset", "model", "R0", "Omega0", "h", "n", "m", "steps", "solver", "n_list",
    "h_list", "t_final", "reference", "dense_per_step", "momenta", "warn_threshold",
    "output",
}
_MODEL_KEYS = {"kind", "jd", "mass", "gravity", "rho"}
_SOLVER_KEYS = {"residual_tol", "max_iters", "fd_step", "initial_guess_mode", "max_halvings", "boundary",
                "polish_steps"}
_REFERENCE_KEYS = {"n_ref", "h_ref", "file", "h_split", "threshold"}
_REQUIRED = ("model", "R0", "Omega0", "h", "n", "steps")


@dataclass
class ReferenceSpec:
    n_ref: int = 26
    h_ref: float | None = None
    file: str | None = None
    h_split: float = 1e-5
    threshold: float = 1e-6


@dataclass
class ExperimentConfig:
    model: models.ModelSpec
    model_params: dict
    R0: np.ndarray
    Omega0: np.ndarray
    h: float
    n: int
    steps: int
    m: int | None = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    n_list: list = field(default_factory=list)
    h_list: list = field(default_factory=list)
    t_final: float | None = None
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    dense_per_step: int = 0
    momenta: list = field(default_factory=lambda: [list(v) for v in DEFAULT_MOMENTA])
    warn_threshold: float = 1.0
    output: str | None = None

    @property
    def quad_points(self) -> int:
        return self.n + 1 if self.m is None else self.m

    @property
    def final_time(self) -> float:
        return self.t_final if self.t_final is not None else self.steps * self.h


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _unknown(keys, allowed, where):
    extra = sorted(set(keys) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _vector(raw, name, size):
    try:
        arr = np.asarray(raw, dtype=float).reshape(-1)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: expected {size} numbers") from exc
    if arr.size != size or not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name}: expected {size} finite numbers")
    return arr


def build_model(params: dict) -> models.ModelSpec:
    _unknown(params, _MODEL_KEYS, "model")
    kind = params.get("kind")
    try:
        if kind == "rigid_body":
            extra = set(params) - {"kind", "jd"}
            if extra:
                raise ConfigError(f"model: keys {sorted(extra)} need kind 'pendulum'")
            return models.rigid_body(_vector(params.get("jd", [1.3, 2.1, 1.2]), "model.jd", 3))
        if kind == "pendulum":
            return models.pendulum(
                _vector(params.get("jd", [1.0, 2.8, 2.0]), "model.jd", 3),
                float(params.get("mass", 1.0)), float(params.get("gravity", 9.81)),
                _vector(params.get("rho", [0.0, 0.0, 1.0]), "model.rho", 3))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc
    raise ConfigError(f"model.kind: expected 'rigid_body' or 'pendulum', got {kind!r}")


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON experiment description."""
    try:
        return _parse(text)
    except ConfigError:
        raise
    except (TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(f"malformed config: {exc}") from exc


def _parse(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("top level must be an object")
    _unknown(raw, _TOP_KEYS, "config")
    preset = raw.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {preset!r} (have {sorted(PRESETS)})")
        raw = _merge(PRESETS[preset], raw)
    for key in _REQUIRED:
        if key not in raw:
            raise ConfigError(f"{key}: required field missing")

    model = build_model(raw["model"])
    R0 = _vector(raw["R0"], "R0", 9).reshape(3, 3)
    if so3.orthogonality_defect(R0) > 1e-10 or np.linalg.det(R0) <= 0:
        raise ConfigError("R0: not a proper rotation")
    Omega0 = _vector(raw["Omega0"], "Omega0", 3)

    def number(key, cast, check, msg):
        try:
            val = cast(raw[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: {msg}") from exc
        if cast is int and float(raw[key]) != val:
            raise ConfigError(f"{key}: {msg}")
        if not check(val):
            raise ConfigError(f"{key}: {msg}")
        return val

    h = number("h", float, lambda v: v > 0 and math.isfinite(v), "must be positive")
    n = number("n", int, lambda v: v >= 2, "must be an integer >= 2")
    steps = number("steps", int, lambda v: v >= 1, "must be an integer >= 1")
    m = None
    if raw.get("m") is not None:
        m = number("m", int, lambda v: v >= 1, "must be an integer >= 1")

    solver_raw = raw.get("solver", {}) or {}
    _unknown(solver_raw, _SOLVER_KEYS, "solver")
    try:
        solver = SolverOptions(**solver_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solver: {exc}") from exc

    ref_raw = raw.get("reference", {}) or {}
    _unknown(ref_raw, _REFERENCE_KEYS, "reference")
    reference = ReferenceSpec(**ref_raw)
    if reference.n_ref < 2:
        raise ConfigError("reference.n_ref: must be >= 2")
    if reference.h_split <= 0 or reference.threshold <= 0:
        raise ConfigError("reference: h_split and threshold must be positive")

    n_list = [int(v) for v in raw.get("n_list", [])]
    h_list = [float(v) for v in raw.get("h_list", [])]
    if any(v < 1 for v in n_list):
        raise ConfigError("n_list: entries must be >= 1")
    if any(v <= 0 for v in h_list):
        raise ConfigError("h_list: entries must be positive")
    t_final = raw.get("t_final")
    if t_final is not None and not float(t_final) > 0:
        raise ConfigError("t_final: must be positive")
    dense = int(raw.get("dense_per_step", 0))
    if dense < 0:
        raise ConfigError("dense_per_step: must be >= 0")
    momenta = raw.get("momenta", [list(v) for v in DEFAULT_MOMENTA])
    momenta = [list(_vector(v, "momenta", 3)) for v in momenta]
    warn = float(raw.get("warn_threshold", 1.0))
    if warn <= 0:
        raise ConfigError("warn_threshold: must be positive")
    return ExperimentConfig(
        model=model, model_params=dict(raw["model"]), R0=R0, Omega0=Omega0, h=h, n=n,
        steps=steps, m=m, solver=solver, n_list=n_list, h_list=h_list,
        t_final=None if t_final is None else float(t_final), reference=reference,
        dense_per_step=dense, momenta=momenta, warn_threshold=warn,
        output=raw.get("output"),
    )


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# -- CSV ----------------------------------------------------------------------

RUN_COLUMNS = (
    ["k", "t"] + [f"R{i}{j}" for i in range(3) for j in range(3)]
    + ["Omega_0", "Omega_1", "Omega_2", "energy", "y_0", "y_1", "y_2", "C", "H",
       "orthogonality_defect", "newton_iterations", "residual", "max_stage_norm"]
)
TRAJECTORY_COLUMNS = (["t"] + [f"R{i}{j}" for i in range(3) for j in range(3)]
                      + ["Omega_0", "Omega_1", "Omega_2"])
CONVERGENCE_COLUMNS = ["parameter", "value", "step_error", "curve_error", "status"]
INVARIANT_COLUMNS = ["run", "k", "t", "y_0", "y_1", "y_2", "C", "H", "energy"]
DRIFT_COLUMNS = ["run", "y0_0", "y0_1", "y0_2", "C_drift", "H_drift", "energy_drift", "status"]


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


class CsvSink:
    """Single writer per output file; rows are flushed as they arrive."""

    def __init__(self, path, columns):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(columns)

    def row(self, values):
        self._w.writerow([fmt(v) for v in values])
        self._fh.flush()

    def raw(self, values):
        self._w.writerow(values)
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_trajectory(path, times, rotations, omegas):
    with CsvSink(path, TRAJECTORY_COLUMNS) as sink:
        for t, R, W in zip(times, rotations, omegas):
            sink.row([t, *np.ravel(R), *W])


def read_trajectory(path) -> D.ReferenceTrajectory:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return D.ReferenceTrajectory(data[:, 0], data[:, 1:10].reshape(-1, 3, 3), data[:, 10:13])


# -- runs -----------------------------------------------------------------------

def _run_row(model, k, t, R, Omega, res):
    s = D.sample(model, t, R, Omega)
    return [k, t, *np.ravel(R), *Omega, s.energy, *s.y, s.C, s.H, s.orthogonality_defect,
            res.iterations, res.residual, res.chart_health.max_stage_norm]


@dataclass
class RunRecord:
    rows: list
    trajectory: object = None


def cmd_simulate(cfg: ExperimentConfig, out_dir) -> RunRecord:
    """Integrate and write ``simulate.csv`` (plus ``dense.csv`` when requested).

    Rows are flushed step by step; on failure a ``FAILED`` marker row follows
    the completed prefix and the :class:`IntegrationError` is re-raised.
    """
    from .stepper import carry_momentum, chart_momentum_to_body

    out = Path(out_dir)
    model = cfg.model
    rows = []
    with CsvSink(out / "simulate.csv", RUN_COLUMNS) as sink:

        def on_step(k, res):
            y = chart_momentum_to_body(carry_momentum(res.boundary_momentum_plus, res.stages.xis[-1]))
            row = _run_row(model, k + 1, (k + 1) * cfg.h, res.next, y / model.inertia.I, res)
            rows.append(row)
            sink.row(row)

        try:
            traj = integrate(model, cfg.R0, cfg.Omega0, cfg.h, cfg.n, cfg.steps, cfg.solver,
                             cfg.m, cfg.warn_threshold, callback=on_step)
        except IntegrationError as exc:
            sink.raw(["FAILED", str(exc.step_index), str(exc)])
            raise
    if cfg.dense_per_step > 0:
        write_trajectory(out / "dense.csv", *traj.dense(cfg.dense_per_step))
    return RunRecord(rows, traj)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("LIE_SVI_THREADS", "0")) or (os.cpu_count() or 1))
    except ValueError:
        return 1


def _map(fn, items):
    workers = min(_threads(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def spectral_reference(cfg: ExperimentConfig, h=None, t_final=None, per_step=0):
    """High-order Galerkin run used as the exact solution (node and dense samples)."""
    h = h or cfg.reference.h_ref or cfg.h
    t_final = t_final or cfg.final_time
    steps = _steps_for(t_final, h)
    traj = integrate(cfg.model, cfg.R0, cfg.Omega0, h, cfg.reference.n_ref, steps, cfg.solver,
                     None, cfg.warn_threshold)
    nodes = D.ReferenceTrajectory(traj.times, np.asarray(traj.rotations), traj.omegas)
    dense = None
    if per_step > 0:
        dense = D.ReferenceTrajectory(*traj.dense(per_step))
    return nodes, dense


def _steps_for(t_final, h) -> int:
    steps = int(round(t_final / h))
    if steps < 1 or abs(steps * h - t_final) > 1e-9 * max(1.0, t_final):
        raise ConfigError(f"t_final={t_final} is not a multiple of h={h}")
    return steps


def _shared_error(a: D.ReferenceTrajectory, b: D.ReferenceTrajectory, tol=1e-9) -> float:
    """Max group error over sample times present in both trajectories."""
    tb = np.asarray(b.times)
    worst = None
    for t, R in zip(a.times, a.rotations):
        j = np.flatnonzero(np.abs(tb - t) <= tol)
        if j.size:
            e = so3.group_error(R, b.rotations[j[0]])
            worst = e if worst is None else max(worst, e)
    if worst is None:
        raise ValueError("trajectories share no sample times")
    return worst


def cmd_reference(cfg: ExperimentConfig, out_dir):
    """Write spectral and splitting references; return their mutual error."""
    out = Path(out_dir)
    h = cfg.reference.h_ref or cfg.h
    t_final = cfg.final_time
    nodes, _ = spectral_reference(cfg, h, t_final)
    split_steps = _steps_for(t_final, cfg.reference.h_split)
    stride = _steps_for(h, cfg.reference.h_split)
    split = D.splitting_oracle(cfg.model, cfg.R0, cfg.Omega0, cfg.reference.h_split,
                               split_steps, stride)
    write_trajectory(out / "reference_spectral.csv", nodes.times, nodes.rotations, nodes.omegas)
    write_trajectory(out / "reference_splitting.csv", split.times, split.rotations, split.omegas)
    err = D.trajectory_error(nodes, split)
    with CsvSink(out / "reference_summary.csv", ["n_ref", "h_ref", "h_split", "t_final", "max_group_error"]) as s:
        s.row([cfg.reference.n_ref, h, cfg.reference.h_split, t_final, err])
    if err > cfg.reference.threshold:
        raise ReferenceMismatch(
            f"spectral and splitting references disagree: {err:.3e} > {cfg.reference.threshold:.1e}")
    return err


def _load_or_build_reference(cfg, h, t_final, per_step):
    if cfg.reference.file:
        ref = read_trajectory(cfg.reference.file)
        return ref, ref
    return spectral_reference(cfg, h, t_final, per_step)


def _cell(args):
    cfg, n, h, t_final, per_step, ref_nodes, ref_dense = args
    try:
        traj = integrate(cfg.model, cfg.R0, cfg.Omega0, h, n, _steps_for(t_final, h),
                         cfg.solver, cfg.m, cfg.warn_threshold)
    except IntegrationError as exc:
        log.warning("cell n=%s h=%s failed: %s", n, h, exc)
        return math.nan, math.nan, False
    # one-step-map error: endpoint at the final time
    end = D.ReferenceTrajectory(traj.times[-1:], np.asarray(traj.rotations[-1:]), traj.omegas[-1:])
    step_err = _shared_error(end, ref_nodes)
    curve_err = math.nan
    if ref_dense is not None and per_step > 0:
        curve_err = _shared_error(D.ReferenceTrajectory(*traj.dense(per_step)), ref_dense)
    return step_err, curve_err, True


def _write_table(path, table: D.ConvergenceTable):
    with CsvSink(path, CONVERGENCE_COLUMNS) as sink:
        for value, se, ce, ok in table.rows:
            sink.row([table.parameter, value, se, ce, "ok" if ok else "failed"])


def _fit(table, mode, cfg, floor, field):
    floor = 10 * cfg.solver.residual_tol if floor is None else floor
    try:
        return D.fit_rate(table, mode, floor)
    except ValueError as exc:
        if not all(r[3] for r in table.rows):
            raise SweepFailure(f"{exc} (some cells did not converge)") from exc
        raise ConfigError(f"{field}: {exc}") from exc


def cmd_converge_n(cfg: ExperimentConfig, out_dir, floor=None):
    """Fixed h, sweep n; returns ``(table, fitted slope of ln(error) per unit n)``."""
    if len(cfg.n_list) < 2:
        raise ConfigError("n_list: need at least two entries to fit a rate")
    per_step = cfg.dense_per_step or 8
    t_final = cfg.final_time
    ref_nodes, ref_dense = _load_or_build_reference(cfg, cfg.h, t_final, per_step)
    cells = [(cfg, n, cfg.h, t_final, per_step, ref_nodes, ref_dense) for n in cfg.n_list]
    table = D.ConvergenceTable("n")
    for n, (se, ce, ok) in zip(cfg.n_list, _map(_cell, cells)):
        table.add(n, se, ce, ok)
    _write_table(Path(out_dir) / "converge_n.csv", table)
    slope = _fit(table, D.GEOMETRIC, cfg, floor, "n_list")
    return table, slope


def cmd_converge_h(cfg: ExperimentConfig, out_dir, floor=None):
    """Fixed n, sweep h; returns ``(table, fitted order, expected order)``."""
    if len(cfg.h_list) < 2:
        raise ConfigError("h_list: need at least two entries to fit a rate")
    t_final = cfg.final_time
    ref_nodes, _ = _load_or_build_reference(cfg, cfg.reference.h_ref or max(cfg.h_list), t_final, 0)
    cells = [(cfg, cfg.n, h, t_final, 0, ref_nodes, None) for h in cfg.h_list]
    table = D.ConvergenceTable("h")
    for h, (se, ce, ok) in zip(cfg.h_list, _map(_cell, cells)):
        table.add(h, se, ce, ok)
    _write_table(Path(out_dir) / "converge_h.csv", table)
    order = _fit(table, D.ALGEBRAIC, cfg, floor, "h_list")
    return table, order, D.expected_order(cfg.n)


@dataclass
class DriftReport:
    y0: np.ndarray
    C_drift: float
    H_drift: float
    energy_drift: float
    ok: bool = True


def _drift_run(args):
    cfg, y0 = args
    model = cfg.model
    Omega0 = np.asarray(y0) / model.inertia.I
    try:
        traj = integrate(model, cfg.R0, Omega0, cfg.h, cfg.n, cfg.steps, cfg.solver, cfg.m,
                         cfg.warn_threshold)
    except IntegrationError as exc:
        log.warning("invariants run failed: %s", exc)
        return None
    samples = [D.sample(model, t, R, W) for t, R, W in zip(traj.times, traj.rotations, traj.omegas)]
    return samples


def _rel_drift(values):
    v = np.asarray(values, dtype=float)
    scale = abs(v[0])
    dev = np.max(np.abs(v - v[0]))
    return float(dev / scale) if scale > 0 else float(dev)


def cmd_invariants(cfg: ExperimentConfig, out_dir):
    """Runs from each initial body momentum; per-run max relative drift of C, H and energy."""
    out = Path(out_dir)
    results = _map(_drift_run, [(cfg, y0) for y0 in cfg.momenta])
    reports = []
    with CsvSink(out / "invariants_trajectories.csv", INVARIANT_COLUMNS) as traj_sink, \
            CsvSink(out / "invariants_drift.csv", DRIFT_COLUMNS) as drift_sink:
        for run, (y0, samples) in enumerate(zip(cfg.momenta, results)):
            if samples is None:
                rep = DriftReport(np.asarray(y0), math.nan, math.nan, math.nan, False)
            else:
                for k, s in enumerate(samples):
                    traj_sink.row([run, k, s.t, *s.y, s.C, s.H, s.energy])
                rep = DriftReport(np.asarray(y0), _rel_drift([s.C for s in samples]),
                                  _rel_drift([s.H for s in samples]),
                                  _rel_drift([s.energy for s in samples]))
            reports.append(rep)
            drift_sink.row([run, *rep.y0, rep.C_drift, rep.H_drift, rep.energy_drift,
                            "ok" if rep.ok else "failed"])
    return reports


def describe(cfg: ExperimentConfig) -> str:
    return f"model={cfg.model.name} h={cfg.h} n={cfg.n} m={cfg.quad_points} steps={cfg.steps}"
