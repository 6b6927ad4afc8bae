"""Parameter sweeps, trajectory export and oracle cross-checks."""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from . import blp, engine, kernels, oracle
from .core import (
    BlochAngles,
    Flat,
    Lorentzian,
    ModelParams,
    NumericalError,
    ValidationError,
    bloch_to_state,
    state_from_bloch,
    trace_distance,
)

MK_EPS = 1e-4
CROSSCHECK_TOL = 1e-6
AXES = ("n_spins", "detuning", "gamma", "anisotropy", "nbar", "j_coupling", "central_splitting")
BACKENDS = ("engine", "flat", "lorentzian")
ROW_FIELDS = (
    "index", *AXES, "spectrum", "backend", "strategy", "nm", "markovian",
    "theta1", "phi1", "theta2", "phi2", "winner", "t_max", "warning", "error_code", "error",
)
FLOAT_FMT = "%.10g"


def _axis_values(name, spec) -> tuple:
    if isinstance(spec, dict):
        if "values" in spec:
            vals = spec["values"]
        else:
            try:
                vals = np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"])).tolist()
            except KeyError as exc:
                raise ValidationError(f"axis {name!r} needs values or start/stop/num") from exc
    elif isinstance(spec, (list, tuple)):
        vals = list(spec)
    else:
        vals = [spec]
    try:
        vals = tuple(float(v) for v in vals)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"axis {name!r} has non-numeric values") from exc
    if not vals:
        raise ValidationError(f"axis {name!r} is empty")
    if not all(math.isfinite(v) for v in vals):
        raise ValidationError(f"axis {name!r} has non-finite values")
    if name == "n_spins":
        if any(v != int(v) or v < 1 for v in vals):
            raise ValidationError("n_spins values must be positive integers")
        vals = tuple(int(v) for v in vals)
    return vals


@dataclass(frozen=True)
class SweepSpec:
    """Declarative sweep: the Cartesian product of ``axes`` on top of ``base``.

    Rates are in units of J and times in units of 1/J.
    """

    axes: tuple
    base: tuple = ()
    backend: str = "engine"
    strategy: str = "candidates"
    resolution: int = 25
    t_max: Optional[float] = None
    spectral_width: Optional[float] = None
    mk_eps: float = MK_EPS
    out: Optional[str] = None
    jsonl: Optional[str] = None
    workers: int = 1

    def __post_init__(self):
        axes = tuple((str(k), _axis_values(k, v)) for k, v in (self.axes.items() if isinstance(self.axes, dict) else self.axes))
        if not axes:
            raise ValidationError("a sweep needs at least one axis")
        names = [k for k, _ in axes]
        bad = [k for k in names if k not in AXES]
        if bad or len(set(names)) != len(names):
            raise ValidationError(f"unknown or repeated axes: {bad or names}")
        base = dict(self.base.items() if isinstance(self.base, dict) else self.base)
        bad = [k for k in base if k not in AXES]
        if bad:
            raise ValidationError(f"unknown base parameters: {bad}")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "base", tuple(sorted(base.items())))
        if self.backend not in BACKENDS:
            raise ValidationError(f"backend must be one of {BACKENDS}")
        blp.strategy_from_name(self.strategy, self.resolution)
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        if self.t_max is not None and not self.t_max > 0:
            raise ValidationError("t_max must be positive")
        if self.backend == "lorentzian" and not (self.spectral_width and self.spectral_width > 0):
            raise ValidationError("lorentzian backend needs a positive spectral_width")
        # validity domain checked up front for the whole grid
        for p in self.points():
            if self.backend in ("flat", "lorentzian"):
                kernels.check_isotropic(p, f"{self.backend} backend")

    def points(self) -> list:
        names = [k for k, _ in self.axes]
        base = dict(self.base)
        spectrum = Lorentzian(self.spectral_width) if self.backend == "lorentzian" else Flat()
        out = []
        for combo in itertools.product(*(v for _, v in self.axes)):
            kw = {"n_spins": 1, **base, **dict(zip(names, combo))}
            out.append(ModelParams(spectrum=spectrum, **kw))
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["axes"] = {k: list(v) for k, v in self.axes}
        d["base"] = dict(self.base)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown sweep keys: {sorted(extra)}")
        if "axes" not in d:
            raise ValidationError("sweep config needs 'axes'")
        return cls(**d)


def _fmt(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return FLOAT_FMT % v
    return "" if v is None else str(v)


def evaluate_point(args):
    """One sweep row plus its wall time; never raises."""
    index, params, spec = args
    t0 = time.perf_counter()
    row = {"index": index, **{k: getattr(params, k) for k in AXES},
           "spectrum": params.spectrum.name, "backend": spec.backend, "strategy": spec.strategy,
           "error_code": 0, "error": "", "warning": ""}
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = blp.nm_measure(
                params,
                blp.strategy_from_name(spec.strategy, spec.resolution),
                backend=spec.backend,
                grid_spec=blp.GridSpec(t_max=spec.t_max),
            )
        row.update(
            nm=res.value,
            markovian=res.value < spec.mk_eps,
            theta1=res.pair[0].theta, phi1=res.pair[0].phi,
            theta2=res.pair[1].theta, phi2=res.pair[1].phi,
            winner=res.winner, t_max=res.t_max, warning="; ".join(res.warnings),
        )
    except ValidationError as exc:
        row.update(error_code=2, error=str(exc))
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        row.update(error_code=3, error=str(exc))
    for k in ROW_FIELDS:
        row.setdefault(k, None)
    return row, time.perf_counter() - t0


class SweepResult(NamedTuple):
    rows: list
    timings: list
    paths: dict


def header_line(spec: SweepSpec) -> str:
    d = spec.to_dict()
    # run-local settings do not change the data
    for k in ("out", "jsonl"):
        d.pop(k)
    return "# " + json.dumps(d, sort_keys=True) + "\n"


def run_sweep(spec: SweepSpec) -> SweepResult:
    """Evaluate every grid point; rows are written in grid order as they complete."""
    tasks = [(i, p, spec) for i, p in enumerate(spec.points())]
    paths = {}
    sinks = []
    writer = None
    if spec.out:
        paths["csv"] = spec.out
        paths["timing"] = spec.out + ".timing.csv"
        fcsv = open(spec.out, "w", newline="")
        fcsv.write(header_line(spec))
        writer = csv.writer(fcsv, lineterminator="\n")
        writer.writerow(ROW_FIELDS)
        ftime = open(paths["timing"], "w", newline="")
        ftime.write("index,wall_s\n")
        sinks += [fcsv, ftime]
    fjson = None
    if spec.jsonl:
        paths["jsonl"] = spec.jsonl
        fjson = open(spec.jsonl, "w")
        sinks.append(fjson)
    rows, timings = [], []
    try:
        if spec.workers == 1:
            results = map(evaluate_point, tasks)
            pool = None
        else:
            pool = ProcessPoolExecutor(max_workers=spec.workers)
            results = pool.map(evaluate_point, tasks)
        for row, wall in results:
            rows.append(row)
            timings.append(wall)
            if writer is not None:
                writer.writerow([_fmt(row[k]) for k in ROW_FIELDS])
                ftime.write(f"{row['index']},{wall:.6f}\n")
            if fjson is not None:
                fjson.write(json.dumps({k: row[k] for k in ROW_FIELDS}, sort_keys=True) + "\n")
            for f in sinks:
                f.flush()
        if pool is not None:
            pool.shutdown()
    finally:
        for f in sinks:
            f.close()
    return SweepResult(rows, timings, paths)


def read_sweep(path: str):
    """Header dict and rows (as strings) of a sweep CSV."""
    with open(path, newline="") as f:
        first = f.readline()
        if not first.startswith("# "):
            raise ValidationError("missing sweep header")
        header = json.loads(first[2:])
        rows = list(csv.DictReader(f))
    return header, rows


# ---------------------------------------------------------------- trajectories


class TrajectoryRecord(NamedTuple):
    state_index: int
    label: str
    t: float
    x: float
    y: float
    z: float
    purity: float


X_STATES = {"+x": BlochAngles(math.pi / 2, 0.0), "-x": BlochAngles(math.pi / 2, math.pi)}


def export_trajectories(params: ModelParams, initial_states=None, times=None, out: Optional[str] = None,
                        backend="engine") -> list:
    """Bloch trajectories of the central spin for each initial state.

    ``initial_states`` maps labels to :class:`BlochAngles`; defaults to the
    x-polarised pair.  Writes a CSV when ``out`` is given.
    """
    initial_states = dict(initial_states or X_STATES)
    if times is None:
        times = np.linspace(0.0, 40.0 / (abs(params.j_coupling) or 1.0), 4001)
    times = np.asarray(times, dtype=float)
    dyn = blp.make_dynamics(params, backend)
    A, b = dyn.affine(times)
    records = []
    for k, (label, ang) in enumerate(initial_states.items()):
        ang = ang if isinstance(ang, BlochAngles) else BlochAngles(*ang)
        r = A @ ang.vector() + b
        norm2 = np.sum(r * r, axis=1)
        if np.any(norm2 > 1 + 1e-9):
            raise NumericalError("Bloch vector left the unit ball")
        for t, (x, y, z), n2 in zip(times, r, norm2):
            records.append(TrajectoryRecord(k, label, float(t), float(x), float(y), float(z), float(0.5 * (1 + n2))))
    if out:
        with open(out, "w", newline="") as f:
            f.write("# " + json.dumps({"params": params.as_dict(), "backend": backend}, sort_keys=True) + "\n")
            w = csv.writer(f, lineterminator="\n")
            w.writerow(TrajectoryRecord._fields)
            for rec in records:
                w.writerow([_fmt(v) for v in rec])
    return records


def closest_approach(params: ModelParams, pair=None, t_window: float = 10.0, backend="engine",
                     n_samples: int = 2001):
    """Earliest-found minimum of the trace distance between two trajectories on ``[0, t_window]``.

    Returns ``(t, D)`` after refining the best sample with a bounded scalar search.
    """
    pair = pair or tuple(X_STATES.values())
    dyn = blp.make_dynamics(params, backend)
    unit = 1.0 / (abs(params.j_coupling) or 1.0)
    times = np.linspace(0.0, t_window * unit, n_samples)
    dr = pair[0].vector() - pair[1].vector()

    def dist(t):
        return float(0.5 * np.linalg.norm(dyn.affine([t])[0][0] @ dr))

    A, _ = dyn.affine(times)
    d = 0.5 * np.linalg.norm(A @ dr, axis=1)
    i = int(np.argmin(d))
    lo, hi = times[max(i - 1, 0)], times[min(i + 1, times.size - 1)]
    res = minimize_scalar(dist, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    if res.fun < d[i]:
        return float(res.x), float(res.fun)
    return float(times[i]), float(d[i])


# ---------------------------------------------------------------- cross-check


@dataclass
class CrossCheckReport:
    params: ModelParams
    engine_error: float
    kernel_error: Optional[float]
    tolerance: float = CROSSCHECK_TOL
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        errs = [self.engine_error] + ([self.kernel_error] if self.kernel_error is not None else [])
        return all(e < self.tolerance for e in errs)

    def as_dict(self) -> dict:
        return {
            "params": self.params.as_dict(),
            "engine_max_trace_distance": self.engine_error,
            "kernel_max_trace_distance": self.kernel_error,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "notes": self.notes,
        }


def cross_check(params: ModelParams, t_list, kernel: bool = False, tolerance: float = CROSSCHECK_TOL,
                states=None) -> CrossCheckReport:
    """Engine (and optionally flat kernel) against the brute-force oracle.

    Reports the largest trace distance over ``t_list`` and the test states
    (the x-, y- and z-polarised states by default).
    """
    if params.n_spins > oracle.ORACLE_CAP:
        raise ValidationError(f"n_spins={params.n_spins} exceeds the oracle cap {oracle.ORACLE_CAP}")
    kdyn = None
    if kernel:
        kernels.check_isotropic(params, "flat kernel cross-check")
        if params.nbar != 0:
            raise ValidationError("flat kernel cross-check is defined at nbar = 0")
        kdyn = blp.make_dynamics(params, "flat")
    t_list = np.sort(np.asarray(t_list, dtype=float))
    states = states or [BlochAngles(math.pi / 2, 0), BlochAngles(math.pi / 2, math.pi / 2),
                        BlochAngles(0, 0), BlochAngles(math.pi, 0)]
    rmap = engine.ReducedMap(params)
    eng_err = 0.0
    ker_err = 0.0 if kdyn else None
    for ang in states:
        rho0 = bloch_to_state(ang)
        ref = oracle.evolve_central(params, rho0, t_list)
        got = rmap.states(rho0, t_list)
        eng_err = max(eng_err, max(trace_distance(a, b) for a, b in zip(ref, got)))
        if kdyn is not None:
            r = kdyn.bloch(ang.vector(), t_list)
            ker_err = max(ker_err, max(trace_distance(a, state_from_bloch(v)) for a, v in zip(ref, r)))
    return CrossCheckReport(params, eng_err, ker_err, tolerance)


def default_workers() -> int:
    return os.cpu_count() or 1

