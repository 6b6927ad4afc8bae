"""Command-line interface: ``spinstar {sweep,nm,trajectories,crosscheck}``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure (including a
failed cross-check).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings

import numpy as np
import yaml

from . import blp, sweep
from .core import Flat, Lorentzian, ModelParams, ValidationError

log = logging.getLogger("spinstar")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
PARAM_FLAGS = {
    "n_spins": int,
    "j_coupling": float,
    "anisotropy": float,
    "detuning": float,
    "gamma": float,
    "nbar": float,
    "central_splitting": float,
}


def load_config(path):
    if path is None:
        return {}
    with open(path) as f:
        text = f.read()
    try:
        data = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ValidationError(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValidationError("config must be a mapping")
    return data


def _add_common(p, with_backend=True):
    p.add_argument("--config", help="JSON or YAML file; command-line flags override it")
    p.add_argument("--out", help="output path")
    if with_backend:
        p.add_argument("--backend", choices=sweep.BACKENDS)
    p.add_argument("--tmax", type=float, help="final time in units of 1/J (default: adaptive)")


def _add_params(p):
    for name, typ in PARAM_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
    p.add_argument("--spectral-width", dest="spectral_width", type=float,
                   help="Lorentzian bath width (lorentzian backend)")


def params_from(args, cfg) -> ModelParams:
    """Model parameters from the config's ``params`` section overridden by flags."""
    raw = dict(cfg.get("params", {}))
    for name in list(PARAM_FLAGS) + ["spectral_width"]:
        v = getattr(args, name, None)
        if v is not None:
            raw[name] = v
    width = raw.pop("spectral_width", None)
    unknown = set(raw) - set(PARAM_FLAGS)
    if unknown:
        raise ValidationError(f"unknown parameters: {sorted(unknown)}")
    if "n_spins" not in raw:
        raise ValidationError("n_spins is required")
    backend = _backend(args, cfg)
    spectrum = Flat()
    if backend == "lorentzian":
        if width is None:
            raise ValidationError("lorentzian backend needs --spectral-width")
        spectrum = Lorentzian(float(width))
    return ModelParams(spectrum=spectrum, **raw)


def _backend(args, cfg):
    if getattr(args, "oracle", False):
        return "oracle"
    return getattr(args, "backend", None) or cfg.get("backend", "engine")


def _pick(args, cfg, name, key=None, default=None):
    v = getattr(args, name, None)
    return v if v is not None else cfg.get(key or name, default)


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if not cfg and not args.config:
        raise ValidationError("sweep needs --config")
    spec_d = dict(cfg)
    for flag, key in (("out", "out"), ("workers", "workers"), ("backend", "backend"),
                      ("strategy", "strategy"), ("tmax", "t_max"), ("jsonl", "jsonl"),
                      ("resolution", "resolution")):
        v = getattr(args, flag, None)
        if v is not None:
            spec_d[key] = v
    spec_d.setdefault("workers", sweep.default_workers())
    spec = sweep.SweepSpec.from_dict(spec_d)
    res = sweep.run_sweep(spec)
    failed = sum(1 for r in res.rows if r["error_code"])
    log.info("sweep: %d points, %d failed", len(res.rows), failed)
    if not spec.out:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(sweep.ROW_FIELDS)
        for r in res.rows:
            w.writerow([sweep._fmt(r[k]) for k in sweep.ROW_FIELDS])
    return EXIT_OK


def cmd_nm(args) -> int:
    cfg = load_config(args.config)
    params = params_from(args, cfg)
    strategy = blp.strategy_from_name(_pick(args, cfg, "strategy", default="candidates"),
                                      int(_pick(args, cfg, "resolution", default=25)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = blp.nm_measure(params, strategy, backend=_backend(args, cfg),
                             grid_spec=blp.GridSpec(t_max=_pick(args, cfg, "tmax", "t_max")))
    summary = {
        "params": params.as_dict(),
        "nm": res.value,
        "markovian": res.value < sweep.MK_EPS,
        "winner": res.winner,
        "pair": [[a.theta, a.phi] for a in res.pair],
        "candidates": res.candidates,
        "t_max": res.t_max,
        "warnings": res.warnings,
    }
    print(json.dumps(summary, sort_keys=True, indent=2))
    if args.out:
        with open(args.out, "w", newline="") as f:
            f.write("# " + json.dumps(summary, sort_keys=True) + "\n")
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["tau", "D", "inflow", "outflow", "ratio"])
            for row in zip(res.series.times, res.series.values, res.inflow, res.outflow, res.ratio):
                w.writerow([sweep.FLOAT_FMT % v for v in row])
    return EXIT_OK


def cmd_trajectories(args) -> int:
    cfg = load_config(args.config)
    params = params_from(args, cfg)
    t_max = _pick(args, cfg, "tmax", "t_max", default=40.0) / (abs(params.j_coupling) or 1.0)
    n = int(_pick(args, cfg, "points", default=4001))
    if n < 2:
        raise ValidationError("need at least two time points")
    recs = sweep.export_trajectories(params, times=np.linspace(0, t_max, n), out=args.out,
                                     backend=_backend(args, cfg))
    t_c, d_c = sweep.closest_approach(params, backend=_backend(args, cfg),
                                      t_window=min(10.0, t_max * (abs(params.j_coupling) or 1.0)))
    final = {r.label: r.purity for r in recs if r.t == recs[-1].t}
    print(json.dumps({"closest_approach": {"t": t_c, "D": d_c}, "final_purity": final}, sort_keys=True))
    return EXIT_OK


def cmd_crosscheck(args) -> int:
    cfg = load_config(args.config)
    params = params_from(args, cfg)
    t_max = _pick(args, cfg, "tmax", "t_max", default=10.0) / (abs(params.j_coupling) or 1.0)
    n = int(_pick(args, cfg, "points", default=41))
    report = sweep.cross_check(params, np.linspace(0, t_max, n), kernel=_backend(args, cfg) == "flat")
    out = json.dumps(report.as_dict(), sort_keys=True, indent=2)
    print(out)
    if args.out:
        with open(args.out, "w") as f:
            f.write(out + "\n")
    return EXIT_OK if report.passed else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spinstar", description="Central spin star: dynamics and non-Markovianity")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="parameter sweep to CSV")
    _add_common(p)
    p.add_argument("--workers", type=int)
    p.add_argument("--strategy", choices=("candidates", "grid", "hybrid"))
    p.add_argument("--resolution", type=int)
    p.add_argument("--jsonl", help="optional JSON-lines mirror of the rows")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("nm", help="non-Markovianity at a single point")
    _add_common(p)
    _add_params(p)
    p.add_argument("--strategy", choices=("candidates", "grid", "hybrid"))
    p.add_argument("--resolution", type=int)
    p.add_argument("--oracle", action="store_true", help="use the brute-force solver (small N)")
    p.set_defaults(func=cmd_nm)

    p = sub.add_parser("trajectories", help="Bloch trajectories of the x-polarised states")
    _add_common(p)
    _add_params(p)
    p.add_argument("--points", type=int)
    p.add_argument("--oracle", action="store_true", help="use the brute-force solver (small N)")
    p.set_defaults(func=cmd_trajectories)

    p = sub.add_parser("crosscheck", help="engine (and flat kernel with --backend flat) against the oracle")
    _add_common(p)
    _add_params(p)
    p.add_argument("--points", type=int)
    p.set_defaults(func=cmd_crosscheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
