import json
import numpy as np
import pytest

from spinstar import cli, sweep
from spinstar.core import BlochAngles, ModelParams, NumericalError, ValidationError


def _write(tmp_path, name, data):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


SMALL = {"base": {"n_spins": 2, "gamma": 1.5}, "axes": {"detuning": [-1.0, 0.0, 1.0]}}


def test_sweep_rows_and_header(tmp_path):
    out = tmp_path / "s.csv"
    spec = sweep.SweepSpec.from_dict({**SMALL, "out": str(out), "jsonl": str(tmp_path / "s.jsonl")})
    res = sweep.run_sweep(spec)
    header, rows = sweep.read_sweep(str(out))
    assert header["axes"] == {"detuning": [-1.0, 0.0, 1.0]}
    assert [int(r["index"]) for r in rows] == [0, 1, 2]
    for r in rows:
        nm = float(r["nm"])
        assert nm >= 0 and (r["markovian"] == "1") == (nm < sweep.MK_EPS)
    assert len((tmp_path / "s.jsonl").read_text().splitlines()) == 3
    assert (tmp_path / "s.csv.timing.csv").exists()
    assert len(res.rows) == 3


def test_sweep_deterministic_across_runs(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        sweep.run_sweep(sweep.SweepSpec.from_dict({**SMALL, "out": str(path), "workers": 2}))
    assert a.read_bytes() == b.read_bytes()


def test_sweep_records_point_errors(tmp_path, monkeypatch):
    real = sweep.blp.nm_measure

    def flaky(params, *a, **k):
        if params.detuning == 0.0:
            raise NumericalError("injected")
        return real(params, *a, **k)

    monkeypatch.setattr(sweep.blp, "nm_measure", flaky)
    out = tmp_path / "e.csv"
    rows = sweep.run_sweep(sweep.SweepSpec.from_dict({**SMALL, "out": str(out)})).rows
    assert [r["error_code"] for r in rows] == [0, 3, 0]
    assert rows[1]["error"] == "injected" and rows[1]["nm"] is None
    _, written = sweep.read_sweep(str(out))
    assert written[1]["error_code"] == "3" and written[2]["nm"] != ""


@pytest.mark.parametrize(
    "d",
    [
        {"axes": {}},
        {"axes": {"bogus": [1]}},
        {"axes": {"detuning": [0.0, float("inf")]}},
        {"axes": {"n_spins": [1.5]}},
        {"axes": {"anisotropy": [0.0, 0.3]}, "backend": "flat"},
        {"axes": {"detuning": [0.0]}, "backend": "nope"},
        {"axes": {"detuning": [0.0]}, "unknown_key": 1},
    ],
)
def test_sweep_spec_validation(d):
    with pytest.raises(ValidationError):
        sweep.SweepSpec.from_dict(d)


def test_axis_range_syntax():
    spec = sweep.SweepSpec.from_dict({"axes": {"detuning": {"start": -1, "stop": 1, "num": 5}}})
    assert spec.axes[0][1] == (-1.0, -0.5, 0.0, 0.5, 1.0)


def test_cli_sweep_yaml(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("base: {n_spins: 2, gamma: 1.0}\naxes:\n  detuning: [0.0, 0.5]\nworkers: 1\n")
    out = tmp_path / "o.csv"
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(out), "--workers", "1"]) == 0
    header, rows = sweep.read_sweep(str(out))
    assert header["workers"] == 1 and len(rows) == 2


def test_cli_flags_override_config(tmp_path, capsys):
    cfg = _write(tmp_path, "c.json", {"params": {"n_spins": 3, "gamma": 50.0}})
    assert cli.main(["nm", "--config", cfg, "--gamma", "1.0"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["params"]["gamma"] == 1.0 and summary["nm"] > 0


def test_cli_nm_writes_flows(tmp_path, capsys):
    out = tmp_path / "nm.csv"
    assert cli.main(["nm", "--n-spins", "2", "--gamma", "1", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# ") and lines[1] == "tau,D,inflow,outflow,ratio"


def test_cli_crosscheck_pass(capsys):
    assert cli.main(["crosscheck", "--n-spins", "3", "--anisotropy", "0.5", "--detuning", "0.7",
                     "--gamma", "1", "--nbar", "0.5"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["engine_max_trace_distance"] < 1e-7


def test_cli_crosscheck_kernel(capsys):
    assert cli.main(["crosscheck", "--n-spins", "2", "--gamma", "1", "--detuning", "0.3", "--backend", "flat"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["kernel_max_trace_distance"] < 1e-7


@pytest.mark.parametrize(
    "argv",
    [
        ["crosscheck", "--n-spins", "12"],
        ["crosscheck", "--n-spins", "2", "--anisotropy", "0.3", "--backend", "flat"],
        ["nm", "--gamma", "1"],
        ["nm", "--n-spins", "0"],
        ["sweep"],
    ],
)
def test_cli_validation_exit_code(argv, capsys):
    assert cli.main(argv) == cli.EXIT_INVALID


def test_cli_numerical_failure_exit_code(monkeypatch, capsys):
    def boom(*a, **k):
        raise ArithmeticError("diverged")

    monkeypatch.setattr(cli.blp, "nm_measure", boom)
    assert cli.main(["nm", "--n-spins", "2"]) == cli.EXIT_NUMERICAL


def test_crosscheck_failure_is_nonzero(monkeypatch, capsys):
    monkeypatch.setattr(sweep.CrossCheckReport, "passed", property(lambda self: False))
    assert cli.main(["crosscheck", "--n-spins", "1"]) == cli.EXIT_NUMERICAL


def test_trajectories_file(tmp_path, capsys):
    out = tmp_path / "t.csv"
    assert cli.main(["trajectories", "--n-spins", "4", "--gamma", "1", "--out", str(out), "--points", "201"]) == 0
    lines = out.read_text().splitlines()
    assert lines[1] == "state_index,label,t,x,y,z,purity"
    assert len(lines) == 2 + 2 * 201


def test_trajectory_records_in_ball():
    recs = sweep.export_trajectories(ModelParams(3, anisotropy=-1.0, gamma=1.0), times=np.linspace(0, 10, 101))
    assert all(r.x**2 + r.y**2 + r.z**2 <= 1 + 1e-9 for r in recs)


def test_frozen_dynamics_constant_bloch_vector():
    recs = sweep.export_trajectories(ModelParams(2, j_coupling=0.0, gamma=0.0, central_splitting=0.0),
                                     {"s": BlochAngles(1.0, 0.5)}, times=np.linspace(0, 5, 11), backend="flat")
    v = np.array([[r.x, r.y, r.z] for r in recs])
    assert np.allclose(v, v[0])


def test_closest_approach():
    _, d0 = sweep.closest_approach(ModelParams(4, gamma=1.0))
    _, d1 = sweep.closest_approach(ModelParams(4, gamma=1.0, detuning=0.5))
    assert d0 < 1e-3 < 1e-2 < d1


def test_cross_check_cap():
    with pytest.raises(ValidationError):
        sweep.cross_check(ModelParams(12), [0.0, 1.0])
