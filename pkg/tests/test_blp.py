import math
import warnings

import numpy as np
import pytest

from spinstar import blp, kernels
from spinstar.core import BlochAngles, Lorentzian, ModelParams, ValidationError

EQ, POL = blp.EQUATORIAL, blp.POLAR


def _synthetic(f, t_max, n=2001):
    t = np.linspace(0, t_max, n)
    return blp.TraceDistanceSeries(t, f(t), EQ, blp.Provenance.FLAT_KERNEL, evaluator=lambda s: float(f(s)))


def test_identical_pair_gives_zero_series():
    s = blp.sample_trace_distance(ModelParams(2, gamma=1.0), (EQ[0], EQ[0]), blp.GridSpec(t_max=5))
    assert np.all(s.values == 0)
    assert blp.partition_monotonicity(s).total_rise == 0


def test_initial_value_is_static_distance():
    pair = (BlochAngles(0.4, 0.0), BlochAngles(2.0, 1.0))
    s = blp.sample_trace_distance(ModelParams(3, gamma=1.0), pair, blp.GridSpec(t_max=2))
    expected = 0.5 * np.linalg.norm(pair[0].vector() - pair[1].vector())
    assert s.values[0] == pytest.approx(expected)


def test_polar_pair_flat_kernel_is_population():
    p = ModelParams(3, gamma=0.8, detuning=0.4)
    s = blp.sample_trace_distance(p, POL, blp.GridSpec(t_max=10), backend="flat")
    g = kernels.amplitude(p, s.times)
    assert np.allclose(s.values, np.abs(g) ** 2, atol=1e-13)


def test_revivals_shrink_with_gamma():
    peaks = []
    for g in (0.5, 1.0, 1.5):
        s = blp.sample_trace_distance(ModelParams(6, gamma=g), EQ, blp.GridSpec(t_max=10))
        part = blp.partition_monotonicity(s)
        peaks.append(max(iv.d_end for iv in part.rising))
    assert peaks[0] > peaks[1] > peaks[2]


def test_monotone_decay_single_interval():
    s = _synthetic(lambda t: np.exp(-t), 10)
    part = blp.partition_monotonicity(s)
    assert len(part.intervals) == 1 and not part.intervals[0].rising
    assert part.total_rise == 0


def test_damped_oscillation_extrema():
    s = _synthetic(lambda t: np.abs(np.cos(t)) * np.exp(-0.1 * t), 10, n=401)
    part = blp.partition_monotonicity(s)
    tags = [iv.rising for iv in part.intervals]
    assert all(a != b for a, b in zip(tags, tags[1:]))
    minima = [iv.start for iv in part.rising]
    for k, m in enumerate(minima):
        assert m == pytest.approx(math.pi / 2 + k * math.pi, abs=2e-4)
    assert part.boundaries[0] == 0 and part.boundaries[-1] == 10


def test_plateau_merged():
    s = _synthetic(lambda t: np.where(t < 2, 1 - t / 4, np.where(t < 4, 0.5, 0.5 + (t - 4) / 10)), 6, n=601)
    part = blp.partition_monotonicity(s)
    assert [iv.rising for iv in part.intervals] == [False, True]


def test_engine_revivals_present():
    s = blp.sample_trace_distance(ModelParams(6, gamma=0.5), EQ, blp.GridSpec(t_max=10))
    assert len(blp.partition_monotonicity(s).rising) >= 2


def test_flows_closed_orbit():
    s = _synthetic(lambda t: np.abs(np.cos(t)), math.pi)
    fl = blp.nm_flows(blp.partition_monotonicity(s))
    assert fl.inflow[-1] == pytest.approx(1.0, abs=1e-9)
    assert fl.outflow[-1] == pytest.approx(1.0, abs=1e-9)
    assert fl.ratio[-1] == pytest.approx(1.0, abs=1e-9)
    assert np.all(fl.ratio[s.times < math.pi / 2] == 0)


def test_flow_balance_and_ratio_bounds():
    res = blp.nm_measure(ModelParams(4, gamma=1.0))
    d = res.series.values
    assert np.abs(d - d[0] - res.inflow + res.outflow).max() < 1e-12
    assert res.value == pytest.approx(res.inflow[-1], abs=1e-12)
    assert np.all((res.ratio >= 0) & (res.ratio <= 1))


def test_overdamped_is_markovian():
    res = blp.nm_measure(ModelParams(2, gamma=10.0))
    assert res.value == 0


@pytest.mark.filterwarnings("ignore::spinstar.blp.SettleWarning")
def test_detuning_window():
    g = math.sqrt(6)
    vals = {d: blp.nm_measure(ModelParams(6, gamma=g, detuning=d)) for d in (0.0, 0.8, 3.0)}
    assert vals[0.0].value > 1e-4 and vals[0.0].winner == "equatorial"
    assert vals[0.8].value < 1e-4
    assert vals[3.0].value > 1e-4 and vals[3.0].winner == "polar"


def test_nm_grows_with_n():
    vals = [blp.nm_measure(ModelParams(n, gamma=1.0)).value for n in (2, 4, 8)]
    assert vals[0] < vals[1] < vals[2]


def test_nm_decreases_with_gamma():
    vals = [blp.nm_measure(ModelParams(6, gamma=g)).value for g in (0.5, 1.0, 1.5)]
    assert vals[0] > vals[1] > vals[2]


def test_exchange_and_rotation_invariance():
    p = ModelParams(3, gamma=0.7, detuning=0.2)
    dyn = blp.make_dynamics(p)
    pair = (BlochAngles(0.5, 0.3), BlochAngles(2.2, 2.0))
    swapped = (pair[1], pair[0])
    rotated = (BlochAngles(0.5, 1.3), BlochAngles(2.2, 3.0))
    grid = blp.GridSpec(t_max=20)
    vals = [blp.partition_monotonicity(blp.sample_trace_distance(p, q, grid, dynamics=dyn)).total_rise
            for q in (pair, swapped, rotated)]
    assert vals[1] == pytest.approx(vals[0], abs=1e-12)
    assert vals[2] == pytest.approx(vals[0], abs=1e-9)


def test_settle_warning():
    with pytest.warns(blp.SettleWarning):
        res = blp.nm_measure(ModelParams(2, gamma=0.2), grid_spec=blp.GridSpec(t_max=3))
    assert res.warnings


def test_undamped_hits_cap_with_warning():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        res = blp.nm_measure(ModelParams(1), grid_spec=blp.GridSpec(t_cap=20))
    assert res.t_max == pytest.approx(20)
    assert any(issubclass(x.category, blp.SettleWarning) for x in w)


def test_flat_backend_rejects_anisotropy():
    with pytest.raises(ValidationError):
        blp.nm_measure(ModelParams(2, anisotropy=0.5, gamma=1.0), backend="flat")


def test_backends_agree_at_zero_temperature():
    p = ModelParams(3, gamma=1.0, detuning=0.3)
    a = blp.nm_measure(p, backend="engine").value
    b = blp.nm_measure(p, backend="flat").value
    assert a == pytest.approx(b, abs=1e-9)


def test_lorentzian_backend_runs():
    p = ModelParams(2, gamma=1.0, spectrum=Lorentzian(0.5))
    res = blp.nm_measure(p, backend="lorentzian")
    assert res.series.provenance is blp.Provenance.LORENTZIAN_KERNEL
    assert res.value > 0


@pytest.mark.parametrize("delta,winner", [(0.0, "equatorial"), (3.0, "polar")])
def test_optimal_pair_check(delta, winner):
    rep = blp.optimal_pair_check(ModelParams(4, gamma=2.0, detuning=delta), resolution=13, n_mixed=1000)
    assert rep.winner == winner
    assert rep.passed, rep


def test_grid_search_agrees_with_candidates():
    p = ModelParams(4, gamma=2.0)
    g = blp.nm_measure(p, blp.GridSearch(9))
    c = blp.nm_measure(p)
    assert g.value == pytest.approx(c.value, rel=1e-6)
    assert g.winner == "equatorial"


def test_hybrid_is_local_max():
    p = ModelParams(2, gamma=0.5, detuning=0.6, nbar=0.5)
    res = blp.nm_measure(p, blp.Hybrid(7))
    dyn = blp.make_dynamics(p)
    times, _ = blp.resolve_times(dyn, blp.GridSpec())
    A, _ = dyn.affine(times)
    a, b = res.pair
    x0 = np.array([a.theta, b.theta, b.phi - a.phi])

    def val(x):
        dr = BlochAngles(x[0], a.phi).vector() - BlochAngles(x[1], a.phi + x[2]).vector()
        return blp.sampled_measure(A, dr)[0]

    base = val(x0)
    for k in range(3):
        for s in (-1e-3, 1e-3):
            x = x0.copy()
            x[k] += s
            assert val(x) <= base + 1e-6


def test_anisotropic_grid_scans_common_azimuth():
    pairs = blp.grid_pairs(6, common_azimuth=True)
    assert len({round(p[0].phi, 9) for p in pairs}) > 1
    res = blp.nm_measure(ModelParams(1, anisotropy=1.0, gamma=1.0), blp.GridSearch(5))
    assert res.value >= blp.nm_measure(ModelParams(1, anisotropy=1.0, gamma=1.0)).value - 1e-3


def test_grid_halving_stability():
    p = ModelParams(6, gamma=1.0)
    a = blp.nm_measure(p, grid_spec=blp.GridSpec(dt=0.02)).value
    b = blp.nm_measure(p, grid_spec=blp.GridSpec(dt=0.01)).value
    assert abs(a - b) < 1e-4


def test_strategy_names():
    assert isinstance(blp.strategy_from_name("grid", 5), blp.GridSearch)
    with pytest.raises(ValidationError):
        blp.strategy_from_name("bogus")
