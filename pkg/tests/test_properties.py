import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from spinstar import blp, engine, kernels, oracle
from spinstar.core import (
    BlochAngles,
    ModelParams,
    QubitState,
    bloch_to_state,
    bloch_vector,
    dissipator,
    single_spin_damping_basis,
    state_from_bloch,
    trace_distance,
)

angle = st.floats(0, math.pi)
azimuth = st.floats(0, 2 * math.pi)
rate = st.floats(0.01, 5.0)
occupation = st.floats(0.0, 5.0)


@given(rate, occupation)
def test_damping_basis_is_eigenbasis(gamma, nbar):
    basis = single_spin_damping_basis(gamma, nbar)
    for e in basis.elements:
        assert np.allclose(dissipator(e.matrix, gamma, nbar), e.eigenvalue * e.matrix, atol=1e-12)
    gram = np.array([[np.trace(d @ e.matrix) for e in basis.elements] for d in basis.duals])
    assert np.allclose(gram, np.eye(4), atol=1e-12)


@given(angle, azimuth)
def test_pure_states_on_sphere(theta, phi):
    s = bloch_to_state(BlochAngles(theta, phi))
    assert abs(np.linalg.norm(bloch_vector(s)) - 1) < 1e-12
    assert abs(s.purity - 1) < 1e-12


@given(angle, azimuth, angle, azimuth)
def test_trace_distance_symmetric_and_bounded(t1, p1, t2, p2):
    a, b = bloch_to_state(BlochAngles(t1, p1)), bloch_to_state(BlochAngles(t2, p2))
    d = trace_distance(a, b)
    assert -1e-15 <= d <= 1 + 1e-12
    assert abs(d - trace_distance(b, a)) < 1e-14
    assert abs(d - 0.5 * np.linalg.norm(bloch_vector(a) - bloch_vector(b))) < 1e-12


@given(st.floats(0, 5), st.floats(-5, 5), st.floats(0, 5), st.lists(st.floats(0, 50), min_size=1, max_size=20))
def test_flat_amplitude_contractive(decay, detuning, coupling, ts):
    g = kernels.amplitude_flat(kernels.KernelParams(decay, detuning, coupling), np.array(ts))
    assert np.all(np.isfinite(g)) and np.all(np.abs(g) <= 1 + 1e-9)


@given(angle, angle, azimuth, st.floats(0, 1), azimuth)
def test_closed_form_matches_amplitude_map(t1, t2, phi, mod, arg):
    g = mod * complex(math.cos(arg), math.sin(arg))
    pair = (BlochAngles(t1, phi), BlochAngles(t2, phi + math.pi))
    A = np.array([[g.real, -g.imag, 0], [g.imag, g.real, 0], [0, 0, mod**2]])
    b = np.array([0, 0, 1 - mod**2])
    rho = [state_from_bloch(A @ p.vector() + b) for p in pair]
    for r in rho:
        QubitState(r)
    assert abs(kernels.closed_form_trace_distance(pair, g) - trace_distance(*rho)) < 1e-10


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 2), st.floats(-1, 1), st.floats(-2, 2), st.floats(0, 2), st.floats(0, 2), angle, azimuth)
def test_engine_matches_oracle(n, lam, delta, gamma, nbar, theta, phi):
    p = ModelParams(n, anisotropy=lam, detuning=delta, gamma=gamma, nbar=nbar)
    t = np.linspace(0, 4, 9)
    rho0 = bloch_to_state(BlochAngles(theta, phi))
    ref = oracle.evolve_central(p, rho0, t)
    got = engine.ReducedMap(p).states(rho0, t)
    assert max(trace_distance(a, b) for a, b in zip(ref, got)) < 1e-8


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(0.05, 1), st.floats(0.2, 6), st.floats(0, 6)), min_size=1, max_size=4),
       st.floats(0.0, 0.5))
def test_partition_and_flow_invariants(modes, decay):
    def f(t):
        t = np.asarray(t, dtype=float)
        s = sum(a * np.cos(w * t + ph) for a, w, ph in modes)
        return np.abs(s) / sum(a for a, _, _ in modes) * np.exp(-decay * t)

    t = np.linspace(0, 10, 1001)
    series = blp.TraceDistanceSeries(t, f(t), blp.EQUATORIAL, blp.Provenance.FLAT_KERNEL,
                                     evaluator=lambda s: float(f(s)))
    part = blp.partition_monotonicity(series)
    ivs = part.intervals
    assert ivs[0].start == 0 and ivs[-1].end == 10
    assert all(a.end == b.start for a, b in zip(ivs, ivs[1:]))
    assert all(a.rising != b.rising for a, b in zip(ivs, ivs[1:]))
    fl = blp.nm_flows(part)
    d = series.values
    assert np.abs(d - d[0] - fl.inflow + fl.outflow).max() < 1e-12
    assert abs(fl.inflow[-1] - part.total_rise) < 1e-12
    assert part.total_rise >= np.maximum(np.diff(d), 0).sum() - 1e-9
