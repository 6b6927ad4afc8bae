"""Exact central-spin dynamics in a permutation-reduced damping basis.

The star state is expanded as ``sum c[n, c] mu^n_0 (x) S_c`` where ``S_c`` is
the sum of all distinct orderings of a peripheral product carrying ``n1``
copies of ``mu1``, ``n2`` of ``mu2`` and so on.  Because the Liouvillian is
invariant under permutations of the peripheral spins, it maps this span onto
itself and the 4^N peripheral operators collapse to C(N+3, 3) classes.

A one-site map ``T`` applied to every peripheral spin sends
``S_c -> sum_{k,m} T[k,m] w S_{c - e_m + e_k}`` with ``w = n_m`` on the
diagonal and ``w = n_k + 1`` (the target-class occupation) off it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import reduce
from itertools import product
from typing import NamedTuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .core import (
    GROUND,
    SX,
    SY,
    SZ,
    Flat,
    ModelParams,
    NumericalError,
    QubitState,
    ValidationError,
    single_spin_damping_basis,
)

GENERATOR_SCHEMA = "spinstar.generator/1"
POSITIVITY_TOL = 1e-8


class DampingClass(NamedTuple):
    n1: int
    n2: int
    n3: int
    n4: int

    @property
    def n_spins(self) -> int:
        return self.n1 + self.n2 + self.n3 + self.n4

    @property
    def multiplicity(self) -> int:
        return math.factorial(self.n_spins) // math.prod(math.factorial(n) for n in self)


def enumerate_classes(n_spins: int) -> list:
    """All occupation patterns of N spins over the 4 eigenoperators.

    Ordered lexicographically, largest first, so index 0 is the all-``mu1``
    class that carries the trace.
    """
    if n_spins < 1:
        raise ValidationError("n_spins must be >= 1")
    out = [
        DampingClass(a, b, c, n_spins - a - b - c)
        for a in range(n_spins, -1, -1)
        for b in range(n_spins - a, -1, -1)
        for c in range(n_spins - a - b, -1, -1)
    ]
    return out


def n_classes(n_spins: int) -> int:
    return math.comb(n_spins + 3, 3)


@dataclass(frozen=True)
class GeneratorMatrix:
    """Generator of ``dc/dt = M c`` over the (central index, class) basis.

    Index ``4 * class_index + n`` holds the coefficient of ``mu^{n+1}_0``.
    """

    matrix: sp.csr_matrix
    classes: tuple
    params: ModelParams

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def to_json(self) -> str:
        M = self.dense()
        return json.dumps(
            {
                "schema": GENERATOR_SCHEMA,
                "n_spins": self.params.n_spins,
                "dim": self.dim,
                "params": self.params.as_dict(),
                "classes": [list(c) for c in self.classes],
                "real": M.real.ravel().tolist(),
                "imag": M.imag.ravel().tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "GeneratorMatrix":
        from .core import Lorentzian

        d = json.loads(text)
        if d.get("schema") != GENERATOR_SCHEMA:
            raise ValidationError(f"unsupported generator schema {d.get('schema')!r}")
        pd = dict(d["params"])
        name = pd.pop("spectrum")
        spectrum = Flat() if name == "flat" else Lorentzian(pd.pop("spectral_width"), pd.pop("spectral_offset"))
        params = ModelParams(spectrum=spectrum, **pd)
        n = d["dim"]
        M = (np.array(d["real"]) + 1j * np.array(d["imag"])).reshape(n, n)
        return cls(sp.csr_matrix(M), tuple(DampingClass(*c) for c in d["classes"]), params)


@dataclass(frozen=True)
class CoefficientVector:
    values: np.ndarray
    classes: tuple

    def central(self) -> np.ndarray:
        """Coefficients of ``mu^n_0`` on the all-``mu1`` class."""
        return self.values[:4]


def _basis(params: ModelParams):
    return single_spin_damping_basis(params.gamma, params.nbar)


def _transition_table(classes):
    """(source index, target index, m, k, weight) for every one-site move."""
    index = {c: i for i, c in enumerate(classes)}
    rows = []
    for i, c in enumerate(classes):
        for m in range(4):
            if c[m] == 0:
                continue
            for k in range(4):
                if k == m:
                    rows.append((i, i, m, k, c[m]))
                else:
                    t = list(c)
                    t[m] -= 1
                    t[k] += 1
                    rows.append((i, index[DampingClass(*t)], m, k, t[k]))
    return np.array(rows, dtype=np.int64)


def build_generator(params: ModelParams) -> GeneratorMatrix:
    if not isinstance(params.spectrum, Flat):
        raise ValidationError("the damping-basis engine handles memoryless (flat) baths only")
    basis = _basis(params)
    classes = tuple(enumerate_classes(params.n_spins))
    nc = len(classes)
    J, lam = params.j_coupling, params.anisotropy

    # exchange pairs (site-0 operator, peripheral operator); s = sigma/2
    pairs = [(0.25 * J * (1 + lam) * SX, SX), (0.25 * J * (1 - lam) * SY, SY)]

    central_free = basis.superop(lambda x: -1j * params.eps0 * (SZ @ x - x @ SZ))
    one_site = basis.superop(lambda x: -1j * params.eps * (SZ @ x - x @ SZ))
    one_site = one_site + np.diag(basis.eigenvalues)

    blocks = np.zeros((4, 4, 4, 4), dtype=complex)  # [k, m] -> 4x4 central block
    for A, B in pairs:
        LA = basis.superop(lambda x: A @ x)
        RA = basis.superop(lambda x: x @ A)
        LB = basis.superop(lambda x: B @ x)
        RB = basis.superop(lambda x: x @ B)
        blocks += -1j * (LB[:, :, None, None] * LA[None, None] - RB[:, :, None, None] * RA[None, None])
    blocks += one_site[:, :, None, None] * np.eye(4)[None, None]

    table = _transition_table(classes)
    src, dst, m, k, w = table.T
    vals = w[:, None, None] * blocks[k, m]  # (T, 4, 4) [r, n]
    r_idx, n_idx = np.meshgrid(np.arange(4), np.arange(4), indexing="ij")
    rows = (4 * dst[:, None, None] + r_idx[None]).ravel()
    cols = (4 * src[:, None, None] + n_idx[None]).ravel()
    data = vals.ravel()

    diag_rows = (4 * np.arange(nc)[:, None, None] + r_idx[None]).ravel()
    diag_cols = (4 * np.arange(nc)[:, None, None] + n_idx[None]).ravel()
    diag_data = np.broadcast_to(central_free, (nc, 4, 4)).ravel()

    rows = np.concatenate([rows, diag_rows])
    cols = np.concatenate([cols, diag_cols])
    data = np.concatenate([data, diag_data])
    keep = data != 0
    M = sp.coo_matrix((data[keep], (rows[keep], cols[keep])), shape=(4 * nc, 4 * nc)).tocsr()
    M.sum_duplicates()
    return GeneratorMatrix(M, classes, params)


def initial_coefficients(central, n_spins: int, gamma: float, nbar: float) -> CoefficientVector:
    """Coefficients of ``rho_0 (x) |-><-|^N``.

    ``|-><-| = mu1 - b mu2`` with ``b = 2 nbar / (2 nbar + 1)``, so the
    periphery populates only the classes ``(N-k, k, 0, 0)`` with ``(-b)^k``.
    """
    rho0 = central.rho if isinstance(central, QubitState) else np.asarray(central)
    basis = single_spin_damping_basis(gamma, nbar)
    a = basis.coefficients(rho0)
    classes = tuple(enumerate_classes(n_spins))
    g = basis.coefficients(GROUND)
    vals = np.zeros(4 * len(classes), dtype=complex)
    for i, c in enumerate(classes):
        if c.n3 or c.n4:
            continue
        vals[4 * i : 4 * i + 4] = a * g[0] ** c.n1 * g[1] ** c.n2
    return CoefficientVector(vals, classes)


def propagate(gen: GeneratorMatrix, c0, times) -> list:
    """``c(t) = exp(M t) c0`` at each of the sorted ``times``."""
    values = c0.values if isinstance(c0, CoefficientVector) else np.asarray(c0, dtype=complex)
    if values.shape != (gen.dim,):
        raise ValidationError(f"coefficient vector has length {values.shape}, generator has {gen.dim}")
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValidationError("times must be sorted and nonnegative")
    out, y, t_prev = [], values.copy(), 0.0
    for t in times:
        if t > t_prev:
            y = expm_multiply(gen.matrix * (t - t_prev), y)
            t_prev = t
        if not np.all(np.isfinite(y)):
            raise NumericalError(f"non-finite coefficients at t={t}")
        out.append(CoefficientVector(y.copy(), gen.classes))
    return out


def reduced_state(c, gamma: float, nbar: float, tol: float = POSITIVITY_TOL) -> QubitState:
    """Central-spin state from the all-``mu1`` class coefficients."""
    a = c.central() if isinstance(c, CoefficientVector) else np.asarray(c)[:4]
    basis = single_spin_damping_basis(gamma, nbar)
    rho = basis.expand(a)
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real if abs(np.trace(rho) - 1) < tol else rho
    if np.linalg.eigvalsh(rho).min() < -tol:
        raise NumericalError("reduced state lost positivity; propagation is inaccurate")
    return QubitState(rho, tol=max(tol, 1e-10))


def reconstruct_full(c, gamma: float, nbar: float) -> np.ndarray:
    """Full star operator from class coefficients (small N only)."""
    values = c.values
    classes = c.classes
    basis = single_spin_damping_basis(gamma, nbar)
    mus = [e.matrix for e in basis.elements]
    n = classes[0].n_spins
    if n > 6:
        raise ValidationError("full reconstruction is limited to n_spins <= 6")
    d = 2 ** (n + 1)
    index = {cl: i for i, cl in enumerate(classes)}
    out = np.zeros((d, d), dtype=complex)
    for word in product(range(4), repeat=n):
        counts = DampingClass(*(word.count(k) for k in range(4)))
        i = index[counts]
        periph = reduce(np.kron, [mus[k] for k in word])
        for nc in range(4):
            coef = values[4 * i + nc]
            if coef != 0:
                out += coef * np.kron(mus[nc], periph)
    return out


class ReducedMap:
    """Linear map from the central initial state to the central state at time t.

    Built by propagating the four central basis operators with the periphery
    fixed in its ground state.  ``phi(t)[r, n]`` maps damping-basis
    coefficients ``a_n`` of ``rho_0(0)`` to those of ``rho_0(t)``.
    Evaluation uses an eigendecomposition of the generator, checked against
    Krylov exponentiation at two reference times; when the check fails the
    map falls back to exact propagation.
    """

    def __init__(self, params: ModelParams, check_tol: float = 1e-10, t_check: float = 20.0):
        self.params = params
        self.gen = build_generator(params)
        self.basis = _basis(params)
        cols = []
        for n in range(4):
            e = np.zeros((2, 2), dtype=complex)
            e += self.basis.elements[n].matrix
            cols.append(initial_coefficients(e, params.n_spins, params.gamma, params.nbar).values)
        self._init = np.column_stack(cols)
        self._eig = None
        M = self.gen.dense()
        try:
            w, V = scipy.linalg.eig(M)
            left = np.linalg.solve(V, self._init)
            readout = V[:4]
            self._eig = (w, readout, left)
            scale = 1.0 / max(params.j_coupling, 1e-12)
            for t in (0.37 * t_check * scale, t_check * scale):
                exact = expm_multiply(self.gen.matrix * t, self._init)[:4]
                if not np.allclose(self._phi_eig(np.array([t]))[0], exact, atol=check_tol, rtol=0):
                    self._eig = None
                    break
        except (np.linalg.LinAlgError, ValueError):
            self._eig = None

    @property
    def uses_eigendecomposition(self) -> bool:
        return self._eig is not None

    def _phi_eig(self, times):
        w, readout, left = self._eig
        ex = np.exp(np.outer(times, w))  # (T, dim)
        return np.einsum("rk,tk,kn->trn", readout, ex, left)

    def phi(self, times) -> np.ndarray:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if self._eig is not None:
            return self._phi_eig(times)
        order = np.argsort(times)
        out = np.empty((times.size, 4, 4), dtype=complex)
        y, t_prev = self._init.copy(), 0.0
        for i in order:
            t = times[i]
            if t > t_prev:
                y = expm_multiply(self.gen.matrix * (t - t_prev), y)
                t_prev = t
            out[i] = y[:4]
        return out

    def states(self, central, times) -> list:
        rho0 = central.rho if isinstance(central, QubitState) else np.asarray(central)
        a = self.basis.coefficients(rho0)
        return [
            reduced_state(p @ a, self.params.gamma, self.params.nbar) for p in self.phi(times)
        ]


def evolve_central(params: ModelParams, central, times) -> list:
    """Central-spin states at ``times`` for a ground-state periphery."""
    gen = build_generator(params)
    c0 = initial_coefficients(central, params.n_spins, params.gamma, params.nbar)
    return [reduced_state(c, params.gamma, params.nbar) for c in propagate(gen, c0, times)]
