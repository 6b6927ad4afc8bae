"""Brute-force master-equation solver on the full (N+1)-spin Hilbert space.

Spin 0 is the leftmost tensor factor.  Everything here is built from
Kronecker products of Pauli matrices and the textbook Lindblad form, and
shares nothing with the damping-basis engine beyond :class:`ModelParams`.
"""

from __future__ import annotations

from functools import reduce

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import expm_multiply

from .core import (
    GROUND,
    SM,
    SP,
    SX,
    SY,
    SZ,
    ModelParams,
    NumericalError,
    QubitState,
    ValidationError,
    _frozen,
)

ORACLE_CAP = 5
FULL_STATE_TOL = 1e-9
FULL_POSITIVITY_TOL = 1e-8
_DENSE_LIOUVILLE_MAX = 256


def _check_cap(n_spins: int, cap: int) -> None:
    if n_spins > cap:
        raise ValidationError(
            f"oracle is limited to n_spins <= {cap} (Hilbert dimension {2 ** (cap + 1)}), got {n_spins}"
        )


def site_operator(op, site: int, n_sites: int) -> sp.csr_matrix:
    """``op`` acting on ``site`` of an ``n_sites``-spin register."""
    factors = [sp.identity(2, format="csr", dtype=complex)] * n_sites
    factors[site] = sp.csr_matrix(op)
    return reduce(lambda a, b: sp.kron(a, b, format="csr"), factors)


def build_hamiltonian(params: ModelParams, cap: int = ORACLE_CAP) -> np.ndarray:
    _check_cap(params.n_spins, cap)
    n = params.n_spins + 1
    J, lam = params.j_coupling, params.anisotropy
    H = params.eps0 * site_operator(SZ, 0, n)
    sx0, sy0 = site_operator(SX, 0, n), site_operator(SY, 0, n)
    for j in range(1, n):
        H = H + params.eps * site_operator(SZ, j, n)
        # spin-1/2 exchange: s = sigma/2
        H = H + 0.25 * J * (
            (1 + lam) * (sx0 @ site_operator(SX, j, n))
            + (1 - lam) * (sy0 @ site_operator(SY, j, n))
        )
    H = H.toarray()
    if np.max(np.abs(H - H.conj().T)) > 1e-12:
        raise NumericalError("Hamiltonian is not Hermitian")
    return _frozen(H)


def excitation_number(n_spins: int) -> np.ndarray:
    n = n_spins + 1
    ops = [site_operator(0.5 * (SZ + np.eye(2)), j, n) for j in range(n)]
    return reduce(lambda a, b: a + b, ops).toarray()


def jump_operators(params: ModelParams, cap: int = ORACLE_CAP) -> list:
    """Collapse operators (with rates folded in) for every peripheral spin."""
    _check_cap(params.n_spins, cap)
    n = params.n_spins + 1
    ops = []
    for j in range(1, n):
        if params.gamma * (params.nbar + 1) > 0:
            ops.append(np.sqrt(params.gamma * (params.nbar + 1)) * site_operator(SM, j, n))
        if params.gamma * params.nbar > 0:
            ops.append(np.sqrt(params.gamma * params.nbar) * site_operator(SP, j, n))
    return ops


def liouvillian(params: ModelParams, cap: int = ORACLE_CAP) -> sp.csr_matrix:
    """Superoperator on row-major ``vec(rho)``: ``vec(A X B) = (A kron B^T) vec(X)``."""
    H = sp.csr_matrix(build_hamiltonian(params, cap))
    d = H.shape[0]
    eye = sp.identity(d, format="csr", dtype=complex)
    L = -1j * (sp.kron(H, eye) - sp.kron(eye, H.T))
    for c in jump_operators(params, cap):
        cdc = (c.conj().T @ c).tocsr()
        L = L + sp.kron(c, c.conj()) - 0.5 * (sp.kron(cdc, eye) + sp.kron(eye, cdc.T))
    return L.tocsr()


def master_rhs(params: ModelParams, cap: int = ORACLE_CAP):
    """Matrix-free right-hand side ``d rho/dt`` acting on flattened states."""
    H = build_hamiltonian(params, cap)
    d = H.shape[0]
    jumps = []
    for c in jump_operators(params, cap):
        c = c.toarray()
        jumps.append((c, c.conj().T, c.conj().T @ c))

    def rhs(_t, y):
        rho = y.reshape(d, d)
        out = -1j * (H @ rho - rho @ H)
        for c, cd, cdc in jumps:
            out += c @ rho @ cd - 0.5 * (cdc @ rho + rho @ cdc)
        return out.reshape(-1)

    return rhs


def product_state(central, n_spins: int) -> np.ndarray:
    """Central state times the all-ground periphery."""
    rho0 = central.rho if isinstance(central, QubitState) else np.asarray(central)
    return reduce(np.kron, [rho0] + [GROUND] * n_spins).astype(complex)


def check_dense_state(rho, tol: float = FULL_STATE_TOL, pos_tol: float = FULL_POSITIVITY_TOL) -> None:
    if abs(np.trace(rho) - 1) > tol:
        raise NumericalError(f"trace drifted to {np.trace(rho).real:.12f}")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise NumericalError("state lost Hermiticity")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -pos_tol:
        raise NumericalError("state lost positivity")


def evolve(
    params: ModelParams,
    rho0,
    times,
    method: str = "expm",
    rtol: float = 1e-11,
    atol: float = 1e-13,
    cap: int = ORACLE_CAP,
    check: bool = True,
) -> list:
    """Full star density matrices at each of ``times``.

    ``method='expm'`` exponentiates the Liouvillian between consecutive
    times; ``method='rk'`` integrates the matrix-free master equation with
    an embedded-error Runge-Kutta scheme (DOP853) at ``rtol``/``atol``.
    """
    _check_cap(params.n_spins, cap)
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValidationError("times must be a sorted sequence of nonnegative values")
    rho0 = np.asarray(rho0, dtype=complex)
    d = 2 ** (params.n_spins + 1)
    if rho0.shape != (d, d):
        raise ValidationError(f"initial state must be {d}x{d}")
    check_dense_state(rho0)

    if method == "expm":
        L = liouvillian(params, cap)
        out = []
        y, t_prev = rho0.reshape(-1), 0.0
        dense = L.shape[0] <= _DENSE_LIOUVILLE_MAX
        Ld = L.toarray() if dense else None
        cache = {}
        for t in times:
            dt = t - t_prev
            if dt > 0:
                if dense:
                    key = round(dt, 15)
                    if key not in cache:
                        cache[key] = scipy.linalg.expm(Ld * dt)
                    y = cache[key] @ y
                else:
                    y = expm_multiply(L * dt, y)
            t_prev = t
            out.append(y.reshape(d, d).copy())
    elif method == "rk":
        if times.size == 0:
            return []
        sol = solve_ivp(
            master_rhs(params, cap),
            (0.0, float(times[-1])),
            rho0.reshape(-1),
            method="DOP853",
            t_eval=times,
            rtol=rtol,
            atol=atol,
        )
        if not sol.success:
            raise NumericalError(f"integration failed: {sol.message}")
        out = [sol.y[:, k].reshape(d, d) for k in range(times.size)]
    else:
        raise ValidationError(f"unknown method {method!r}")

    if not all(np.all(np.isfinite(r)) for r in out):
        raise NumericalError("non-finite entries in evolved state")
    if check:
        for r in out:
            check_dense_state(r)
    return out


def reduced_central_state(full, tol: float = 1e-9) -> QubitState:
    full = np.asarray(full)
    d = full.shape[0]
    rho = np.einsum("iaja->ij", full.reshape(2, d // 2, 2, d // 2))
    rho = 0.5 * (rho + rho.conj().T)
    return QubitState(rho, tol=tol)


def evolve_central(params: ModelParams, central, times, **kwargs) -> list:
    """Reduced central-spin states for a product initial state."""
    full = evolve(params, product_state(central, params.n_spins), times, **kwargs)
    return [reduced_central_state(r) for r in full]


def central_bloch_map(params: ModelParams, times, cap: int = ORACLE_CAP):
    """Affine Bloch map ``r -> A(t) r + b(t)`` of the central spin.

    Propagates the identity and the three Pauli components of the central
    spin (periphery in its ground state) together, so one sweep over
    ``times`` characterises every initial state.
    """
    _check_cap(params.n_spins, cap)
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValidationError("times must be a sorted sequence of nonnegative values")
    n = params.n_spins
    d = 2 ** (n + 1)
    # Bloch frame (x, y, z) = (<sx>, -<sy>, -<sz>)
    ops = [0.5 * np.eye(2), 0.5 * SX, -0.5 * SY, -0.5 * SZ]
    Y = np.column_stack([product_state(op, n).reshape(-1) for op in ops])
    L = liouvillian(params, cap)
    dense = L.shape[0] <= _DENSE_LIOUVILLE_MAX
    Ld = L.toarray() if dense else None
    cache = {}
    A = np.empty((times.size, 3, 3))
    b = np.empty((times.size, 3))
    t_prev = 0.0
    for k, t in enumerate(times):
        dt = t - t_prev
        if dt > 0:
            if dense:
                key = round(dt, 15)
                if key not in cache:
                    cache[key] = scipy.linalg.expm(Ld * dt)
                Y = cache[key] @ Y
            else:
                Y = expm_multiply(L * dt, Y)
        t_prev = t
        cols = []
        for j in range(4):
            rho = Y[:, j].reshape(2, d // 2, 2, d // 2)
            r = np.einsum("iaja->ij", rho)
            cols.append(np.array([2 * r[0, 1].real, 2 * r[0, 1].imag, (r[1, 1] - r[0, 0]).real]))
        b[k] = cols[0]
        A[k] = np.column_stack(cols[1:])
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise NumericalError("non-finite entries in evolved state")
    return A, b
