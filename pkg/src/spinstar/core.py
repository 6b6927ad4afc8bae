"""Shared numeric and domain types for the spin-star simulator.

Conventions used everywhere in the package:

* Single-spin basis ordering is ``(|+>, |->)`` with ``sigma_z |+> = +|+>``;
  ``|+>`` is the excited level and ``sigma_minus |+> = |->``.
* Bloch angles follow ``cos(theta/2)|-> + exp(i phi) sin(theta/2)|+>``, so
  ``theta = 0`` is the *ground* state.  The Bloch vector reported by
  :func:`bloch_vector` is expressed in the matching right-handed frame
  ``(x, y, z) = (<sx>, -<sy>, -<sz>)``: its north pole is ``|->`` and
  ``(theta, phi)`` are its ordinary spherical angles.
* 2x2 complex matrices are plain ``numpy`` arrays of shape ``(2, 2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np

STATE_TOL = 1e-10

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
SP = np.array([[0, 1], [0, 0]], dtype=complex)  # |+><-|
SM = np.array([[0, 0], [1, 0]], dtype=complex)  # |-><+|

EXCITED = np.array([[1, 0], [0, 0]], dtype=complex)
GROUND = np.array([[0, 0], [0, 1]], dtype=complex)

for _m in (I2, SX, SY, SZ, SP, SM, EXCITED, GROUND):
    _m.flags.writeable = False


class ValidationError(ValueError):
    """Input outside the validity domain of an operation."""


class NumericalError(ArithmeticError):
    """A numerical result failed an accuracy or physicality check."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=complex, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class QubitState:
    """Density matrix of the central spin, validated on construction."""

    rho: np.ndarray
    tol: float = field(default=STATE_TOL, compare=False, repr=False)

    def __post_init__(self):
        rho = _frozen(self.rho)
        if rho.shape != (2, 2):
            raise ValidationError(f"qubit state must be 2x2, got {rho.shape}")
        if not np.all(np.isfinite(rho)):
            raise ValidationError("qubit state has non-finite entries")
        if np.max(np.abs(rho - rho.conj().T)) > self.tol:
            raise ValidationError("qubit state is not Hermitian")
        if abs(np.trace(rho) - 1.0) > self.tol:
            raise ValidationError(f"qubit state trace is {np.trace(rho).real:.3e}, not 1")
        if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -max(self.tol, 1e-10):
            raise ValidationError("qubit state is not positive semidefinite")
        object.__setattr__(self, "rho", rho)

    @property
    def purity(self) -> float:
        return float(np.real(np.trace(self.rho @ self.rho)))

    def bloch(self) -> np.ndarray:
        return bloch_vector(self.rho)


@dataclass(frozen=True)
class BlochAngles:
    """Polar angle ``theta`` in [0, pi] and azimuth ``phi`` in [0, 2 pi).

    Out-of-range input is folded back onto the sphere, so any real pair
    names a valid point.
    """

    theta: float
    phi: float = 0.0

    def __post_init__(self):
        theta = math.fmod(float(self.theta), 2 * math.pi)
        phi = float(self.phi)
        if theta < 0:
            theta += 2 * math.pi
        if theta > math.pi:
            theta = 2 * math.pi - theta
            phi += math.pi
        phi = math.fmod(phi, 2 * math.pi)
        if phi < 0:
            phi += 2 * math.pi
        if phi >= 2 * math.pi:  # fmod rounding
            phi = 0.0
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)

    def vector(self) -> np.ndarray:
        st = math.sin(self.theta)
        return np.array([st * math.cos(self.phi), st * math.sin(self.phi), math.cos(self.theta)])


@dataclass(frozen=True)
class Flat:
    """Memoryless local baths (Lindblad limit)."""

    name = "flat"


@dataclass(frozen=True)
class Lorentzian:
    """Lorentzian bath spectrum of spectral ``width``, centred ``offset`` from the spin line."""

    width: float
    offset: float = 0.0
    name = "lorentzian"

    def __post_init__(self):
        if not self.width > 0:
            raise ValidationError("Lorentzian width must be positive")


Spectrum = Union[Flat, Lorentzian]


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the star (hbar = 1).

    ``detuning`` is eps - eps0, the mismatch between peripheral and central
    splittings in the free term ``sum_j eps_j sigma^z_j``.  The exchange
    ``J sum_j [(1+l) s0x sjx + (1-l) s0y sjy]`` is written with spin-1/2
    operators ``s = sigma/2``, so one excitation hops between the centre
    and a given peripheral spin with amplitude J/2.

    ``central_splitting`` (eps0) only matters when ``anisotropy != 0``;
    in the isotropic model it generates a symmetry and shows up as a
    common precession of the central coherence at frequency 2 eps0.  With
    eps0 = 0 and anisotropy = +1, ``sigma^x_0`` is conserved, which is why
    the default is nonzero.
    """

    n_spins: int
    j_coupling: float = 1.0
    anisotropy: float = 0.0
    detuning: float = 0.0
    gamma: float = 0.0
    nbar: float = 0.0
    spectrum: Spectrum = field(default_factory=Flat)
    central_splitting: float = 1.0

    def __post_init__(self):
        if int(self.n_spins) != self.n_spins or self.n_spins < 1:
            raise ValidationError(f"n_spins must be a positive integer, got {self.n_spins!r}")
        object.__setattr__(self, "n_spins", int(self.n_spins))
        for name in ("j_coupling", "anisotropy", "detuning", "gamma", "nbar", "central_splitting"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValidationError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.gamma < 0:
            raise ValidationError("gamma must be nonnegative")
        if self.nbar < 0:
            raise ValidationError("nbar must be nonnegative")

    @property
    def eps0(self) -> float:
        return self.central_splitting

    @property
    def eps(self) -> float:
        return self.central_splitting + self.detuning

    def replace(self, **changes) -> "ModelParams":
        from dataclasses import replace

        return replace(self, **changes)

    def as_dict(self) -> dict:
        d = {
            "n_spins": self.n_spins,
            "j_coupling": self.j_coupling,
            "anisotropy": self.anisotropy,
            "detuning": self.detuning,
            "gamma": self.gamma,
            "nbar": self.nbar,
            "central_splitting": self.central_splitting,
            "spectrum": self.spectrum.name,
        }
        if isinstance(self.spectrum, Lorentzian):
            d["spectral_width"] = self.spectrum.width
            d["spectral_offset"] = self.spectrum.offset
        return d


class SigmaBasisElement(NamedTuple):
    tag: str
    matrix: np.ndarray
    eigenvalue: complex


class DampingBasis(NamedTuple):
    """Right eigenoperators of the single-spin dissipator and their duals."""

    elements: tuple
    duals: tuple
    gamma: float
    nbar: float

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([e.eigenvalue for e in self.elements])

    def coefficients(self, op) -> np.ndarray:
        """Expansion coefficients ``Tr[dual_k op]`` of a 2x2 operator."""
        return np.array([np.trace(d @ op) for d in self.duals])

    def expand(self, coeffs) -> np.ndarray:
        return sum(c * e.matrix for c, e in zip(coeffs, self.elements))

    def superop(self, fn) -> np.ndarray:
        """Matrix ``T[k, m] = Tr[dual_k fn(mu_m)]`` of a linear map on 2x2 operators."""
        T = np.empty((4, 4), dtype=complex)
        for m, e in enumerate(self.elements):
            T[:, m] = self.coefficients(fn(e.matrix))
        return T


def dissipator(rho, gamma: float, nbar: float) -> np.ndarray:
    """Thermal amplitude-damping generator acting on one spin."""
    rho = np.asarray(rho)
    pm = SP @ SM
    mp = SM @ SP
    out = gamma * (nbar + 1) * (SM @ rho @ SP - 0.5 * (pm @ rho + rho @ pm))
    out = out + gamma * nbar * (SP @ rho @ SM - 0.5 * (mp @ rho + rho @ mp))
    return out


def single_spin_damping_basis(gamma: float, nbar: float) -> DampingBasis:
    if gamma < 0 or nbar < 0:
        raise ValidationError("gamma and nbar must be nonnegative")
    mats = (
        0.5 * (I2 - SZ / (2 * nbar + 1)),
        0.5 * SZ,
        SP.copy(),
        SM.copy(),
    )
    rate = gamma * (2 * nbar + 1)
    eigs = (0.0, -rate, -rate / 2, -rate / 2)
    elements = tuple(
        SigmaBasisElement(tag, _frozen(m), complex(ev))
        for tag, m, ev in zip(("mu1", "mu2", "mu3", "mu4"), mats, eigs)
    )
    # Tr[A B] = vec(A^T) . vec(B); invert the pairing matrix for the duals
    U = np.column_stack([m.reshape(-1) for m in mats])
    Uinv = np.linalg.inv(U)
    duals = tuple(_frozen(Uinv[k].reshape(2, 2).T) for k in range(4))
    return DampingBasis(elements, duals, float(gamma), float(nbar))


def bloch_to_state(angles: BlochAngles) -> QubitState:
    if not isinstance(angles, BlochAngles):
        angles = BlochAngles(*angles)
    psi = np.array(
        [np.exp(1j * angles.phi) * math.sin(angles.theta / 2), math.cos(angles.theta / 2)]
    )
    return QubitState(np.outer(psi, psi.conj()))


def bloch_vector(rho) -> np.ndarray:
    """Bloch vector in the ground-up frame ``(<sx>, -<sy>, -<sz>)``."""
    rho = rho.rho if isinstance(rho, QubitState) else np.asarray(rho)
    coh = rho[0, 1]
    return np.array([2 * coh.real, 2 * coh.imag, (rho[1, 1] - rho[0, 0]).real])


def state_from_bloch(r) -> np.ndarray:
    x, y, z = r
    return 0.5 * np.array([[1 - z, x + 1j * y], [x - 1j * y, 1 + z]], dtype=complex)


def purity(rho) -> float:
    rho = rho.rho if isinstance(rho, QubitState) else np.asarray(rho)
    return float(np.real(np.vdot(rho.conj().T, rho)))


def trace_distance(a, b) -> float:
    """Half the trace norm of ``a - b``; accepts QubitState or arrays of any size."""
    a = a.rho if isinstance(a, QubitState) else np.asarray(a)
    b = b.rho if isinstance(b, QubitState) else np.asarray(b)
    diff = a - b
    diff = 0.5 * (diff + diff.conj().T)
    return float(0.5 * np.abs(np.linalg.eigvalsh(diff)).sum())
