"""Closed-form single-excitation amplitudes of the isotropic star.

At zero temperature and zero anisotropy the excitation of the central spin
couples only to the symmetric peripheral mode, so the excited amplitude
``g(t)`` (with ``g(0) = 1``) obeys

    g'' + (G + i w) g' + W^2 g = 0          (memoryless baths)

with ``G`` the bath-induced amplitude decay, ``w`` the frequency mismatch
and ``W`` the collective hopping.  With a Lorentzian bath the peripheral
amplitude instead sees the exponential memory kernel
``(gamma lambda_B / 2) exp(-(lambda_B + i w) tau)`` and ``g`` becomes a sum
of three exponentials set by the roots of a complex cubic.

Map from model parameters (see :func:`kernel_params`): ``G = gamma (nbar + 1/2)``,
``w = 2 * detuning`` and ``W = J sqrt(N) / 2``.
"""

from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp

from .core import Lorentzian, ModelParams, ValidationError

CONFLUENT_TOL = 1e-6


class HeuristicKernelWarning(UserWarning):
    """The flat kernel is exact only at nbar = 0."""


@dataclass(frozen=True)
class KernelParams:
    decay: float
    detuning: float
    coupling: float
    width: Optional[float] = None
    gamma: float = 0.0

    def __post_init__(self):
        if self.coupling < 0:
            raise ValidationError("collective coupling must be nonnegative")
        if self.width is not None and not self.width > 0:
            raise ValidationError("Lorentzian width must be positive")

    @property
    def lorentzian(self) -> bool:
        return self.width is not None


def check_isotropic(params: ModelParams, what: str = "closed-form kernel") -> None:
    if params.anisotropy != 0:
        raise ValidationError(f"{what} requires anisotropy = 0, got {params.anisotropy}")


def kernel_params(params: ModelParams) -> KernelParams:
    check_isotropic(params)
    coupling = 0.5 * params.j_coupling * math.sqrt(params.n_spins)
    if isinstance(params.spectrum, Lorentzian):
        if params.nbar != 0:
            raise ValidationError("Lorentzian kernel is solved at zero temperature only")
        if params.spectrum.offset != 0:
            raise ValidationError("Lorentzian kernel requires zero bath offset")
        return KernelParams(
            decay=0.5 * params.gamma,
            detuning=2 * params.detuning,
            coupling=coupling,
            width=params.spectrum.width,
            gamma=params.gamma,
        )
    if params.nbar > 0:
        warnings.warn(
            "flat amplitude kernel at nbar > 0 is a heuristic (single-excitation argument needs T = 0)",
            HeuristicKernelWarning,
            stacklevel=2,
        )
    return KernelParams(
        decay=params.gamma * (params.nbar + 0.5),
        detuning=2 * params.detuning,
        coupling=coupling,
        gamma=params.gamma,
    )


def frame_phase(params: ModelParams, t):
    """Precession of the central coherence caused by the central splitting."""
    return np.exp(-2j * params.eps0 * np.asarray(t, dtype=float))


def _shc(x):
    """sinh(x)/x, accurate near zero."""
    x = np.asarray(x, dtype=complex)
    small = np.abs(x) < 1e-3
    safe = np.where(small, 1.0, x)
    x2 = x * x
    return np.where(small, 1 + x2 / 6 + x2 * x2 / 120, np.sinh(safe) / safe)


def amplitude_flat(kp: KernelParams, t):
    """Excited-state amplitude for memoryless baths; vectorised over ``t``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValidationError("t must be nonnegative")
    a = kp.decay + 1j * kp.detuning
    z = cmath.sqrt(a * a / 4 - kp.coupling**2)
    if z.real < 0:
        z = -z
    zt = z * t
    near = np.abs(zt) <= 1.0
    # series-safe form near z t = 0
    g_near = np.exp(-a * t / 2) * (np.cosh(zt) + 0.5 * a * t * _shc(zt))
    sp, sm = -a / 2 + z, -a / 2 - z
    with np.errstate(over="ignore", invalid="ignore"):
        denom = sp - sm if sp != sm else 1.0
        g_far = (sp * np.exp(sm * t) - sm * np.exp(sp * t)) / denom
    out = np.where(near, g_near, g_far)
    return out if out.ndim else complex(out)


class CubicRoots(NamedTuple):
    roots: np.ndarray
    degenerate: bool


def lorentzian_cubic(kp: KernelParams) -> np.ndarray:
    """Monic coefficients ``[1, c2, c1, c0]`` of the Lorentzian characteristic cubic."""
    lam, w, W2, g = kp.width, kp.detuning, kp.coupling**2, kp.gamma
    return np.array(
        [
            1.0,
            lam + 2j * w,
            W2 - w * w + 1j * w * lam + 0.5 * g * lam,
            W2 * (lam + 1j * w),
        ],
        dtype=complex,
    )


def cubic_roots(coeffs, confluent_tol: float = CONFLUENT_TOL) -> CubicRoots:
    """Roots of a complex cubic via companion-matrix eigenvalues, Newton-polished."""
    c = np.asarray(coeffs, dtype=complex)
    if c.shape != (4,) or c[0] == 0:
        raise ValidationError("need four coefficients with nonzero leading term")
    c = c / c[0]
    companion = np.array([[-c[1], -c[2], -c[3]], [1, 0, 0], [0, 1, 0]], dtype=complex)
    roots = scipy.linalg.eigvals(companion)
    dp = np.polyder(c)
    for _ in range(3):
        d = np.polyval(dp, roots)
        ok = np.abs(d) > 1e-300
        roots = np.where(ok, roots - np.polyval(c, roots) / np.where(ok, d, 1), roots)
    roots = roots[np.lexsort((roots.imag, roots.real))]
    scale = max(1.0, float(np.max(np.abs(roots))))
    gaps = [abs(roots[i] - roots[j]) for i in range(3) for j in range(i + 1, 3)]
    return CubicRoots(roots, min(gaps) < confluent_tol * scale)


def cardano_roots(coeffs) -> np.ndarray:
    """Roots of a complex cubic by Cardano's formula (cross-check only)."""
    a, b, c, d = (complex(x) for x in coeffs)
    b, c, d = b / a, c / a, d / a
    p = c - b * b / 3
    q = 2 * b**3 / 27 - b * c / 3 + d
    disc = cmath.sqrt(q * q / 4 + p**3 / 27)
    u3 = -q / 2 + disc
    if abs(u3) < abs(-q / 2 - disc):
        u3 = -q / 2 - disc
    omega = complex(-0.5, math.sqrt(3) / 2)
    if abs(u3) == 0:
        return np.full(3, -b / 3, dtype=complex)
    u = u3 ** (1 / 3)
    out = []
    for k in range(3):
        uk = u * omega**k
        out.append(uk - p / (3 * uk) - b / 3)
    return np.array(out)


def _lorentzian_numerator(kp: KernelParams, s):
    delta = s + 1j * kp.detuning
    return delta * delta + delta * kp.width + 0.5 * kp.gamma * kp.width


def amplitude_lorentzian(kp: KernelParams, t, confluent_tol: float = CONFLUENT_TOL):
    """Excited-state amplitude for Lorentzian baths; vectorised over ``t``.

    Partial fractions over the three roots, or a matrix-function form of
    the same divided difference when two roots nearly coincide.
    """
    if not kp.lorentzian:
        raise ValidationError("kernel parameters carry no Lorentzian width")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValidationError("t must be nonnegative")
    roots, degenerate = cubic_roots(lorentzian_cubic(kp), confluent_tol)
    a1, a2, a3 = roots
    if not degenerate:
        out = 0
        for i, (ai, aj, ak) in enumerate(((a1, a2, a3), (a2, a1, a3), (a3, a1, a2))):
            out = out + _lorentzian_numerator(kp, ai) * np.exp(ai * t) / ((ai - aj) * (ai - ak))
        return out if np.ndim(out) else complex(out)
    # Opitz: the divided difference of N(s) e^{st} is a corner entry of a matrix function
    T = np.array([[a1, 1, 0], [0, a2, 1], [0, 0, a3]], dtype=complex)
    NT = T @ T + (2j * kp.detuning + kp.width) * T + (
        (1j * kp.detuning) ** 2 + 1j * kp.detuning * kp.width + 0.5 * kp.gamma * kp.width
    ) * np.eye(3)
    flat = np.atleast_1d(t)
    vals = np.array([(NT @ scipy.linalg.expm(tt * T))[0, 2] for tt in flat])
    return vals.reshape(t.shape) if t.ndim else complex(vals[0])


def amplitude(params: ModelParams, t):
    """Amplitude ``g(t)`` for the spectrum named in ``params``."""
    kp = kernel_params(params)
    return amplitude_lorentzian(kp, t) if kp.lorentzian else amplitude_flat(kp, t)


def closed_form_trace_distance(pair, amplitude) -> float:
    """Trace distance of two evolved pure states with opposite azimuths.

    ``pair`` holds two :class:`BlochAngles`; only the polar angles enter
    because the azimuths are taken to differ by pi.
    """
    g = abs(amplitude)
    if g > 1 + 1e-9:
        raise ValidationError(f"|amplitude| = {g} exceeds 1")
    t1, t2 = pair[0].theta, pair[1].theta
    return 0.5 * g * math.sqrt(g * g * (math.cos(t1) - math.cos(t2)) ** 2 + (math.sin(t1) + math.sin(t2)) ** 2)


def scaling_map(params: ModelParams) -> ModelParams:
    """Single-spin star with ``J -> J sqrt(N)``, equivalent at T = 0 and isotropic coupling."""
    if params.anisotropy != 0 or params.nbar != 0:
        raise ValidationError("scaling map holds only for anisotropy = 0 and nbar = 0")
    return params.replace(n_spins=1, j_coupling=params.j_coupling * math.sqrt(params.n_spins))


def memory_ode_amplitude(kp: KernelParams, times, rtol: float = 1e-12, atol: float = 1e-14):
    """Reference solution of the amplitude equations with an exponential memory kernel.

    The memory integral ``y(t) = int_0^t k(t - s) c_B(s) ds`` of the
    exponential kernel obeys ``y' = (gamma lambda_B / 2) c_B - (lambda_B + i w) y``,
    which turns the integro-differential system into three linear ODEs
    integrated here with an adaptive Runge-Kutta scheme.
    """
    if not kp.lorentzian:
        raise ValidationError("memory ODE needs a Lorentzian width")
    W, w, lam, g = kp.coupling, kp.detuning, kp.width, kp.gamma

    def rhs(_t, y):
        c1, cb, m = y
        return [-1j * W * cb, -1j * W * c1 - 1j * w * cb - m, 0.5 * g * lam * cb - (lam + 1j * w) * m]

    times = np.asarray(times, dtype=float)
    sol = solve_ivp(
        rhs, (0.0, float(times[-1])), np.array([1, 0, 0], dtype=complex),
        method="DOP853", t_eval=times, rtol=rtol, atol=atol,
    )
    if not sol.success:
        raise ArithmeticError(sol.message)
    return sol.y[0]


def volterra_amplitude(kernel, coupling: float, detuning: float, t_max: float, dt: float):
    """Amplitude equations with an arbitrary memory kernel ``kernel(tau)``.

    Implicit trapezoidal rule for both the derivative and the convolution,
    second-order in ``dt`` and O(n^2) in the number of steps.  ``kernel``
    must already include the ``exp(-i w tau)`` frame factor.
    """
    n = int(round(t_max / dt))
    times = dt * np.arange(n + 1)
    k = np.asarray(kernel(times), dtype=complex)
    c1 = np.zeros(n + 1, dtype=complex)
    cb = np.zeros(n + 1, dtype=complex)
    c1[0] = 1.0
    h = dt
    for i in range(1, n + 1):
        # memory integral at t_i = h * (sum_{j<i} w_j k_{i-j} cb_j) + h/2 k_0 cb_i
        mem_known = h * (np.dot(k[i:0:-1], cb[:i]) - 0.5 * k[i] * cb[0])
        mem_prev = 0.0 if i == 1 else h * (np.dot(k[i - 1:0:-1], cb[: i - 1]) - 0.5 * k[i - 1] * cb[0]) + 0.5 * h * k[0] * cb[i - 1]
        f1_prev = -1j * coupling * cb[i - 1]
        fb_prev = -1j * coupling * c1[i - 1] - 1j * detuning * cb[i - 1] - mem_prev
        # unknowns x = (c1_i, cb_i); linear 2x2 system
        A = np.array(
            [
                [1, 0.5 * h * 1j * coupling],
                [0.5 * h * 1j * coupling, 1 + 0.5 * h * (1j * detuning + 0.5 * h * k[0])],
            ],
            dtype=complex,
        )
        rhs = np.array(
            [c1[i - 1] + 0.5 * h * f1_prev, cb[i - 1] + 0.5 * h * (fb_prev - mem_known)],
            dtype=complex,
        )
        c1[i], cb[i] = np.linalg.solve(A, rhs)
    return times, c1
