"""Time evolution of the ground nuclear-spin manifold.

Closed-form single-beam Raman unitary, Lindblad propagation with
photon-scattering, dephasing and Zeeman terms, plus fidelity and
magnetization observables.

Density matrices are vectorized column-stacked (Fortran order), so that
``vec(A X B) = (B^T kron A) vec(X)``.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
from scipy import constants as sc
from scipy.integrate import solve_ivp

from .atom import LaserParams, LevelScheme, dipole_operator, polarization_vector, rabi_scale
from .wigner import HalfInt, as_halfint, m_values, small_d_matrix

__all__ = [
    "Geometry",
    "FieldConfig",
    "IntegrationError",
    "ground_state",
    "stretched_state",
    "cat_state",
    "raman_unitary",
    "zeeman_hamiltonian",
    "rotated_hamiltonian",
    "scattering_collapse",
    "dephasing_collapse",
    "lindblad_superoperator",
    "LindbladPropagator",
    "evolve",
    "state_fidelity",
    "magnetization",
    "populations",
    "trajectory",
    "write_trajectory_csv",
    "validate_density_matrix",
]


class IntegrationError(RuntimeError):
    """Adaptive integration failed; ``t_reached`` is the last accepted time."""

    def __init__(self, message: str, t_reached: float):
        super().__init__(f"{message} (reached t={t_reached:.6g} s)")
        self.t_reached = t_reached


class Geometry(enum.Enum):
    ORTHOGONAL = "orthogonal_to_beam"
    PARALLEL = "parallel_to_beam"


@dataclass(frozen=True)
class FieldConfig:
    """Bias magnetic field (tesla) and its orientation relative to the beam."""

    B: float = 0.0
    geometry: Geometry = Geometry.ORTHOGONAL

    def __post_init__(self):
        if not self.B >= 0:
            raise ValueError("B must be non-negative")


def ground_state(dim: int, k: int = 0) -> np.ndarray:
    """Pure-state density matrix ``|k><k|`` (k = 0 is m = -F)."""
    rho = np.zeros((dim, dim), dtype=complex)
    rho[k, k] = 1.0
    return rho


def stretched_state(dim: int, upper: bool = False) -> np.ndarray:
    """State vector of ``|-F>`` (or ``|+F>`` if ``upper``)."""
    v = np.zeros(dim, dtype=complex)
    v[-1 if upper else 0] = 1.0
    return v


def cat_state(dim: int, phase: complex = 1j, level: int = 0) -> np.ndarray:
    """``(|-F+level> + phase |F-level>) / sqrt(2)`` as a state vector."""
    v = np.zeros(dim, dtype=complex)
    v[level] = 1 / math.sqrt(2)
    v[dim - 1 - level] = phase / math.sqrt(2)
    return v


def raman_unitary(spectrum: Sequence[float], beta: float, t: float) -> np.ndarray:
    """Single-beam Raman propagator ``d(beta) exp(-i t diag(delta)) d(beta)^dagger``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    delta = np.asarray(spectrum, dtype=float)
    F = HalfInt(len(delta) - 1)
    d = small_d_matrix(F, beta)
    return (d * np.exp(-1j * t * delta)[None, :]) @ d.T


def zeeman_hamiltonian(scheme: LevelScheme, B: float) -> np.ndarray:
    """``mu_B g_F B sum_m m |m><m|`` in rad/s."""
    m = m_values(scheme.F_ground)
    return np.diag(scheme.g_factor_muB * B * m / sc.hbar).astype(complex)


def rotated_hamiltonian(spectrum: Sequence[float], field: FieldConfig = FieldConfig(),
                        scheme: Optional[LevelScheme] = None, beta: float = math.pi / 2) -> np.ndarray:
    """Lab-frame Hamiltonian (rad/s) of a lightshift spectrum plus the Zeeman term.

    For the orthogonal geometry the diagonal lightshift is rotated by
    ``d(beta)``; for the parallel geometry it stays diagonal in the field
    frame and the Zeeman term commutes with it.
    """
    delta = np.asarray(spectrum, dtype=float)
    F = HalfInt(len(delta) - 1)
    if field.geometry is Geometry.PARALLEL:
        H = np.diag(delta).astype(complex)
    else:
        d = small_d_matrix(F, beta)
        H = ((d * delta[None, :]) @ d.T).astype(complex)
    if field.B > 0:
        if scheme is None:
            raise ValueError("a level scheme is needed for the Zeeman term")
        H = H + zeeman_hamiltonian(scheme, field.B)
    return 0.5 * (H + H.conj().T)


def scattering_collapse(laser: LaserParams, scheme: LevelScheme, beta: float = math.pi / 2) -> list[np.ndarray]:
    """Photon-scattering jump operators ``C_q`` (q = -1, 0, +1), units sqrt(1/s).

    Absorption follows the laser polarization, emission is resolved by
    polarization q, and excited branches add coherently with complex
    denominators ``Delta_L - Delta_HFS(F') + i Gamma / 2``:

        C_q = sqrt(Gamma) sum_F' (Omega/2) / (2 pi (Delta_L - Delta_F') + i Gamma/2) D^(q)_F' A_F'^dagger

    where ``A_F' = sum_q' e_q' D^(q')_F'`` and ``Omega`` is the Rabi scale.
    Operators are built in the laser frame and rotated by ``d(beta)``.
    """
    n = scheme.dim
    om = rabi_scale(laser, scheme)
    if om == 0:
        return [np.zeros((n, n), dtype=complex) for _ in range(3)]
    e = polarization_vector(laser.polarization)
    eq = {+1: e[0], -1: e[1], 0: e[2]}
    out = []
    absorb = {}
    for fp, h in scheme.branches:
        A = sum(eq[q] * dipole_operator(scheme, fp, q) for q in (-1, 0, 1))
        den = 2 * math.pi * (laser.detuning - h) + 0.5j * scheme.gamma
        absorb[fp] = (A, 0.5 * om / den)
    d = small_d_matrix(scheme.F_ground, beta)
    for q in (-1, 0, 1):
        C = np.zeros((n, n), dtype=complex)
        for fp, (A, amp) in absorb.items():
            C += amp * dipole_operator(scheme, fp, q) @ A.conj().T
        C *= math.sqrt(scheme.gamma)
        out.append(d @ C @ d.T)
    return out


def dephasing_collapse(T2_coefficient: float, F) -> list[np.ndarray]:
    """Single dephasing operator with ``T2*(m) = coefficient / |m|``.

    ``C = sum_k sqrt(1/T2_k) (|-F+k><-F+k| - |F-k><F-k|)`` for
    ``k = 0 .. (2F-1)/2`` with ``T2_k = coefficient / (F - k)``.
    """
    if not T2_coefficient > 0:
        raise ValueError("T2 coefficient must be positive")
    F = as_halfint(F)
    n = F.dim
    f = float(F)
    C = np.zeros((n, n), dtype=complex)
    if math.isinf(T2_coefficient):
        return [C]
    for k in range(n // 2):
        rate = math.sqrt((f - k) / T2_coefficient)
        C[k, k] += rate
        C[n - 1 - k, n - 1 - k] -= rate
    return [C]


def lindblad_superoperator(H: np.ndarray, collapses: Iterable[np.ndarray] = ()) -> np.ndarray:
    """Generator ``L`` with ``d vec(rho)/dt = L vec(rho)`` (column stacking)."""
    n = H.shape[0]
    eye = np.eye(n)
    L = -1j * (np.kron(eye, H) - np.kron(H.T, eye))
    for C in collapses:
        CdC = C.conj().T @ C
        L += np.kron(C.conj(), C) - 0.5 * np.kron(eye, CdC) - 0.5 * np.kron(CdC.T, eye)
    return L


def _vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho, dtype=complex).reshape(-1, order="F")


def _unvec(v: np.ndarray, n: int) -> np.ndarray:
    return v.reshape(n, n, order="F")


class LindbladPropagator:
    """Propagator of a time-independent Lindblad generator.

    The generator is diagonalized once, so evaluating many times is a
    matrix-vector product per time. If the eigenvector basis is badly
    conditioned the dense matrix exponential is used instead.

    Parameters
    ----------
    H : ndarray
        Hamiltonian in rad/s.
    collapses : sequence of ndarray
        Jump operators in sqrt(1/s).
    """

    def __init__(self, H: np.ndarray, collapses: Iterable[np.ndarray] = ()):
        self.n = H.shape[0]
        self.L = lindblad_superoperator(H, list(collapses))
        w, V = np.linalg.eig(self.L)
        cond = np.linalg.cond(V)
        self._eig_ok = bool(np.isfinite(cond) and cond < 1e6)
        if self._eig_ok:
            self.w, self.V = w, V
            self.Vinv = np.linalg.inv(V)

    def superoperator(self, t: float) -> np.ndarray:
        if self._eig_ok:
            return (self.V * np.exp(self.w * t)[None, :]) @ self.Vinv
        return sla.expm(self.L * t)

    def apply(self, rho0: np.ndarray, times) -> np.ndarray:
        """States at ``times``; returns ``(len(times), n, n)`` or ``(n, n)`` for a scalar."""
        scalar = np.ndim(times) == 0
        ts = np.atleast_1d(np.asarray(times, dtype=float))
        v0 = _vec(rho0)
        if self._eig_ok:
            c = self.Vinv @ v0
            vs = (self.V @ (np.exp(np.outer(self.w, ts)) * c[:, None])).T
        else:
            vs = np.array([sla.expm(self.L * t) @ v0 for t in ts])
        out = np.array([_unvec(v, self.n) for v in vs])
        return out[0] if scalar else out


def evolve(rho0: np.ndarray, H: np.ndarray, collapses: Iterable[np.ndarray] = (), t: float = 0.0,
           tol: float = 1e-10, method: str = "expm") -> np.ndarray:
    """Solve the Lindblad equation from ``rho0`` up to time ``t``.

    Parameters
    ----------
    method : {"expm", "ode"}
        ``"expm"`` exponentiates the superoperator; ``"ode"`` integrates the
        vectorized equation adaptively (DOP853) with ``rtol = atol = tol``.

    Raises
    ------
    IntegrationError
        If the adaptive integrator stops before ``t``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if t < 0:
        raise ValueError("t must be non-negative")
    n = H.shape[0]
    L = lindblad_superoperator(H, list(collapses))
    v0 = _vec(rho0)
    if t == 0:
        return np.array(rho0, dtype=complex)
    if method == "expm":
        return _unvec(sla.expm(L * t) @ v0, n)
    if method != "ode":
        raise ValueError(f"unknown method {method!r}")
    sol = solve_ivp(lambda _t, y: L @ y, (0.0, t), v0, method="DOP853", rtol=tol, atol=tol * 1e-2)
    if not sol.success:
        raise IntegrationError(sol.message, float(sol.t[-1]) if len(sol.t) else 0.0)
    return _unvec(sol.y[:, -1], n)


def validate_density_matrix(rho: np.ndarray, tol: float = 1e-8) -> None:
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("density matrix must be square")
    if np.abs(rho - rho.conj().T).max() > tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1) > tol:
        raise ValueError("density matrix trace is not 1")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -tol:
        raise ValueError("density matrix is not positive semidefinite")


def _psd_sqrt(rho: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    w = np.clip(w, 0, None)
    return (V * np.sqrt(w)) @ V.conj().T


def state_fidelity(rho1: np.ndarray, rho2: np.ndarray, tol: float = 1e-8) -> float:
    """Uhlmann fidelity ``|Tr sqrt(sqrt(rho1) rho2 sqrt(rho1))|^2``."""
    rho1, rho2 = np.asarray(rho1, dtype=complex), np.asarray(rho2, dtype=complex)
    if rho1.shape != rho2.shape:
        raise ValueError("dimension mismatch")
    for r in (rho1, rho2):
        if np.linalg.eigvalsh(0.5 * (r + r.conj().T)).min() < -tol:
            raise ValueError("input is not positive semidefinite")
    s = _psd_sqrt(rho1)
    w = np.linalg.eigvalsh(0.5 * ((s @ rho2 @ s) + (s @ rho2 @ s).conj().T))
    f = float(np.sum(np.sqrt(np.clip(w, 0, None))) ** 2)
    return min(max(f, 0.0), 1.0)


def populations(rho: np.ndarray) -> np.ndarray:
    return np.real(np.diagonal(rho, axis1=-2, axis2=-1)).copy()


def magnetization(rho: np.ndarray) -> float | np.ndarray:
    """``<m_F> = sum_m m rho_mm``; accepts a stack of density matrices."""
    p = populations(rho)
    n = p.shape[-1]
    m = np.arange(n) - (n - 1) / 2
    return p @ m


def trajectory(rho0: np.ndarray, H: np.ndarray, collapses: Iterable[np.ndarray], times) -> np.ndarray:
    """Density matrices at each time, shape ``(len(times), n, n)``."""
    return LindbladPropagator(H, collapses).apply(rho0, np.asarray(times, dtype=float))


def write_trajectory_csv(path, times, states) -> None:
    """CSV with columns ``time_s, pop_m-5/2, ..., pop_m+5/2, magnetization``."""
    states = np.asarray(states)
    n = states.shape[-1]
    F = HalfInt(n - 1)
    labels = []
    for m in m_values(F):
        hm = as_halfint(m)
        s = f"{'+' if hm.twice_value > 0 else ('-' if hm.twice_value < 0 else '')}{abs(hm.twice_value)}/2" \
            if hm.twice_value % 2 else f"{int(m):+d}"
        labels.append(f"pop_m{s}")
    pops = populations(states)
    mag = magnetization(states)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", *labels, "magnetization"])
        for t, p, mg in zip(times, pops, mag):
            w.writerow([repr(float(t)), *(repr(float(x)) for x in p), repr(float(mg))])
