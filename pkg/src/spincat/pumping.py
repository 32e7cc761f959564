"""Dark-state-limited selective optical pumping.

A linearly polarized pump perpendicular to the field drives ``sigma+`` and
``sigma-`` simultaneously, so an excited sublevel ``m'`` couples to the two
ground sublevels ``m' -+ 1``. Their bright combination is pumped away while
the dark combination stays trapped. Repeating the pump after the ground
coherences have decayed re-exposes the trapped population.

Units are dimensionless: rates and Rabi frequencies are in units of the
excited-state decay rate, so ``gamma_a + gamma_b + gamma_c = 1`` for a
closed transition.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .atom import LevelScheme, load_scheme
from .dynamics import LindbladPropagator
from .wigner import HalfInt, Number, as_halfint, clebsch_gordan, m_values

__all__ = [
    "FourLevelParams",
    "PumpStep",
    "INIT_SEQUENCE",
    "PUMP_FACTOR",
    "dark_state",
    "four_level_evolve",
    "steady_state_ratio",
    "pump_time",
    "iterate_pumping",
    "coupling_constants",
    "six_level_sequence",
    "SequenceResult",
    "write_population_csv",
]

PUMP_FACTOR = 25.0


def dark_state(Omega_a: float, Omega_c: float) -> np.ndarray:
    """``(Omega_c |a> - Omega_a |c>) / sqrt(Omega_a^2 + Omega_c^2)`` over ``{|a>, |c>}``."""
    norm = math.hypot(Omega_a, Omega_c)
    if norm == 0:
        raise ValueError("Omega_a and Omega_c cannot both be zero")
    return np.array([Omega_c, -Omega_a]) / norm


@dataclass(frozen=True)
class FourLevelParams:
    """Lambda-type pump on ``{|a>, |b>, |c>, |e>}`` (index order a, b, c, e).

    ``Omega_a`` and ``Omega_c`` couple ``|a>`` and ``|c>`` to ``|e>``; ``|b>``
    is the target and is only reached through decay.
    """

    Delta: float
    Omega_a: float
    Omega_c: float
    gamma_a: float
    gamma_b: float
    gamma_c: float

    def __post_init__(self):
        if min(self.gamma_a, self.gamma_b, self.gamma_c) < 0:
            raise ValueError("decay rates must be non-negative")

    @property
    def Omega_eff(self) -> float:
        return math.hypot(self.Omega_a, self.Omega_c)

    @property
    def gammas(self) -> tuple[float, float, float]:
        return (self.gamma_a, self.gamma_b, self.gamma_c)

    def hamiltonian(self) -> np.ndarray:
        H = np.zeros((4, 4), dtype=complex)
        H[3, 3] = self.Delta
        H[3, 0] = H[0, 3] = self.Omega_a
        H[3, 2] = H[2, 3] = self.Omega_c
        return H

    def collapses(self) -> list[np.ndarray]:
        out = []
        for n, g in enumerate(self.gammas):
            C = np.zeros((4, 4), dtype=complex)
            C[n, 3] = math.sqrt(g)
            out.append(C)
        return out

    @classmethod
    def from_clebsch_gordan(cls, m_prime: Number = 0.5, scheme: Optional[LevelScheme] = None,
                            Delta: float = 0.0) -> "FourLevelParams":
        """Couplings and branching of ``|F' m'>`` on the closed ``F -> F+1`` line.

        For ``173Yb`` and ``m' = +1/2`` this gives
        ``(Omega_a^2, Omega_c^2) = (2/7, 1/7)`` and ``gamma = (2/7, 4/7, 1/7)``.
        """
        scheme = scheme or load_scheme("173Yb")
        c = coupling_constants(scheme, m_prime)
        mp = as_halfint(m_prime)
        a, b, cc = (c.get(mp + d, 0.0) for d in (-1, 0, 1))
        return cls(Delta, a, cc, a * a, b * b, cc * cc)


def _closed_branch(scheme: LevelScheme) -> HalfInt:
    Fp = as_halfint(scheme.F_ground + 1)
    scheme.hfs(Fp)  # raises KeyError if absent
    return Fp


def coupling_constants(scheme: LevelScheme, m_prime: Number) -> dict[HalfInt, float]:
    """Signed ``<F' m'|F m; 1 q>`` for every ground ``m`` reachable from ``m'``.

    Squares sum to one over ``m``, so they double as branching ratios.
    """
    F = scheme.F_ground
    Fp = _closed_branch(scheme)
    mp = as_halfint(m_prime)
    if abs(mp.twice_value) > Fp.twice_value:
        raise ValueError(f"|m'| must not exceed F' = {Fp}")
    scale = math.sqrt(Fp.dim / F.dim)
    out = {}
    for m in m_values(F):
        m = as_halfint(m)
        q = mp - m
        if abs(q.twice_value) > 2:
            continue
        out[m] = scale * clebsch_gordan(F, m, Fp, mp, 1, -q)
    return out


def four_level_evolve(params: FourLevelParams, rho0: np.ndarray, t) -> np.ndarray:
    """Lindblad evolution; ``t`` scalar gives ``(4, 4)``, an array gives ``(len(t), 4, 4)``."""
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (4, 4):
        raise ValueError("rho0 must be 4x4")
    return LindbladPropagator(params.hamiltonian(), params.collapses()).apply(rho0, t)


def steady_state_ratio(Omega_a: float, Omega_c: float) -> float:
    """``P_a / P_c = Omega_c^2 / Omega_a^2`` of the trapped dark population."""
    if Omega_a == 0:
        raise ValueError("Omega_a must be non-zero")
    return (Omega_c / Omega_a) ** 2


def pump_time(gammas: Sequence[float], factor: float = PUMP_FACTOR) -> float:
    """``factor / min(gamma)`` over the non-zero decay channels."""
    g = [x for x in gammas if x > 0]
    if not g:
        raise ValueError("no decay channel")
    return factor / min(g)


def _decohere(rho: np.ndarray, ground: Sequence[int], decoherence: float) -> np.ndarray:
    if not 0 <= decoherence <= 1:
        raise ValueError("decoherence must lie in [0, 1]")
    out = rho.copy()
    for i in ground:
        for j in ground:
            if i != j:
                out[i, j] *= 1 - decoherence
    return out


def iterate_pumping(params: FourLevelParams, cycles: int, rho0: Optional[np.ndarray] = None,
                    duration: Optional[float] = None, decoherence: float = 1.0) -> np.ndarray:
    """Populations ``(cycles, 4)`` after each pump cycle.

    Each cycle evolves for ``duration`` (default :func:`pump_time`) and then
    scales the ground-ground coherences by ``1 - decoherence``.

    Parameters
    ----------
    rho0 : ndarray, optional
        Defaults to a uniform mixture over ``{a, b, c}``.
    """
    if cycles < 1:
        raise ValueError("cycles must be >= 1")
    if rho0 is None:
        rho0 = np.diag([1 / 3, 1 / 3, 1 / 3, 0.0])
    T = pump_time(params.gammas) if duration is None else duration
    U = LindbladPropagator(params.hamiltonian(), params.collapses()).superoperator(T)
    rho = np.asarray(rho0, dtype=complex)
    out = np.empty((cycles, 4))
    for c in range(cycles):
        rho = (U @ rho.reshape(-1, order="F")).reshape(4, 4, order="F")
        rho = _decohere(rho, (0, 1, 2), decoherence)
        out[c] = rho.diagonal().real
    return out


@dataclass(frozen=True)
class PumpStep:
    """``iterations`` pump cycles on the excited sublevel ``target_mFprime``.

    ``duration`` is in units of the inverse decay rate; None uses
    :func:`pump_time` for that sublevel.
    """

    target_mFprime: HalfInt
    iterations: int
    duration: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "target_mFprime", as_halfint(self.target_mFprime))
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.duration is not None and self.duration <= 0:
            raise ValueError("duration must be positive")


# Initialization of |m_F = -5/2> in 173Yb, pumping downward one sublevel at a time.
INIT_SEQUENCE = (
    PumpStep(1.5, 30),
    PumpStep(0.5, 5),
    PumpStep(-0.5, 5),
    PumpStep(-1.5, 15),
    PumpStep(-2.5, 1),
)


@dataclass
class SequenceResult:
    """Final ground populations (ascending ``m``) plus the per-cycle trace.

    ``trace`` rows are ``(step index, m', cycle, populations...)``.
    """

    populations: np.ndarray
    trace: list

    @property
    def target(self) -> float:
        """Population of the lowest sublevel."""
        return float(self.populations[0])


def _step_generator(scheme: LevelScheme, m_prime: HalfInt, Delta: float):
    n = scheme.dim
    ms = [as_halfint(m) for m in m_values(scheme.F_ground)]
    c = coupling_constants(scheme, m_prime)
    H = np.zeros((n + 1, n + 1), dtype=complex)
    H[n, n] = Delta
    Cs, gam = [], []
    for i, m in enumerate(ms):
        if m not in c or c[m] == 0:
            continue
        if m != m_prime:  # linear polarization perpendicular to B: sigma+ and sigma- only
            H[n, i] = H[i, n] = c[m]
        C = np.zeros((n + 1, n + 1), dtype=complex)
        C[i, n] = abs(c[m])
        Cs.append(C)
        gam.append(c[m] ** 2)
    return LindbladPropagator(H, Cs), Cs, gam


def _relax(rho: np.ndarray, Cs: Sequence[np.ndarray]) -> np.ndarray:
    """Light off: the excited population decays through ``Cs`` to the ground manifold."""
    n = rho.shape[0] - 1
    pe = rho[n, n].real
    out = rho.copy()
    out[n, :] = 0
    out[:, n] = 0
    for C in Cs:
        i = int(np.argmax(np.abs(C[:, n])))
        out[i, i] += abs(C[i, n]) ** 2 * pe
    return out


def six_level_sequence(steps: Sequence[PumpStep] = INIT_SEQUENCE, scheme: Optional[LevelScheme] = None,
                       rho0: Optional[np.ndarray] = None, decoherence: float = 1.0,
                       Delta: float = 0.0) -> SequenceResult:
    """Apply a pump sequence to the full ground manifold.

    Each step couples one excited sublevel to the ground manifold with
    Clebsch-Gordan weights of the closed ``F -> F+1`` line and runs its
    cycles. After every cycle the light is switched off, the remaining
    excited population decays with the branching ratios, and ground
    coherences are scaled by ``1 - decoherence``.

    Parameters
    ----------
    rho0 : ndarray, optional
        Ground-state density matrix (or populations); defaults to the
        maximally mixed state.
    """
    scheme = scheme or load_scheme("173Yb")
    n = scheme.dim
    if rho0 is None:
        rho0 = np.eye(n) / n
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.ndim == 1:
        rho0 = np.diag(rho0)
    if rho0.shape != (n, n):
        raise ValueError(f"rho0 must be {n}x{n}")
    rho = np.zeros((n + 1, n + 1), dtype=complex)
    rho[:n, :n] = rho0
    trace = []
    ground = range(n)
    for k, step in enumerate(steps):
        if step.iterations == 0:
            continue
        prop, Cs, gam = _step_generator(scheme, step.target_mFprime, Delta)
        T = pump_time(gam) if step.duration is None else step.duration
        U = prop.superoperator(T)
        for c in range(step.iterations):
            rho = (U @ rho.reshape(-1, order="F")).reshape(n + 1, n + 1, order="F")
            rho = _decohere(_relax(rho, Cs), ground, decoherence)
            trace.append((k, float(step.target_mFprime), c + 1, *rho.diagonal().real[:n]))
    return SequenceResult(rho.diagonal().real[:n].copy(), trace)


def write_population_csv(path, trace, n_levels: Optional[int] = None) -> None:
    """Write a :class:`SequenceResult` trace (or ``iterate_pumping`` rows) to CSV."""
    rows = [list(r) for r in trace]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if rows and len(rows[0]) > 3 and n_levels is None:
            n_levels = len(rows[0]) - 3
        w.writerow(["step", "m_prime", "cycle"] + [f"p{i}" for i in range(n_levels or 0)])
        for r in rows:
            w.writerow([int(r[0]), f"{r[1]:g}", int(r[2])] + [f"{x:.12g}" for x in r[3:]])
