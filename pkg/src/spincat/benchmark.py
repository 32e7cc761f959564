"""Randomized benchmarking of the spin-cat qubit.

Gate sets
---------
The 24 single-qubit Cliffords are generated (by breadth-first search over
pulse words) from the cat pulse ``C = (I - iX)/sqrt 2`` and ``Z(pi/2)``.
``C`` is the logical action of the cat pulse at the -4.99 GHz operating
point; :func:`nominal_config` checks this.
The dihedral set is the 22-entry list of decompositions into ``X(pi)``
and ``Z(theta)``; several entries realize the same matrix up to phase, so
the underlying group has 16 elements.

Logical basis: ``|0_L> = |-F>``, ``|1_L> = |+F>``. ``Z(theta)`` is
``diag(1, e^{i theta})`` and pulses are stored in time order.

Simulation
----------
Each gate is a superoperator acting on vectorized density matrices of a
*register*: either the bare logical qubit with a channel after every gate
(:class:`ChannelNoise`), or the full ``2F+1`` level manifold with every
pulse propagated by the Lindblad equation (:class:`PhysicalNoise`).

``mode="sampled"`` draws explicit random circuits. ``mode="exact"``
averages over all circuits by propagating one state per group element,
so only the noise distribution is sampled (or integrated by quadrature).
Noise is quasi-static: one draw holds for a whole circuit.
"""

from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.optimize import curve_fit

from .atom import LaserParams, LevelScheme, dls_vector, lightshift_spectrum, load_scheme
from .dynamics import (
    dephasing_collapse,
    lindblad_superoperator,
    scattering_collapse,
    zeeman_hamiltonian,
)
from .gatedesign import GateTarget, exact_detuning, intensity_for_gate_time
from .wigner import small_d_matrix

__all__ = [
    "Pulse",
    "LogicalGate",
    "GateSet",
    "same_up_to_phase",
    "clifford_group",
    "dihedral_group",
    "cg_projector",
    "CRBCircuit",
    "DRBCircuit",
    "sample_crb_circuit",
    "sample_drb_circuit",
    "ChannelNoise",
    "BeamConfig",
    "PhysicalConfig",
    "PhysicalRealization",
    "PhysicalNoise",
    "AveragedRealization",
    "nominal_config",
    "FitResult",
    "RBResult",
    "BiasResult",
    "simulate_rb",
    "simulate_rb_levels",
    "fit_decay",
    "clifford_fidelity",
    "average_gate_infidelity",
    "extract_bias",
    "run_drb",
]

_X = np.array([[0, 1], [1, 0]], dtype=complex)
_CAT = (np.eye(2) - 1j * _X) / math.sqrt(2)


# ---------------------------------------------------------------- gates


@dataclass(frozen=True)
class Pulse:
    """Primitive pulse: ``"cat"`` (C), ``"x"`` (X(pi)) or ``"z"`` (Z(angle))."""

    kind: str
    angle: float = 0.0

    def __post_init__(self):
        if self.kind not in ("cat", "x", "z"):
            raise ValueError(f"unknown pulse kind {self.kind!r}")

    def logical(self) -> np.ndarray:
        if self.kind == "cat":
            return _CAT.copy()
        if self.kind == "x":
            return _X.copy()
        return np.diag([1.0, np.exp(1j * self.angle)])

    def __str__(self) -> str:
        if self.kind == "cat":
            return "Xcat(pi/2)"
        if self.kind == "x":
            return "X(pi)"
        return f"Z({self.angle / math.pi:.4g}pi)"


@dataclass(frozen=True)
class LogicalGate:
    """Logical 2x2 gate (up to global phase) with a pulse decomposition in time order."""

    label: str
    matrix: np.ndarray = field(compare=False)
    pulses: tuple = ()

    def product(self) -> np.ndarray:
        U = np.eye(2, dtype=complex)
        for p in self.pulses:
            U = p.logical() @ U
        return U

    @property
    def n_pulses(self) -> int:
        return len(self.pulses)


def same_up_to_phase(U: np.ndarray, V: np.ndarray, tol: float = 1e-10) -> bool:
    d = U.shape[0]
    return abs(abs(np.trace(U.conj().T @ V)) / d - 1) <= tol


def _phase_key(U: np.ndarray) -> tuple:
    flat = U.ravel()
    i = int(np.argmax(np.abs(flat) > 1e-6))
    V = flat * (abs(flat[i]) / flat[i])
    return tuple(np.round(V.real, 7) + 0.0) + tuple(np.round(V.imag, 7) + 0.0)


class GateSet:
    """Gate entries with the multiplication table of the group they generate.

    ``elements`` are the distinct matrices modulo phase; ``element_of[g]``
    maps entry ``g`` to its element; ``mul[a, b]`` is the element of
    ``elements[a] @ elements[b]`` (``b`` first); ``recovery[h]`` is the entry
    with fewest pulses realizing element ``h``.
    """

    def __init__(self, name: str, gates: Sequence[LogicalGate]):
        self.name = name
        self.gates = list(gates)
        self.elements: list[np.ndarray] = []
        self._index: dict = {}
        self.element_of = np.array([self._add(g.matrix) for g in self.gates], dtype=int)
        n = len(self.elements)
        self.mul = np.empty((n, n), dtype=int)
        for a in range(n):
            for b in range(n):
                self.mul[a, b] = self.element(self.elements[a] @ self.elements[b])
        self.identity = self.element(np.eye(2))
        self.inv = np.array([int(np.where(self.mul[:, a] == self.identity)[0][0]) for a in range(n)])
        self.recovery = np.empty(n, dtype=int)
        for h in range(n):
            cands = [g for g in range(len(self.gates)) if self.element_of[g] == h]
            self.recovery[h] = min(cands, key=lambda g: (self.gates[g].n_pulses, g))

    def _add(self, U: np.ndarray) -> int:
        k = _phase_key(U)
        if k not in self._index:
            self._index[k] = len(self.elements)
            self.elements.append(np.asarray(U, dtype=complex))
        return self._index[k]

    def element(self, U: np.ndarray) -> int:
        k = _phase_key(np.asarray(U, dtype=complex))
        if k not in self._index:
            raise KeyError("matrix is not in the group")
        return self._index[k]

    def compose(self, gate_indices: Sequence[int]) -> int:
        """Element of the product of entries applied in time order."""
        h = self.identity
        for g in gate_indices:
            h = self.mul[self.element_of[g], h]
        return int(h)

    def index(self, label: str) -> int:
        for i, g in enumerate(self.gates):
            if g.label == label:
                return i
        raise KeyError(label)

    def mean_pulses(self, kinds: Optional[Sequence[str]] = None) -> float:
        """Average pulse count per entry, counting only ``kinds`` if given."""
        tot = sum(sum(1 for p in g.pulses if kinds is None or p.kind in kinds) for g in self.gates)
        return tot / len(self.gates)

    def __len__(self) -> int:
        return len(self.gates)


_CLIFFORD: Optional[GateSet] = None
_DIHEDRAL: Optional[GateSet] = None


def clifford_group(max_pulses: int = 8) -> GateSet:
    """The 24 Cliffords with shortest decompositions into ``C`` and ``Z(pi/2)``."""
    global _CLIFFORD
    if _CLIFFORD is not None and max_pulses == 8:
        return _CLIFFORD
    gens = (Pulse("cat"), Pulse("z", math.pi / 2))
    seen = {_phase_key(np.eye(2)): ()}
    mats = {(): np.eye(2, dtype=complex)}
    queue = deque([()])
    while queue:
        word = queue.popleft()
        if len(word) >= max_pulses:
            continue
        for p in gens:
            U = p.logical() @ mats[word]
            k = _phase_key(U)
            if k not in seen:
                w = word + (p,)
                seen[k] = w
                mats[w] = U
                queue.append(w)
    words = sorted(seen.values(), key=lambda w: (len(w), [str(p) for p in w]))
    gates = [LogicalGate(f"C{i}", mats[w], w) for i, w in enumerate(words)]
    gs = GateSet("clifford", gates)
    if max_pulses == 8:
        _CLIFFORD = gs
    return gs


def _z(theta):
    return Pulse("z", theta)


def dihedral_group() -> GateSet:
    """The 22 tabulated dihedral entries (matrix, decomposition into X(pi) and Z)."""
    global _DIHEDRAL
    if _DIHEDRAL is not None:
        return _DIHEDRAL
    pi = math.pi
    e = lambda a: np.exp(1j * a)  # noqa: E731
    X = Pulse("x")
    rows = [
        ("I", [[1, 0], [0, 1]], ()),
        ("X", [[0, 1], [1, 0]], (X,)),
        ("Y", [[0, -1j], [1j, 0]], (_z(pi), X)),
        ("Z", [[1, 0], [0, -1]], (_z(pi),)),
        ("T", [[1, 0], [0, e(pi / 4)]], (_z(pi / 4),)),
        ("S", [[1, 0], [0, 1j]], (_z(pi / 2),)),
        ("TS", [[1, 0], [0, e(3 * pi / 4)]], (_z(3 * pi / 4),)),
        ("Tdg", [[1, 0], [0, e(-pi / 4)]], (_z(7 * pi / 4),)),
        ("Sdg", [[1, 0], [0, -1j]], (_z(3 * pi / 2),)),
        ("TdgSdg", [[1, 0], [0, e(-3 * pi / 4)]], (_z(5 * pi / 4),)),
        ("XT", [[0, e(pi / 4)], [1, 0]], (_z(pi / 4), X)),
        ("XS", [[0, 1j], [1, 0]], (_z(pi / 2), X)),
        ("XTS", [[0, e(3 * pi / 4)], [1, 0]], (_z(3 * pi / 4), X)),
        ("XTdg", [[0, e(-pi / 4)], [1, 0]], (_z(7 * pi / 4), X)),
        ("XSdg", [[0, -1j], [1, 0]], (_z(3 * pi / 2), X)),
        ("XTdgSdg", [[0, e(-3 * pi / 4)], [1, 0]], (_z(5 * pi / 4), X)),
        ("TX", [[0, e(-pi / 4)], [1, 0]], (X, _z(pi / 4))),
        ("SX", [[0, -1j], [1, 0]], (X, _z(pi / 2))),
        ("TSX", [[0, e(-3 * pi / 4)], [1, 0]], (X, _z(3 * pi / 4))),
        ("TdgX", [[0, e(pi / 4)], [1, 0]], (X, _z(7 * pi / 4))),
        ("SdgX", [[0, 1j], [1, 0]], (X, _z(3 * pi / 2))),
        ("TdgSdgX", [[0, e(3 * pi / 4)], [1, 0]], (X, _z(5 * pi / 4))),
    ]
    gates = [LogicalGate(lab, np.array(m, dtype=complex), p) for lab, m, p in rows]
    _DIHEDRAL = GateSet("dihedral", gates)
    return _DIHEDRAL


PAULI_LABELS = ("I", "X", "Y", "Z")


def cg_projector(level: int, dim: int = 6) -> np.ndarray:
    """Coarse-grained readout projector accepting ``m = -F .. -F + level``."""
    if not 0 <= level < dim // 2 or level not in (0, 1, 2):
        raise ValueError(f"CG level {level} is not available for dimension {dim}")
    return np.diag([1.0 if k <= level else 0.0 for k in range(dim)])


# ---------------------------------------------------------------- circuits


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class CRBCircuit:
    gates: tuple
    inverse: int


@dataclass(frozen=True)
class DRBCircuit:
    """``basis`` prep, Pauli ``pauli``, ``gates``, then ``inverse``; all entry indices."""

    basis: str
    pauli: int
    gates: tuple
    inverse: int

    @property
    def exponent_offset(self) -> int:
        return 2 if self.basis == "z" else 4


def sample_crb_circuit(m: int, rng_seed, group: Optional[GateSet] = None) -> CRBCircuit:
    """``m`` uniform Clifford draws plus the exact inverse of their product."""
    if m < 0:
        raise ValueError("depth must be non-negative")
    G = group or clifford_group()
    rng = _rng(rng_seed)
    g = tuple(int(i) for i in rng.integers(0, len(G), m))
    h = G.compose(g)
    return CRBCircuit(g, int(G.recovery[G.inv[h]]))


def _drb_target(G: GateSet, h: int, basis: str) -> int:
    inv = G.inv[h]
    if basis == "x":
        # C X C is the identity up to phase, so the x-basis circuit returns to |0>
        return int(G.mul[G.element(_X), inv])
    return int(inv)


def sample_drb_circuit(m: int, basis: str, rng_seed) -> DRBCircuit:
    """Random Pauli, ``m`` dihedral entries and the inverse entry.

    For the x basis the inverse also carries an ``X`` so that the closing
    cat pulse maps the state back to ``|0>``.
    """
    if m < 0:
        raise ValueError("depth must be non-negative")
    if basis not in ("z", "x"):
        raise ValueError("basis must be 'z' or 'x'")
    G = dihedral_group()
    rng = _rng(rng_seed)
    paulis = [G.index(lab) for lab in PAULI_LABELS]
    P = int(paulis[int(rng.integers(0, 4))])
    g = tuple(int(i) for i in rng.integers(0, len(G), m))
    h = G.compose((P,) + g)
    return DRBCircuit(basis, P, g, int(G.recovery[_drb_target(G, h, basis)]))


# ---------------------------------------------------------------- noise models


def _unitary_superop(U: np.ndarray) -> np.ndarray:
    return np.kron(U.conj(), U)


def _vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho, dtype=complex).reshape(-1, order="F")


class ChannelNoise:
    """Gate-independent channel after every gate of a logical register.

    Parameters
    ----------
    superop : ndarray
        ``d^2 x d^2`` column-stacked superoperator.
    """

    def __init__(self, superop: np.ndarray):
        self.superop = np.asarray(superop, dtype=complex)
        self.dim = int(round(math.sqrt(self.superop.shape[0])))

    @classmethod
    def identity(cls, dim: int = 2) -> "ChannelNoise":
        return cls(np.eye(dim * dim))

    @classmethod
    def depolarizing(cls, p: float, dim: int = 2) -> "ChannelNoise":
        """``rho -> (1 - p) rho + p Tr(rho) I/d``; the RB decay is ``1 - p``."""
        v = _vec(np.eye(dim))
        return cls((1 - p) * np.eye(dim * dim) + p * np.outer(v, v.conj()) / dim)

    @classmethod
    def pauli(cls, px: float = 0.0, py: float = 0.0, pz: float = 0.0) -> "ChannelNoise":
        Y = np.array([[0, -1j], [1j, 0]])
        Z = np.diag([1.0, -1.0])
        S = (1 - px - py - pz) * np.eye(4, dtype=complex)
        for p, P in ((px, _X), (py, Y), (pz, Z)):
            S = S + p * _unitary_superop(P)
        return cls(S)

    # ensemble interface
    def realize(self, rng=None) -> "ChannelNoise":
        return self

    def quadrature(self, n: int = 1, rng=None) -> list:
        return [(1.0, self)]

    @property
    def random_nodes(self) -> bool:
        return False

    def gate_superop(self, gate: LogicalGate) -> np.ndarray:
        U = gate.matrix if self.dim == 2 else gate.product()
        return self.superop @ _unitary_superop(U)


@dataclass(frozen=True)
class BeamConfig:
    """One control beam: laser, angle ``beta`` to the field axis, and its gate time."""

    laser: LaserParams
    beta: float = math.pi / 2
    duration: float = 0.0


@dataclass(frozen=True)
class PhysicalConfig:
    """Physical pulse settings for RB on the full spin manifold.

    Attributes
    ----------
    cat, x, z : BeamConfig or None
        Beams for the cat pulse, the X(pi) pulse and the light-shift Z
        pulse. Without a ``z`` beam, ``Z(theta)`` is free Larmor precession.
    B : float
        Bias field (T).
    z_rate : float
        Nominal logical phase rate (rad/s) of a Z pulse; sets Z durations.
    zeeman : bool
        Include the Zeeman term during cat and X pulses.
    scattering : bool
        Include photon-scattering jump operators during light pulses.
    T2_coefficient : float
        Dephasing coefficient (s); ``inf`` disables dephasing.
    """

    scheme: LevelScheme
    cat: Optional[BeamConfig]
    x: Optional[BeamConfig]
    z: Optional[BeamConfig]
    B: float
    z_rate: float
    zeeman: bool = False
    scattering: bool = False
    T2_coefficient: float = math.inf

    @property
    def dim(self) -> int:
        return self.scheme.dim


def _phase_time(theta: float, rate: float) -> float:
    """Shortest non-negative time accumulating logical phase ``theta`` at ``rate``."""
    if rate == 0:
        raise ValueError("zero phase rate")
    two_pi = 2 * math.pi
    if rate > 0:
        return (theta % two_pi) / rate
    return ((-theta) % two_pi) / (-rate)


def _logical_rate(H_diag: np.ndarray) -> float:
    # relative phase of |+F> vs |-F> advances as exp(-i (E_+ - E_-) t)
    return float(-(H_diag[-1] - H_diag[0]))


class PhysicalRealization:
    """Pulse and gate superoperators for one :class:`PhysicalConfig`."""

    def __init__(self, cfg: PhysicalConfig):
        self.cfg = cfg
        self.dim = cfg.dim
        self._pulse: dict = {}
        self._gate: dict = {}
        self._deph = (dephasing_collapse(cfg.T2_coefficient, cfg.scheme.F_ground)
                      if math.isfinite(cfg.T2_coefficient) else [])

    def _light_hamiltonian(self, beam: BeamConfig, rotate: bool, zeeman: bool) -> np.ndarray:
        cfg = self.cfg
        spectrum = lightshift_spectrum(beam.laser, cfg.scheme)
        if rotate:
            d = small_d_matrix(cfg.scheme.F_ground, beam.beta)
            H = (d @ np.diag(spectrum) @ d.T).astype(complex)
        else:
            H = np.diag(spectrum).astype(complex)
        if zeeman:
            H = H + zeeman_hamiltonian(cfg.scheme, cfg.B)
        return H

    def _pulse_parts(self, pulse: Pulse):
        """Hamiltonian, collapse operators and duration of one pulse."""
        cfg = self.cfg
        Cs = list(self._deph)
        if pulse.kind in ("cat", "x"):
            beam = cfg.cat if pulse.kind == "cat" else cfg.x
            if beam is None:
                raise ValueError(f"configuration has no {pulse.kind!r} beam")
            H = self._light_hamiltonian(beam, True, cfg.zeeman)
            if cfg.scattering:
                Cs += scattering_collapse(beam.laser, cfg.scheme, beam.beta)
            return H, Cs, beam.duration
        t = _phase_time(pulse.angle, cfg.z_rate)
        if cfg.z is not None:
            H = self._light_hamiltonian(cfg.z, False, True)
            if cfg.scattering:
                Cs += scattering_collapse(cfg.z.laser, cfg.scheme, 0.0)
        else:
            H = zeeman_hamiltonian(cfg.scheme, cfg.B)
        return H, Cs, t

    def pulse_superop(self, pulse: Pulse) -> np.ndarray:
        key = (pulse.kind, round(pulse.angle % (2 * math.pi), 12))
        if key not in self._pulse:
            H, Cs, t = self._pulse_parts(pulse)
            self._pulse[key] = sla.expm(lindblad_superoperator(H, Cs) * t)
        return self._pulse[key]

    def pulse_unitary(self, pulse: Pulse) -> np.ndarray:
        """Coherent part of a pulse, ignoring all collapse operators."""
        H, _, t = self._pulse_parts(pulse)
        return sla.expm(-1j * H * t)

    def gate_superop(self, gate: LogicalGate) -> np.ndarray:
        key = gate.pulses
        if key not in self._gate:
            S = np.eye(self.dim ** 2, dtype=complex)
            for p in gate.pulses:
                S = self.pulse_superop(p) @ S
            self._gate[key] = S
        return self._gate[key]

    def logical_action(self, pulse: Pulse) -> np.ndarray:
        """2x2 block of :meth:`pulse_unitary` on ``{|-F>, |+F>}``."""
        U = self.pulse_unitary(pulse)
        i = [0, self.dim - 1]
        return U[np.ix_(i, i)]


class AveragedRealization:
    """Pulse superoperators averaged over weighted realizations.

    Used when every pulse sees an independent noise draw: the gate channel is
    then the noise average of the pulse channels.
    """

    def __init__(self, nodes: Sequence):
        self.nodes = list(nodes)
        self.dim = self.nodes[0][1].dim
        self._wsum = sum(w for w, _ in self.nodes)
        self._pulse: dict = {}
        self._gate: dict = {}

    def pulse_superop(self, pulse: Pulse) -> np.ndarray:
        key = (pulse.kind, round(pulse.angle % (2 * math.pi), 12))
        if key not in self._pulse:
            self._pulse[key] = sum(w * r.pulse_superop(pulse) for w, r in self.nodes) / self._wsum
        return self._pulse[key]

    gate_superop = PhysicalRealization.gate_superop


class ResampledRealization:
    """Fresh noise draw for every pulse of a sampled circuit."""

    def __init__(self, noise: "PhysicalNoise", rng: np.random.Generator):
        self.noise = noise
        self.rng = rng
        self.dim = noise.dim

    def pulse_superop(self, pulse: Pulse) -> np.ndarray:
        cfg = self.noise.sampler(self.noise.base, self.rng)
        return PhysicalRealization(cfg).pulse_superop(pulse)

    def gate_superop(self, gate: LogicalGate) -> np.ndarray:
        S = np.eye(self.dim ** 2, dtype=complex)
        for p in gate.pulses:
            S = self.pulse_superop(p) @ S
        return S


class PhysicalNoise:
    """Ensemble of physical configurations.

    With ``correlation="circuit"`` one draw holds for a whole circuit
    (quasi-static, the default); with ``"pulse"`` every pulse sees an
    independent draw, which in the exact mode means averaged pulse channels.
    In the sampled mode ``"pulse"`` draws a fresh configuration per pulse.

    Parameters
    ----------
    base : PhysicalConfig
        Nominal configuration.
    sampler : callable, optional
        ``sampler(base, rng) -> PhysicalConfig`` draws one perturbed
        configuration (held for a whole circuit).
    nodes : callable, optional
        ``nodes(base) -> [(weight, PhysicalConfig)]`` deterministic quadrature
        used by the exact mode instead of random draws.
    pulse_nodes : callable, optional
        ``pulse_nodes(cfg) -> [(weight, PhysicalConfig)]`` for an additional
        noise that is independent from pulse to pulse; every realization
        then uses pulse channels averaged over these nodes.
    """

    def __init__(self, base: PhysicalConfig, sampler: Optional[Callable] = None,
                 nodes: Optional[Callable] = None, correlation: str = "circuit",
                 pulse_nodes: Optional[Callable] = None):
        if correlation not in ("circuit", "pulse"):
            raise ValueError("correlation must be 'circuit' or 'pulse'")
        self.base = base
        self.sampler = sampler
        self.nodes = nodes
        self.correlation = correlation
        self.pulse_nodes = pulse_nodes
        self.dim = base.dim

    def _make(self, cfg: PhysicalConfig):
        if self.pulse_nodes is None:
            return PhysicalRealization(cfg)
        return AveragedRealization([(w, PhysicalRealization(c)) for w, c in self.pulse_nodes(cfg)])

    def realize(self, rng):
        if self.correlation == "pulse" and self.sampler is not None:
            return ResampledRealization(self, rng)
        return self._make(self.sampler(self.base, rng) if self.sampler is not None else self.base)

    @property
    def random_nodes(self) -> bool:
        return self.nodes is None and self.sampler is not None

    def quadrature(self, n: int, rng) -> list:
        if self.nodes is not None:
            nodes = [(w, self._make(c)) for w, c in self.nodes(self.base)]
        elif self.sampler is None:
            nodes = [(1.0, self._make(self.base))]
        else:
            nodes = [(1.0 / n, self.realize(rng)) for _ in range(n)]
        if self.correlation == "pulse" and len(nodes) > 1:
            return [(1.0, AveragedRealization(nodes))]
        return nodes


def nominal_config(protocol: str = "crb", scheme: Optional[LevelScheme] = None, *, zeeman: bool = False,
                   scattering: bool = False, T2_coefficient: float = math.inf, B: Optional[float] = None,
                   cat_detuning: float = -5.005e9, x_detuning: float = 11.217e9,
                   cat_time: float = 85.1e-6, x_rabi: float = 2 * math.pi * 43.0e3,
                   z_ramsey: float = 2 * math.pi * 90.5e3, power: float = 0.1, waist: float = 100e-6,
                   exact: bool = True) -> PhysicalConfig:
    """Calibrated pulse settings.

    ``protocol="crb"`` uses the cat pulse and a light-shift Z pulse with the
    field along that beam (1.01 mT by default); ``"drb"`` uses X(pi) pulses,
    Larmor-precession Z gates and the cat pulse for x-basis preparation,
    with the field orthogonal to both beams (1.35 mT by default).

    With ``exact`` the detunings are moved to the nearest point where the
    DLS ratios are exactly integer. Intensities are rescaled so that the cat
    pulse lasts ``cat_time``, the X pulse lasts ``pi / x_rabi`` and the Z
    pulse accumulates logical phase at ``z_ramsey``.
    """
    if protocol not in ("crb", "drb"):
        raise ValueError("protocol must be 'crb' or 'drb'")
    scheme = scheme or load_scheme()
    if B is None:
        B = 1.01e-3 if protocol == "crb" else 1.35e-3
    spin_half = scheme.dim == 2

    def beam(target, det, t):
        if exact and not spin_half:
            det = exact_detuning(target, scheme, det)
        las = LaserParams.from_power(power, waist, det)
        if spin_half:
            dls = dls_vector(lightshift_spectrum(las, scheme))
            las = las.scaled(math.pi / (abs(dls[0]) * t))
        else:
            las = intensity_for_gate_time(target, las, scheme, t)
        return las

    zee = np.real(np.diag(zeeman_hamiltonian(scheme, B)))
    x_time = math.pi / x_rabi
    if spin_half:
        # for a spin-1/2 the cat gate is the pi/2 covariant rotation
        cat = BeamConfig(beam(GateTarget.X_PI, x_detuning, x_time), math.pi / 2, x_time / 2)
    else:
        cat = BeamConfig(beam(GateTarget.CAT_HALF_PI, cat_detuning, cat_time), math.pi / 2, cat_time)
    x = z = None
    if protocol == "crb":
        zl = beam(GateTarget.X_PI, x_detuning, x_time)
        r_light = _logical_rate(lightshift_spectrum(zl, scheme))
        r_zee = _logical_rate(zee)
        cands = [s for s in ((z_ramsey - r_zee) / r_light, (-z_ramsey - r_zee) / r_light) if s > 0]
        zl = zl.scaled(min(cands))
        z = BeamConfig(zl, 0.0, 0.0)
        z_rate = _logical_rate(lightshift_spectrum(zl, scheme) + zee)
    else:
        x = BeamConfig(beam(GateTarget.X_PI, x_detuning, x_time), math.pi / 2, x_time)
        z_rate = _logical_rate(zee)
    cfg = PhysicalConfig(scheme, cat, x, z, B, z_rate, zeeman, scattering, T2_coefficient)
    _check_logical(cfg)
    return cfg


def _check_logical(cfg: PhysicalConfig, tol: float = 1e-6) -> None:
    real = PhysicalRealization(replace(cfg, zeeman=False))
    pulses = [Pulse("z", math.pi / 4), Pulse("z", math.pi / 2)]
    pulses += [Pulse(k) for k in ("cat", "x") if getattr(cfg, k) is not None]
    for p in pulses:
        U = real.logical_action(p)
        if not same_up_to_phase(U, p.logical(), tol):
            raise ValueError(f"pulse {p} does not realize its logical gate (got {np.round(U, 4)})")


# ---------------------------------------------------------------- simulation


@dataclass
class FitResult:
    """``A p^(m + offset) + b`` with ``b`` fixed."""

    A: float
    p: float
    b: float
    A_err: float
    p_err: float
    offset: int = 0
    converged: bool = True
    degenerate: bool = False
    message: str = ""

    def ci(self, z: float = 1.0) -> tuple:
        return (self.p - z * self.p_err, self.p + z * self.p_err)


@dataclass
class RBResult:
    protocol: str
    depths: list
    survivals: list
    errors: list
    n_samples: int
    cg_level: int
    fit: Optional[FitResult] = None
    seed: Optional[int] = None
    mode: str = "sampled"

    def to_dict(self) -> dict:
        out = {
            "protocol": self.protocol,
            "mode": self.mode,
            "cg_level": self.cg_level,
            "seed": self.seed,
            "n_samples": self.n_samples,
            "depths": [int(m) for m in self.depths],
            "survivals": [float(s) for s in self.survivals],
            "errors": [float(e) for e in self.errors],
        }
        if self.fit is not None:
            f = self.fit
            out["fit"] = {"A": f.A, "p": f.p, "b": f.b, "A_err": f.A_err, "p_err": f.p_err,
                          "offset": f.offset, "converged": f.converged, "degenerate": f.degenerate}
        return out


def _protocol_parts(protocol: str, dim: int):
    """Gate set, Pauli layer entries, prep/final pulse gate and exponent offset."""
    if protocol == "crb":
        return clifford_group(), None, None, 0, "z"
    if protocol in ("drb_z", "drb_x"):
        G = dihedral_group()
        paulis = [G.index(lab) for lab in PAULI_LABELS]
        basis = protocol[-1]
        cat = LogicalGate("Xcat", _CAT, (Pulse("cat"),)) if basis == "x" else None
        return G, paulis, cat, (2 if basis == "z" else 4), basis
    raise ValueError(f"unknown protocol {protocol!r}")


def _initial(dim: int) -> np.ndarray:
    rho = np.zeros((dim, dim), dtype=complex)
    rho[0, 0] = 1.0
    return _vec(rho)


def _exact_survivals(protocol: str, real, projectors: Sequence[np.ndarray], depths: Sequence[int]) -> np.ndarray:
    """Circuit-averaged survival for one noise realization; shape ``(len(projectors), len(depths))``."""
    G, paulis, cat, _, basis = _protocol_parts(protocol, real.dim)
    n_el = len(G.elements)
    S = [real.gate_superop(g) for g in G.gates]
    v0 = _initial(real.dim)
    S_cat = real.gate_superop(cat) if cat is not None else None
    if S_cat is not None:
        v0 = S_cat @ v0
    v = np.zeros((n_el, v0.size), dtype=complex)
    if paulis is None:
        v[G.identity] = v0
    else:
        for P in paulis:
            v[G.element_of[P]] += S[P] @ v0 / len(paulis)
    # readout rows: <E| S_final S_rec(h)
    rows = []
    for E in projectors:
        e = _vec(E).conj()
        if S_cat is not None:
            e = e @ S_cat
        target = [_drb_target(G, h, basis) if paulis is not None else G.inv[h] for h in range(n_el)]
        rows.append(np.array([e @ S[G.recovery[target[h]]] for h in range(n_el)]))
    out = np.zeros((len(projectors), len(depths)))
    want = {m: i for i, m in enumerate(depths)}
    mmax = max(depths)
    ST = [s.T for s in S]
    for m in range(mmax + 1):
        if m in want:
            for j, R in enumerate(rows):
                out[j, want[m]] = float(np.real(np.sum(R * v)))
        if m == mmax:
            break
        nv = np.zeros_like(v)
        for g, sT in enumerate(ST):
            nv[G.mul[G.element_of[g]]] += v @ sT
        v = nv / len(G)
    return out


def _circuit_survival(protocol: str, real, projectors, m: int, rng) -> np.ndarray:
    G, paulis, cat, _, basis = _protocol_parts(protocol, real.dim)
    if protocol == "crb":
        c = sample_crb_circuit(m, rng, G)
        seq = list(c.gates) + [c.inverse]
    else:
        c = sample_drb_circuit(m, basis, rng)
        seq = [c.pauli] + list(c.gates) + [c.inverse]
    v = _initial(real.dim)
    if cat is not None:
        v = real.gate_superop(cat) @ v
    for g in seq:
        v = real.gate_superop(G.gates[g]) @ v
    if cat is not None:
        v = real.gate_superop(cat) @ v
    return np.array([float(np.real(np.vdot(_vec(E), v))) for E in projectors])


def _sampled_chunk(args):
    protocol, noise, projectors, m, di, seed, idxs, shots = args
    out = []
    for i in idxs:
        rng = np.random.default_rng([seed, di, i])
        real = noise.realize(rng)
        s = _circuit_survival(protocol, real, projectors, m, rng)
        s = np.clip(s, 0.0, 1.0)
        if shots:
            s = rng.binomial(shots, s) / shots
        out.append(s)
    return out


def _projectors(noise, levels: Sequence[int]) -> list:
    if noise.dim == 2:
        return [np.diag([1.0, 0.0]) for _ in levels]
    return [cg_projector(lv, noise.dim) for lv in levels]


def simulate_rb_levels(protocol: str, depths: Sequence[int], n_circuits: int = 50, noise=None,
                       levels: Sequence[int] = (2,), seed: int = 0, mode: str = "sampled",
                       shots: Optional[int] = None, n_noise: int = 64, jobs: int = 1,
                       fit: bool = True) -> dict:
    """Run one protocol and read out several CG levels from the same circuits.

    Parameters
    ----------
    protocol : {"crb", "drb_z", "drb_x"}
    depths : sequence of int
        Random-gate counts ``m``.
    n_circuits : int
        Circuits per depth (sampled mode).
    noise : ChannelNoise or PhysicalNoise, optional
        Defaults to the noiseless logical qubit.
    mode : {"sampled", "exact"}
        Explicit random circuits, or exact averaging over circuits with
        ``n_noise`` noise draws (or the noise model's quadrature nodes).
    shots : int, optional
        Binomial readout shots per circuit (sampled mode).

    Returns
    -------
    dict
        CG level -> :class:`RBResult`.
    """
    depths = [int(m) for m in depths]
    if not depths:
        raise ValueError("depths must be nonempty")
    if n_circuits < 1:
        raise ValueError("n_circuits must be >= 1")
    noise = noise if noise is not None else ChannelNoise.identity()
    projs = _projectors(noise, levels)
    _, _, _, offset, _ = _protocol_parts(protocol, noise.dim)
    if mode == "exact":
        rng = np.random.default_rng([seed, 0xE1])
        nodes = noise.quadrature(n_noise, rng)
        vals = np.array([_exact_survivals(protocol, real, projs, depths) for _, real in nodes])
        w = np.array([w for w, _ in nodes])
        surv = np.tensordot(w, vals, axes=1) / w.sum()
        if noise.random_nodes and len(nodes) > 1:
            err = vals.std(axis=0, ddof=1) / math.sqrt(len(nodes))
        else:
            err = np.zeros_like(surv)
        n_samp = len(nodes)
    elif mode == "sampled":
        surv = np.zeros((len(projs), len(depths)))
        err = np.zeros_like(surv)
        for di, m in enumerate(depths):
            idx = list(range(n_circuits))
            if jobs > 1:
                size = max(1, math.ceil(n_circuits / jobs))
                chunks = [(protocol, noise, projs, m, di, seed, idx[i:i + size], shots)
                          for i in range(0, n_circuits, size)]
                with ProcessPoolExecutor(max_workers=jobs) as pool:
                    res = [r for part in pool.map(_sampled_chunk, chunks) for r in part]
            else:
                res = _sampled_chunk((protocol, noise, projs, m, di, seed, idx, shots))
            res = np.array(res)
            surv[:, di] = res.mean(axis=0)
            if shots:
                # smoothed binomial error of the pooled shots, never exactly zero
                k = surv[:, di] * n_circuits * shots
                n_tot = n_circuits * shots
                pt = (k + 1) / (n_tot + 2)
                binom = np.sqrt(pt * (1 - pt) / n_tot)
                spread = res.std(axis=0, ddof=1) / math.sqrt(n_circuits) if n_circuits > 1 else 0
                err[:, di] = np.maximum(binom, spread)
            else:
                err[:, di] = res.std(axis=0, ddof=1) / math.sqrt(n_circuits) if n_circuits > 1 else 0.0
        n_samp = n_circuits
    else:
        raise ValueError("mode must be 'sampled' or 'exact'")
    out = {}
    for j, lv in enumerate(levels):
        r = RBResult(protocol, depths, list(surv[j]), list(err[j]), n_samp, lv, seed=seed, mode=mode)
        if fit and len(depths) >= 3:
            b = float(np.trace(projs[j]).real / noise.dim)
            sig = err[j] if np.all(err[j] > 0) else None
            r.fit = fit_decay(depths, surv[j], sig, b, offset=offset)
        out[lv] = r
    return out


def simulate_rb(protocol: str, depths: Sequence[int], n_circuits: int = 50, noise=None, cg: int = 2,
                seed: int = 0, mode: str = "sampled", shots: Optional[int] = None, n_noise: int = 64,
                jobs: int = 1) -> RBResult:
    """Single-level wrapper of :func:`simulate_rb_levels`."""
    return simulate_rb_levels(protocol, depths, n_circuits, noise, (cg,), seed, mode, shots,
                              n_noise, jobs)[cg]


# ---------------------------------------------------------------- analysis


def fit_decay(depths, survivals, errors=None, b_fixed: float = 0.5, offset: int = 0) -> FitResult:
    """Weighted least-squares fit of ``A p^(m + offset) + b_fixed``.

    Parameter errors come from the covariance matrix; with ``errors`` they
    are absolute, otherwise scaled by the residual variance. Survivals with
    no depth dependence leave ``p`` unidentifiable and are flagged.
    """
    m = np.asarray(depths, dtype=float)
    y = np.asarray(survivals, dtype=float)
    if m.size < 3:
        raise ValueError("need at least 3 depths")
    x = m + offset
    amp = y - b_fixed
    if np.ptp(y) < 1e-12 and abs(amp[0]) < 1e-12:
        return FitResult(0.0, float("nan"), b_fixed, float("nan"), float("nan"), offset, False, True,
                         "survivals equal the floor; p is unidentifiable")
    # log-linear start
    pos = amp > 1e-9
    if pos.sum() >= 2:
        k, c = np.polyfit(x[pos], np.log(amp[pos]), 1)
        p0, A0 = float(np.clip(np.exp(k), 1e-3, 1.0)), float(np.exp(c))
    else:
        p0, A0 = 0.9, float(amp[0]) if amp[0] != 0 else 0.5
    model = lambda xx, A, p: A * np.power(p, xx) + b_fixed  # noqa: E731
    sigma = None if errors is None else np.asarray(errors, dtype=float)
    try:
        popt, pcov = curve_fit(model, x, y, p0=(A0, p0), sigma=sigma, absolute_sigma=sigma is not None,
                               bounds=([-2.0, 0.0], [2.0, 1.5]), max_nfev=20000)
    except (RuntimeError, ValueError) as exc:
        return FitResult(float("nan"), float("nan"), b_fixed, float("nan"), float("nan"), offset, False,
                         False, f"fit failed: {exc}")
    A, p = (float(v) for v in popt)
    perr = np.sqrt(np.clip(np.diag(pcov), 0, None)) if np.all(np.isfinite(pcov)) else [float("nan")] * 2
    degenerate = bool(np.ptp(y) < 1e-12 and abs(p - 1) < 1e-9)
    return FitResult(A, p, b_fixed, float(perr[0]), float(perr[1]), offset, True, degenerate)


def clifford_fidelity(p: float) -> float:
    """Average Clifford fidelity ``(1 + p)/2`` of a two-dimensional logical space."""
    if not 0 < p <= 1 + 1e-12:
        raise ValueError("p must lie in (0, 1]")
    return (1 + p) / 2


def average_gate_infidelity(noise=None, group: str = "clifford", n_noise: int = 64, seed: int = 0) -> float:
    """Fit-free mean logical infidelity per gate of ``group``.

    For every entry the channel is restricted to the logical inputs
    ``{|-F>, |+F>}`` and compared with the ideal logical gate through the
    entanglement fidelity, ``r = 1 - (2 F_e + 1)/3``; population leaving the
    logical pair counts as error. The result is averaged over the entries
    and over the noise model's quadrature nodes (or ``n_noise`` draws).
    """
    G = clifford_group() if group == "clifford" else dihedral_group() if group == "dihedral" else None
    if G is None:
        raise ValueError("group must be 'clifford' or 'dihedral'")
    noise = noise if noise is not None else ChannelNoise.identity()
    nodes = noise.quadrature(n_noise, np.random.default_rng([seed, 0xA6]))
    d = noise.dim
    idx = (0, d - 1)
    # column-stacked positions of |i><j| for logical i, j
    pos = [[idx[i] + d * idx[j] for j in range(2)] for i in range(2)]
    tot = wsum = 0.0
    for w, real in nodes:
        acc = 0.0
        for g in G.gates:
            S = real.gate_superop(g)
            U = g.product()
            Fe = 0.0
            for a in range(2):
                for b in range(2):
                    out = S[:, pos[a][b]].reshape(d, d, order="F")
                    L = out[np.ix_(idx, idx)]
                    Fe += (U.conj().T @ L @ U)[a, b].real
            acc += 1 - (2 * Fe / 4 + 1) / 3
        tot += w * acc / len(G.gates)
        wsum += w
    return float(tot / wsum)


@dataclass
class BiasResult:
    lambda1: float
    lambda2: float
    p_D: float
    p_ND: float
    eta: Optional[float]
    p_D_err: float = 0.0
    p_ND_err: float = 0.0
    eta_interval: tuple = (float("nan"), float("nan"))


def extract_bias(lambda1: float, lambda2: float, N: int = 1, lambda1_err: float = 0.0,
                 lambda2_err: float = 0.0) -> BiasResult:
    """Dephasing and non-dephasing error probabilities from DRB decays.

    ``p_D = ((2^N - 1)/4^N)(1 + (2^N - 1) l1 - 2^N l2)``,
    ``p_ND = ((2^N - 1)/2^N)(1 - l1)``, ``eta = p_D / p_ND``. When
    ``p_ND <= 0`` the ratio is only bounded from below and ``eta`` is None.
    """
    for lam in (lambda1, lambda2):
        if not 0 < lam <= 1 + 1e-9:
            raise ValueError("decay parameters must lie in (0, 1]")
    d = 2 ** N
    cD = (d - 1) / d ** 2
    cND = (d - 1) / d
    pD = cD * (1 + (d - 1) * lambda1 - d * lambda2)
    pND = cND * (1 - lambda1)
    pD_err = cD * math.hypot((d - 1) * lambda1_err, d * lambda2_err)
    pND_err = cND * lambda1_err
    if pND > 0:
        eta = pD / pND
        lo_nd, hi_nd = max(pND - pND_err, 0.0), pND + pND_err
        lo = max(pD - pD_err, 0.0) / hi_nd if hi_nd > 0 else float("nan")
        hi = (pD + pD_err) / lo_nd if lo_nd > 0 else math.inf
        return BiasResult(lambda1, lambda2, pD, pND, eta, pD_err, pND_err, (lo, hi))
    hi_nd = pND + pND_err
    lo = max(pD - pD_err, 0.0) / hi_nd if hi_nd > 0 else 0.0
    return BiasResult(lambda1, lambda2, pD, pND, None, pD_err, pND_err, (lo, math.inf))


def run_drb(depths: Sequence[int], n_circuits: int = 50, noise=None, cg: int = 2, seed: int = 0,
            mode: str = "sampled", shots: Optional[int] = None, n_noise: int = 64,
            jobs: int = 1) -> tuple:
    """Both DRB bases and the bias extraction: ``(result_z, result_x, BiasResult)``."""
    rz = simulate_rb("drb_z", depths, n_circuits, noise, cg, seed, mode, shots, n_noise, jobs)
    rx = simulate_rb("drb_x", depths, n_circuits, noise, cg, seed + 1, mode, shots, n_noise, jobs)
    l1 = min(rz.fit.p, 1.0) if np.isfinite(rz.fit.p) else 1.0
    l2 = min(rx.fit.p, 1.0) if np.isfinite(rx.fit.p) else 1.0
    bias = extract_bias(l1, l2, 1, rz.fit.p_err if np.isfinite(rz.fit.p_err) else 0.0,
                        rx.fit.p_err if np.isfinite(rx.fit.p_err) else 0.0)
    return rz, rx, bias
