"""Atomic model of the 1S0 - 3P1 lightshift.

Polarization parametrization, dipole matrices between the ground
nuclear-spin manifold and the excited hyperfine branches, the diagonal
lightshift spectrum ``delta_k`` and its differential (DLS) vector, and the
photon-scattering strength.

Units: laser detunings and hyperfine positions are in Hz; lightshifts and
DLS vectors are returned in rad/s; intensities in W/m^2.
"""

from __future__ import annotations

import configparser
import hashlib
import math
import os
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import constants as sc

from .wigner import HalfInt, as_halfint, clebsch_gordan, m_values, wigner_6j

__all__ = [
    "CONSTANTS_ENV",
    "Polarization",
    "SIGMA_PLUS",
    "SIGMA_MINUS",
    "PI_POL",
    "LevelScheme",
    "LaserParams",
    "ResonanceError",
    "polarization_vector",
    "polarization_weights",
    "dipole_operator",
    "lightshift_matrix",
    "lightshift_spectrum",
    "dls_vector",
    "spectrum_from_dls",
    "rabi_scale",
    "stretched_element",
    "scattering_strength",
    "load_constants",
    "load_scheme",
    "constants_path",
    "constants_hash",
]

CONSTANTS_ENV = "SPINCAT_CONSTANTS"


class ResonanceError(ValueError):
    """Laser detuning coincides with an excited hyperfine branch."""


@dataclass(frozen=True)
class Polarization:
    """Laser polarization as azimuth ``phi`` and ellipticity ``chi`` (radians)."""

    phi: float
    chi: float

    def __post_init__(self):
        if not (math.isfinite(self.phi) and math.isfinite(self.chi)):
            raise ValueError("polarization angles must be finite")


SIGMA_PLUS = Polarization(math.pi / 4, -math.pi / 4)
SIGMA_MINUS = Polarization(math.pi / 4, math.pi / 4)
PI_POL = Polarization(0.0, 0.0)


def polarization_vector(p: Polarization) -> np.ndarray:
    """Spherical components ``(e_{+1}, e_{-1}, e_0)`` of the laser field.

    ``e_{+1} = sin 2phi cos(chi + pi/4)``, ``e_{-1} = sin 2phi cos(chi - pi/4)``,
    ``e_0 = cos 2phi``. The vector has unit norm for any angles.
    """
    s2 = math.sin(2 * p.phi)
    return np.array([s2 * math.cos(p.chi + math.pi / 4),
                     s2 * math.cos(p.chi - math.pi / 4),
                     math.cos(2 * p.phi)], dtype=complex)


def polarization_weights(p: Polarization) -> dict[int, float]:
    """Intensity fraction ``|e_q|^2`` carried by each spherical component q."""
    e = polarization_vector(p)
    return {+1: abs(e[0]) ** 2, -1: abs(e[1]) ** 2, 0: abs(e[2]) ** 2}


@dataclass(frozen=True)
class LevelScheme:
    """Ground manifold plus excited hyperfine branches of one isotope.

    Parameters
    ----------
    name : str
        Label, e.g. ``"173Yb"``.
    F_ground : HalfInt
        Ground-state total angular momentum (equal to the nuclear spin for 1S0).
    nuclear_spin : HalfInt
    J_ground, J_excited : HalfInt
        Electronic angular momenta (0 and 1 for 1S0 - 3P1).
    branches : tuple of (HalfInt, float)
        ``(F', position in Hz)`` of each excited hyperfine branch.
    gamma : float
        Natural linewidth in rad/s.
    omega0 : float
        Transition angular frequency in rad/s.
    nuclear_moment : float
        Ground-state magnetic moment in nuclear magnetons.
    lightshift_scale : float
        Dimensionless factor applied to the lightshift prefactor.
    """

    name: str
    F_ground: HalfInt
    nuclear_spin: HalfInt
    J_ground: HalfInt
    J_excited: HalfInt
    branches: tuple
    gamma: float
    omega0: float
    nuclear_moment: float = 0.0
    lightshift_scale: float = 1.0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("linewidth must be positive")
        fps = [as_halfint(fp) for fp, _ in self.branches]
        if len(set(fps)) != len(fps):
            raise ValueError("excited branches must be distinct")
        object.__setattr__(self, "branches",
                           tuple((as_halfint(fp), float(h)) for fp, h in self.branches))

    @property
    def dim(self) -> int:
        return self.F_ground.dim

    @property
    def wavelength(self) -> float:
        return 2 * math.pi * sc.c / self.omega0

    def hfs(self, F_prime) -> float:
        fp = as_halfint(F_prime)
        for f, h in self.branches:
            if f == fp:
                return h
        raise KeyError(f"F'={fp} is not a branch of scheme {self.name}")

    def with_branches(self, branches: Mapping) -> "LevelScheme":
        return replace(self, branches=tuple((as_halfint(k), float(v)) for k, v in branches.items()))

    @property
    def g_factor_muB(self) -> float:
        """``mu_B g_F`` in J/T, from ``g_F = -mu_I / (mu_B |I|)``."""
        return -self.nuclear_moment * sc.physical_constants["nuclear magneton"][0] / float(self.nuclear_spin)


@dataclass(frozen=True)
class LaserParams:
    """Control laser: intensity (W/m^2), detuning (Hz) and polarization."""

    intensity: float
    detuning: float
    polarization: Polarization = SIGMA_PLUS

    def __post_init__(self):
        if not self.intensity >= 0:
            raise ValueError("intensity must be non-negative")
        if not math.isfinite(self.detuning):
            raise ValueError("detuning must be finite")

    @classmethod
    def from_power(cls, power: float, waist: float, detuning: float,
                   polarization: Polarization = SIGMA_PLUS) -> "LaserParams":
        """Peak intensity ``2P / (pi w^2)`` of a Gaussian beam."""
        if power < 0 or waist <= 0:
            raise ValueError("power must be >= 0 and waist > 0")
        return cls(2 * power / (math.pi * waist ** 2), detuning, polarization)

    def scaled(self, factor: float) -> "LaserParams":
        return replace(self, intensity=self.intensity * factor)


def dipole_operator(scheme: LevelScheme, F_prime, q: int) -> np.ndarray:
    """Dipole matrix ``D^(q)_{FF'}`` between ground (rows) and excited (columns).

    Entry ``[m_g, m_e]`` is

        (-1)^(F'+J+1+I) sqrt((2F'+1)(2J+1)) <F m_g|F' m_e; 1 -q> {J' J 1; F F' I}

    which is nonzero only for ``m_e = m_g + q``. Both axes use ascending m.
    """
    fp = as_halfint(F_prime)
    if fp not in [b for b, _ in scheme.branches]:
        raise KeyError(f"F'={fp} is not a branch of scheme {scheme.name}")
    return _dipole(scheme.F_ground, scheme.nuclear_spin, scheme.J_ground, scheme.J_excited, fp, int(q))


_DIPOLE_CACHE: dict = {}


def _dipole(F: HalfInt, I: HalfInt, J: HalfInt, Jp: HalfInt, Fp: HalfInt, q: int) -> np.ndarray:
    key = (F, I, J, Jp, Fp, q)
    if key in _DIPOLE_CACHE:
        return _DIPOLE_CACHE[key]
    if abs(q) > 1:
        raise ValueError("q must be -1, 0 or +1")
    tv = Fp.twice_value + J.twice_value + 2 + I.twice_value
    phase = -1.0 if (tv // 2) % 2 else 1.0
    red = phase * math.sqrt(Fp.dim * J.dim) * wigner_6j(Jp, J, 1, F, Fp, I)
    mg, me = m_values(F), m_values(Fp)
    out = np.zeros((len(mg), len(me)))
    for i, a in enumerate(mg):
        for j, b in enumerate(me):
            if abs(b - a - q) < 1e-9:
                out[i, j] = red * clebsch_gordan(F, a, Fp, b, 1, -q)
    out.setflags(write=False)
    _DIPOLE_CACHE[key] = out
    return out


def _prefactor(laser: LaserParams, scheme: LevelScheme) -> float:
    """``3 pi c^2 Gamma I / (2 w0^3 hbar)`` times the scheme's scale, in rad^2/s^2."""
    return (scheme.lightshift_scale * 3 * math.pi * sc.c ** 2 * scheme.gamma
            / (2 * scheme.omega0 ** 3) * laser.intensity / sc.hbar)


def _denominators(laser: LaserParams, scheme: LevelScheme) -> dict:
    out = {}
    for fp, h in scheme.branches:
        det = laser.detuning - h
        if abs(det) < 1e-3:
            raise ResonanceError(f"detuning {laser.detuning} Hz is resonant with F'={fp}")
        out[fp] = 2 * math.pi * det
    return out


def lightshift_matrix(laser: LaserParams, scheme: LevelScheme) -> np.ndarray:
    """Full lightshift operator (rad/s) in the laser frame before dropping off-diagonals.

    Each polarization component contributes with its own intensity
    ``I |e_q|^2``, so components do not interfere.
    """
    w = polarization_weights(laser.polarization)
    pref = _prefactor(laser, scheme)
    dens = _denominators(laser, scheme)
    n = scheme.dim
    out = np.zeros((n, n))
    if pref == 0:
        return out
    for fp, _ in scheme.branches:
        for q, wq in w.items():
            if wq == 0:
                continue
            D = dipole_operator(scheme, fp, q)
            out += wq * (D @ D.T) / dens[fp]
    return pref * out


def lightshift_spectrum(laser: LaserParams, scheme: LevelScheme) -> np.ndarray:
    """Diagonal lightshifts ``delta_k`` (rad/s), index k <-> m_F = -F + k.

    Raises
    ------
    ResonanceError
        If the detuning hits an excited branch.
    """
    M = lightshift_matrix(laser, scheme)
    diag = np.diag(M).copy()
    off = M - np.diag(diag)
    norm = np.linalg.norm(diag)
    if norm > 0 and np.linalg.norm(off) > 1e-10 * norm:
        raise RuntimeError("lightshift operator is not diagonal")
    return diag


def dls_vector(spectrum: Sequence[float]) -> np.ndarray:
    """Differential lightshifts ``Delta_{k+1} = delta_{k+1} - delta_k``."""
    return np.diff(np.asarray(spectrum, dtype=float))


def spectrum_from_dls(dls: Sequence[float], offset: float = 0.0) -> np.ndarray:
    """Inverse of :func:`dls_vector` with ``delta_0 = offset``."""
    return offset + np.concatenate([[0.0], np.cumsum(dls)])


def rabi_scale(laser: LaserParams, scheme: LevelScheme) -> float:
    """Resonant Rabi scale ``Gamma sqrt(I / (2 I_sat))`` in rad/s.

    ``I_sat = pi h c Gamma / (3 lambda^3)`` is the two-level saturation
    intensity; individual transitions are weighted by dipole elements.
    """
    lam = scheme.wavelength
    i_sat = math.pi * sc.h * sc.c * scheme.gamma / (3 * lam ** 3)
    return scheme.gamma * math.sqrt(laser.intensity / (2 * i_sat))


def stretched_element(scheme: LevelScheme) -> float:
    """Dipole element of the stretched sigma+ transition to the highest branch."""
    fp = max(b for b, _ in scheme.branches)
    D = dipole_operator(scheme, fp, +1)
    return float(abs(D[-1, -1]))


def scattering_strength(laser: LaserParams, scheme: LevelScheme) -> float:
    """Photon-scattering rate estimate ``Gamma Omega_L^2 / (Delta_L + Gamma/2)^2`` in 1/s.

    ``Omega_L`` is half the Rabi scale times the stretched-transition
    dipole element and ``Delta_L`` is the detuning in rad/s.
    """
    om = 0.5 * rabi_scale(laser, scheme) * stretched_element(scheme)
    return scheme.gamma * om ** 2 / (2 * math.pi * laser.detuning + scheme.gamma / 2) ** 2


# ---------------------------------------------------------------- constants


def constants_path(path: Optional[str | os.PathLike] = None) -> Path:
    """Constants file in use: explicit path, then ``$SPINCAT_CONSTANTS``, then packaged default."""
    if path is not None:
        return Path(path)
    env = os.environ.get(CONSTANTS_ENV)
    if env:
        return Path(env)
    return Path(str(resources.files("spincat") / "data" / "constants.ini"))


def constants_hash(path: Optional[str | os.PathLike] = None) -> str:
    return hashlib.sha256(constants_path(path).read_bytes()).hexdigest()


def load_constants(path: Optional[str | os.PathLike] = None) -> dict[str, LevelScheme]:
    """Parse every level scheme in a constants file."""
    p = constants_path(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    with open(p) as fh:
        cp.read_file(fh)
    out = {}
    for sec in cp.sections():
        s = cp[sec]
        branches = tuple((as_halfint(k[4:]), float(v)) for k, v in s.items() if k.startswith("hfs_"))
        lam = float(s["wavelength_m"])
        out[sec] = LevelScheme(
            name=sec,
            F_ground=as_halfint(s["ground_F"]),
            nuclear_spin=as_halfint(s["nuclear_spin"]),
            J_ground=as_halfint(s.get("J_ground", "0")),
            J_excited=as_halfint(s.get("J_excited", "1")),
            branches=branches,
            gamma=2 * math.pi * float(s["linewidth_hz"]),
            omega0=2 * math.pi * sc.c / lam,
            nuclear_moment=float(s.get("nuclear_moment_muN", "0")),
            lightshift_scale=float(s.get("lightshift_scale", "1")),
        )
    return out


def load_scheme(name: str = "173Yb", path: Optional[str | os.PathLike] = None) -> LevelScheme:
    schemes = load_constants(path)
    if name not in schemes:
        raise KeyError(f"scheme {name!r} not found in {constants_path(path)}")
    return schemes[name]
