"""Angular-momentum algebra for half-integer spins.

Wigner 3j and 6j symbols, Clebsch-Gordan coefficients and the Wigner
small-d / D rotation matrices, with the Condon-Shortley phase convention.

Quantum numbers are carried as :class:`HalfInt`, which stores twice the
value so that only integers and half-integers can be represented. The
public functions also accept plain ints, floats and ``Fraction`` values
and convert them on entry.

Matrices built here use ascending magnetic order: row/column index ``k``
corresponds to ``m = -j + k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Union

import numpy as np

__all__ = [
    "HalfInt",
    "RotationAngles",
    "as_halfint",
    "m_values",
    "wigner_3j",
    "wigner_6j",
    "clebsch_gordan",
    "wigner_small_d",
    "small_d_matrix",
    "wigner_D",
    "rotation_matrix",
    "spin_operators",
]



@dataclass(frozen=True, order=True)
class HalfInt:
    """Exact integer or half-integer quantum number.

    Parameters
    ----------
    twice_value : int
        Twice the represented number, e.g. ``HalfInt(5)`` is 5/2.
    """

    twice_value: int

    def __post_init__(self):
        if not isinstance(self.twice_value, (int, np.integer)):
            raise TypeError("twice_value must be an integer")
        object.__setattr__(self, "twice_value", int(self.twice_value))

    @classmethod
    def from_value(cls, x) -> "HalfInt":
        return as_halfint(x)

    def __float__(self) -> float:
        return self.twice_value / 2

    def __int__(self) -> int:
        if self.twice_value % 2:
            raise ValueError(f"{self} is not an integer")
        return self.twice_value // 2

    @property
    def value(self) -> Fraction:
        return Fraction(self.twice_value, 2)

    @property
    def is_integer(self) -> bool:
        return self.twice_value % 2 == 0

    @property
    def dim(self) -> int:
        """Multiplet dimension 2j+1."""
        return self.twice_value + 1

    def __neg__(self) -> "HalfInt":
        return HalfInt(-self.twice_value)

    def __add__(self, other) -> "HalfInt":
        return HalfInt(self.twice_value + as_halfint(other).twice_value)

    __radd__ = __add__

    def __sub__(self, other) -> "HalfInt":
        return HalfInt(self.twice_value - as_halfint(other).twice_value)

    def __rsub__(self, other) -> "HalfInt":
        return HalfInt(as_halfint(other).twice_value - self.twice_value)

    def __eq__(self, other) -> bool:
        if isinstance(other, HalfInt):
            return self.twice_value == other.twice_value
        try:
            return self.twice_value == as_halfint(other).twice_value
        except (TypeError, ValueError):
            return NotImplemented

    def __hash__(self) -> int:
        return hash(("HalfInt", self.twice_value))

    def __repr__(self) -> str:
        if self.twice_value % 2:
            return f"HalfInt({self.twice_value}/2)"
        return f"HalfInt({self.twice_value // 2})"

    def __str__(self) -> str:
        if self.twice_value % 2:
            return f"{self.twice_value}/2"
        return str(self.twice_value // 2)


Number = Union[HalfInt, int, float, Fraction, str]


def as_halfint(x: Number) -> HalfInt:
    """Convert ``x`` to :class:`HalfInt`.

    Strings such as ``"5/2"`` or ``"-3/2"`` are accepted. Raises
    ``ValueError`` if ``x`` is not an integer or half-integer.
    """
    if isinstance(x, HalfInt):
        return x
    if isinstance(x, str):
        x = Fraction(x.strip())
    if isinstance(x, (bool,)):
        raise TypeError("bool is not a quantum number")
    if isinstance(x, (int, np.integer)):
        return HalfInt(2 * int(x))
    if isinstance(x, Fraction):
        tv = 2 * x
        if tv.denominator != 1:
            raise ValueError(f"{x} is not a half-integer")
        return HalfInt(int(tv))
    xf = float(x)
    tv = round(2 * xf)
    if not math.isfinite(xf) or abs(2 * xf - tv) > 1e-9:
        raise ValueError(f"{x} is not a half-integer")
    return HalfInt(int(tv))


def m_values(j: Number) -> np.ndarray:
    """Magnetic quantum numbers ``-j, ..., +j`` as floats (ascending)."""
    j = as_halfint(j)
    if j.twice_value < 0:
        raise ValueError("spin must be non-negative")
    return np.array([(-j.twice_value + 2 * k) / 2 for k in range(j.dim)])


@lru_cache(maxsize=None)
def _fact(n: int) -> int:
    if n < 0:
        raise ValueError("negative factorial")
    return math.factorial(n)


def _check_spin(*js: HalfInt) -> None:
    for j in js:
        if j.twice_value < 0:
            raise ValueError(f"negative angular momentum {j} is invalid")


def _triangle(a: int, b: int, c: int) -> bool:
    """Triangle rule on twice-values, including integer perimeter."""
    return (a + b + c) % 2 == 0 and abs(a - b) <= c <= a + b


def _delta_sq(a: int, b: int, c: int) -> Fraction:
    """Triangle coefficient squared, arguments are twice-values."""
    return Fraction(
        _fact((a + b - c) // 2) * _fact((a - b + c) // 2) * _fact((-a + b + c) // 2),
        _fact((a + b + c) // 2 + 1),
    )


def _signed_sqrt(x: Fraction, sign: int) -> float:
    return sign * math.sqrt(x.numerator / x.denominator) if x else 0.0


@lru_cache(maxsize=65536)
def _three_j(j1: int, j2: int, j3: int, m1: int, m2: int, m3: int) -> float:
    if m1 + m2 + m3 != 0:
        return 0.0
    if not _triangle(j1, j2, j3):
        return 0.0
    for j, m in ((j1, m1), (j2, m2), (j3, m3)):
        if abs(m) > j or (j - m) % 2:
            return 0.0
    # Racah formula on exact integers (all arguments are twice-values).
    pref = _delta_sq(j1, j2, j3) * (
        _fact((j1 + m1) // 2) * _fact((j1 - m1) // 2)
        * _fact((j2 + m2) // 2) * _fact((j2 - m2) // 2)
        * _fact((j3 + m3) // 2) * _fact((j3 - m3) // 2)
    )
    kmin = max(0, (j2 - j3 - m1) // 2, (j1 - j3 + m2) // 2)
    kmax = min((j1 + j2 - j3) // 2, (j1 - m1) // 2, (j2 + m2) // 2)
    total = Fraction(0)
    for k in range(kmin, kmax + 1):
        den = (
            _fact(k) * _fact((j1 + j2 - j3) // 2 - k) * _fact((j1 - m1) // 2 - k)
            * _fact((j2 + m2) // 2 - k) * _fact((j3 - j2 + m1) // 2 + k)
            * _fact((j3 - j1 - m2) // 2 + k)
        )
        total += Fraction((-1) ** k, den)
    if total == 0:
        return 0.0
    phase = -1 if ((j1 - j2 - m3) // 2) % 2 else 1
    # value = phase * sqrt(pref) * total, combined under one square root
    sq = pref * total * total
    return _signed_sqrt(sq, phase * (1 if total > 0 else -1))


def wigner_3j(j1: Number, j2: Number, j3: Number, m1: Number, m2: Number, m3: Number) -> float:
    """Wigner 3j symbol ``(j1 j2 j3; m1 m2 m3)``.

    Returns 0 when a selection rule (triangle, m-sum, |m| <= j) fails.
    Negative angular momenta raise ``ValueError``.

    Examples
    --------
    >>> round(wigner_3j(0.5, 0.5, 0, 0.5, -0.5, 0), 12)
    0.707106781187
    """
    j1, j2, j3 = (as_halfint(j) for j in (j1, j2, j3))
    _check_spin(j1, j2, j3)
    m1, m2, m3 = (as_halfint(m) for m in (m1, m2, m3))
    return _three_j(j1.twice_value, j2.twice_value, j3.twice_value,
                    m1.twice_value, m2.twice_value, m3.twice_value)


@lru_cache(maxsize=65536)
def _six_j(a: int, b: int, c: int, d: int, e: int, f: int) -> float:
    triads = ((a, b, c), (a, e, f), (d, b, f), (d, e, c))
    if not all(_triangle(*t) for t in triads):
        return 0.0
    pref = Fraction(1)
    for t in triads:
        pref *= _delta_sq(*t)
    sums = [sum(t) // 2 for t in triads]
    tops = [(a + b + d + e) // 2, (a + c + d + f) // 2, (b + c + e + f) // 2]
    total = Fraction(0)
    for t in range(max(sums), min(tops) + 1):
        den = _fact(tops[0] - t) * _fact(tops[1] - t) * _fact(tops[2] - t)
        for s in sums:
            den *= _fact(t - s)
        total += Fraction((-1) ** t * _fact(t + 1), den)
    if total == 0:
        return 0.0
    return _signed_sqrt(pref * total * total, 1 if total > 0 else -1)


def wigner_6j(j1: Number, j2: Number, j3: Number, j4: Number, j5: Number, j6: Number) -> float:
    """Wigner 6j symbol ``{j1 j2 j3; j4 j5 j6}`` (Racah sum formula).

    Returns 0 if any of the four triads violates the triangle rule.
    """
    js = [as_halfint(j) for j in (j1, j2, j3, j4, j5, j6)]
    _check_spin(*js)
    return _six_j(*(j.twice_value for j in js))


def clebsch_gordan(F: Number, m_g: Number, F_prime: Number, m_e: Number,
                   one: Number = 1, minus_q: Number = 0) -> float:
    """Clebsch-Gordan coefficient ``<F m_g | F' m_e; 1 -q>``.

    Evaluated through the 3j relation

        (-1)^(F' - 1 + m_g) sqrt(2F + 1) (F' 1 F; m_e -q -m_g)

    with ``minus_q`` the projection ``-q`` of the rank-one coupling.
    Zero unless ``m_g = m_e - q``.
    """
    F, m_g, F_prime, m_e, one, minus_q = (
        as_halfint(x) for x in (F, m_g, F_prime, m_e, one, minus_q))
    tv = F_prime.twice_value - one.twice_value + m_g.twice_value
    if tv % 2:
        return 0.0
    phase = -1.0 if (tv // 2) % 2 else 1.0
    return phase * math.sqrt(F.dim) * wigner_3j(F_prime, one, F, m_e, minus_q, -m_g)


@lru_cache(maxsize=65536)
def _small_d_coeffs(j: int, mp: int, m: int) -> tuple:
    """Factorial-sum terms of d^j_{m'm} as (coefficient, cos power, sin power)."""
    jpm = (j + mp) // 2
    jmm_p = (j - mp) // 2
    jpm_ = (j + m) // 2
    jmm_ = (j - m) // 2
    root = math.sqrt(_fact(jpm) * _fact(jmm_p) * _fact(jpm_) * _fact(jmm_))
    dm = (mp - m) // 2
    out = []
    for s in range(max(0, -dm), min(jpm_, jmm_p) + 1):
        den = _fact(jpm_ - s) * _fact(s) * _fact(dm + s) * _fact(jmm_p - s)
        sign = -1.0 if (dm + s) % 2 else 1.0
        cos_pow = (2 * j + m - mp) // 2 - 2 * s
        sin_pow = dm + 2 * s
        out.append((sign * root / den, cos_pow, sin_pow))
    return tuple(out)


def wigner_small_d(k: Number, m_prime: Number, m: Number, beta: float) -> float:
    """Wigner small-d element ``d^k_{m'm}(beta) = <k m'| exp(-i beta J_y) |k m>``.

    Uses the explicit factorial sum, restricted to terms whose factorial
    arguments are non-negative.
    """
    k, m_prime, m = as_halfint(k), as_halfint(m_prime), as_halfint(m)
    _check_spin(k)
    j, mp, mm = k.twice_value, m_prime.twice_value, m.twice_value
    if abs(mp) > j or abs(mm) > j or (j - mp) % 2 or (j - mm) % 2:
        raise ValueError("|m| must not exceed k and k - m must be integral")
    c, s = math.cos(beta / 2), math.sin(beta / 2)
    return float(sum(coef * c ** cp * s ** sp for coef, cp, sp in _small_d_coeffs(j, mp, mm)))


def small_d_matrix(k: Number, beta: float) -> np.ndarray:
    """Full small-d matrix in ascending-m order."""
    k = as_halfint(k)
    j = k.twice_value
    n = k.dim
    c, s = math.cos(beta / 2), math.sin(beta / 2)
    out = np.empty((n, n))
    for a in range(n):
        mp = -j + 2 * a
        for b in range(n):
            mm = -j + 2 * b
            out[a, b] = sum(coef * c ** cp * s ** sp
                            for coef, cp, sp in _small_d_coeffs(j, mp, mm))
    return out


@dataclass(frozen=True)
class RotationAngles:
    """Euler angles (z-y-z convention) in radians."""

    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(x) for x in (self.alpha, self.beta, self.gamma)):
            raise ValueError("rotation angles must be finite")


def wigner_D(k: Number, q_prime: Number, q: Number, angles: RotationAngles) -> complex:
    """Wigner D element ``exp(-i(q' alpha + q gamma)) d^k_{q'q}(beta)``."""
    qp, qq = float(as_halfint(q_prime)), float(as_halfint(q))
    phase = np.exp(-1j * (qp * angles.alpha + qq * angles.gamma))
    return complex(phase * wigner_small_d(k, q_prime, q, angles.beta))


def rotation_matrix(F: Number, angles: RotationAngles) -> np.ndarray:
    """Unitary ``D^F(alpha, beta, gamma)`` in ascending-m order."""
    F = as_halfint(F)
    if F.twice_value < 1 and F.twice_value != 0:
        raise ValueError("F must be non-negative")
    m = m_values(F)
    d = small_d_matrix(F, angles.beta)
    return np.exp(-1j * angles.alpha * m)[:, None] * d * np.exp(-1j * angles.gamma * m)[None, :]


def spin_operators(F: Number) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dense ``(J_x, J_y, J_z)`` for spin ``F`` in ascending-m order (hbar = 1)."""
    m = m_values(F)
    f = float(as_halfint(F))
    # J+ |m> = sqrt(f(f+1) - m(m+1)) |m+1>; |m+1> is the next row down.
    jp = np.diag(np.sqrt(f * (f + 1) - m[:-1] * (m[:-1] + 1)), -1)
    jx = (jp + jp.T) / 2
    jy = (jp - jp.T) / 2j
    return jx.astype(complex), jy, np.diag(m).astype(complex)
