"""Spherical tensor operators and the rank-preserving gate criterion.

Errors on a spin-F cat qubit are expanded in spherical tensors
``T^(k)_q``. Up to ``K = floor((2F-1)/2)`` hopping errors are correctable,
so a gate is rank preserving if it maps every operator of rank ``k <= K``
into the span of ranks ``<= K``. Covariant SU(2) rotations do this
exactly; the non-linear cat gate does not.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .wigner import Number, RotationAngles, as_halfint, clebsch_gordan, m_values, rotation_matrix

__all__ = [
    "SphericalTensor",
    "CorrectableErrorSet",
    "RankCheck",
    "spherical_tensor",
    "tensor_basis",
    "symmetric_antisymmetric",
    "correctable_errors",
    "rank_decompose",
    "rank_weights",
    "is_rank_preserving",
    "logical_action_of_rotation",
    "hadamard_fidelity",
    "hadamard_surface",
    "write_surface_csv",
]


@dataclass(frozen=True)
class SphericalTensor:
    """Unit-norm spherical tensor component ``T^(k)_q`` on spin ``F``."""

    k: int
    q: int
    matrix: np.ndarray


def spherical_tensor(F: Number, k: int, q: int) -> SphericalTensor:
    """``<F m'|T^(k)_q|F m> = sqrt((2k+1)/(2F+1)) <F m; k q|F m'>``.

    The prefactor gives ``Tr(T^dag T) = 1``.
    """
    F = as_halfint(F)
    if not (0 <= k <= F.twice_value and abs(q) <= k):
        raise ValueError(f"need 0 <= k <= 2F and |q| <= k, got k={k}, q={q}")
    m = m_values(F)
    n = len(m)
    T = np.zeros((n, n))
    norm = math.sqrt((2 * k + 1) / n)
    for j, mm in enumerate(m):
        i = j + q  # m' = m + q
        if 0 <= i < n:
            T[i, j] = norm * clebsch_gordan(F, m[i], F, mm, k, q)
    return SphericalTensor(k, q, T.astype(complex))


def tensor_basis(F: Number) -> list[SphericalTensor]:
    """All ``(2F+1)^2`` components ordered by ``k`` then ``q``."""
    F = as_halfint(F)
    return [spherical_tensor(F, k, q) for k in range(F.twice_value + 1) for q in range(-k, k + 1)]


def symmetric_antisymmetric(F: Number, k: int, q: int) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """``S = (T_q + (-1)^k T_-q)/sqrt 2`` and ``A = (T_q - (-1)^k T_-q)/sqrt 2``.

    For ``q = 0`` only ``S_0 = T_0`` exists and ``A`` is returned as None.
    """
    if q == 0:
        return spherical_tensor(F, k, 0).matrix, None
    if not 1 <= q <= k:
        raise ValueError("need 1 <= q <= k")
    tp = spherical_tensor(F, k, q).matrix
    tm = spherical_tensor(F, k, -q).matrix
    s = (-1) ** k
    return (tp + s * tm) / math.sqrt(2), (tp - s * tm) / math.sqrt(2)


@dataclass(frozen=True)
class CorrectableErrorSet:
    """Operators ``S^(k)_q``, ``A^(k)_q`` with ``k <= K``."""

    K: int
    basis: tuple


def correctable_errors(F: Number) -> CorrectableErrorSet:
    F = as_halfint(F)
    K = (F.twice_value - 1) // 2
    ops = []
    for k in range(K + 1):
        ops.append(symmetric_antisymmetric(F, k, 0)[0])
        for q in range(1, k + 1):
            ops.extend(symmetric_antisymmetric(F, k, q))
    return CorrectableErrorSet(K, tuple(ops))


def rank_decompose(op: np.ndarray) -> dict[tuple[int, int], complex]:
    """Hilbert-Schmidt coefficients ``c_kq = Tr(T_kq^dag op)``."""
    op = np.asarray(op, dtype=complex)
    n = op.shape[0]
    if op.shape != (n, n):
        raise ValueError("operator must be square")
    F = as_halfint((n - 1) / 2)
    return {(T.k, T.q): complex(np.vdot(T.matrix, op)) for T in tensor_basis(F)}


def rank_weights(op: np.ndarray) -> np.ndarray:
    """Squared coefficient weight per rank ``k``."""
    c = rank_decompose(op)
    kmax = max(k for k, _ in c)
    w = np.zeros(kmax + 1)
    for (k, _), v in c.items():
        w[k] += abs(v) ** 2
    return w


@dataclass(frozen=True)
class RankCheck:
    preserving: bool
    leakage: float


def is_rank_preserving(U: np.ndarray, K: Optional[int] = None, tol: float = 1e-10) -> RankCheck:
    """Check ``U E U^dag`` stays within ranks ``<= K`` for every correctable ``E``.

    The leakage of one ``E`` is the Hilbert-Schmidt weight fraction of
    ranks ``> K``; the largest over the basis is reported.
    """
    U = np.asarray(U, dtype=complex)
    n = U.shape[0]
    if np.abs(U.conj().T @ U - np.eye(n)).max() > 1e-10:
        raise ValueError("U is not unitary")
    errs = correctable_errors((n - 1) / 2)
    if K is None:
        K = errs.K
    leak = 0.0
    for E in errs.basis:
        w = rank_weights(U @ E @ U.conj().T)
        leak = max(leak, float(w[K + 1:].sum() / w.sum()))
    return RankCheck(leak <= tol, leak)


def logical_action_of_rotation(F: Number, angles: RotationAngles, tol: float = 1e-10) -> Optional[np.ndarray]:
    """2x2 action of a spin rotation on ``{|-F>, |+F>}``, or None if it leaves the code.

    The logical basis is ``|0_L> = |-F>``, ``|1_L> = |+F>``.
    """
    U = rotation_matrix(F, angles)
    idx = [0, U.shape[0] - 1]
    cols = U[:, idx]
    outside = np.delete(cols, idx, axis=0)
    if outside.size and np.abs(outside).max() > tol:
        return None
    return cols[idx, :]


def hadamard_fidelity(F: Number, alpha, beta):
    """Overlap of a rotated ``|-F>`` with the cat state ``(|-F> + |+F>)/sqrt 2``.

    ``(1/2) |cos^2F(beta/2) + exp(-2iF alpha) (-1)^2F sin^2F(beta/2)|^2``;
    broadcasts over ``alpha`` and ``beta``.
    """
    F = as_halfint(F)
    tf = F.twice_value
    a, b = np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float)
    amp = np.cos(b / 2) ** tf + np.exp(-1j * tf * a) * (-1) ** tf * np.sin(b / 2) ** tf
    return 0.5 * np.abs(amp) ** 2


def hadamard_surface(F: Number, n_alpha: int = 200, n_beta: int = 200):
    """Fidelity on the half-open grid ``[0, 2 pi) x [0, pi)``; returns ``(alpha, beta, fid)``.

    Even grid sizes contain ``alpha = pi`` and ``beta = pi/2``.
    """
    a = np.arange(n_alpha) * (2 * math.pi / n_alpha)
    b = np.arange(n_beta) * (math.pi / n_beta)
    A, B = np.meshgrid(a, b, indexing="ij")
    return A, B, hadamard_fidelity(F, A, B)


def write_surface_csv(path, alpha, beta, fid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "beta", "fidelity"])
        for a, b, f in zip(np.ravel(alpha), np.ravel(beta), np.ravel(fid)):
            w.writerow([f"{a:.10g}", f"{b:.10g}", f"{f:.12g}"])
