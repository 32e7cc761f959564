"""DLS conditions for the X and cat gates and the detuning scanner.

A spectrum ``delta_k`` rotated by ``d(pi/2)`` realizes

* ``R_x(pi)`` (all-ones antidiagonal up to a global phase) when every
  DLS ``Delta_k`` is an odd multiple ``o_k = 2 n_k + 1`` of one common
  positive scale ``s``, at ``t = o_1 pi / Delta_1``;
* ``R_x^cat(pi/2) = (I +/- i X_F) / sqrt(2)`` when the odd multiples
  alternate modulo 4, ``o_k = 4 n_k -/+ (-1)^(k+1)``, at
  ``t = o_1 pi / (2 Delta_1)``.

The "minus" pattern (7:9:11:13:15) gives ``(I + i X_F)/sqrt(2)`` and the
"plus" pattern gives ``(I - i X_F)/sqrt(2)``. Both count as the cat gate.
"""

from __future__ import annotations

import csv
import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .atom import LaserParams, LevelScheme, ResonanceError, dls_vector, lightshift_spectrum
from .dynamics import (
    FieldConfig,
    LindbladPropagator,
    _vec,
    stretched_state,
    rotated_hamiltonian,
    scattering_collapse,
    state_fidelity,
    evolve,
)

__all__ = [
    "GateTarget",
    "DLSCondition",
    "ScanRow",
    "ScanResult",
    "check_x_condition",
    "check_cat_condition",
    "check_condition",
    "gate_time",
    "fundamental_frequencies",
    "sigma_x",
    "sigma_h",
    "ideal_gate",
    "target_states",
    "gate_infidelity",
    "GateEvaluator",
    "scan_detuning",
    "refine_minimum",
    "intensity_for_gate_time",
    "exact_detuning",
    "write_scan_csv",
]


class GateTarget(enum.Enum):
    X_PI = "x"
    CAT_HALF_PI = "cat"


@dataclass(frozen=True)
class DLSCondition:
    """Integer pattern matched by a DLS vector.

    Attributes
    ----------
    target : GateTarget
    n : tuple of int
        The integers ``n_k``.
    sign : {"plus", "minus"} or None
        Cat pattern; ``None`` for the X gate.
    """

    target: GateTarget
    n: tuple
    sign: Optional[str] = None

    @property
    def odd(self) -> np.ndarray:
        """Odd multiples ``o_k`` (signed, same sign as the DLS)."""
        n = np.asarray(self.n, dtype=int)
        if self.target is GateTarget.X_PI:
            return 2 * n + 1
        alt = np.array([(-1) ** k for k in range(len(n))])  # (-1)^(k+1), k from 1
        return 4 * n + alt if self.sign == "plus" else 4 * n - alt

    @property
    def ratio(self) -> tuple:
        return tuple(int(abs(o)) for o in self.odd)

    @property
    def gate_sign(self) -> int:
        """+1 for ``(I + i X_F)/sqrt 2``, -1 for ``(I - i X_F)/sqrt 2``; 0 for X."""
        if self.target is GateTarget.X_PI:
            return 0
        return 1 if self.sign == "minus" else -1


# ---------------------------------------------------------------- conditions


def _sigma(dls: np.ndarray, odd: np.ndarray) -> float:
    # printed form: sqrt( (1/2F) sum_{k>=2} (Delta_k / (Delta_1/o_1) - o_k)^2 )
    s = dls[0] / odd[0]
    return float(math.sqrt(np.sum((dls[1:] / s - odd[1:]) ** 2) / len(dls)))


def _nearest_odd(x: np.ndarray) -> np.ndarray:
    return (2 * np.floor(x / 2) + 1).astype(int)


def _search(dls, tol: float, n_max: int, target: GateTarget) -> Optional[DLSCondition]:
    dls = np.asarray(dls, dtype=float)
    if tol <= 0 or n_max < 0:
        raise ValueError("tol must be positive and n_max non-negative")
    if dls.size == 0 or dls[0] == 0 or not np.all(np.isfinite(dls)):
        return None
    sgn = 1 if dls[0] > 0 else -1
    omax = 2 * n_max + 1 if target is GateTarget.X_PI else 4 * n_max + 1
    best, best_key = None, None
    for o1 in range(1, omax + 1, 2):
        o1 *= sgn
        s = dls[0] / o1
        odd = _nearest_odd(dls / s)
        odd[0] = o1
        if np.any(np.abs(odd) > omax):
            continue
        if _sigma(dls, odd) > tol:
            continue
        cond = _from_odd(odd, target)
        if cond is None:
            continue
        key = (sum(abs(v) for v in cond.n), cond.n)
        if best_key is None or key < best_key:
            best, best_key = cond, key
    return best


def _from_odd(odd: np.ndarray, target: GateTarget) -> Optional[DLSCondition]:
    if target is GateTarget.X_PI:
        return DLSCondition(target, tuple(int((o - 1) // 2) for o in odd))
    for sign in ("plus", "minus"):
        alt = np.array([(-1) ** k for k in range(len(odd))])
        off = alt if sign == "plus" else -alt
        rem = odd - off
        if np.all(rem % 4 == 0):
            return DLSCondition(target, tuple(int(r // 4) for r in rem), sign)
    return None


def check_x_condition(dls, tol: float = 0.02, n_max: int = 40) -> Optional[DLSCondition]:
    """Smallest odd-integer pattern ``2 n_k + 1`` proportional to ``dls``.

    Deviation is measured by :func:`sigma_x`; ties are broken by the
    smallest ``sum |n_k|``, then lexicographically.
    """
    return _search(dls, tol, n_max, GateTarget.X_PI)


def check_cat_condition(dls, tol: float = 0.02, n_max: int = 40) -> Optional[DLSCondition]:
    """Alternating ``4 n_k -/+ 1`` pattern proportional to ``dls``, or ``None``."""
    return _search(dls, tol, n_max, GateTarget.CAT_HALF_PI)


def check_condition(target: GateTarget, dls, tol: float = 0.02, n_max: int = 40) -> Optional[DLSCondition]:
    return _search(dls, tol, n_max, target)


def gate_time(target: GateTarget, dls, cond: DLSCondition) -> float:
    """Closed-form gate time in seconds (``dls`` in rad/s)."""
    dls = np.asarray(dls, dtype=float)
    if dls[0] == 0:
        raise ValueError("Delta_1 is zero")
    o1 = cond.odd[0]
    t = o1 * math.pi / dls[0]
    if target is GateTarget.CAT_HALF_PI:
        t /= 2
    if t <= 0:
        raise ValueError("condition sign does not match the DLS vector")
    return float(t)


def fundamental_frequencies(dls, cond: DLSCondition) -> np.ndarray:
    """``f_k = |Delta_k / (2 pi o_k)|`` in Hz."""
    return np.abs(np.asarray(dls, dtype=float) / (2 * math.pi * cond.odd))


def sigma_x(dls, cond: DLSCondition) -> float:
    """RMS deviation of the DLS ratios from the X pattern."""
    if cond.target is not GateTarget.X_PI:
        raise ValueError("sigma_x needs an X condition")
    return _sigma(np.asarray(dls, dtype=float), cond.odd)


def sigma_h(dls, cond: DLSCondition) -> float:
    """RMS deviation of the DLS ratios from the cat pattern."""
    if cond.target is not GateTarget.CAT_HALF_PI:
        raise ValueError("sigma_h needs a cat condition")
    return _sigma(np.asarray(dls, dtype=float), cond.odd)


# ---------------------------------------------------------------- targets


def ideal_gate(target: GateTarget, dim: int, sign: int = 1) -> np.ndarray:
    """Target unitary: ``X_F`` or ``(I + sign i X_F)/sqrt 2``."""
    X = np.fliplr(np.eye(dim)).astype(complex)
    if target is GateTarget.X_PI:
        return X
    return (np.eye(dim) + sign * 1j * X) / math.sqrt(2)


def target_states(target: GateTarget, dim: int, sign: Optional[int] = None) -> list[np.ndarray]:
    """Ideal output states from ``|0>_sc = |-F>``; both cat signs when ``sign`` is None."""
    psi0 = stretched_state(dim)
    if target is GateTarget.X_PI:
        return [ideal_gate(target, dim) @ psi0]
    signs = (1, -1) if sign is None else (sign,)
    return [ideal_gate(target, dim, s) @ psi0 for s in signs]


def unitary_infidelity(U: np.ndarray, V: np.ndarray) -> float:
    """``1 - |Tr(V^dag U) / d|^2`` (global phase ignored)."""
    d = U.shape[0]
    return float(1 - abs(np.trace(V.conj().T @ U) / d) ** 2)


def gate_infidelity(target: GateTarget, laser: LaserParams, scheme: LevelScheme, t: float,
                    noise: str = "scattering", field: FieldConfig = FieldConfig(),
                    sign: Optional[int] = None) -> float:
    """State infidelity of the gate applied to ``|0>_sc`` for a time ``t``.

    Parameters
    ----------
    noise : {"unitary", "scattering"}
        Whether photon-scattering jump operators are included.
    sign : int, optional
        Cat sign; by default the better of the two is used.
    """
    if noise not in ("unitary", "scattering"):
        raise ValueError(f"unknown noise mode {noise!r}")
    spectrum = lightshift_spectrum(laser, scheme)
    H = rotated_hamiltonian(spectrum, field, scheme)
    Cs = scattering_collapse(laser, scheme) if noise == "scattering" else []
    psi0 = stretched_state(scheme.dim)
    rho = evolve(np.outer(psi0, psi0.conj()), H, Cs, t)
    best = max(state_fidelity(np.outer(p, p.conj()), rho) for p in target_states(target, scheme.dim, sign))
    return float(max(0.0, 1.0 - best))


class GateEvaluator:
    """Fast infidelity versus time at one detuning.

    Diagonalizes the Lindblad generator once, so ``infidelity(t)`` is an
    exponential sum that can be evaluated on whole arrays of times.
    """

    def __init__(self, target: GateTarget, laser: LaserParams, scheme: LevelScheme,
                 noise: str = "scattering", field: FieldConfig = FieldConfig()):
        self.target = target
        self.spectrum = lightshift_spectrum(laser, scheme)
        self.dls = dls_vector(self.spectrum)
        H = rotated_hamiltonian(self.spectrum, field, scheme)
        Cs = scattering_collapse(laser, scheme) if noise == "scattering" else []
        prop = LindbladPropagator(H, Cs)
        psi0 = stretched_state(scheme.dim)
        self._prop = prop
        self._rho0 = np.outer(psi0, psi0.conj())
        self._proj = [_vec(np.outer(p, p.conj())).conj() for p in target_states(target, scheme.dim)]
        if prop._eig_ok:
            c = prop.Vinv @ _vec(self._rho0)
            self._amps = [(w @ prop.V) * c for w in self._proj]
            self._w = prop.w

    def infidelity(self, t) -> np.ndarray | float:
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        if self._prop._eig_ok:
            E = np.exp(np.outer(ts, self._w))
            fid = np.max([np.real(E @ a) for a in self._amps], axis=0)
        else:
            rhos = self._prop.apply(self._rho0, ts)
            fid = np.max([[np.real(w @ _vec(r)) for r in rhos] for w in self._proj], axis=0)
        out = np.clip(1.0 - fid, 0.0, 1.0)
        return float(out[0]) if np.ndim(t) == 0 else out

    def optimize_time(self, tol: float = 0.02, n_max: int = 40, grid_points: int = 4000):
        """Best time: closed form from the matched condition, else a grid search.

        Returns ``(t, infidelity, condition)``.
        """
        dls = self.dls
        if not np.all(np.isfinite(dls)) or np.all(dls == 0):
            return float("nan"), 1.0, None
        cond = check_condition(self.target, dls, tol, n_max)
        if cond is not None:
            t0 = gate_time(self.target, dls, cond)
            half = 0.25 * math.pi / abs(dls[0])
            lo, hi = max(t0 - half, 0.0), t0 + half
        else:
            tmax = 30.0 / np.min(np.abs(dls[dls != 0]))
            ts = np.linspace(tmax / grid_points, tmax, grid_points)
            f = self.infidelity(ts)
            i = int(np.argmin(f))
            step = ts[1] - ts[0]
            lo, hi = max(ts[i] - step, 0.0), ts[i] + step
        res = minimize_scalar(self.infidelity, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-6 * hi})
        t, f = float(res.x), float(res.fun)
        if cond is not None:
            f0 = self.infidelity(t0)
            if f0 < f:
                t, f = t0, f0
        return t, f, cond


# ---------------------------------------------------------------- scanning


@dataclass(frozen=True)
class ScanRow:
    detuning: float
    infidelity: float
    gate_time: float
    ratio: Optional[tuple] = None
    sigma: float = float("nan")


@dataclass
class ScanResult:
    """Scan rows, refined local minima and sub-threshold intervals (Hz)."""

    target: GateTarget
    rows: list = field(default_factory=list)
    minima: list = field(default_factory=list)
    intervals: list = field(default_factory=list)
    threshold: float = 1e-3

    def interval_of(self, detuning: float) -> Optional[tuple]:
        for a, b in self.intervals:
            if a <= detuning <= b:
                return (a, b)
        return None


def _row(target: GateTarget, laser: LaserParams, scheme: LevelScheme, det: float, tol: float,
         n_max: int) -> ScanRow:
    las = LaserParams(laser.intensity, det, laser.polarization)
    try:
        ev = GateEvaluator(target, las, scheme)
    except ResonanceError:
        return ScanRow(det, 1.0, float("nan"))
    t, f, cond = ev.optimize_time(tol, n_max)
    ratio, sig = None, float("nan")
    if cond is not None:
        ratio, sig = cond.ratio, _sigma(ev.dls, cond.odd)
    return ScanRow(det, f, t, ratio, sig)


def _rows_chunk(args) -> list:
    target, laser, scheme, dets, tol, n_max = args
    return [_row(target, laser, scheme, d, tol, n_max) for d in dets]


def _near_resonance(det: float, scheme: LevelScheme, guard: float) -> bool:
    return any(abs(det - h) < guard for _, h in scheme.branches)


def refine_minimum(target: GateTarget, laser: LaserParams, scheme: LevelScheme, lo: float, hi: float,
                   tol: float = 0.02, n_max: int = 40, xtol: float = 1e5) -> ScanRow:
    """Bounded 1D minimization of the optimal-time infidelity over ``[lo, hi]`` (Hz)."""
    res = minimize_scalar(lambda d: _row(target, laser, scheme, d, tol, n_max).infidelity,
                          bounds=(lo, hi), method="bounded", options={"xatol": xtol})
    return _row(target, laser, scheme, float(res.x), tol, n_max)


def scan_detuning(target: GateTarget, detuning_range: tuple, step: float, laser: LaserParams,
                  scheme: LevelScheme, tol: float = 0.02, n_max: int = 40, guard: float = 20e6,
                  threshold: float = 1e-3, refine_below: float = 1e-2, jobs: int = 1) -> ScanResult:
    """Scan the detuning, choosing the best gate time at each point.

    Parameters
    ----------
    detuning_range : (float, float)
        Inclusive bounds in Hz.
    step : float
        Grid spacing in Hz.
    guard : float
        Points closer than this to an excited hyperfine resonance are skipped.
    threshold : float
        Infidelity defining the reported low-error intervals.
    refine_below : float
        Grid local minima below this infidelity are refined by a bounded
        1D minimization between their neighbours.
    jobs : int
        Worker processes; the output order does not depend on it.
    """
    lo, hi = detuning_range
    out = ScanResult(target, threshold=threshold)
    if hi < lo or step <= 0:
        return out
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    dets = [lo + i * step for i in range(n)]
    dets = [d for d in dets if not _near_resonance(d, scheme, guard)]
    if not dets:
        return out
    if jobs > 1:
        size = max(1, math.ceil(len(dets) / (4 * jobs)))
        chunks = [(target, laser, scheme, dets[i:i + size], tol, n_max) for i in range(0, len(dets), size)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = [r for part in pool.map(_rows_chunk, chunks) for r in part]
    else:
        rows = _rows_chunk((target, laser, scheme, dets, tol, n_max))
    out.rows = rows
    f = np.array([r.infidelity for r in rows])
    x = np.array([r.detuning for r in rows])

    # contiguous runs below threshold, split at skipped resonance gaps
    run = None
    for i, (d, v) in enumerate(zip(x, f)):
        contiguous = i > 0 and d - x[i - 1] <= step * 1.5
        if v < threshold:
            if run is not None and contiguous:
                run[1] = d
            else:
                if run is not None:
                    out.intervals.append(tuple(run))
                run = [d, d]
        elif run is not None:
            out.intervals.append(tuple(run))
            run = None
    if run is not None:
        out.intervals.append(tuple(run))

    for i in range(1, len(rows) - 1):
        if not (f[i] <= f[i - 1] and f[i] < f[i + 1] and f[i] < refine_below):
            continue
        if x[i + 1] - x[i - 1] > 2.5 * step:
            continue
        out.minima.append(refine_minimum(target, laser, scheme, x[i - 1], x[i + 1], tol, n_max,
                                         xtol=min(1e5, step / 20)))
    return out


def intensity_for_gate_time(target: GateTarget, laser: LaserParams, scheme: LevelScheme, t_gate: float,
                            tol: float = 0.02, n_max: int = 40) -> LaserParams:
    """Rescale the intensity so the matched closed-form gate time equals ``t_gate``.

    The light shift is linear in intensity, so the gate time scales as
    ``1 / I``.
    """
    dls = dls_vector(lightshift_spectrum(laser, scheme))
    cond = check_condition(target, dls, tol, n_max)
    if cond is None:
        raise ValueError("no gate condition matched at this detuning")
    t0 = gate_time(target, dls, cond)
    return laser.scaled(t0 / t_gate)


def exact_detuning(target: GateTarget, scheme: LevelScheme, guess: float, width: float = 0.2e9,
                   tol: float = 0.02, n_max: int = 40) -> float:
    """Detuning near ``guess`` where the matched pattern holds exactly.

    The pattern found at ``guess`` is kept fixed and its RMS deviation is
    minimized over ``guess +/- width``. The DLS ratios do not depend on
    intensity, so neither does the result.
    """
    probe = LaserParams(1.0, guess)
    dls0 = dls_vector(lightshift_spectrum(probe, scheme))
    if dls0.size < 2:
        return float(guess)
    cond = check_condition(target, dls0, tol, n_max)
    if cond is None:
        raise ValueError("no gate condition matched at the starting detuning")
    odd = cond.odd

    def cost(det):
        try:
            dls = dls_vector(lightshift_spectrum(LaserParams(1.0, det), scheme))
        except ResonanceError:
            return 1e9
        return _sigma(dls, odd)

    res = minimize_scalar(cost, bounds=(guess - width, guess + width), method="bounded",
                          options={"xatol": 1.0})
    return float(res.x)


def write_scan_csv(path, result: ScanResult) -> None:
    """Minima table: index, detuning_GHz, range_GHz, infidelity, gate_time_ms, ratio."""
    rows = [m for m in result.minima if m.infidelity <= result.threshold]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "detuning_GHz", "range_GHz", "infidelity", "gate_time_ms", "ratio"])
        for i, r in enumerate(rows, 1):
            iv = result.interval_of(r.detuning)
            rng = f"{iv[0] / 1e9:.4f}~{iv[1] / 1e9:.4f}" if iv else ""
            ratio = ":".join(str(v) for v in r.ratio) if r.ratio else ""
            w.writerow([i, f"{r.detuning / 1e9:.4f}", rng, f"{r.infidelity:.3e}",
                        f"{r.gate_time * 1e3:.5g}", ratio])


def write_scan_rows_csv(path, result: ScanResult) -> None:
    """Every scanned detuning: detuning_GHz, infidelity, gate_time_ms, ratio, sigma."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["detuning_GHz", "infidelity", "gate_time_ms", "ratio", "sigma"])
        for r in result.rows:
            ratio = ":".join(str(v) for v in r.ratio) if r.ratio else ""
            w.writerow([f"{r.detuning / 1e9:.6f}", f"{r.infidelity:.6e}", f"{r.gate_time * 1e3:.6g}",
                        ratio, f"{r.sigma:.4g}"])
