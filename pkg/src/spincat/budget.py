"""Error budget: one technical noise source at a time through simulated RB.

Every source perturbs the calibrated pulse configuration of
:func:`spincat.benchmark.nominal_config`. Fluctuating sources (intensity,
polarization, frequency) are Gaussian. Intensity and polarization drift
from shot to shot, so one draw holds for a whole circuit
(``correlation="circuit"``); the frequency spread is a laser linewidth, so
every pulse sees an independent draw (``"pulse"``). The exact mode integrates over the draw with tensor
Gauss-Hermite nodes, so budgets are deterministic; :func:`sample_noise`
gives the matching random draw.

Beams are referred to by role. The ``cat`` beam drives the cat pulse and
the ``su2`` beam drives covariant rotations (the X(pi) pulse in DRB, the
light-shift Z pulse in CRB). The larger polarization fluctuation
(3.1 deg azimuth, 0.13 deg ellipticity) sits on the cat beam for CRB and on
the su2 beam for DRB; the smaller one (0.8 deg, 0.02 deg) on the other.
"""

from __future__ import annotations

import csv
import enum
import itertools
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .atom import LevelScheme, Polarization, load_scheme
from .benchmark import (
    BeamConfig,
    PhysicalConfig,
    PhysicalNoise,
    clifford_fidelity,
    extract_bias,
    nominal_config,
    simulate_rb,
)

__all__ = [
    "NoiseKind",
    "NoiseSource",
    "BudgetEntry",
    "REFERENCE_BUDGET",
    "default_sources",
    "sample_noise",
    "noise_nodes",
    "noise_model",
    "combined_noise",
    "control_noise",
    "source_config",
    "simulate_budget",
    "total_quadrature",
    "write_budget_csv",
    "write_budget_json",
]

DEG = math.pi / 180


class NoiseKind(enum.Enum):
    INTENSITY = "intensity_fluct"
    POLARIZATION = "polarization_fluct"
    FREQUENCY = "frequency_fluct"
    ORTHOGONALITY = "orthogonality"
    ZEEMAN = "zeeman"
    DEPHASING = "dephasing"
    SCATTERING = "scattering"


# Reference values (clifford_error, p_ND, p_D) for comparison in reports.
REFERENCE_BUDGET = {
    NoiseKind.INTENSITY: (7.6e-3, 5.5e-8, 8.1e-6),
    NoiseKind.POLARIZATION: (5.6e-2, 1.8e-3, 4.8e-3),
    NoiseKind.FREQUENCY: (7.1e-5, 5.1e-8, 2.1e-6),
    NoiseKind.ORTHOGONALITY: (3.4e-3, 6.8e-4, 2.0e-3),
    NoiseKind.ZEEMAN: (5.0e-3, 3.1e-4, 1.2e-3),
    NoiseKind.DEPHASING: (5.8e-4, 3.1e-7, 7.5e-4),
    NoiseKind.SCATTERING: (7.8e-4, 7.7e-8, 3.4e-5),
}

_POL_LARGE = {"phi": 3.1 * DEG, "chi": 0.13 * DEG}
_POL_SMALL = {"phi": 0.8 * DEG, "chi": 0.02 * DEG}


def _defaults(kind: "NoiseKind", protocol: str) -> dict:
    if kind is NoiseKind.INTENSITY:
        return {"sigma_cat": 0.0056, "sigma_su2": 0.002}
    if kind is NoiseKind.POLARIZATION:
        cat, su2 = (_POL_LARGE, _POL_SMALL) if protocol == "crb" else (_POL_SMALL, _POL_LARGE)
        return {"phi_cat": cat["phi"], "chi_cat": cat["chi"], "phi_su2": su2["phi"], "chi_su2": su2["chi"]}
    if kind is NoiseKind.FREQUENCY:
        return {"sigma_cat": 1e6, "sigma_su2": 1e6}
    if kind is NoiseKind.ORTHOGONALITY:
        return {"tilt": 2 * DEG}
    if kind is NoiseKind.DEPHASING:
        return {"T2_coefficient": 0.251}
    return {}


# fluctuating parameters and the beam role each one acts on
_GAUSSIAN = {
    NoiseKind.INTENSITY: (("sigma_cat", "cat"), ("sigma_su2", "su2")),
    NoiseKind.POLARIZATION: (("phi_cat", "cat"), ("chi_cat", "cat"), ("phi_su2", "su2"), ("chi_su2", "su2")),
    NoiseKind.FREQUENCY: (("sigma_cat", "cat"), ("sigma_su2", "su2")),
}


@dataclass(frozen=True)
class NoiseSource:
    """One budget row: a noise kind with optional parameter overrides.

    Angles are in radians, frequencies in Hz and intensity widths are
    relative. Parameters not given take protocol-dependent defaults (see
    :meth:`values`). ``scale`` multiplies every Gaussian width and the
    orthogonality tilt.
    """

    kind: NoiseKind
    params: dict = field(default_factory=dict)
    scale: float = 1.0
    correlation: Optional[str] = None

    def __post_init__(self):
        kind = NoiseKind(self.kind)
        object.__setattr__(self, "kind", kind)
        allowed = set(_defaults(kind, "crb"))
        unknown = set(self.params) - allowed
        if unknown:
            raise ValueError(f"unknown parameters for {kind.value}: {sorted(unknown)}")
        for k, v in self.params.items():
            if not v >= 0:
                raise ValueError(f"{k} must be non-negative")
        if not self.scale >= 0:
            raise ValueError("scale must be non-negative")
        if self.correlation is None:
            object.__setattr__(self, "correlation", "pulse" if kind is NoiseKind.FREQUENCY else "circuit")
        if self.correlation not in ("circuit", "pulse"):
            raise ValueError("correlation must be 'circuit' or 'pulse'")

    def values(self, protocol: str) -> dict:
        """Effective parameters for ``protocol`` ("crb" or "drb")."""
        out = _defaults(self.kind, protocol)
        out.update(self.params)
        if self.kind in _GAUSSIAN or self.kind is NoiseKind.ORTHOGONALITY:
            out = {k: v * self.scale for k, v in out.items()}
        return out

    def scaled(self, factor: float) -> "NoiseSource":
        return replace(self, scale=self.scale * factor)


def default_sources() -> list[NoiseSource]:
    return [NoiseSource(k) for k in NoiseKind]


@dataclass
class BudgetEntry:
    """Simulated errors of one source with one-sigma fit uncertainties."""

    source: str
    clifford_error: float
    p_ND: float
    p_D: float
    clifford_error_ci: float = 0.0
    p_ND_ci: float = 0.0
    p_D_ci: float = 0.0

    def as_tuple(self) -> tuple:
        return (self.clifford_error, self.p_ND, self.p_D)


def _roles(protocol: str) -> dict:
    return {"cat": "cat", "su2": "z" if protocol == "crb" else "x"}


def source_config(source: NoiseSource, protocol: str, scheme: Optional[LevelScheme] = None,
                  **kwargs) -> PhysicalConfig:
    """Nominal configuration with the deterministic part of ``source`` applied."""
    kind = source.kind
    vals = source.values(protocol)
    cfg = nominal_config(protocol, scheme, zeeman=kind is NoiseKind.ZEEMAN,
                         scattering=kind is NoiseKind.SCATTERING,
                         T2_coefficient=(vals["T2_coefficient"] if kind is NoiseKind.DEPHASING
                                         else math.inf), **kwargs)
    if kind is NoiseKind.ORTHOGONALITY:
        tilt = vals["tilt"]
        # CRB: the field stays along the Z beam; DRB: both beams are tilted
        names = ("cat",) if protocol == "crb" else ("cat", "x")
        for name in names:
            beam = getattr(cfg, name)
            if beam is not None:
                cfg = replace(cfg, **{name: replace(beam, beta=beam.beta + tilt)})
    return cfg


def _apply(cfg: PhysicalConfig, kind: NoiseKind, role: str, pname: str, value: float,
           protocol: str) -> PhysicalConfig:
    name = _roles(protocol)[role]
    beam: Optional[BeamConfig] = getattr(cfg, name)
    if beam is None or value == 0:
        return cfg
    las = beam.laser
    if kind is NoiseKind.INTENSITY:
        las = replace(las, intensity=las.intensity * max(1 + value, 0.0))
    elif kind is NoiseKind.FREQUENCY:
        las = replace(las, detuning=las.detuning + value)
    else:
        pol = las.polarization
        if pname.startswith("phi"):
            pol = Polarization(pol.phi + value, pol.chi)
        else:
            pol = Polarization(pol.phi, pol.chi + value)
        las = replace(las, polarization=pol)
    return replace(cfg, **{name: replace(beam, laser=las)})


def sample_noise(source: NoiseSource, rng, cfg: PhysicalConfig, protocol: str = "crb") -> PhysicalConfig:
    """One quasi-static draw of ``source`` applied to ``cfg``.

    Deterministic sources return ``cfg`` unchanged (their effect is part of
    :func:`source_config`). Draws are made in a fixed parameter order.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    vals = source.values(protocol)
    for pname, role in _GAUSSIAN.get(source.kind, ()):
        x = rng.normal(0.0, vals[pname]) if vals[pname] > 0 else 0.0
        cfg = _apply(cfg, source.kind, role, pname, x, protocol)
    return cfg


def noise_nodes(source: NoiseSource, cfg: PhysicalConfig, protocol: str, order: int = 5) -> list:
    """Tensor Gauss-Hermite nodes ``[(weight, config)]`` over the Gaussian parameters."""
    vals = source.values(protocol)
    pars = [(p, r) for p, r in _GAUSSIAN.get(source.kind, ()) if vals[p] > 0]
    if not pars:
        return [(1.0, cfg)]
    x, w = np.polynomial.hermite_e.hermegauss(order)
    w = w / w.sum()
    out = []
    for idx in itertools.product(range(order), repeat=len(pars)):
        c = cfg
        wt = 1.0
        for (pname, role), i in zip(pars, idx):
            c = _apply(c, source.kind, role, pname, x[i] * vals[pname], protocol)
            wt *= w[i]
        out.append((float(wt), c))
    return out


class _Sampler:
    # picklable closure for process pools
    def __init__(self, source, protocol):
        self.source, self.protocol = source, protocol

    def __call__(self, cfg, rng):
        return sample_noise(self.source, rng, cfg, self.protocol)


class _Nodes:
    def __init__(self, source, protocol, order):
        self.source, self.protocol, self.order = source, protocol, order

    def __call__(self, cfg):
        return noise_nodes(self.source, cfg, self.protocol, self.order)


def _order(source: NoiseSource) -> int:
    return 5 if len(_GAUSSIAN.get(source.kind, ())) <= 2 else 4


def noise_model(source: NoiseSource, protocol: str, mode: str = "exact", scheme=None,
                order: Optional[int] = None, correlation: Optional[str] = None, **kwargs) -> PhysicalNoise:
    """Noise ensemble of ``source`` around the nominal ``protocol`` configuration."""
    cfg = source_config(source, protocol, scheme, **kwargs)
    nodes = _Nodes(source, protocol, order or _order(source)) if mode == "exact" else None
    return PhysicalNoise(cfg, _Sampler(source, protocol), nodes, correlation or source.correlation)


class _CombinedSampler:
    def __init__(self, sources, protocol):
        self.sources, self.protocol = tuple(sources), protocol

    def __call__(self, cfg, rng):
        for src in self.sources:
            cfg = sample_noise(src, rng, cfg, self.protocol)
        return cfg


class _CombinedPulseNodes:
    def __init__(self, sources, protocol, order):
        self.sources, self.protocol, self.order = tuple(sources), protocol, order

    def __call__(self, cfg):
        nodes = [(1.0, cfg)]
        for src in self.sources:
            nodes = [(w * v, c2) for w, c in nodes for v, c2 in noise_nodes(src, c, self.protocol, self.order)]
        return nodes


def combined_noise(protocol: str, sources: Optional[Sequence[NoiseSource]] = None, scheme=None,
                   pulse_order: int = 3, **kwargs) -> PhysicalNoise:
    """All ``sources`` at once (default: every reference source).

    Circuit-correlated Gaussian sources are drawn per circuit (random
    nodes in the exact mode); pulse-correlated ones are averaged into the
    pulse channels with ``pulse_order`` Gauss-Hermite nodes per parameter.
    """
    sources = list(sources) if sources is not None else default_sources()
    kinds = {s.kind: s for s in sources}
    deph = kinds.get(NoiseKind.DEPHASING)
    cfg = nominal_config(protocol, scheme, zeeman=NoiseKind.ZEEMAN in kinds,
                         scattering=NoiseKind.SCATTERING in kinds,
                         T2_coefficient=deph.values(protocol)["T2_coefficient"] if deph else math.inf, **kwargs)
    if NoiseKind.ORTHOGONALITY in kinds:
        tilt = kinds[NoiseKind.ORTHOGONALITY].values(protocol)["tilt"]
        for name in (("cat",) if protocol == "crb" else ("cat", "x")):
            beam = getattr(cfg, name)
            if beam is not None:
                cfg = replace(cfg, **{name: replace(beam, beta=beam.beta + tilt)})
    circ = [s for s in sources if s.kind in _GAUSSIAN and s.correlation == "circuit"]
    fast = [s for s in sources if s.kind in _GAUSSIAN and s.correlation == "pulse"]
    return PhysicalNoise(cfg, _CombinedSampler(circ, protocol) if circ else None, None, "circuit",
                         _CombinedPulseNodes(fast, protocol, pulse_order) if fast else None)


def control_noise(control: str = "171Yb", reference: str = "173Yb",
                  sources: Optional[Sequence[NoiseSource]] = None, **kwargs) -> PhysicalNoise:
    """Combined DRB noise for a spin-1/2 control isotope.

    The control sees the reference's sources with two field-related
    adjustments by the magnetic-moment ratio ``r = |g_ref / g_control|``:
    the bias field is scaled by ``r`` so the Larmor frequency (and with it
    the Zeeman tilt of the X pulse) matches the reference, and the
    dephasing coefficient is scaled by ``r`` since field noise dephases in
    proportion to ``g``.
    """
    ctrl, ref = load_scheme(control), load_scheme(reference)
    r = abs(ref.g_factor_muB / ctrl.g_factor_muB)
    sources = list(sources) if sources is not None else default_sources()
    out = []
    for s in sources:
        if s.kind is NoiseKind.DEPHASING:
            T2 = s.values("drb")["T2_coefficient"] * r
            s = replace(s, params={**s.params, "T2_coefficient": T2})
        out.append(s)
    kwargs.setdefault("B", nominal_config("drb", ref).B * r)
    return combined_noise("drb", out, scheme=ctrl, **kwargs)


CRB_DEPTHS = (1, 2, 4, 8, 16, 32, 64)
DRB_DEPTHS = (1, 2, 4, 8, 16, 32, 64)


def simulate_budget(source: NoiseSource, protocol: str = "both", n_circuits: int = 50,
                    depths: Optional[Sequence[int]] = None, rng_seed: int = 0, mode: str = "exact",
                    jobs: int = 1, correlation: Optional[str] = None) -> BudgetEntry:
    """Clifford error (CRB) and ``p_ND``, ``p_D`` (DRB) of one source at CG level 2.

    Parameters
    ----------
    protocol : {"both", "crb", "drb"}
        Which columns to fill; skipped columns are NaN.
    mode : {"exact", "sampled"}
        Exact circuit averaging with Gauss-Hermite noise nodes, or
        ``n_circuits`` random circuits.
    correlation : {"pulse", "circuit"}, optional
        Independent draw per pulse, or one draw per circuit; defaults to
        the source's own setting.
    """
    if protocol not in ("both", "crb", "drb"):
        raise ValueError("protocol must be 'both', 'crb' or 'drb'")
    nan = float("nan")
    ce = ce_ci = pnd = pnd_ci = pd = pd_ci = nan
    if protocol in ("both", "crb"):
        nm = noise_model(source, "crb", mode, correlation=correlation)
        r = simulate_rb("crb", depths or CRB_DEPTHS, n_circuits, nm, 2, rng_seed, mode, jobs=jobs)
        p = min(r.fit.p, 1.0)
        ce = 1 - clifford_fidelity(p)
        ce_ci = r.fit.p_err / 2
    if protocol in ("both", "drb"):
        nm = noise_model(source, "drb", mode, correlation=correlation)
        rz = simulate_rb("drb_z", depths or DRB_DEPTHS, n_circuits, nm, 2, rng_seed + 1, mode, jobs=jobs)
        rx = simulate_rb("drb_x", depths or DRB_DEPTHS, n_circuits, nm, 2, rng_seed + 2, mode, jobs=jobs)
        b = extract_bias(min(rz.fit.p, 1.0), min(rx.fit.p, 1.0), 1, rz.fit.p_err, rx.fit.p_err)
        pnd, pnd_ci, pd, pd_ci = b.p_ND, b.p_ND_err, b.p_D, b.p_D_err
    return BudgetEntry(source.kind.value, ce, pnd, pd, ce_ci, pnd_ci, pd_ci)


def total_quadrature(entries: Sequence[BudgetEntry]) -> BudgetEntry:
    """Root-sum-square of every column."""
    if not entries:
        raise ValueError("no entries")
    col = lambda a: float(math.sqrt(sum(getattr(e, a) ** 2 for e in entries)))  # noqa: E731
    return BudgetEntry("total", col("clifford_error"), col("p_ND"), col("p_D"),
                       col("clifford_error_ci"), col("p_ND_ci"), col("p_D_ci"))


_COLUMNS = ("source", "clifford_error", "clifford_error_ci", "p_ND", "p_ND_ci", "p_D", "p_D_ci")


def write_budget_csv(path, entries: Sequence[BudgetEntry]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_COLUMNS)
        for e in entries:
            d = asdict(e)
            w.writerow([d["source"]] + [f"{d[c]:.6e}" for c in _COLUMNS[1:]])


def write_budget_json(path, entries: Sequence[BudgetEntry], extra: Optional[dict] = None) -> None:
    payload = {"entries": [asdict(e) for e in entries]}
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
