"""Command-line front end: ``spincat <command> [options]``.

Every command writes its artifacts into ``--out`` (default ``.``) and
refuses to overwrite existing files unless ``--force`` is given. Failures
print ``{"error": ..., "message": ...}`` to stderr and exit nonzero.
Stochastic commands require ``--seed`` and record it together with
``git describe`` and the constants-file SHA-256 in their JSON output.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import subprocess
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__

EXIT_ERROR = 1
EXIT_USAGE = 2


class CLIError(Exception):
    """User-facing failure with a short machine-readable kind."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("UsageError", message)
        raise SystemExit(EXIT_USAGE)


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}, sort_keys=True) + "\n")


# ---------------------------------------------------------------- plumbing


def git_describe() -> str:
    """``git describe --always --dirty`` of the source tree, or ``"unknown"``."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=here,
                             capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


def provenance(args) -> dict:
    from .atom import constants_hash, constants_path

    return {
        "command": args.command,
        "seed": getattr(args, "seed", None),
        "git_describe": git_describe(),
        "constants_file": str(constants_path()),
        "constants_sha256": constants_hash(),
        "version": __version__,
    }


class Outputs:
    """Output paths under one directory with overwrite protection."""

    def __init__(self, directory, force: bool):
        self.dir = Path(directory)
        self.force = force
        self.paths: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.dir / name
        if p.exists() and not self.force:
            raise CLIError("FileExistsError", f"{p} exists; pass --force to overwrite")
        self.paths.append(p)
        return p

    def prepare(self, *names: str) -> list[Path]:
        """Reserve every name up front so nothing is written if one exists."""
        paths = [self.path(n) for n in names]
        self.dir.mkdir(parents=True, exist_ok=True)
        return paths


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and not math.isfinite(o):
        return None
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _clean(o):
    """Replace non-finite floats with None so the JSON stays standard."""
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)):
        return float(o) if math.isfinite(o) else None
    return o


def write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(payload), fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _range(text: str) -> tuple[float, float]:
    try:
        lo, hi = text.split(":")
        return float(lo), float(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _scheme(args):
    from .atom import load_scheme

    return load_scheme(args.scheme)


# ---------------------------------------------------------------- commands


def cmd_scan(args) -> dict:
    """Detuning scan for one target gate."""
    from .atom import LaserParams
    from .gatedesign import GateTarget, scan_detuning, write_scan_csv, write_scan_rows_csv

    target = {"x": GateTarget.X_PI, "cat": GateTarget.CAT_HALF_PI}[args.target]
    minima_csv, rows_csv, summary = Outputs(args.out, args.force).prepare(
        f"scan_{args.target}.csv", f"scan_{args.target}_rows.csv", f"scan_{args.target}.json")
    laser = LaserParams.from_power(args.power, args.waist, 0.0)
    res = scan_detuning(target, args.range, args.step, laser, _scheme(args), tol=args.tol,
                        threshold=args.threshold, jobs=args.jobs)
    write_scan_csv(minima_csv, res)
    write_scan_rows_csv(rows_csv, res)
    minima = [{"detuning_Hz": m.detuning, "infidelity": m.infidelity, "gate_time_s": m.gate_time,
               "ratio": list(m.ratio) if m.ratio else None}
              for m in res.minima if m.infidelity <= res.threshold]
    payload = {"provenance": provenance(args), "target": args.target, "n_points": len(res.rows),
               "minima": minima}
    write_json(summary, payload)
    return {"minima": len(minima), "points": len(res.rows)}


def _rb_noise(args, protocol: str):
    from .benchmark import ChannelNoise
    from .budget import combined_noise

    noise_name = args.noise
    if noise_name == "none":
        return None
    if noise_name == "budget":
        return combined_noise(protocol, scheme=_scheme(args))
    if noise_name.startswith("depolarizing:"):
        return ChannelNoise.depolarizing(float(noise_name.split(":", 1)[1]))
    raise CLIError("ValueError", f"unknown noise model {noise_name!r}")


def cmd_rb(args) -> dict:
    """Clifford or dihedral randomized benchmarking."""
    from .benchmark import clifford_fidelity, run_drb, simulate_rb_levels

    if args.seed is None:
        raise CLIError("UsageError", "rb is stochastic; --seed is required")
    out_json, out_csv = Outputs(args.out, args.force).prepare(
        f"rb_{args.protocol}.json", f"rb_{args.protocol}.csv")
    payload = {"provenance": provenance(args), "protocol": args.protocol, "noise": args.noise}
    rows = []
    if args.protocol == "crb":
        res = simulate_rb_levels("crb", args.depths, args.circuits, _rb_noise(args, "crb"), args.levels,
                                 args.seed, args.mode, args.shots, args.n_noise, args.jobs)
        payload["levels"] = {}
        for lvl, r in res.items():
            d = r.to_dict()
            p = min(r.fit.p, 1.0)
            d["clifford_fidelity"] = clifford_fidelity(p) if p > 0 else None
            payload["levels"][str(lvl)] = d
            rows += [(f"crb_level{lvl}", m, s, e) for m, s, e in zip(r.depths, r.survivals, r.errors)]
        summary = {str(k): payload["levels"][str(k)]["clifford_fidelity"] for k in res}
    else:
        rz, rx, b = run_drb(args.depths, args.circuits, _rb_noise(args, "drb"), args.cg, args.seed,
                            args.mode, args.shots, args.n_noise, args.jobs)
        payload["z_basis"], payload["x_basis"] = rz.to_dict(), rx.to_dict()
        payload["bias"] = {"p_D": b.p_D, "p_ND": b.p_ND, "eta": b.eta, "p_D_err": b.p_D_err,
                           "p_ND_err": b.p_ND_err, "eta_interval": list(b.eta_interval)}
        for name, r in (("drb_z", rz), ("drb_x", rx)):
            rows += [(name, m, s, e) for m, s, e in zip(r.depths, r.survivals, r.errors)]
        summary = {"p_D": b.p_D, "p_ND": b.p_ND, "eta": b.eta}
    write_json(out_json, payload)
    with open(out_csv, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", "depth", "survival", "error"])
        for name, m, s, e in rows:
            w.writerow([name, m, f"{s:.12g}", f"{e:.6g}"])
    return summary


def cmd_dynamics(args) -> dict:
    """Population and magnetization trace of one beam acting on ``|-F>``."""
    from .atom import LaserParams, dls_vector, lightshift_spectrum
    from .dynamics import (FieldConfig, Geometry, dephasing_collapse, ground_state, magnetization,
                           rotated_hamiltonian, scattering_collapse, trajectory, write_trajectory_csv)

    scheme = _scheme(args)
    trace_csv, summary = Outputs(args.out, args.force).prepare("dynamics.csv", "dynamics.json")
    laser = LaserParams.from_power(args.power, args.waist, args.detuning)
    spectrum = lightshift_spectrum(laser, scheme)
    field = FieldConfig(args.B, Geometry.ORTHOGONAL)
    H = rotated_hamiltonian(spectrum, field, scheme if args.B > 0 else None, args.beta)
    C = []
    if args.scattering:
        C += scattering_collapse(laser, scheme, args.beta)
    if args.T2 is not None:
        C += dephasing_collapse(args.T2, scheme.F_ground)
    dls = dls_vector(spectrum)
    t_max = args.t_max
    if t_max is None:
        slowest = np.min(np.abs(dls)) if dls.size else 0.0
        t_max = 4 * 2 * math.pi / slowest if slowest > 0 else 1e-3
    times = np.linspace(0.0, t_max, args.points)
    states = trajectory(ground_state(scheme.dim), H, C, times)
    write_trajectory_csv(trace_csv, times, states)
    payload = {"provenance": provenance(args), "detuning_Hz": args.detuning, "beta": args.beta,
               "B_T": args.B, "t_max_s": t_max, "points": args.points,
               "dls_Hz": (dls / (2 * math.pi)).tolist(),
               "beat_frequencies_Hz": sorted({round(abs(float(d)) / (2 * math.pi), 6) for d in dls}),
               "final_magnetization": float(magnetization(states[-1]))}
    write_json(summary, payload)
    return {"beat_frequencies_Hz": payload["beat_frequencies_Hz"]}


def _load_sequence(text: str):
    from .pumping import INIT_SEQUENCE, PumpStep

    if text == "init":
        return INIT_SEQUENCE
    p = Path(text)
    if not p.exists():
        raise CLIError("FileNotFoundError", f"sequence file {p} not found")
    steps = []
    for line in p.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [v.strip() for v in line.split(",")]
        if parts[0] == "m_prime":
            continue
        dur = float(parts[2]) if len(parts) > 2 and parts[2] else None
        steps.append(PumpStep(float(parts[0]), int(parts[1]), dur))
    return tuple(steps)


def cmd_pump(args) -> dict:
    """Selective optical pumping sequence on the ground manifold."""
    from .pumping import six_level_sequence, write_population_csv

    trace_csv, summary = Outputs(args.out, args.force).prepare("pump.csv", "pump.json")
    steps = _load_sequence(args.sequence)
    scheme = _scheme(args)
    res = six_level_sequence(steps, scheme, decoherence=args.decoherence)
    write_population_csv(trace_csv, res.trace, scheme.dim)
    payload = {"provenance": provenance(args), "sequence": args.sequence,
               "steps": [{"m_prime": float(s.target_mFprime), "iterations": s.iterations,
                          "duration": s.duration} for s in steps],
               "populations": res.populations.tolist(), "target_population": res.target}
    write_json(summary, payload)
    return {"target_population": res.target}


def cmd_budget(args) -> dict:
    """Error budget over the selected noise sources."""
    from .budget import (REFERENCE_BUDGET, NoiseKind, NoiseSource, simulate_budget, total_quadrature,
                         write_budget_csv)

    if args.seed is None:
        raise CLIError("UsageError", "budget is stochastic; --seed is required")
    kinds = [NoiseKind(k) for k in args.sources] if args.sources else list(NoiseKind)
    out_csv, out_json = Outputs(args.out, args.force).prepare("budget.csv", "budget.json")
    entries = [simulate_budget(NoiseSource(k), args.protocol, args.circuits, args.depths, args.seed,
                               args.mode, args.jobs) for k in kinds]
    total = total_quadrature(entries)
    write_budget_csv(out_csv, entries + [total])
    payload = {"provenance": provenance(args), "protocol": args.protocol, "mode": args.mode,
               "entries": [asdict(e) for e in entries], "total": asdict(total),
               "reference": {k.value: dict(zip(("clifford_error", "p_ND", "p_D"), REFERENCE_BUDGET[k])) for k in kinds}}
    write_json(out_json, payload)
    return {"total_clifford_error": total.clifford_error}


def cmd_rank(args) -> dict:
    """Rank-preservation report, optionally with the cat-fidelity surface."""
    from .benchmark import PhysicalRealization, Pulse, nominal_config
    from .tensorrank import hadamard_surface, is_rank_preserving, write_surface_csv
    from .wigner import RotationAngles, as_halfint, rotation_matrix

    names = ["rank.json"] + ([f"rank_surface_F{args.F.replace('/', '_')}.csv"] if args.surface else [])
    paths = Outputs(args.out, args.force).prepare(*names)
    F = as_halfint(float(eval_fraction(args.F)))
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    leaks = []
    for _ in range(args.rotations):
        a, b, g = rng.uniform(0, 2 * math.pi), rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi)
        leaks.append(is_rank_preserving(rotation_matrix(F, RotationAngles(a, b, g))).leakage)
    payload = {"provenance": provenance(args), "F": str(F), "rotations": args.rotations,
               "max_rotation_leakage": max(leaks) if leaks else 0.0}
    if F.dim == 6 and args.cat:
        U = PhysicalRealization(nominal_config("crb", _scheme(args))).pulse_unitary(Pulse("cat"))
        payload["cat_gate_leakage"] = is_rank_preserving(U).leakage
    if args.surface:
        A, B, fid = hadamard_surface(F, args.n_alpha, args.n_beta)
        write_surface_csv(paths[1], A, B, fid)
        payload["surface_max"] = float(fid.max())
    write_json(paths[0], payload)
    return {k: payload[k] for k in payload if k != "provenance"}


def eval_fraction(text: str) -> float:
    """``"5/2"`` -> 2.5."""
    if "/" in text:
        n, d = text.split("/")
        return int(n) / int(d)
    return float(text)


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--seed", type=_seed, default=None, help="64-bit RNG seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--constants", default=None, help="constants file (overrides $SPINCAT_CONSTANTS)")
    common.add_argument("--scheme", default="173Yb", help="level scheme section of the constants file")

    p = _Parser(prog="spincat", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("scan", parents=[common], help="detuning scan")
    s.add_argument("--target", choices=("x", "cat"), required=True)
    s.add_argument("--range", type=_range, default=(-40e9, 46e9), help="LO:HI in Hz")
    s.add_argument("--step", type=float, default=1e7, help="grid step in Hz")
    s.add_argument("--power", type=float, default=0.1, help="beam power in W")
    s.add_argument("--waist", type=float, default=100e-6, help="beam waist in m")
    s.add_argument("--tol", type=float, default=0.02)
    s.add_argument("--threshold", type=float, default=1e-3)
    s.set_defaults(func=cmd_scan)

    r = sub.add_parser("rb", parents=[common], help="randomized benchmarking")
    r.add_argument("--protocol", choices=("crb", "drb"), default="crb")
    r.add_argument("--noise", default="none", help="none | budget | depolarizing:P")
    r.add_argument("--depths", type=_int_list, default=[1, 2, 4, 8, 16, 32, 64])
    r.add_argument("--circuits", type=int, default=50)
    r.add_argument("--mode", choices=("sampled", "exact"), default="sampled")
    r.add_argument("--shots", type=int, default=None)
    r.add_argument("--n-noise", type=int, default=64)
    r.add_argument("--levels", type=_int_list, default=[0, 1, 2], help="CG levels (crb)")
    r.add_argument("--cg", type=int, default=2, help="CG level (drb)")
    r.set_defaults(func=cmd_rb)

    d = sub.add_parser("dynamics", parents=[common], help="single-beam dynamics trace")
    d.add_argument("--detuning", type=float, required=True, help="Hz")
    d.add_argument("--power", type=float, default=0.1)
    d.add_argument("--waist", type=float, default=100e-6)
    d.add_argument("--beta", type=float, default=math.pi / 2)
    d.add_argument("--B", type=float, default=0.0, help="field in T")
    d.add_argument("--t-max", type=float, default=None, help="s; default four slowest beat periods")
    d.add_argument("--points", type=int, default=2001)
    d.add_argument("--scattering", action="store_true")
    d.add_argument("--T2", type=float, default=None, help="dephasing coefficient in s")
    d.set_defaults(func=cmd_dynamics)

    u = sub.add_parser("pump", parents=[common], help="selective optical pumping")
    u.add_argument("--sequence", default="init",
                   help="'init' (built-in |-5/2> initialization) or a CSV of m_prime,iterations[,duration]")
    u.add_argument("--decoherence", type=float, default=1.0)
    u.set_defaults(func=cmd_pump)

    b = sub.add_parser("budget", parents=[common], help="error budget")
    b.add_argument("--sources", nargs="*", default=None, help="noise kinds (default: all)")
    b.add_argument("--protocol", choices=("both", "crb", "drb"), default="both")
    b.add_argument("--circuits", type=int, default=50)
    b.add_argument("--depths", type=_int_list, default=None)
    b.add_argument("--mode", choices=("exact", "sampled"), default="exact")
    b.set_defaults(func=cmd_budget)

    k = sub.add_parser("rank", parents=[common], help="rank preservation and cat-fidelity surface")
    k.add_argument("--F", default="5/2")
    k.add_argument("--rotations", type=int, default=20)
    k.add_argument("--surface", action="store_true")
    k.add_argument("--n-alpha", type=int, default=200)
    k.add_argument("--n-beta", type=int, default=200)
    k.add_argument("--cat", action="store_true", help="also test the physical cat pulse (F=5/2)")
    k.set_defaults(func=cmd_rank)
    return p


def _numeric(tok: str) -> bool:
    try:
        [float(v) for v in tok.split(":")]
    except ValueError:
        return False
    return True


def _join_negative(argv: Sequence[str]) -> list[str]:
    """Rewrite ``--opt -5e9`` as ``--opt=-5e9``; argparse reads the value as an option otherwise."""
    out: list[str] = []
    for tok in argv:
        if (out and out[-1].startswith("--") and "=" not in out[-1] and tok.startswith("-")
                and _numeric(tok)):
            out[-1] = f"{out[-1]}={tok}"
        else:
            out.append(tok)
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    from .atom import CONSTANTS_ENV

    parser = build_parser()
    args = parser.parse_args(_join_negative(sys.argv[1:] if argv is None else argv))
    if args.constants is not None:
        os.environ[CONSTANTS_ENV] = str(args.constants)
    if args.jobs < 1:
        _emit_error("UsageError", "--jobs must be >= 1")
        return EXIT_USAGE
    try:
        summary = args.func(args)
    except CLIError as e:
        _emit_error(e.kind, str(e))
        return EXIT_ERROR
    except Exception as e:  # any failure is reported as JSON
        _emit_error(type(e).__name__, str(e))
        return EXIT_ERROR
    sys.stdout.write(json.dumps(_clean(summary), sort_keys=True, default=_json_default) + "\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
