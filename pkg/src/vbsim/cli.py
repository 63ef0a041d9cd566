"""Command line front end.

Exit codes: 0 success, 1 usage or input error, 2 numerical/convergence error.
All randomized subcommands require --seed and produce byte-identical output
for identical arguments, independent of --threads.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from . import charges, couplings, odmr

USAGE_ERROR = 1
NUMERICAL_ERROR = 2

_ENV_CONFIG_VAR = "VBSIM_CONFIG"

# Config keys consumed by the CLI on top of the coupling-constant keys.
_ENV_KEYS = ("radius_nm", "eps_r", "exclusion_nm", "lattice_a_nm", "lattice_interlayer_nm")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


class _InputError(Exception):
    """Bad input file or malformed data; maps to the usage exit code."""


def _fmt(value: float) -> str:
    return f"{value:.9g}"


def _parse_range(text: str, name: str) -> tuple[float, float]:
    parts = text.split(":")
    if len(parts) != 2:
        raise ValueError(f"{name}: expected LO:HI, got {text!r}")
    return float(parts[0]), float(parts[1])


def _parse_grid(text: str, name: str) -> np.ndarray:
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"{name}: expected START:STOP:COUNT, got {text!r}")
    start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
    if count < 1:
        raise ValueError(f"{name}: COUNT must be positive")
    return np.linspace(start, stop, count)


def _parse_triangle(text: str, name: str) -> np.ndarray:
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 6:
        raise ValueError(f"{name}: expected x1,y1,x2,y2,x3,y3")
    return np.array(vals).reshape(3, 2)


def _load_config(args) -> dict[str, float]:
    path = getattr(args, "config", None) or os.environ.get(_ENV_CONFIG_VAR)
    if not path:
        return {}
    return couplings.read_key_value_file(path)


def _constants(args, mapping: dict[str, float]) -> couplings.CouplingConstants:
    known = {k: v for k, v in mapping.items() if k in couplings._CONFIG_KEYS}
    k, _ = couplings.constants_from_mapping(known)
    if getattr(args, "preset", None):
        k = k.with_d0_preset(args.preset)
    if getattr(args, "d0_mhz", None) is not None:
        k = dataclasses.replace(k, d0_mhz=args.d0_mhz)
    return k


def _environment(args, mapping: dict[str, float]) -> charges.ChargeEnvironment:
    unknown = set(mapping) - set(couplings._CONFIG_KEYS) - set(_ENV_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")

    def pick(flag_name, cfg_key, fallback):
        flag = getattr(args, flag_name, None)
        if flag is not None:
            return flag
        return mapping.get(cfg_key, fallback)

    lattice = charges.HexLattice(
        a_nm=pick("lattice_a_nm", "lattice_a_nm", 0.2504),
        interlayer_nm=pick("lattice_interlayer_nm", "lattice_interlayer_nm", 0.333),
    )
    return charges.ChargeEnvironment(
        lattice=lattice,
        radius_nm=pick("radius_nm", "radius_nm", 10.0),
        eps_r=pick("eps_r", "eps_r", 1.0),
        exclusion_nm=pick("exclusion_nm", "exclusion_nm", 0.5),
        mode=getattr(args, "position_mode", None) or "ball",
    )


def _emit(text: str, out_path) -> None:
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _add_common(parser):
    parser.add_argument("--config", help=f"key=value config file (default: ${_ENV_CONFIG_VAR})")
    parser.add_argument("--d0-mhz", dest="d0_mhz", type=float, help="override the axial splitting D0 in MHz")
    parser.add_argument(
        "--preset", choices=sorted(couplings.D0_PRESETS),
        help="D0 preset applied before --d0-mhz",
    )


def _add_environment_flags(parser):
    parser.add_argument("--radius-nm", dest="radius_nm", type=float, help="simulation sphere radius (default 10)")
    parser.add_argument("--eps-r", dest="eps_r", type=float, help="relative permittivity (default 1)")
    parser.add_argument("--exclusion-nm", dest="exclusion_nm", type=float, help="charge-free radius around the defect (default 0.5)")
    parser.add_argument("--lattice-a-nm", dest="lattice_a_nm", type=float, help="in-plane lattice constant (default 0.2504)")
    parser.add_argument("--lattice-interlayer-nm", dest="lattice_interlayer_nm", type=float, help="interlayer spacing (default 0.333)")
    parser.add_argument(
        "--position-mode", choices=("ball", "gaussian"), default=None,
        help="charge position sampling law (default ball)",
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="vbsim", description="Zero-field spin resonance toolkit for a planar S=1 vacancy defect")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("zfs", parents=[], help="resonances for a given strain/stress/field", description="Evaluate the zero-field resonances under static strain, stress and electric field perturbations.")
    _add_common(p)
    p.add_argument("--strain-xx", type=float, default=0.0)
    p.add_argument("--strain-yy", type=float, default=0.0)
    p.add_argument("--strain-xy", type=float, default=0.0)
    p.add_argument("--stress-xx", type=float, default=0.0, help="GPa")
    p.add_argument("--stress-yy", type=float, default=0.0, help="GPa")
    p.add_argument("--efield-x", type=float, default=0.0, help="V/cm")
    p.add_argument("--efield-y", type=float, default=0.0, help="V/cm")
    p.add_argument("--efield-z", type=float, default=0.0, help="V/cm (never couples)")
    p.add_argument("--out", help="write the key=value block to a file instead of stdout")

    p = sub.add_parser("convert-stress", help="print the stress coupling coefficients h1, h2", description="Convert the strain couplings to stress couplings through the elastic stiffness.")
    _add_common(p)
    p.add_argument("--out")

    p = sub.add_parser("scatter", help="resonance scatter over random perturbation directions", description="Sample random perturbation directions per magnitude and write the resonance pairs as CSV.")
    _add_common(p)
    p.add_argument("--kind", choices=("strain", "electric"), required=True)
    p.add_argument("--mags", required=True, help="magnitude sweep START:STOP:COUNT")
    p.add_argument("--n", type=int, required=True, help="samples per magnitude")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")

    p = sub.add_parser("synth", help="synthesize a spectrum from the charge model", description="Monte Carlo average of zero-field spectra over random charge configurations, written as CSV.")
    _add_common(p)
    _add_environment_flags(p)
    p.add_argument("--rho-c", dest="rho_c", type=float, required=True, help="charge density in nm^-3")
    p.add_argument("--contrast", type=float, required=True)
    p.add_argument("--linewidth-mhz", dest="linewidth_mhz", type=float, default=30.0, help="Lorentzian half width at half maximum (default 30 = 60 MHz full width)")
    p.add_argument("--n-configs", dest="n_configs", type=int, default=10000)
    p.add_argument("--grid", default=None, help="frequency grid START:STOP:COUNT in MHz (default D0 +- 400, 1 MHz step)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out")

    p = sub.add_parser("fit", help="fit charge density and contrast to a measured spectrum", description="Three-cycle refined grid search with common random numbers across candidates.")
    _add_common(p)
    _add_environment_flags(p)
    p.add_argument("--measured", required=True, help="CSV with header freq_mhz,signal")
    p.add_argument("--rho-range", dest="rho_range", default="0:0.2", help="LO:HI in nm^-3")
    p.add_argument("--contrast-range", dest="contrast_range", default="0:0.2", help="LO:HI")
    p.add_argument("--grid-size", dest="grid_size", type=int, default=21)
    p.add_argument("--cycles", type=int, default=3)
    p.add_argument("--n-configs", dest="n_configs", type=int, default=10000)
    p.add_argument("--linewidth-mhz", dest="linewidth_mhz", type=float, default=30.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out")

    p = sub.add_parser("pl-density", help="relative densities from photoluminescence-vs-power series", description="Least-squares slope per sample; ratios are taken against the first sample in the file.")
    _add_common(p)
    p.add_argument("--input", required=True, help="CSV with header sample,power_mw,pl")
    p.add_argument("--out")

    p = sub.add_parser("local-strain", help="strain tensor from a deformed triangle", description="Small-strain tensor of the affine map between reference and deformed triangles.")
    _add_common(p)
    p.add_argument("--ref", required=True, help="x1,y1,x2,y2,x3,y3 in nm")
    p.add_argument("--deformed", required=True, help="x1,y1,x2,y2,x3,y3 in nm")
    p.add_argument("--out")

    return parser


def _cmd_zfs(args, k, env) -> str:
    deltas = []
    if args.strain_xx or args.strain_yy or args.strain_xy:
        eps = couplings.StrainTensor2D(args.strain_xx, args.strain_yy, args.strain_xy)
        deltas.append(couplings.strain_perturbation(eps, k))
    if args.stress_xx or args.stress_yy:
        sig = couplings.StressTensor2D(args.stress_xx, args.stress_yy)
        deltas.append(couplings.stress_perturbation(sig, k))
    if args.efield_x or args.efield_y or args.efield_z:
        f = couplings.ElectricFieldVec(args.efield_x, args.efield_y, args.efield_z)
        deltas.append(couplings.electric_perturbation(f, k))
    zfs = couplings.total_zfs(k, *deltas)
    from .spin import build_hamiltonian, resonance_frequencies

    f_minus, f_plus = resonance_frequencies(build_hamiltonian(zfs))
    return (
        f"d_mhz={_fmt(zfs.d)}\n"
        f"e1_mhz={_fmt(zfs.e1)}\n"
        f"e2_mhz={_fmt(zfs.e2)}\n"
        f"e_eff_mhz={_fmt(zfs.e_eff)}\n"
        f"f_minus_mhz={_fmt(f_minus)}\n"
        f"f_plus_mhz={_fmt(f_plus)}\n"
    )


def _cmd_convert_stress(args, k, env) -> str:
    h1, h2 = couplings.stress_couplings(k)
    return f"h1_mhz_per_gpa={_fmt(h1)}\nh2_mhz_per_gpa={_fmt(h2)}\n"


def _cmd_scatter(args, k, env) -> str:
    mags = _parse_grid(args.mags, "--mags")
    data = odmr.scatter_levels(args.kind, mags, args.n, k, args.seed)
    return data.to_csv()


def _default_grid(k) -> np.ndarray:
    return k.d0_mhz + np.arange(-400.0, 400.0 + 0.5, 1.0)


def _cmd_synth(args, k, env) -> str:
    grid = _parse_grid(args.grid, "--grid") if args.grid else _default_grid(k)
    spec = odmr.synthesize_spectrum(
        args.rho_c, args.contrast, args.linewidth_mhz, args.n_configs,
        grid, k, env, args.seed, threads=args.threads,
    )
    return spec.to_csv()


def _cmd_fit(args, k, env):
    try:
        measured = odmr.OdmrSpectrum.from_csv(args.measured)
    except (OSError, ValueError) as exc:
        raise _InputError(str(exc)) from exc
    cfg = odmr.FitConfig(
        rho_range=_parse_range(args.rho_range, "--rho-range"),
        contrast_range=_parse_range(args.contrast_range, "--contrast-range"),
        grid_size=args.grid_size,
        cycles=args.cycles,
        n_configs=args.n_configs,
        linewidth_mhz=args.linewidth_mhz,
        env=env,
        threads=args.threads,
    )
    result = odmr.fit_spectrum(measured, cfg, k, args.seed)
    return result.format(), result


def _read_pl_csv(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip().lower() != "sample,power_mw,pl":
        raise ValueError(f"{path}: expected header 'sample,power_mw,pl'")
    series: dict[str, list[tuple[float, float]]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected three columns")
        name = parts[0].strip()
        try:
            power, pl = float(parts[1]), float(parts[2])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: non-numeric row") from exc
        series.setdefault(name, []).append((power, pl))
    if not series:
        raise ValueError(f"{path}: no data rows")
    return series


def _cmd_pl_density(args, k, env) -> str:
    try:
        series = _read_pl_csv(args.input)
    except (OSError, ValueError) as exc:
        raise _InputError(str(exc)) from exc
    names = list(series)
    slopes = {name: odmr.relative_density_from_pl(series[name]) for name in names}
    ref = names[0]
    out = [f"slope_{name}={_fmt(slopes[name])}" for name in names]
    for name in names[1:]:
        out.append(f"ratio_{name}_over_{ref}={_fmt(slopes[name] / slopes[ref])}")
    return "\n".join(out) + "\n"


def _cmd_local_strain(args, k, env) -> str:
    ref = _parse_triangle(args.ref, "--ref")
    deformed = _parse_triangle(args.deformed, "--deformed")
    eps = couplings.local_strain_from_triangle(ref, deformed)
    return f"exx={_fmt(eps.exx)}\neyy={_fmt(eps.eyy)}\nexy={_fmt(eps.exy)}\n"


_COMMANDS = {
    "zfs": _cmd_zfs,
    "convert-stress": _cmd_convert_stress,
    "scatter": _cmd_scatter,
    "synth": _cmd_synth,
    "fit": _cmd_fit,
    "pl-density": _cmd_pl_density,
    "local-strain": _cmd_local_strain,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        mapping = _load_config(args)
        k = _constants(args, mapping)
        env = _environment(args, mapping)
    except (OSError, ValueError) as exc:
        print(f"vbsim: input error: {exc}", file=sys.stderr)
        return USAGE_ERROR

    handler = _COMMANDS[args.command]
    try:
        result = handler(args, k, env)
    except (_InputError, OSError) as exc:
        print(f"vbsim: input error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"vbsim: error: {exc}", file=sys.stderr)
        return NUMERICAL_ERROR

    if args.command == "fit":
        text, fit_result = result
        _emit(text, args.out)
        if fit_result.hit_boundary:
            print(
                "vbsim: fit landed on the search boundary; widen the ranges",
                file=sys.stderr,
            )
            return NUMERICAL_ERROR
        return 0

    _emit(result, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
