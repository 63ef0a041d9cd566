"""Coupling constants and the maps from strain, stress and electric field to
zero-field-splitting perturbations.

Couplings are stored in the internal unit system (MHz per unit strain,
MHz/GPa, Hz*cm/V) regardless of the units used in config files; see
`units.py` for the conversion table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .spin import ZfsParameters
from .units import GHZ_TO_MHZ, HZ_TO_MHZ

__all__ = [
    "CouplingConstants",
    "StrainTensor2D",
    "StressTensor2D",
    "ElectricFieldVec",
    "D0_PRESETS",
    "strain_perturbation",
    "stress_perturbation",
    "stress_couplings",
    "stiffness_matrix",
    "strain_from_stress",
    "stress_from_strain",
    "electric_perturbation",
    "total_zfs",
    "extract_coupling_slope",
    "local_strain_from_triangle",
    "read_key_value_file",
    "constants_from_mapping",
    "load_constants",
]

# Unperturbed axial splitting presets in MHz: the measured ensemble value and
# the relaxed single-layer theory value.
D0_PRESETS = {"experimental": 3470.0, "flake-theory": 3263.0}


@dataclass(frozen=True)
class CouplingConstants:
    """Defect response constants, overridable individually or via config file.

    g couplings are in MHz per unit strain, d_perp in Hz*cm/V, the hyperfine
    constant in MHz and the elastic stiffness components in GPa.
    """

    d0_mhz: float = D0_PRESETS["experimental"]
    g1: float = -19200.0
    g2: float = 2600.0
    g2p: float = 0.0
    g3: float = 0.0
    g3p: float = 5800.0
    d_perp: float = 20.72
    a_hf_mhz: float = 47.0
    c11_gpa: float = 811.0
    c12_gpa: float = 168.0

    def with_d0_preset(self, name: str) -> "CouplingConstants":
        if name not in D0_PRESETS:
            raise ValueError(f"unknown D0 preset {name!r}; choose from {sorted(D0_PRESETS)}")
        return replace(self, d0_mhz=D0_PRESETS[name])


@dataclass(frozen=True)
class StrainTensor2D:
    """Symmetric in-plane strain (eyx = exy implied), dimensionless.

    Components are validated against ``limit``, a linear-response validity
    guard; pass ``limit=math.inf`` to disable it.
    """

    exx: float
    eyy: float
    exy: float = 0.0
    limit: float = 0.1

    def __post_init__(self):
        comps = (self.exx, self.eyy, self.exy)
        if not all(math.isfinite(c) for c in comps):
            raise ValueError("strain components must be finite")
        if any(abs(c) >= self.limit for c in comps):
            raise ValueError(
                f"strain components {comps} exceed the validity guard {self.limit}"
            )


@dataclass(frozen=True)
class StressTensor2D:
    """In-plane normal stress components in GPa."""

    sxx: float
    syy: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.sxx) and math.isfinite(self.syy)):
            raise ValueError("stress components must be finite")


@dataclass(frozen=True)
class ElectricFieldVec:
    """Electric field in V/cm. The out-of-plane component ez is carried along
    but never couples to the spin (symmetry-forbidden)."""

    ex: float
    ey: float
    ez: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.ex, self.ey, self.ez)):
            raise ValueError("field components must be finite")


def strain_perturbation(eps: StrainTensor2D, k: CouplingConstants) -> ZfsParameters:
    """ZFS response to in-plane strain, in delta form (d is a shift).

    d  = g1*(exx+eyy)
    e1 = g2*(exx-eyy) + g3*(exy+eyx)
    e2 = g2p*(exx-eyy) + g3p*(exy+eyx)
    with exy+eyx = 2*exy for the symmetric tensor.
    """
    sum_n = eps.exx + eps.eyy
    diff_n = eps.exx - eps.eyy
    shear = 2.0 * eps.exy
    return ZfsParameters(
        d=k.g1 * sum_n,
        e1=k.g2 * diff_n + k.g3 * shear,
        e2=k.g2p * diff_n + k.g3p * shear,
    )


def stress_couplings(k: CouplingConstants) -> tuple[float, float]:
    """Stress coupling coefficients (h1, h2) in MHz/GPa.

    h1 = g1/(C11+C12), h2 = g2/(C11-C12).
    """
    hydro = k.c11_gpa + k.c12_gpa
    deviat = k.c11_gpa - k.c12_gpa
    if hydro == 0.0 or deviat == 0.0:
        raise ValueError("singular stiffness: C11 must differ from +-C12")
    return k.g1 / hydro, k.g2 / deviat


def stress_perturbation(sig: StressTensor2D, k: CouplingConstants) -> ZfsParameters:
    """ZFS response to in-plane normal stress, in delta form."""
    h1, h2 = stress_couplings(k)
    return ZfsParameters(
        d=h1 * (sig.sxx + sig.syy),
        e1=h2 * (sig.sxx - sig.syy),
        e2=0.0,
    )


def stiffness_matrix(k: CouplingConstants) -> np.ndarray:
    """2x2 plane stiffness relating (exx, eyy) to (sxx, syy)."""
    return np.array([[k.c11_gpa, k.c12_gpa], [k.c12_gpa, k.c11_gpa]], dtype=float)


def stress_from_strain(eps: StrainTensor2D, k: CouplingConstants) -> StressTensor2D:
    sxx, syy = stiffness_matrix(k) @ (eps.exx, eps.eyy)
    return StressTensor2D(sxx=float(sxx), syy=float(syy))


def strain_from_stress(sig: StressTensor2D, k: CouplingConstants) -> StrainTensor2D:
    c = stiffness_matrix(k)
    det = c[0, 0] ** 2 - c[0, 1] ** 2
    if det == 0.0:
        raise ValueError("singular stiffness: cannot invert")
    exx, eyy = np.linalg.solve(c, (sig.sxx, sig.syy))
    return StrainTensor2D(exx=float(exx), eyy=float(eyy), exy=0.0, limit=math.inf)


def electric_perturbation(f: ElectricFieldVec, k: CouplingConstants) -> ZfsParameters:
    """ZFS response to an electric field, in delta form.

    The axial parameter never shifts; e1 couples to ey and e2 to ex. d_perp
    (Hz*cm/V) times a field in V/cm gives Hz, converted to MHz here.
    """
    return ZfsParameters(
        d=0.0,
        e1=k.d_perp * f.ey * HZ_TO_MHZ,
        e2=k.d_perp * f.ex * HZ_TO_MHZ,
    )


def total_zfs(k: CouplingConstants, *deltas: ZfsParameters) -> ZfsParameters:
    """Combine the unperturbed axial splitting with delta-form perturbations."""
    return ZfsParameters(
        d=k.d0_mhz + sum(p.d for p in deltas),
        e1=sum(p.e1 for p in deltas),
        e2=sum(p.e2 for p in deltas),
    )


def extract_coupling_slope(samples) -> tuple[float, float]:
    """Ordinary least-squares slope and its standard error for (x, y) samples.

    Fits y = intercept + slope*x. Requires at least three samples with at
    least two distinct abscissae. The standard error is zero for an exact
    line.
    """
    pts = np.asarray(list(samples), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("samples must be (x, y) pairs")
    n = len(pts)
    if n < 3:
        raise ValueError("need at least 3 samples")
    x, y = pts[:, 0], pts[:, 1]
    sxx = float(np.sum((x - x.mean()) ** 2))
    if sxx == 0.0:
        raise ValueError("degenerate abscissae: all x values identical")
    slope = float(np.sum((x - x.mean()) * (y - y.mean())) / sxx)
    intercept = y.mean() - slope * x.mean()
    resid = y - (intercept + slope * x)
    sse = float(np.sum(resid**2))
    stderr = math.sqrt(max(sse, 0.0) / (n - 2) / sxx)
    return slope, stderr


def local_strain_from_triangle(ref, deformed) -> StrainTensor2D:
    """Small-strain tensor of the affine map taking a reference triangle to a
    deformed one.

    Both arguments are (3, 2) vertex arrays in nm. The unique 2x2 linear map F
    sends reference edge vectors to deformed edge vectors; the returned strain
    is (F + F^T)/2 - I, which is translation-invariant and symmetric by
    construction.
    """
    r = np.asarray(ref, dtype=float).reshape(3, 2)
    d = np.asarray(deformed, dtype=float).reshape(3, 2)
    edges_r = np.column_stack((r[1] - r[0], r[2] - r[0]))
    edges_d = np.column_stack((d[1] - d[0], d[2] - d[0]))
    area = 0.5 * abs(np.linalg.det(edges_r))
    if area <= 1e-6:
        raise ValueError(f"degenerate reference triangle (area {area:.3g} nm^2)")
    f = edges_d @ np.linalg.inv(edges_r)
    strain = 0.5 * (f + f.T) - np.eye(2)
    return StrainTensor2D(
        exx=float(strain[0, 0]),
        eyy=float(strain[1, 1]),
        exy=float(strain[0, 1]),
        limit=math.inf,
    )


# Config file keys -> (constants field, scale into internal units).
_CONFIG_KEYS = {
    "d0_mhz": ("d0_mhz", 1.0),
    "g1_ghz_per_strain": ("g1", GHZ_TO_MHZ),
    "g2_ghz_per_strain": ("g2", GHZ_TO_MHZ),
    "g2p_ghz_per_strain": ("g2p", GHZ_TO_MHZ),
    "g3_ghz_per_strain": ("g3", GHZ_TO_MHZ),
    "g3p_ghz_per_strain": ("g3p", GHZ_TO_MHZ),
    "dperp_hz_cm_per_v": ("d_perp", 1.0),
    "a_hf_mhz": ("a_hf_mhz", 1.0),
    "c11_gpa": ("c11_gpa", 1.0),
    "c12_gpa": ("c12_gpa", 1.0),
}


def read_key_value_file(path) -> dict[str, float]:
    """Parse a flat INI-style ``key = value`` file into a dict of floats.

    Blank lines, ``#``/``;`` comments and ``[section]`` headers are ignored.
    """
    values: dict[str, float] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip().lower()
        try:
            values[key] = float(val.strip())
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: non-numeric value {val.strip()!r}") from exc
    return values


def constants_from_mapping(
    mapping: dict[str, float], base: CouplingConstants | None = None
) -> tuple[CouplingConstants, dict[str, float]]:
    """Apply known config keys over ``base``; return (constants, leftover keys)."""
    base = base if base is not None else CouplingConstants()
    overrides = {}
    leftover = {}
    for key, value in mapping.items():
        spec = _CONFIG_KEYS.get(key)
        if spec is None:
            leftover[key] = value
        else:
            field_name, scale = spec
            overrides[field_name] = value * scale
    return replace(base, **overrides), leftover


def load_constants(path, base: CouplingConstants | None = None) -> CouplingConstants:
    """Load coupling constants from a config file, rejecting unknown keys."""
    constants, leftover = constants_from_mapping(read_key_value_file(path), base)
    if leftover:
        raise ValueError(f"unknown config keys: {sorted(leftover)}")
    return constants
