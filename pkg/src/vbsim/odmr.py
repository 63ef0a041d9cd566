"""Monte Carlo synthesis of zero-field ODMR spectra, level-scatter simulation
over random perturbation environments, and the two-parameter grid fit.

Spectra are normalized photoluminescence versus microwave frequency: the
baseline is 1 and resonances appear as Lorentzian dips. Synthesis averages
over random charge configurations; each configuration contributes two
resonances per hyperfine manifold. All randomized entry points take a master
seed and are deterministic for a given seed, independent of thread count.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .charges import ChargeEnvironment, fields_for_configs
from .couplings import (
    CouplingConstants,
    ElectricFieldVec,
    StrainTensor2D,
    electric_perturbation,
    extract_coupling_slope,
    strain_perturbation,
    total_zfs,
)
from .spin import build_hamiltonian, eigh3_stack, hamiltonian_stack, resonances_stack
from .units import HZ_TO_MHZ

__all__ = [
    "OdmrSpectrum",
    "ScatterDataset",
    "FitResult",
    "FitConfig",
    "hyperfine_detunings",
    "scatter_levels",
    "synthesize_spectrum",
    "spectrum_for_fields",
    "splitting_statistics",
    "fit_spectrum",
    "relative_density_from_pl",
]

_CHUNK = 64  # configurations per reduction chunk; fixed so that thread count
             # never changes the summation order


@dataclass
class OdmrSpectrum:
    """Frequency grid (MHz) with normalized PL contrast values."""

    freqs: np.ndarray
    signal: np.ndarray

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.signal = np.asarray(self.signal, dtype=float)
        if self.freqs.ndim != 1 or self.freqs.shape != self.signal.shape:
            raise ValueError("freqs and signal must be matching 1D arrays")
        if len(self.freqs) < 2:
            raise ValueError("need at least two grid points")
        steps = np.diff(self.freqs)
        if np.any(steps <= 0.0):
            raise ValueError("frequency grid must be strictly ascending")
        if not np.allclose(steps, steps[0], rtol=1e-6, atol=1e-9):
            raise ValueError("frequency grid must be uniform")
        if np.any(self.signal <= 0.0):
            raise ValueError("signal values must be positive")

    @property
    def step(self) -> float:
        return float(self.freqs[1] - self.freqs[0])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("freq_mhz,signal\n")
        for f, s in zip(self.freqs, self.signal):
            buf.write(f"{f:.9g},{s:.9g}\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def from_csv(cls, path) -> "OdmrSpectrum":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0].strip().lower() != "freq_mhz,signal":
            raise ValueError(f"{path}: expected header 'freq_mhz,signal'")
        freqs, signal = [], []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected two columns")
            try:
                freqs.append(float(parts[0]))
                signal.append(float(parts[1]))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-numeric row") from exc
        return cls(np.array(freqs), np.array(signal))


@dataclass
class ScatterDataset:
    """Per-sample resonance pairs versus perturbation magnitude."""

    kind: str
    magnitudes: np.ndarray
    f_minus: np.ndarray
    f_plus: np.ndarray

    def __post_init__(self):
        self.magnitudes = np.asarray(self.magnitudes, dtype=float)
        self.f_minus = np.asarray(self.f_minus, dtype=float)
        self.f_plus = np.asarray(self.f_plus, dtype=float)
        if not (len(self.magnitudes) == len(self.f_minus) == len(self.f_plus)):
            raise ValueError("column lengths differ")
        if np.any(self.f_minus > self.f_plus):
            raise ValueError("f_minus must not exceed f_plus")

    def __len__(self) -> int:
        return len(self.magnitudes)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("magnitude,f_minus_mhz,f_plus_mhz\n")
        for m, lo, hi in zip(self.magnitudes, self.f_minus, self.f_plus):
            buf.write(f"{m:.9g},{lo:.9g},{hi:.9g}\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


@dataclass
class FitResult:
    """Best-fit charge density and contrast with the final grid resolution
    reported as the uncertainty proxy."""

    rho_c: float
    contrast: float
    residual: float
    step_rho: float
    step_contrast: float
    hit_boundary: bool = False
    cycle_objectives: tuple = ()

    def format(self) -> str:
        lines = [
            f"rho_c_nm3={self.rho_c:.9g}",
            f"contrast={self.contrast:.9g}",
            f"residual={self.residual:.9g}",
            f"step_rho_nm3={self.step_rho:.9g}",
            f"step_contrast={self.step_contrast:.9g}",
            f"hit_boundary={int(self.hit_boundary)}",
        ]
        return "\n".join(lines) + "\n"


def hyperfine_detunings(a_mhz: float) -> list[tuple[float, float]]:
    """Secular detunings and weights from three first-shell spin-1 nuclei.

    Total nuclear projections m = -3..+3 shift the resonance by a_mhz*m with
    multiplicities (1,3,6,7,6,3,1)/27.
    """
    if not math.isfinite(a_mhz):
        raise ValueError("hyperfine constant must be finite")
    single = np.ones(3)  # one spin-1: m in {-1,0,1}, equal weight
    mult = np.convolve(np.convolve(single, single), single)
    weights = mult / mult.sum()
    return [(a_mhz * m, float(w)) for m, w in zip(range(-3, 4), weights)]


def _unit_vectors(n: int, rng: np.random.Generator) -> np.ndarray:
    """2D directions from per-component uniform draws on [-1, 1], normalized."""
    v = rng.uniform(-1.0, 1.0, size=(n, 2))
    norms = np.linalg.norm(v, axis=1)
    while np.any(norms < 1e-12):
        bad = norms < 1e-12
        v[bad] = rng.uniform(-1.0, 1.0, size=(int(bad.sum()), 2))
        norms = np.linalg.norm(v, axis=1)
    return v / norms[:, None]


def scatter_levels(
    kind: str,
    magnitudes,
    n_samples: int,
    k: CouplingConstants,
    seed: int,
) -> ScatterDataset:
    """Resonance pairs for random perturbation directions of given magnitudes.

    For each magnitude, n_samples random 2-vectors are drawn (components
    uniform, then the vector is normalized to the magnitude) and fed through
    the perturbation map: (exx, eyy) for "strain", (ex, ey) in V/cm for
    "electric".
    """
    if kind not in ("strain", "electric"):
        raise ValueError(f"kind must be 'strain' or 'electric', got {kind!r}")
    mags = np.asarray(list(magnitudes), dtype=float)
    if np.any(mags < 0.0):
        raise ValueError("magnitudes must be non-negative")
    if n_samples < 1:
        raise ValueError("need at least one sample per magnitude")
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    all_mags, h_stack = [], []
    for mag in mags:
        vecs = mag * _unit_vectors(n_samples, rng) if mag > 0.0 else np.zeros((n_samples, 2))
        for vx, vy in vecs:
            if kind == "strain":
                delta = strain_perturbation(StrainTensor2D(exx=vx, eyy=vy), k)
            else:
                delta = electric_perturbation(ElectricFieldVec(ex=vx, ey=vy), k)
            h_stack.append(build_hamiltonian(total_zfs(k, delta)))
            all_mags.append(mag)

    evals, evecs = eigh3_stack(np.array(h_stack))
    f_minus, f_plus = resonances_stack(evals, evecs)
    return ScatterDataset(kind, np.array(all_mags), f_minus, f_plus)


def _lorentz_profile(grid, centers, depths, hwhm):
    """Sum of Lorentzian dips (unit baseline omitted) on a frequency grid."""
    gamma2 = hwhm * hwhm
    delta = grid[None, :] - np.asarray(centers)[:, None]
    return np.asarray(depths) @ (gamma2 / (delta * delta + gamma2))


def _field_components(rho_c, env, seed, lo, hi):
    """In-plane field components (2 columns, V/cm) for configs lo..hi-1."""
    return fields_for_configs(env, rho_c, seed, lo, hi)[:, :2]


def _resonance_lines(fields_xy, k: CouplingConstants):
    """All (frequency, weight) resonance lines for in-plane fields.

    Each configuration contributes two resonances per hyperfine manifold,
    each with half the manifold weight.
    """
    fields_xy = np.asarray(fields_xy, dtype=float).reshape(-1, 2)
    n = len(fields_xy)
    detunings = hyperfine_detunings(k.a_hf_mhz)
    shifts = np.array([s for s, _ in detunings])
    weights = np.array([w for _, w in detunings])

    e1 = k.d_perp * fields_xy[:, 1] * HZ_TO_MHZ
    e2 = k.d_perp * fields_xy[:, 0] * HZ_TO_MHZ
    h = hamiltonian_stack(
        np.full((n, len(shifts)), k.d0_mhz),
        e1[:, None],
        e2[:, None],
        shifts[None, :],
    ).reshape(-1, 3, 3)
    evals, evecs = eigh3_stack(h)
    f_minus, f_plus = resonances_stack(evals, evecs)
    centers = np.column_stack((f_minus, f_plus)).reshape(-1)  # interleave pairs
    depths = 0.5 * np.repeat(np.tile(weights, n), 2)  # weight/2 per resonance
    return centers, depths, f_minus, f_plus


def _dip_profile_for_fields(fields_xy, linewidth_mhz, grid, k) -> np.ndarray:
    """Mean unit-contrast dip profile over the given in-plane fields."""
    centers, weights, _, _ = _resonance_lines(fields_xy, k)
    n_cfg = max(len(np.asarray(fields_xy).reshape(-1, 2)), 1)
    return _lorentz_profile(grid, centers, weights, linewidth_mhz) / n_cfg


def _map_chunks(worker, n_items: int, threads: int):
    """Apply worker(lo, hi) over fixed-size chunks; reduce in chunk order."""
    bounds = [(lo, min(lo + _CHUNK, n_items)) for lo in range(0, n_items, _CHUNK)]
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda b: worker(*b), bounds))
    return [worker(*b) for b in bounds]


def _validate_grid(grid, k: CouplingConstants, linewidth_mhz: float) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2:
        raise ValueError("grid must be a 1D array with at least two points")
    steps = np.diff(grid)
    if np.any(steps <= 0.0) or not np.allclose(steps, steps[0], rtol=1e-6, atol=1e-9):
        raise ValueError("grid must be strictly ascending and uniform")
    span = 3.0 * abs(k.a_hf_mhz) + 5.0 * linewidth_mhz
    if grid[0] > k.d0_mhz - span or grid[-1] < k.d0_mhz + span:
        raise ValueError(
            f"grid too narrow: must cover {k.d0_mhz - span:.1f}..{k.d0_mhz + span:.1f} MHz"
        )
    return grid


def _unit_profile(rho_c, linewidth_mhz, n_configs, grid, k, env, seed, threads) -> np.ndarray:
    """Dip profile at unit contrast, averaged over sampled charge configs."""

    def worker(lo, hi):
        fields = _field_components(rho_c, env, seed, lo, hi)
        centers, weights, _, _ = _resonance_lines(fields, k)
        return _lorentz_profile(grid, centers, weights, linewidth_mhz)

    partials = _map_chunks(worker, n_configs, threads)
    total = np.zeros_like(grid)
    for p in partials:  # fixed chunk order keeps the reduction deterministic
        total += p
    return total / n_configs


def synthesize_spectrum(
    rho_c: float,
    contrast: float,
    linewidth_mhz: float,
    n_configs: int,
    grid,
    k: CouplingConstants,
    env: ChargeEnvironment | None = None,
    seed: int = 0,
    threads: int = 1,
) -> OdmrSpectrum:
    """Average zero-field spectrum over random charge configurations.

    Each configuration contributes Lorentzian dips of half-width
    ``linewidth_mhz`` and depth contrast*weight/2 at the two resonances of
    every hyperfine manifold. The grid must cover d0 +- (3*A + 5*linewidth).
    """
    env = env if env is not None else ChargeEnvironment()
    if n_configs < 1:
        raise ValueError("need at least one configuration")
    if not 0.0 <= contrast < 1.0:
        raise ValueError("non-physical contrast; need 0 <= contrast < 1")
    if linewidth_mhz <= 0.0:
        raise ValueError("linewidth must be positive")
    grid = _validate_grid(grid, k, linewidth_mhz)
    profile = _unit_profile(rho_c, linewidth_mhz, n_configs, grid, k, env, seed, threads)
    return OdmrSpectrum(grid, 1.0 - contrast * profile)


def spectrum_for_fields(
    fields_xy,
    contrast: float,
    linewidth_mhz: float,
    grid,
    k: CouplingConstants,
) -> OdmrSpectrum:
    """Spectrum for a frozen set of in-plane fields (V/cm), no sampling."""
    if not 0.0 <= contrast < 1.0:
        raise ValueError("non-physical contrast; need 0 <= contrast < 1")
    grid = _validate_grid(grid, k, linewidth_mhz)
    profile = _dip_profile_for_fields(fields_xy, linewidth_mhz, grid, k)
    return OdmrSpectrum(grid, 1.0 - contrast * profile)


def splitting_statistics(
    rho_c: float,
    n_configs: int,
    k: CouplingConstants,
    env: ChargeEnvironment | None = None,
    seed: int = 0,
    threads: int = 1,
) -> dict[str, float]:
    """Mean resonance splitting and centroid over sampled charge environments,
    evaluated on the bare (m=0) hyperfine manifold."""
    env = env if env is not None else ChargeEnvironment()

    def worker(lo, hi):
        fields = _field_components(rho_c, env, seed, lo, hi)
        e1 = k.d_perp * fields[:, 1] * HZ_TO_MHZ
        e2 = k.d_perp * fields[:, 0] * HZ_TO_MHZ
        h = hamiltonian_stack(np.full(hi - lo, k.d0_mhz), e1, e2, 0.0)
        evals, evecs = eigh3_stack(h)
        f_minus, f_plus = resonances_stack(evals, evecs)
        return np.array([
            np.sum(f_plus - f_minus),
            np.sum(0.5 * (f_plus + f_minus)),
        ])

    partials = _map_chunks(worker, n_configs, threads)
    acc = np.zeros(2)
    for p in partials:
        acc += p
    return {
        "mean_splitting_mhz": float(acc[0] / n_configs),
        "mean_centroid_mhz": float(acc[1] / n_configs),
    }


@dataclass
class FitConfig:
    """Search ranges and Monte Carlo settings for the grid fit."""

    rho_range: tuple[float, float] = (0.0, 0.2)
    contrast_range: tuple[float, float] = (0.0, 0.2)
    grid_size: int = 21
    cycles: int = 3
    shrink: float = 5.0
    n_configs: int = 10_000
    linewidth_mhz: float = 30.0  # half width at half maximum
    env: ChargeEnvironment = field(default_factory=ChargeEnvironment)
    threads: int = 1


def _shifted_window(center: float, half: float, lo_bound: float, hi_bound: float):
    lo = center - half
    hi = center + half
    if lo < lo_bound:
        hi += lo_bound - lo
        lo = lo_bound
    if hi > hi_bound:
        lo -= hi - hi_bound
        hi = hi_bound
        lo = max(lo, lo_bound)
    return lo, hi


def fit_spectrum(
    measured: OdmrSpectrum,
    fit_cfg: FitConfig,
    k: CouplingConstants,
    seed: int,
) -> FitResult:
    """Brute-force least-squares fit of (charge density, contrast).

    Each refinement cycle evaluates a grid_size^2 grid, re-centers on the best
    cell and shrinks the span by ``shrink``; the same master seed is reused
    for every candidate so the Monte Carlo noise is common across the grid and
    the objective is a deterministic surface. A best point on the final-cycle
    grid boundary is flagged, not silently accepted.
    """
    base = np.mean(np.concatenate((measured.signal[:3], measured.signal[-3:])))
    if abs(base - 1.0) > 0.05:
        raise ValueError(f"spectrum edges are not at baseline 1 (got {base:.3f})")
    if fit_cfg.grid_size < 2:
        raise ValueError("grid_size must be at least 2")

    # synthesis grid: measured grid extended to satisfy the span requirement
    span = 3.0 * abs(k.a_hf_mhz) + 5.0 * fit_cfg.linewidth_mhz
    step = measured.step
    lo = measured.freqs[0]
    hi = measured.freqs[-1]
    n_lo = max(0, int(math.ceil((lo - (k.d0_mhz - span)) / step)))
    n_hi = max(0, int(math.ceil(((k.d0_mhz + span) - hi) / step)))
    synth_grid = lo + step * np.arange(-n_lo, len(measured.freqs) + n_hi)

    profile_cache: dict[float, np.ndarray] = {}

    def profile_on_measured(rho: float) -> np.ndarray:
        if rho not in profile_cache:
            prof = _unit_profile(
                rho, fit_cfg.linewidth_mhz, fit_cfg.n_configs, synth_grid,
                k, fit_cfg.env, seed, fit_cfg.threads,
            )
            profile_cache[rho] = np.interp(measured.freqs, synth_grid, prof)
        return profile_cache[rho]

    rho_lo, rho_hi = fit_cfg.rho_range
    con_lo, con_hi = fit_cfg.contrast_range
    if not (0.0 <= rho_lo < rho_hi):
        raise ValueError("invalid rho_range")
    if not (0.0 <= con_lo < con_hi < 1.0):
        raise ValueError("invalid contrast_range")

    g = fit_cfg.grid_size
    best = None  # (objective, rho, contrast)
    cycle_objectives = []
    hit_boundary = False
    step_rho = step_con = 0.0

    for cycle in range(fit_cfg.cycles):
        rhos = np.linspace(rho_lo, rho_hi, g)
        cons = np.linspace(con_lo, con_hi, g)
        objective = np.empty((g, g))
        for i, rho in enumerate(rhos):
            prof = profile_on_measured(float(rho))
            resid0 = measured.signal - 1.0
            for j, c in enumerate(cons):
                r = resid0 + c * prof
                objective[i, j] = float(r @ r)
        flat = int(np.argmin(objective))
        bi, bj = divmod(flat, g)
        cyc_best = (float(objective[bi, bj]), float(rhos[bi]), float(cons[bj]))
        cycle_objectives.append(cyc_best[0])
        if best is None or cyc_best[0] < best[0]:
            best = cyc_best

        step_rho = (rho_hi - rho_lo) / (g - 1)
        step_con = (con_hi - con_lo) / (g - 1)
        if cycle == fit_cfg.cycles - 1:
            hit_boundary = bi in (0, g - 1) or bj in (0, g - 1)
        else:
            half_r = (rho_hi - rho_lo) / (2.0 * fit_cfg.shrink)
            half_c = (con_hi - con_lo) / (2.0 * fit_cfg.shrink)
            rho_lo, rho_hi = _shifted_window(best[1], half_r, 0.0, math.inf)
            con_lo, con_hi = _shifted_window(best[2], half_c, 0.0, np.nextafter(1.0, 0.0))

    return FitResult(
        rho_c=best[1],
        contrast=best[2],
        residual=best[0],
        step_rho=step_rho,
        step_contrast=step_con,
        hit_boundary=hit_boundary,
        cycle_objectives=tuple(cycle_objectives),
    )


def relative_density_from_pl(series) -> float:
    """Slope of photoluminescence versus excitation power (counts per unit
    power); ratios of slopes across samples give relative defect densities."""
    slope, _ = extract_coupling_slope(series)
    return slope
