"""Microscopic point-charge environment around the defect.

Parasitic elementary charges are drawn uniformly inside a simulation sphere,
projected onto the nearest sites of a layered honeycomb lattice and summed
into a Coulomb field at the origin, where the defect sits. Randomness flows
through per-configuration substreams derived from (master seed, config
index), so batches are bit-reproducible regardless of evaluation order.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .couplings import ElectricFieldVec
from .units import COULOMB_V_NM, V_PER_NM_TO_V_PER_CM

__all__ = [
    "HexLattice",
    "ChargeConfiguration",
    "ChargeEnvironment",
    "config_rng",
    "radial_from_unit",
    "sample_positions",
    "snap_to_lattice",
    "field_at_origin",
    "fields_for_configs",
    "sample_charge_field",
]

# 3x3 neighborhood in oblique lattice coordinates; rounding the fractional
# coordinates can be off by at most one cell for this geometry.
_CELL_SHIFTS = np.array(
    [(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=np.int64
)


def config_rng(master_seed: int, config_index: int) -> np.random.Generator:
    """Independent substream for one configuration of a seeded batch."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=master_seed, spawn_key=(config_index,))
    )


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class HexLattice:
    """Layered honeycomb host lattice.

    ``a_nm`` is the in-plane lattice constant, ``interlayer_nm`` the spacing
    between adjacent layers. Stacking alternates the two sublattice species
    between layers but leaves the in-plane site positions unchanged, so the
    site set factorizes into (honeycomb in-plane) x (layer index).
    """

    a_nm: float = 0.2504
    interlayer_nm: float = 0.333

    def __post_init__(self):
        if not (self.a_nm > 0.0 and self.interlayer_nm > 0.0):
            raise ValueError("lattice constants must be positive")

    @cached_property
    def _vectors(self) -> np.ndarray:
        # columns are the two Bravais vectors
        a = self.a_nm
        return np.array([[a, 0.5 * a], [0.0, 0.5 * math.sqrt(3.0) * a]])

    @cached_property
    def _inv_vectors(self) -> np.ndarray:
        return np.linalg.inv(self._vectors)

    @cached_property
    def _offsets(self) -> np.ndarray:
        # sublattice offsets: cell corner and the site at (a1+a2)/3
        v = self._vectors
        return np.array([[0.0, 0.0], (v[:, 0] + v[:, 1]) / 3.0])

    @property
    def nn_distance_nm(self) -> float:
        """In-plane distance between the two sublattices."""
        return self.a_nm / math.sqrt(3.0)

    @cached_property
    def _shift_cart(self) -> np.ndarray:
        # the 9 candidate-cell translations in cartesian coordinates
        return _CELL_SHIFTS.astype(float) @ self._vectors.T

    def nearest_sites(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Nearest lattice site for each 3D point.

        Returns (positions (N,3) nm, ids (N,4) ints) where an id row is
        (sublattice, n1, n2, layer). The layer is simply the nearest layer
        plane because the in-plane site positions repeat identically per
        layer.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        n = len(pts)
        xy = pts[:, :2]
        layer = np.rint(pts[:, 2] / self.interlayer_nm).astype(np.int64)

        frac = xy @ self._inv_vectors.T  # (n, 2)
        off_frac = self._offsets @ self._inv_vectors.T  # (2 sublattices, 2)
        base = np.rint(frac[:, None, :] - off_frac[None, :, :]).astype(np.int64)
        base_cart = (base.reshape(-1, 2) @ self._vectors.T).reshape(n, 2, 2)
        resid = xy[:, None, :] - (base_cart + self._offsets[None, :, :])

        # |resid - shift|^2 expanded so the cross term is a single matmul
        rv = resid.reshape(-1, 2)
        sv = self._shift_cart
        d2 = (
            np.sum(rv * rv, axis=1)[:, None]
            - 2.0 * (rv @ sv.T)
            + np.sum(sv * sv, axis=1)[None, :]
        ).reshape(n, -1)

        flat = np.argmin(d2, axis=1)
        sub = flat // len(_CELL_SHIFTS)
        cell = flat % len(_CELL_SHIFTS)
        rows = np.arange(n)
        cells = base[rows, sub] + _CELL_SHIFTS[cell]
        ids = np.empty((n, 4), dtype=np.int64)
        ids[:, 0] = sub
        ids[:, 1:3] = cells
        ids[:, 3] = layer
        positions = np.empty((n, 3))
        positions[:, :2] = cells.astype(float) @ self._vectors.T + self._offsets[sub]
        positions[:, 2] = layer * self.interlayer_nm
        return positions, ids

    def site_position(self, ids) -> np.ndarray:
        """Cartesian positions (nm) for an (N,4) array of site ids."""
        ids = np.asarray(ids, dtype=np.int64).reshape(-1, 4)
        xy = ids[:, 1:3] @ self._vectors.T + self._offsets[ids[:, 0]]
        z = ids[:, 3:4] * self.interlayer_nm
        return np.hstack((xy, z))

    def sites_within(self, radius_nm: float) -> np.ndarray:
        """Enumerate all site positions inside a ball. Intended for oracles and
        small radii; nearest-site queries never need this."""
        if radius_nm <= 0.0:
            return np.empty((0, 3))
        n_layers = int(math.floor(radius_nm / self.interlayer_nm))
        m = int(math.ceil(1.16 * radius_nm / self.a_nm)) + 2
        n1, n2 = np.meshgrid(np.arange(-m, m + 1), np.arange(-m, m + 1), indexing="ij")
        cells = np.column_stack((n1.ravel(), n2.ravel()))
        plane = np.vstack([cells @ self._vectors.T + off for off in self._offsets])
        out = []
        for layer in range(-n_layers, n_layers + 1):
            z = layer * self.interlayer_nm
            rho2 = radius_nm**2 - z**2
            sub = plane[np.sum(plane**2, axis=1) <= rho2]
            out.append(np.column_stack((sub, np.full(len(sub), z))))
        return np.vstack(out) if out else np.empty((0, 3))


@dataclass
class ChargeConfiguration:
    """Point charges (positions in nm, charge in units of e) around the defect
    at the origin."""

    positions: np.ndarray
    charges: np.ndarray
    radius_nm: float
    rho_c: float
    exclusion_nm: float = 0.5

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.charges = np.asarray(self.charges, dtype=np.int64).reshape(-1)
        if len(self.positions) != len(self.charges):
            raise ValueError("positions and charges lengths differ")
        if len(self.positions):
            dist = np.linalg.norm(self.positions, axis=1)
            if np.any(dist > self.radius_nm + 1e-9):
                raise ValueError("charge outside the simulation radius")
            if np.any(dist < self.exclusion_nm - 1e-9):
                raise ValueError("charge inside the exclusion radius")
            rounded = np.round(self.positions, 6)
            if len(np.unique(rounded, axis=0)) != len(rounded):
                raise ValueError("duplicate charge positions")

    def __len__(self) -> int:
        return len(self.charges)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("x_nm,y_nm,z_nm,q_e\n")
        for (x, y, z), q in zip(self.positions, self.charges):
            buf.write(f"{x:.9g},{y:.9g},{z:.9g},{q:d}\n")
        return buf.getvalue()

    def dump_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def radial_from_unit(u, radius_nm: float):
    """Radial inverse-CDF transform: distance = radius * cbrt(u) puts points
    uniformly in the ball when u is uniform on (0, 1]."""
    return radius_nm * np.cbrt(u)


def _ball_points(n: int, radius_nm: float, rng: np.random.Generator) -> np.ndarray:
    dirs = rng.standard_normal((n, 3))
    norms = np.linalg.norm(dirs, axis=1)
    while np.any(norms < 1e-12):  # essentially never
        bad = norms < 1e-12
        dirs[bad] = rng.standard_normal((int(bad.sum()), 3))
        norms = np.linalg.norm(dirs, axis=1)
    u = 1.0 - rng.random(n)  # uniform on (0, 1]
    return dirs * (radial_from_unit(u, radius_nm) / norms)[:, None]


def _gaussian_points(n: int, radius_nm: float, rng: np.random.Generator) -> np.ndarray:
    # comparison mode: isotropic normal positions with scale set by the
    # simulation radius, truncated to the ball
    out = np.empty((n, 3))
    filled = 0
    while filled < n:
        draw = rng.standard_normal((max(n - filled, 16) * 6, 3)) * radius_nm
        keep = draw[np.linalg.norm(draw, axis=1) <= radius_nm]
        take = min(len(keep), n - filled)
        out[filled : filled + take] = keep[:take]
        filled += take
    return out


_SAMPLERS = {"ball": _ball_points, "gaussian": _gaussian_points}


def sample_positions(rho_c: float, radius_nm: float, rng, mode: str = "ball") -> np.ndarray:
    """Random charge positions for a mean density rho_c (nm^-3) in a sphere.

    The count is round(rho_c * (4/3) pi radius^3). In the default "ball" mode
    directions come from normalized standard-normal vectors and distances from
    the cube-root law, which is uniform in the ball; "gaussian" switches to
    truncated isotropic normal positions for comparison studies.
    """
    if rho_c < 0.0:
        raise ValueError("charge density must be non-negative")
    if radius_nm <= 0.0:
        raise ValueError("radius must be positive")
    if mode not in _SAMPLERS:
        raise ValueError(f"unknown sampling mode {mode!r}")
    rng = _as_generator(rng)
    n = int(round(rho_c * (4.0 / 3.0) * math.pi * radius_nm**3))
    if n == 0:
        return np.empty((0, 3))
    return _SAMPLERS[mode](n, radius_nm, rng)


def _pack_site_ids(ids: np.ndarray) -> np.ndarray:
    """(sublattice, n1, n2, layer) -> int64 key, unique within 30 bits."""
    n1, n2, layer = ids[:, 1], ids[:, 2], ids[:, 3]
    if len(ids) and (
        np.abs(n1).max() >= 512 or np.abs(n2).max() >= 512 or np.abs(layer).max() >= 256
    ):
        raise ValueError("site indices out of packing range; radius too large")
    return ids[:, 0] | ((n1 + 512) << 1) | ((n2 + 512) << 11) | ((layer + 256) << 21)


def _snap_batch(point_sets, lattice, exclusion_nm, rngs, radius_nm, mode):
    """Snap several point sets onto distinct sites, one rng per set.

    Returns a list of (N_i, 3) position arrays. Shared implementation behind
    `snap_to_lattice`; processing many configurations in one vectorized pass
    draws exactly the same per-configuration random numbers as one at a time.
    """
    counts = [len(p) for p in point_sets]
    total = int(np.sum(counts, dtype=np.int64))
    n_cfg = len(point_sets)
    if total == 0:
        return [np.empty((0, 3)) for _ in point_sets]
    sampler = _SAMPLERS[mode]

    cfg_of = np.repeat(np.arange(n_cfg, dtype=np.int64), counts)
    current = np.vstack([p for p in point_sets if len(p)])
    positions = np.empty((total, 3))
    pending = np.arange(total)
    attempts = np.zeros(total, dtype=np.int64)
    taken = np.empty(0, dtype=np.int64)

    while pending.size:
        snap_pos, snap_ids = lattice.nearest_sites(current[pending])
        keys = (cfg_of[pending] << 31) | _pack_site_ids(snap_ids)
        dist = np.linalg.norm(snap_pos, axis=1)
        ok = (dist >= exclusion_nm) & (dist <= radius_nm)
        ok &= ~np.isin(keys, taken)
        first = np.zeros(pending.size, dtype=bool)
        _, first_idx = np.unique(keys, return_index=True)
        first[first_idx] = True
        ok &= first

        good = pending[ok]
        positions[good] = snap_pos[ok]
        taken = np.concatenate((taken, keys[ok]))

        pending = pending[~ok]
        if pending.size:
            attempts[pending] += 1
            if np.any(attempts[pending] > 100):
                raise RuntimeError(
                    "could not place all charges on distinct lattice sites; "
                    "density too high for the lattice"
                )
            # redraw failures from their own configuration's stream, in order
            redraw_cfgs, redraw_counts = np.unique(cfg_of[pending], return_counts=True)
            fresh = [
                sampler(int(cnt), radius_nm, rngs[int(ci)])
                for ci, cnt in zip(redraw_cfgs, redraw_counts)
            ]
            current[pending] = np.vstack(fresh)

    out = []
    offset = 0
    for cnt in counts:
        out.append(positions[offset : offset + cnt])
        offset += cnt
    return out


def snap_to_lattice(
    points,
    lattice: HexLattice,
    exclusion_nm: float,
    rng,
    radius_nm: float | None = None,
    rho_c: float | None = None,
    mode: str = "ball",
) -> ChargeConfiguration:
    """Project sampled points onto distinct lattice sites, all charged +1e.

    Sites closer to the origin than ``exclusion_nm``, outside the simulation
    radius, or already taken are replaced by snapping a freshly sampled point;
    a slot that fails 100 times raises (density too high for the lattice).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    rng = _as_generator(rng)
    n = len(pts)
    if radius_nm is None:
        radius_nm = float(np.linalg.norm(pts, axis=1).max()) if n else exclusion_nm
    if rho_c is None:
        rho_c = n / ((4.0 / 3.0) * math.pi * radius_nm**3)
    positions = _snap_batch([pts], lattice, exclusion_nm, [rng], radius_nm, mode)[0]
    charges = np.ones(n, dtype=np.int64)
    return ChargeConfiguration(positions, charges, radius_nm, rho_c, exclusion_nm)


def _coulomb_v_per_cm(positions, charges, eps_r) -> np.ndarray:
    dist = np.linalg.norm(positions, axis=1)
    contrib = (-positions) * (charges / dist**3)[:, None]
    e_vnm = COULOMB_V_NM / eps_r * contrib.sum(axis=0)
    return e_vnm * V_PER_NM_TO_V_PER_CM


def field_at_origin(cfg: ChargeConfiguration, eps_r: float = 1.0) -> ElectricFieldVec:
    """Coulomb field of all charges evaluated at the origin, in V/cm.

    E = sum_k K * q_k * (-r_k) / (eps_r * |r_k|^3) with K = e/(4 pi eps0)
    expressed in V*nm; the result is converted from V/nm to V/cm.
    """
    if eps_r <= 0.0:
        raise ValueError("relative permittivity must be positive")
    if len(cfg) == 0:
        return ElectricFieldVec(0.0, 0.0, 0.0)
    dist = np.linalg.norm(cfg.positions, axis=1)
    if np.any(dist < max(cfg.exclusion_nm, 1e-12) - 1e-9):
        raise ValueError("charge inside the exclusion radius")
    ex, ey, ez = _coulomb_v_per_cm(cfg.positions, cfg.charges, eps_r)
    return ElectricFieldVec(float(ex), float(ey), float(ez))


@dataclass(frozen=True)
class ChargeEnvironment:
    """Bundle of lattice and sampling parameters for charge-environment runs."""

    lattice: HexLattice = field(default_factory=HexLattice)
    radius_nm: float = 10.0
    eps_r: float = 1.0
    exclusion_nm: float = 0.5
    mode: str = "ball"

    def draw(self, rho_c: float, rng) -> ChargeConfiguration:
        rng = _as_generator(rng)
        pts = sample_positions(rho_c, self.radius_nm, rng, self.mode)
        return snap_to_lattice(
            pts, self.lattice, self.exclusion_nm, rng,
            radius_nm=self.radius_nm, rho_c=rho_c, mode=self.mode,
        )


def sample_charge_field(env: ChargeEnvironment, rho_c: float, rng) -> ElectricFieldVec:
    """Draw one charge configuration and return its field at the origin."""
    return field_at_origin(env.draw(rho_c, rng), env.eps_r)


def fields_for_configs(
    env: ChargeEnvironment, rho_c: float, master_seed: int, lo: int, hi: int
) -> np.ndarray:
    """Coulomb fields (V/cm) at the origin for configurations lo..hi-1.

    Bit-identical to drawing each configuration through `sample_charge_field`
    with its `config_rng` substream, but snapped in one vectorized pass.
    """
    n_cfg = hi - lo
    if n_cfg <= 0:
        return np.empty((0, 3))
    rngs = [config_rng(master_seed, i) for i in range(lo, hi)]
    point_sets = [
        sample_positions(rho_c, env.radius_nm, r, env.mode) for r in rngs
    ]
    snapped = _snap_batch(
        point_sets, env.lattice, env.exclusion_nm, rngs, env.radius_nm, env.mode
    )
    fields = np.zeros((n_cfg, 3))
    for j, pos in enumerate(snapped):
        if len(pos):
            fields[j] = _coulomb_v_per_cm(pos, np.ones(len(pos), dtype=np.int64), env.eps_r)
    return fields
