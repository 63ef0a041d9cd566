"""Spin-1 operator algebra, zero-field Hamiltonians and a small Hermitian eigensolver.

All matrices live in the Sz eigenbasis ordered {|+1>, |0>, |-1>}. Hamiltonian
entries carry MHz; the bare spin operators are dimensionless. Every function
here is pure and every returned array is freshly allocated or read-only, so
the module is safe to use from concurrent workers.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ZfsParameters",
    "spin_operators",
    "build_hamiltonian",
    "hamiltonian_stack",
    "eigensolve",
    "eigh3_stack",
    "resonance_frequencies",
    "resonances_stack",
    "d_tensor_to_zfs",
]

_SQRT2 = math.sqrt(2.0)

_SX = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex) / _SQRT2
_SY = np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=complex) / _SQRT2
_SZ = np.array([[1, 0, 0], [0, 0, 0], [0, 0, -1]], dtype=complex)

# Bilinear blocks the zero-field Hamiltonian is assembled from.
_AXIAL = _SZ @ _SZ - (2.0 / 3.0) * np.eye(3, dtype=complex)  # Sz^2 - S(S+1)/3
_TRANSVERSE_1 = _SX @ _SX - _SY @ _SY
_TRANSVERSE_2 = _SX @ _SY + _SY @ _SX

for _m in (_SX, _SY, _SZ, _AXIAL, _TRANSVERSE_1, _TRANSVERSE_2):
    _m.flags.writeable = False
del _m


@dataclass(frozen=True)
class ZfsParameters:
    """Zero-field splitting parameters in MHz.

    ``d`` multiplies the axial block, ``e1`` the Sx^2-Sy^2 block and ``e2``
    the SxSy+SySx block. Perturbation routines return instances in delta
    form, where ``d`` is a shift on top of an unperturbed axial splitting.
    """

    d: float
    e1: float = 0.0
    e2: float = 0.0

    @property
    def e_eff(self) -> float:
        """Magnitude of the transverse coupling, sqrt(e1^2 + e2^2)."""
        return math.hypot(self.e1, self.e2)

    @property
    def splitting(self) -> float:
        """Resonance splitting of the m_S = +-1 pair, 2*e_eff."""
        return 2.0 * self.e_eff


def spin_operators():
    """Return the S=1 operators (Sx, Sy, Sz) as read-only 3x3 arrays."""
    return _SX, _SY, _SZ


def build_hamiltonian(zfs: ZfsParameters, detuning_mhz: float = 0.0) -> np.ndarray:
    """Assemble the zero-field Hamiltonian in MHz.

    H = d*(Sz^2 - 2/3) + detuning*Sz + e1*(Sx^2-Sy^2) + e2*(SxSy+SySx).
    The detuning term carries secular hyperfine shifts, which are diagonal
    in this basis.
    """
    return (
        zfs.d * _AXIAL
        + detuning_mhz * _SZ
        + zfs.e1 * _TRANSVERSE_1
        + zfs.e2 * _TRANSVERSE_2
    )


def hamiltonian_stack(d, e1, e2, detuning_mhz=0.0) -> np.ndarray:
    """Broadcast coefficient arrays into a (..., 3, 3) Hamiltonian stack."""
    d, e1, e2, det = np.broadcast_arrays(
        np.asarray(d, dtype=float),
        np.asarray(e1, dtype=float),
        np.asarray(e2, dtype=float),
        np.asarray(detuning_mhz, dtype=float),
    )
    shape = d.shape + (1, 1)
    return (
        d.reshape(shape) * _AXIAL
        + det.reshape(shape) * _SZ
        + e1.reshape(shape) * _TRANSVERSE_1
        + e2.reshape(shape) * _TRANSVERSE_2
    )


def eigh3_stack(h, tol: float = 1e-12, max_sweeps: int = 30):
    """Diagonalize a stack of 3x3 Hermitian matrices with cyclic Jacobi sweeps.

    Sweeps run until the off-diagonal Frobenius norm of every matrix drops
    below ``tol`` times its full Frobenius norm. Returns eigenvalues sorted
    ascending, shape (n, 3), and the matching eigenvector columns, shape
    (n, 3, 3). No degeneracy tie-breaking is applied here; `eigensolve`
    adds it for the single-matrix case.
    """
    h = np.array(h, dtype=complex)
    if h.ndim != 3 or h.shape[-2:] != (3, 3):
        raise ValueError(f"expected shape (n, 3, 3), got {h.shape}")
    n = h.shape[0]
    if n == 0:
        return np.empty((0, 3)), np.empty((0, 3, 3), dtype=complex)

    v = np.tile(np.eye(3, dtype=complex), (n, 1, 1))
    norm2 = np.sum(np.abs(h) ** 2, axis=(1, 2)).real
    thresh2 = (tol**2) * norm2  # squared off-diagonal threshold

    converged = False
    for _ in range(max_sweeps):
        off2 = 2.0 * (
            np.abs(h[:, 0, 1]) ** 2 + np.abs(h[:, 0, 2]) ** 2 + np.abs(h[:, 1, 2]) ** 2
        )
        if np.all(off2 <= thresh2):
            converged = True
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            a = h[:, p, q]
            absa = np.abs(a)
            active = absa > 0.0
            safe = np.where(active, absa, 1.0)
            phase = np.where(active, a / safe, 1.0 + 0.0j)
            tau = (h[:, p, p].real - h[:, q, q].real) / (2.0 * safe)
            sign = np.where(tau >= 0.0, 1.0, -1.0)
            t = sign / (np.abs(tau) + np.sqrt(tau * tau + 1.0))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c

            sp = (s * phase)[:, None]
            spc = (s * np.conj(phase))[:, None]
            cc = c[:, None]

            hp = h[:, :, p].copy()
            hq = h[:, :, q].copy()
            h[:, :, p] = cc * hp + spc * hq
            h[:, :, q] = -sp * hp + cc * hq

            rp = h[:, p, :].copy()
            rq = h[:, q, :].copy()
            h[:, p, :] = cc * rp + sp * rq
            h[:, q, :] = -spc * rp + cc * rq

            vp = v[:, :, p].copy()
            vq = v[:, :, q].copy()
            v[:, :, p] = cc * vp + spc * vq
            v[:, :, q] = -sp * vp + cc * vq
    if not converged:
        raise RuntimeError("Jacobi sweeps did not converge")

    evals = np.real(h[:, (0, 1, 2), (0, 1, 2)])
    order = np.argsort(evals, axis=1, kind="stable")
    evals = np.take_along_axis(evals, order, axis=1)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    return evals, v


def _hermiticity_defect(h: np.ndarray) -> float:
    scale = np.linalg.norm(h)
    if scale == 0.0:
        return 0.0
    return np.linalg.norm(h - h.conj().T) / scale


def _fix_phase(vec: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero(np.abs(vec) > 1e-9)
    if idx.size == 0:
        return vec
    lead = vec[idx[0]]
    return vec * (np.conj(lead) / abs(lead))


def eigensolve(h) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending, real) and orthonormal eigenvector columns of a
    Hermitian 3x3 matrix.

    Rejects input whose relative asymmetry exceeds 1e-9. Within degenerate
    clusters, eigenvectors are ordered by descending squared overlap with the
    basis vectors and each is rotated so its first nonzero component is real
    and positive, which makes the output reproducible.
    """
    h = np.asarray(h, dtype=complex)
    if h.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {h.shape}")
    if _hermiticity_defect(h) > 1e-9:
        raise ValueError("matrix is not Hermitian")
    # symmetrize away representation noise before iterating
    h = 0.5 * (h + h.conj().T)

    evals, evecs = eigh3_stack(h[None, :, :])
    evals, evecs = evals[0], evecs[0]

    order = list(range(3))
    scale = max(float(np.max(np.abs(evals))), 1.0)
    tol = 1e-9 * scale
    i = 0
    while i < 3:
        j = i + 1
        while j < 3 and evals[order[j]] - evals[order[i]] <= tol:
            j += 1
        if j - i > 1:
            cluster = order[i:j]
            cluster.sort(key=lambda k: tuple(-np.abs(evecs[:, k]) ** 2))
            order[i:j] = cluster
        i = j

    evals = evals[order]
    evecs = evecs[:, order]
    for k in range(3):
        evecs[:, k] = _fix_phase(evecs[:, k])
    return evals, evecs


def resonances_stack(evals: np.ndarray, evecs: np.ndarray):
    """Transition frequencies out of the m_S=0-like state for a solved stack.

    The m_S=0-like state is the eigenvector with maximal squared overlap with
    |0>; the overlap must exceed 0.5 for the assignment to be meaningful.
    Returns (f_minus, f_plus) arrays with f_minus <= f_plus.
    """
    olap = np.abs(evecs[:, 1, :]) ** 2  # row 1 of each column = <0|v_k>
    k0 = np.argmax(olap, axis=1)
    best = np.take_along_axis(olap, k0[:, None], axis=1)[:, 0]
    if np.any(best < 0.5):
        raise ValueError(
            "perturbation too large to identify the m_S=0-like level "
            f"(min overlap {best.min():.3f})"
        )
    base = np.take_along_axis(evals, k0[:, None], axis=1)
    others = np.arange(3)[None, :] != k0[:, None]
    rest = evals[others].reshape(len(evals), 2)
    freqs = np.sort(rest - base, axis=1)
    return freqs[:, 0], freqs[:, 1]


def resonance_frequencies(h) -> tuple[float, float]:
    """The two transition frequencies from the m_S=0-like eigenstate, ascending.

    Fails if no eigenstate has squared overlap > 0.5 with |0>, which signals
    a perturbation too large for the level assignment to make sense.
    """
    evals, evecs = eigensolve(h)
    f_minus, f_plus = resonances_stack(evals[None, :], evecs[None, :, :])
    return float(f_minus[0]), float(f_plus[0])


def d_tensor_to_zfs(tensor) -> ZfsParameters:
    """Map a symmetric traceless 3x3 interaction tensor (MHz) onto ZfsParameters.

    d = 3*T_zz/2, e1 = (T_xx - T_yy)/2, e2 = (T_xy + T_yx)/2.
    Emits a warning when the trace exceeds 1e-6 of the tensor norm.
    """
    t = np.asarray(tensor, dtype=float)
    if t.shape != (3, 3):
        raise ValueError(f"expected a 3x3 tensor, got shape {t.shape}")
    scale = np.linalg.norm(t)
    if scale > 0.0 and abs(np.trace(t)) > 1e-6 * scale:
        warnings.warn(
            f"interaction tensor has trace {np.trace(t):.3g} MHz; "
            "expected traceless",
            stacklevel=2,
        )
    return ZfsParameters(
        d=1.5 * t[2, 2],
        e1=0.5 * (t[0, 0] - t[1, 1]),
        e2=0.5 * (t[0, 1] + t[1, 0]),
    )
