"""Collective spin operators, spin states and the Husimi Q-function.

All matrices are dense and expressed in the Fz eigenbasis ordered
``m = F, F-1, ..., -F`` so that ``fz`` is diagonal with decreasing entries.
Matrix exponentials are taken through a cached Hermitian eigendecomposition
of the generator, which keeps every returned propagator unitary to machine
precision.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Union

import numpy as np
from scipy import ndimage
from scipy.special import gammaln

__all__ = [
    "SpinOperators",
    "PureState",
    "DensityOp",
    "validate_spin",
    "build_spin_operators",
    "spin_coherent_state",
    "coherent_amplitudes",
    "rotation_y",
    "squeezing_operator",
    "expectation",
    "variance",
    "sphere_grid",
    "q_function",
    "q_normalization",
    "q_function_peaks",
    "write_q_function_csv",
]

STATE_TOL = 1e-10


def validate_spin(F) -> float:
    """Return ``F`` as a float after checking that ``2F`` is a positive integer."""
    try:
        twice = 2.0 * float(F)
    except (TypeError, ValueError):
        raise ValueError(f"total spin must be a number, got {F!r}") from None
    if not np.isfinite(twice) or twice <= 0 or abs(twice - round(twice)) > 1e-9:
        raise ValueError(f"total spin must be a positive half-integer, got {F!r}")
    return round(twice) / 2.0


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpinOperators:
    """Dense representation of ``Fx, Fy, Fz`` for a total spin ``F``."""

    F: float
    fx: np.ndarray
    fy: np.ndarray
    fz: np.ndarray
    _eig_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.fz.shape[0]

    @property
    def m(self) -> np.ndarray:
        """Fz eigenvalues in basis order (``F`` down to ``-F``)."""
        return self.fz.diagonal().real.copy()

    @property
    def fplus_x(self) -> np.ndarray:
        """Raising operator about x, ``Fy + i Fz``."""
        return self.fy + 1j * self.fz

    @property
    def fminus_x(self) -> np.ndarray:
        """Lowering operator about x, ``Fy - i Fz``."""
        return self.fy - 1j * self.fz

    @property
    def identity(self) -> np.ndarray:
        return np.eye(self.dim, dtype=complex)

    def eigh(self, name: str):
        """Cached ``(eigenvalues, eigenvectors)`` of a named Hermitian generator.

        ``name`` is one of ``"fx"``, ``"fy"``, ``"fz"`` or ``"squeeze"``; the
        latter is the anti-commutator ``Fz Fy + Fy Fz``.
        """
        if name not in self._eig_cache:
            if name == "squeeze":
                h = self.fz @ self.fy + self.fy @ self.fz
            else:
                h = getattr(self, name)
            w, v = np.linalg.eigh(h)
            self._eig_cache[name] = (_frozen(w), _frozen(v))
        return self._eig_cache[name]

    def propagator(self, name: str, angle: float) -> np.ndarray:
        """``exp(-i * angle * G)`` for the named Hermitian generator ``G``."""
        w, v = self.eigh(name)
        return (v * np.exp(-1j * angle * w)) @ v.conj().T


@lru_cache(maxsize=64)
def _spin_operators_cached(twice_F: int) -> SpinOperators:
    F = twice_F / 2.0
    m = F - np.arange(twice_F + 1)
    # <m+1|F+|m> = sqrt((F-m)(F+m+1)); with descending order m+1 sits one row above m
    raise_coef = np.sqrt((F - m[1:]) * (F + m[1:] + 1.0))
    fplus = np.diag(raise_coef, k=1).astype(complex)
    fminus = fplus.conj().T
    fx = 0.5 * (fplus + fminus)
    fy = -0.5j * (fplus - fminus)
    fz = np.diag(m).astype(complex)
    return SpinOperators(F=F, fx=_frozen(fx), fy=_frozen(fy), fz=_frozen(fz))


def build_spin_operators(F) -> SpinOperators:
    """Collective spin matrices for total spin ``F``.

    Results are cached per ``F`` and the arrays are read-only, so the same
    object can be shared between concurrent workers.

    Examples
    --------
    >>> ops = build_spin_operators(0.5)
    >>> ops.fz.diagonal().real
    array([ 0.5, -0.5])
    """
    F = validate_spin(F)
    return _spin_operators_cached(int(round(2 * F)))


@dataclass(frozen=True, eq=False)
class PureState:
    """Normalized amplitude vector of length ``2F+1`` in the Fz basis."""

    F: float
    amplitudes: np.ndarray

    def __post_init__(self):
        F = validate_spin(self.F)
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.shape[0] != int(round(2 * F)) + 1:
            raise ValueError(f"expected {int(round(2 * F)) + 1} amplitudes, got {amps.shape[0]}")
        if not np.all(np.isfinite(amps)):
            raise ValueError("state amplitudes must be finite")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > STATE_TOL:
            raise ValueError(f"state is not normalized (norm={norm!r})")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "amplitudes", _frozen(amps))

    @classmethod
    def normalized(cls, F, amplitudes) -> "PureState":
        amps = np.asarray(amplitudes, dtype=complex)
        return cls(F, amps / np.linalg.norm(amps))

    def density(self) -> "DensityOp":
        return DensityOp(self.F, np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True, eq=False)
class DensityOp:
    """Hermitian, unit-trace, positive semidefinite matrix."""

    F: float
    matrix: np.ndarray

    def __post_init__(self):
        F = validate_spin(self.F)
        rho = np.asarray(self.matrix, dtype=complex)
        d = int(round(2 * F)) + 1
        if rho.shape != (d, d):
            raise ValueError(f"expected a {d}x{d} matrix, got shape {rho.shape}")
        if not np.all(np.isfinite(rho)):
            raise ValueError("density matrix entries must be finite")
        if np.max(np.abs(rho - rho.conj().T)) > STATE_TOL:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(rho).real - 1.0) > STATE_TOL:
            raise ValueError(f"density matrix trace is {np.trace(rho).real!r}, expected 1")
        if np.linalg.eigvalsh(rho).min() < -1e-8:
            raise ValueError("density matrix has a negative eigenvalue")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "matrix", _frozen(rho))


State = Union[PureState, DensityOp]


def coherent_amplitudes(F, theta, phi) -> np.ndarray:
    """Amplitudes of spin-coherent states ``|theta, phi>``.

    ``theta`` and ``phi`` broadcast against each other; the result has shape
    ``broadcast_shape + (2F+1,)``. The state is ``exp(-i phi Fz) exp(-i theta Fy)|F, F>``,
    i.e. the ``+F`` eigenvector of ``sin(theta)cos(phi) Fx + sin(theta)sin(phi) Fy + cos(theta) Fz``.
    Evaluated in log space so that large ``F`` does not overflow the binomials.
    """
    F = validate_spin(F)
    n = int(round(2 * F))
    theta, phi = np.broadcast_arrays(np.asarray(theta, float), np.asarray(phi, float))
    k = np.arange(n + 1)  # k = F - m
    m = F - k
    log_binom = 0.5 * (gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))
    c = np.cos(theta / 2.0)[..., None]
    s = np.sin(theta / 2.0)[..., None]
    # 0 * log(0) must vanish for the endpoint components
    with np.errstate(divide="ignore", invalid="ignore"):
        log_c = np.log(np.abs(c))
        log_s = np.log(np.abs(s))
        term_c = np.where((n - k) == 0, 0.0, (n - k) * log_c)
        term_s = np.where(k == 0, 0.0, k * log_s)
    mag = np.exp(log_binom + term_c + term_s)
    sign = np.where((n - k) % 2 == 1, np.sign(c), 1.0) * np.where(k % 2 == 1, np.sign(s), 1.0)
    return mag * sign * np.exp(-1j * m * phi[..., None])


def spin_coherent_state(F, theta: float, phi: float) -> PureState:
    """Spin-coherent state pointing along the polar angles ``(theta, phi)``.

    ``spin_coherent_state(F, pi/2, 0)`` is the x-polarized state ``|F, +F_x>``.
    """
    F = validate_spin(F)
    amps = coherent_amplitudes(F, float(theta), float(phi))
    return PureState(F, amps / np.linalg.norm(amps))


def rotation_y(F, theta: float) -> np.ndarray:
    """Rotation ``exp(-i theta Fy)``.

    Conjugation obeys ``Y^dag Fz Y = Fz cos(theta) - Fx sin(theta)``; acting on
    ``|F, +F_x>`` it produces ``<Fz> = -F sin(theta)``.
    """
    return build_spin_operators(F).propagator("fy", float(theta))


def squeezing_operator(F, xi: float) -> np.ndarray:
    """One-axis-twisting type squeezer ``exp(-2i xi (Fz Fy + Fy Fz))``.

    For ``xi > 0`` acting on ``|F, +F_x>`` it reduces ``Var(Fz)`` and
    increases ``Var(Fy)``.
    """
    if not np.isfinite(xi):
        raise ValueError("squeezing parameter must be finite")
    return build_spin_operators(F).propagator("squeeze", 2.0 * float(xi))


def _as_array(state) -> np.ndarray:
    if isinstance(state, PureState):
        return state.amplitudes
    if isinstance(state, DensityOp):
        return state.matrix
    return np.asarray(state)


def expectation(state, op: np.ndarray) -> complex:
    """``<psi|op|psi>`` for a pure state or ``Tr(op rho)`` for a density operator.

    Raw numpy vectors and matrices are accepted as well.
    """
    s = _as_array(state)
    op = np.asarray(op)
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        raise ValueError("operator must be a square matrix")
    if s.shape[0] != op.shape[0]:
        raise ValueError(f"dimension mismatch: state {s.shape[0]} vs operator {op.shape[0]}")
    if s.ndim == 1:
        return complex(np.vdot(s, op @ s))
    if s.ndim == 2 and s.shape[1] == s.shape[0]:
        return complex(np.trace(op @ s))
    raise ValueError(f"cannot interpret array of shape {s.shape} as a state")


def variance(state, op: np.ndarray) -> float:
    mean = expectation(state, op).real
    return expectation(state, op @ op).real - mean**2


def sphere_grid(n_theta: int = 100, n_phi: int = 200):
    """Uniform ``theta x phi`` grid with ``sin(theta)`` quadrature weights.

    Polar nodes sit at cell midpoints, azimuthal nodes at ``2 pi j / n_phi``.
    Returns ``(theta, phi, weights)`` where ``theta`` has shape ``(n_theta,)``,
    ``phi`` shape ``(n_phi,)`` and ``weights`` shape ``(n_theta, n_phi)``; the
    weights sum to ``4 pi`` up to the midpoint-rule error.
    """
    if n_theta < 1 or n_phi < 1:
        raise ValueError("grid must have at least one node in each direction")
    dtheta = np.pi / n_theta
    dphi = 2.0 * np.pi / n_phi
    theta = (np.arange(n_theta) + 0.5) * dtheta
    phi = np.arange(n_phi) * dphi
    weights = np.repeat((np.sin(theta) * dtheta * dphi)[:, None], n_phi, axis=1)
    return theta, phi, weights


def q_function(state, theta, phi) -> np.ndarray:
    """Husimi function ``|<theta, phi|psi>|^2`` on the grid ``theta x phi``.

    ``theta`` and ``phi`` are 1-D node arrays; the result has shape
    ``(len(theta), len(phi))`` and every value lies in ``[0, 1]``.
    """
    psi = _as_array(state)
    if psi.ndim != 1:
        raise ValueError("q_function needs a pure state")
    theta = np.atleast_1d(np.asarray(theta, float))
    phi = np.atleast_1d(np.asarray(phi, float))
    if theta.size == 0 or phi.size == 0:
        raise ValueError("empty grid")
    F = (psi.shape[0] - 1) / 2.0
    psi = psi / np.linalg.norm(psi)
    # <theta,phi|psi> = sum_m conj(d_m(theta)) e^{+i m phi} psi_m; the theta
    # part is real so the phi sum is a small matrix product.
    d = coherent_amplitudes(F, theta, 0.0).real  # (n_theta, dim)
    m = F - np.arange(psi.shape[0])
    phase = np.exp(1j * np.outer(m, phi))  # (dim, n_phi)
    overlap = (d * psi[None, :]) @ phase
    return np.clip(np.abs(overlap) ** 2, 0.0, 1.0)


def q_normalization(q: np.ndarray, weights: np.ndarray, F) -> float:
    """``(2F+1)/(4 pi) * sum(Q * w)``; equals 1 for an exact quadrature."""
    F = validate_spin(F)
    return float((2 * F + 1) / (4 * np.pi) * np.sum(q * weights))


def q_function_peaks(q: np.ndarray, min_fraction: float = 0.1, size: int = 3):
    """Grid indices ``(i_theta, j_phi)`` of local maxima of a Q-function.

    A node is a peak when it equals the maximum of its ``size x size``
    neighbourhood (periodic in phi) and exceeds ``min_fraction`` of the global
    maximum. Plateaus are collapsed to a single representative node.
    Peaks are returned in decreasing order of height.
    """
    q = np.asarray(q, float)
    local = ndimage.maximum_filter(q, size=size, mode=("nearest", "wrap"))
    mask = (q == local) & (q >= min_fraction * q.max())
    labels, n = ndimage.label(mask, structure=np.ones((3, 3)))
    peaks = []
    for lab in range(1, n + 1):
        idx = np.argwhere(labels == lab)
        best = idx[np.argmax(q[idx[:, 0], idx[:, 1]])]
        peaks.append((int(best[0]), int(best[1])))
    peaks.sort(key=lambda ij: -q[ij])
    return peaks


def write_q_function_csv(path, theta, phi, q) -> None:
    """Write a Q-function grid as CSV with columns ``theta, phi, q`` (row-major)."""
    q = np.asarray(q)
    if q.shape != (len(theta), len(phi)):
        raise ValueError("q must have shape (len(theta), len(phi))")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta", "phi", "q"])
        for i, th in enumerate(theta):
            for j, ph in enumerate(phi):
                writer.writerow([repr(float(th)), repr(float(ph)), repr(float(q[i, j]))])
