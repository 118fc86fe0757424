"""Double-pass quantum filter: Itô SSE, Stratonovich SSE and adjoint form.

The conditional state of the spin under continuous measurement of
``L = sqrt(M) Fz + i sqrt(K) Fy`` (first pass at rate ``M``, second pass at
rate ``K``) and Larmor precession about y obeys the Itô SSE

    dpsi = [ i g B Fy - M/2 (Fz - <Fz>)^2 + i sqrt(KM) Fy (Fz + <Fz>) - K/2 Fy^2 ] psi dt
           + [ sqrt(M) (Fz - <Fz>) + i sqrt(K) Fy ] psi dW

with photocurrent ``dZ = dW + 2 sqrt(M) <Fz> dt``. ``K = 0`` is the ordinary
single-pass magnetometer. The ``+i g B Fy`` term fixes the Larmor sense used by
every module: a positive field drives ``<Fz>`` positive from ``|F, +F_x>``.

Array-level functions take ``psi`` of shape ``(dim,)`` or ``(dim, n)``; in the
second form every column is an independent trajectory and ``B`` and ``dW`` may
be given per column.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from .sde_engine import IntegrationError, Interpretation, SdeSystem, wiener_path
from .spin_algebra import DensityOp, PureState, build_spin_operators, spin_coherent_state, validate_spin

__all__ = [
    "ModelParams",
    "MeasurementRecord",
    "x_polarized",
    "fz_mean",
    "sse_ito_drift",
    "sse_diffusion",
    "sse_stratonovich_drift",
    "sse_system",
    "sse_step",
    "sse_ito_step",
    "evolve_sse",
    "adjoint_drift",
    "adjoint_diffusion",
    "adjoint_filter_step",
    "innovations",
    "generate_record",
    "save_record",
    "load_record",
    "trace_distance",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelParams:
    """Physical and numerical parameters; rates in units of ``nu``."""

    F: float
    M: float = 10.0
    K: float = 6e-4
    B: float = 0.0
    gamma: float = 1.0
    dt: float = 1e-5
    t_final: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "F", validate_spin(self.F))
        for name in ("M", "K", "B", "gamma", "dt", "t_final"):
            val = float(getattr(self, name))
            if not np.isfinite(val):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, val)
        if self.M < 0 or self.K < 0:
            raise ValueError("measurement rates M and K must be non-negative")
        if self.dt <= 0 or self.t_final <= 0:
            raise ValueError("dt and t_final must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def dim(self) -> int:
        return int(round(2 * self.F)) + 1

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)


@lru_cache(maxsize=64)
def _stacked(twice_F: int):
    # rows: Fy, Fy^2, Fy Fz -> one matmul yields all three products
    ops = build_spin_operators(twice_F / 2.0)
    fy = np.asarray(ops.fy)
    fz = np.asarray(ops.fz)
    g = np.vstack([fy, fy @ fy, fy @ fz])
    g.setflags(write=False)
    return ops, g


def _ops(params: ModelParams):
    return _stacked(params.dim - 1)


def x_polarized(F) -> np.ndarray:
    """Amplitudes of ``|F, +F_x>``."""
    return spin_coherent_state(F, np.pi / 2, 0.0).amplitudes.copy()


def fz_mean(psi: np.ndarray, m: np.ndarray) -> np.ndarray:
    """``<Fz>`` per column, normalized by ``<psi|psi>``."""
    w = np.abs(psi) ** 2
    if psi.ndim == 1:
        return np.dot(m, w) / w.sum()
    return (m @ w) / w.sum(axis=0)


def _fields(psi, params: ModelParams, B=None):
    """Itô drift and diffusion sharing one stacked matrix product."""
    ops, g = _ops(params)
    d = params.dim
    m = ops.m if psi.ndim == 1 else ops.m[:, None]
    B = params.B if B is None else np.asarray(B)
    c = fz_mean(psi, ops.m)
    prods = g @ psi
    fy_psi, fy2_psi, fyfz_psi = prods[:d], prods[d : 2 * d], prods[2 * d :]
    dz = (m - c) * psi
    skm = np.sqrt(params.K * params.M)
    drift = (
        1j * params.gamma * B * fy_psi
        - 0.5 * params.M * (m - c) * dz
        + 1j * skm * (fyfz_psi + c * fy_psi)
        - 0.5 * params.K * fy2_psi
    )
    diffusion = np.sqrt(params.M) * dz + 1j * np.sqrt(params.K) * fy_psi
    return drift, diffusion, c


def sse_ito_drift(psi, params: ModelParams, B=None) -> np.ndarray:
    return _fields(np.asarray(psi, complex), params, B)[0]


def sse_diffusion(psi, params: ModelParams) -> np.ndarray:
    """``[sqrt(M)(Fz - <Fz>) + i sqrt(K) Fy] psi``; shared by both calculi."""
    return _fields(np.asarray(psi, complex), params)[1]


def sse_stratonovich_drift(state, params: ModelParams, B=None) -> np.ndarray:
    """Closed-form Stratonovich drift of the double-pass SSE.

    ``[ i g B Fy - M((Fz-<Fz>)^2 - <dFz^2>) - sqrt(KM)/2 Fx
    + 2i sqrt(KM) <Fz> Fy + i sqrt(KM) <Fz Fy> ] psi``.

    On real-amplitude states (an invariant set containing ``|F,+F_x>``) this
    equals the generic Itô-to-Stratonovich conversion exactly. For general
    complex states the generic conversion exceeds this drift by the pure
    phase rate ``-i sqrt(KM) Re<Fz Fy> psi``, which changes only the global
    phase.
    """
    psi = state.amplitudes if isinstance(state, PureState) else np.asarray(state, complex)
    ops, g = _ops(params)
    d = params.dim
    m = ops.m if psi.ndim == 1 else ops.m[:, None]
    B = params.B if B is None else np.asarray(B)
    norm2 = np.sum(np.abs(psi) ** 2, axis=0)
    c = fz_mean(psi, ops.m)
    var_z = np.sum(m**2 * np.abs(psi) ** 2, axis=0) / norm2 - c**2
    prods = g @ psi
    fy_psi = prods[:d]
    fx_psi = np.asarray(ops.fx) @ psi
    # <Fz Fy> = <psi| Fz Fy |psi> = conj(Fz psi) . (Fy psi)
    zy = np.sum(np.conj(m * psi) * fy_psi, axis=0) / norm2
    skm = np.sqrt(params.K * params.M)
    return (
        1j * params.gamma * B * fy_psi
        - params.M * ((m - c) ** 2 - var_z) * psi
        - 0.5 * skm * fx_psi
        + 2j * skm * c * fy_psi
        + 1j * skm * zy * psi
    )


def _normalize(psi: np.ndarray) -> np.ndarray:
    return psi / np.sqrt(np.sum(np.abs(psi) ** 2, axis=0))


def sse_system(params: ModelParams, B=None, interpretation: Interpretation = Interpretation.ITO) -> SdeSystem:
    """The SSE as a generic :class:`SdeSystem` with renormalization after each step.

    With ``interpretation=STRATONOVICH`` the closed-form Stratonovich drift is used.
    """
    if interpretation is Interpretation.ITO:
        drift = lambda t, x: _fields(x, params, B)[0]  # noqa: E731
    else:
        drift = lambda t, x: sse_stratonovich_drift(x, params, B)  # noqa: E731
    diffusion = lambda t, x: _fields(x, params, B)[1]  # noqa: E731
    return SdeSystem(drift, diffusion, interpretation, _normalize)


def sse_step(psi: np.ndarray, params: ModelParams, dW, B=None) -> np.ndarray:
    """One predictor-corrector step of the Itô SSE driven by the innovation ``dW``.

    Same arithmetic as :func:`spinfilter.sde_engine.integrate` applied to
    :func:`sse_system`, but sharing matrix products between drift and diffusion.
    """
    dt = params.dt
    a0, b0, _ = _fields(psi, params, B)
    pred = psi + a0 * dt + b0 * dW
    a1 = _fields(pred, params, B)[0]
    return _normalize(psi + 0.5 * (a0 + a1) * dt + b0 * dW)


def sse_ito_step(state: PureState, params: ModelParams, dW: float) -> PureState:
    """Advance a :class:`PureState` by one SSE step; the result is renormalized."""
    psi = sse_step(state.amplitudes, params, float(dW))
    if not np.all(np.isfinite(psi)):
        raise IntegrationError("non-finite amplitudes", 0, 0.0)
    return PureState(state.F, psi)


def evolve_sse(psi0, params: ModelParams, increments, B=None, record_fz: bool = False):
    """Integrate the Itô SSE along ``increments`` (shape ``(n,)`` or ``(n, cols)``).

    Returns the final state, plus the ``<Fz>`` value at the start of every step
    (shape ``(n,)`` or ``(n, cols)``) when ``record_fz`` is true.
    """
    ops, _ = _ops(params)
    psi = np.array(psi0, dtype=complex, copy=True)
    increments = np.asarray(increments)
    fz_trace = np.empty(increments.shape) if record_fz else None
    for k in range(increments.shape[0]):
        if record_fz:
            fz_trace[k] = fz_mean(psi, ops.m)
        psi = sse_step(psi, params, increments[k], B)
        if not np.all(np.isfinite(psi)):
            raise IntegrationError("non-finite amplitudes", k, (k + 1) * params.dt)
    return (psi, fz_trace) if record_fz else psi


# ---------------------------------------------------------------- adjoint form


def _dissipator(op, rho):
    return op @ rho @ op.conj().T - 0.5 * (op.conj().T @ op @ rho + rho @ op.conj().T @ op)


def adjoint_drift(rho: np.ndarray, params: ModelParams) -> np.ndarray:
    """Deterministic part of the adjoint filter (innovations kept separate)."""
    ops = build_spin_operators(params.F)
    fy, fz = np.asarray(ops.fy), np.asarray(ops.fz)
    anti = fz @ rho + rho @ fz
    return (
        1j * params.gamma * params.B * (fy @ rho - rho @ fy)
        + 1j * np.sqrt(params.K * params.M) * (fy @ anti - anti @ fy)
        + params.M * _dissipator(fz, rho)
        + params.K * _dissipator(fy, rho)
    )


def adjoint_diffusion(rho: np.ndarray, params: ModelParams) -> np.ndarray:
    """Innovation coefficient ``sqrt(M) M[Fz] rho + i sqrt(K) [Fy, rho]``."""
    ops = build_spin_operators(params.F)
    fy, fz = np.asarray(ops.fy), np.asarray(ops.fz)
    c = np.trace(fz @ rho).real
    meas = fz @ rho + rho @ fz - 2.0 * c * rho
    return np.sqrt(params.M) * meas + 1j * np.sqrt(params.K) * (fy @ rho - rho @ fy)


def _kraus_generators(c: float, params: ModelParams):
    ops, _ = _ops(params)
    fy, fz, eye = np.asarray(ops.fy), np.asarray(ops.fz), ops.identity
    skm = np.sqrt(params.K * params.M)
    zc = fz - c * eye
    a = (
        1j * params.gamma * params.B * fy
        - 0.5 * params.M * zc @ zc
        + 1j * skm * fy @ (fz + c * eye)
        - 0.5 * params.K * fy @ fy
    )
    b = np.sqrt(params.M) * zc + 1j * np.sqrt(params.K) * fy
    return a, b


def _finish_rho(rho: np.ndarray) -> np.ndarray:
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def adjoint_filter_step(rho, params: ModelParams, dZ: float, method: str = "kraus"):
    """One step of the adjoint filter consuming a photocurrent increment ``dZ``.

    The innovation ``dW = dZ - 2 sqrt(M) Tr(Fz rho) dt`` is formed from the
    incoming state. ``method="kraus"`` (default) applies the predictor-corrector
    in operator-sum form, ``rho -> Om rho Om^dag`` with
    ``Om = 1 + (A0 + A1 Om1) dt/2 + B0 dW`` and ``Om1 = 1 + A0 dt + B0 dW``, where
    ``A, B`` are the SSE drift/diffusion generators evaluated at the current and
    predicted ``<Fz>``. It is positivity preserving and, on pure states, identical
    to :func:`sse_step`. ``method="direct"`` integrates the superoperator
    equation itself with the same predictor-corrector. Either way the result is
    symmetrized and renormalized to unit trace.

    Accepts a :class:`DensityOp` (returns one) or a raw matrix (returns a matrix).
    """
    wrap = isinstance(rho, DensityOp)
    r = np.asarray(rho.matrix if wrap else rho, dtype=complex)
    ops, _ = _ops(params)
    fz = np.asarray(ops.fz)
    dt = params.dt
    c0 = np.trace(fz @ r).real
    dW = innovations(dZ, c0, params)
    if method == "kraus":
        a0, b0 = _kraus_generators(c0, params)
        om1 = ops.identity + a0 * dt + b0 * dW
        pred = om1 @ r @ om1.conj().T
        c1 = np.trace(fz @ pred).real / np.trace(pred).real
        a1, _ = _kraus_generators(c1, params)
        om = ops.identity + 0.5 * (a0 + a1 @ om1) * dt + b0 * dW
        new = om @ r @ om.conj().T
    elif method == "direct":
        d0 = adjoint_drift(r, params)
        s0 = adjoint_diffusion(r, params)
        pred = r + d0 * dt + s0 * dW
        d1 = adjoint_drift(pred, params)
        new = r + 0.5 * (d0 + d1) * dt + s0 * dW
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(new)):
        raise IntegrationError("non-finite density matrix", 0, 0.0)
    new = _finish_rho(new)
    if method == "direct":
        low = np.linalg.eigvalsh(new).min()
        if low < -1e-8:
            log.warning("adjoint filter state has eigenvalue %.3g < 0", low)
    return DensityOp(params.F, new) if wrap else new


def innovations(dZ, fz_expectation, params: ModelParams):
    """``dW = dZ - 2 sqrt(M) <Fz> dt``."""
    return dZ - 2.0 * np.sqrt(params.M) * fz_expectation * params.dt


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    """``(1/2) || rho - sigma ||_1`` for Hermitian matrices."""
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(np.asarray(rho) - np.asarray(sigma)))))


# ---------------------------------------------------------------- records


@dataclass(frozen=True, eq=False)
class MeasurementRecord:
    """Photocurrent increments produced at the true field ``params.B``."""

    params: ModelParams
    seed: int
    dZ: np.ndarray

    def __post_init__(self):
        dz = np.asarray(self.dZ, dtype=float).reshape(-1)
        if dz.shape[0] != self.params.n_steps:
            raise ValueError(f"record has {dz.shape[0]} increments, expected {self.params.n_steps}")
        dz.setflags(write=False)
        object.__setattr__(self, "dZ", dz)

    @property
    def times(self) -> np.ndarray:
        """Start time of each increment."""
        return self.params.dt * np.arange(self.dZ.shape[0])


def generate_record(params: ModelParams, seed: int, return_fz: bool = False):
    """Simulate the measured system at the true field ``params.B``.

    The SSE is driven by ``wiener_path(seed)`` from ``|F, +F_x>``; the record is
    ``dZ_k = dW_k + 2 sqrt(M) <Fz>_k dt`` with ``<Fz>_k`` taken before step ``k``.
    """
    noise = wiener_path(seed, params.n_steps, params.dt)
    _, fz = evolve_sse(x_polarized(params.F), params, noise.increments, record_fz=True)
    dz = noise.increments + 2.0 * np.sqrt(params.M) * fz * params.dt
    rec = MeasurementRecord(params, int(seed), dz)
    return (rec, fz) if return_fz else rec


_HEADER_KEYS = ("F", "M", "K", "B", "gamma", "dt", "t_final")


def save_record(record: MeasurementRecord, path, fmt: Optional[str] = None) -> None:
    """Write a record as ``.npz`` (bit-exact) or ``.csv``.

    The CSV starts with ``# key=value`` header lines for ``F, M, K, B, gamma,
    dt, t_final, seed`` followed by a ``dZ`` column, one increment per row,
    each printed with ``repr`` so it also round-trips exactly.
    """
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix == ".csv" else "npz")
    if fmt == "npz":
        meta = json.dumps({**asdict(record.params), "seed": record.seed})
        with open(path, "wb") as fh:
            np.savez(fh, dZ=record.dZ, meta=np.array(meta))
    elif fmt == "csv":
        buf = io.StringIO()
        for key in _HEADER_KEYS:
            buf.write(f"# {key}={getattr(record.params, key)!r}\n")
        buf.write(f"# seed={record.seed}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["dZ"])
        writer.writerows([repr(float(v))] for v in record.dZ)
        path.write_text(buf.getvalue())
    else:
        raise ValueError(f"unknown record format {fmt!r}")


def load_record(path) -> MeasurementRecord:
    path = Path(path)
    if path.suffix == ".csv":
        header = {}
        values = []
        with open(path, newline="") as fh:
            for line in fh:
                line = line.strip()
                if line.startswith("#"):
                    key, _, val = line[1:].strip().partition("=")
                    header[key.strip()] = val.strip()
                elif line and line != "dZ":
                    values.append(float(line))
        params = ModelParams(**{k: float(header[k]) for k in _HEADER_KEYS})
        return MeasurementRecord(params, int(header["seed"]), np.array(values))
    with np.load(path) as data:
        meta = json.loads(str(data["meta"]))
        seed = meta.pop("seed")
        return MeasurementRecord(ModelParams(**meta), int(seed), data["dZ"].copy())
