"""Finite-difference quantum Fisher information and analytic baselines.

For pure conditional states the symmetric logarithmic derivative is
``2 d rho / dB``, so the QFI is ``4 Tr[(d rho/dB)^2 rho]``. The derivative is
approximated by a central difference from three trajectories at
``B - dB, B, B + dB`` that share one noise realization.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dynamics import ModelParams, evolve_sse, x_polarized
from .sde_engine import IntegrationError, wiener_paths
from .spin_algebra import validate_spin

__all__ = [
    "QfiSample",
    "ScalingPoint",
    "finite_difference_qfi",
    "qfi_samples",
    "qfi_sample",
    "bound_sweep",
    "summarize_bounds",
    "shotnoise_bound",
    "heisenberg_bound",
    "kbody_bound",
    "power_law_fit",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QfiSample:
    seed: int
    F: float
    qfi: float
    bound: float
    flagged: bool = False


@dataclass(frozen=True)
class ScalingPoint:
    F: float
    mean_bound: float
    std_bound: float
    n_trajectories: int
    n_failed: int = 0
    n_outliers: int = 0


def finite_difference_qfi(psi_minus, psi_zero, psi_plus, deltaB: float) -> np.ndarray:
    """``4 Tr[D^2 rho_0]`` with ``D = (rho_+ - rho_-) / (2 dB)`` for pure states.

    Works column-wise on ``(dim, n)`` arrays. Uses
    ``D psi_0 = (psi_+ <psi_+|psi_0> - psi_- <psi_-|psi_0>) / (2 dB)`` and
    ``Tr[D^2 rho_0] = ||D psi_0||^2``, so global phases of the inputs drop out.
    """
    pm, p0, pp = (np.asarray(a, complex) for a in (psi_minus, psi_zero, psi_plus))
    ov_p = np.sum(pp.conj() * p0, axis=0)
    ov_m = np.sum(pm.conj() * p0, axis=0)
    d_psi = (pp * ov_p - pm * ov_m) / (2.0 * deltaB)
    return 4.0 * np.sum(np.abs(d_psi) ** 2, axis=0)


def qfi_samples(params: ModelParams, deltaB: float, seeds: Sequence[int]):
    """QFI samples for several seeds, integrated together as matrix columns.

    Column layout is ``[B-dB]*n + [B]*n + [B+dB]*n``, and column ``i`` of every
    block is driven by ``wiener_path(seeds[i])``.
    """
    if not deltaB > 0:
        raise ValueError("deltaB must be positive")
    seeds = [int(s) for s in seeds]
    n = len(seeds)
    noise = wiener_paths(seeds, params.n_steps, params.dt)
    inc = np.tile(noise.increments, (1, 3))
    B = np.repeat(params.B + deltaB * np.array([-1.0, 0.0, 1.0]), n)
    psi0 = np.repeat(x_polarized(params.F)[:, None], 3 * n, axis=1)
    psi = evolve_sse(psi0, params, inc, B=B)
    qfi = finite_difference_qfi(psi[:, :n], psi[:, n : 2 * n], psi[:, 2 * n :], deltaB)
    out = []
    eps = np.finfo(float).eps
    for s, q in zip(seeds, qfi):
        flagged = bool(q <= eps)
        if flagged:
            log.warning("QFI below machine epsilon for seed %d at F=%g", s, params.F)
        bound = 1.0 / math.sqrt(q) if q > 0 else math.inf
        out.append(QfiSample(seed=s, F=params.F, qfi=float(q), bound=bound, flagged=flagged))
    return out


def qfi_sample(params: ModelParams, deltaB: float, seed: int) -> QfiSample:
    """Single-trajectory QFI and Cramér-Rao bound ``1/sqrt(QFI)`` at ``params.B``."""
    return qfi_samples(params, deltaB, [seed])[0]


def summarize_bounds(F: float, bounds: Iterable[float], n_failed: int = 0) -> ScalingPoint:
    """Mean and population standard deviation of per-trajectory bounds.

    Outliers beyond 5 standard deviations are counted, never removed.
    """
    b = np.asarray([x for x in bounds if np.isfinite(x)], float)
    if b.size == 0:
        return ScalingPoint(F, math.nan, math.nan, 0, n_failed, 0)
    mean = float(b.mean())
    std = float(b.std())
    n_out = int(np.sum(np.abs(b - mean) > 5 * std)) if std > 0 else 0
    return ScalingPoint(F, mean, std, int(b.size), n_failed, n_out)


def bound_sweep(F_list, params_template: ModelParams, n_traj: int, base_seed: int, deltaB: float = 5e-4,
                seed_stride: int = 1_000_000):
    """Mean and spread of the Cramér-Rao bound versus ``F``.

    Trajectory ``i`` at F-index ``j`` uses seed ``base_seed + j*seed_stride + i``.
    A point is dropped (``None``) only if more than 10% of its trajectories fail.
    """
    if n_traj < 2:
        raise ValueError("n_traj must be >= 2")
    points = []
    for j, F in enumerate(F_list):
        params = params_template.with_(F=validate_spin(F))
        seeds = [base_seed + j * seed_stride + i for i in range(n_traj)]
        try:
            samples = qfi_samples(params, deltaB, seeds)
            failed = 0
        except IntegrationError:
            samples, failed = [], 0
            for s in seeds:
                try:
                    samples.extend(qfi_samples(params, deltaB, [s]))
                except IntegrationError as exc:
                    log.warning("trajectory seed=%d F=%g failed: %s", s, F, exc)
                    failed += 1
        if failed > 0.1 * n_traj:
            points.append(None)
            continue
        points.append(summarize_bounds(params.F, [s.bound for s in samples], failed))
    return points


def shotnoise_bound(F, t: float, gamma: float = 1.0) -> float:
    """``1 / (gamma t sqrt(2F))``."""
    _check_positive(F, t)
    return 1.0 / (gamma * t * math.sqrt(2.0 * F))


def heisenberg_bound(F, t: float, gamma: float = 1.0, alpha: float = 1.0) -> float:
    """``alpha / (gamma t F)``."""
    _check_positive(F, t)
    return alpha / (gamma * t * F)


def kbody_bound(F, t: float, gamma: float = 1.0, k: int = 2) -> float:
    """``1 / (gamma t F^k)`` for a field coupled to a k-body spin operator."""
    _check_positive(F, t)
    if k < 1:
        raise ValueError("k must be >= 1")
    return 1.0 / (gamma * t * F**k)


def _check_positive(F, t):
    if not (F > 0 and t > 0):
        raise ValueError("F and t must be positive")


def power_law_fit(points):
    """Least-squares line through ``(log F, log value)``.

    Returns ``(exponent, prefactor, residual)`` where the residual is the
    2-norm of the log-space residuals.
    """
    pts = np.asarray(list(points), float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise ValueError("need at least three (F, value) points")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise ValueError("power-law fit needs positive finite data")
    x, y = np.log(pts[:, 0]), np.log(pts[:, 1])
    design = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    residual = float(np.linalg.norm(design @ coef - y))
    return float(coef[0]), float(math.exp(coef[1])), residual
