"""Gaussian projection filter and small-angle Kalman filter.

The conditional state is approximated by ``|theta, xi> = Y(theta) S(xi) |F, +F_x>``
(rotation about y after squeezing), for which ``<Fz> = -F sin(theta)``.
Projecting the double-pass filter onto this family under a first-order
Holstein-Primakoff expansion gives the Itô equations

    dtheta = [ -g B - M/4 e^{-16 F xi} sin(2 theta) + 2F sqrt(KM) sin(theta) ] dt
             - [ sqrt(M) e^{-8 F xi} cos(theta) + sqrt(K) ] dW
    dxi    = M/4 e^{-8 F xi} cos(theta)^2 dt

with innovation ``dW = dZ + 2F sqrt(M) sin(theta) dt``. The Larmor term carries
the sign of the SSE Hamiltonian used throughout this package (a positive
field turns ``<Fz>`` positive, i.e. ``theta`` negative).

Linearizing in ``theta`` and using the closed-form ``xi(t)`` gives a linear
system for ``X = (theta, B)`` and a Kalman filter whose covariance equations
do not depend on ``K``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..dynamics import MeasurementRecord, ModelParams

__all__ = [
    "GaussianState",
    "KalmanState",
    "projection_coefficients",
    "projection_step",
    "projection_filter_step",
    "xi_closed_form",
    "kalman_matrices",
    "kalman_variance_rhs",
    "riccati_rhs",
    "kalman_initial",
    "kalman_step",
    "KalmanTrace",
    "run_kalman_filter",
    "kalman_uncertainty",
]

log = logging.getLogger(__name__)

# sign of the Larmor drift of theta relative to gamma*B
LARMOR_SIGN = -1.0


@dataclass(frozen=True)
class GaussianState:
    theta: float
    xi: float = 0.0

    def fz(self, F: float) -> float:
        """``<Fz>`` of the Gaussian state, ``-F sin(theta)``."""
        return -F * math.sin(self.theta)


def projection_coefficients(theta: float, xi: float, params: ModelParams, B: Optional[float] = None):
    """``(drift_theta, diffusion_theta, drift_xi)`` of the Itô projection filter."""
    F, M, K = params.F, params.M, params.K
    B = params.B if B is None else B
    drift_theta = (
        LARMOR_SIGN * params.gamma * B
        - 0.25 * M * math.exp(-16.0 * F * xi) * math.sin(2.0 * theta)
        + 2.0 * F * math.sqrt(K * M) * math.sin(theta)
    )
    diff_theta = -(math.sqrt(M) * math.exp(-8.0 * F * xi) * math.cos(theta) + math.sqrt(K))
    drift_xi = 0.25 * M * math.exp(-8.0 * F * xi) * math.cos(theta) ** 2
    return drift_theta, diff_theta, drift_xi


def projection_step(g: GaussianState, dW: float, params: ModelParams, t: float = 0.0) -> GaussianState:
    """Predictor-corrector step of the projection filter driven by innovation ``dW``."""
    dt = params.dt
    a0, b0, c0 = projection_coefficients(g.theta, g.xi, params)
    th_p = g.theta + a0 * dt + b0 * dW
    xi_p = g.xi + c0 * dt
    a1, _, c1 = projection_coefficients(th_p, xi_p, params)
    return GaussianState(g.theta + 0.5 * (a0 + a1) * dt + b0 * dW, g.xi + 0.5 * (c0 + c1) * dt)


def projection_filter_step(g: GaussianState, dZ: float, params: ModelParams, t: float = 0.0) -> GaussianState:
    """Consume a record increment: innovation ``dZ + 2F sqrt(M) sin(theta) dt``, then step."""
    dW = dZ + 2.0 * params.F * math.sqrt(params.M) * math.sin(g.theta) * params.dt
    return projection_step(g, dW, params, t)


def xi_closed_form(t, F, M):
    """Small-angle squeezing parameter ``ln(1 + 2FMt) / (8F)``."""
    t = np.asarray(t, float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    out = np.log1p(2.0 * F * M * t) / (8.0 * F)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class KalmanState:
    """Estimate ``x = (theta, B)`` and covariance ``V``."""

    x: np.ndarray
    V: np.ndarray

    @property
    def theta(self) -> float:
        return float(self.x[0])

    @property
    def B_estimate(self) -> float:
        return float(self.x[1])

    @property
    def B_uncertainty(self) -> float:
        return math.sqrt(max(float(self.V[1, 1]), 0.0))


def kalman_matrices(t: float, params: ModelParams):
    """``(A, Bn, C, D)`` of the linear system ``dX = A X dt + Bn dW``, ``dZ = C X dt + D dW``."""
    F, M, K = params.F, params.M, params.K
    s = 1.0 + 2.0 * F * M * t
    A = np.array([[2.0 * F * math.sqrt(K * M) - M / (2.0 * s * s), LARMOR_SIGN * params.gamma], [0.0, 0.0]])
    Bn = np.array([-math.sqrt(M) / s - math.sqrt(K), 0.0])
    C = np.array([-2.0 * math.sqrt(M) * F, 0.0])
    return A, Bn, C, 1.0


def kalman_variance_rhs(V: np.ndarray, t: float, F: float, M: float, gamma: float = 1.0) -> np.ndarray:
    """Explicit covariance equations; ``K`` does not enter.

    With ``P = Var(theta)``, ``Q = Var(B)``, ``R = Cov(theta, B)`` and
    ``s = 1 + 2FMt``::

        dP/dt = -M P ((1 + 4F + 8F^2 M t)/s^2 + 4F^2 P) + 2 g' R
        dQ/dt = -4 F^2 M R^2
        dR/dt = g' Q - M/(2 s^2) (1 + 4F + 8F^2 M t + 8F^2 s^2 P) R

    where ``g' = LARMOR_SIGN * gamma``.
    """
    P, R, Q = V[0, 0], V[0, 1], V[1, 1]
    s = 1.0 + 2.0 * F * M * t
    w = 1.0 + 4.0 * F + 8.0 * F * F * M * t
    g = LARMOR_SIGN * gamma
    dP = -M * P * (w / (s * s) + 4.0 * F * F * P) + 2.0 * g * R
    dQ = -4.0 * F * F * M * R * R
    dR = g * Q - M / (2.0 * s * s) * (w + 8.0 * F * F * s * s * P) * R
    return np.array([[dP, dR], [dR, dQ]])


def riccati_rhs(V: np.ndarray, t: float, params: ModelParams) -> np.ndarray:
    """``A V + V A^T + Bn Bn^T - (Bn + V C^T)(Bn + V C^T)^T`` from :func:`kalman_matrices`."""
    A, Bn, C, _ = kalman_matrices(t, params)
    gain = Bn + V @ C
    return A @ V + V @ A.T + np.outer(Bn, Bn) - np.outer(gain, gain)


def kalman_initial(F: float, prior_mean: float, prior_var: float, theta_var: Optional[float] = None) -> KalmanState:
    """``theta = 0``, ``B = prior_mean``; ``V = diag(1/(2F), prior_var)`` by default.

    ``1/(2F)`` is the angular projection noise ``Var(Fz)/F^2`` of ``|F, +F_x>``.
    """
    tv = 1.0 / (2.0 * F) if theta_var is None else theta_var
    return KalmanState(np.array([0.0, float(prior_mean)]), np.diag([tv, float(prior_var)]))


def kalman_step(k: KalmanState, dZ: float, params: ModelParams, t: float) -> KalmanState:
    """One step of the Kalman estimate and covariance.

    Innovation ``dW = dZ + 2F sqrt(M) theta dt``; the estimate takes a
    predictor-corrector step with gain ``Bn + V C^T`` frozen at time ``t``, the
    covariance a trapezoidal (Heun) step of :func:`kalman_variance_rhs`.
    """
    dt = params.dt
    A0, Bn, C, _ = kalman_matrices(t, params)
    A1, _, _, _ = kalman_matrices(t + dt, params)
    dW = dZ - float(C @ k.x) * dt
    gain = Bn + k.V @ C
    pred = k.x + A0 @ k.x * dt + gain * dW
    x = k.x + 0.5 * (A0 @ k.x + A1 @ pred) * dt + gain * dW
    d0 = kalman_variance_rhs(k.V, t, params.F, params.M, params.gamma)
    d1 = kalman_variance_rhs(k.V + d0 * dt, t + dt, params.F, params.M, params.gamma)
    V = k.V + 0.5 * (d0 + d1) * dt
    V = 0.5 * (V + V.T)
    if np.linalg.eigvalsh(V).min() < -1e-12 * max(1.0, np.abs(V).max()):
        log.warning("Kalman covariance lost positive semidefiniteness at t=%g", t + dt)
    return KalmanState(x, V)


@dataclass
class KalmanTrace:
    t: np.ndarray
    theta: np.ndarray
    B_estimate: np.ndarray
    var_theta: np.ndarray
    cov_theta_B: np.ndarray
    var_B: np.ndarray


def run_kalman_filter(record: MeasurementRecord, prior_mean: float, prior_var: float,
                      filter_params: Optional[ModelParams] = None, stride: int = 100) -> KalmanTrace:
    params = filter_params or record.params
    k = kalman_initial(params.F, prior_mean, prior_var)
    rows = [(0.0, *k.x, k.V[0, 0], k.V[0, 1], k.V[1, 1])]
    n = record.dZ.shape[0]
    for i in range(n):
        k = kalman_step(k, record.dZ[i], params, i * params.dt)
        if (i + 1) % stride == 0 or i + 1 == n:
            rows.append(((i + 1) * params.dt, *k.x, k.V[0, 0], k.V[0, 1], k.V[1, 1]))
    a = np.array(rows)
    return KalmanTrace(*(a[:, j] for j in range(6)))


def kalman_uncertainty(params: ModelParams, prior_var: float, theta_var: Optional[float] = None):
    """Covariance-only run: ``(times, V)`` over ``[0, t_final]``; no record needed."""
    V = kalman_initial(params.F, 0.0, prior_var, theta_var).V
    n = params.n_steps
    out = np.empty((n + 1, 2, 2))
    out[0] = V
    dt = params.dt
    for i in range(n):
        t = i * dt
        d0 = kalman_variance_rhs(V, t, params.F, params.M, params.gamma)
        d1 = kalman_variance_rhs(V + d0 * dt, t + dt, params.F, params.M, params.gamma)
        V = V + 0.5 * (d0 + d1) * dt
        V = 0.5 * (V + V.T)
        out[i + 1] = V
    return dt * np.arange(n + 1), out
