"""Quantum particle filter for an unknown magnetic field.

Each particle carries a fixed field value ``B_i``, a weight ``p_i`` and the
conditional spin state obtained by filtering the record as if ``B = B_i``.
All particles share one innovation

    dW = dZ - 2 sqrt(M) sum_j p_j <Fz>_j dt

and the weights follow ``dp_i = 2 sqrt(M) (<Fz>_i - sum_j p_j <Fz>_j) p_i dW``.
Particle states are kept as pure amplitude vectors (columns of one array) and
propagated with the SSE, which is equivalent to the density-matrix filter for
pure states and costs O(dim) memory per particle. There is no resampling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..dynamics import MeasurementRecord, ModelParams, fz_mean, innovations, sse_step, x_polarized
from ..sde_engine import IntegrationError, philox_generator
from ..spin_algebra import build_spin_operators, validate_spin

__all__ = [
    "ParticleEnsemble",
    "ParticleFilterFailure",
    "init_ensemble",
    "particle_step",
    "estimate",
    "effective_sample_size",
    "ParticleTrace",
    "run_particle_filter",
    "PRIOR_STREAM",
]

log = logging.getLogger(__name__)

# noise stream used for prior draws, distinct from the Wiener stream 0
PRIOR_STREAM = 1


class ParticleFilterFailure(RuntimeError):
    pass


@dataclass(eq=False)
class ParticleEnsemble:
    """Weights ``(N,)``, field values ``(N,)`` and states ``(dim, N)``.

    ``clip_events`` counts how many times a weight went negative and was
    clipped to zero.
    """

    weights: np.ndarray
    B: np.ndarray
    states: np.ndarray
    clip_events: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, float)
        self.B = np.asarray(self.B, float)
        self.states = np.asarray(self.states, complex)
        n = self.weights.shape[0]
        if self.B.shape != (n,) or self.states.ndim != 2 or self.states.shape[1] != n:
            raise ValueError("weights, B and states disagree on the particle count")

    @property
    def N(self) -> int:
        return self.weights.shape[0]

    @property
    def F(self) -> float:
        return (self.states.shape[0] - 1) / 2.0

    def fz(self) -> np.ndarray:
        """Per-particle ``<Fz>``."""
        return fz_mean(self.states, build_spin_operators(self.F).m)


def init_ensemble(N: int, prior_mean: float, prior_var: float, F, base_seed: int) -> ParticleEnsemble:
    """``N`` particles with ``B_i ~ Normal(prior_mean, prior_var)``, uniform weights, all in ``|F, +F_x>``."""
    if int(N) < 1:
        raise ValueError("N must be >= 1")
    if not prior_var > 0:
        raise ValueError("prior variance must be positive")
    F = validate_spin(F)
    N = int(N)
    rng = philox_generator(base_seed, PRIOR_STREAM)
    B = prior_mean + np.sqrt(prior_var) * rng.standard_normal(N)
    states = np.repeat(x_polarized(F)[:, None], N, axis=1)
    return ParticleEnsemble(np.full(N, 1.0 / N), B, states)


def _update_weights(p, fz, mean_fz, dZ, dW, params: ModelParams, scheme: str):
    sm = np.sqrt(params.M)
    if scheme == "euler":
        new = p + 2.0 * sm * (fz - mean_fz) * p * dW
    elif scheme == "likelihood":
        # exact Bayes factor for <Fz>_i frozen over the step; same Itô limit
        loglik = 2.0 * sm * fz * dZ - 2.0 * params.M * fz**2 * params.dt
        new = p * np.exp(loglik - loglik.max())
    else:
        raise ValueError(f"unknown weight scheme {scheme!r}")
    return new


def particle_step(ensemble: ParticleEnsemble, dZ: float, params: ModelParams,
                  weight_scheme: str = "euler") -> ParticleEnsemble:
    """Advance the ensemble by one record increment.

    Two phases: gather ``<Fz>_i`` from the incoming states and form the shared
    innovation, then update weights and advance every particle state at its
    own ``B_i`` with that innovation. Negative weights (possible with a finite
    step) are clipped to zero and counted; weights are renormalized.

    ``weight_scheme="likelihood"`` replaces the Euler weight step by the
    exponential likelihood-ratio update, which never produces negative weights.
    """
    p = ensemble.weights
    fz = ensemble.fz()
    mean_fz = float(np.dot(p, fz))
    dW = innovations(dZ, mean_fz, params)
    new_p = _update_weights(p, fz, mean_fz, dZ, dW, params, weight_scheme)
    clips = ensemble.clip_events
    if np.any(new_p < 0):
        clips += int(np.sum(new_p < 0))
        new_p = np.clip(new_p, 0.0, None)
    total = new_p.sum()
    if not total > 0 or not np.isfinite(total):
        raise ParticleFilterFailure(f"all particle weights vanished (dZ={dZ!r}, innovation={dW!r})")
    new_p = new_p / total
    states = sse_step(ensemble.states, params, dW, B=ensemble.B)
    if not np.all(np.isfinite(states)):
        raise IntegrationError("non-finite particle state", 0, 0.0)
    return ParticleEnsemble(new_p, ensemble.B, states, clips)


def estimate(ensemble: ParticleEnsemble):
    """Posterior mean of ``B`` and its standard deviation under the particle weights."""
    p = ensemble.weights
    mean = float(np.dot(p, ensemble.B))
    var = float(np.dot(p, ensemble.B**2)) - mean**2
    return mean, float(np.sqrt(max(var, 0.0)))


def effective_sample_size(ensemble: ParticleEnsemble) -> float:
    """``1 / sum p_i^2``."""
    return float(1.0 / np.sum(ensemble.weights**2))


@dataclass
class ParticleTrace:
    """Strided estimator history; the last row is the final time."""

    t: np.ndarray
    B_estimate: np.ndarray
    B_uncertainty: np.ndarray
    n_eff: np.ndarray
    clip_events: int = 0
    final: Optional[ParticleEnsemble] = field(default=None, repr=False)


def run_particle_filter(record: MeasurementRecord, N: int, prior_mean: float, prior_var: float,
                        base_seed: int, filter_params: Optional[ModelParams] = None, stride: int = 100,
                        weight_scheme: str = "euler") -> ParticleTrace:
    """Filter a whole record from a fresh ensemble.

    ``filter_params`` lets the filter assume a model different from the one
    that produced the record (its ``B`` is ignored); defaults to
    ``record.params``.
    """
    params = filter_params or record.params
    ens = init_ensemble(N, prior_mean, prior_var, params.F, base_seed)
    rows = [(0.0, *estimate(ens), effective_sample_size(ens))]
    n = record.dZ.shape[0]
    for k in range(n):
        ens = particle_step(ens, record.dZ[k], params, weight_scheme)
        if (k + 1) % stride == 0 or k + 1 == n:
            rows.append(((k + 1) * params.dt, *estimate(ens), effective_sample_size(ens)))
    if ens.clip_events:
        log.info("particle filter clipped %d negative weights", ens.clip_events)
    arr = np.array(rows)
    return ParticleTrace(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], ens.clip_events, ens)
