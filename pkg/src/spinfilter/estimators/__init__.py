"""Field estimators driven by a measurement record."""

from .gaussian import (
    LARMOR_SIGN,
    GaussianState,
    KalmanState,
    KalmanTrace,
    kalman_initial,
    kalman_matrices,
    kalman_step,
    kalman_uncertainty,
    kalman_variance_rhs,
    projection_coefficients,
    projection_filter_step,
    projection_step,
    riccati_rhs,
    run_kalman_filter,
    xi_closed_form,
)
from .particle import (
    ParticleEnsemble,
    ParticleFilterFailure,
    ParticleTrace,
    effective_sample_size,
    estimate,
    init_ensemble,
    particle_step,
    run_particle_filter,
)

__all__ = [
    "LARMOR_SIGN",
    "GaussianState",
    "KalmanState",
    "KalmanTrace",
    "ParticleEnsemble",
    "ParticleFilterFailure",
    "ParticleTrace",
    "effective_sample_size",
    "estimate",
    "init_ensemble",
    "kalman_initial",
    "kalman_matrices",
    "kalman_step",
    "kalman_uncertainty",
    "kalman_variance_rhs",
    "particle_step",
    "projection_coefficients",
    "projection_filter_step",
    "projection_step",
    "riccati_rhs",
    "run_kalman_filter",
    "run_particle_filter",
    "xi_closed_form",
]
