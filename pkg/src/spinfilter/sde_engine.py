"""Seeded Wiener increments and a predictor-corrector SDE integrator.

Noise is drawn from numpy's counter-based Philox bit generator, keyed by a
``SeedSequence`` built from ``(seed, stream)``, and transformed to Gaussians
with ``Generator.standard_normal`` (ziggurat) scaled by ``sqrt(dt)``. The same
``(seed, stream, dt, n_steps)`` always yields bit-identical increments.

The integrator works on arrays of any shape. Noise increments are either a
scalar per step or a vector per step that broadcasts against the *last* axis
of the state, which lets many independent trajectories (one per column) be
advanced with a single matrix product.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Interpretation",
    "NoisePath",
    "SdeSystem",
    "IntegrationError",
    "philox_generator",
    "wiener_path",
    "wiener_paths",
    "coarsen",
    "integrate",
    "coevolve",
    "ito_to_stratonovich_drift",
    "stratonovich_system",
]


class Interpretation(enum.Enum):
    ITO = "ito"
    STRATONOVICH = "stratonovich"


class IntegrationError(RuntimeError):
    """Raised when an integrated state stops being finite."""

    def __init__(self, message: str, step: int, time: float):
        super().__init__(f"{message} (step {step}, t={time:.6g})")
        self.step = step
        self.time = time


def philox_generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox-backed generator for ``(seed, stream)``; streams never overlap."""
    seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream)])
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True, eq=False)
class NoisePath:
    """Wiener increments ``dW_k ~ Normal(0, dt)`` for ``k = 0 .. n_steps-1``.

    ``increments`` has shape ``(n_steps,)`` or ``(n_steps, n_paths)``; in the
    latter case each column is an independent path.
    """

    seed: Optional[int]
    dt: float
    increments: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


def wiener_path(seed: int, n_steps: int, dt: float, stream: int = 0) -> NoisePath:
    """Deterministic Wiener increments for one path."""
    if int(n_steps) < 1:
        raise ValueError("n_steps must be >= 1")
    if not dt > 0:
        raise ValueError("dt must be positive")
    rng = philox_generator(seed, stream)
    inc = rng.standard_normal(int(n_steps)) * np.sqrt(dt)
    inc.setflags(write=False)
    return NoisePath(seed=int(seed), dt=float(dt), increments=inc)


def wiener_paths(seeds: Sequence[int], n_steps: int, dt: float, stream: int = 0) -> NoisePath:
    """Stack independent paths column-wise; column ``i`` equals ``wiener_path(seeds[i])``."""
    cols = [wiener_path(s, n_steps, dt, stream).increments for s in seeds]
    inc = np.stack(cols, axis=1)
    inc.setflags(write=False)
    return NoisePath(seed=None, dt=float(dt), increments=inc)


def coarsen(noise: NoisePath, factor: int) -> NoisePath:
    """Sum consecutive blocks of ``factor`` increments: the same Brownian path at ``factor*dt``."""
    factor = int(factor)
    n = noise.n_steps // factor
    if n < 1:
        raise ValueError("path too short for the requested coarsening")
    inc = noise.increments[: n * factor]
    inc = inc.reshape((n, factor) + inc.shape[1:]).sum(axis=1)
    return NoisePath(seed=noise.seed, dt=noise.dt * factor, increments=inc)


Field = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SdeSystem:
    """``dx = drift(t, x) dt + diffusion(t, x) dW`` (or ``o dW`` for Stratonovich).

    ``post_step`` is applied to the state after every completed step, e.g. to
    renormalize a wave function.
    """

    drift: Field
    diffusion: Field
    interpretation: Interpretation = Interpretation.ITO
    post_step: Optional[Callable[[np.ndarray], np.ndarray]] = None


def integrate(
    system: SdeSystem,
    initial,
    noise: NoisePath,
    stride: int = 1,
    t0: float = 0.0,
    keep: bool = True,
):
    """Integrate ``system`` along ``noise`` with a one-corrector predictor-corrector.

    Each step forms an Euler predictor
    ``x* = x + a(t, x) dt + b(t, x) dW`` and then the corrector
    ``x' = x + (a(t, x) + a(t+dt, x*)) dt / 2 + b_eff dW`` where ``b_eff`` is
    ``b(t, x)`` for Itô systems and ``(b(t, x) + b(t+dt, x*)) / 2`` for
    Stratonovich systems (Heun). ``post_step`` is applied to ``x'``.

    Returns ``(times, states)`` with states stacked along a new leading axis
    every ``stride`` steps (both endpoints included), or ``(t_final, x_final)``
    when ``keep`` is false.

    Raises
    ------
    IntegrationError
        If the state becomes non-finite.
    """
    x = np.array(initial, dtype=np.result_type(np.asarray(initial).dtype, float), copy=True)
    dt = noise.dt
    stride = max(int(stride), 1)
    strat = system.interpretation is Interpretation.STRATONOVICH
    times = [t0]
    states = [x.copy()] if keep else None
    t = t0
    for k in range(noise.n_steps):
        dw = noise.increments[k]
        a0 = system.drift(t, x)
        b0 = system.diffusion(t, x)
        pred = x + a0 * dt + b0 * dw
        a1 = system.drift(t + dt, pred)
        if strat:
            b_eff = 0.5 * (b0 + system.diffusion(t + dt, pred))
        else:
            b_eff = b0
        x = x + 0.5 * (a0 + a1) * dt + b_eff * dw
        if system.post_step is not None:
            x = system.post_step(x)
        t = t0 + (k + 1) * dt
        if not np.all(np.isfinite(x)):
            raise IntegrationError("non-finite state", k, t)
        if keep and ((k + 1) % stride == 0 or k + 1 == noise.n_steps):
            times.append(t)
            states.append(x.copy())
    if not keep:
        return t, x
    return np.asarray(times), np.stack(states)


def coevolve(systems: Sequence[SdeSystem], initials: Sequence, noise: NoisePath, **kwargs):
    """Integrate several systems on the identical increment sequence.

    Equivalent to calling :func:`integrate` once per system with the same
    ``noise``; returns the list of results in input order.
    """
    if len(systems) != len(initials):
        raise ValueError("need one initial state per system")
    return [integrate(s, x0, noise, **kwargs) for s, x0 in zip(systems, initials)]


def ito_to_stratonovich_drift(drift: Field, diffusion: Field, state, time: float = 0.0, h: float = 1e-5):
    """Stratonovich drift ``a_j - 1/2 sum_k b_k d b_j / d x_k`` for scalar noise.

    Complex states are treated as real vectors of ``(Re, Im)`` components, so
    ``d b / d x`` is the real Jacobian; its action on ``b`` is evaluated as a
    central difference along the direction ``b``:
    ``sum_k b_k d_k b ~ (b(x + h b) - b(x - h b)) / (2 h)``, with ``h`` scaled
    by the size of ``b``.
    """
    x = np.asarray(state)
    a = np.asarray(drift(time, x))
    b = np.asarray(diffusion(time, x))
    bnorm = np.max(np.abs(b))
    if bnorm == 0.0:
        return a.copy()
    step = h / bnorm
    if not np.isfinite(step) or step == 0.0 or np.all(x + step * b == x):
        raise FloatingPointError("Jacobian step underflow")
    bb = (np.asarray(diffusion(time, x + step * b)) - np.asarray(diffusion(time, x - step * b))) / (2 * step)
    return a - 0.5 * bb


def stratonovich_system(system: SdeSystem, h: float = 1e-5) -> SdeSystem:
    """Stratonovich system with the same paths as the Itô ``system``."""
    if system.interpretation is not Interpretation.ITO:
        raise ValueError("expected an Itô system")

    def drift(t, x):
        return ito_to_stratonovich_drift(system.drift, system.diffusion, x, t, h)

    return SdeSystem(drift, system.diffusion, Interpretation.STRATONOVICH, system.post_step)
