"""Scenario jobs and their aggregation.

Every scenario is split into independent jobs whose boundaries depend only on
the configuration (never on the worker count). A job returns its output rows
in a fixed order; :mod:`.runner` concatenates them in job order, so the
output is the same however the jobs were scheduled.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np

from ..dynamics import fz_mean, generate_record, sse_step, x_polarized
from ..estimators import (
    ParticleFilterFailure,
    kalman_uncertainty,
    run_particle_filter,
)
from ..fisher_bound import heisenberg_bound, power_law_fit, qfi_samples, shotnoise_bound, summarize_bounds
from ..sde_engine import IntegrationError, wiener_path
from ..spin_algebra import build_spin_operators, q_function, q_function_peaks, sphere_grid
from .config import ExperimentConfig, Scenario

__all__ = [
    "Job",
    "SEED_STRIDE",
    "trajectory_seed",
    "sample_deviation",
    "peak_separation",
    "plan_jobs",
    "execute_job",
    "aggregate",
]

log = logging.getLogger(__name__)

SEED_STRIDE = 1_000_000
# a point is dropped when more than this fraction of its trajectories fail
MAX_FAILED_FRACTION = 0.1
# Q-function maxima further apart than this many grid cells count as distinct modes
BIMODAL_MIN_CELLS = 5.0


def trajectory_seed(base_seed: int, f_index: int, trajectory: int) -> int:
    """``base_seed + f_index * 10**6 + trajectory``."""
    return int(base_seed) + int(f_index) * SEED_STRIDE + int(trajectory)


def sample_deviation(estimates: Sequence[float], trueB: float) -> float:
    """Population standard deviation of ``estimate - trueB`` across runs.

    The divisor is the number of runs (not ``n - 1``), so the two estimates
    ``trueB - 1`` and ``trueB + 1`` give exactly 1.
    """
    e = np.asarray(list(estimates), float)
    if e.size < 2:
        raise ValueError("sample deviation needs at least two estimates")
    return float(np.std(e - trueB))


def peak_separation(p, q, n_phi: int) -> float:
    """Euclidean distance in grid cells between two nodes, periodic in phi."""
    di = abs(p[0] - q[0])
    dj = abs(p[1] - q[1])
    dj = min(dj, n_phi - dj)
    return math.hypot(di, dj)


@dataclass(frozen=True)
class Job:
    """One unit of work. ``label`` names the pass (``double`` or ``single``)."""

    scenario: str
    label: str
    K: float
    f_index: int
    F: float
    trajectories: tuple


def _passes(config: ExperimentConfig):
    out = [("double" if config.K > 0 else "single", config.K)]
    if config.baseline_single_pass and config.K > 0:
        out.append(("single", 0.0))
    return out


def plan_jobs(config: ExperimentConfig) -> List[Job]:
    """The ordered job list for ``config``."""
    sc = config.scenario.value
    jobs = []
    if config.scenario in (Scenario.QCR_SWEEP, Scenario.PF_SWEEP):
        size = config.batch_size if config.scenario is Scenario.QCR_SWEEP else 1
        for label, K in _passes(config):
            for j, F in enumerate(config.F_list):
                for i0 in range(0, config.n_trajectories, size):
                    idx = tuple(range(i0, min(i0 + size, config.n_trajectories)))
                    jobs.append(Job(sc, label, K, j, F, idx))
    elif config.scenario is Scenario.KALMAN:
        for j, F in enumerate(config.F_list):
            jobs.append(Job(sc, "kalman", config.K, j, F, ()))
    elif config.scenario is Scenario.QFUNCTION:
        F = config.F_list[0]
        for i in range(config.n_trajectories):
            jobs.append(Job(sc, "double" if config.K > 0 else "single", config.K, 0, F, (i,)))
    elif config.scenario is Scenario.TRAJECTORY:
        jobs.append(Job(sc, "double" if config.K > 0 else "single", config.K, 0, config.F_list[0], (0,)))
    return jobs


# ----------------------------------------------------------------- workers


def _qcr_rows(job: Job, config: ExperimentConfig):
    params = config.model(job.F, job.K)
    seeds = [trajectory_seed(config.base_seed, job.f_index, i) for i in job.trajectories]
    try:
        results = {s.seed: (s, "ok") for s in qfi_samples(params, config.deltaB, seeds)}
    except IntegrationError:
        # retry one by one so a single bad path does not sink the batch
        results = {}
        for s in seeds:
            try:
                results[s] = (qfi_samples(params, config.deltaB, [s])[0], "ok")
            except IntegrationError as exc:
                log.warning("qcr trajectory seed=%d F=%g failed: %s", s, job.F, exc)
                results[s] = (None, f"failed: {exc}")
    rows = []
    for i, s in zip(job.trajectories, seeds):
        sample, status = results[s]
        rows.append({
            "scenario": job.scenario, "pass": job.label, "F": job.F, "K": job.K,
            "trajectory": i, "seed": s,
            "qfi": sample.qfi if sample else math.nan,
            "bound": sample.bound if sample else math.nan,
            "flagged": int(sample.flagged) if sample else 0,
            "status": status,
        })
    return rows


def _pf_rows(job: Job, config: ExperimentConfig):
    (i,) = job.trajectories
    seed = trajectory_seed(config.base_seed, job.f_index, i)
    params = config.model(job.F, job.K)
    row = {"scenario": job.scenario, "pass": job.label, "F": job.F, "K": job.K, "trajectory": i, "seed": seed}
    try:
        record = generate_record(params, seed)
        trace = run_particle_filter(record, config.n_particles, config.prior_mean, config.prior_var, seed,
                                    stride=params.n_steps, weight_scheme=config.weight_scheme)
        row.update(B_estimate=float(trace.B_estimate[-1]), B_uncertainty=float(trace.B_uncertainty[-1]),
                   n_eff=float(trace.n_eff[-1]), n_eff_fraction=float(trace.n_eff[-1]) / config.n_particles,
                   clip_events=trace.clip_events, status="ok")
    except (IntegrationError, ParticleFilterFailure) as exc:
        log.warning("pf record seed=%d F=%g failed: %s", seed, job.F, exc)
        row.update(B_estimate=math.nan, B_uncertainty=math.nan, n_eff=math.nan, n_eff_fraction=math.nan,
                   clip_events=0, status=f"failed: {exc}")
    return [row]


def _kalman_rows(job: Job, config: ExperimentConfig):
    params = config.model(job.F, job.K)
    _, V = kalman_uncertainty(params, config.prior_var, config.theta_var)
    v = V[-1]
    theta_var = 1.0 / (2.0 * job.F) if config.theta_var is None else config.theta_var
    return [{
        "scenario": job.scenario, "F": job.F, "K": job.K, "t": params.n_steps * params.dt,
        "theta_var0": theta_var, "var_theta": float(v[0, 0]), "cov_theta_B": float(v[0, 1]),
        "var_B": float(v[1, 1]), "B_uncertainty": math.sqrt(max(float(v[1, 1]), 0.0)),
        "shotnoise_bound": shotnoise_bound(job.F, config.t_final, config.gamma),
    }]


def _qfunction_rows(job: Job, config: ExperimentConfig):
    (i,) = job.trajectories
    seed = trajectory_seed(config.base_seed, 0, i)
    params = config.model(job.F, job.K)
    noise = wiener_path(seed, params.n_steps, params.dt)
    psi = x_polarized(job.F)
    for dw in noise.increments:
        psi = sse_step(psi, params, dw)
    theta, phi, _ = sphere_grid(config.n_theta, config.n_phi)
    q = q_function(psi, theta, phi)
    peaks = q_function_peaks(q)
    sep = peak_separation(peaks[0], peaks[1], config.n_phi) if len(peaks) > 1 else 0.0
    summary = {
        "scenario": job.scenario, "F": job.F, "trajectory": i, "seed": seed,
        "fz": float(fz_mean(psi, build_spin_operators(job.F).m)),
        "n_peaks": len(peaks), "peak_separation": sep, "bimodal": int(sep > BIMODAL_MIN_CELLS),
        "peaks": ";".join(f"{a}:{b}" for a, b in peaks),
    }
    grid = [
        {"trajectory": i, "seed": seed, "theta": float(theta[a]), "phi": float(phi[b]), "q": float(q[a, b])}
        for a in range(theta.size) for b in range(phi.size)
    ]
    return [{"kind": "summary", **summary}] + [{"kind": "grid", **g} for g in grid]


def _trajectory_rows(job: Job, config: ExperimentConfig):
    seed = trajectory_seed(config.base_seed, 0, 0)
    params = config.model(job.F, job.K)
    noise = wiener_path(seed, params.n_steps, params.dt)
    m = build_spin_operators(job.F).m
    psi = x_polarized(job.F)
    sm = math.sqrt(params.M)
    rows = []
    for k, dw in enumerate(noise.increments):
        fz = float(fz_mean(psi, m))
        if k % config.stride == 0:
            row = {"t": k * params.dt, "fz": fz, "dZ": float(dw + 2.0 * sm * fz * params.dt)}
            if config.dump_state:
                for idx, a in enumerate(psi):
                    row[f"re{idx}"] = float(a.real)
                    row[f"im{idx}"] = float(a.imag)
            rows.append(row)
        psi = sse_step(psi, params, dw)
    return rows


_WORKERS: Dict[str, Callable] = {
    Scenario.QCR_SWEEP.value: _qcr_rows,
    Scenario.PF_SWEEP.value: _pf_rows,
    Scenario.KALMAN.value: _kalman_rows,
    Scenario.QFUNCTION.value: _qfunction_rows,
    Scenario.TRAJECTORY.value: _trajectory_rows,
}


def execute_job(job: Job, config: ExperimentConfig):
    """Run one job and return its rows in their final order."""
    return _WORKERS[job.scenario](job, config)


# ------------------------------------------------------------- aggregation


def _fit(points, key):
    usable = [(p["F"], p[key]) for p in points if p.get("dropped") == 0 and p[key] > 0 and math.isfinite(p[key])]
    if len(usable) < 3:
        return None
    exponent, prefactor, residual = power_law_fit(usable)
    return {"exponent": exponent, "prefactor": prefactor, "residual": residual, "n_points": len(usable)}


def _groups(rows):
    out: Dict[tuple, list] = {}
    for r in rows:
        out.setdefault((r["pass"], r["F"]), []).append(r)
    return out


def _aggregate_qcr(rows, config):
    points = []
    for (label, F), grp in _groups(rows).items():
        failed = sum(r["status"] != "ok" for r in grp)
        sp = summarize_bounds(F, [r["bound"] for r in grp if r["status"] == "ok"], failed)
        points.append({
            "pass": label, "F": F, "K": grp[0]["K"], "mean_bound": sp.mean_bound, "std_bound": sp.std_bound,
            "n_traj": sp.n_trajectories, "n_failed": failed, "n_outliers": sp.n_outliers,
            "dropped": int(failed > MAX_FAILED_FRACTION * len(grp)),
            "shotnoise_bound": shotnoise_bound(F, config.t_final, config.gamma),
            "heisenberg_bound": heisenberg_bound(F, config.t_final, config.gamma),
        })
    fits = {label: _fit([p for p in points if p["pass"] == label], "mean_bound") for label, _ in _passes(config)}
    summary = {"fits": fits}
    summary.update(_compare(points, "mean_bound"))
    return points, summary


def _aggregate_pf(rows, config):
    points = []
    kalman = {}
    for (label, F), grp in _groups(rows).items():
        ok = [r for r in grp if r["status"] == "ok"]
        failed = len(grp) - len(ok)
        unc = np.array([r["B_uncertainty"] for r in ok], float)
        frac = np.array([r["n_eff_fraction"] for r in ok], float)
        s_pf = sample_deviation([r["B_estimate"] for r in ok], config.B) if len(ok) >= 2 else math.nan
        if F not in kalman:
            _, V = kalman_uncertainty(config.model(F, 0.0), config.prior_var, config.theta_var)
            kalman[F] = math.sqrt(max(float(V[-1, 1, 1]), 0.0))
        mean_unc = float(unc.mean()) if unc.size else math.nan
        points.append({
            "pass": label, "F": F, "K": grp[0]["K"], "mean_uncertainty": mean_unc,
            "std_uncertainty": float(unc.std()) if unc.size else math.nan,
            "S_pf": s_pf, "bias_dominated": int(s_pf >= mean_unc) if ok else 0,
            "mean_n_eff_fraction": float(frac.mean()) if frac.size else math.nan,
            "std_n_eff_fraction": float(frac.std()) if frac.size else math.nan,
            "clip_events": int(sum(r["clip_events"] for r in ok)),
            "n_runs": len(ok), "n_failed": failed,
            "dropped": int(failed > MAX_FAILED_FRACTION * len(grp) or len(ok) < 2),
            "kalman_uncertainty": kalman[F],
        })
    fits = {label: _fit([p for p in points if p["pass"] == label], "mean_uncertainty")
            for label, _ in _passes(config)}
    summary = {"fits": fits,
               "kalman_fit": _fit([{"F": F, "k": v, "dropped": 0} for F, v in kalman.items()], "k")}
    summary.update(_compare(points, "mean_uncertainty"))
    return points, summary


def _compare(points, key):
    by = {(p["pass"], p["F"]): p for p in points}
    both = sorted(F for (label, F) in by if label == "double" and ("single", F) in by)
    if not both:
        return {}
    return {"double_below_single": {repr(F): bool(by[("double", F)][key] < by[("single", F)][key]) for F in both}}


def _aggregate_kalman(rows, config):
    return [], {"fits": {"kalman": _fit([{**r, "dropped": 0} for r in rows], "B_uncertainty")}}


def _aggregate_qfunction(rows, config):
    s = [r for r in rows if r["kind"] == "summary"]
    return [], {"n_trajectories": len(s), "n_bimodal": sum(r["bimodal"] for r in s),
                "max_peak_separation": max((r["peak_separation"] for r in s), default=0.0)}


def _aggregate_trajectory(rows, config):
    fz = [r["fz"] for r in rows]
    return [], {"n_samples": len(rows), "fz_final_row": fz[-1] if fz else math.nan}


_AGGREGATORS = {
    Scenario.QCR_SWEEP: _aggregate_qcr,
    Scenario.PF_SWEEP: _aggregate_pf,
    Scenario.KALMAN: _aggregate_kalman,
    Scenario.QFUNCTION: _aggregate_qfunction,
    Scenario.TRAJECTORY: _aggregate_trajectory,
}


def aggregate(rows, config: ExperimentConfig):
    """``(points, summary)`` for a finished scenario; ``points`` may be empty."""
    return _AGGREGATORS[config.scenario](rows, config)
